//! Periodic convolution stack with a hand-written backward pass.
//!
//! Tensors are planar: `[channel][cell]` with cells in row-major, x-fastest
//! order. Convolutions use im2col followed by a single GEMM per layer.

use serde::{Deserialize, Serialize};

/// Spatial layout a convolution runs on.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGeom {
    pub nx: usize,
    pub ny: usize,
    /// `shift[s * cells + p]` is the periodic neighbour of `p` under tap `s`.
    shift: Vec<u32>,
    taps: usize,
}

impl ConvGeom {
    /// 3×3 periodic kernel on an `nx × ny` grid.
    pub fn square3(nx: usize, ny: usize) -> ConvGeom {
        let mut offs = Vec::with_capacity(9);
        for dj in -1..=1 {
            for di in -1..=1 {
                offs.push((di, dj));
            }
        }
        ConvGeom::with_offsets(nx, ny, &offs)
    }

    /// Width-3 periodic kernel on a line of `n` cells.
    pub fn line3(n: usize) -> ConvGeom {
        ConvGeom::with_offsets(n, 1, &[(-1, 0), (0, 0), (1, 0)])
    }

    fn with_offsets(nx: usize, ny: usize, offs: &[(isize, isize)]) -> ConvGeom {
        let cells = nx * ny;
        let mut shift = vec![0u32; offs.len() * cells];
        for (s, &(di, dj)) in offs.iter().enumerate() {
            for j in 0..ny {
                let jj = (j as isize + dj).rem_euclid(ny as isize) as usize;
                for i in 0..nx {
                    let ii = (i as isize + di).rem_euclid(nx as isize) as usize;
                    shift[s * cells + j * nx + i] = (jj * nx + ii) as u32;
                }
            }
        }
        ConvGeom {
            nx,
            ny,
            shift,
            taps: offs.len(),
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    fn im2col(&self, input: &[f64], channels: usize, col: &mut Vec<f64>) {
        let n = self.cells();
        col.clear();
        col.resize(channels * self.taps * n, 0.0);
        for c in 0..channels {
            let src = &input[c * n..(c + 1) * n];
            for s in 0..self.taps {
                let row = &mut col[(c * self.taps + s) * n..(c * self.taps + s + 1) * n];
                let map = &self.shift[s * n..(s + 1) * n];
                for (dst, &q) in row.iter_mut().zip(map) {
                    *dst = src[q as usize];
                }
            }
        }
    }

    fn col2im_add(&self, gcol: &[f64], channels: usize, gin: &mut [f64]) {
        let n = self.cells();
        for c in 0..channels {
            let dst = &mut gin[c * n..(c + 1) * n];
            for s in 0..self.taps {
                let row = &gcol[(c * self.taps + s) * n..(c * self.taps + s + 1) * n];
                let map = &self.shift[s * n..(s + 1) * n];
                for (&g, &q) in row.iter().zip(map) {
                    dst[q as usize] += g;
                }
            }
        }
    }
}

/// Layer widths of a conv stack: `in → hidden → … → hidden → out` with
/// rectifier activations between layers and none after the last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStack {
    pub in_channels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub out_channels: usize,
    pub taps: usize,
}

impl ConvStack {
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let cin = if l == 0 { self.in_channels } else { self.hidden };
        let cout = if l + 1 == self.layers {
            self.out_channels
        } else {
            self.hidden
        };
        (cin, cout)
    }

    /// `(weight offset, bias offset, end)` of layer `l` in the flat vector.
    pub fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let mut off = 0;
        for k in 0..self.layers {
            let (cin, cout) = self.layer_dims(k);
            let w = cin * self.taps * cout;
            if k == l {
                return (off, off + w, off + w + cout);
            }
            off += w + cout;
        }
        unreachable!("layer {l} out of range")
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers)
            .map(|l| {
                let (cin, cout) = self.layer_dims(l);
                cin * self.taps * cout + cout
            })
            .sum()
    }
}

/// Saved per-layer inputs for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: *mut f64,
    rsc: isize,
    csc: isize,
) {
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

/// Runs the stack. `params` is the flat parameter vector laid out by
/// [`ConvStack::layer_span`].
pub fn forward(stack: &ConvStack, params: &[f64], geom: &ConvGeom, input: &[f64], keep: bool) -> Activations {
    let n = geom.cells();
    assert_eq!(input.len(), stack.in_channels * n, "input channel mismatch");
    assert_eq!(params.len(), stack.param_count(), "parameter count mismatch");
    let mut acts = Activations::default();
    let mut x = input.to_vec();
    let mut col = Vec::new();
    for l in 0..stack.layers {
        let (cin, cout) = stack.layer_dims(l);
        let (wo, bo, end) = stack.layer_span(l);
        let w = &params[wo..bo];
        let b = &params[bo..end];
        geom.im2col(&x, cin, &mut col);
        let r = cin * geom.taps();
        let mut y = vec![0.0; cout * n];
        for o in 0..cout {
            y[o * n..(o + 1) * n].fill(b[o]);
        }
        // y[o][p] += Σ_r W[o][r] col[r][p]
        unsafe {
            gemm(
                cout, r, n, 1.0,
                w.as_ptr(), r as isize, 1,
                col.as_ptr(), n as isize, 1,
                1.0,
                y.as_mut_ptr(), n as isize, 1,
            );
        }
        if l + 1 < stack.layers {
            for v in y.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if keep {
            acts.inputs.push(std::mem::replace(&mut x, y));
        } else {
            x = y;
        }
    }
    acts.output = x;
    acts
}

/// Accumulates `∂L/∂params` into `g_params` and returns `∂L/∂input`.
pub fn backward(
    stack: &ConvStack,
    params: &[f64],
    geom: &ConvGeom,
    acts: &Activations,
    g_output: &[f64],
    g_params: &mut [f64],
) -> Vec<f64> {
    let n = geom.cells();
    assert_eq!(acts.inputs.len(), stack.layers, "activations were not kept");
    let mut g = g_output.to_vec();
    let mut col = Vec::new();
    for l in (0..stack.layers).rev() {
        let (cin, cout) = stack.layer_dims(l);
        let (wo, bo, end) = stack.layer_span(l);
        let r = cin * geom.taps();
        let x = &acts.inputs[l];
        geom.im2col(x, cin, &mut col);
        // bias
        for o in 0..cout {
            let s: f64 = g[o * n..(o + 1) * n].iter().sum();
            g_params[bo + o] += s;
        }
        let (head, _) = g_params.split_at_mut(bo);
        let gw = &mut head[wo..bo];
        // gW[o][r] += Σ_p g[o][p] col[r][p]
        unsafe {
            gemm(
                cout, n, r, 1.0,
                g.as_ptr(), n as isize, 1,
                col.as_ptr(), 1, n as isize,
                1.0,
                gw.as_mut_ptr(), r as isize, 1,
            );
        }
        // gcol[r][p] = Σ_o W[o][r] g[o][p]
        let w = &params[wo..bo];
        let mut gcol = vec![0.0; r * n];
        unsafe {
            gemm(
                r, cout, n, 1.0,
                w.as_ptr(), 1, r as isize,
                g.as_ptr(), n as isize, 1,
                0.0,
                gcol.as_mut_ptr(), n as isize, 1,
            );
        }
        let mut gin = vec![0.0; cin * n];
        geom.col2im_add(&gcol, cin, &mut gin);
        if l > 0 {
            // x is the rectified output of layer l-1
            for (gv, &xv) in gin.iter_mut().zip(x.iter()) {
                if xv <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let _ = end;
        g = gin;
    }
    g
}
