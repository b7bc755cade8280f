//! Run manifests: resolved config plus content checksums of every input and
//! output.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

pub fn file_ref(path: &Path) -> anyhow::Result<FileRef> {
    let mut f = File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    let bytes = std::io::copy(&mut f, &mut h)?;
    Ok(FileRef {
        path: path.to_path_buf(),
        sha256: format!("{:x}", h.finalize()),
        bytes,
    })
}

/// Files directly inside `dir`, sorted, excluding run manifests.
pub fn dir_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.is_file() && p.file_name().map_or(true, |n| n != RUN_MANIFEST) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Options as resolved from defaults, config file and flags. Passing the
    /// manifest back as `--config` replays the run.
    pub config: Value,
    /// Derived parameters, for reference only.
    pub resolved: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRef>,
    pub outputs: Vec<FileRef>,
    pub code_version: String,
    pub strict_deterministic: bool,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

pub struct Recorder {
    pub subcommand: &'static str,
    pub strict: bool,
    start: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<u64>,
    resolved: Value,
}

impl Recorder {
    pub fn new(subcommand: &'static str, strict: bool) -> Recorder {
        Recorder {
            subcommand,
            strict,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: Vec::new(),
            resolved: Value::Null,
        }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn seed(&mut self, s: u64) {
        self.seeds.push(s);
    }

    pub fn resolved(&mut self, v: impl Serialize) -> anyhow::Result<()> {
        self.resolved = serde_json::to_value(v)?;
        Ok(())
    }

    /// Writes the manifest to `path`.
    pub fn finish(self, config: &impl Serialize, path: &Path) -> anyhow::Result<()> {
        let refs = |ps: &[PathBuf]| ps.iter().map(|p| file_ref(p)).collect::<anyhow::Result<Vec<_>>>();
        let m = RunManifest {
            subcommand: self.subcommand.into(),
            config: serde_json::to_value(config)?,
            resolved: self.resolved,
            seeds: self.seeds,
            inputs: refs(&self.inputs)?,
            outputs: refs(&self.outputs)?,
            code_version: env!("CARGO_PKG_VERSION").into(),
            strict_deterministic: self.strict,
            threads: rayon::current_num_threads(),
            wall_clock_seconds: if self.strict { 0.0 } else { self.start.elapsed().as_secs_f64() },
        };
        std::fs::write(path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
