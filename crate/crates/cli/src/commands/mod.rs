pub mod dr;
pub mod eval;
pub mod fit;
pub mod sample;
pub mod synth;
pub mod texture;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use headfit_core::mesh::{load_mesh, Mesh};
use headfit_core::Exec;
use serde::Serialize;

use crate::args::Cli;
use crate::config::PipelineConfig;
use crate::exit::UsageError;
use crate::logging::JsonlLog;

/// Everything a command needs besides its own arguments.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub exec: Exec,
    log: Option<JsonlLog>,
}

impl Ctx {
    pub fn new(cli: &Cli) -> Result<Self> {
        let cfg = PipelineConfig::load(cli.config.as_deref(), std::env::vars())?;
        let seed = cli.seed.unwrap_or(cfg.run.seed);
        let jobs = cli.jobs.or(cfg.run.jobs);
        let exec = configure_threads(jobs)?;
        let log = cli.log.as_ref().map(JsonlLog::open).transpose()?;
        Ok(Ctx {
            cfg,
            seed,
            jobs,
            exec,
            log,
        })
    }

    pub fn event(&mut self, kind: &str, fields: impl Serialize) -> Result<()> {
        match self.log.as_mut() {
            Some(l) => l.record(kind, fields),
            None => Ok(()),
        }
    }

    /// Output directory: the flag, then `[run].output_dir`, then the working directory.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        let dir = flag
            .or_else(|| self.cfg.run.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn configure_threads(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => Err(UsageError("--jobs must be at least 1".into()).into()),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the worker pool")?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}

/// A path from a flag or its `[paths]` fallback.
pub fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| UsageError(format!("no {what} given (flag or [paths] entry)")).into())
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    load_mesh(path).with_context(|| format!("loading mesh {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

/// Creates the directory an output file goes into.
pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())),
        None => Ok(()),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Prints a JSON summary on stdout. A closed pipe is not an error.
pub fn print_json(value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

pub fn max_vertex_error(a: &Mesh, b: &Mesh) -> f64 {
    a.vertices()
        .iter()
        .zip(b.vertices())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}
