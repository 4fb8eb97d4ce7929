//! Pipeline configuration: TOML file with sections, then `HEADFIT_*`
//! environment overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use headfit_core::camera::PrincipalPoint;
use headfit_core::eval::{EvalConfig, DEFAULT_TOLERANCE};
use headfit_core::sampler::GroupRatios;
use headfit_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::exit::UsageError;

/// Prefix shared by every environment variable the tool reads.
pub const ENV_PREFIX: &str = "HEADFIT_";

/// Separates nested keys in an override variable:
/// `HEADFIT_SOLVER__OMEGA_C=30` sets `solver.omega_c`.
const ENV_SEPARATOR: &str = "__";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub paths: PathsSection,
    pub solver: SolverConfig,
    pub sampler: SamplerSection,
    pub camera: CameraSection,
    pub eval: EvalConfig,
    pub heatmap: HeatmapSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub template: Option<PathBuf>,
    pub anchors: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl PathsSection {
    /// Relative entries in a config file are relative to that file.
    fn resolve_against(&mut self, dir: &Path) {
        for p in [
            &mut self.template,
            &mut self.anchors,
            &mut self.basis,
            &mut self.manifest,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Members interpolated per sample.
    pub m: usize,
    pub ratios: GroupRatios,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            m: 5,
            ratios: GroupRatios::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub principal_point: PrincipalPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSection {
    /// Distance (mm) mapped to full red.
    pub tolerance: f64,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection {
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (if any) and applies overrides from `vars`.
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                raw.parse::<toml::Table>()
                    .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, vars)?;
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.paths.resolve_against(dir);
            if let Some(out) = cfg.run.output_dir.as_mut() {
                *out = dir.join(&*out);
            }
        }
        cfg.solver.validate().context("invalid [solver] section")?;
        cfg.sampler.ratios.validate().context("invalid [sampler] section")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Global flags are handled by the argument parser; everything else with
/// the prefix and a section separator lands in the table.
pub fn apply_overrides(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains(ENV_SEPARATOR))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split(ENV_SEPARATOR)
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|s| s.is_empty()) {
            return Err(UsageError(format!("malformed override variable {key}")).into());
        }
        let value = parse_value(&raw);
        let (last, parents) = path.split_last().expect("split yields at least one part");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| UsageError(format!("{key}: '{p}' is not a section")))?;
        }
        node.insert(last.clone(), value);
    }
    Ok(())
}

/// TOML literal when it parses as one (numbers, booleans, arrays), else a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
