//! Run configuration: one TOML file carrying the model specification, data
//! paths, output location, report options and the simulation design.
//!
//! ```toml
//! [model]
//! k = 3
//! z = 2
//! restarts = 5
//!
//! [data]
//! individuals = "data/individuals.csv"
//! tasks = "data/tasks.csv"
//! test_fraction = 0.2
//!
//! [output]
//! dir = "runs/k3z2"
//! ```
//!
//! Relative paths in the file resolve against the file's directory. Any
//! key can be overridden from the command line with `--set section.key=value`
//! (the value is read as a TOML literal, falling back to a plain string).

use std::path::{Path, PathBuf};

use latclass_core::synth::PopulationConfig;
use latclass_core::{ModelSpec, NullModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub individuals: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    /// Levels per indicator column; every indicator gets five when absent.
    pub indicator_levels: Option<Vec<usize>>,
    /// Share of individuals held out for evaluation. Zero trains on all.
    pub test_fraction: f64,
    pub split_seed: u64,
    /// z-score socio columns with training-set moments.
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { individuals: None, tasks: None, indicator_levels: None, test_fraction: 0.2, split_seed: 0, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("latclass-out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Socio columns profiled per class. Columns with more than
    /// [`crate::report::MAX_PROFILE_VALUES`] distinct values are skipped.
    pub profile_columns: Option<Vec<usize>>,
    pub null_model: NullModel,
    /// Skip the finite-difference Hessians.
    pub skip_standard_errors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub population: PopulationConfig,
    /// Scale of the generating choice coefficients.
    pub separation: f64,
    pub generator_seed: u64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { population: PopulationConfig::default(), separation: 2.0, generator_seed: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    pub output: OutputConfig,
    pub report: ReportConfig,
    pub simulate: SimulateConfig,
}

/// Keys holding paths that resolve against the config file's directory.
const PATH_KEYS: [&str; 3] = ["data.individuals", "data.tasks", "output.dir"];

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides`, each
    /// `dotted.key=value`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut v: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", p.display(), e.message())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for key in PATH_KEYS {
                    if let Some(toml::Value::String(s)) = lookup_mut(&mut v, key) {
                        if Path::new(s.as_str()).is_relative() {
                            *s = base.join(s.as_str()).to_string_lossy().into_owned();
                        }
                    }
                }
                v
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!("data.test_fraction must lie in [0, 1), got {}", self.data.test_fraction)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn lookup_mut<'a>(t: &'a mut toml::Table, dotted: &str) -> Option<&'a mut toml::Value> {
    let (head, rest) = match dotted.split_once('.') {
        Some((h, r)) => (h, Some(r)),
        None => (dotted, None),
    };
    let v = t.get_mut(head)?;
    match rest {
        None => Some(v),
        Some(r) => lookup_mut(v.as_table_mut()?, r),
    }
}

/// Sets `dotted.key` to `value`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{assignment}` must look like section.key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Usage(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("non-empty key");
    let mut table = root;
    for p in parts {
        let entry = table.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(leaf.to_owned(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    // Borrow TOML's own literal grammar by parsing a one-line document.
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}
