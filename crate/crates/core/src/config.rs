//! Experiment configuration files.
//!
//! A config is a TOML document:
//!
//! ```toml
//! [units]
//! power = "MW"
//! energy = "MWh"
//! time = "h"
//!
//! [model]
//! capacity = [10.0, 10.0]
//! transfer_cap = 1.5
//!
//! [model.background]
//! kind = "ctmc"
//! labels = ["on|on", "on|off", "off|on", "off|off"]
//! rate_matrix = [[-2, 1, 1, 0], [1, -2, 0, 1], [1, 0, -2, 1], [0, 1, 1, -2]]
//! netgen = [[2, 2], [2, -1.5], [-1.5, 2], [-1.5, -1.5]]
//!
//! [sharing]
//! c1 = 1.5
//! c2 = 1.5
//!
//! [run]
//! horizon = 1e6
//! seed = 1
//! grid_step = 0.25
//! ```
//!
//! `[model]` may instead name a bundled `preset` or a `file` holding another
//! config whose `[model]` is used. Background kinds are `ctmc`, `product`
//! (two per-agent chains with `agent1`/`agent2` tables of `rate_matrix`,
//! `netgen` and optional `labels`), `trace` (a CSV with header `r1,r2` and
//! `sample_period`, in model time units) and `generation` (two
//! `timestamp,power` CSVs plus demand rules, see [`AgentGeneration`]).
//! Generation backgrounds require units MW, MWh and h. Relative paths are
//! resolved against the config file's directory.

use std::path::{Path, PathBuf};

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{self, DemandMode};
use crate::model::{AgentChain, BackgroundSpec, CtmcSpec, ModelSpec, SharingConfig, TraceSpec};
use crate::presets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub power: String,
    pub energy: String,
    pub time: String,
}

impl Units {
    pub fn dimensionless() -> Self {
        Units {
            power: "1".into(),
            energy: "1".into(),
            time: "1".into(),
        }
    }

    pub fn megawatt_hours() -> Self {
        Units {
            power: "MW".into(),
            energy: "MWh".into(),
            time: "h".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    pub rate_matrix: Vec<Vec<f64>>,
    pub netgen: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandKind {
    Constant,
    Windowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    pub mode: DemandKind,
    pub fraction: f64,
    /// `["HH:MM", "HH:MM"]`, required for windowed demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[String; 2]>,
}

/// One agent's generation file and demand rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGeneration {
    pub path: PathBuf,
    /// Sample period of the file in minutes, if coarser than the model's.
    /// Each sample is then held constant over its interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_period_min: Option<u32>,
    pub demand: DemandSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackgroundSection {
    Ctmc {
        labels: Vec<String>,
        rate_matrix: Vec<Vec<f64>>,
        netgen: Vec<[f64; 2]>,
    },
    Product {
        agent1: ChainSection,
        agent2: ChainSection,
    },
    Trace {
        path: PathBuf,
        sample_period: f64,
    },
    Generation {
        period_min: u32,
        agent1: AgentGeneration,
        agent2: AgentGeneration,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<BackgroundSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingSection {
    pub c1: f64,
    pub c2: f64,
}

impl From<SharingSection> for SharingConfig {
    fn from(s: SharingSection) -> Self {
        SharingConfig::new(s.c1, s.c2)
    }
}

impl From<SharingConfig> for SharingSection {
    fn from(s: SharingConfig) -> Self {
        SharingSection { c1: s.c1, c2: s.c2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Defaults to one pass over the trace for trace backgrounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Defaults to a fraction of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub units: Units,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing: Option<SharingSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "is_default_outputs")]
    pub outputs: OutputSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn is_default_outputs(o: &OutputSection) -> bool {
    *o == OutputSection::default()
}

fn parse_time(s: &str) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .map_err(|_| Error::Config(format!("invalid time of day `{s}`, expected HH:MM")))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// An in-memory config for a bundled preset.
    pub fn for_preset(name: &str) -> Result<Self> {
        if presets::by_name(name).is_none() {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                presets::NAMES.join(", ")
            )));
        }
        Ok(ExperimentConfig {
            units: Units::dimensionless(),
            model: ModelSection {
                preset: Some(name.into()),
                ..ModelSection::default()
            },
            sharing: None,
            run: RunSection::default(),
            outputs: OutputSection::default(),
            base_dir: PathBuf::from("."),
        })
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Numeric sanity checks that do not need any file access.
    pub fn check(&self) -> Result<()> {
        let m = &self.model;
        let inline = m.capacity.is_some() || m.transfer_cap.is_some() || m.background.is_some();
        let sources = [m.preset.is_some(), m.file.is_some(), inline];
        match sources.iter().filter(|&&s| s).count() {
            0 => {
                return Err(Error::Config(
                    "[model] needs `preset`, `file` or an inline model".into(),
                ))
            }
            1 => {}
            _ => {
                return Err(Error::Config(
                    "[model] takes exactly one of `preset`, `file` or an inline model".into(),
                ))
            }
        }
        if inline && (m.capacity.is_none() || m.transfer_cap.is_none() || m.background.is_none()) {
            return Err(Error::Config(
                "inline [model] needs `capacity`, `transfer_cap` and `background`".into(),
            ));
        }
        if matches!(m.background, Some(BackgroundSection::Generation { .. }))
            && self.units != Units::megawatt_hours()
        {
            return Err(Error::Config(
                "generation backgrounds require units power = \"MW\", energy = \"MWh\", time = \"h\"".into(),
            ));
        }
        let run = &self.run;
        if let Some(h) = run.horizon {
            check_positive("run.horizon", h)?;
        }
        if let Some(w) = run.warmup {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "run.warmup must be non-negative, got {w}"
                )));
            }
            if run.horizon.is_some_and(|h| w >= h) {
                return Err(Error::Config(format!(
                    "run.warmup ({w}) must be below run.horizon"
                )));
            }
        }
        if let Some(g) = run.grid_step {
            check_positive("run.grid_step", g)?;
        }
        if run.batches == Some(0) {
            return Err(Error::Config("run.batches must be at least 1".into()));
        }
        if let Some(s) = self.sharing {
            if !(s.c1 >= 0.0 && s.c2 >= 0.0) {
                return Err(Error::Config(format!(
                    "sharing shares must be non-negative, got ({}, {})",
                    s.c1, s.c2
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn sharing(&self) -> Option<SharingConfig> {
        self.sharing.map(Into::into)
    }

    /// Builds the model, reading any referenced files.
    pub fn model(&self) -> Result<ModelSpec> {
        let m = &self.model;
        if let Some(name) = &m.preset {
            return presets::by_name(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset `{name}` (known: {})",
                    presets::NAMES.join(", ")
                ))
            });
        }
        if let Some(file) = &m.file {
            return ExperimentConfig::load(&self.resolve(file))?.model();
        }
        let (capacity, transfer_cap, background) =
            match (&m.capacity, &m.transfer_cap, &m.background) {
                (Some(c), Some(t), Some(b)) => (*c, *t, b),
                _ => return Err(Error::Config("incomplete inline [model]".into())),
            };
        let background = match background {
            BackgroundSection::Ctmc {
                labels,
                rate_matrix,
                netgen,
            } => BackgroundSpec::Ctmc(CtmcSpec {
                labels: labels.clone(),
                rate_matrix: rate_matrix.clone(),
                netgen: netgen.iter().map(|&[a, b]| (a, b)).collect(),
            }),
            BackgroundSection::Product { agent1, agent2 } => {
                let chain = |c: &ChainSection| AgentChain {
                    labels: if c.labels.is_empty() {
                        (0..c.netgen.len()).map(|i| i.to_string()).collect()
                    } else {
                        c.labels.clone()
                    },
                    rate_matrix: c.rate_matrix.clone(),
                    netgen: c.netgen.clone(),
                };
                BackgroundSpec::Ctmc(CtmcSpec::product(&chain(agent1), &chain(agent2)))
            }
            BackgroundSection::Trace {
                path,
                sample_period,
            } => {
                check_positive("model.background.sample_period", *sample_period)?;
                BackgroundSpec::Trace(TraceSpec {
                    sample_period: *sample_period,
                    series: load_netgen_csv(&self.resolve(path))?,
                })
            }
            BackgroundSection::Generation {
                period_min,
                agent1,
                agent2,
            } => {
                let load = |a: &AgentGeneration| -> Result<(ingestion::GenerationTrace, ingestion::DemandCurve)> {
                    let path = self.resolve(&a.path);
                    let trace = match a.source_period_min {
                        Some(src) if src != *period_min => {
                            ingestion::expand_hourly(&ingestion::load_trace_csv(&path, src)?, *period_min)?
                        }
                        _ => ingestion::load_trace_csv(&path, *period_min)?,
                    };
                    let (mode, window) = match a.demand.mode {
                        DemandKind::Constant => (DemandMode::Constant, None),
                        DemandKind::Windowed => {
                            let [s, e] = a
                                .demand
                                .window
                                .as_ref()
                                .ok_or_else(|| Error::Config("windowed demand needs `window`".into()))?;
                            (DemandMode::Windowed, Some((parse_time(s)?, parse_time(e)?)))
                        }
                    };
                    let demand = ingestion::build_demand(&trace, mode, a.demand.fraction, window)?;
                    Ok((trace, demand))
                };
                let (g1, d1) = load(agent1)?;
                let (g2, d2) = load(agent2)?;
                return ingestion::net_generation_model(&g1, &d1, &g2, &d2, capacity, transfer_cap);
            }
        };
        Ok(ModelSpec {
            background,
            capacity,
            transfer_cap,
        })
    }

    /// The configured horizon, or one pass over a trace background.
    pub fn horizon(&self, model: &ModelSpec) -> Result<f64> {
        if let Some(h) = self.run.horizon {
            return Ok(h);
        }
        match &model.background {
            BackgroundSpec::Trace(t) => Ok(t.sample_period * t.series.len() as f64),
            BackgroundSpec::Ctmc(_) => Err(Error::Config(
                "run.horizon is required for CTMC backgrounds".into(),
            )),
        }
    }

    pub fn output_path(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_ref().map(|p| self.resolve(p))
    }
}

#[derive(Debug, Deserialize)]
struct NetgenRow {
    r1: f64,
    r2: f64,
}

/// Reads a net generation series with header `r1,r2`.
pub fn load_netgen_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<NetgenRow>() {
        let row = row?;
        out.push((row.r1, row.r2));
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "no samples; expected header `r1,r2` and at least one row".into(),
        });
    }
    Ok(out)
}
