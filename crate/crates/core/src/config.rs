//! Scenario configuration (TOML).
//!
//! ```toml
//! schema_version = 1
//! seed = 42
//! span_days = 365
//! num_households = 126
//! ev_adoption = 1.0
//! transformer_capacity_kw = 400.0
//! strategy = "aggregated"          # or "baseline-rtp"
//! start = "2025-01-01T00:00:00Z"
//!
//! [data]                            # omitted files are generated
//! spot = "data/spot.csv"
//! baseload = "data/baseload.csv"
//! intensity = "data/intensity.csv"
//! fleet = "data/fleet.toml"
//! synthetic_seed = 2024
//!
//! [tariff]                          # optional, defaults to the Danish C-tariff
//! [behavior]                        # optional, overrides the fleet file
//! [kpi]
//! revenue_includes_baseload = false
//! ```
//!
//! Relative data paths resolve against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::BehaviorModel;
use crate::market::{parse_timestamp, TariffSchedule};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SYNTHETIC_SEED: u64 = 2024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Strategy {
    #[serde(rename = "baseline-rtp")]
    BaselineRtp,
    #[default]
    #[serde(rename = "aggregated")]
    Aggregated,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::BaselineRtp => "baseline-rtp",
            Strategy::Aggregated => "aggregated",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline-rtp" | "baseline" => Ok(Strategy::BaselineRtp),
            "aggregated" => Ok(Strategy::Aggregated),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected \"baseline-rtp\" or \"aggregated\")"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub spot: Option<PathBuf>,
    pub baseload: Option<PathBuf>,
    pub intensity: Option<PathBuf>,
    pub fleet: Option<PathBuf>,
    pub synthetic_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KpiOptions {
    pub revenue_includes_baseload: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_span")]
    pub span_days: u32,
    #[serde(default = "default_households")]
    pub num_households: usize,
    #[serde(default = "default_adoption")]
    pub ev_adoption: f64,
    #[serde(default = "default_capacity")]
    pub transformer_capacity_kw: f64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_start")]
    pub start: String,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub tariff: Option<TariffSchedule>,
    #[serde(default)]
    pub behavior: Option<BehaviorModel>,
    #[serde(default)]
    pub kpi: KpiOptions,
    /// Directory that relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_span() -> u32 {
    365
}
fn default_households() -> usize {
    126
}
fn default_adoption() -> f64 {
    1.0
}
fn default_capacity() -> f64 {
    400.0
}
fn default_start() -> String {
    "2025-01-01T00:00:00Z".into()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            span_days: default_span(),
            num_households: default_households(),
            ev_adoption: default_adoption(),
            transformer_capacity_kw: default_capacity(),
            strategy: Strategy::default(),
            start: default_start(),
            data: DataPaths::default(),
            tariff: None,
            behavior: None,
            kpi: KpiOptions::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.transformer_capacity_kw > 0.0) {
            return Err(Error::Config("transformer_capacity_kw must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ev_adoption) {
            return Err(Error::Config("ev_adoption must be in [0, 1]".into()));
        }
        if self.span_days == 0 {
            return Err(Error::Config("span_days must be >= 1".into()));
        }
        if self.num_households == 0 {
            return Err(Error::Config("num_households must be >= 1".into()));
        }
        self.start_time()?;
        if let Some(t) = &self.tariff {
            t.validate()?;
        }
        if let Some(b) = &self.behavior {
            b.validate()?;
        }
        Ok(())
    }

    pub fn start_time(&self) -> Result<DateTime<Utc>> {
        parse_timestamp(&self.start)
            .ok_or_else(|| Error::Config(format!("start: cannot parse {:?}", self.start)))
    }

    pub fn tariff_schedule(&self) -> TariffSchedule {
        self.tariff.clone().unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn num_evs(&self) -> usize {
        (self.ev_adoption * self.num_households as f64).round() as usize
    }

    pub fn synthetic_seed(&self) -> u64 {
        self.data.synthetic_seed.unwrap_or(DEFAULT_SYNTHETIC_SEED)
    }

    pub fn minutes(&self) -> usize {
        self.span_days as usize * 1440
    }
}
