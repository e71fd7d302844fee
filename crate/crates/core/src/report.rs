//! Output files of a run and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;
use crate::engine::SimulationResult;
use crate::error::{Error, Result};
use crate::kpi::{format_percentage, KpiReport};
use crate::engine::Comparison;

pub const LOAD_CSV: &str = "load.csv";
pub const SESSIONS_CSV: &str = "sessions.csv";
pub const COMPENSATION_CSV: &str = "compensation.csv";
pub const KPI_CSV: &str = "kpi.csv";
pub const KPI_TXT: &str = "kpi.txt";
pub const EVENTS_LOG: &str = "events.log";
pub const MANIFEST: &str = "manifest.toml";
pub const COMPARE_CSV: &str = "compare.csv";

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_load_csv(result: &SimulationResult, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "timestamp,kw").map_err(io)?;
    for (m, kw) in result.load_kw.iter().enumerate() {
        writeln!(w, "{},{:.3}", result.timestamp(m), kw).map_err(io)?;
    }
    finish(w, path)
}

pub fn write_sessions_csv(result: &SimulationResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "ev_id",
        "household",
        "plug_in",
        "departure",
        "departed",
        "energy_needed_kwh",
        "energy_kwh",
        "original_cost_dkk",
        "cost_dkk",
        "tariff_dkk",
        "compensation_dkk",
        "rescheduled",
        "soc_at_departure",
    ])
    .map_err(|e| csv_err(path, e))?;
    for s in &result.sessions {
        w.write_record([
            s.ev_id.to_string(),
            s.household.to_string(),
            result.timestamp(s.plug_in),
            result.timestamp(s.departure),
            s.departed.to_string(),
            format!("{:.3}", s.energy_needed_kwh),
            format!("{:.3}", s.energy_scheduled_kwh),
            format!("{:.2}", s.original_cost_dkk),
            format!("{:.2}", s.charge.cost_dkk),
            format!("{:.2}", s.charge.tariff_dkk),
            format!("{:.2}", s.compensation_dkk),
            s.rescheduled.to_string(),
            s.soc_at_departure.map_or(String::new(), |x| format!("{x:.4}")),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_compensation_csv(result: &SimulationResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["ev_id", "date", "original_cost_dkk", "shifted_cost_dkk", "compensation_dkk"])
        .map_err(|e| csv_err(path, e))?;
    for c in &result.compensation {
        w.write_record([
            c.ev_id.to_string(),
            c.session_date.to_string(),
            format!("{:.2}", c.original_cost),
            format!("{:.2}", c.shifted_cost),
            format!("{:.2}", c.compensation),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_events_log(result: &SimulationResult, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for line in result.warnings.iter().map(|w| format!("warning {w}")).chain(result.events.iter().cloned()) {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    finish(w, path)
}

/// Write every output file into `dir` and return their paths.
pub fn write_outputs(result: &SimulationResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = |name: &str| dir.join(name);
    write_load_csv(result, &p(LOAD_CSV))?;
    write_sessions_csv(result, &p(SESSIONS_CSV))?;
    write_compensation_csv(result, &p(COMPENSATION_CSV))?;
    write_text(&p(KPI_CSV), &result.kpi.to_csv())?;
    write_text(&p(KPI_TXT), &format!("{}\n", result.kpi))?;
    write_events_log(result, &p(EVENTS_LOG))?;
    Ok([LOAD_CSV, SESSIONS_CSV, COMPENSATION_CSV, KPI_CSV, KPI_TXT, EVENTS_LOG]
        .iter()
        .map(|n| p(n))
        .collect())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance of a run, written before the simulation starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub strategy: String,
    pub span_days: u32,
    pub start: String,
    pub num_households: usize,
    pub num_evs: usize,
    /// Data file checksums by series name; generated series are absent.
    #[serde(default)]
    pub checksums: BTreeMap<String, FileChecksum>,
}

impl RunManifest {
    pub fn new(cfg: &ScenarioConfig, config_path: &Path, output_dir: &Path) -> Result<Self> {
        let mut checksums = BTreeMap::new();
        for (name, p) in [
            ("spot", &cfg.data.spot),
            ("baseload", &cfg.data.baseload),
            ("intensity", &cfg.data.intensity),
            ("fleet", &cfg.data.fleet),
        ] {
            if let Some(p) = p {
                let path = cfg.resolve(p);
                let sha256 = sha256_file(&path)?;
                checksums.insert(name.to_string(), FileChecksum { path, sha256 });
            }
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: config_path.to_path_buf(),
            output_dir: output_dir.to_path_buf(),
            seed: cfg.seed,
            strategy: cfg.strategy.to_string(),
            span_days: cfg.span_days,
            start: cfg.start.clone(),
            num_households: cfg.num_households,
            num_evs: cfg.num_evs(),
            checksums,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &toml::to_string(self).expect("manifest serializes"))
    }

    /// Series whose checksum differs from `other` (or is missing in one of them).
    pub fn changed_inputs(&self, other: &RunManifest) -> Vec<String> {
        let mut names: Vec<&String> = self.checksums.keys().chain(other.checksums.keys()).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .filter(|n| self.checksums.get(*n).map(|c| &c.sha256) != other.checksums.get(*n).map(|c| &c.sha256))
            .cloned()
            .collect()
    }
}

/// Table with both KPI rows and the percentage change.
pub fn comparison_csv(cmp: &Comparison, label_a: &str, label_b: &str) -> String {
    let mut out = format!("run,{}\n", KpiReport::CSV_HEADER.join(","));
    out += &format!("{label_a},{}\n", cmp.a.csv_row().join(","));
    out += &format!("{label_b},{}\n", cmp.b.csv_row().join(","));
    let diffs: Vec<String> = cmp.difference_pct.iter().map(|p| format_percentage(*p)).collect();
    out += &format!("difference_pct,{}\n", diffs.join(","));
    out
}

/// Human-readable side-by-side table.
pub fn comparison_table(cmp: &Comparison, label_a: &str, label_b: &str) -> String {
    let mut out = format!("{:<32} {:>16} {:>16} {:>10}\n", "kpi", label_a, label_b, "change");
    let (ra, rb) = (cmp.a.csv_row(), cmp.b.csv_row());
    for (i, name) in KpiReport::CSV_HEADER.iter().enumerate() {
        out += &format!(
            "{:<32} {:>16} {:>16} {:>10}\n",
            name,
            ra[i],
            rb[i],
            format_percentage(cmp.difference_pct[i])
        );
    }
    out
}
