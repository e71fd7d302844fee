//! The `gridflex` command line.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 internal invariant violation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::config::{ScenarioConfig, Strategy};
use crate::engine::{compare_reports, run_with_data, ScenarioData};
use crate::error::{Error, ExitClass, Result};
use crate::kpi::{payback_years, KpiReport, Payback};
use crate::report::{self, RunManifest};

pub const OUT_ENV: &str = "GRIDFLEX_OUT";

#[derive(Debug, Parser)]
#[command(name = "gridflex", version, about = "EV charging aggregation on a capacity-limited transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write load, session, compensation and KPI files.
    Run(RunArgs),
    /// Compare the KPIs of a baseline and an aggregated run.
    Compare(CompareArgs),
    /// Years until compensation payments add up to a grid upgrade.
    Payback(PaybackArgs),
    /// Load all scenario data, check coverage and print summary statistics.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory [default: $GRIDFLEX_OUT/<config name>, or ./gridflex-out/<config name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config strategy (baseline-rtp or aggregated).
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Output directory of the baseline run.
    #[arg(long)]
    baseline: PathBuf,
    /// Output directory of the aggregated run.
    #[arg(long)]
    aggregated: PathBuf,
    /// Where to write compare.csv [default: $GRIDFLEX_OUT, or the current directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct PaybackArgs {
    /// Compensation paid per year, DKK.
    #[arg(long)]
    annual_compensation: f64,
    /// Upgrade option as COST or NAME=COST in DKK; repeatable.
    /// Defaults to reinforcement (115800), new 400 kVA unit (240000) and new station (679800).
    #[arg(long = "upgrade-cost")]
    upgrade_costs: Vec<UpgradeOption>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpgradeOption {
    pub name: String,
    pub cost_dkk: f64,
}

impl FromStr for UpgradeOption {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, cost) = match s.split_once('=') {
            Some((n, c)) => (n.trim().to_string(), c),
            None => (String::new(), s),
        };
        let cost_dkk: f64 = cost.trim().parse().map_err(|_| format!("not a number: {cost:?}"))?;
        if !(cost_dkk >= 0.0) {
            return Err("upgrade cost must be >= 0".into());
        }
        let name = if name.is_empty() { format!("upgrade {cost_dkk:.0}") } else { name };
        Ok(Self { name, cost_dkk })
    }
}

pub fn default_upgrade_options() -> Vec<UpgradeOption> {
    [
        ("reinforcement", 115_800.0),
        ("new 400 kVA unit", 240_000.0),
        ("new station", 679_800.0),
    ]
    .into_iter()
    .map(|(n, c)| UpgradeOption { name: n.into(), cost_dkk: c })
    .collect()
}

/// Payback rows `(option, years)`; errors on non-positive compensation.
pub fn payback_table(annual_compensation: f64, options: &[UpgradeOption]) -> Result<Vec<(UpgradeOption, f64)>> {
    options
        .iter()
        .map(|o| match payback_years(o.cost_dkk, annual_compensation) {
            Payback::Years(y) => Ok((o.clone(), y)),
            Payback::NotApplicable => Err(Error::InvalidInput(format!(
                "annual compensation must be > 0 (got {annual_compensation}); payback is not applicable"
            ))),
        })
        .collect()
}

fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("gridflex-out"))
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = ScenarioConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &a.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    let dir = a.out.clone().unwrap_or_else(|| {
        let stem = a.config.file_stem().map(PathBuf::from).unwrap_or_else(|| "run".into());
        default_out_root().join(stem)
    });
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let manifest = RunManifest::new(&cfg, &a.config, &dir)?;
    let manifest_path = dir.join(report::MANIFEST);
    if manifest_path.exists() {
        if let Ok(previous) = RunManifest::load(&manifest_path) {
            for name in previous.changed_inputs(&manifest) {
                let _ = writeln!(err, "warning: {name} data changed since the previous run in {}", dir.display());
            }
        }
    }
    manifest.save(&manifest_path)?;

    let data = ScenarioData::load(&cfg)?;
    for w in &data.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let result = run_with_data(&cfg, &data)?;
    report::write_outputs(&result, &dir)?;
    let _ = writeln!(
        out,
        "{} run, seed {}, {} days, {} EVs -> {}\n{}",
        cfg.strategy,
        cfg.seed,
        cfg.span_days,
        result.num_evs,
        dir.display(),
        result.kpi
    );
    Ok(())
}

fn read_run_dir(dir: &Path) -> Result<(KpiReport, Option<RunManifest>)> {
    let kpi_path = dir.join(report::KPI_CSV);
    let text = std::fs::read_to_string(&kpi_path).map_err(|e| Error::io(&kpi_path, e))?;
    let kpi = KpiReport::from_csv(&text)?;
    let manifest_path = dir.join(report::MANIFEST);
    let manifest = if manifest_path.exists() {
        Some(RunManifest::load(&manifest_path)?)
    } else {
        None
    };
    Ok((kpi, manifest))
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (ka, ma) = read_run_dir(&a.baseline)?;
    let (kb, mb) = read_run_dir(&a.aggregated)?;
    match (&ma, &mb) {
        (Some(x), Some(y)) => {
            if x.span_days != y.span_days || x.start != y.start {
                return Err(Error::Data(format!(
                    "runs cover different spans: {} days from {} vs {} days from {}",
                    x.span_days, x.start, y.span_days, y.start
                )));
            }
            if x.num_evs != y.num_evs || x.num_households != y.num_households {
                return Err(Error::Data(format!(
                    "runs use different fleets: {} vs {} EVs",
                    x.num_evs, y.num_evs
                )));
            }
            for name in x.changed_inputs(y) {
                let _ = writeln!(err, "warning: runs used different {name} data");
            }
        }
        _ => {
            let _ = writeln!(err, "warning: manifest missing, span and fleet not checked");
        }
    }
    let cmp = compare_reports(&ka, &kb);
    let _ = write!(out, "{}", report::comparison_table(&cmp, "baseline", "aggregated"));
    let dir = a
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(report::COMPARE_CSV);
    std::fs::write(&path, report::comparison_csv(&cmp, "baseline", "aggregated")).map_err(|e| Error::io(&path, e))?;
    let _ = writeln!(out, "wrote {}", path.display());
    Ok(())
}

fn cmd_payback(a: PaybackArgs, out: &mut dyn Write) -> Result<()> {
    let options = if a.upgrade_costs.is_empty() {
        default_upgrade_options()
    } else {
        a.upgrade_costs
    };
    let rows = payback_table(a.annual_compensation, &options)?;
    let _ = writeln!(out, "{:<24} {:>14} {:>16}", "option", "cost_dkk", "payback_years");
    for (o, years) in rows {
        let _ = writeln!(out, "{:<24} {:>14.2} {:>16.2}", o.name, o.cost_dkk, years);
    }
    Ok(())
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = ScenarioConfig::load(&a.config)?;
    let data = ScenarioData::load(&cfg)?;
    let _ = writeln!(
        out,
        "config {}: {} days from {}, {} households, {} EVs, capacity {:.3} kW, strategy {}",
        a.config.display(),
        cfg.span_days,
        cfg.start,
        cfg.num_households,
        data.fleet.len(),
        cfg.transformer_capacity_kw,
        cfg.strategy
    );
    for s in &data.sources {
        let origin = s
            .path
            .as_ref()
            .map_or("generated".to_string(), |p| p.display().to_string());
        match &s.stats {
            Some(stats) => {
                let _ = writeln!(out, "{:<10} {stats} ({origin})", s.name);
            }
            None => {
                let total: f64 = data.fleet.iter().map(|e| e.max_charge_power_kw).sum();
                let _ = writeln!(
                    out,
                    "{:<10} evs={} total_power_kw={total:.3} ({origin})",
                    s.name,
                    data.fleet.len()
                );
            }
        }
    }
    for w in &data.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let _ = writeln!(out, "ok: data covers the configured span");
    Ok(())
}

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Compare(a) => cmd_compare(a, out, err),
        Command::Payback(a) => cmd_payback(a, out),
        Command::Validate(a) => cmd_validate(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e.exit_class() {
                ExitClass::Config => 1,
                ExitClass::Data => 2,
                ExitClass::Internal => 3,
            }
        }
    }
}
