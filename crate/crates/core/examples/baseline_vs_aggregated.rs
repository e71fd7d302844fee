//! Run the default feeder for a year under both strategies and print the
//! KPI tables with the percentage change.

use std::time::Instant;

use gridflex::config::{ScenarioConfig, Strategy};
use gridflex::engine::{compare_runs, run_scenario};
use gridflex::kpi::{format_percentage, KpiReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let mut runs = Vec::new();
    for strategy in [Strategy::BaselineRtp, Strategy::Aggregated] {
        let cfg = ScenarioConfig { seed, strategy, ..ScenarioConfig::default() };
        let t = Instant::now();
        let r = run_scenario(&cfg)?;
        println!("== {strategy} ({:.1} s)\n{}\n", t.elapsed().as_secs_f64(), r.kpi);
        println!(
            "max concurrent charging EVs: {}, rescheduled sessions: {}\n",
            r.max_concurrent_charging(),
            r.compensation.len()
        );
        runs.push(r);
    }
    let cmp = compare_runs(&runs[0], &runs[1])?;
    println!("change from baseline:");
    for (name, p) in KpiReport::CSV_HEADER.iter().zip(&cmp.difference_pct) {
        println!("  {name:<32} {}", format_percentage(*p));
    }
    let agg = &runs[1].kpi;
    println!(
        "compensation share of fleet charging cost: {:.2}%",
        agg.compensation_total / agg.fleet_charging_cost * 100.0
    );
    Ok(())
}
