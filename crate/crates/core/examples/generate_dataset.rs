//! Write a synthetic year of inputs plus a scenario file that uses them.
//! Usage: generate_dataset [DIR]   (default ./gridflex-data)

use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use gridflex::config::{DataPaths, ScenarioConfig};
use gridflex::fleet::{default_fleet, BehaviorModel, FleetFile};
use gridflex::market::write_hourly_csv_file;
use gridflex::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gridflex-data".into()));
    std::fs::create_dir_all(&dir)?;
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let (days, households, seed) = (366, 126, 2024);

    write_hourly_csv_file(&synth::spot_prices(start, days, seed).0, &dir.join("spot.csv"))?;
    write_hourly_csv_file(&synth::baseload(start, days, households, seed).0, &dir.join("baseload.csv"))?;
    write_hourly_csv_file(&synth::carbon_intensity(start, days, seed).0, &dir.join("intensity.csv"))?;
    let fleet = FleetFile::from_specs(&default_fleet(households), Some(BehaviorModel::default()));
    std::fs::write(dir.join("fleet.toml"), fleet.to_toml())?;

    let cfg = ScenarioConfig {
        data: DataPaths {
            spot: Some("spot.csv".into()),
            baseload: Some("baseload.csv".into()),
            intensity: Some("intensity.csv".into()),
            fleet: Some("fleet.toml".into()),
            synthetic_seed: None,
        },
        ..ScenarioConfig::default()
    };
    std::fs::write(dir.join("scenario.toml"), cfg.to_toml())?;
    println!("wrote {}", dir.display());
    Ok(())
}
