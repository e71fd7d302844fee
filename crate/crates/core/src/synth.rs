//! Deterministic synthetic market data.
//!
//! Used when a scenario does not point at recorded CSV files. The shapes
//! mimic a northern-European residential feeder: cheap and flat night-time
//! spot prices, morning and evening price peaks, a summer midday solar dip,
//! and an evening household consumption peak that is higher in winter.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::market::{BaseloadProfile, CarbonIntensitySeries, HourlySeries, PriceSeries};

/// Local-time offset used to place the daily shapes.
const SHAPE_UTC_OFFSET_HOURS: i64 = 1;

const SPOT_WINTER: [f64; 24] = [
    0.78, 0.76, 0.75, 0.745, 0.75, 0.78, 0.95, 1.15, 1.20, 1.10, 1.02, 0.98, 0.95, 0.93, 0.95,
    1.02, 1.15, 1.30, 1.28, 1.15, 1.05, 0.98, 0.92, 0.84,
];
const SPOT_SUMMER: [f64; 24] = [
    0.84, 0.80, 0.78, 0.77, 0.78, 0.84, 0.95, 1.05, 1.00, 0.80, 0.60, 0.45, 0.38, 0.40, 0.50,
    0.70, 0.95, 1.20, 1.35, 1.40, 1.25, 1.10, 1.00, 0.90,
];
const HOUSEHOLD_KW: [f64; 24] = [
    0.35, 0.30, 0.28, 0.27, 0.28, 0.32, 0.45, 0.65, 0.60, 0.50, 0.45, 0.45, 0.45, 0.42, 0.42,
    0.48, 0.62, 0.85, 0.95, 0.90, 0.80, 0.70, 0.55, 0.45,
];

fn local_hour_and_doy(t: DateTime<Utc>) -> (usize, f64, Weekday) {
    let local = t + Duration::hours(SHAPE_UTC_OFFSET_HOURS);
    (
        local.hour() as usize,
        local.ordinal0() as f64,
        local.weekday(),
    )
}

/// 1.0 in mid-January, 0.0 in mid-July.
fn winter_weight(doy: f64) -> f64 {
    0.5 + 0.5 * (2.0 * PI * (doy - 15.0) / 365.0).cos()
}

fn hours(start: DateTime<Utc>, days: usize) -> impl Iterator<Item = DateTime<Utc>> {
    (0..days * 24).map(move |h| start + Duration::hours(h as i64))
}

/// Hourly spot prices in DKK/kWh.
pub fn spot_prices(start: DateTime<Utc>, days: usize, seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5107_5107);
    let day_noise = Normal::new(0.0, 0.18).expect("valid sd");
    let hour_noise = Normal::new(0.0, 0.012).expect("valid sd");
    let mut level_shock: f64 = 0.0;
    let mut values = Vec::with_capacity(days * 24);
    let mut current_day = None;
    for t in hours(start, days) {
        let (hour, doy, _) = local_hour_and_doy(t);
        if current_day != Some(doy as i64) {
            current_day = Some(doy as i64);
            level_shock = 0.6 * level_shock + day_noise.sample(&mut rng);
        }
        let w = winter_weight(doy);
        let level = (0.50 + 0.12 * (2.0 * w - 1.0)) * level_shock.exp();
        let shape = w * SPOT_WINTER[hour] + (1.0 - w) * SPOT_SUMMER[hour];
        let v = level * shape + hour_noise.sample(&mut rng) - 0.01;
        values.push((v * 1e4).round() / 1e4);
    }
    PriceSeries::new(HourlySeries::new(start, values).expect("finite values"))
}

/// Aggregated hourly baseload in kW for `households` homes.
pub fn baseload(start: DateTime<Utc>, days: usize, households: usize, seed: u64) -> BaseloadProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA5E_10AD);
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    let values = hours(start, days)
        .map(|t| {
            let (hour, doy, wd) = local_hour_and_doy(t);
            let season = 0.8 + 0.45 * winter_weight(doy);
            let weekend = if matches!(wd, Weekday::Sat | Weekday::Sun) { 1.06 } else { 1.0 };
            let per_home = HOUSEHOLD_KW[hour] * season * weekend;
            let v = households as f64 * per_home * (1.0 + noise.sample(&mut rng));
            (v.max(0.0) * 1e3).round() / 1e3
        })
        .collect();
    BaseloadProfile::new(HourlySeries::new(start, values).expect("finite values"))
        .expect("non-negative")
}

/// Hourly carbon intensity in kg CO2-eq/kWh.
pub fn carbon_intensity(start: DateTime<Utc>, days: usize, seed: u64) -> CarbonIntensitySeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC02_C02);
    let values = hours(start, days)
        .map(|t| {
            let (hour, doy, _) = local_hour_and_doy(t);
            let w = winter_weight(doy);
            let shape = w * SPOT_WINTER[hour] + (1.0 - w) * SPOT_SUMMER[hour];
            let v = 0.16 + 0.08 * w + 0.05 * (shape - 1.0) + rng.random_range(-0.02..0.02);
            (v.max(0.02) * 1e4).round() / 1e4
        })
        .collect();
    CarbonIntensitySeries::new(HourlySeries::new(start, values).expect("finite values"))
        .expect("non-negative")
}
