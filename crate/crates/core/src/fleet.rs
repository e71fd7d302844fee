//! Household EVs: specs, daily driving behaviour and battery state.

use std::fmt;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-household connection limit (3 x 25 A).
pub const HOUSEHOLD_POWER_CAP_KW: f64 = 17.3;
/// Smallest home charger considered.
pub const MIN_CHARGE_POWER_KW: f64 = 7.2;
/// Energy slack used when comparing a state of charge against its target.
pub const ENERGY_EPS_KWH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvId(pub u32);

impl fmt::Display for EvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSpec {
    pub id: EvId,
    pub battery_capacity_kwh: f64,
    pub max_charge_power_kw: f64,
    pub consumption_kwh_per_km: f64,
}

impl EvSpec {
    /// Validates a raw record. Chargers above the household cap are clamped
    /// to it and reported as a warning.
    pub fn from_record(rec: &EvRecord) -> Result<(Self, Option<String>)> {
        if !(rec.battery_kwh > 0.0) {
            return Err(Error::Data(format!("ev {}: battery_kwh must be > 0", rec.id)));
        }
        if !(rec.consumption_kwh_per_km > 0.0) {
            return Err(Error::Data(format!(
                "ev {}: consumption_kwh_per_km must be > 0",
                rec.id
            )));
        }
        if !(rec.max_power_kw >= MIN_CHARGE_POWER_KW) {
            return Err(Error::Data(format!(
                "ev {}: max_power_kw {} below {MIN_CHARGE_POWER_KW} kW",
                rec.id, rec.max_power_kw
            )));
        }
        let mut warning = None;
        let mut power = rec.max_power_kw;
        if power > HOUSEHOLD_POWER_CAP_KW {
            warning = Some(format!(
                "ev {}: max_power_kw {} exceeds the household limit; clamped to {HOUSEHOLD_POWER_CAP_KW} kW",
                rec.id, rec.max_power_kw
            ));
            power = HOUSEHOLD_POWER_CAP_KW;
        }
        Ok((
            Self {
                id: EvId(rec.id),
                battery_capacity_kwh: rec.battery_kwh,
                max_charge_power_kw: power,
                consumption_kwh_per_km: rec.consumption_kwh_per_km,
            },
            warning,
        ))
    }
}

/// A truncated normal over local clock hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean_h: f64,
    pub sd_h: f64,
    pub min_h: f64,
    pub max_h: f64,
}

impl TruncatedNormal {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.sd_h >= 0.0 && self.min_h <= self.max_h && self.min_h >= 0.0 && self.max_h <= 24.0)
        {
            return Err(Error::Config(format!("invalid {name} distribution {self:?}")));
        }
        Ok(())
    }

    /// Rejection sampling; falls back to clamping after many misses so the
    /// draw always terminates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sd_h == 0.0 {
            return self.mean_h.clamp(self.min_h, self.max_h);
        }
        let normal = Normal::new(self.mean_h, self.sd_h).expect("sd checked");
        for _ in 0..64 {
            let x = normal.sample(rng);
            if (self.min_h..=self.max_h).contains(&x) {
                return x;
            }
        }
        normal.sample(rng).clamp(self.min_h, self.max_h)
    }
}

/// Discrete daily driving distance distribution: `(km, probability)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceTable(pub Vec<(f64, f64)>);

impl DistanceTable {
    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("distance table is empty".into()));
        }
        let mut total = 0.0;
        for &(km, p) in &self.0 {
            if !(km >= 0.0) || !(p >= 0.0) {
                return Err(Error::Config(format!("bad distance entry ({km}, {p})")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "distance probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().map(|(km, p)| km * p).sum()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().map(|e| e.0).fold(0.0, f64::max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let idx = WeightedIndex::new(self.0.iter().map(|e| e.1)).expect("validated weights");
        self.0[idx.sample(rng)].0
    }
}

impl Default for DistanceTable {
    /// Placeholder commuter table, mean 39.9 km.
    fn default() -> Self {
        Self(vec![
            (5.0, 0.15),
            (15.0, 0.25),
            (30.0, 0.25),
            (50.0, 0.15),
            (80.0, 0.12),
            (120.0, 0.06),
            (180.0, 0.02),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorModel {
    pub departure: TruncatedNormal,
    pub arrival: TruncatedNormal,
    pub distance: DistanceTable,
    /// Desired state of charge at departure, as a fraction of capacity.
    pub soc_target: f64,
}

impl Default for BehaviorModel {
    fn default() -> Self {
        Self {
            departure: TruncatedNormal { mean_h: 7.5, sd_h: 1.0, min_h: 5.0, max_h: 10.0 },
            arrival: TruncatedNormal { mean_h: 16.5, sd_h: 1.5, min_h: 13.0, max_h: 21.0 },
            distance: DistanceTable::default(),
            soc_target: 1.0,
        }
    }
}

impl BehaviorModel {
    pub fn validate(&self) -> Result<()> {
        self.departure.validate("departure")?;
        self.arrival.validate("arrival")?;
        if self.departure.max_h >= self.arrival.min_h {
            return Err(Error::Config(
                "departure window must end before the arrival window starts".into(),
            ));
        }
        if !(self.soc_target > 0.0 && self.soc_target <= 1.0) {
            return Err(Error::Config("soc_target must be in (0, 1]".into()));
        }
        self.distance.validate()
    }
}

/// One day of driving, in local wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingDay {
    pub departure: NaiveDateTime,
    pub arrival: NaiveDateTime,
    pub distance_km: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random stream for one EV on one simulated day.
pub fn day_rng(seed: u64, ev: EvId, day_index: u32) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(seed) ^ ((ev.0 as u64) << 32 | day_index as u64));
    ChaCha8Rng::seed_from_u64(key)
}

fn at_local_hour(day: NaiveDate, hours: f64) -> NaiveDateTime {
    let minutes = (hours * 60.0).round() as i64;
    day.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(minutes)
}

/// Draw one departure / arrival / distance triple, rounded to whole minutes.
pub fn sample_driving_day<R: Rng + ?Sized>(model: &BehaviorModel, rng: &mut R, day: NaiveDate) -> DrivingDay {
    let dep_h = model.departure.sample(rng);
    let arr_h = model.arrival.sample(rng);
    let distance_km = model.distance.sample(rng);
    let departure = at_local_hour(day, dep_h);
    let mut arrival = at_local_hour(day, arr_h);
    if arrival <= departure {
        arrival = departure + Duration::minutes(1);
    }
    DrivingDay { departure, arrival, distance_km }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissatisfactionEvent {
    pub ev_id: EvId,
    pub day: u32,
    /// Fraction of battery capacity at departure.
    pub soc_at_departure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvAgent {
    pub spec: EvSpec,
    pub soc_kwh: f64,
    pub soc_target: f64,
    pub plugged: bool,
    pub today: Option<DrivingDay>,
}

impl EvAgent {
    /// A fully charged, plugged-in vehicle.
    pub fn new(spec: EvSpec, soc_target: f64) -> Self {
        Self {
            spec,
            soc_kwh: spec.battery_capacity_kwh,
            soc_target,
            plugged: true,
            today: None,
        }
    }

    pub fn soc_fraction(&self) -> f64 {
        self.soc_kwh / self.spec.battery_capacity_kwh
    }

    /// Energy to put back after today's trip, limited by battery headroom.
    pub fn energy_needed(&self) -> f64 {
        let distance = self.today.map_or(0.0, |d| d.distance_km);
        let trip = distance * self.spec.consumption_kwh_per_km;
        trip.min(self.spec.battery_capacity_kwh - self.soc_kwh).max(0.0)
    }

    /// Adds charged energy at 100% efficiency, clamped at capacity.
    /// Returns the energy actually stored.
    pub fn apply_charging(&mut self, energy_kwh: f64) -> Result<f64> {
        if energy_kwh < 0.0 || !energy_kwh.is_finite() {
            return Err(Error::InvalidInput(format!(
                "ev {}: charging energy must be >= 0, got {energy_kwh}",
                self.spec.id
            )));
        }
        let before = self.soc_kwh;
        self.soc_kwh = (self.soc_kwh + energy_kwh).min(self.spec.battery_capacity_kwh);
        Ok(self.soc_kwh - before)
    }

    /// Unplug for the day's trip. Emits an event when the battery is below target.
    pub fn depart(&mut self, day: u32) -> Result<Option<DissatisfactionEvent>> {
        if !self.plugged {
            return Err(Error::InvalidInput(format!(
                "ev {} departing while unplugged",
                self.spec.id
            )));
        }
        self.plugged = false;
        let target = self.soc_target * self.spec.battery_capacity_kwh;
        Ok((self.soc_kwh < target - ENERGY_EPS_KWH).then(|| DissatisfactionEvent {
            ev_id: self.spec.id,
            day,
            soc_at_departure: self.soc_fraction(),
        }))
    }

    /// Return home: deduct the trip's energy and plug in.
    pub fn arrive(&mut self) -> Result<()> {
        if self.plugged {
            return Err(Error::InvalidInput(format!(
                "ev {} arriving while plugged in",
                self.spec.id
            )));
        }
        let trip = self
            .today
            .map_or(0.0, |d| d.distance_km * self.spec.consumption_kwh_per_km);
        self.soc_kwh = (self.soc_kwh - trip).max(0.0);
        self.plugged = true;
        Ok(())
    }
}

/// Raw fleet-file record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRecord {
    pub id: u32,
    pub battery_kwh: f64,
    pub max_power_kw: f64,
    #[serde(default = "default_consumption")]
    pub consumption_kwh_per_km: f64,
}

fn default_consumption() -> f64 {
    0.2
}

/// TOML fleet definition: `[[ev]]` records and an optional `[behavior]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetFile {
    pub ev: Vec<EvRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<BehaviorModel>,
}

pub struct LoadedFleet {
    pub specs: Vec<EvSpec>,
    pub behavior: Option<BehaviorModel>,
    pub warnings: Vec<String>,
}

impl FleetFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Data(format!("{source}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fleet serializes")
    }

    pub fn into_fleet(self) -> Result<LoadedFleet> {
        let mut specs = Vec::with_capacity(self.ev.len());
        let mut warnings = Vec::new();
        for rec in &self.ev {
            let (spec, warning) = EvSpec::from_record(rec)?;
            if specs.iter().any(|s: &EvSpec| s.id == spec.id) {
                return Err(Error::Data(format!("duplicate ev id {}", rec.id)));
            }
            warnings.extend(warning);
            specs.push(spec);
        }
        if let Some(b) = &self.behavior {
            b.validate()?;
        }
        Ok(LoadedFleet { specs, behavior: self.behavior, warnings })
    }

    pub fn from_specs(specs: &[EvSpec], behavior: Option<BehaviorModel>) -> Self {
        Self {
            ev: specs
                .iter()
                .map(|s| EvRecord {
                    id: s.id.0,
                    battery_kwh: s.battery_capacity_kwh,
                    max_power_kw: s.max_charge_power_kw,
                    consumption_kwh_per_km: s.consumption_kwh_per_km,
                })
                .collect(),
            behavior,
        }
    }
}

/// Charger-power mix of the reference 126-vehicle fleet
/// (sum 1296.9 kW, max 17.3, mean 10.3, min 7.4).
const REFERENCE_MIX: [(f64, f64, usize); 4] = [
    // (kW, battery kWh, count)
    (7.4, 58.0, 40),
    (9.2, 64.0, 1),
    (11.0, 77.0, 76),
    (17.3, 95.0, 9),
];

/// Deterministic synthetic fleet. For 126 vehicles it reproduces the
/// reference power mix exactly; other sizes cycle through the same mix.
pub fn default_fleet(count: usize) -> Vec<EvSpec> {
    let mut pattern: Vec<(f64, f64)> = REFERENCE_MIX
        .iter()
        .flat_map(|&(kw, kwh, n)| std::iter::repeat_n((kw, kwh), n))
        .collect();
    pattern.shuffle(&mut ChaCha8Rng::seed_from_u64(126));
    (0..count)
        .map(|i| {
            let (kw, kwh) = pattern[i % pattern.len()];
            EvSpec {
                id: EvId(i as u32),
                battery_capacity_kwh: kwh,
                max_charge_power_kw: kw,
                consumption_kwh_per_km: 0.2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(cap: f64) -> EvSpec {
        EvSpec {
            id: EvId(0),
            battery_capacity_kwh: cap,
            max_charge_power_kw: 11.0,
            consumption_kwh_per_km: 0.2,
        }
    }

    fn with_trip(mut agent: EvAgent, km: f64) -> EvAgent {
        let day = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        agent.today = Some(DrivingDay {
            departure: day.and_hms_opt(7, 0, 0).unwrap(),
            arrival: day.and_hms_opt(17, 0, 0).unwrap(),
            distance_km: km,
        });
        agent
    }

    #[test]
    fn sampling_is_deterministic_per_ev_and_day() {
        let m = BehaviorModel::default();
        let day = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        let a = sample_driving_day(&m, &mut day_rng(42, EvId(0), 0), day);
        let b = sample_driving_day(&m, &mut day_rng(42, EvId(0), 0), day);
        assert_eq!(a, b);
        let c = sample_driving_day(&m, &mut day_rng(42, EvId(1), 0), day);
        assert_ne!(a, c);
        assert!(a.departure < a.arrival);
    }

    #[test]
    fn degenerate_distance_table() {
        let m = BehaviorModel {
            distance: DistanceTable(vec![(40.0, 1.0)]),
            ..Default::default()
        };
        let day = NaiveDate::from_ymd_opt(2025, 3, 1).unwrap();
        for ev in 0..20 {
            let d = sample_driving_day(&m, &mut day_rng(1, EvId(ev), 3), day);
            assert_eq!(d.distance_km, 40.0);
        }
    }

    #[test]
    fn distance_sample_mean_matches_table_mean() {
        let table = DistanceTable::default();
        // analytic mean of the table, computed independently
        let analytic = 5.0 * 0.15 + 15.0 * 0.25 + 30.0 * 0.25 + 50.0 * 0.15 + 80.0 * 0.12
            + 120.0 * 0.06
            + 180.0 * 0.02;
        assert!((table.mean() - analytic).abs() < 1e-12);
        let m = BehaviorModel::default();
        let day = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        let n = 10_000;
        let total: f64 = (0..n)
            .map(|i| sample_driving_day(&m, &mut day_rng(9, EvId(i % 126), i / 126), day).distance_km)
            .sum();
        let mean = total / n as f64;
        assert!((mean - analytic).abs() / analytic < 0.05, "{mean} vs {analytic}");
    }

    #[test]
    fn times_respect_truncation_bounds() {
        let m = BehaviorModel::default();
        let day = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        let lo_dep = day.and_hms_opt(5, 0, 0).unwrap();
        let hi_dep = day.and_hms_opt(10, 0, 0).unwrap();
        let lo_arr = day.and_hms_opt(13, 0, 0).unwrap();
        let hi_arr = day.and_hms_opt(21, 0, 0).unwrap();
        for i in 0..2000 {
            let d = sample_driving_day(&m, &mut day_rng(5, EvId(i), 0), day);
            assert!(d.departure >= lo_dep && d.departure <= hi_dep);
            assert!(d.arrival >= lo_arr && d.arrival <= hi_arr);
        }
    }

    #[test]
    fn energy_needed_cases() {
        let mut a = with_trip(EvAgent::new(spec(60.0), 1.0), 40.0);
        a.soc_kwh = 0.0;
        assert!((a.energy_needed() - 8.0).abs() < 1e-12);
        let a = with_trip(EvAgent::new(spec(60.0), 1.0), 0.0);
        assert_eq!(a.energy_needed(), 0.0);
        let mut a = with_trip(EvAgent::new(spec(60.0), 1.0), 500.0);
        a.soc_kwh = 2.0;
        assert!((a.energy_needed() - 58.0).abs() < 1e-12);
    }

    #[test]
    fn apply_charging_clamps_and_rejects_negative() {
        let mut a = EvAgent::new(spec(60.0), 1.0);
        a.soc_kwh = 10.0;
        a.apply_charging(5.0).unwrap();
        assert_eq!(a.soc_kwh, 15.0);
        a.soc_kwh = 59.0;
        assert_eq!(a.apply_charging(5.0).unwrap(), 1.0);
        assert_eq!(a.soc_kwh, 60.0);
        a.apply_charging(0.0).unwrap();
        assert_eq!(a.soc_kwh, 60.0);
        assert!(a.apply_charging(-1.0).is_err());
    }

    #[test]
    fn depart_emits_only_below_target() {
        let mut a = EvAgent::new(spec(60.0), 1.0);
        assert_eq!(a.depart(0).unwrap(), None);
        assert!(a.depart(0).is_err(), "already unplugged");
        let mut b = EvAgent::new(spec(60.0), 1.0);
        b.soc_kwh = 0.95 * 60.0;
        let ev = b.depart(3).unwrap().unwrap();
        assert_eq!(ev.day, 3);
        assert!((ev.soc_at_departure - 0.95).abs() < 1e-12);
    }

    #[test]
    fn arrive_deducts_trip_energy() {
        let mut a = with_trip(EvAgent::new(spec(60.0), 1.0), 40.0);
        a.depart(0).unwrap();
        a.arrive().unwrap();
        assert!((a.soc_kwh - 52.0).abs() < 1e-12);
        assert!((a.energy_needed() - 8.0).abs() < 1e-12);
        assert!(a.arrive().is_err());
    }

    #[test]
    fn reference_fleet_matches_summary_stats() {
        let fleet = default_fleet(126);
        let powers: Vec<f64> = fleet.iter().map(|s| s.max_charge_power_kw).collect();
        let sum: f64 = powers.iter().sum();
        assert!((sum - 1296.9).abs() < 1e-9, "{sum}");
        assert_eq!(powers.iter().cloned().fold(0.0, f64::max), 17.3);
        assert_eq!(powers.iter().cloned().fold(f64::INFINITY, f64::min), 7.4);
        assert!(((sum / 126.0) - 10.3).abs() < 0.05);
        assert!(powers.iter().all(|&p| p <= HOUSEHOLD_POWER_CAP_KW));
    }

    #[test]
    fn fleet_file_clamps_22kw_chargers() {
        let text = r#"
            [[ev]]
            id = 0
            battery_kwh = 77.0
            max_power_kw = 22.0
            [[ev]]
            id = 1
            battery_kwh = 50.0
            max_power_kw = 11.0
            consumption_kwh_per_km = 0.18
        "#;
        let fleet = FleetFile::parse(text, "fleet.toml").unwrap().into_fleet().unwrap();
        assert_eq!(fleet.specs[0].max_charge_power_kw, HOUSEHOLD_POWER_CAP_KW);
        assert_eq!(fleet.warnings.len(), 1);
        assert!(fleet.warnings[0].contains("17.3"));
        assert_eq!(fleet.specs[1].consumption_kwh_per_km, 0.18);
    }

    #[test]
    fn fleet_file_round_trips() {
        let specs = default_fleet(5);
        let file = FleetFile::from_specs(&specs, Some(BehaviorModel::default()));
        let back = FleetFile::parse(&file.to_toml(), "x").unwrap();
        assert_eq!(back, file);
        let loaded = back.into_fleet().unwrap();
        assert_eq!(loaded.specs, specs);
    }

    #[test]
    fn behavior_validation() {
        assert!(BehaviorModel::default().validate().is_ok());
        let mut m = BehaviorModel::default();
        m.departure.max_h = 14.0;
        assert!(m.validate().is_err());
        let mut m = BehaviorModel::default();
        m.distance = DistanceTable(vec![(10.0, 0.5)]);
        assert!(m.validate().is_err());
    }
}
