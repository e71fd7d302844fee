//! Grid and user KPIs computed from simulation outputs.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::fleet::{DissatisfactionEvent, EvId};

/// Σ C(t) / (max P(t) · N_h).
///
/// `consumption_kwh` is hourly energy, `load_kw` the per-minute load used
/// for the peak.
pub fn load_factor(consumption_kwh: &[f64], load_kw: &[f64], n_hours: usize) -> Result<f64> {
    if n_hours == 0 {
        return Err(Error::InvalidInput("load factor needs at least one hour".into()));
    }
    let peak = load_kw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidInput("load factor undefined for zero peak load".into()));
    }
    Ok(consumption_kwh.iter().sum::<f64>() / (peak * n_hours as f64))
}

/// Hourly energy from a per-minute kW series (trailing partial hour included).
pub fn hourly_consumption(load_kw: &[f64]) -> Vec<f64> {
    load_kw
        .chunks(60)
        .map(|h| h.iter().sum::<f64>() / 60.0)
        .collect()
}

/// max P(t) / Σ_i max P_i(t) over one window.
pub fn coincidence_factor(aggregate_kw: &[f64], individual_kw: &[Vec<f64>]) -> Result<f64> {
    let peak = |s: &[f64]| s.iter().copied().fold(0.0, f64::max);
    let peaks: Vec<f64> = individual_kw.iter().map(|s| peak(s)).collect();
    coincidence_from_peaks(peak(aggregate_kw), &peaks)
}

/// Coincidence factor from precomputed peaks.
pub fn coincidence_from_peaks(aggregate_peak_kw: f64, individual_peaks_kw: &[f64]) -> Result<f64> {
    let denom: f64 = individual_peaks_kw.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::InvalidInput(
            "coincidence factor undefined: all individual peaks are zero".into(),
        ));
    }
    Ok(aggregate_peak_kw / denom)
}

/// Peaks of one calendar day.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPeaks {
    pub aggregate_kw: f64,
    pub household_kw: Vec<f64>,
}

/// Mean of the per-day coincidence factors. Days without any consumer
/// load are skipped.
pub fn daily_average_coincidence(days: &[DailyPeaks]) -> Result<f64> {
    let cfs: Vec<f64> = days
        .iter()
        .filter_map(|d| coincidence_from_peaks(d.aggregate_kw, &d.household_kw).ok())
        .collect();
    if cfs.is_empty() {
        return Err(Error::InvalidInput("no day with nonzero consumer peaks".into()));
    }
    Ok(cfs.iter().sum::<f64>() / cfs.len() as f64)
}

pub fn dissatisfaction_total(events: &[DissatisfactionEvent]) -> usize {
    events.len()
}

/// Transformer loading bands above nameplate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OverloadBand {
    /// (100 %, 150 %]
    NormalCyclic,
    /// (150 %, 180 %]
    LongTimeEmergency,
    /// (180 %, 200 %]
    ShortTimeEmergency,
    /// above 200 %
    Critical,
}

impl OverloadBand {
    pub const ALL: [OverloadBand; 4] = [
        OverloadBand::NormalCyclic,
        OverloadBand::LongTimeEmergency,
        OverloadBand::ShortTimeEmergency,
        OverloadBand::Critical,
    ];

    /// Band of a load, `None` at or below capacity.
    pub fn classify(load_kw: f64, capacity_kw: f64) -> Option<Self> {
        let ratio = load_kw / capacity_kw;
        if load_kw <= capacity_kw {
            None
        } else if ratio <= 1.5 {
            Some(Self::NormalCyclic)
        } else if ratio <= 1.8 {
            Some(Self::LongTimeEmergency)
        } else if ratio <= 2.0 {
            Some(Self::ShortTimeEmergency)
        } else {
            Some(Self::Critical)
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::NormalCyclic => "100-150%",
            Self::LongTimeEmergency => "150-180%",
            Self::ShortTimeEmergency => "180-200%",
            Self::Critical => ">200%",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OverloadStats {
    pub minutes: usize,
    /// Minutes per band, in [`OverloadBand::ALL`] order.
    pub histogram: [usize; 4],
    pub max_peak_kw: f64,
}

impl OverloadStats {
    pub fn hours(&self) -> f64 {
        self.minutes as f64 / 60.0
    }
}

pub fn overload_stats(load_kw: &[f64], capacity_kw: f64) -> Result<OverloadStats> {
    if !(capacity_kw > 0.0) {
        return Err(Error::InvalidInput("capacity must be > 0".into()));
    }
    let mut stats = OverloadStats::default();
    for &l in load_kw {
        stats.max_peak_kw = stats.max_peak_kw.max(l);
        if let Some(band) = OverloadBand::classify(l, capacity_kw) {
            stats.minutes += 1;
            stats.histogram[band as usize] += 1;
        }
    }
    Ok(stats)
}

/// Money, energy and emissions of one charging session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionCharge {
    pub ev_id: EvId,
    pub energy_kwh: f64,
    pub cost_dkk: f64,
    pub spot_cost_dkk: f64,
    pub tariff_dkk: f64,
    pub emissions_kg: f64,
}

fn per_consumer_mean(sessions: &[SessionCharge], numerator: impl Fn(&SessionCharge) -> f64) -> Result<f64> {
    let mut by_ev: BTreeMap<EvId, (f64, f64)> = BTreeMap::new();
    for s in sessions {
        let e = by_ev.entry(s.ev_id).or_default();
        e.0 += numerator(s);
        e.1 += s.energy_kwh;
    }
    let ratios: Vec<f64> = by_ev
        .values()
        .filter(|(_, energy)| *energy > 0.0)
        .map(|(num, energy)| num / energy)
        .collect();
    if ratios.is_empty() {
        return Err(Error::InvalidInput("no charged energy".into()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Per-consumer cost per kWh, averaged over consumers.
pub fn avg_charging_cost(sessions: &[SessionCharge]) -> Result<f64> {
    per_consumer_mean(sessions, |s| s.cost_dkk)
}

/// Per-consumer energy-weighted intensity, averaged over consumers.
pub fn avg_emissions(sessions: &[SessionCharge]) -> Result<f64> {
    per_consumer_mean(sessions, |s| s.emissions_kg)
}

pub fn dso_tariff_revenue(sessions: &[SessionCharge]) -> f64 {
    sessions.iter().map(|s| s.tariff_dkk).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payback {
    Years(f64),
    NotApplicable,
}

impl fmt::Display for Payback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payback::Years(y) => write!(f, "{y:.2}"),
            Payback::NotApplicable => f.write_str("n/a"),
        }
    }
}

pub fn payback_years(upgrade_cost_dkk: f64, annual_compensation_dkk: f64) -> Payback {
    if annual_compensation_dkk > 0.0 {
        Payback::Years(upgrade_cost_dkk / annual_compensation_dkk)
    } else {
        Payback::NotApplicable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RevenueBasis {
    #[default]
    ChargingOnly,
    ChargingAndBaseload,
}

/// Everything the KPI report needs from a run.
#[derive(Debug, Clone, Copy)]
pub struct KpiInput<'a> {
    pub load_kw: &'a [f64],
    pub capacity_kw: f64,
    pub daily_peaks: &'a [DailyPeaks],
    pub sessions: &'a [SessionCharge],
    pub dissatisfaction: &'a [DissatisfactionEvent],
    pub compensation_total_dkk: f64,
    /// Tariff paid on household baseload, used with [`RevenueBasis::ChargingAndBaseload`].
    pub baseload_tariff_dkk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpiReport {
    pub overload_hours: f64,
    pub load_factor: f64,
    pub daily_avg_coincidence_factor: f64,
    pub avg_charging_cost: f64,
    pub avg_emissions: f64,
    pub dso_tariff_revenue: f64,
    pub dissatisfaction_count: usize,
    pub compensation_total: f64,
    pub max_peak: f64,
    pub overload_histogram: [usize; 4],
    pub ev_energy_kwh: f64,
    pub fleet_charging_cost: f64,
}

impl KpiReport {
    pub fn compute(input: &KpiInput<'_>, basis: RevenueBasis) -> Result<Self> {
        let n_hours = input.load_kw.len().div_ceil(60);
        let lf = load_factor(&hourly_consumption(input.load_kw), input.load_kw, n_hours)?;
        let cf = daily_average_coincidence(input.daily_peaks)?;
        let stats = overload_stats(input.load_kw, input.capacity_kw)?;
        let (cost, emissions) = if input.sessions.iter().any(|s| s.energy_kwh > 0.0) {
            (avg_charging_cost(input.sessions)?, avg_emissions(input.sessions)?)
        } else {
            (0.0, 0.0)
        };
        let mut revenue = dso_tariff_revenue(input.sessions);
        if basis == RevenueBasis::ChargingAndBaseload {
            revenue += input.baseload_tariff_dkk;
        }
        // `+ 0.0` turns an empty sum's -0.0 into 0.0
        Ok(Self {
            overload_hours: stats.hours(),
            load_factor: lf,
            daily_avg_coincidence_factor: cf,
            avg_charging_cost: cost,
            avg_emissions: emissions,
            dso_tariff_revenue: revenue + 0.0,
            dissatisfaction_count: dissatisfaction_total(input.dissatisfaction),
            compensation_total: input.compensation_total_dkk + 0.0,
            max_peak: stats.max_peak_kw,
            overload_histogram: stats.histogram,
            ev_energy_kwh: input.sessions.iter().map(|s| s.energy_kwh).sum::<f64>() + 0.0,
            fleet_charging_cost: input.sessions.iter().map(|s| s.cost_dkk).sum::<f64>() + 0.0,
        })
    }

    pub const CSV_HEADER: [&'static str; 16] = [
        "overload_hours",
        "load_factor",
        "daily_avg_coincidence_factor",
        "avg_charging_cost_dkk_per_kwh",
        "avg_emissions_kg_per_kwh",
        "dso_tariff_revenue_dkk",
        "dissatisfaction",
        "compensation_total_dkk",
        "max_peak_kw",
        "overload_min_100_150",
        "overload_min_150_180",
        "overload_min_180_200",
        "overload_min_above_200",
        "ev_energy_kwh",
        "fleet_charging_cost_dkk",
        "overload_minutes",
    ];

    /// Numeric values in [`Self::CSV_HEADER`] order.
    pub fn values(&self) -> [f64; 16] {
        let h = self.overload_histogram;
        [
            self.overload_hours,
            self.load_factor,
            self.daily_avg_coincidence_factor,
            self.avg_charging_cost,
            self.avg_emissions,
            self.dso_tariff_revenue,
            self.dissatisfaction_count as f64,
            self.compensation_total,
            self.max_peak,
            h[0] as f64,
            h[1] as f64,
            h[2] as f64,
            h[3] as f64,
            self.ev_energy_kwh,
            self.fleet_charging_cost,
            h.iter().sum::<usize>() as f64,
        ]
    }

    pub fn csv_row(&self) -> Vec<String> {
        let h = self.overload_histogram;
        vec![
            format!("{:.3}", self.overload_hours),
            format!("{:.6}", self.load_factor),
            format!("{:.6}", self.daily_avg_coincidence_factor),
            format!("{:.4}", self.avg_charging_cost),
            format!("{:.4}", self.avg_emissions),
            format!("{:.2}", self.dso_tariff_revenue),
            self.dissatisfaction_count.to_string(),
            format!("{:.2}", self.compensation_total),
            format!("{:.3}", self.max_peak),
            h[0].to_string(),
            h[1].to_string(),
            h[2].to_string(),
            h[3].to_string(),
            format!("{:.3}", self.ev_energy_kwh),
            format!("{:.2}", self.fleet_charging_cost),
            h.iter().sum::<usize>().to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER.join(","), self.csv_row().join(","))
    }

    /// Parse a file written by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != Self::CSV_HEADER.join(",") {
            return Err(Error::Data("kpi.csv: unexpected header".into()));
        }
        let row = lines.next().ok_or_else(|| Error::Data("kpi.csv: missing data row".into()))?;
        let v: Vec<f64> = row
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                source_name: "kpi.csv".into(),
                row: 1,
                message: e.to_string(),
            })?;
        if v.len() != Self::CSV_HEADER.len() {
            return Err(Error::Data(format!("kpi.csv: expected {} columns", Self::CSV_HEADER.len())));
        }
        Ok(Self {
            overload_hours: v[0],
            load_factor: v[1],
            daily_avg_coincidence_factor: v[2],
            avg_charging_cost: v[3],
            avg_emissions: v[4],
            dso_tariff_revenue: v[5],
            dissatisfaction_count: v[6] as usize,
            compensation_total: v[7],
            max_peak: v[8],
            overload_histogram: [v[9] as usize, v[10] as usize, v[11] as usize, v[12] as usize],
            ev_energy_kwh: v[13],
            fleet_charging_cost: v[14],
        })
    }
}

impl fmt::Display for KpiReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Total time of overload [h]        {:>12.3}", self.overload_hours)?;
        writeln!(f, "Load factor                       {:>12.4}", self.load_factor)?;
        writeln!(f, "Daily average coincidence factor  {:>12.4}", self.daily_avg_coincidence_factor)?;
        writeln!(f, "Average charging cost [DKK/kWh]   {:>12.4}", self.avg_charging_cost)?;
        writeln!(f, "Average emissions [kg/kWh]        {:>12.4}", self.avg_emissions)?;
        writeln!(f, "DSO tariff revenue [DKK]          {:>12.2}", self.dso_tariff_revenue)?;
        writeln!(f, "EV users' dissatisfaction         {:>12}", self.dissatisfaction_count)?;
        writeln!(f, "Compensation total [DKK]          {:>12.2}", self.compensation_total)?;
        writeln!(f, "Max peak [kW]                     {:>12.3}", self.max_peak)?;
        for (band, minutes) in OverloadBand::ALL.iter().zip(self.overload_histogram) {
            writeln!(f, "  overload {:<9} [min]          {:>12}", band.label(), minutes)?;
        }
        writeln!(f, "EV energy [kWh]                   {:>12.3}", self.ev_energy_kwh)?;
        write!(f, "Fleet charging cost [DKK]         {:>12.2}", self.fleet_charging_cost)
    }
}

/// Relative change from `a` to `b` in percent; `None` when `a` is zero and `b` is not.
pub fn percentage_difference(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 {
        (b == 0.0).then_some(0.0)
    } else {
        Some((b - a) / a.abs() * 100.0)
    }
}

pub fn format_percentage(p: Option<f64>) -> String {
    match p {
        Some(0.0) => "0%".to_string(),
        Some(v) => format!("{v:.1}%"),
        None => "n/a".to_string(),
    }
}

/// Per-column percentage differences of `b` relative to `a`.
pub fn compare_reports(a: &KpiReport, b: &KpiReport) -> Vec<Option<f64>> {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, y)| percentage_difference(x, y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(ev: u32, energy: f64, cost: f64) -> SessionCharge {
        SessionCharge {
            ev_id: EvId(ev),
            energy_kwh: energy,
            cost_dkk: cost,
            spot_cost_dkk: cost,
            tariff_dkk: 0.0,
            emissions_kg: 0.0,
        }
    }

    #[test]
    fn flat_profile_has_unit_load_factor() {
        let load = vec![100.0; 24 * 60];
        assert_eq!(load_factor(&hourly_consumption(&load), &load, 24).unwrap(), 1.0);
    }

    #[test]
    fn single_hour_load_factor() {
        assert_eq!(load_factor(&[100.0, 0.0, 0.0, 0.0], &[100.0], 4).unwrap(), 0.25);
        assert!(load_factor(&[0.0; 4], &[0.0; 240], 4).is_err());
    }

    #[test]
    fn coincidence_cases() {
        let a = vec![10.0, 10.0, 0.0];
        let b = vec![0.0, 5.0, 5.0];
        let agg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(coincidence_factor(&agg, &[a.clone(), vec![0.0, 10.0, 5.0]]).unwrap(), 15.0 / 20.0);
        let x = vec![10.0, 0.0];
        let y = vec![0.0, 10.0];
        assert_eq!(coincidence_factor(&[10.0, 10.0], &[x, y]).unwrap(), 0.5);
        assert_eq!(coincidence_factor(&[6.0, 2.0], &[vec![4.0, 1.0], vec![2.0, 1.0]]).unwrap(), 1.0);
        assert!(coincidence_factor(&[0.0], &[vec![0.0]]).is_err());
    }

    #[test]
    fn bands() {
        assert_eq!(OverloadBand::classify(400.0, 400.0), None);
        assert_eq!(OverloadBand::classify(600.0, 400.0), Some(OverloadBand::NormalCyclic));
        assert_eq!(OverloadBand::classify(720.0, 400.0), Some(OverloadBand::LongTimeEmergency));
        assert_eq!(OverloadBand::classify(800.0, 400.0), Some(OverloadBand::ShortTimeEmergency));
        assert_eq!(OverloadBand::classify(850.0, 400.0), Some(OverloadBand::Critical));
        let s = overload_stats(&[400.0; 30], 400.0).unwrap();
        assert_eq!(s.minutes, 0);
        let s = overload_stats(&[300.0, 401.0, 650.0, 850.0, 850.0], 400.0).unwrap();
        assert_eq!(s.histogram, [1, 1, 0, 2]);
        assert_eq!(s.minutes, 4);
        assert_eq!(s.max_peak_kw, 850.0);
    }

    #[test]
    fn consumer_means_are_unweighted() {
        let s = [session(0, 10.0, 4.0), session(1, 100.0, 60.0)];
        assert!((avg_charging_cost(&s).unwrap() - 0.5).abs() < 1e-12);
        assert!(avg_charging_cost(&[]).is_err());
        let mut e = [session(0, 5.0, 0.0), session(0, 5.0, 0.0)];
        e[0].emissions_kg = 0.5;
        e[1].emissions_kg = 1.5;
        assert!((avg_emissions(&e).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn revenue_sums_tariff_component() {
        let mut s = session(0, 100.0, 0.0);
        s.tariff_dkk = 100.0 * 0.8131;
        assert!((dso_tariff_revenue(&[s]) - 81.31).abs() < 1e-9);
        assert_eq!(dso_tariff_revenue(&[]), 0.0);
    }

    #[test]
    fn payback() {
        assert_eq!(payback_years(5.0, 5.0), Payback::Years(1.0));
        assert_eq!(payback_years(115_800.0, 0.0), Payback::NotApplicable);
        assert_eq!(payback_years(115_800.0, 6020.0).to_string(), "19.24");
    }

    #[test]
    fn percentages() {
        assert_eq!(percentage_difference(587.0, 0.0), Some(-100.0));
        assert_eq!(percentage_difference(0.0, 0.0), Some(0.0));
        assert_eq!(percentage_difference(0.0, 1.0), None);
        assert_eq!(format_percentage(Some(-100.0)), "-100.0%");
        assert_eq!(format_percentage(Some(0.0)), "0%");
    }

    #[test]
    fn csv_round_trip() {
        let r = KpiReport {
            overload_hours: 587.5,
            load_factor: 0.089,
            daily_avg_coincidence_factor: 0.826,
            avg_charging_cost: 0.48,
            avg_emissions: 0.2175,
            dso_tariff_revenue: 179_500.0,
            dissatisfaction_count: 0,
            compensation_total: 6019.6,
            max_peak: 1342.0,
            overload_histogram: [1, 2, 3, 4],
            ev_energy_kwh: 1000.0,
            fleet_charging_cost: 480.0,
        };
        let back = KpiReport::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!(compare_reports(&r, &r).iter().all(|p| *p == Some(0.0)));
    }
}
