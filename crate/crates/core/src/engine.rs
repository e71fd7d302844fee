//! Event-driven simulation of one feeder over the configured span.
//!
//! Within a minute events run in the order: baseload forecast delivery,
//! departures, arrivals (RTP plan, then aggregator), load recording. Loads
//! are recorded when a session closes; the aggregator never edits minutes
//! that have already passed, so the result equals a minute-by-minute tick.

use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregator::{Aggregator, CompensationRecord, FlexOffer, RescheduleOutcome};
use crate::config::{ScenarioConfig, Strategy};
use crate::error::{Error, Result};
use crate::fleet::{
    day_rng, default_fleet, sample_driving_day, BehaviorModel, DissatisfactionEvent, DrivingDay, EvAgent,
    EvId, EvSpec, FleetFile,
};
use crate::kpi::{DailyPeaks, KpiInput, KpiReport, RevenueBasis, SessionCharge};
use crate::market::{
    baseload_forecast_at, format_timestamp, load_baseload_csv, load_intensity_csv, load_spot_csv, BaseloadProfile,
    CarbonIntensitySeries, HourlyPrices, PriceSeries, SeriesStats,
};
use crate::rtp::{build_rtp_schedule, ChargingSchedule};
use crate::synth;

/// Where one input series came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub name: &'static str,
    /// `None` for generated data.
    pub path: Option<std::path::PathBuf>,
    pub stats: Option<SeriesStats>,
}

/// All inputs of a scenario, loaded and validated.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub spot: PriceSeries,
    pub baseload: BaseloadProfile,
    pub intensity: CarbonIntensitySeries,
    pub fleet: Vec<EvSpec>,
    pub behavior: BehaviorModel,
    pub warnings: Vec<String>,
    pub sources: Vec<DataSource>,
}

impl ScenarioData {
    pub fn load(cfg: &ScenarioConfig) -> Result<Self> {
        let start = cfg.start_time()?;
        let days = cfg.span_days as usize;
        let seed = cfg.synthetic_seed();
        let mut sources = Vec::new();

        let spot = match &cfg.data.spot {
            Some(p) => load_spot_csv(&cfg.resolve(p))?,
            None => synth::spot_prices(start, days, seed),
        };
        sources.push(DataSource {
            name: "spot",
            path: cfg.data.spot.as_ref().map(|p| cfg.resolve(p)),
            stats: Some(spot.0.stats()),
        });
        let baseload = match &cfg.data.baseload {
            Some(p) => load_baseload_csv(&cfg.resolve(p))?,
            None => synth::baseload(start, days, cfg.num_households, seed),
        };
        sources.push(DataSource {
            name: "baseload",
            path: cfg.data.baseload.as_ref().map(|p| cfg.resolve(p)),
            stats: Some(baseload.0.stats()),
        });
        let intensity = match &cfg.data.intensity {
            Some(p) => load_intensity_csv(&cfg.resolve(p))?,
            None => synth::carbon_intensity(start, days, seed),
        };
        sources.push(DataSource {
            name: "intensity",
            path: cfg.data.intensity.as_ref().map(|p| cfg.resolve(p)),
            stats: Some(intensity.0.stats()),
        });

        let n_ev = cfg.num_evs();
        let mut warnings = Vec::new();
        let (fleet, file_behavior) = match &cfg.data.fleet {
            Some(p) => {
                let loaded = FleetFile::load(&cfg.resolve(p))?.into_fleet()?;
                warnings.extend(loaded.warnings);
                let mut specs = loaded.specs;
                specs.sort_by_key(|s| s.id);
                if specs.len() < n_ev {
                    return Err(Error::Data(format!(
                        "{}: {} EVs defined, scenario needs {n_ev}",
                        p.display(),
                        specs.len()
                    )));
                }
                specs.truncate(n_ev);
                (specs, loaded.behavior)
            }
            None => (default_fleet(n_ev), None),
        };
        sources.push(DataSource {
            name: "fleet",
            path: cfg.data.fleet.as_ref().map(|p| cfg.resolve(p)),
            stats: None,
        });
        let behavior = cfg.behavior.clone().or(file_behavior).unwrap_or_default();
        behavior.validate()?;

        let data = Self { spot, baseload, intensity, fleet, behavior, warnings, sources };
        data.check_coverage(cfg)?;
        Ok(data)
    }

    /// Every hourly series must hold at least `span_days * 24` values.
    pub fn check_coverage(&self, cfg: &ScenarioConfig) -> Result<()> {
        let hours = cfg.span_days as usize * 24;
        for (name, len) in [
            ("spot", self.spot.0.len()),
            ("baseload", self.baseload.0.len()),
            ("intensity", self.intensity.0.len()),
        ] {
            if len < hours {
                let missing = hours - len;
                return Err(Error::Coverage {
                    series: name.into(),
                    detail: format!(
                        "{len} hours available, {hours} needed ({missing} hours = {:.2} days short)",
                        missing as f64 / 24.0
                    ),
                });
            }
        }
        Ok(())
    }
}

/// One plug-in session as it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub ev_id: EvId,
    pub household: usize,
    pub day: u32,
    pub plug_in: usize,
    /// Window end: the departure minute or the end of the horizon.
    pub departure: usize,
    pub departed: bool,
    pub energy_needed_kwh: f64,
    pub energy_scheduled_kwh: f64,
    pub energy_stored_kwh: f64,
    pub original_cost_dkk: f64,
    pub rescheduled: bool,
    pub compensation_dkk: f64,
    pub soc_at_departure: Option<f64>,
    pub charge: SessionCharge,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub origin: DateTime<Utc>,
    pub span_days: u32,
    pub capacity_kw: f64,
    pub num_households: usize,
    pub num_evs: usize,
    /// Aggregate transformer load per minute.
    pub load_kw: Vec<f64>,
    /// EV part of the load per minute.
    pub ev_load_kw: Vec<f64>,
    /// Recorded household baseload per hour.
    pub baseload_kw: Vec<f64>,
    pub charging_evs: Vec<u16>,
    pub daily_peaks: Vec<DailyPeaks>,
    pub sessions: Vec<SessionRecord>,
    pub compensation: Vec<CompensationRecord>,
    pub dissatisfaction: Vec<DissatisfactionEvent>,
    pub events: Vec<String>,
    pub warnings: Vec<String>,
    pub kpi: KpiReport,
}

impl SimulationResult {
    pub fn timestamp(&self, minute: usize) -> String {
        format_timestamp(self.origin + Duration::minutes(minute as i64))
    }

    pub fn max_concurrent_charging(&self) -> usize {
        self.charging_evs.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn compensation_total(&self) -> f64 {
        self.compensation.iter().map(|c| c.compensation).sum()
    }
}

#[derive(Debug, Clone)]
struct ActiveSession {
    day: u32,
    plug_in: usize,
    departure: usize,
    energy_needed: f64,
    /// Own copy in baseline mode; the aggregator holds it otherwise.
    schedule: Option<ChargingSchedule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Forecast,
    Depart,
    Arrive,
}

struct Recorder {
    ev_total: Vec<f64>,
    charging: Vec<u16>,
    /// Per EV, per hour: highest charging power.
    hourly_max: Vec<Vec<f64>>,
}

impl Recorder {
    fn record(&mut self, ev_index: usize, schedule: &ChargingSchedule) {
        let end = schedule.end().min(self.ev_total.len());
        for m in schedule.start()..end {
            let p = schedule.power_at(m);
            if p > 0.0 {
                self.ev_total[m] += p;
                self.charging[m] += 1;
                let h = &mut self.hourly_max[ev_index][m / 60];
                *h = h.max(p);
            }
        }
    }
}

fn session_charge(
    ev: EvId,
    schedule: &ChargingSchedule,
    prices: &HourlyPrices,
    intensity: &CarbonIntensitySeries,
) -> SessionCharge {
    let mut c = SessionCharge {
        ev_id: ev,
        energy_kwh: 0.0,
        cost_dkk: 0.0,
        spot_cost_dkk: 0.0,
        tariff_dkk: 0.0,
        emissions_kg: 0.0,
    };
    for run in schedule.runs() {
        for m in run.start..run.start + run.minutes {
            let e = run.power_kw / 60.0;
            let h = m / 60;
            let total = prices.hour_price(h);
            let tariff = prices.hour_tariff(h);
            c.energy_kwh += e;
            c.cost_dkk += e * total;
            c.tariff_dkk += e * tariff;
            c.spot_cost_dkk += e * (total - tariff);
            c.emissions_kg += e * intensity.0.values()[h.min(intensity.0.len() - 1)];
        }
    }
    c
}

fn log_outcome(events: &mut Vec<String>, stamp: &str, outcome: &RescheduleOutcome) {
    if let Some(shift) = &outcome.shift {
        for d in &shift.diffs {
            events.push(format!("{stamp} reschedule {d}"));
        }
        for (ev, kwh) in &shift.kept_off {
            events.push(format!("{stamp} kept-off ev={ev} kwh={kwh:.3}"));
        }
        if shift.repaired_kwh > 0.0 {
            events.push(format!("{stamp} repair kwh={:.3}", shift.repaired_kwh));
        }
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationResult> {
    let data = ScenarioData::load(cfg)?;
    run_with_data(cfg, &data)
}

pub fn run_with_data(cfg: &ScenarioConfig, data: &ScenarioData) -> Result<SimulationResult> {
    cfg.validate()?;
    data.check_coverage(cfg)?;
    let origin = cfg.start_time()?;
    let tariff = cfg.tariff_schedule();
    let offset = Duration::hours(tariff.utc_offset_hours as i64);
    let span = cfg.span_days;
    let horizon = cfg.minutes();
    let hours = horizon / 60;
    let prices = Arc::new(HourlyPrices::build(&data.spot, &tariff, origin, hours)?);
    let fleet = &data.fleet;
    let n_ev = fleet.len();
    let aggregated = cfg.strategy == Strategy::Aggregated;

    let mut households: Vec<usize> = (0..cfg.num_households).collect();
    households.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4805_E401));
    if n_ev > households.len() {
        return Err(Error::Config(format!(
            "{n_ev} EVs for {} households",
            households.len()
        )));
    }

    let local_day0 = (origin + offset).date_naive();
    let origin_naive = origin.naive_utc();
    let to_minute = |local: NaiveDateTime| -> i64 { (local - offset - origin_naive).num_minutes() };

    // day d departure and arrival, d = 0..=span (the extra day closes the last window)
    let plans: Vec<Vec<DrivingDay>> = fleet
        .iter()
        .map(|spec| {
            (0..=span)
                .map(|d| {
                    let date: NaiveDate = local_day0 + Duration::days(d as i64);
                    sample_driving_day(&data.behavior, &mut day_rng(cfg.seed, spec.id, d), date)
                })
                .collect()
        })
        .collect();

    let mut queue: Vec<(usize, EventKind, usize, u32)> = Vec::new();
    for k in 0..span {
        queue.push((k as usize * 1440, EventKind::Forecast, 0, k));
    }
    for (i, days) in plans.iter().enumerate() {
        for (d, day) in days.iter().enumerate().take(span as usize) {
            let dep = to_minute(day.departure).max(0) as usize;
            let arr = to_minute(day.arrival).max(0) as usize;
            if dep < horizon {
                queue.push((dep, EventKind::Depart, i, d as u32));
            }
            if arr < horizon {
                queue.push((arr, EventKind::Arrive, i, d as u32));
            }
        }
    }
    // fleet is ordered by id, so index order is id order
    queue.sort_by_key(|&(m, kind, i, _)| (m, kind, i));

    let mut agents: Vec<EvAgent> = fleet
        .iter()
        .map(|s| EvAgent::new(*s, data.behavior.soc_target))
        .collect();
    let mut active: Vec<Option<ActiveSession>> = vec![None; n_ev];
    let mut aggregator = Aggregator::new(cfg.transformer_capacity_kw, origin, Arc::clone(&prices));
    if aggregated {
        for s in fleet {
            aggregator.add_customer(s.id)?;
        }
    }
    let mut rec = Recorder {
        ev_total: vec![0.0; horizon],
        charging: vec![0; horizon],
        hourly_max: vec![vec![0.0; hours]; n_ev],
    };
    let mut sessions = Vec::new();
    let mut compensation = Vec::new();
    let mut dissatisfaction = Vec::new();
    let mut events = Vec::new();
    let mut warnings = data.warnings.clone();

    let stamp = |m: usize| format_timestamp(origin + Duration::minutes(m as i64));

    let mut close = |i: usize,
                     now: usize,
                     departed: bool,
                     agents: &mut Vec<EvAgent>,
                     active: &mut Vec<Option<ActiveSession>>,
                     aggregator: &mut Aggregator,
                     rec: &mut Recorder|
     -> Result<Option<SessionRecord>> {
        let Some(session) = active[i].take() else { return Ok(None) };
        let spec = fleet[i];
        let (schedule, original, comp) = if aggregated {
            let settled = aggregator.unplug_ev(spec.id)?;
            (settled.offer.schedule, settled.original, Some(settled.compensation))
        } else {
            let s = session.schedule.expect("baseline session keeps its schedule");
            (s.clone(), s, None)
        };
        if !schedule.respects_power(spec.max_charge_power_kw)
            || schedule.start() != session.plug_in
            || schedule.end() != session.departure
        {
            return Err(Error::Invariant(format!(
                "ev {}: final schedule outside its window or power limit",
                spec.id
            )));
        }
        rec.record(i, &schedule);
        let charge = session_charge(spec.id, &schedule, &prices, &data.intensity);
        let stored = agents[i].apply_charging(charge.energy_kwh)?;
        let rescheduled = schedule != original;
        let compensation_dkk = comp.map_or(0.0, |c| c.compensation);
        if rescheduled {
            if let Some(c) = comp {
                compensation.push(c);
            }
        }
        debug_assert!(now == session.departure);
        Ok(Some(SessionRecord {
            ev_id: spec.id,
            household: households[i],
            day: session.day,
            plug_in: session.plug_in,
            departure: session.departure,
            departed,
            energy_needed_kwh: session.energy_needed,
            energy_scheduled_kwh: charge.energy_kwh,
            energy_stored_kwh: stored,
            original_cost_dkk: original.cost(&prices),
            rescheduled,
            compensation_dkk,
            soc_at_departure: None,
            charge,
        }))
    };

    for &(now, kind, i, day) in &queue {
        match kind {
            EventKind::Forecast => {
                if !aggregated {
                    continue;
                }
                let k = day as usize;
                let days: Vec<usize> = if k == 0 { vec![0, 1] } else { vec![k + 1] };
                for d in days.into_iter().filter(|&d| d < span as usize) {
                    let forecast = baseload_forecast_at(&data.baseload, d * 24).ok_or_else(|| Error::Coverage {
                        series: "baseload".into(),
                        detail: format!("forecast for day {d} not covered"),
                    })?;
                    aggregator.add_predicted_base_load(d as u32, &forecast)?;
                    events.push(format!("{} forecast day={d}", stamp(now)));
                }
                let outcome = aggregator.rebalance(now);
                log_outcome(&mut events, &stamp(now), &outcome);
            }
            EventKind::Depart => {
                let mut record = close(i, now, true, &mut agents, &mut active, &mut aggregator, &mut rec)?;
                let agent = &mut agents[i];
                agent.today = Some(plans[i][day as usize]);
                let event = agent.depart(day)?;
                if let Some(r) = record.as_mut() {
                    r.soc_at_departure = Some(agent.soc_fraction());
                }
                events.push(format!(
                    "{} depart ev={} soc={:.3}",
                    stamp(now),
                    agent.spec.id,
                    agent.soc_fraction()
                ));
                if let Some(e) = event {
                    events.push(format!(
                        "{} dissatisfied ev={} soc={:.4}",
                        stamp(now),
                        e.ev_id,
                        e.soc_at_departure
                    ));
                    dissatisfaction.push(e);
                }
                sessions.extend(record);
            }
            EventKind::Arrive => {
                let agent = &mut agents[i];
                agent.arrive()?;
                let need = agent.energy_needed();
                let next_dep = to_minute(plans[i][day as usize + 1].departure).max(0) as usize;
                let end = next_dep.min(horizon);
                events.push(format!(
                    "{} arrive ev={} soc={:.3} need_kwh={need:.3}",
                    stamp(now),
                    agent.spec.id,
                    agent.soc_fraction()
                ));
                if end <= now {
                    continue;
                }
                let power = agent.spec.max_charge_power_kw;
                let schedule = build_rtp_schedule(now, end, need, power, &prices)?;
                if aggregated {
                    let offer = FlexOffer {
                        ev_id: agent.spec.id,
                        plug_in: now,
                        departure: end,
                        max_power: power,
                        required_energy: need,
                        schedule,
                    };
                    let outcome = aggregator.add_flex_offer(offer, now)?;
                    log_outcome(&mut events, &stamp(now), &outcome);
                    active[i] = Some(ActiveSession { day, plug_in: now, departure: end, energy_needed: need, schedule: None });
                } else {
                    active[i] = Some(ActiveSession {
                        day,
                        plug_in: now,
                        departure: end,
                        energy_needed: need,
                        schedule: Some(schedule),
                    });
                }
            }
        }
    }
    for i in 0..n_ev {
        if active[i].is_some() {
            let r = close(i, horizon, false, &mut agents, &mut active, &mut aggregator, &mut rec)?;
            sessions.extend(r);
        }
    }

    let baseload_kw: Vec<f64> = data.baseload.0.values()[..hours].to_vec();
    let load_kw: Vec<f64> = (0..horizon)
        .map(|m| baseload_kw[m / 60] + rec.ev_total[m])
        .collect();

    let n_hh = cfg.num_households;
    let mut ev_of_household: Vec<Option<usize>> = vec![None; n_hh];
    for (i, &h) in households.iter().take(n_ev).enumerate() {
        ev_of_household[h] = Some(i);
    }
    let daily_peaks: Vec<DailyPeaks> = (0..span as usize)
        .map(|d| {
            let minutes = d * 1440..(d + 1) * 1440;
            let aggregate_kw = load_kw[minutes].iter().copied().fold(0.0, f64::max);
            let household_kw = ev_of_household
                .iter()
                .map(|ev| {
                    (d * 24..(d + 1) * 24)
                        .map(|h| baseload_kw[h] / n_hh as f64 + ev.map_or(0.0, |i| rec.hourly_max[i][h]))
                        .fold(0.0, f64::max)
                })
                .collect();
            DailyPeaks { aggregate_kw, household_kw }
        })
        .collect();

    let charges: Vec<SessionCharge> = sessions.iter().map(|s: &SessionRecord| s.charge).collect();
    let compensation_total: f64 = compensation.iter().map(|c: &CompensationRecord| c.compensation).sum();
    let baseload_tariff: f64 = baseload_kw
        .iter()
        .enumerate()
        .map(|(h, b)| b * prices.hour_tariff(h))
        .sum();
    let basis = if cfg.kpi.revenue_includes_baseload {
        RevenueBasis::ChargingAndBaseload
    } else {
        RevenueBasis::ChargingOnly
    };
    let kpi = KpiReport::compute(
        &KpiInput {
            load_kw: &load_kw,
            capacity_kw: cfg.transformer_capacity_kw,
            daily_peaks: &daily_peaks,
            sessions: &charges,
            dissatisfaction: &dissatisfaction,
            compensation_total_dkk: compensation_total,
            baseload_tariff_dkk: baseload_tariff,
        },
        basis,
    )?;
    if aggregated && kpi.overload_hours > 0.0 {
        warnings.push(format!(
            "aggregated run still has {:.3} h of overload (baseload alone may exceed capacity)",
            kpi.overload_hours
        ));
    }

    Ok(SimulationResult {
        strategy: cfg.strategy,
        seed: cfg.seed,
        origin,
        span_days: span,
        capacity_kw: cfg.transformer_capacity_kw,
        num_households: n_hh,
        num_evs: n_ev,
        load_kw,
        ev_load_kw: rec.ev_total,
        baseload_kw,
        charging_evs: rec.charging,
        daily_peaks,
        sessions,
        compensation,
        dissatisfaction,
        events,
        warnings,
        kpi,
    })
}

/// KPI reports of two runs and the per-column change from `a` to `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: KpiReport,
    pub b: KpiReport,
    pub difference_pct: Vec<Option<f64>>,
}

pub fn compare_runs(a: &SimulationResult, b: &SimulationResult) -> Result<Comparison> {
    if a.load_kw.len() != b.load_kw.len() || a.origin != b.origin {
        return Err(Error::InvalidInput(format!(
            "runs cover different spans ({} vs {} minutes)",
            a.load_kw.len(),
            b.load_kw.len()
        )));
    }
    if a.num_evs != b.num_evs {
        return Err(Error::InvalidInput(format!(
            "runs use different fleets ({} vs {} EVs)",
            a.num_evs, b.num_evs
        )));
    }
    Ok(compare_reports(&a.kpi, &b.kpi))
}

pub fn compare_reports(a: &KpiReport, b: &KpiReport) -> Comparison {
    Comparison {
        a: a.clone(),
        b: b.clone(),
        difference_pct: crate::kpi::compare_reports(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategy: Strategy, evs: f64) -> ScenarioConfig {
        ScenarioConfig {
            span_days: 7,
            num_households: 20,
            ev_adoption: evs,
            transformer_capacity_kw: 60.0,
            strategy,
            seed: 3,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn null_fleet_is_pure_baseload() {
        let r = run_scenario(&small(Strategy::Aggregated, 0.0)).unwrap();
        assert!(r.sessions.is_empty());
        for (m, l) in r.load_kw.iter().enumerate() {
            assert_eq!(*l, r.baseload_kw[m / 60]);
        }
    }

    #[test]
    fn load_is_baseload_plus_sessions() {
        for strategy in [Strategy::BaselineRtp, Strategy::Aggregated] {
            let r = run_scenario(&small(strategy, 1.0)).unwrap();
            let total: f64 = r.sessions.iter().map(|s| s.energy_scheduled_kwh).sum();
            let from_load: f64 = r.ev_load_kw.iter().sum::<f64>() / 60.0;
            assert!((total - from_load).abs() < 1e-6, "{total} vs {from_load}");
            for (m, l) in r.load_kw.iter().enumerate() {
                assert!((l - r.baseload_kw[m / 60] - r.ev_load_kw[m]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn aggregated_small_feeder_has_no_overload() {
        let r = run_scenario(&small(Strategy::Aggregated, 1.0)).unwrap();
        assert_eq!(r.kpi.overload_hours, 0.0, "{:?}", r.kpi);
        assert_eq!(r.kpi.dissatisfaction_count, 0);
        let b = run_scenario(&small(Strategy::BaselineRtp, 1.0)).unwrap();
        assert!(b.kpi.overload_hours > 0.0);
    }

    #[test]
    fn mismatched_spans_do_not_compare() {
        let a = run_scenario(&small(Strategy::BaselineRtp, 0.5)).unwrap();
        let mut cfg = small(Strategy::BaselineRtp, 0.5);
        cfg.span_days = 6;
        let b = run_scenario(&cfg).unwrap();
        assert!(compare_runs(&a, &b).is_err());
        let same = compare_runs(&a, &a).unwrap();
        assert!(same.difference_pct.iter().all(|p| *p == Some(0.0)));
    }
}
