//! The DSO-operated EV aggregator.
//!
//! The aggregator keeps a portfolio of active [`FlexOffer`]s on top of a
//! perfect hourly baseload forecast. Whenever the combined forecast exceeds
//! the transformer capacity it walks the overload periods, and inside each
//! period moves EVs out in order of decreasing laxity:
//!
//! 1. the EV's charging inside the period is set to zero;
//! 2. the removed energy is re-placed in free minutes of the same hour,
//!    searching backwards from the end of the hour;
//! 3. anything left goes to the next cheapest hours before departure, again
//!    filled from the end of each hour;
//! 4. energy that fits nowhere is kept off.
//!
//! Periods are processed until the overload is gone or no EV can be moved.
//! Kept-off energy is then retried: first in any free minute, then by moving
//! one minute of another EV out of the way (a bounded ejection chain).
//! Users are compensated for any cost increase relative to the plan they
//! submitted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use thiserror::Error;

use crate::fleet::EvId;
use crate::market::HourlyPrices;
use crate::rtp::{fill_minutes, quantize_power, quantize_power_up, ChargingSchedule};

const ENERGY_EPS: f64 = 1e-9;
/// Node budget for one ejection-chain repair call.
const REPAIR_BUDGET: usize = 200_000;
const REPAIR_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregatorError {
    #[error("ev {0} is not a registered customer")]
    UnknownCustomer(EvId),
    #[error("ev {0} is already registered")]
    DuplicateCustomer(EvId),
    #[error("ev {0} has no active flex offer")]
    NoActiveOffer(EvId),
    #[error("ev {0} already has an active flex offer")]
    OverlappingOffer(EvId),
    #[error("baseload forecast for day {0} already added")]
    DuplicateDay(u32),
    #[error("baseload forecast gap: expected day {expected}, got {got}")]
    DayGap { expected: u32, got: u32 },
    #[error("invalid flex offer for ev {ev}: {reason}")]
    InvalidOffer { ev: EvId, reason: String },
    #[error("schedules belong to different session windows")]
    SessionMismatch,
}

/// An EV's plug-in session as submitted to the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexOffer {
    pub ev_id: EvId,
    pub plug_in: usize,
    /// Planned departure (exclusive end minute).
    pub departure: usize,
    pub max_power: f64,
    pub required_energy: f64,
    pub schedule: ChargingSchedule,
}

impl FlexOffer {
    pub fn validate(&self) -> Result<(), AggregatorError> {
        let bad = |reason: String| AggregatorError::InvalidOffer { ev: self.ev_id, reason };
        if self.departure <= self.plug_in {
            return Err(bad("departure not after plug-in".into()));
        }
        if self.schedule.start() != self.plug_in || self.schedule.end() != self.departure {
            return Err(bad("schedule window differs from the session window".into()));
        }
        if !(self.max_power > 0.0) {
            return Err(bad("max_power must be > 0".into()));
        }
        if !self.schedule.respects_power(self.max_power) {
            return Err(bad("schedule exceeds max_power".into()));
        }
        if !(self.required_energy >= 0.0) {
            return Err(bad("required_energy must be >= 0".into()));
        }
        Ok(())
    }

    /// Energy still owed at `now`: required minus what was delivered before `now`.
    pub fn remaining_energy(&self, now: usize) -> f64 {
        (self.required_energy - self.schedule.energy_between(self.plug_in, now)).max(0.0)
    }

    /// Planned shortfall against the required energy.
    pub fn deficit(&self) -> f64 {
        (self.required_energy - self.schedule.delivered_energy()).max(0.0)
    }
}

/// Scheduling slack in minutes: time to departure minus the time still
/// needed at full power, floored at zero.
pub fn laxity(offer: &FlexOffer, now: usize) -> f64 {
    let to_departure = offer.departure.saturating_sub(now) as f64;
    let charge_time = offer.remaining_energy(now) / offer.max_power * 60.0;
    (to_departure - charge_time).max(0.0)
}

/// Per-minute expected transformer load from `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadForecast {
    pub start: usize,
    pub baseload: Vec<f64>,
    pub ev: Vec<f64>,
}

impl LoadForecast {
    pub fn len(&self) -> usize {
        self.baseload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseload.is_empty()
    }

    pub fn value(&self, i: usize) -> f64 {
        self.baseload[i] + self.ev[i]
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

/// Maximal run of minutes `[start, end)` with load above capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverloadPeriod {
    pub start: usize,
    pub end: usize,
    pub peak_kw: f64,
    pub excess_kwh: f64,
}

impl OverloadPeriod {
    pub fn minutes(&self) -> Range<usize> {
        self.start..self.end
    }
}

pub fn detect_overloads(forecast: &LoadForecast, c_max: f64) -> Vec<OverloadPeriod> {
    let mut out = Vec::new();
    let mut current: Option<OverloadPeriod> = None;
    for i in 0..forecast.len() {
        let l = forecast.value(i);
        let minute = forecast.start + i;
        if l > c_max {
            let p = current.get_or_insert(OverloadPeriod {
                start: minute,
                end: minute,
                peak_kw: l,
                excess_kwh: 0.0,
            });
            p.end = minute + 1;
            p.peak_kw = p.peak_kw.max(l);
            p.excess_kwh += (l - c_max) / 60.0;
        } else if let Some(p) = current.take() {
            out.push(p);
        }
    }
    out.extend(current);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationRecord {
    pub ev_id: EvId,
    pub session_date: NaiveDate,
    pub original_cost: f64,
    pub shifted_cost: f64,
    pub compensation: f64,
}

/// Pay back any cost increase of `shifted` over `original`; savings are kept by the user.
pub fn compensation_for(
    ev_id: EvId,
    session_date: NaiveDate,
    original: &ChargingSchedule,
    shifted: &ChargingSchedule,
    prices: &HourlyPrices,
) -> Result<CompensationRecord, AggregatorError> {
    if original.start() != shifted.start() || original.end() != shifted.end() {
        return Err(AggregatorError::SessionMismatch);
    }
    let original_cost = original.cost(prices);
    let shifted_cost = shifted.cost(prices);
    Ok(CompensationRecord {
        ev_id,
        session_date,
        original_cost,
        shifted_cost,
        compensation: (shifted_cost - original_cost).max(0.0),
    })
}

/// Hour-constant baseload forecast assembled from daily deliveries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseloadBook {
    first_day: Option<u32>,
    hourly: Vec<f64>,
}

impl BaseloadBook {
    pub fn add_day(&mut self, day: u32, forecast: &[f64; 24]) -> Result<(), AggregatorError> {
        match self.first_day {
            None => self.first_day = Some(day),
            Some(first) => {
                let next = first + (self.hourly.len() / 24) as u32;
                if day < next {
                    return Err(AggregatorError::DuplicateDay(day));
                }
                if day > next {
                    return Err(AggregatorError::DayGap { expected: next, got: day });
                }
            }
        }
        self.hourly.extend_from_slice(forecast);
        Ok(())
    }

    /// Forecast kW at `minute`; zero outside the delivered days.
    pub fn kw_at(&self, minute: usize) -> f64 {
        let Some(first) = self.first_day else { return 0.0 };
        let hour = minute / 60;
        hour.checked_sub(first as usize * 24)
            .and_then(|i| self.hourly.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn days(&self) -> usize {
        self.hourly.len() / 24
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioEntry {
    pub offer: FlexOffer,
    /// The schedule as submitted, used for compensation.
    pub original: ChargingSchedule,
}

/// Active offers plus the per-minute sum of their schedules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Portfolio {
    entries: BTreeMap<EvId, PortfolioEntry>,
    ev_load: Vec<f64>,
}

impl Portfolio {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, offer: FlexOffer) -> Result<(), AggregatorError> {
        offer.validate()?;
        if self.entries.contains_key(&offer.ev_id) {
            return Err(AggregatorError::OverlappingOffer(offer.ev_id));
        }
        self.add_load(&offer.schedule, 1.0);
        let original = offer.schedule.clone();
        self.entries.insert(offer.ev_id, PortfolioEntry { offer, original });
        Ok(())
    }

    pub fn remove(&mut self, ev: EvId) -> Option<PortfolioEntry> {
        let entry = self.entries.remove(&ev)?;
        self.add_load(&entry.offer.schedule, -1.0);
        Some(entry)
    }

    pub fn get(&self, ev: EvId) -> Option<&PortfolioEntry> {
        self.entries.get(&ev)
    }

    pub fn entries(&self) -> impl Iterator<Item = &PortfolioEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ev_load_at(&self, minute: usize) -> f64 {
        self.ev_load.get(minute).copied().unwrap_or(0.0)
    }

    pub fn latest_departure(&self) -> Option<usize> {
        self.entries.values().map(|e| e.offer.departure).max()
    }

    fn add_load(&mut self, schedule: &ChargingSchedule, sign: f64) {
        if self.ev_load.len() < schedule.end() {
            self.ev_load.resize(schedule.end(), 0.0);
        }
        for (i, &p) in schedule.slots().iter().enumerate() {
            if p != 0.0 {
                self.ev_load[schedule.start() + i] += sign * p;
            }
        }
    }

    fn set_power(&mut self, ev: EvId, minute: usize, kw: f64) {
        let entry = self.entries.get_mut(&ev).expect("active offer");
        let old = entry.offer.schedule.power_at(minute);
        entry.offer.schedule.set_power(minute, kw);
        self.ev_load[minute] += kw - old;
    }

    fn power_of(&self, ev: EvId, minute: usize) -> f64 {
        self.entries[&ev].offer.schedule.power_at(minute)
    }
}

/// Why an EV was (or was not) touched while handling one overload period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodDecision {
    pub period: OverloadPeriod,
    /// `(ev, laxity at decision time, rescheduled)` in priority order.
    pub candidates: Vec<(EvId, f64, bool)>,
}

/// Audit entry for one EV modified during one rescheduling call.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDiff {
    pub ev_id: EvId,
    pub pass: usize,
    pub removed_kwh: f64,
    pub same_hour_kwh: f64,
    pub other_hours_kwh: f64,
    pub kept_off_kwh: f64,
    pub from: Range<usize>,
}

impl fmt::Display for ScheduleDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pass={} ev={} zeroed=[{},{}) removed_kwh={:.3} same_hour_kwh={:.3} other_hours_kwh={:.3} kept_off_kwh={:.3}",
            self.pass,
            self.ev_id,
            self.from.start,
            self.from.end,
            self.removed_kwh,
            self.same_hour_kwh,
            self.other_hours_kwh,
            self.kept_off_kwh
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftOutcome {
    /// EVs whose schedule changed, ascending id.
    pub modified: Vec<EvId>,
    /// Energy that could not be re-placed, per EV, after repair.
    pub kept_off: BTreeMap<EvId, f64>,
    pub decisions: Vec<PeriodDecision>,
    pub diffs: Vec<ScheduleDiff>,
    pub passes: usize,
    pub iterations: usize,
    pub iteration_bound: usize,
    pub hit_iteration_bound: bool,
    /// Minutes recovered by the repair step.
    pub repaired_kwh: f64,
}

/// Bookkeeping for one ejection-chain search.
#[derive(Default)]
struct RepairSearch {
    budget: usize,
    chain: Vec<EvId>,
    reserved: Vec<usize>,
    journal: Vec<(EvId, usize, f64)>,
}

impl RepairSearch {
    fn set(&mut self, pf: &mut Portfolio, ev: EvId, minute: usize, kw: f64) {
        self.journal.push((ev, minute, pf.power_of(ev, minute)));
        pf.set_power(ev, minute, kw);
    }

    fn rollback(&mut self, pf: &mut Portfolio, to: usize) {
        while self.journal.len() > to {
            let (ev, minute, kw) = self.journal.pop().expect("non-empty");
            pf.set_power(ev, minute, kw);
        }
    }
}

struct ShiftContext<'a> {
    base: &'a BaseloadBook,
    c_max: f64,
    prices: &'a HourlyPrices,
    now: usize,
}

impl ShiftContext<'_> {
    fn load(&self, pf: &Portfolio, minute: usize) -> f64 {
        self.base.kw_at(minute) + pf.ev_load_at(minute)
    }

    fn overloaded(&self, pf: &Portfolio, minutes: Range<usize>) -> bool {
        minutes
            .into_iter()
            .any(|m| self.load(pf, m) > self.c_max)
    }

    fn fits(&self, pf: &Portfolio, minute: usize, power: f64) -> bool {
        self.load(pf, minute) + power <= self.c_max
    }

    fn window(&self, offer: &FlexOffer) -> Range<usize> {
        offer.plug_in.max(self.now)..offer.departure
    }

    /// Hours in the EV's remaining window, cheapest first, earlier on ties.
    fn hours_by_price(&self, offer: &FlexOffer) -> Vec<usize> {
        let w = self.window(offer);
        if w.is_empty() {
            return Vec::new();
        }
        let mut hours: Vec<usize> = (w.start / 60..=(w.end - 1) / 60).collect();
        hours.sort_by(|&a, &b| {
            self.prices
                .hour_price(a)
                .total_cmp(&self.prices.hour_price(b))
                .then(a.cmp(&b))
        });
        hours
    }

    /// Place up to `energy` in free minutes of `hour`, preferring the latest
    /// contiguous block. Returns the energy that did not fit.
    fn place_in_hour(
        &self,
        pf: &mut Portfolio,
        ev: EvId,
        hour: usize,
        energy: f64,
        exclude: &Range<usize>,
    ) -> f64 {
        if energy <= ENERGY_EPS {
            return 0.0;
        }
        let offer = &pf.entries[&ev].offer;
        let power = offer.max_power;
        let w = self.window(offer);
        let lo = (hour * 60).max(w.start);
        let hi = (hour * 60 + 60).min(w.end);
        if lo >= hi {
            return energy;
        }
        let free: Vec<usize> = (lo..hi)
            .rev()
            .filter(|m| !exclude.contains(m))
            .filter(|&m| offer.schedule.power_at(m) <= 0.0 && self.fits(pf, m, power))
            .collect();
        if free.is_empty() {
            return energy;
        }
        let needed = ((energy * 60.0 / power) - 1e-9).ceil().max(1.0) as usize;
        let mut chosen: Vec<usize> = if free.len() >= needed {
            // latest run of `needed` consecutive free minutes, if any
            let run_end = free.windows(needed).position(|w| w[0] - w[needed - 1] == needed - 1);
            match run_end {
                Some(i) => free[i..i + needed].to_vec(),
                None => free[..needed].to_vec(),
            }
        } else {
            free
        };
        chosen.sort_unstable();
        let before: Vec<f64> = chosen.iter().map(|&m| pf.power_of(ev, m)).collect();
        let entry = pf.entries.get_mut(&ev).expect("active offer");
        let rest = fill_minutes(&mut entry.offer.schedule, chosen.iter().copied(), energy, power);
        for (&m, old) in chosen.iter().zip(before) {
            let new = pf.entries[&ev].offer.schedule.power_at(m);
            pf.ev_load[m] += new - old;
        }
        rest
    }

    /// Zero an EV inside `minutes` (not before `now`). Returns the removed energy.
    fn zero_out(&self, pf: &mut Portfolio, ev: EvId, minutes: &Range<usize>) -> f64 {
        let offer = &pf.entries[&ev].offer;
        let from = minutes.start.max(self.now).max(offer.plug_in);
        let to = minutes.end.min(offer.departure);
        let mut removed = 0.0;
        for m in from..to.max(from) {
            let p = pf.power_of(ev, m);
            if p > 0.0 {
                removed += p / 60.0;
                pf.set_power(ev, m, 0.0);
            }
        }
        removed
    }

    /// Try to run `ev` at `power` in `minute`, moving at most `depth` other
    /// EVs' minutes out of the way. On failure every change is rolled back.
    fn place_minute(
        &self,
        pf: &mut Portfolio,
        ev: EvId,
        minute: usize,
        power: f64,
        depth: usize,
        search: &mut RepairSearch,
    ) -> bool {
        if search.budget == 0 {
            return false;
        }
        search.budget -= 1;
        if self.fits(pf, minute, power) {
            search.set(pf, ev, minute, power);
            return true;
        }
        if depth == 0 {
            return false;
        }
        let need = self.load(pf, minute) + power - self.c_max;
        search.chain.push(ev);
        search.reserved.push(minute);
        let blockers: Vec<(EvId, f64)> = pf
            .entries
            .values()
            .filter(|e| !search.chain.contains(&e.offer.ev_id))
            .filter(|e| e.offer.schedule.power_at(minute) >= need && self.window(&e.offer).contains(&minute))
            .map(|e| (e.offer.ev_id, e.offer.schedule.power_at(minute)))
            .collect();
        let mut placed = false;
        'blockers: for (other, other_power) in blockers {
            let checkpoint = search.journal.len();
            search.set(pf, other, minute, 0.0);
            for target in self.free_minutes_of(pf, other) {
                if search.reserved.contains(&target) {
                    continue;
                }
                if self.place_minute(pf, other, target, other_power, depth - 1, search)
                    && self.fits(pf, minute, power)
                {
                    search.set(pf, ev, minute, power);
                    placed = true;
                    break 'blockers;
                }
                search.rollback(pf, checkpoint + 1);
                if search.budget == 0 {
                    break;
                }
            }
            search.rollback(pf, checkpoint);
            if search.budget == 0 {
                break;
            }
        }
        search.chain.pop();
        search.reserved.pop();
        placed
    }

    /// Minutes where `ev` is idle inside its remaining window, cheapest hour
    /// first, latest minute first within an hour.
    fn free_minutes_of(&self, pf: &Portfolio, ev: EvId) -> Vec<usize> {
        let offer = &pf.entries[&ev].offer;
        let w = self.window(offer);
        let mut out = Vec::new();
        for h in self.hours_by_price(offer) {
            let lo = (h * 60).max(w.start);
            let hi = (h * 60 + 60).min(w.end);
            out.extend(
                (lo..hi)
                    .rev()
                    .filter(|&m| offer.schedule.power_at(m) <= 0.0),
            );
        }
        out
    }

    /// Recover kept-off energy for `ev`. Returns the energy recovered.
    fn repair(&self, pf: &mut Portfolio, ev: EvId, deficit: f64) -> f64 {
        let offer = &pf.entries[&ev].offer;
        let power = offer.max_power;
        let mut remaining = deficit;
        let none = 0..0;
        for h in self.hours_by_price(offer) {
            remaining = self.place_in_hour(pf, ev, h, remaining, &none);
            if remaining <= ENERGY_EPS {
                return deficit;
            }
        }
        let mut budget = REPAIR_BUDGET;
        for minute in self.free_minutes_of(pf, ev) {
            if remaining <= ENERGY_EPS || budget == 0 {
                break;
            }
            if pf.power_of(ev, minute) > 0.0 {
                continue;
            }
            let p = quantize_power_up(remaining * 60.0).min(quantize_power(power));
            if p <= 0.0 {
                break;
            }
            let mut search = RepairSearch { budget, ..Default::default() };
            if self.place_minute(pf, ev, minute, p, REPAIR_DEPTH, &mut search) {
                remaining -= p / 60.0;
            }
            budget = search.budget;
        }
        deficit - remaining.max(0.0)
    }
}

/// Resolve forecast overloads from `now` on by moving EV charging out of
/// overloaded periods in decreasing-laxity order.
pub fn shift_loads(
    pf: &mut Portfolio,
    base: &BaseloadBook,
    c_max: f64,
    prices: &HourlyPrices,
    now: usize,
) -> ShiftOutcome {
    let ctx = ShiftContext { base, c_max, prices, now };
    let mut out = ShiftOutcome::default();
    let Some(horizon_end) = pf.latest_departure() else {
        return out;
    };
    let snapshot = |pf: &Portfolio| LoadForecast {
        start: now,
        baseload: (now..horizon_end).map(|m| base.kw_at(m)).collect(),
        ev: (now..horizon_end).map(|m| pf.ev_load_at(m)).collect(),
    };
    let mut modified = BTreeSet::new();
    let mut kept_off: BTreeMap<EvId, f64> = BTreeMap::new();
    let n_active = pf.len();
    let max_passes = n_active + 2;
    let mut bound_set = false;

    for pass in 0..max_passes {
        let periods = detect_overloads(&snapshot(pf), c_max);
        if periods.is_empty() {
            break;
        }
        if !bound_set {
            out.iteration_bound = n_active * periods.len() + n_active + 1;
            bound_set = true;
        }
        out.passes = pass + 1;
        let mut changed = false;
        for period in periods {
            let range = period.minutes();
            if !ctx.overloaded(pf, range.clone()) {
                continue;
            }
            let mut candidates: Vec<(EvId, f64)> = pf
                .entries
                .values()
                .filter(|e| range.clone().any(|m| m >= now && e.offer.schedule.is_charging_at(m)))
                .map(|e| (e.offer.ev_id, laxity(&e.offer, now)))
                .collect();
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut decision = PeriodDecision { period, candidates: Vec::new() };
            for (ev, lax) in candidates {
                if !ctx.overloaded(pf, range.clone()) || out.iterations >= out.iteration_bound {
                    decision.candidates.push((ev, lax, false));
                    continue;
                }
                out.iterations += 1;
                let removed = ctx.zero_out(pf, ev, &range);
                if removed <= ENERGY_EPS {
                    decision.candidates.push((ev, lax, false));
                    continue;
                }
                changed = true;
                modified.insert(ev);
                let mut remaining = removed;
                for hour in range.start / 60..=(range.end - 1) / 60 {
                    remaining = ctx.place_in_hour(pf, ev, hour, remaining, &range);
                }
                let same_hour = removed - remaining;
                if remaining > ENERGY_EPS {
                    for hour in ctx.hours_by_price(&pf.entries[&ev].offer) {
                        remaining = ctx.place_in_hour(pf, ev, hour, remaining, &range);
                        if remaining <= ENERGY_EPS {
                            break;
                        }
                    }
                }
                let remaining = if remaining > ENERGY_EPS { remaining } else { 0.0 };
                if remaining > 0.0 {
                    *kept_off.entry(ev).or_default() += remaining;
                }
                out.diffs.push(ScheduleDiff {
                    ev_id: ev,
                    pass: pass + 1,
                    removed_kwh: removed,
                    same_hour_kwh: same_hour,
                    other_hours_kwh: removed - same_hour - remaining,
                    kept_off_kwh: remaining,
                    from: range.clone(),
                });
                decision.candidates.push((ev, lax, true));
            }
            out.decisions.push(decision);
        }
        if out.iterations >= out.iteration_bound {
            out.hit_iteration_bound = true;
            break;
        }
        if !changed {
            break;
        }
    }

    // Paused energy gets another chance once the overloads are settled.
    let mut order: Vec<(EvId, f64)> = kept_off
        .keys()
        .map(|&ev| (ev, laxity(&pf.entries[&ev].offer, now)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for (ev, _) in order {
        let deficit = kept_off[&ev];
        let before: Vec<EvId> = pf.entries.keys().copied().collect();
        let snapshot_schedules: BTreeMap<EvId, ChargingSchedule> = before
            .iter()
            .map(|id| (*id, pf.entries[id].offer.schedule.clone()))
            .collect();
        let recovered = ctx.repair(pf, ev, deficit);
        if recovered > ENERGY_EPS {
            out.repaired_kwh += recovered;
            for (id, old) in &snapshot_schedules {
                if &pf.entries[id].offer.schedule != old {
                    modified.insert(*id);
                }
            }
        }
        let left = deficit - recovered;
        if left > ENERGY_EPS {
            kept_off.insert(ev, left);
        } else {
            kept_off.remove(&ev);
        }
    }

    out.modified = modified.into_iter().collect();
    out.kept_off = kept_off;
    out
}

/// Result of handing an event to the aggregator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RescheduleOutcome {
    /// Current schedule of every EV modified by this event.
    pub updated: Vec<(EvId, ChargingSchedule)>,
    /// Provisional compensation for each modified EV, against its submitted plan.
    pub compensation: Vec<CompensationRecord>,
    pub shift: Option<ShiftOutcome>,
}

/// Final state of a session at unplug.
#[derive(Debug, Clone, PartialEq)]
pub struct SettledSession {
    pub offer: FlexOffer,
    pub original: ChargingSchedule,
    pub compensation: CompensationRecord,
}

/// Single logical actor: all mutating calls are applied in event order.
#[derive(Debug, Clone)]
pub struct Aggregator {
    c_max: f64,
    origin: DateTime<Utc>,
    prices: Arc<HourlyPrices>,
    customers: BTreeSet<EvId>,
    baseload: BaseloadBook,
    portfolio: Portfolio,
}

impl Aggregator {
    pub fn new(c_max: f64, origin: DateTime<Utc>, prices: Arc<HourlyPrices>) -> Self {
        Self {
            c_max,
            origin,
            prices,
            customers: BTreeSet::new(),
            baseload: BaseloadBook::default(),
            portfolio: Portfolio::new(),
        }
    }

    pub fn capacity(&self) -> f64 {
        self.c_max
    }

    pub fn add_customer(&mut self, ev: EvId) -> Result<(), AggregatorError> {
        if !self.customers.insert(ev) {
            return Err(AggregatorError::DuplicateCustomer(ev));
        }
        Ok(())
    }

    pub fn customers(&self) -> usize {
        self.customers.len()
    }

    pub fn add_predicted_base_load(&mut self, day: u32, forecast: &[f64; 24]) -> Result<(), AggregatorError> {
        self.baseload.add_day(day, forecast)
    }

    pub fn baseload(&self) -> &BaseloadBook {
        &self.baseload
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    fn session_date(&self, minute: usize) -> NaiveDate {
        (self.origin + Duration::minutes(minute as i64)).date_naive()
    }

    /// Run the overload check at `now` and reschedule if needed.
    pub fn rebalance(&mut self, now: usize) -> RescheduleOutcome {
        let c_max = self.c_max;
        let prices = Arc::clone(&self.prices);
        let shift = shift_loads(&mut self.portfolio, &self.baseload, c_max, &prices, now);
        let mut outcome = RescheduleOutcome::default();
        for &ev in &shift.modified {
            let entry = &self.portfolio.entries[&ev];
            outcome.updated.push((ev, entry.offer.schedule.clone()));
            outcome.compensation.push(
                compensation_for(
                    ev,
                    self.session_date(entry.offer.plug_in),
                    &entry.original,
                    &entry.offer.schedule,
                    &prices,
                )
                .expect("same window"),
            );
        }
        if !shift.decisions.is_empty() {
            outcome.shift = Some(shift);
        }
        outcome
    }

    /// Accept a new plug-in session and resolve any overload it causes.
    pub fn add_flex_offer(&mut self, offer: FlexOffer, now: usize) -> Result<RescheduleOutcome, AggregatorError> {
        if !self.customers.contains(&offer.ev_id) {
            return Err(AggregatorError::UnknownCustomer(offer.ev_id));
        }
        self.portfolio.insert(offer)?;
        Ok(self.rebalance(now))
    }

    /// Remove the EV's offer and settle its compensation.
    pub fn unplug_ev(&mut self, ev: EvId) -> Result<SettledSession, AggregatorError> {
        if !self.customers.contains(&ev) {
            return Err(AggregatorError::UnknownCustomer(ev));
        }
        let entry = self
            .portfolio
            .remove(ev)
            .ok_or(AggregatorError::NoActiveOffer(ev))?;
        let compensation = compensation_for(
            ev,
            self.session_date(entry.offer.plug_in),
            &entry.original,
            &entry.offer.schedule,
            &self.prices,
        )?;
        Ok(SettledSession {
            offer: entry.offer,
            original: entry.original,
            compensation,
        })
    }

    /// Snapshot of the expected load over `[from, to)`.
    pub fn forecast(&self, from: usize, to: usize) -> LoadForecast {
        LoadForecast {
            start: from,
            baseload: (from..to).map(|m| self.baseload.kw_at(m)).collect(),
            ev: (from..to).map(|m| self.portfolio.ev_load_at(m)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtp::build_rtp_schedule;
    use chrono::TimeZone;

    fn origin() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
    }

    fn flat(values: &[f64]) -> LoadForecast {
        LoadForecast {
            start: 0,
            baseload: values.to_vec(),
            ev: vec![0.0; values.len()],
        }
    }

    fn offer_with(ev: u32, plug_in: usize, dep: usize, power: f64, energy: f64, prices: &HourlyPrices) -> FlexOffer {
        FlexOffer {
            ev_id: EvId(ev),
            plug_in,
            departure: dep,
            max_power: power,
            required_energy: energy,
            schedule: build_rtp_schedule(plug_in, dep, energy, power, prices).unwrap(),
        }
    }

    fn block_offer(ev: u32, plug_in: usize, dep: usize, power: f64, on: Range<usize>) -> FlexOffer {
        let mut schedule = ChargingSchedule::zeros(plug_in, dep);
        for m in on.clone() {
            schedule.set_power(m, power);
        }
        FlexOffer {
            ev_id: EvId(ev),
            plug_in,
            departure: dep,
            max_power: power,
            required_energy: on.len() as f64 * power / 60.0,
            schedule,
        }
    }

    fn book(days: u32, kw: f64) -> BaseloadBook {
        let mut b = BaseloadBook::default();
        for d in 0..days {
            b.add_day(d, &[kw; 24]).unwrap();
        }
        b
    }

    #[test]
    fn detect_strict_threshold() {
        assert!(detect_overloads(&flat(&[399.9; 60]), 400.0).is_empty());
        assert!(detect_overloads(&flat(&[400.0; 60]), 400.0).is_empty());
    }

    #[test]
    fn detect_single_period() {
        let mut v = vec![300.0; 60];
        for x in &mut v[10..40] {
            *x = 500.0;
        }
        let p = detect_overloads(&flat(&v), 400.0);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].start, p[0].end), (10, 40));
        assert_eq!(p[0].peak_kw, 500.0);
        assert!((p[0].excess_kwh - 30.0 * 100.0 / 60.0).abs() < 1e-9);
    }

    #[test]
    fn detect_two_spikes_split_by_legal_minute() {
        let mut v = vec![300.0; 20];
        v[5] = 450.0;
        v[6] = 450.0;
        v[7] = 400.0;
        v[8] = 410.0;
        let p = detect_overloads(&flat(&v), 400.0);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].start, p[0].end, p[1].start, p[1].end), (5, 7, 8, 9));
    }

    #[test]
    fn laxity_cases() {
        let prices = HourlyPrices::from_totals(vec![1.0; 24]);
        let o = offer_with(0, 0, 480, 11.0, 22.0, &prices);
        assert!((laxity(&o, 0) - 360.0).abs() < 1e-9);
        let tight = offer_with(1, 0, 120, 11.0, 22.0, &prices);
        assert!(laxity(&tight, 0).abs() < 1e-9);
        let full = offer_with(2, 0, 300, 11.0, 0.0, &prices);
        assert_eq!(laxity(&full, 0), 300.0);
        // energy already delivered before `now` no longer counts
        assert!((laxity(&o, 120) - 360.0).abs() < 1e-9);
    }

    #[test]
    fn baseload_days_must_be_contiguous() {
        let mut a = Aggregator::new(400.0, origin(), Arc::new(HourlyPrices::from_totals(vec![1.0; 48])));
        a.add_predicted_base_load(0, &[50.0; 24]).unwrap();
        assert_eq!(a.forecast(0, 1440).baseload, vec![50.0; 1440]);
        assert_eq!(a.add_predicted_base_load(0, &[50.0; 24]), Err(AggregatorError::DuplicateDay(0)));
        assert_eq!(
            a.add_predicted_base_load(2, &[50.0; 24]),
            Err(AggregatorError::DayGap { expected: 1, got: 2 })
        );
        a.add_predicted_base_load(1, &[60.0; 24]).unwrap();
        assert_eq!(a.baseload().kw_at(1440), 60.0);
    }

    #[test]
    fn registry_and_unplug() {
        let prices = Arc::new(HourlyPrices::from_totals(vec![1.0; 48]));
        let mut a = Aggregator::new(400.0, origin(), prices.clone());
        for id in 0..126 {
            a.add_customer(EvId(id)).unwrap();
        }
        assert_eq!(a.customers(), 126);
        assert!(a.add_customer(EvId(3)).is_err());
        let o = offer_with(3, 60, 300, 11.0, 11.0, &prices);
        let unknown = offer_with(500, 60, 300, 11.0, 11.0, &prices);
        assert_eq!(
            a.add_flex_offer(unknown, 60).unwrap_err(),
            AggregatorError::UnknownCustomer(EvId(500))
        );
        a.add_flex_offer(o.clone(), 60).unwrap();
        assert_eq!(
            a.add_flex_offer(o, 60).unwrap_err(),
            AggregatorError::OverlappingOffer(EvId(3))
        );
        assert!(a.forecast(60, 300).ev.iter().any(|&x| x > 0.0));
        let settled = a.unplug_ev(EvId(3)).unwrap();
        assert_eq!(settled.compensation.compensation, 0.0);
        assert!(a.forecast(0, 400).ev.iter().all(|&x| x.abs() < 1e-12));
        assert_eq!(a.unplug_ev(EvId(3)).unwrap_err(), AggregatorError::NoActiveOffer(EvId(3)));
    }

    #[test]
    fn no_overload_means_no_changes() {
        let prices = Arc::new(HourlyPrices::from_totals(vec![1.0; 48]));
        let mut a = Aggregator::new(400.0, origin(), prices.clone());
        a.add_predicted_base_load(0, &[289.0; 24]).unwrap();
        a.add_customer(EvId(0)).unwrap();
        let o = offer_with(0, 0, 600, 11.0, 20.0, &prices);
        let before = o.schedule.clone();
        let out = a.add_flex_offer(o, 0).unwrap();
        assert!(out.updated.is_empty() && out.compensation.is_empty() && out.shift.is_none());
        assert_eq!(a.portfolio().get(EvId(0)).unwrap().offer.schedule, before);
    }

    #[test]
    fn highest_laxity_ev_moves_to_next_cheapest_hour() {
        // both on at 00:00-01:00, A (id 0) has 300 min laxity, B has 60
        let prices = HourlyPrices::from_totals(vec![1.0, 3.0, 2.0, 4.0, 5.0, 6.0]);
        let mut pf = Portfolio::new();
        pf.insert(block_offer(0, 0, 360, 11.0, 0..60)).unwrap();
        pf.insert(block_offer(1, 0, 120, 11.0, 0..60)).unwrap();
        assert!((laxity(&pf.get(EvId(0)).unwrap().offer, 0) - 300.0).abs() < 1e-9);
        assert!((laxity(&pf.get(EvId(1)).unwrap().offer, 0) - 60.0).abs() < 1e-9);
        let out = shift_loads(&mut pf, &book(1, 0.0), 20.0, &prices, 0);
        assert_eq!(out.modified, vec![EvId(0)]);
        assert!(out.kept_off.is_empty());
        let a = &pf.get(EvId(0)).unwrap().offer.schedule;
        let b = &pf.get(EvId(1)).unwrap().offer.schedule;
        assert!(b.slots()[0..60].iter().all(|&p| p == 11.0), "B untouched");
        // cheapest remaining hour with room is hour 2 (price 2)
        assert!(a.slots()[120..180].iter().all(|&p| p == 11.0));
        assert!((a.delivered_energy() - 11.0).abs() < 1e-9);
        for m in 0..360 {
            assert!(pf.ev_load_at(m) <= 20.0);
        }
        let d = &out.decisions[0];
        assert_eq!(d.candidates[0].0, EvId(0));
        assert!(d.candidates[0].2 && !d.candidates[1].2);
    }

    #[test]
    fn no_slack_keeps_one_ev_off() {
        let prices = HourlyPrices::from_totals(vec![1.0; 4]);
        let mut pf = Portfolio::new();
        pf.insert(block_offer(0, 0, 60, 11.0, 0..60)).unwrap();
        pf.insert(block_offer(1, 0, 60, 11.0, 0..60)).unwrap();
        let out = shift_loads(&mut pf, &book(1, 0.0), 20.0, &prices, 0);
        assert_eq!(out.kept_off.len(), 1);
        assert!((out.kept_off.values().next().unwrap() - 11.0).abs() < 1e-9);
        for m in 0..60 {
            assert!(pf.ev_load_at(m) <= 20.0);
        }
        // brute force: 2 EVs x 60 minutes at 11 kW under 20 kW means at most
        // one EV per minute, so at most 60 EV-minutes of the 120 needed fit.
        let capacity_minutes = (0..60).map(|_| (20.0f64 / 11.0).floor() as usize).sum::<usize>();
        assert!(capacity_minutes < 120);
    }

    #[test]
    fn sub_hour_overload_moves_to_tail_of_same_hour() {
        let prices = HourlyPrices::from_totals(vec![1.0, 0.5, 2.0]);
        let mut pf = Portfolio::new();
        // A: on 00:00-00:21, long window; B: on 00:00-00:30, tight window
        pf.insert(block_offer(0, 0, 180, 11.0, 0..21)).unwrap();
        pf.insert(block_offer(1, 0, 40, 11.0, 0..30)).unwrap();
        let out = shift_loads(&mut pf, &book(1, 0.0), 20.0, &prices, 0);
        assert_eq!(out.modified, vec![EvId(0)]);
        let a = &pf.get(EvId(0)).unwrap().offer.schedule;
        assert!(a.slots()[39..60].iter().all(|&p| p == 11.0), "{:?}", &a.slots()[..60]);
        assert!(a.slots()[..39].iter().all(|&p| p == 0.0));
        assert!(a.slots()[60..].iter().all(|&p| p == 0.0), "stays in hour 0 despite cheaper hour 1");
        assert!(out.diffs[0].same_hour_kwh > 0.0 && out.diffs[0].other_hours_kwh == 0.0);
    }

    #[test]
    fn past_minutes_are_never_moved() {
        let prices = HourlyPrices::from_totals(vec![1.0; 6]);
        let mut pf = Portfolio::new();
        pf.insert(block_offer(0, 0, 360, 11.0, 0..120)).unwrap();
        pf.insert(block_offer(1, 0, 360, 11.0, 0..120)).unwrap();
        let before: Vec<f64> = pf.get(EvId(0)).unwrap().offer.schedule.slots()[..60].to_vec();
        let before1: Vec<f64> = pf.get(EvId(1)).unwrap().offer.schedule.slots()[..60].to_vec();
        shift_loads(&mut pf, &book(1, 0.0), 20.0, &prices, 60);
        assert_eq!(&pf.get(EvId(0)).unwrap().offer.schedule.slots()[..60], &before[..]);
        assert_eq!(&pf.get(EvId(1)).unwrap().offer.schedule.slots()[..60], &before1[..]);
        for m in 60..360 {
            assert!(pf.ev_load_at(m) <= 20.0);
        }
    }

    #[test]
    fn repair_moves_a_blocker_out_of_the_way() {
        // Hour 0 is cheap. A needs 15 min and may use hours 0-1; B and D
        // need 30 min each and must finish within hour 0. Capacity fits one
        // EV per minute. Plain relocation parks A in the tail of hour 0,
        // leaving B short; the repair moves A into hour 1.
        let prices = HourlyPrices::from_totals(vec![1.0, 2.0]);
        let mut pf = Portfolio::new();
        pf.insert(block_offer(0, 0, 120, 10.0, 0..15)).unwrap();
        pf.insert(block_offer(1, 0, 60, 10.0, 0..30)).unwrap();
        pf.insert(block_offer(2, 0, 60, 10.0, 0..30)).unwrap();
        let out = shift_loads(&mut pf, &book(1, 0.0), 10.0, &prices, 0);
        assert!(out.kept_off.is_empty(), "{:?}", out.kept_off);
        for e in pf.entries() {
            assert!((e.offer.schedule.delivered_energy() - e.offer.required_energy).abs() < 1e-9);
        }
        for m in 0..120 {
            assert!(pf.ev_load_at(m) <= 10.0 + 1e-9);
        }
    }

    #[test]
    fn compensation_cases() {
        let prices = HourlyPrices::from_totals(vec![1.0, 1.2, 0.9]);
        let date = NaiveDate::from_ymd_opt(2025, 1, 1).unwrap();
        let orig = block_offer(0, 0, 180, 10.0, 0..60).schedule; // 10 kWh at 1.0
        let dearer = block_offer(0, 0, 180, 10.0, 60..120).schedule; // 10 kWh at 1.2
        let cheaper = block_offer(0, 0, 180, 10.0, 120..180).schedule;
        let c = compensation_for(EvId(0), date, &orig, &dearer, &prices).unwrap();
        assert!((c.original_cost - 10.0).abs() < 1e-9);
        assert!((c.shifted_cost - 12.0).abs() < 1e-9);
        assert!((c.compensation - 2.0).abs() < 1e-9);
        let c = compensation_for(EvId(0), date, &orig, &cheaper, &prices).unwrap();
        assert!((c.shifted_cost - 9.0).abs() < 1e-9);
        assert_eq!(c.compensation, 0.0);
        let c = compensation_for(EvId(0), date, &orig, &orig, &prices).unwrap();
        assert_eq!(c.compensation, 0.0);
        let other = ChargingSchedule::zeros(0, 120);
        assert_eq!(
            compensation_for(EvId(0), date, &orig, &other, &prices).unwrap_err(),
            AggregatorError::SessionMismatch
        );
    }

    #[test]
    fn forecast_is_baseload_plus_active_schedules() {
        let prices = Arc::new(HourlyPrices::from_totals(vec![1.0, 2.0, 3.0, 4.0]));
        let mut a = Aggregator::new(1000.0, origin(), prices.clone());
        a.add_predicted_base_load(0, &[30.0; 24]).unwrap();
        for id in 0..3 {
            a.add_customer(EvId(id)).unwrap();
        }
        let offers = [
            offer_with(0, 0, 240, 11.0, 15.0, &prices),
            offer_with(1, 30, 200, 7.4, 9.0, &prices),
            offer_with(2, 10, 100, 17.3, 4.0, &prices),
        ];
        for o in &offers {
            a.add_flex_offer(o.clone(), 0).unwrap();
        }
        let f = a.forecast(0, 240);
        for m in 0..240 {
            let expected = 30.0 + offers.iter().map(|o| o.schedule.power_at(m)).sum::<f64>();
            assert!((f.value(m) - expected).abs() < 1e-9);
        }
    }
}
