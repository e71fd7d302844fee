//! Per-minute charging schedules and the decentralized cheapest-hours
//! ("real-time pricing") charging plan each EV proposes at plug-in.

use crate::error::{Error, Result};
use crate::market::HourlyPrices;

/// Power below this is treated as "off".
pub const POWER_EPS_KW: f64 = 1e-9;

const POWER_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

/// Round a power down to a multiple of 2^-20 kW. Sums of such values are
/// exact in `f64`, so load totals do not depend on summation order.
pub fn quantize_power(kw: f64) -> f64 {
    (kw / POWER_QUANTUM).floor() * POWER_QUANTUM
}

/// Like [`quantize_power`] but rounding up, for trimmed final minutes.
pub(crate) fn quantize_power_up(kw: f64) -> f64 {
    (kw / POWER_QUANTUM).ceil() * POWER_QUANTUM
}

/// Per-minute charging power over a session window `[start, start + len)`.
/// Minute indices count from the simulation origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingSchedule {
    start: usize,
    slots: Vec<f64>,
}

/// A maximal run of constant power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRun {
    pub start: usize,
    pub minutes: usize,
    pub power_kw: f64,
}

impl ChargingSchedule {
    pub fn zeros(start: usize, end: usize) -> Self {
        Self {
            start,
            slots: vec![0.0; end.saturating_sub(start)],
        }
    }

    pub fn from_slots(start: usize, slots: Vec<f64>) -> Self {
        Self { start, slots }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Exclusive end minute.
    pub fn end(&self) -> usize {
        self.start + self.slots.len()
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    pub fn power_at(&self, minute: usize) -> f64 {
        minute
            .checked_sub(self.start)
            .and_then(|i| self.slots.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    pub(crate) fn set_power(&mut self, minute: usize, kw: f64) {
        let i = minute - self.start;
        self.slots[i] = kw;
    }

    /// Shorten the window to end at `end` (no-op if already shorter).
    pub fn truncate_to(&mut self, end: usize) {
        if end < self.end() {
            self.slots.truncate(end.saturating_sub(self.start));
        }
    }

    pub fn delivered_energy(&self) -> f64 {
        self.slots.iter().sum::<f64>() / 60.0
    }

    /// Energy in minutes `[from, to)`.
    pub fn energy_between(&self, from: usize, to: usize) -> f64 {
        let a = from.max(self.start).min(self.end()) - self.start;
        let b = to.max(self.start).min(self.end()) - self.start;
        self.slots[a..b.max(a)].iter().sum::<f64>() / 60.0
    }

    pub fn cost(&self, prices: &HourlyPrices) -> f64 {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| p / 60.0 * prices.minute_price(self.start + i))
            .sum()
    }

    pub fn is_charging_at(&self, minute: usize) -> bool {
        self.power_at(minute) > POWER_EPS_KW
    }

    pub fn runs(&self) -> Vec<PowerRun> {
        let mut runs: Vec<PowerRun> = Vec::new();
        for (i, &p) in self.slots.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            match runs.last_mut() {
                Some(r) if r.power_kw == p && r.start + r.minutes == self.start + i => r.minutes += 1,
                _ => runs.push(PowerRun { start: self.start + i, minutes: 1, power_kw: p }),
            }
        }
        runs
    }

    /// Every slot is zero or within `(0, max_power]`.
    pub fn respects_power(&self, max_power: f64) -> bool {
        self.slots
            .iter()
            .all(|&p| p >= 0.0 && p <= max_power + POWER_EPS_KW)
    }
}

/// Fill `minutes` in order at `power` until `energy` kWh is placed. The last
/// minute runs at reduced power, rounded up to the power quantum, so the
/// placed energy is never short. Returns the energy that did not fit.
pub(crate) fn fill_minutes<I>(schedule: &mut ChargingSchedule, minutes: I, energy: f64, power: f64) -> f64
where
    I: IntoIterator<Item = usize>,
{
    let mut remaining = energy;
    let full = quantize_power(power);
    let per_minute = full / 60.0;
    for m in minutes {
        if remaining <= 1e-12 {
            return 0.0;
        }
        if remaining >= per_minute - 1e-12 {
            schedule.set_power(m, full);
            remaining -= per_minute;
        } else {
            schedule.set_power(m, quantize_power_up(remaining * 60.0).min(full));
            remaining = 0.0;
        }
    }
    remaining.max(0.0)
}

/// Plan charging in the cheapest hours before departure.
///
/// Hours overlapping `[plug_in, departure)` are ranked by total price
/// (earlier hour first on ties) and filled at `max_power` (quantized, see
/// [`quantize_power`]) from the start of
/// the EV's availability inside each hour. When the window cannot hold
/// `energy`, the whole window runs at `max_power`.
pub fn build_rtp_schedule(
    plug_in: usize,
    departure: usize,
    energy: f64,
    max_power: f64,
    prices: &HourlyPrices,
) -> Result<ChargingSchedule> {
    if departure <= plug_in {
        return Err(Error::InvalidInput(format!(
            "departure minute {departure} not after plug-in minute {plug_in}"
        )));
    }
    if !(energy >= 0.0) || !(max_power > 0.0) {
        return Err(Error::InvalidInput(format!(
            "energy must be >= 0 and max_power > 0 (got {energy}, {max_power})"
        )));
    }
    let mut schedule = ChargingSchedule::zeros(plug_in, departure);
    let mut hours: Vec<usize> = (plug_in / 60..=(departure - 1) / 60).collect();
    hours.sort_by(|&a, &b| {
        prices
            .hour_price(a)
            .total_cmp(&prices.hour_price(b))
            .then(a.cmp(&b))
    });
    let mut remaining = energy;
    for h in hours {
        if remaining <= 1e-12 {
            break;
        }
        let from = (h * 60).max(plug_in);
        let to = (h * 60 + 60).min(departure);
        remaining = fill_minutes(&mut schedule, from..to, remaining, max_power);
    }
    Ok(schedule)
}
