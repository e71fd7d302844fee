//! Summarise the default fleet and simulate one vehicle's week of driving.

use chrono::NaiveDate;
use gridflex::fleet::{day_rng, default_fleet, sample_driving_day, BehaviorModel, EvAgent};

fn main() -> gridflex::Result<()> {
    let fleet = default_fleet(126);
    let total: f64 = fleet.iter().map(|e| e.max_charge_power_kw).sum();
    println!("{} EVs, {total:.1} kW of chargers", fleet.len());

    let model = BehaviorModel::default();
    let mut ev = EvAgent::new(fleet[0], model.soc_target);
    let monday = NaiveDate::from_ymd_opt(2025, 1, 6).unwrap();
    println!("ev {} ({} kWh, {} kW)", ev.spec.id, ev.spec.battery_capacity_kwh, ev.spec.max_charge_power_kw);
    for d in 0..7u32 {
        let date = monday + chrono::Days::new(d as u64);
        let day = sample_driving_day(&model, &mut day_rng(42, ev.spec.id, d), date);
        ev.today = Some(day);
        ev.depart(d)?;
        ev.arrive()?;
        let need = ev.energy_needed();
        println!(
            "{date}  out {}  home {}  {:>5.1} km  needs {need:>5.2} kWh",
            day.departure.format("%H:%M"),
            day.arrival.format("%H:%M"),
            day.distance_km
        );
        ev.apply_charging(need)?;
    }
    Ok(())
}
