//! Three EVs pick the same cheap hour on a small feeder; the aggregator
//! moves the most flexible ones and reports what it paid for that.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use gridflex::market::HourlyPrices;
use gridflex::{build_rtp_schedule, Aggregator, EvId, FlexOffer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut hourly = vec![1.0; 24];
    hourly[2] = 0.2;
    hourly[3] = 0.4;
    hourly[4] = 0.5;
    let prices = Arc::new(HourlyPrices::from_totals(hourly));
    let origin = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let mut agg = Aggregator::new(30.0, origin, prices.clone());
    agg.add_predicted_base_load(0, &[8.0; 24])?;

    for (id, departure) in [(1, 6 * 60), (2, 4 * 60), (3, 8 * 60)] {
        let ev = EvId(id);
        agg.add_customer(ev)?;
        let schedule = build_rtp_schedule(0, departure, 11.0, 11.0, &prices)?;
        let offer = FlexOffer { ev_id: ev, plug_in: 0, departure, max_power: 11.0, required_energy: 11.0, schedule };
        let outcome = agg.add_flex_offer(offer, 0)?;
        if let Some(shift) = &outcome.shift {
            for d in &shift.diffs {
                println!("{d}");
            }
        }
    }

    let peak = agg.forecast(0, 8 * 60).values().into_iter().fold(0.0, f64::max);
    println!("forecast peak {peak:.2} kW (capacity {:.0} kW)", agg.capacity());
    for id in 1..=3 {
        let s = agg.unplug_ev(EvId(id))?;
        let c = &s.compensation;
        println!(
            "ev {id}: planned {:.2} DKK, charged {:.2} DKK, compensated {:.2} DKK",
            c.original_cost, c.shifted_cost, c.compensation
        );
    }
    Ok(())
}
