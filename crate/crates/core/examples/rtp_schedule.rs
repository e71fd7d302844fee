//! Cheapest-hours charging plan for one evening plug-in.

use chrono::{TimeZone, Utc};
use gridflex::market::{HourlyPrices, TariffSchedule};
use gridflex::{build_rtp_schedule, synth};

fn main() -> gridflex::Result<()> {
    let origin = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let spot = synth::spot_prices(origin, 2, 2024);
    let prices = HourlyPrices::build(&spot, &TariffSchedule::default(), origin, 48)?;

    let (plug_in, departure) = (17 * 60 + 20, (24 + 7) * 60);
    let schedule = build_rtp_schedule(plug_in, departure, 24.0, 11.0, &prices)?;
    for run in schedule.runs() {
        let h = run.start / 60;
        println!(
            "{:02}:{:02} for {:>3} min at {:.3} kW  ({:.4} DKK/kWh)",
            h % 24,
            run.start % 60,
            run.minutes,
            run.power_kw,
            prices.hour_price(h)
        );
    }
    println!("delivered {:.3} kWh for {:.2} DKK", schedule.delivered_energy(), schedule.cost(&prices));
    Ok(())
}
