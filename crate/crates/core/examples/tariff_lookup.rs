//! Print the distribution tariff for every local hour of a winter and a
//! summer day, then look one instant up by UTC.

use chrono::{NaiveDate, TimeZone, Utc};
use gridflex::market::TariffSchedule;

fn main() {
    let t = TariffSchedule::default();
    let winter = NaiveDate::from_ymd_opt(2025, 1, 15).unwrap();
    let summer = NaiveDate::from_ymd_opt(2025, 7, 15).unwrap();
    println!("{:>5} {:>12} {:>12}", "local", "winter_dkk", "summer_dkk");
    for h in 0..24 {
        let w = t.tariff_at_local(winter.and_hms_opt(h, 0, 0).unwrap());
        let s = t.tariff_at_local(summer.and_hms_opt(h, 0, 0).unwrap());
        println!("{h:>5} {w:>12.4} {s:>12.4}");
    }
    let instant = Utc.with_ymd_and_hms(2025, 1, 15, 16, 30, 0).unwrap();
    println!("{instant} -> {:.4} DKK/kWh", t.tariff_at(instant));
}
