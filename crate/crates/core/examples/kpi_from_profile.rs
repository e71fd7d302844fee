//! KPIs of a hand-made two-household day.

use gridflex::kpi::{self, OverloadBand};

fn main() -> gridflex::Result<()> {
    let minutes = 24 * 60;
    let a: Vec<f64> = (0..minutes).map(|m| if (17 * 60..19 * 60).contains(&m) { 11.0 } else { 0.5 }).collect();
    let b: Vec<f64> = (0..minutes).map(|m| if (19 * 60..21 * 60).contains(&m) { 7.4 } else { 0.4 }).collect();
    let total: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();

    let lf = kpi::load_factor(&kpi::hourly_consumption(&total), &total, 24)?;
    let cf = kpi::coincidence_factor(&total, &[a, b])?;
    let stats = kpi::overload_stats(&total, 10.0)?;
    println!("load factor        {lf:.4}");
    println!("coincidence factor {cf:.4}");
    println!("overload           {:.2} h against 10 kW", stats.hours());
    for (band, n) in OverloadBand::ALL.iter().zip(stats.histogram) {
        println!("  {:<12} {n} min", band.label());
    }
    Ok(())
}
