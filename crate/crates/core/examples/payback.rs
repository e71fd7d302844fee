//! Years of compensation that add up to each grid upgrade.
//! Usage: payback [ANNUAL_COMPENSATION_DKK]

use gridflex::cli::{default_upgrade_options, payback_table};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let annual: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(6020.0);
    for (option, years) in payback_table(annual, &default_upgrade_options())? {
        println!("{:<24} {:>10.0} DKK  {years:>7.2} years", option.name, option.cost_dkk);
    }
    Ok(())
}
