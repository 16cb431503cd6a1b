//! Self-convergence of the tamed scheme for two taming exponents.

use mvlse::experiments::{parse_config, run_rate_study};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for alpha in [0.5, 0.25, 0.1] {
        let text = format!(
            "r0 = 0.5\nT = 1\nn = 400\ntheta0 = 0.5, 0.3\ntheta_box = 0:1, 0:1\nalpha = {alpha}\nrate_levels = 4, 5, 6, 7, 8\nrate_reference = 12\n"
        );
        let report = run_rate_study(&parse_config(&text)?)?;
        let rate = report.rate.expect("rate summary");
        let errors: Vec<String> = rate.levels.iter().map(|l| format!("{:.2e}", l.error)).collect();
        println!("alpha = {alpha:<4} slope = {:?}  errors = [{}]", rate.slope, errors.join(", "));
    }
    Ok(())
}
