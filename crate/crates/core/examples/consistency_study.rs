//! Small Monte Carlo consistency sweep over noise levels, written to a
//! directory as records.csv and summary.json.

use mvlse::experiments::{parse_config, run_consistency_sweep, write_report};

const CONFIG: &str = "
r0 = 0.5
T = 1
n = 200
theta0 = 0.5, 0.3
theta_box = 0:1, 0:1
epsilons = 0.1, 0.03, 0.01
replications = 24
n_particles = 16
seed = 5
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_config(CONFIG)?;
    let report = run_consistency_sweep(&cfg)?;
    for cell in &report.cells {
        println!("eps = {:<5} median error = {:.4}", cell.epsilon, cell.median_err);
    }
    for m in &report.monotonicity {
        println!("strictly decreasing: {}, first/last ratio: {:.2}", m.strictly_decreasing, m.ratio_first_last);
    }
    let out = std::env::temp_dir().join("mvlse-consistency-example");
    write_report(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}
