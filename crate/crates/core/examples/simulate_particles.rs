//! Interacting particle system for the built-in mean-field model, compared
//! with the noise-free limit path.

use mvlse::measure::w2_empirical;
use mvlse::model::example_model;
use mvlse::simulate::{limit_ode, particle_system_seeded, InitialPath};
use mvlse::{GridSpec, ParticleEnsemble, SimConfig};

fn main() -> mvlse::Result<()> {
    let grid = GridSpec::new(1.0, 400, 0.5)?;
    let model = example_model(grid.r0)?;
    let theta0 = [0.5, 0.3];
    let xi = InitialPath::LinearRamp(1.0).segment(&grid)?;

    let x0 = limit_ode(&model, &xi, &theta0, &grid, 0.5)?;
    println!("limit path X(T) = {:.6}", x0.at_step(grid.n)[0]);

    for eps in [0.1, 0.01] {
        let cfg = SimConfig::new(grid, eps, 0.5, 32, 2024)?;
        let paths = particle_system_seeded(&model, &xi, &theta0, &cfg, 0)?;
        let terminal: Vec<f64> = paths.iter().map(|p| p.at_step(grid.n)[0]).collect();
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;

        let windows = ParticleEnsemble::new(paths.iter().map(|p| p.segment_at(grid.n)).collect::<Result<_, _>>()?)?;
        let limit = ParticleEnsemble::new(vec![x0.segment_at(grid.n)?; windows.len()])?;
        let d = w2_empirical(&windows, &limit)?;
        println!("eps = {eps:<5} mean X(T) = {mean:.6}  W2(final windows, limit) = {:.4}", d.value);
    }
    Ok(())
}
