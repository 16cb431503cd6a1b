//! One dataset, three estimators: closed form, lattice search and Nelder–Mead.

use std::sync::Arc;

use mvlse::estimate::{Contrast, Method, ObservationSet, OptimizerSettings};
use mvlse::model::{example_model, ThetaBox};
use mvlse::simulate::{particle_system_seeded, InitialPath, LawProvider};
use mvlse::{GridSpec, SimConfig};

fn main() -> mvlse::Result<()> {
    let grid = GridSpec::new(1.0, 400, 0.5)?;
    let model = example_model(grid.r0)?;
    let theta0 = [0.5, 0.3];
    let eps = 0.05;
    let xi = InitialPath::LinearRamp(1.0).segment(&grid)?;
    let cfg = SimConfig::new(grid, eps, 0.5, 64, 7)?;
    let paths = particle_system_seeded(&model, &xi, &theta0, &cfg, 0)?;
    let obs = ObservationSet::new(paths[0].clone(), LawProvider::Ensemble(Arc::new(paths)), eps, 0.5)?;

    let contrast = Contrast::new(&obs, &model)?;
    let bounds = ThetaBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?;
    let settings = OptimizerSettings::default();

    println!("true theta = {theta0:?}");
    println!("closed form (raw drift): {:?}", contrast.closed_form()?.theta_hat);
    for method in [Method::Grid, Method::NelderMead] {
        let r = contrast.minimize(&bounds, method, &settings)?;
        println!(
            "{method:<12} theta = [{:.5}, {:.5}]  contrast = {:.5}  evaluations = {}",
            r.theta_hat[0], r.theta_hat[1], r.contrast_value, r.evaluations
        );
    }
    println!("gradient of Phi at theta0: {:?}", contrast.grad_phi(&theta0).as_slice());
    Ok(())
}
