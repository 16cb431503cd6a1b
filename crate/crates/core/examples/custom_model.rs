//! A user-supplied two-dimensional model built from closures: mean reversion
//! plus attraction to the law's window average.

use std::sync::Arc;

use mvlse::estimate::{Contrast, Method, ObservationSet, OptimizerSettings};
use mvlse::model::ThetaBox;
use mvlse::simulate::{particle_system_seeded, LawProvider};
use mvlse::{FnModel, GridSpec, Segment, SimConfig};
use nalgebra::{DMatrix, DVector};

fn main() -> mvlse::Result<()> {
    let grid = GridSpec::new(2.0, 400, 0.5)?;
    let features = |seg: &Segment, mu: &mvlse::ParticleEnsemble| {
        let x = DVector::from_column_slice(seg.head());
        let average = DVector::from_column_slice(mu.mean_integral()) / seg.r0();
        (-x, average)
    };
    let model = FnModel::new(
        2,
        2,
        2,
        move |seg, mu, th| {
            let (revert, average) = features(seg, mu);
            revert * th[0] + average * th[1]
        },
        |_, _| DMatrix::identity(2, 2),
        move |seg, mu, _| {
            let (revert, average) = features(seg, mu);
            DMatrix::from_columns(&[revert, average])
        },
    )
    .linear_in_theta(true);

    let theta0 = [1.5, 1.0];
    let xi = Segment::from_fn(&grid, 2, |t| vec![1.0 + 4.0 * t, -2.0 * t])?;
    let eps = 0.01;
    let cfg = SimConfig::new(grid, eps, 0.5, 32, 11)?;
    let paths = particle_system_seeded(&model, &xi, &theta0, &cfg, 0)?;
    let obs = ObservationSet::new(paths[0].clone(), LawProvider::Ensemble(Arc::new(paths)), eps, 0.5)?;

    let bounds = ThetaBox::new(vec![0.0, 0.0], vec![3.0, 2.0])?;
    let r = Contrast::new(&obs, &model)?.minimize(&bounds, Method::NelderMead, &OptimizerSettings::default())?;
    println!("true theta = {theta0:?}, estimate = [{:.4}, {:.4}]", r.theta_hat[0], r.theta_hat[1]);
    Ok(())
}
