//! Limit functionals along the noise-free path and the covariance of the
//! rescaled estimation error.

use mvlse::asymptotics::LimitQuantities;
use mvlse::model::example_model;
use mvlse::simulate::{limit_ode, InitialPath};
use mvlse::GridSpec;

fn main() -> mvlse::Result<()> {
    let grid = GridSpec::new(1.0, 2000, 0.5)?;
    let model = example_model(grid.r0)?;
    let theta0 = [0.5, 0.3];
    let xi = InitialPath::LinearRamp(1.0).segment(&grid)?;
    let x0 = limit_ode(&model, &xi, &theta0, &grid, 0.5)?;
    let q = LimitQuantities::new(&model, &x0, &theta0)?;

    for theta in [[0.5, 0.3], [0.6, 0.3], [0.5, 0.5], [0.0, 0.0]] {
        println!("Xi({theta:?}) = {:.6e}", q.xi(&theta));
    }
    println!("information matrix:{}", q.info(&theta0));
    println!("limit covariance:{}", q.limit_cov()?);
    Ok(())
}
