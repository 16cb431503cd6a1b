//! Limit functionals along the noise-free path `X0` and the limit covariance.
//!
//! All integrals are left Riemann sums on the path's grid, with the law at
//! time `t` the point mass at `X0_t`:
//!
//! ```text
//! Gamma(theta)  = b(theta0) - b(theta)
//! Xi(theta)     = int Gamma^T sigma_hat Gamma dt
//! I(theta)      = int (grad b)^T sigma_hat (grad b) dt
//! K(theta)      = -2 int (grad^2 b) o (sigma_hat Gamma) dt
//! Upsilon       = (grad b)^T sigma_hat sigma
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleEnsemble;
use crate::model::{drift_hessian, inverse_diffusion, tame_drift, Model};
use crate::segment::{DiscretePath, Segment};

/// `b(theta0) - b(theta)` at `(seg, mu)`.
pub fn gamma(model: &dyn Model, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64], theta0: &[f64]) -> DVector<f64> {
    model.drift(seg, mu, theta0) - model.drift(seg, mu, theta)
}

/// Tamed variant `b_delta(theta0) - b_delta(theta)`.
pub fn gamma_tamed(
    model: &dyn Model,
    seg: &Segment,
    mu: &ParticleEnsemble,
    theta: &[f64],
    theta0: &[f64],
    delta: f64,
    alpha: f64,
) -> Result<DVector<f64>> {
    Ok(tame_drift(&model.drift(seg, mu, theta0), delta, alpha)? - tame_drift(&model.drift(seg, mu, theta), delta, alpha)?)
}

/// `Upsilon = (grad_theta b)^T sigma_hat sigma`, a `p x m` matrix.
pub fn upsilon(model: &dyn Model, seg: &Segment, mu: &ParticleEnsemble, theta0: &[f64]) -> Result<DMatrix<f64>> {
    let sigma = model.sigma(seg, mu);
    let w = inverse_diffusion(&sigma)?;
    Ok(model.grad_theta_drift(seg, mu, theta0).transpose() * w * sigma)
}

struct Node {
    seg: Segment,
    mu: ParticleEnsemble,
    sigma: DMatrix<f64>,
    weight: DMatrix<f64>,
}

/// Limit functionals of one model along one limit path, with the windows and
/// `sigma_hat` precomputed.
pub struct LimitQuantities<'a> {
    model: &'a dyn Model,
    delta: f64,
    theta0: Vec<f64>,
    nodes: Vec<Node>,
}

impl std::fmt::Debug for LimitQuantities<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LimitQuantities")
            .field("delta", &self.delta)
            .field("theta0", &self.theta0)
            .field("n", &self.nodes.len())
            .finish()
    }
}

impl<'a> LimitQuantities<'a> {
    pub fn new(model: &'a dyn Model, x0: &DiscretePath, theta0: &[f64]) -> Result<Self> {
        if theta0.len() != model.param_dim() {
            return Err(Error::Shape(format!("theta0 has {} entries, p = {}", theta0.len(), model.param_dim())));
        }
        if x0.dim() != model.state_dim() || x0.len() != x0.grid().path_len() {
            return Err(Error::Shape("limit path does not match the model or its grid".into()));
        }
        let nodes = (0..x0.grid().n)
            .map(|k| {
                let seg = x0.segment_at(k)?;
                let mu = ParticleEnsemble::dirac(seg.clone());
                let sigma = model.sigma(&seg, &mu);
                let weight = inverse_diffusion(&sigma)?;
                Ok(Node { seg, mu, sigma, weight })
            })
            .collect::<Result<_>>()?;
        Ok(Self { model, delta: x0.grid().delta, theta0: theta0.to_vec(), nodes })
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    /// `Xi(theta)`.
    pub fn xi(&self, theta: &[f64]) -> f64 {
        self.delta
            * self
                .nodes
                .iter()
                .map(|n| {
                    let g = gamma(self.model, &n.seg, &n.mu, theta, &self.theta0);
                    (&n.weight * &g).dot(&g)
                })
                .sum::<f64>()
    }

    /// `I(theta)`.
    pub fn info(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let mut acc = DMatrix::zeros(p, p);
        for n in &self.nodes {
            let g = self.model.grad_theta_drift(&n.seg, &n.mu, theta);
            acc += g.transpose() * &n.weight * &g;
        }
        acc * self.delta
    }

    /// `K(theta)`: column `j` is `-2 int A_j sigma_hat Gamma` for the Hessian blocks `A_j`.
    pub fn k(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let mut acc = DMatrix::zeros(p, p);
        for n in &self.nodes {
            let b = &n.weight * gamma(self.model, &n.seg, &n.mu, theta, &self.theta0);
            for (j, block) in drift_hessian(self.model, &n.seg, &n.mu, theta).iter().enumerate() {
                let col = block * &b;
                for i in 0..p {
                    acc[(i, j)] += col[i];
                }
            }
        }
        acc * (-2.0 * self.delta)
    }

    /// `int Upsilon Upsilon^T dt` at `theta0`.
    pub fn upsilon_gram(&self) -> DMatrix<f64> {
        let p = self.theta0.len();
        let mut acc = DMatrix::zeros(p, p);
        for n in &self.nodes {
            let u = self.model.grad_theta_drift(&n.seg, &n.mu, &self.theta0).transpose() * &n.weight * &n.sigma;
            acc += &u * u.transpose();
        }
        acc * self.delta
    }

    /// `I^-1 (int Upsilon Upsilon^T) I^-1` at `theta0`.
    pub fn limit_cov(&self) -> Result<DMatrix<f64>> {
        let inv = symmetric_inverse(&self.info(&self.theta0))?;
        let cov = &inv * self.upsilon_gram() * &inv;
        Ok((&cov + cov.transpose()) * 0.5)
    }
}

/// Inverse of a symmetric matrix, refusing when `lambda_min <= 1e-12 lambda_max`.
pub fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-12 * max.abs()) || !max.is_finite() {
        return Err(Error::NonIdentifiable { min_eig: min, max_eig: max });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `Xi(theta)` along `x0`.
pub fn xi_theta(model: &dyn Model, x0: &DiscretePath, theta: &[f64], theta0: &[f64]) -> Result<f64> {
    Ok(LimitQuantities::new(model, x0, theta0)?.xi(theta))
}

/// `I(theta)` along `x0`.
pub fn info_matrix(model: &dyn Model, x0: &DiscretePath, theta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(LimitQuantities::new(model, x0, theta)?.info(theta))
}

/// `K(theta)` along `x0`.
pub fn k_matrix(model: &dyn Model, x0: &DiscretePath, theta: &[f64], theta0: &[f64]) -> Result<DMatrix<f64>> {
    Ok(LimitQuantities::new(model, x0, theta0)?.k(theta))
}

/// Covariance of the Gaussian limit of `eps^-1 (theta_hat - theta0)`.
pub fn limit_covariance(model: &dyn Model, x0: &DiscretePath, theta0: &[f64]) -> Result<DMatrix<f64>> {
    LimitQuantities::new(model, x0, theta0)?.limit_cov()
}

/// Row-major JSON form of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dims: [usize; 2],
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self { dims: [m.nrows(), m.ncols()], data: m.row_iter().map(|r| r.iter().copied().collect()).collect() }
    }
}

impl From<&MatrixJson> for DMatrix<f64> {
    fn from(m: &MatrixJson) -> Self {
        DMatrix::from_fn(m.dims[0], m.dims[1], |i, j| m.data[i][j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_b0, example_model, FnModel};
    use crate::segment::GridSpec;
    use crate::simulate::{limit_ode, InitialPath};

    const THETA0: [f64; 2] = [0.5, 0.3];

    fn ramp_limit(n: usize) -> (crate::model::ExampleModel, DiscretePath) {
        let grid = GridSpec::new(1.0, n, 0.5).unwrap();
        let model = example_model(0.5).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&grid).unwrap();
        let x0 = limit_ode(&model, &xi, &THETA0, &grid, 0.5).unwrap();
        (model, x0)
    }

    fn constant_path(c: f64) -> DiscretePath {
        let grid = GridSpec::new(1.0, 40, 0.5).unwrap();
        DiscretePath::new(grid, 1, vec![c; grid.path_len()]).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let (model, x0) = ramp_limit(40);
        let seg = x0.segment_at(10).unwrap();
        let mu = ParticleEnsemble::dirac(seg.clone());
        assert_eq!(gamma(&model, &seg, &mu, &THETA0, &THETA0)[0], 0.0);
        let theta = [0.1, 0.9];
        let mf = example_b0(&seg, &seg);
        let expected = (THETA0[0] - theta[0]) + (THETA0[1] - theta[1]) * mf;
        assert!((gamma(&model, &seg, &mu, &theta, &THETA0)[0] - expected).abs() < 1e-14);
        let tamed = gamma_tamed(&model, &seg, &mu, &theta, &THETA0, 1e-10, 0.5).unwrap()[0];
        // deviation is O(delta^alpha |b|) = O(1e-5)
        assert!((tamed - expected).abs() <= 2e-5 * expected.abs().max(1.0));
    }

    #[test]
    fn constant_path_closed_forms() {
        let model = example_model(0.5).unwrap();
        let c = 0.7;
        let x0 = constant_path(c);
        let seg = x0.segment_at(0).unwrap();
        let b0 = example_b0(&seg, &seg);
        let s2 = (1.0 + 0.5 * c).powi(2);
        let theta = [0.2, 0.6];
        let dt = [THETA0[0] - theta[0], THETA0[1] - theta[1]];
        let xi = xi_theta(&model, &x0, &theta, &THETA0).unwrap();
        let expected = (dt[0] + dt[1] * b0).powi(2) / s2;
        assert!((xi - expected).abs() < 1e-12 * expected);
        let info = info_matrix(&model, &x0, &THETA0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, b0, b0, b0 * b0]) / s2;
        assert!((info - want).norm() < 1e-12);
        assert!(matches!(limit_covariance(&model, &x0, &THETA0), Err(Error::NonIdentifiable { .. })));
    }

    #[test]
    fn info_matrix_entries_for_the_example() {
        let (model, x0) = ramp_limit(100);
        let info = info_matrix(&model, &x0, &THETA0).unwrap();
        let (mut i11, mut i12, mut i22) = (0.0, 0.0, 0.0);
        let delta = x0.grid().delta;
        for k in 0..x0.grid().n {
            let seg = x0.segment_at(k).unwrap();
            let w = 1.0 / (1.0 + seg.abs_integral()).powi(2);
            let b0 = example_b0(&seg, &seg);
            i11 += w * delta;
            i12 += w * b0 * delta;
            i22 += w * b0 * b0 * delta;
        }
        assert!((info[(0, 0)] - i11).abs() < 1e-13);
        assert!((info[(0, 1)] - i12).abs() < 1e-13 && (info[(1, 0)] - i12).abs() < 1e-13);
        assert!((info[(1, 1)] - i22).abs() < 1e-13);
        assert!(info.clone().cholesky().is_some());
    }

    #[test]
    fn upsilon_examples() {
        let (model, x0) = ramp_limit(40);
        let seg = x0.segment_at(7).unwrap();
        let mu = ParticleEnsemble::dirac(seg.clone());
        let u = upsilon(&model, &seg, &mu, &THETA0).unwrap();
        let s = 1.0 + seg.abs_integral();
        let b0 = example_b0(&seg, &seg);
        assert!((u[(0, 0)] - 1.0 / s).abs() < 1e-15 && (u[(1, 0)] - b0 / s).abs() < 1e-14);
        let g = model.grad_theta_drift(&seg, &mu, &THETA0);
        let gram = &u * u.transpose();
        let direct = g.transpose() * (1.0 / (s * s)) * g;
        assert!((gram - direct).norm() < 1e-12);

        let ident = FnModel::new(
            2,
            2,
            1,
            |_, _, th| DVector::from_row_slice(&[th[0], 2.0 * th[0]]),
            |_, _| DMatrix::identity(2, 2),
            |_, _, _| DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
        );
        let seg2 = Segment::new(2, 0.5, vec![0.0; 4]).unwrap();
        let mu2 = ParticleEnsemble::dirac(seg2.clone());
        let u2 = upsilon(&ident, &seg2, &mu2, &[0.1]).unwrap();
        assert_eq!(u2, DMatrix::from_row_slice(1, 2, &[1.0, 2.0]));
    }

    #[test]
    fn k_matrix_examples() {
        let (model, x0) = ramp_limit(40);
        let lq = LimitQuantities::new(&model, &x0, &THETA0).unwrap();
        assert_eq!(lq.k(&THETA0), DMatrix::zeros(2, 2));
        assert_eq!(lq.k(&[0.1, 0.9]), DMatrix::zeros(2, 2));
    }

    #[test]
    fn k_matrix_matches_second_derivative_of_xi() {
        // b = theta^2 on d = 1: grad^2 Xi = 2 I + K
        let model = FnModel::new(
            1,
            1,
            1,
            |_, _, th| DVector::from_element(1, th[0] * th[0]),
            |seg: &Segment, _| DMatrix::from_element(1, 1, 1.0 + seg.head()[0].abs()),
            |_, _, th| DMatrix::from_element(1, 1, 2.0 * th[0]),
        );
        let grid = GridSpec::new(0.5, 1, 0.5).unwrap();
        let x0 = DiscretePath::new(grid, 1, vec![0.2, 0.4, 0.6]).unwrap();
        let theta0 = [0.8];
        let lq = LimitQuantities::new(&model, &x0, &theta0).unwrap();
        let theta = [0.3];
        let h = 1e-4;
        let fd = (lq.xi(&[theta[0] + h]) - 2.0 * lq.xi(&theta) + lq.xi(&[theta[0] - h])) / (h * h);
        let analytic = 2.0 * lq.info(&theta)[(0, 0)] + lq.k(&theta)[(0, 0)];
        assert!((fd - analytic).abs() < 1e-6 * analytic.abs(), "{fd} vs {analytic}");
    }

    #[test]
    fn limit_covariance_is_the_inverse_information() {
        let (model, x0) = ramp_limit(200);
        let lq = LimitQuantities::new(&model, &x0, &THETA0).unwrap();
        let info = lq.info(&THETA0);
        assert!((lq.upsilon_gram() - &info).norm() < 1e-10);
        let cov = lq.limit_cov().unwrap();
        let inv = info.try_inverse().unwrap();
        assert!((cov - inv).norm() < 1e-10);
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&m);
        assert_eq!(j.data, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(serde_json::to_string(&j).unwrap(), r#"{"dims":[2,3],"data":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
        assert_eq!(DMatrix::from(&j), m);
    }
}
