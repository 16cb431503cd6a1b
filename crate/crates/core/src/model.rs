//! Coefficient contract, taming transform and the built-in mean-field example.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleEnsemble;
use crate::segment::Segment;

/// Largest admissible condition number of `sigma sigma^T`.
pub const MAX_DIFFUSION_CONDITION: f64 = 1e12;

/// Second derivative of the drift in `theta`: `p` blocks, block `k` is the
/// `p x d` matrix `d/dtheta_k (grad_theta b^T)`.
pub type DriftHessian = Vec<DMatrix<f64>>;

/// Coefficients `b(zeta, mu, theta)` and `sigma(zeta, mu)` of a path-dependent
/// McKean–Vlasov SDE.
///
/// Implementations must be pure: simulations call them from many threads.
pub trait Model: Send + Sync {
    /// State dimension `d`.
    fn state_dim(&self) -> usize;
    /// Noise dimension `m`.
    fn noise_dim(&self) -> usize;
    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize;

    /// Drift, a `d`-vector.
    fn drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DVector<f64>;

    /// Diffusion, a `d x m` matrix.
    fn sigma(&self, seg: &Segment, mu: &ParticleEnsemble) -> DMatrix<f64>;

    /// `grad_theta b`, a `d x p` matrix.
    fn grad_theta_drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DMatrix<f64>;

    /// Analytic second derivative in `theta`, if known.
    fn hess_theta_drift(&self, _seg: &Segment, _mu: &ParticleEnsemble, _theta: &[f64]) -> Option<DriftHessian> {
        None
    }

    /// `true` when the drift is affine in `theta`.
    fn is_linear_in_theta(&self) -> bool {
        false
    }
}

/// Drift convention used inside residuals and the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum DriftForm {
    /// The raw drift `b`.
    Raw,
    /// The tamed drift `b / (1 + delta^alpha |b|)`.
    Tamed { alpha: f64 },
}

impl DriftForm {
    pub fn tamed(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(DriftForm::Tamed { alpha })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DriftForm::Raw => Ok(()),
            DriftForm::Tamed { alpha } => check_alpha(alpha),
        }
    }

    pub fn apply(&self, b: DVector<f64>, delta: f64) -> DVector<f64> {
        match *self {
            DriftForm::Raw => b,
            DriftForm::Tamed { alpha } => tame(b, delta.powf(alpha)),
        }
    }

    /// `grad_theta` of the drift in this form, given `b` and `grad_theta b`.
    pub fn jacobian(&self, b: &DVector<f64>, grad: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
        match *self {
            DriftForm::Raw => grad.clone(),
            DriftForm::Tamed { alpha } => tamed_jacobian(b, grad, delta.powf(alpha)),
        }
    }
}

impl fmt::Display for DriftForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftForm::Raw => write!(f, "raw"),
            DriftForm::Tamed { alpha } => write!(f, "tamed(alpha={alpha})"),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("{alpha} is outside (0, 1/2]")))
    }
}

fn tame(b: DVector<f64>, scale: f64) -> DVector<f64> {
    let norm = b.norm();
    b / (1.0 + scale * norm)
}

/// `b / (1 + delta^alpha |b|)`.
pub fn tame_drift(b: &DVector<f64>, delta: f64, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    Ok(tame(b.clone(), delta.powf(alpha)))
}

/// Jacobian of the tamed drift:
/// `G/(1 + c|b|) - c (b b^T) G / (|b| (1 + c|b|)^2)` with `c = delta^alpha`.
///
/// The second term vanishes continuously at `b = 0`.
pub(crate) fn tamed_jacobian(b: &DVector<f64>, grad: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let norm = b.norm();
    let denom = 1.0 + scale * norm;
    let mut out = grad / denom;
    if norm > 0.0 {
        let correction = (b * (b.transpose() * grad)) * (scale / (norm * denom * denom));
        out -= correction;
    }
    out
}

/// `grad_theta` of the tamed drift at `(seg, mu, theta)`.
pub fn grad_tamed_drift(
    model: &dyn Model,
    seg: &Segment,
    mu: &ParticleEnsemble,
    theta: &[f64],
    delta: f64,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let b = model.drift(seg, mu, theta);
    let g = model.grad_theta_drift(seg, mu, theta);
    Ok(tamed_jacobian(&b, &g, delta.powf(alpha)))
}

/// `(sigma sigma^T)^{-1}` at `(seg, mu)`.
pub fn sigma_hat(model: &dyn Model, seg: &Segment, mu: &ParticleEnsemble) -> Result<DMatrix<f64>> {
    inverse_diffusion(&model.sigma(seg, mu))
}

/// Symmetric inverse of `sigma sigma^T`, rejecting near-singular diffusions.
pub fn inverse_diffusion(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = sigma * sigma.transpose();
    if s.nrows() == 1 {
        let v = s[(0, 0)];
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NearSingularDiffusion { condition: f64::INFINITY });
        }
        return Ok(DMatrix::from_element(1, 1, 1.0 / v));
    }
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !(max / min <= MAX_DIFFUSION_CONDITION) {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::NearSingularDiffusion { condition });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Axis-aligned parameter box; the closure is used by the optimisers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::param("theta_box", "bounds must be non-empty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::param("theta_box", "need finite lower < upper in every coordinate"));
        }
        Ok(Self { lower, upper })
    }

    /// A box whose closure is the single point `theta` (used for degenerate studies).
    pub fn point(theta: &[f64]) -> Self {
        Self { lower: theta.to_vec(), upper: theta.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Membership in the closed box.
    pub fn contains_closed(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().enumerate().all(|(i, t)| *t >= self.lower[i] && *t <= self.upper[i])
    }

    /// Membership in the open box.
    pub fn contains_open(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().enumerate().all(|(i, t)| *t > self.lower[i] && *t < self.upper[i])
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// `true` if some coordinate lies within `rel_tol * width` of a face.
    pub fn on_boundary(&self, theta: &[f64], rel_tol: f64) -> bool {
        theta.iter().enumerate().any(|(i, t)| {
            let tol = rel_tol * self.width(i).max(f64::MIN_POSITIVE);
            (t - self.lower[i]).abs() <= tol || (self.upper[i] - t).abs() <= tol
        })
    }
}

/// `b0(zeta, zeta') = -zeta(0)^3 + zeta(0) + int zeta + int zeta'` for scalar segments.
pub fn example_b0(zeta: &Segment, zeta_prime: &Segment) -> f64 {
    b0_local(zeta) + zeta_prime.integral()[0]
}

/// The part of `b0(zeta, .)` that depends on `zeta` alone.
fn b0_local(zeta: &Segment) -> f64 {
    let x = zeta.head()[0];
    -x * x * x + x + zeta.integral()[0]
}

/// The scalar mean-field example with `p = 2`:
///
/// ```text
/// b(zeta, mu, theta) = theta1 + theta2 * int b0(zeta, zeta') mu(dzeta')
/// sigma(zeta)        = 1 + int_{-r0}^0 |zeta(v)| dv
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleModel {
    pub r0: f64,
}

impl ExampleModel {
    /// `int b0(zeta, zeta') mu(dzeta')`. Since `b0` is additive in its second
    /// argument this is `b0_local(zeta) + mean int zeta'`.
    pub fn mean_field(&self, zeta: &Segment, mu: &ParticleEnsemble) -> f64 {
        b0_local(zeta) + mu.mean_integral()[0]
    }
}

/// The built-in example on a window of length `r0`.
pub fn example_model(r0: f64) -> Result<ExampleModel> {
    if !(r0 > 0.0) {
        return Err(Error::param("r0", "must be positive"));
    }
    Ok(ExampleModel { r0 })
}

impl Model for ExampleModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }

    fn drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, theta[0] + theta[1] * self.mean_field(seg, mu))
    }

    fn sigma(&self, seg: &Segment, _mu: &ParticleEnsemble) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0 + seg.abs_integral())
    }

    fn grad_theta_drift(&self, seg: &Segment, mu: &ParticleEnsemble, _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[1.0, self.mean_field(seg, mu)])
    }

    fn hess_theta_drift(&self, _seg: &Segment, _mu: &ParticleEnsemble, _theta: &[f64]) -> Option<DriftHessian> {
        Some(vec![DMatrix::zeros(2, 1); 2])
    }

    fn is_linear_in_theta(&self) -> bool {
        true
    }
}

type DriftFn = dyn Fn(&Segment, &ParticleEnsemble, &[f64]) -> DVector<f64> + Send + Sync;
type SigmaFn = dyn Fn(&Segment, &ParticleEnsemble) -> DMatrix<f64> + Send + Sync;
type GradFn = dyn Fn(&Segment, &ParticleEnsemble, &[f64]) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&Segment, &ParticleEnsemble, &[f64]) -> DriftHessian + Send + Sync;

/// A model assembled from closures, for user-supplied coefficients.
#[derive(Clone)]
pub struct FnModel {
    dims: (usize, usize, usize),
    drift: Arc<DriftFn>,
    sigma: Arc<SigmaFn>,
    grad: Arc<GradFn>,
    hess: Option<Arc<HessFn>>,
    linear: bool,
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("dims", &self.dims)
            .field("analytic_hessian", &self.hess.is_some())
            .field("linear", &self.linear)
            .finish()
    }
}

impl FnModel {
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        param_dim: usize,
        drift: impl Fn(&Segment, &ParticleEnsemble, &[f64]) -> DVector<f64> + Send + Sync + 'static,
        sigma: impl Fn(&Segment, &ParticleEnsemble) -> DMatrix<f64> + Send + Sync + 'static,
        grad: impl Fn(&Segment, &ParticleEnsemble, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims: (state_dim, noise_dim, param_dim),
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            grad: Arc::new(grad),
            hess: None,
            linear: false,
        }
    }

    pub fn with_hessian(
        mut self,
        hess: impl Fn(&Segment, &ParticleEnsemble, &[f64]) -> DriftHessian + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    pub fn linear_in_theta(mut self, linear: bool) -> Self {
        self.linear = linear;
        self
    }
}

impl Model for FnModel {
    fn state_dim(&self) -> usize {
        self.dims.0
    }
    fn noise_dim(&self) -> usize {
        self.dims.1
    }
    fn param_dim(&self) -> usize {
        self.dims.2
    }
    fn drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DVector<f64> {
        (self.drift)(seg, mu, theta)
    }
    fn sigma(&self, seg: &Segment, mu: &ParticleEnsemble) -> DMatrix<f64> {
        (self.sigma)(seg, mu)
    }
    fn grad_theta_drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DMatrix<f64> {
        (self.grad)(seg, mu, theta)
    }
    fn hess_theta_drift(&self, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> Option<DriftHessian> {
        self.hess.as_ref().map(|h| h(seg, mu, theta))
    }
    fn is_linear_in_theta(&self) -> bool {
        self.linear
    }
}

/// Largest relative error between `grad_theta_drift` and central differences of `drift`.
pub fn gradient_check(model: &dyn Model, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> f64 {
    let analytic = model.grad_theta_drift(seg, mu, theta);
    let scale = analytic.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[j].abs());
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let fd = (model.drift(seg, mu, &plus) - model.drift(seg, mu, &minus)) / (2.0 * h);
        for i in 0..fd.len() {
            worst = worst.max((fd[i] - analytic[(i, j)]).abs() / scale);
        }
    }
    worst
}

/// Analytic Hessian if the model has one, central differences of the gradient otherwise.
pub fn drift_hessian(model: &dyn Model, seg: &Segment, mu: &ParticleEnsemble, theta: &[f64]) -> DriftHessian {
    if let Some(h) = model.hess_theta_drift(seg, mu, theta) {
        return h;
    }
    let p = theta.len();
    (0..p)
        .map(|k| {
            let h = 1e-5 * (1.0 + theta[k].abs());
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[k] += h;
            minus[k] -= h;
            // d/dtheta_k of (grad_theta b)^T, a p x d block
            let diff = model.grad_theta_drift(seg, mu, &plus) - model.grad_theta_drift(seg, mu, &minus);
            diff.transpose() / (2.0 * h)
        })
        .collect()
}
