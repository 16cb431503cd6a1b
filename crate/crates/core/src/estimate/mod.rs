//! Residuals, the least-squares contrast, its gradient and the estimators.
//!
//! For observations `Y` on the grid and a drift form `b_delta` (raw or tamed)
//!
//! ```text
//! P_k(theta)  = Y(k delta) - Y((k-1) delta) - b_delta(Ybar_{(k-1) delta}, L, theta) delta
//! Psi(theta)  = eps^-2 delta^-1 sum_k P_k^T sigma_hat P_k
//! Phi(theta)  = eps^2 (Psi(theta) - Psi(theta0))
//! ```

pub mod optim;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleEnsemble;
use crate::model::{sigma_hat, DriftForm, Model, ThetaBox};
use crate::segment::{DiscretePath, Segment};
use crate::simulate::LawProvider;

pub use optim::{grid_search, nelder_mead, Minimum, OptimizerSettings};

/// A discretely observed path together with the law its coefficients see.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub path: DiscretePath,
    pub law: LawProvider,
    /// Noise scale of the observed process.
    pub epsilon: f64,
    /// Drift convention used in the residuals.
    pub drift_form: DriftForm,
}

impl ObservationSet {
    /// Observations whose residuals use the tamed drift with exponent `alpha`.
    pub fn new(path: DiscretePath, law: LawProvider, epsilon: f64, alpha: f64) -> Result<Self> {
        Self::with_form(path, law, epsilon, DriftForm::tamed(alpha)?)
    }

    pub fn with_form(path: DiscretePath, law: LawProvider, epsilon: f64, drift_form: DriftForm) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("{epsilon} must be finite and non-negative")));
        }
        drift_form.validate()?;
        if path.len() != path.grid().path_len() {
            return Err(Error::Shape("observed path must cover [-r0, T]".into()));
        }
        law.check_grid(path.grid())?;
        Ok(Self { path, law, epsilon, drift_form })
    }

    pub fn n(&self) -> usize {
        self.path.grid().n
    }

    pub fn delta(&self) -> f64 {
        self.path.grid().delta
    }
}

/// Estimation method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Grid,
    NelderMead,
    ClosedForm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Grid => "grid",
            Method::NelderMead => "nelder-mead",
            Method::ClosedForm => "closed-form",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "grid" => Ok(Method::Grid),
            "nelder-mead" => Ok(Method::NelderMead),
            "closed-form" => Ok(Method::ClosedForm),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// Output of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    /// `Psi(theta_hat)`; for `eps = 0` the unnormalised `eps^2 Psi`.
    pub contrast_value: f64,
    pub method: Method,
    pub evaluations: usize,
    pub converged: bool,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone)]
enum StepDrift {
    /// `b(theta) = b0 + G theta` for models linear in `theta`.
    Affine { b0: DVector<f64>, grad: DMatrix<f64> },
    Full { seg: Segment, mu: ParticleEnsemble },
}

#[derive(Debug, Clone)]
struct Step {
    increment: DVector<f64>,
    weight: DMatrix<f64>,
    drift: StepDrift,
}

/// The contrast prepared for repeated evaluation on one data set.
///
/// Windows, laws and `sigma_hat` are computed once; for models linear in
/// `theta` only the affine coefficients of the drift are kept.
pub struct Contrast<'a> {
    model: &'a dyn Model,
    form: DriftForm,
    delta: f64,
    epsilon: f64,
    steps: Vec<Step>,
    scalar: Option<ScalarAffine>,
}

/// Flat copy of the per-step data for scalar models linear in `theta`.
#[derive(Debug, Clone)]
struct ScalarAffine {
    increment: Vec<f64>,
    weight: Vec<f64>,
    b0: Vec<f64>,
    /// Row-major `n x p`.
    grad: Vec<f64>,
}

impl ScalarAffine {
    fn from_steps(steps: &[Step]) -> Option<Self> {
        let mut out = ScalarAffine { increment: Vec::new(), weight: Vec::new(), b0: Vec::new(), grad: Vec::new() };
        for s in steps {
            let StepDrift::Affine { b0, grad } = &s.drift else { return None };
            if b0.len() != 1 {
                return None;
            }
            out.increment.push(s.increment[0]);
            out.weight.push(s.weight[(0, 0)]);
            out.b0.push(b0[0]);
            out.grad.extend(grad.row(0).iter());
        }
        Some(out)
    }

    fn weighted_sum(&self, form: DriftForm, delta: f64, theta: &[f64]) -> f64 {
        let p = theta.len();
        let scale = match form {
            DriftForm::Raw => 0.0,
            DriftForm::Tamed { alpha } => delta.powf(alpha),
        };
        let mut acc = 0.0;
        for k in 0..self.increment.len() {
            let g = &self.grad[k * p..(k + 1) * p];
            let b = self.b0[k] + g.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>();
            let r = self.increment[k] - b / (1.0 + scale * b.abs()) * delta;
            acc += self.weight[k] * r * r;
        }
        acc / delta
    }
}

impl fmt::Debug for Contrast<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Contrast")
            .field("form", &self.form)
            .field("delta", &self.delta)
            .field("epsilon", &self.epsilon)
            .field("n", &self.steps.len())
            .finish()
    }
}

impl<'a> Contrast<'a> {
    pub fn new(obs: &ObservationSet, model: &'a dyn Model) -> Result<Self> {
        Self::with_form(obs, model, obs.drift_form)
    }

    /// As [`Contrast::new`] with the drift convention overridden.
    pub fn with_form(obs: &ObservationSet, model: &'a dyn Model, form: DriftForm) -> Result<Self> {
        form.validate()?;
        let d = model.state_dim();
        if obs.path.dim() != d {
            return Err(Error::Shape(format!("path dimension {} but model state dimension {d}", obs.path.dim())));
        }
        let p = model.param_dim();
        let linear = model.is_linear_in_theta();
        let zero = vec![0.0; p];
        let mut steps = Vec::with_capacity(obs.n());
        for k in 1..=obs.n() {
            let seg = obs.path.segment_at(k - 1)?;
            let mu = obs.law.law_at(&obs.path, k - 1)?;
            let weight = sigma_hat(model, &seg, &mu)?;
            let increment = DVector::from_column_slice(obs.path.at_step(k)) - DVector::from_column_slice(obs.path.at_step(k - 1));
            let drift = if linear {
                StepDrift::Affine { b0: model.drift(&seg, &mu, &zero), grad: model.grad_theta_drift(&seg, &mu, &zero) }
            } else {
                StepDrift::Full { seg, mu }
            };
            steps.push(Step { increment, weight, drift });
        }
        let scalar = ScalarAffine::from_steps(&steps);
        Ok(Self { model, form, delta: obs.delta(), epsilon: obs.epsilon, steps, scalar })
    }

    pub fn form(&self) -> DriftForm {
        self.form
    }

    pub fn n(&self) -> usize {
        self.steps.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn check_theta(&self, theta: &[f64]) {
        assert_eq!(theta.len(), self.model.param_dim(), "theta has the wrong dimension");
    }

    fn raw_drift(&self, step: &Step, theta: &[f64]) -> DVector<f64> {
        match &step.drift {
            StepDrift::Affine { b0, grad } => b0 + grad * DVector::from_column_slice(theta),
            StepDrift::Full { seg, mu } => self.model.drift(seg, mu, theta),
        }
    }

    fn raw_grad(&self, step: &Step, theta: &[f64]) -> DMatrix<f64> {
        match &step.drift {
            StepDrift::Affine { grad, .. } => grad.clone(),
            StepDrift::Full { seg, mu } => self.model.grad_theta_drift(seg, mu, theta),
        }
    }

    fn step_residual(&self, step: &Step, theta: &[f64]) -> DVector<f64> {
        &step.increment - self.form.apply(self.raw_drift(step, theta), self.delta) * self.delta
    }

    /// `P_k(theta)` for `1 <= k <= n`.
    pub fn residual(&self, k: usize, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta);
        if k == 0 || k > self.steps.len() {
            return Err(Error::IndexOutOfRange { index: k, max: self.steps.len() });
        }
        Ok(self.step_residual(&self.steps[k - 1], theta))
    }

    /// `eps^2 Psi(theta) = delta^-1 sum_k P_k^T sigma_hat P_k`.
    pub fn weighted_sum(&self, theta: &[f64]) -> f64 {
        self.check_theta(theta);
        if let Some(fast) = &self.scalar {
            return fast.weighted_sum(self.form, self.delta, theta);
        }
        self.steps
            .iter()
            .map(|s| {
                let r = self.step_residual(s, theta);
                (r.transpose() * &s.weight * &r)[0]
            })
            .sum::<f64>()
            / self.delta
    }

    /// `Psi(theta)`; needs `eps > 0`.
    pub fn psi(&self, theta: &[f64]) -> Result<f64> {
        if self.epsilon <= 0.0 {
            return Err(Error::param("epsilon", "the normalised contrast needs eps > 0"));
        }
        Ok(self.weighted_sum(theta) / (self.epsilon * self.epsilon))
    }

    /// `Phi(theta) = eps^2 (Psi(theta) - Psi(theta0))`.
    pub fn phi(&self, theta: &[f64], theta0: &[f64]) -> f64 {
        self.weighted_sum(theta) - self.weighted_sum(theta0)
    }

    /// `2 sum Gamma^T sigma_hat P_k(theta0) + delta sum Gamma^T sigma_hat Gamma` with
    /// `Gamma = b_delta(theta0) - b_delta(theta)`; equal to [`Contrast::phi`].
    pub fn decomposition(&self, theta: &[f64], theta0: &[f64]) -> f64 {
        self.check_theta(theta);
        self.check_theta(theta0);
        let (mut cross, mut quad) = (0.0, 0.0);
        for s in &self.steps {
            let gamma = self.form.apply(self.raw_drift(s, theta0), self.delta)
                - self.form.apply(self.raw_drift(s, theta), self.delta);
            let wg = &s.weight * &gamma;
            cross += wg.dot(&self.step_residual(s, theta0));
            quad += wg.dot(&gamma);
        }
        2.0 * cross + self.delta * quad
    }

    /// `grad_theta Phi(theta) = -2 sum_k (grad_theta b_delta)^T sigma_hat P_k(theta)`.
    pub fn grad_phi(&self, theta: &[f64]) -> DVector<f64> {
        self.check_theta(theta);
        let mut g = DVector::zeros(theta.len());
        for s in &self.steps {
            let b = self.raw_drift(s, theta);
            let jac = self.form.jacobian(&b, &self.raw_grad(s, theta), self.delta);
            let r = &s.increment - self.form.apply(b, self.delta) * self.delta;
            g -= jac.transpose() * (&s.weight * r) * 2.0;
        }
        g
    }

    /// `eps^-1 grad_theta Phi(theta)`; needs `eps > 0`.
    pub fn scaled_grad_phi(&self, theta: &[f64]) -> Result<DVector<f64>> {
        if self.epsilon <= 0.0 {
            return Err(Error::param("epsilon", "the scaled gradient needs eps > 0"));
        }
        Ok(self.grad_phi(theta) / self.epsilon)
    }

    fn reported(&self, weighted: f64) -> f64 {
        if self.epsilon > 0.0 {
            weighted / (self.epsilon * self.epsilon)
        } else {
            weighted
        }
    }

    /// Minimises the contrast over `bounds`.
    pub fn minimize(&self, bounds: &ThetaBox, method: Method, settings: &OptimizerSettings) -> Result<EstimationResult> {
        if bounds.dim() != self.param_dim() {
            return Err(Error::Shape(format!("box has dimension {} but p = {}", bounds.dim(), self.param_dim())));
        }
        let f = |theta: &[f64]| self.weighted_sum(theta);
        let m = match method {
            Method::Grid => grid_search(f, bounds, settings)?,
            Method::NelderMead => nelder_mead(f, bounds, settings)?,
            Method::ClosedForm => return self.closed_form(),
        };
        Ok(EstimationResult {
            boundary_hit: bounds.on_boundary(&m.x, 1e-9),
            theta_hat: m.x,
            contrast_value: self.reported(m.value),
            method,
            evaluations: m.evaluations,
            converged: m.converged,
        })
    }

    /// The sums `A1..A5` of the untamed normal equations for a scalar model
    /// linear in a two-dimensional `theta`.
    pub fn linear_design(&self) -> Result<[f64; 5]> {
        if !self.model.is_linear_in_theta() || self.model.param_dim() != 2 || self.model.state_dim() != 1 {
            return Err(Error::param("model", "closed form needs d = 1, p = 2 and a drift linear in theta"));
        }
        let mut a = [0.0; 5];
        for s in &self.steps {
            let StepDrift::Affine { b0, grad } = &s.drift else { unreachable!("linear models are cached affinely") };
            let w = s.weight[(0, 0)];
            let (h1, h2) = (grad[(0, 0)], grad[(0, 1)]);
            let y = s.increment[0] - b0[0] * self.delta;
            a[0] += w * h1 * h1;
            a[1] += w * h1 * y;
            a[2] += w * h2 * y;
            a[3] += w * h1 * h2;
            a[4] += w * h2 * h2;
        }
        Ok(a)
    }

    /// Closed-form minimiser of the untamed contrast.
    pub fn closed_form(&self) -> Result<EstimationResult> {
        let theta = solve_linear_design(self.linear_design()?, self.delta)?;
        let raw = Contrast {
            model: self.model,
            form: DriftForm::Raw,
            delta: self.delta,
            epsilon: self.epsilon,
            steps: self.steps.clone(),
            scalar: self.scalar.clone(),
        };
        Ok(EstimationResult {
            contrast_value: raw.reported(raw.weighted_sum(&theta)),
            theta_hat: theta.to_vec(),
            method: Method::ClosedForm,
            evaluations: 1,
            converged: true,
            boundary_hit: false,
        })
    }
}

/// `theta1 = (A2 A5 - A3 A4) / (delta D)`, `theta2 = (A1 A3 - A2 A4) / (delta D)`
/// with `D = A1 A5 - A4^2`.
pub fn solve_linear_design(a: [f64; 5], delta: f64) -> Result<[f64; 2]> {
    let [a1, a2, a3, a4, a5] = a;
    let det = a1 * a5 - a4 * a4;
    let scale = a1 * a5;
    if !(det.abs() > 1e-12 * scale.abs()) {
        return Err(Error::SingularDesign { det, scale });
    }
    Ok([(a2 * a5 - a3 * a4) / (delta * det), (a1 * a3 - a2 * a4) / (delta * det)])
}

/// `P_k(theta)`.
pub fn residual(obs: &ObservationSet, model: &dyn Model, theta: &[f64], k: usize) -> Result<DVector<f64>> {
    if k == 0 || k > obs.n() {
        return Err(Error::IndexOutOfRange { index: k, max: obs.n() });
    }
    let seg = obs.path.segment_at(k - 1)?;
    let mu = obs.law.law_at(&obs.path, k - 1)?;
    let delta = obs.delta();
    let increment = DVector::from_column_slice(obs.path.at_step(k)) - DVector::from_column_slice(obs.path.at_step(k - 1));
    Ok(increment - obs.drift_form.apply(model.drift(&seg, &mu, theta), delta) * delta)
}

/// `Psi(theta)`.
pub fn contrast(obs: &ObservationSet, model: &dyn Model, theta: &[f64]) -> Result<f64> {
    Contrast::new(obs, model)?.psi(theta)
}

/// `grad_theta Phi(theta)`.
pub fn grad_contrast_phi(obs: &ObservationSet, model: &dyn Model, theta: &[f64]) -> Result<DVector<f64>> {
    Ok(Contrast::new(obs, model)?.grad_phi(theta))
}

/// Least-squares estimate over `bounds` with default optimizer settings.
pub fn lse_minimize(obs: &ObservationSet, model: &dyn Model, bounds: &ThetaBox, method: Method) -> Result<EstimationResult> {
    Contrast::new(obs, model)?.minimize(bounds, method, &OptimizerSettings::default())
}

/// Closed-form estimate for a scalar model linear in a two-dimensional `theta`.
pub fn closed_form_linear_lse(obs: &ObservationSet, model: &dyn Model) -> Result<EstimationResult> {
    Contrast::with_form(obs, model, DriftForm::Raw)?.closed_form()
}
