use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelChoice};
use crate::asymptotics::{LimitQuantities, MatrixJson};
use crate::error::{Error, Result};
use crate::estimate::{Contrast, EstimationResult, ObservationSet, OptimizerSettings};
use crate::model::{example_model, Model};
use crate::segment::{DiscretePath, GridSpec};
use crate::simulate::{
    brownian_increments, limit_ode, particle_system_seeded, tamed_em_path, LawMode, LawProvider, NoiseStreams,
    SimConfig,
};

/// Which study produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Consistency,
    Normality,
    Rate,
    Estimate,
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub epsilon: f64,
    pub n: usize,
    pub rep: usize,
    /// Empty when the replication failed.
    pub theta_hat: Vec<f64>,
    pub err_norm: Option<f64>,
    pub method: String,
    pub runtime_ms: Option<f64>,
}

/// Error statistics of one `(epsilon, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub epsilon: f64,
    pub n: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub median_err: f64,
    pub mean_err: f64,
    pub boundary_hits: usize,
}

/// Median errors across the noise levels of one `n`, largest `epsilon` first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub medians: Vec<f64>,
    pub strictly_decreasing: bool,
    /// Median at the largest `epsilon` over the median at the smallest.
    pub ratio_first_last: f64,
}

/// Limit covariance on the grid with `n` steps; `None` if not identifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub n: usize,
    pub limit_covariance: Option<MatrixJson>,
}

/// Statistics of `S = eps^-1 (theta_hat - theta0)` in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityCell {
    pub epsilon: f64,
    pub n: usize,
    /// `false` for `eps = 0`, where `S` is undefined.
    pub defined: bool,
    pub samples: usize,
    pub mean: Vec<f64>,
    pub covariance: Option<MatrixJson>,
    pub target: Option<MatrixJson>,
    pub rel_frobenius_error: Option<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// `|mean_i| <= 4 sqrt(cov_ii / R)` for every axis.
    pub mean_within_clt_bound: bool,
}

/// Self-convergence error at ladder level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLevel {
    pub level: u32,
    pub delta: f64,
    pub n: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub reference_level: u32,
    pub levels: Vec<RateLevel>,
    /// Least-squares slope of `log error` against `log delta`.
    pub slope: Option<f64>,
    /// Set when every error is at round-off level and no slope is fitted.
    pub exact: bool,
}

/// Everything a study produces; a pure function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyKind,
    pub version: String,
    pub law_mode: LawMode,
    pub config: ExperimentConfig,
    pub optimizer: OptimizerSettings,
    #[serde(skip)]
    pub records: Vec<Record>,
    pub cells: Vec<CellSummary>,
    pub monotonicity: Vec<Monotonicity>,
    pub targets: Vec<Target>,
    pub normality: Vec<NormalityCell>,
    pub rate: Option<RateSummary>,
    /// Estimator outputs, kept only by the single-replication command.
    pub estimates: Vec<EstimationResult>,
}

impl StudyReport {
    fn new(study: StudyKind, cfg: &ExperimentConfig) -> Self {
        Self {
            study,
            version: crate::VERSION.to_string(),
            law_mode: cfg.law_mode,
            config: cfg.clone(),
            optimizer: OptimizerSettings::default(),
            records: Vec::new(),
            cells: Vec::new(),
            monotonicity: Vec::new(),
            targets: Vec::new(),
            normality: Vec::new(),
            rate: None,
            estimates: Vec::new(),
        }
    }
}

fn example_for(cfg: &ExperimentConfig) -> Result<crate::model::ExampleModel> {
    if cfg.model != ModelChoice::Example {
        return Err(Error::Config {
            line: 0,
            key: "model".into(),
            reason: "custom-hook models must be passed to the *_with study functions".into(),
        });
    }
    example_model(cfg.r0)
}

fn check_model(cfg: &ExperimentConfig, model: &dyn Model) -> Result<()> {
    if model.param_dim() != cfg.theta0.len() {
        return Err(Error::Shape(format!("model has p = {} but theta0 has {}", model.param_dim(), cfg.theta0.len())));
    }
    if model.state_dim() != 1 {
        return Err(Error::Shape("config initial paths are scalar; the model must have d = 1".into()));
    }
    Ok(())
}

/// Simulates the observations of replication `rep` on `grid` at noise `epsilon`.
///
/// `x0` is the limit path, needed only for the Dirac-at-limit law mode.
pub fn observe(
    model: &dyn Model,
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    epsilon: f64,
    rep: u64,
    x0: Option<&Arc<DiscretePath>>,
) -> Result<ObservationSet> {
    let xi = cfg.initial_path.segment(grid)?;
    let sim = SimConfig::new(*grid, epsilon, cfg.alpha, cfg.n_particles, cfg.seed)?;
    let single = |law: LawProvider| -> Result<ObservationSet> {
        let noise = brownian_increments(&mut NoiseStreams::new(cfg.seed).stream(rep, 0), grid, model.noise_dim());
        let path = tamed_em_path(model, &xi, &cfg.theta0, &sim, &law, &noise)?;
        ObservationSet::new(path, law, epsilon, cfg.alpha)
    };
    match cfg.law_mode {
        LawMode::ParticleEnsemble => {
            let paths = particle_system_seeded(model, &xi, &cfg.theta0, &sim, rep)?;
            let observed = paths[0].clone();
            ObservationSet::new(observed, LawProvider::Ensemble(Arc::new(paths)), epsilon, cfg.alpha)
        }
        LawMode::SelfDirac => single(LawProvider::SelfDirac),
        LawMode::DiracAtLimitOde => {
            let x0 = match x0 {
                Some(x0) => x0.clone(),
                None => Arc::new(limit_ode(model, &xi, &cfg.theta0, grid, cfg.alpha)?),
            };
            single(LawProvider::DiracAtLimit(x0))
        }
    }
}

/// Simulates and estimates one replication with the configured estimator.
pub fn estimate_replication(
    model: &dyn Model,
    cfg: &ExperimentConfig,
    grid: &GridSpec,
    epsilon: f64,
    rep: u64,
    x0: Option<&Arc<DiscretePath>>,
) -> Result<EstimationResult> {
    let obs = observe(model, cfg, grid, epsilon, rep, x0)?;
    Contrast::new(&obs, model)?.minimize(&cfg.theta_box, cfg.estimator, &OptimizerSettings::default())
}

fn err_norm(theta: &[f64], theta0: &[f64]) -> f64 {
    theta.iter().zip(theta0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

struct Cell {
    epsilon: f64,
    n: usize,
    results: Vec<Result<EstimationResult>>,
    runtimes: Vec<f64>,
}

fn limit_path(model: &dyn Model, cfg: &ExperimentConfig, grid: &GridSpec) -> Result<DiscretePath> {
    limit_ode(model, &cfg.initial_path.segment(grid)?, &cfg.theta0, grid, cfg.alpha)
}

fn run_cells(model: &dyn Model, cfg: &ExperimentConfig, report: &mut StudyReport) -> Result<Vec<Cell>> {
    check_model(cfg, model)?;
    let mut cells = Vec::new();
    for &n in &cfg.n_list {
        let grid = cfg.grid(n)?;
        let x0 = Arc::new(limit_path(model, cfg, &grid)?);
        let target = LimitQuantities::new(model, &x0, &cfg.theta0)?.limit_cov().ok();
        report.targets.push(Target { n, limit_covariance: target.as_ref().map(MatrixJson::from) });
        for &epsilon in &cfg.epsilons {
            let outcomes: Vec<(Result<EstimationResult>, f64)> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let start = Instant::now();
                    let r = estimate_replication(model, cfg, &grid, epsilon, rep as u64, Some(&x0));
                    (r, start.elapsed().as_secs_f64() * 1e3)
                })
                .collect();
            let (results, runtimes) = outcomes.into_iter().unzip();
            let cell = Cell { epsilon, n, results, runtimes };
            if cell.results.iter().all(|r| r.is_err()) {
                let first = cell.results[0].as_ref().unwrap_err();
                return Err(Error::EstimationFailed(format!(
                    "cell (epsilon = {epsilon}, n = {n}): every replication failed; first error: {first}"
                )));
            }
            cells.push(cell);
        }
    }
    for cell in &cells {
        let mut errs = Vec::new();
        let mut boundary_hits = 0;
        for (rep, (r, ms)) in cell.results.iter().zip(&cell.runtimes).enumerate() {
            let runtime_ms = cfg.timing.then_some(*ms);
            let record = match r {
                Ok(est) => {
                    let e = err_norm(&est.theta_hat, &cfg.theta0);
                    errs.push(e);
                    boundary_hits += usize::from(est.boundary_hit);
                    Record {
                        epsilon: cell.epsilon,
                        n: cell.n,
                        rep,
                        theta_hat: est.theta_hat.clone(),
                        err_norm: Some(e),
                        method: est.method.to_string(),
                        runtime_ms,
                    }
                }
                Err(_) => Record {
                    epsilon: cell.epsilon,
                    n: cell.n,
                    rep,
                    theta_hat: Vec::new(),
                    err_norm: None,
                    method: "failed".into(),
                    runtime_ms,
                },
            };
            report.records.push(record);
        }
        report.cells.push(CellSummary {
            epsilon: cell.epsilon,
            n: cell.n,
            succeeded: errs.len(),
            failed: cell.results.len() - errs.len(),
            median_err: median(&errs),
            mean_err: errs.iter().sum::<f64>() / errs.len() as f64,
            boundary_hits,
        });
    }
    Ok(cells)
}

/// Errors of the estimator over the `(epsilon, n)` grid of the config.
pub fn run_consistency_sweep(cfg: &ExperimentConfig) -> Result<StudyReport> {
    run_consistency_sweep_with(cfg, &example_for(cfg)?)
}

/// [`run_consistency_sweep`] with user-supplied coefficients.
pub fn run_consistency_sweep_with(cfg: &ExperimentConfig, model: &dyn Model) -> Result<StudyReport> {
    let mut report = StudyReport::new(StudyKind::Consistency, cfg);
    run_cells(model, cfg, &mut report)?;
    for &n in &cfg.n_list {
        let mut pairs: Vec<(f64, f64)> =
            report.cells.iter().filter(|c| c.n == n).map(|c| (c.epsilon, c.median_err)).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let medians: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        report.monotonicity.push(Monotonicity {
            n,
            epsilons: pairs.iter().map(|p| p.0).collect(),
            strictly_decreasing: medians.windows(2).all(|w| w[1] < w[0]),
            ratio_first_last: medians[0] / medians[medians.len() - 1],
            medians,
        });
    }
    Ok(report)
}

fn normality_cell(cell: &Cell, cfg: &ExperimentConfig, target: Option<&DMatrix<f64>>) -> NormalityCell {
    let p = cfg.theta0.len();
    let undefined = |samples| NormalityCell {
        epsilon: cell.epsilon,
        n: cell.n,
        defined: false,
        samples,
        mean: Vec::new(),
        covariance: None,
        target: target.map(MatrixJson::from),
        rel_frobenius_error: None,
        skewness: Vec::new(),
        excess_kurtosis: Vec::new(),
        mean_within_clt_bound: false,
    };
    let s: Vec<Vec<f64>> = cell
        .results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|est| est.theta_hat.iter().zip(&cfg.theta0).map(|(t, t0)| (t - t0) / cell.epsilon).collect())
        .collect();
    let r = s.len();
    if cell.epsilon == 0.0 || r < 2 {
        return undefined(r);
    }
    let mean: Vec<f64> = (0..p).map(|i| s.iter().map(|x| x[i]).sum::<f64>() / r as f64).collect();
    let cov = DMatrix::from_fn(p, p, |i, j| {
        s.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (r - 1) as f64
    });
    let central = |i: usize, k: i32| s.iter().map(|x| (x[i] - mean[i]).powi(k)).sum::<f64>() / r as f64;
    let skewness = (0..p).map(|i| central(i, 3) / central(i, 2).powf(1.5)).collect();
    let excess_kurtosis = (0..p).map(|i| central(i, 4) / central(i, 2).powi(2) - 3.0).collect();
    let mean_within_clt_bound = (0..p).all(|i| mean[i].abs() <= 4.0 * (cov[(i, i)] / r as f64).sqrt());
    NormalityCell {
        epsilon: cell.epsilon,
        n: cell.n,
        defined: true,
        samples: r,
        rel_frobenius_error: target.map(|t| (&cov - t).norm() / t.norm()),
        covariance: Some(MatrixJson::from(&cov)),
        target: target.map(MatrixJson::from),
        mean,
        skewness,
        excess_kurtosis,
        mean_within_clt_bound,
    }
}

/// Distribution of `eps^-1 (theta_hat - theta0)` against the limit covariance.
pub fn run_normality_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    run_normality_study_with(cfg, &example_for(cfg)?)
}

/// [`run_normality_study`] with user-supplied coefficients.
pub fn run_normality_study_with(cfg: &ExperimentConfig, model: &dyn Model) -> Result<StudyReport> {
    let mut report = StudyReport::new(StudyKind::Normality, cfg);
    let cells = run_cells(model, cfg, &mut report)?;
    for cell in &cells {
        let target = report
            .targets
            .iter()
            .find(|t| t.n == cell.n)
            .and_then(|t| t.limit_covariance.as_ref())
            .map(DMatrix::from);
        report.normality.push(normality_cell(cell, cfg, target.as_ref()));
    }
    Ok(report)
}

/// Self-convergence of the noise-free scheme over `delta_j = r0 2^-j`.
pub fn run_rate_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    run_rate_study_with(cfg, &example_for(cfg)?)
}

/// [`run_rate_study`] with user-supplied coefficients.
pub fn run_rate_study_with(cfg: &ExperimentConfig, model: &dyn Model) -> Result<StudyReport> {
    check_model(cfg, model)?;
    if cfg.rate_levels.len() < 3 {
        return Err(Error::Config { line: 0, key: "rate_levels".into(), reason: "need at least 3 ladder points".into() });
    }
    let ladder_grid = |j: u32| -> Result<GridSpec> {
        let steps = cfg.horizon * 2f64.powi(j as i32) / cfg.r0;
        cfg.grid(steps.round() as usize).map_err(|e| Error::Config {
            line: 0,
            key: "rate_levels".into(),
            reason: format!("level {j}: {e}"),
        })
    };
    let solve = |j: u32| -> Result<DiscretePath> { limit_path(model, cfg, &ladder_grid(j)?) };
    let reference = solve(cfg.rate_reference)?;
    let levels: Vec<RateLevel> = cfg
        .rate_levels
        .par_iter()
        .map(|&j| {
            let path = solve(j)?;
            let stride = 1usize << (cfg.rate_reference - j);
            let error = (0..path.len())
                .map(|i| {
                    path.node(i).iter().zip(reference.node(i * stride)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            let grid = path.grid();
            Ok(RateLevel { level: j, delta: grid.delta, n: grid.n, error })
        })
        .collect::<Result<_>>()?;
    let scale = reference.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let exact = levels.iter().all(|l| l.error <= 1e-13 * scale);
    let slope = (!exact).then(|| {
        let xs: Vec<f64> = levels.iter().map(|l| l.delta.ln()).collect();
        let ys: Vec<f64> = levels.iter().map(|l| l.error.max(f64::MIN_POSITIVE).ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    });
    let mut report = StudyReport::new(StudyKind::Rate, cfg);
    report.law_mode = LawMode::SelfDirac;
    for l in &levels {
        report.records.push(Record {
            epsilon: 0.0,
            n: l.n,
            rep: 0,
            theta_hat: cfg.theta0.clone(),
            err_norm: Some(l.error),
            method: "self-convergence".into(),
            runtime_ms: None,
        });
    }
    report.rate = Some(RateSummary { reference_level: cfg.rate_reference, levels, slope, exact });
    Ok(report)
}
