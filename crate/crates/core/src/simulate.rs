//! Tamed Euler–Maruyama paths, interacting particle systems and the limit equation.
//!
//! One step of the scheme reads
//!
//! ```text
//! Y(k delta) = Y((k-1) delta) + b_delta(Ybar_{(k-1) delta}, L, theta) delta
//!            + eps * sigma(Ybar_{(k-1) delta}, L) dB_k
//! ```
//!
//! where `Ybar` is the interpolated window and `L` the law supplied by a
//! [`LawProvider`].

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::ParticleEnsemble;
use crate::model::{check_alpha, DriftForm, Model};
use crate::segment::{DiscretePath, GridSpec, Segment};

const PARALLEL_PARTICLE_THRESHOLD: usize = 128;

/// Simulation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Noise scale; `0` switches the noise off.
    pub epsilon: f64,
    /// Taming exponent in `(0, 1/2]`.
    pub alpha: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub grid: GridSpec,
}

impl SimConfig {
    pub fn new(grid: GridSpec, epsilon: f64, alpha: f64, n_particles: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::param("epsilon", format!("{epsilon} is outside [0, 1)")));
        }
        check_alpha(alpha)?;
        if n_particles == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        Ok(Self { epsilon, alpha, n_particles, seed, grid })
    }
}

/// Which law the coefficients see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawMode {
    ParticleEnsemble,
    DiracAtLimitOde,
    SelfDirac,
}

impl fmt::Display for LawMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LawMode::ParticleEnsemble => "particle-ensemble",
            LawMode::DiracAtLimitOde => "dirac-at-limit-ode",
            LawMode::SelfDirac => "self-dirac",
        })
    }
}

impl std::str::FromStr for LawMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "particle-ensemble" => Ok(LawMode::ParticleEnsemble),
            "dirac-at-limit-ode" => Ok(LawMode::DiracAtLimitOde),
            "self-dirac" => Ok(LawMode::SelfDirac),
            other => Err(format!("unknown law mode `{other}`")),
        }
    }
}

/// Source of the law `L` at each step.
#[derive(Debug, Clone)]
pub enum LawProvider {
    /// Point mass at the path's own interpolated window.
    SelfDirac,
    /// Empirical law of co-evolving particle paths.
    Ensemble(Arc<Vec<DiscretePath>>),
    /// Point mass at the limit path's window.
    DiracAtLimit(Arc<DiscretePath>),
}

impl LawProvider {
    pub fn mode(&self) -> LawMode {
        match self {
            LawProvider::SelfDirac => LawMode::SelfDirac,
            LawProvider::Ensemble(_) => LawMode::ParticleEnsemble,
            LawProvider::DiracAtLimit(_) => LawMode::DiracAtLimitOde,
        }
    }

    /// Law at step `k` (time `k delta`) for a path `own`.
    pub fn law_at(&self, own: &DiscretePath, k: usize) -> Result<ParticleEnsemble> {
        match self {
            LawProvider::SelfDirac => Ok(ParticleEnsemble::dirac(own.segment_at(k)?)),
            LawProvider::Ensemble(paths) => {
                ParticleEnsemble::new(paths.iter().map(|p| p.segment_at(k)).collect::<Result<Vec<_>>>()?)
            }
            LawProvider::DiracAtLimit(x0) => Ok(ParticleEnsemble::dirac(x0.segment_at(k)?)),
        }
    }

    /// Checks that stored paths live on `grid`.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let same = |p: &DiscretePath| p.grid() == grid && p.len() == grid.path_len();
        let ok = match self {
            LawProvider::SelfDirac => true,
            LawProvider::Ensemble(paths) => !paths.is_empty() && paths.iter().all(same),
            LawProvider::DiracAtLimit(x0) => same(x0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("law provider paths must be complete and share the observation grid".into()))
        }
    }
}

/// Deterministic per-(replication, particle) random streams.
///
/// The master seed and replication index are mixed into a ChaCha key and the
/// particle index selects the ChaCha stream, so every stream is fixed by its
/// coordinates regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStreams {
    master: u64,
}

impl NoiseStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn stream(&self, replication: u64, particle: u64) -> ChaCha8Rng {
        let key = splitmix64(self.master ^ splitmix64(replication.wrapping_add(0x5851_f42d_4c95_7f2d)));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(particle);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `n` independent `N(0, delta I_m)` increments.
pub fn brownian_increments<R: Rng + ?Sized>(rng: &mut R, grid: &GridSpec, m: usize) -> Vec<DVector<f64>> {
    let sd = grid.delta.sqrt();
    (0..grid.n)
        .map(|_| DVector::from_fn(m, |_, _| sd * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn check_inputs(model: &dyn Model, xi: &Segment, theta: &[f64], grid: &GridSpec) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(Error::Shape(format!("theta has {} entries, model expects {}", theta.len(), model.param_dim())));
    }
    if xi.dim() != model.state_dim() || xi.len() != grid.segment_len() {
        return Err(Error::Shape(format!(
            "initial segment is {}x{}, expected {}x{}",
            xi.len(),
            xi.dim(),
            grid.segment_len(),
            model.state_dim()
        )));
    }
    Ok(())
}

fn check_noise(noise: &[DVector<f64>], grid: &GridSpec, m: usize) -> Result<()> {
    if noise.len() != grid.n || noise.iter().any(|v| v.len() != m) {
        return Err(Error::Shape(format!("need {} increments of dimension {m}", grid.n)));
    }
    Ok(())
}

/// One scheme step from window `seg` under law `mu`.
#[allow(clippy::too_many_arguments)]
fn step(
    model: &dyn Model,
    seg: &Segment,
    mu: &ParticleEnsemble,
    theta: &[f64],
    form: DriftForm,
    delta: f64,
    epsilon: f64,
    noise: Option<&DVector<f64>>,
    k: usize,
) -> Result<Vec<f64>> {
    let mut next = DVector::from_column_slice(seg.head());
    next += form.apply(model.drift(seg, mu, theta), delta) * delta;
    if epsilon != 0.0 {
        if let Some(db) = noise {
            next += model.sigma(seg, mu) * db * epsilon;
        }
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: k });
    }
    Ok(next.as_slice().to_vec())
}

/// Single tamed EM path with an externally supplied law and noise.
pub fn tamed_em_path(
    model: &dyn Model,
    xi: &Segment,
    theta: &[f64],
    cfg: &SimConfig,
    law: &LawProvider,
    increments: &[DVector<f64>],
) -> Result<DiscretePath> {
    let grid = cfg.grid;
    check_inputs(model, xi, theta, &grid)?;
    check_noise(increments, &grid, model.noise_dim())?;
    law.check_grid(&grid)?;
    let form = DriftForm::tamed(cfg.alpha)?;
    let mut path = DiscretePath::with_initial(grid, xi)?;
    for k in 1..=grid.n {
        let seg = path.segment_at(k - 1)?;
        let mu = law.law_at(&path, k - 1)?;
        let next = step(model, &seg, &mu, theta, form, grid.delta, cfg.epsilon, Some(&increments[k - 1]), k)?;
        path.push(&next);
    }
    debug_assert!(path.is_complete());
    Ok(path)
}

/// `N` co-evolving particles driven by the given per-particle increments.
///
/// All particles advance together against the frozen empirical law of the
/// previous step.
pub fn particle_system(
    model: &dyn Model,
    xi: &Segment,
    theta: &[f64],
    cfg: &SimConfig,
    increments: &[Vec<DVector<f64>>],
) -> Result<Vec<DiscretePath>> {
    let grid = cfg.grid;
    check_inputs(model, xi, theta, &grid)?;
    if increments.len() != cfg.n_particles {
        return Err(Error::Shape(format!(
            "{} noise streams for {} particles",
            increments.len(),
            cfg.n_particles
        )));
    }
    for noise in increments {
        check_noise(noise, &grid, model.noise_dim())?;
    }
    let form = DriftForm::tamed(cfg.alpha)?;
    let mut paths: Vec<DiscretePath> =
        (0..cfg.n_particles).map(|_| DiscretePath::with_initial(grid, xi)).collect::<Result<_>>()?;
    for k in 1..=grid.n {
        let segs: Vec<Segment> = paths.iter().map(|p| p.segment_at(k - 1)).collect::<Result<_>>()?;
        let mu = ParticleEnsemble::new(segs.clone())?;
        let advance = |(i, seg): (usize, &Segment)| {
            step(model, seg, &mu, theta, form, grid.delta, cfg.epsilon, Some(&increments[i][k - 1]), k)
        };
        let next: Vec<Vec<f64>> = if cfg.n_particles >= PARALLEL_PARTICLE_THRESHOLD {
            segs.par_iter().enumerate().map(advance).collect::<Result<_>>()?
        } else {
            segs.iter().enumerate().map(advance).collect::<Result<_>>()?
        };
        for (path, value) in paths.iter_mut().zip(&next) {
            path.push(value);
        }
    }
    Ok(paths)
}

/// Per-particle increments for one replication, drawn from [`NoiseStreams`].
pub fn particle_noise(cfg: &SimConfig, m: usize, replication: u64) -> Vec<Vec<DVector<f64>>> {
    let streams = NoiseStreams::new(cfg.seed);
    (0..cfg.n_particles as u64)
        .map(|i| brownian_increments(&mut streams.stream(replication, i), &cfg.grid, m))
        .collect()
}

/// Particle system with noise drawn from the config's seed.
pub fn particle_system_seeded(
    model: &dyn Model,
    xi: &Segment,
    theta: &[f64],
    cfg: &SimConfig,
    replication: u64,
) -> Result<Vec<DiscretePath>> {
    let noise = particle_noise(cfg, model.noise_dim(), replication);
    particle_system(model, xi, theta, cfg, &noise)
}

/// Noise-free tamed recursion with the point-mass law at the path itself.
pub fn limit_ode(model: &dyn Model, xi: &Segment, theta0: &[f64], grid: &GridSpec, alpha: f64) -> Result<DiscretePath> {
    check_inputs(model, xi, theta0, grid)?;
    let form = DriftForm::tamed(alpha)?;
    let mut path = DiscretePath::with_initial(*grid, xi)?;
    for k in 1..=grid.n {
        let seg = path.segment_at(k - 1)?;
        let mu = ParticleEnsemble::dirac(seg.clone());
        let next = step(model, &seg, &mu, theta0, form, grid.delta, 0.0, None, k)?;
        path.push(&next);
    }
    Ok(path)
}

/// Initial window shapes offered by the experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum InitialPath {
    /// `xi(t) = slope * t` on `[-r0, 0]`, so `xi(0) = 0`.
    LinearRamp(f64),
    Constant(f64),
}

impl InitialPath {
    pub fn segment(&self, grid: &GridSpec) -> Result<Segment> {
        match *self {
            InitialPath::LinearRamp(slope) => Segment::from_fn(grid, 1, |t| vec![slope * t]),
            InitialPath::Constant(level) => Segment::constant(grid, &[level]),
        }
    }
}

impl fmt::Display for InitialPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialPath::LinearRamp(s) => write!(f, "linear-ramp({s})"),
            InitialPath::Constant(c) => write!(f, "constant({c})"),
        }
    }
}

/// Writes paths as CSV with columns `t,particle_id,x_1..x_d`.
pub fn write_paths_csv<W: Write>(mut w: W, paths: &[DiscretePath]) -> io::Result<()> {
    let dim = paths.first().map_or(1, |p| p.dim());
    write!(w, "t,particle_id")?;
    for i in 1..=dim {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    for (id, path) in paths.iter().enumerate() {
        for j in 0..path.len() {
            write!(w, "{},{id}", path.grid().node_time(j))?;
            for v in path.node(j) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_model, ExampleModel, FnModel};
    use nalgebra::DMatrix;

    fn zero_drift() -> FnModel {
        FnModel::new(
            1,
            1,
            1,
            |_s, _m, _t| DVector::zeros(1),
            |_s, _m| DMatrix::identity(1, 1),
            |_s, _m, _t| DMatrix::zeros(1, 1),
        )
    }

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 50, 0.2).unwrap()
    }

    #[test]
    fn increments_are_reproducible() {
        let g = grid();
        let s = NoiseStreams::new(42);
        let a = brownian_increments(&mut s.stream(3, 1), &g, 2);
        let b = brownian_increments(&mut s.stream(3, 1), &g, 2);
        assert_eq!(a, b);
        let c = brownian_increments(&mut s.stream(3, 2), &g, 2);
        assert_ne!(a, c);
        let d = brownian_increments(&mut s.stream(4, 1), &g, 2);
        assert_ne!(a, d);
    }

    #[test]
    fn noise_free_zero_drift_is_constant() {
        let g = grid();
        let xi = Segment::from_fn(&g, 1, |t| vec![t + 0.3]).unwrap();
        let cfg = SimConfig::new(g, 0.0, 0.5, 1, 0).unwrap();
        let noise = vec![DVector::from_element(1, 1.0); g.n];
        let path = tamed_em_path(&zero_drift(), &xi, &[0.0], &cfg, &LawProvider::SelfDirac, &noise).unwrap();
        for k in 0..=g.n {
            assert_eq!(path.at_step(k)[0], 0.3);
        }
        let ode = limit_ode(&zero_drift(), &xi, &[0.0], &g, 0.5).unwrap();
        assert_eq!(ode, path);
    }

    #[test]
    fn first_steps_with_constant_drift() {
        // xi = 0 and theta = (c, 0): every step adds c delta / (1 + delta^alpha c).
        let g = GridSpec::new(1.0, 100, 0.1).unwrap();
        let xi = Segment::constant(&g, &[0.0]).unwrap();
        let c = 0.8;
        let ode = limit_ode(&example_model(0.1).unwrap(), &xi, &[c, 0.0], &g, 0.5).unwrap();
        let inc = c * g.delta / (1.0 + g.delta.sqrt() * c);
        for k in 0..=5 {
            assert!((ode.at_step(k)[0] - k as f64 * inc).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let g = grid();
        let model = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let cfg = SimConfig::new(g, 0.1, 0.5, 8, 99).unwrap();
        let a = particle_system_seeded(&model, &xi, &[0.5, 0.3], &cfg, 0).unwrap();
        let b = particle_system_seeded(&model, &xi, &[0.5, 0.3], &cfg, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_particle_matches_self_dirac_path() {
        let g = grid();
        let model = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let cfg = SimConfig::new(g, 0.2, 0.5, 1, 5).unwrap();
        let noise = particle_noise(&cfg, 1, 0);
        let ps = particle_system(&model, &xi, &[0.5, 0.3], &cfg, &noise).unwrap();
        let single = tamed_em_path(&model, &xi, &[0.5, 0.3], &cfg, &LawProvider::SelfDirac, &noise[0]).unwrap();
        assert_eq!(ps[0], single);
    }

    #[test]
    fn permuting_noise_permutes_particles() {
        let g = grid();
        let model = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let cfg = SimConfig::new(g, 0.3, 0.5, 4, 17).unwrap();
        let noise = particle_noise(&cfg, 1, 2);
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| noise[i].clone()).collect();
        let a = particle_system(&model, &xi, &[0.5, 0.3], &cfg, &noise).unwrap();
        let b = particle_system(&model, &xi, &[0.5, 0.3], &cfg, &permuted).unwrap();
        for (slot, &i) in perm.iter().enumerate() {
            for j in 0..a[i].len() {
                assert!((a[i].node(j)[0] - b[slot].node(j)[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_free_particles_collapse_to_limit_path() {
        let g = grid();
        let model = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let ode = limit_ode(&model, &xi, &[0.5, 0.3], &g, 0.5).unwrap();
        for n in [1, 3, 10] {
            let cfg = SimConfig::new(g, 0.0, 0.5, n, 1).unwrap();
            let ps = particle_system_seeded(&model, &xi, &[0.5, 0.3], &cfg, 0).unwrap();
            for p in &ps {
                for j in 0..p.len() {
                    assert!((p.node(j)[0] - ode.node(j)[0]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn segment_head_tracks_state() {
        let g = grid();
        let model = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let cfg = SimConfig::new(g, 0.5, 0.5, 3, 8).unwrap();
        for p in particle_system_seeded(&model, &xi, &[0.5, 0.3], &cfg, 0).unwrap() {
            for k in 0..=g.n {
                assert_eq!(p.segment_at(k).unwrap().head(), p.at_step(k));
            }
        }
    }

    #[test]
    fn empirical_mean_field_equals_pair_average() {
        let g = grid();
        let model: ExampleModel = example_model(0.2).unwrap();
        let xi = InitialPath::LinearRamp(1.0).segment(&g).unwrap();
        let cfg = SimConfig::new(g, 0.5, 0.5, 6, 3).unwrap();
        let ps = particle_system_seeded(&model, &xi, &[0.5, 0.3], &cfg, 0).unwrap();
        let segs: Vec<_> = ps.iter().map(|p| p.segment_at(20).unwrap()).collect();
        let mu = ParticleEnsemble::new(segs.clone()).unwrap();
        let lhs = segs.iter().map(|s| model.mean_field(s, &mu)).sum::<f64>() / 6.0;
        let mut rhs = 0.0;
        for a in &segs {
            for b in &segs {
                rhs += crate::model::example_b0(a, b);
            }
        }
        rhs /= 36.0;
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let blowup = FnModel::new(
            1,
            1,
            1,
            |_s, _m, _t| DVector::zeros(1),
            |s, _m| DMatrix::from_element(1, 1, 1e200 * (1.0 + s.head()[0].abs())),
            |_s, _m, _t| DMatrix::zeros(1, 1),
        );
        let g = grid();
        let xi = Segment::constant(&g, &[1.0]).unwrap();
        let cfg = SimConfig::new(g, 0.5, 0.5, 1, 0).unwrap();
        let noise = vec![DVector::from_element(1, 1.0); g.n];
        let err = tamed_em_path(&blowup, &xi, &[0.0], &cfg, &LawProvider::SelfDirac, &noise).unwrap_err();
        assert!(matches!(err, Error::Divergence { step } if step >= 1 && step <= g.n));
    }

    #[test]
    fn config_validation() {
        let g = grid();
        assert!(SimConfig::new(g, 1.0, 0.5, 1, 0).is_err());
        assert!(SimConfig::new(g, 0.1, 0.6, 1, 0).is_err());
        assert!(SimConfig::new(g, 0.1, 0.5, 0, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let g = GridSpec::new(1.0, 2, 0.5).unwrap();
        let path = DiscretePath::new(g, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut out = Vec::new();
        write_paths_csv(&mut out, &[path.clone(), path]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,particle_id,x_1");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert_eq!(lines[1], "-0.5,0,0");
        assert_eq!(lines[8], "1,1,3");
    }
}
