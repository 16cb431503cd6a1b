//! Finite particle ensembles as laws on path space.

use std::sync::OnceLock;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::segment::Segment;

/// Largest ensemble size for which [`w2_empirical`] solves the assignment exactly.
pub const EXACT_W2_MAX_PARTICLES: usize = 64;

/// Equal-weight empirical law of `N >= 1` segments sharing one grid.
///
/// The `N = 1` case is a Dirac mass.
#[derive(Debug)]
pub struct ParticleEnsemble {
    particles: Vec<Segment>,
    mean_integral: OnceLock<Vec<f64>>,
}

impl Clone for ParticleEnsemble {
    fn clone(&self) -> Self {
        Self { particles: self.particles.clone(), mean_integral: self.mean_integral.clone() }
    }
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<Segment>) -> Result<Self> {
        let first = particles.first().ok_or_else(|| Error::param("particles", "ensemble must be non-empty"))?;
        let (dim, len) = (first.dim(), first.len());
        if particles.iter().any(|p| p.dim() != dim || p.len() != len) {
            return Err(Error::Shape("ensemble particles must share dimension and length".into()));
        }
        let second_moment = particles.iter().map(|p| p.sup_norm().powi(2)).sum::<f64>() / particles.len() as f64;
        if !second_moment.is_finite() {
            return Err(Error::Shape("ensemble second moment is not finite".into()));
        }
        Ok(Self { particles, mean_integral: OnceLock::new() })
    }

    /// Point mass at `seg`.
    pub fn dirac(seg: Segment) -> Self {
        Self { particles: vec![seg], mean_integral: OnceLock::new() }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Segment] {
        &self.particles
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    /// `(1/N) sum_i f(zeta_i)`.
    pub fn integrate(&self, f: impl Fn(&Segment) -> DVector<f64>) -> DVector<f64> {
        let mut iter = self.particles.iter();
        let mut acc = f(iter.next().expect("non-empty ensemble"));
        for p in iter {
            acc += f(p);
        }
        acc / self.particles.len() as f64
    }

    /// Scalar version of [`ParticleEnsemble::integrate`].
    pub fn integrate_scalar(&self, f: impl Fn(&Segment) -> f64) -> f64 {
        self.particles.iter().map(f).sum::<f64>() / self.particles.len() as f64
    }

    /// Mean of the particles' window integrals `int_{-r0}^0 zeta(v) dv`, cached.
    pub fn mean_integral(&self) -> &[f64] {
        self.mean_integral.get_or_init(|| {
            let n = self.particles.len() as f64;
            let mut acc = vec![0.0; self.dim()];
            for p in &self.particles {
                for (a, v) in acc.iter_mut().zip(p.integral()) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
    }

    /// Empirical second moment `mean ||zeta||_inf^2`.
    pub fn second_moment(&self) -> f64 {
        self.integrate_scalar(|p| p.sup_norm().powi(2))
    }
}

/// `(1/N) sum_i f(zeta_i)`.
pub fn empirical_integral(mu: &ParticleEnsemble, f: impl Fn(&Segment) -> DVector<f64>) -> DVector<f64> {
    mu.integrate(f)
}

/// Empirical W2 distance with sup-norm ground cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Distance {
    pub value: f64,
    /// `false` when the greedy matching was used, in which case `value` is an upper bound.
    pub exact: bool,
}

/// W2 between two equal-size empirical laws, solved as an assignment problem.
///
/// Exact (Hungarian algorithm) up to [`EXACT_W2_MAX_PARTICLES`]; above that a
/// greedy sorted-cost matching gives an upper bound.
pub fn w2_empirical(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<W2Distance> {
    if a.len() != b.len() {
        return Err(Error::UnsupportedCoupling { left: a.len(), right: b.len() });
    }
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for (i, p) in a.particles().iter().enumerate() {
        for (j, q) in b.particles().iter().enumerate() {
            cost[i * n + j] = p.sub(q)?.sup_norm().powi(2);
        }
    }
    let (total, exact) = if n <= EXACT_W2_MAX_PARTICLES {
        let assignment = hungarian(&cost, n);
        (assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>(), true)
    } else {
        (greedy_matching_cost(&cost, n), false)
    };
    Ok(W2Distance { value: (total / n as f64).max(0.0).sqrt(), exact })
}

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting path with row/column potentials, 1-based sentinels.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

fn greedy_matching_cost(cost: &[f64], n: usize) -> f64 {
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    pairs.sort_by(|x, y| cost[x.0 * n + x.1].total_cmp(&cost[y.0 * n + y.1]));
    let (mut row_used, mut col_used) = (vec![false; n], vec![false; n]);
    let mut total = 0.0;
    for (i, j) in pairs {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            total += cost[i * n + j];
        }
    }
    total
}
