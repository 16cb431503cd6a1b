//! Box-constrained minimisers: dense lattice search and Nelder–Mead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ThetaBox;

/// Knobs for [`grid_search`] and [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Lattice points per axis; `None` picks 101 for `p <= 2` and 11 above.
    pub grid_points: Option<usize>,
    /// Half-width of the refinement window, in coarse cells.
    pub refine_cells: usize,
    /// Refinement spacing as a fraction of the coarse spacing.
    pub refine_factor: usize,
    /// Simplex diameter below which Nelder–Mead stops.
    pub simplex_tol: f64,
    pub max_evaluations: usize,
    /// Extra Nelder–Mead runs restarted from the incumbent.
    pub restarts: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grid_points: None,
            refine_cells: 2,
            refine_factor: 10,
            simplex_tol: 1e-8,
            max_evaluations: 10_000,
            restarts: 1,
        }
    }
}

impl OptimizerSettings {
    pub fn points_per_axis(&self, p: usize) -> usize {
        self.grid_points.unwrap_or(if p <= 2 { 101 } else { 11 })
    }
}

/// Best point found by a minimiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Evaluates `f` on the lattice `lo + i * h` per axis and returns the best
/// point; ties go to the lowest flat index.
fn lattice_min<F>(f: &F, lo: &[f64], h: &[f64], counts: &[usize]) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let total: usize = counts.iter().product();
    let point = |mut idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; lo.len()];
        for a in (0..lo.len()).rev() {
            let i = idx % counts[a];
            idx /= counts[a];
            x[a] = lo[a] + i as f64 * h[a];
        }
        x
    };
    let (best, value) = (0..total)
        .into_par_iter()
        .map(|i| (i, finite_or_inf(f(&point(i)))))
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| {
                if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    if best == usize::MAX {
        return (point(0), f64::INFINITY, total);
    }
    (point(best), value, total)
}

/// Dense lattice over the closed box followed by one finer pass around the
/// incumbent.
pub fn grid_search<F>(f: F, bounds: &ThetaBox, settings: &OptimizerSettings) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let p = bounds.dim();
    let g = settings.points_per_axis(p).max(2);
    let counts: Vec<usize> = (0..p).map(|a| if bounds.width(a) > 0.0 { g } else { 1 }).collect();
    let h: Vec<f64> = (0..p).map(|a| bounds.width(a) / (g - 1) as f64).collect();
    let (mut x, mut value, mut evaluations) = lattice_min(&f, &bounds.lower, &h, &counts);
    if !value.is_finite() {
        return Err(Error::EstimationFailed("contrast is not finite at any lattice point".into()));
    }
    if settings.refine_factor > 1 {
        let fine: Vec<f64> = h.iter().map(|s| s / settings.refine_factor as f64).collect();
        let half = (settings.refine_cells * settings.refine_factor) as f64;
        let mut lo = vec![0.0; p];
        let mut fine_counts = vec![1; p];
        for a in 0..p {
            if counts[a] == 1 {
                lo[a] = x[a];
                continue;
            }
            let start = (x[a] - half * fine[a]).max(bounds.lower[a]);
            let end = (x[a] + half * fine[a]).min(bounds.upper[a]);
            // Align the window so that the incumbent stays a lattice point.
            let below = ((x[a] - start) / fine[a] + 1e-9).floor();
            lo[a] = x[a] - below * fine[a];
            fine_counts[a] = below as usize + ((end - x[a]) / fine[a] + 1e-9).floor() as usize + 1;
        }
        let (xr, vr, ev) = lattice_min(&f, &lo, &fine, &fine_counts);
        evaluations += ev;
        if vr < value {
            x = xr;
            value = vr;
        }
    }
    bounds.clamp(&mut x);
    Ok(Minimum { x, value, evaluations, converged: true })
}

/// Nelder–Mead started at the box centre. Trial points leaving the box are
/// reflected back through the violated face and then clamped.
pub fn nelder_mead<F>(f: F, bounds: &ThetaBox, settings: &OptimizerSettings) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    let free: Vec<usize> = (0..bounds.dim()).filter(|&a| bounds.width(a) > 0.0).collect();
    let center = bounds.center();
    let count = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        count.set(count.get() + 1);
        finite_or_inf(f(x))
    };
    if free.is_empty() {
        let value = eval(&center);
        if !value.is_finite() {
            return Err(Error::EstimationFailed("contrast is not finite at the only feasible point".into()));
        }
        return Ok(Minimum { x: center, value, evaluations: count.get(), converged: true });
    }
    let project = |x: &mut Vec<f64>| {
        for &a in &free {
            let (lo, hi) = (bounds.lower[a], bounds.upper[a]);
            if x[a] < lo {
                x[a] = 2.0 * lo - x[a];
            } else if x[a] > hi {
                x[a] = 2.0 * hi - x[a];
            }
            x[a] = x[a].clamp(lo, hi);
        }
    };

    let mut best = (center.clone(), eval(&center));
    let mut converged = false;
    let mut start = center;
    let mut scale: Vec<f64> = free.iter().map(|&a| 0.25 * bounds.width(a)).collect();
    for run in 0..=settings.restarts {
        if run > 0 {
            start = best.0.clone();
            scale = free.iter().map(|&a| 0.05 * bounds.width(a)).collect();
        }
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(free.len() + 1);
        let v0 = eval(&start);
        simplex.push((start.clone(), v0));
        for (j, &a) in free.iter().enumerate() {
            let mut x = start.clone();
            x[a] += scale[j];
            if x[a] > bounds.upper[a] {
                x[a] = start[a] - scale[j];
            }
            project(&mut x);
            let v = eval(&x);
            simplex.push((x, v));
        }
        converged = false;
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if simplex[0].1 < best.1 {
                best = simplex[0].clone();
            }
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| free.iter().map(|&a| (x[a] - simplex[0].0[a]).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            if diameter < settings.simplex_tol {
                converged = true;
                break;
            }
            if count.get() >= settings.max_evaluations {
                break;
            }
            let n = simplex.len() - 1;
            let mut centroid = simplex[0].0.clone();
            for &a in &free {
                centroid[a] = simplex[..n].iter().map(|(x, _)| x[a]).sum::<f64>() / n as f64;
            }
            let along = |t: f64| {
                let mut x = centroid.clone();
                for &a in &free {
                    x[a] = centroid[a] + t * (simplex[n].0[a] - centroid[a]);
                }
                project(&mut x);
                x
            };
            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = eval(&xe);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x0 = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        for &a in &free {
                            vertex.0[a] = x0[a] + 0.5 * (vertex.0[a] - x0[a]);
                        }
                        vertex.1 = eval(&vertex.0);
                    }
                }
            }
        }
        if count.get() >= settings.max_evaluations {
            break;
        }
    }
    if !best.1.is_finite() {
        return Err(Error::EstimationFailed("contrast is not finite at any simplex vertex".into()));
    }
    Ok(Minimum { x: best.0, value: best.1, evaluations: count.get(), converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(a: [f64; 2]) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| (x[0] - a[0]).powi(2) + 3.0 * (x[1] - a[1]).powi(2) + (x[0] - a[0]) * (x[1] - a[1])
    }

    fn unit_box() -> ThetaBox {
        ThetaBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn nelder_mead_finds_interior_quadratic_minimum() {
        let a = [0.3141, 0.7182];
        let m = nelder_mead(quad(a), &unit_box(), &OptimizerSettings::default()).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - a[0]).abs() < 1e-6 && (m.x[1] - a[1]).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn grid_finds_lattice_aligned_minimum() {
        let a = [0.37, 0.052];
        let m = grid_search(quad(a), &unit_box(), &OptimizerSettings::default()).unwrap();
        assert!((m.x[0] - a[0]).abs() < 1e-9 && (m.x[1] - a[1]).abs() < 1e-9, "{:?}", m.x);
        assert_eq!(m.evaluations, 101 * 101 + 41 * 41);
    }

    #[test]
    fn grid_refinement_resolves_off_lattice_minimum() {
        let a = [0.12345, 0.6789];
        let m = grid_search(quad(a), &unit_box(), &OptimizerSettings::default()).unwrap();
        assert!((m.x[0] - a[0]).abs() <= 5e-4 + 1e-12 && (m.x[1] - a[1]).abs() <= 5e-4 + 1e-12);
    }

    #[test]
    fn boundary_minimum_is_returned_on_the_face() {
        let a = [1.4, 0.5];
        let b = unit_box();
        let nm = nelder_mead(quad(a), &b, &OptimizerSettings::default()).unwrap();
        let gr = grid_search(quad(a), &b, &OptimizerSettings::default()).unwrap();
        for x in [&nm.x, &gr.x] {
            assert!(b.contains_closed(x));
            assert!(b.on_boundary(x, 1e-6));
            assert!((x[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_everywhere_fails() {
        let f = |_: &[f64]| f64::NAN;
        assert!(matches!(
            grid_search(f, &unit_box(), &OptimizerSettings::default()),
            Err(Error::EstimationFailed(_))
        ));
        assert!(matches!(
            nelder_mead(f, &unit_box(), &OptimizerSettings::default()),
            Err(Error::EstimationFailed(_))
        ));
    }

    #[test]
    fn evaluation_budget_is_respected() {
        let settings = OptimizerSettings { max_evaluations: 30, restarts: 0, ..Default::default() };
        let m = nelder_mead(|x: &[f64]| x[0].sin() + x[1].cos(), &unit_box(), &settings).unwrap();
        assert!(m.evaluations <= 30 + 4);
    }
}
