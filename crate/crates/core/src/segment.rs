//! Grid arithmetic and window segments.
//!
//! A [`GridSpec`] couples the observation horizon and the delay window through
//! a single step size `delta = T/n = r0/M`. All index arithmetic is done on
//! integers; times are only materialised as `f64` at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COMMENSURABILITY_TOL: f64 = 1e-12;

/// Coupled time discretisation of `[-r0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Observation horizon `T`.
    pub horizon: f64,
    /// Number of observation steps on `[0, T]`.
    pub n: usize,
    /// Delay length.
    pub r0: f64,
    /// Number of steps on the delay window `[-r0, 0]`.
    pub m: usize,
    /// Step size `T/n`.
    pub delta: f64,
}

impl GridSpec {
    /// Builds a grid from `(T, n, r0)`, requiring `r0/(T/n)` to be an integer.
    pub fn new(horizon: f64, n: usize, r0: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("T", format!("must be positive and finite, got {horizon}")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::param("r0", format!("must be positive and finite, got {r0}")));
        }
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let delta = horizon / n as f64;
        let ratio = r0 / delta;
        let m = ratio.round();
        if m < 1.0 || (ratio - m).abs() > COMMENSURABILITY_TOL * ratio {
            return Err(Error::GridMismatch { r0, delta });
        }
        Ok(Self { horizon, n, r0, m: m as usize, delta })
    }

    /// Number of nodes of a window segment, `M + 1`.
    pub fn segment_len(&self) -> usize {
        self.m + 1
    }

    /// Number of nodes of a full path on `[-r0, T]`, `n + M + 1`.
    pub fn path_len(&self) -> usize {
        self.n + self.m + 1
    }

    /// Time of path node `j` (node `M` is `t = 0`).
    pub fn node_time(&self, j: usize) -> f64 {
        (j as f64 - self.m as f64) * self.delta
    }
}

/// Same as [`GridSpec::new`].
pub fn make_grid(horizon: f64, n: usize, r0: f64) -> Result<GridSpec> {
    GridSpec::new(horizon, n, r0)
}

/// `floor(t/delta) * delta`.
pub fn floor_time(t: f64, delta: f64) -> f64 {
    (t / delta).floor() * delta
}

/// A `d`-dimensional path on `[-r0, 0]` sampled at the `M + 1` grid nodes.
///
/// Node `i` holds the value at `-r0 + i*delta`; node `M` is time 0. Between
/// nodes the segment is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    dim: usize,
    delta: f64,
    data: Vec<f64>,
}

impl Segment {
    /// Wraps row-major node data (`nodes * dim` values).
    pub fn new(dim: usize, delta: f64, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("segment dimension must be positive".into()));
        }
        if data.len() < 2 * dim || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "segment data length {} is not a multiple of d = {dim} with at least 2 nodes",
                data.len()
            )));
        }
        if !(delta > 0.0) {
            return Err(Error::param("delta", "must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("segment entries must be finite".into()));
        }
        Ok(Self { dim, delta, data })
    }

    /// Scalar segment from node values.
    pub fn scalar(delta: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(1, delta, values)
    }

    /// Samples `f` at the `M + 1` nodes of the grid's delay window.
    pub fn from_fn(grid: &GridSpec, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.segment_len() * dim);
        for i in 0..grid.segment_len() {
            let s = -grid.r0 + i as f64 * grid.delta;
            let v = f(s);
            if v.len() != dim {
                return Err(Error::Shape(format!("initial path returned {} values, expected {dim}", v.len())));
            }
            data.extend(v);
        }
        Self::new(dim, grid.delta, data)
    }

    /// Constant segment.
    pub fn constant(grid: &GridSpec, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub(crate) fn from_raw(dim: usize, delta: f64, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { dim, delta, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of nodes, `M + 1`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Window length `M * delta`.
    pub fn r0(&self) -> f64 {
        (self.len() - 1) as f64 * self.delta
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Value at `s = 0`.
    pub fn head(&self) -> &[f64] {
        self.node(self.len() - 1)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Piecewise-linear evaluation at `s` in `[-r0, 0]`.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>> {
        let r0 = self.r0();
        if !(s >= -r0 && s <= 0.0) {
            return Err(Error::Domain { value: s, lo: -r0, hi: 0.0 });
        }
        let m = self.len() - 1;
        let pos = (s + r0) / self.delta;
        let i = (pos.floor() as usize).min(m);
        let frac = pos - i as f64;
        if i == m || frac == 0.0 {
            return Ok(self.node(i).to_vec());
        }
        let (a, b) = (self.node(i), self.node(i + 1));
        Ok(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect())
    }

    /// Uniform norm: largest Euclidean node norm.
    pub fn sup_norm(&self) -> f64 {
        self.nodes().map(euclid).fold(0.0, f64::max)
    }

    /// Componentwise trapezoid integral over `[-r0, 0]`.
    pub fn integral(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let last = self.len() - 1;
        for (i, node) in self.nodes().enumerate() {
            let w = if i == 0 || i == last { 0.5 } else { 1.0 };
            for (o, v) in out.iter_mut().zip(node) {
                *o += w * v;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.delta);
        out
    }

    /// Trapezoid integral of `|zeta(v)|` over `[-r0, 0]`.
    pub fn abs_integral(&self) -> f64 {
        let last = self.len() - 1;
        let sum: f64 = self
            .nodes()
            .enumerate()
            .map(|(i, node)| if i == 0 || i == last { 0.5 * euclid(node) } else { euclid(node) })
            .sum();
        sum * self.delta
    }

    /// Node-wise difference; both segments must share a shape.
    pub fn sub(&self, other: &Segment) -> Result<Segment> {
        if self.dim != other.dim || self.data.len() != other.data.len() {
            return Err(Error::Shape("segments of different shape".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Segment::from_raw(self.dim, self.delta, data))
    }
}

/// Uniform norm of a segment.
pub fn sup_norm(seg: &Segment) -> f64 {
    seg.sup_norm()
}

/// Continuous evaluation of a segment at `s` in `[-r0, 0]`.
pub fn eval_segment(seg: &Segment, s: f64) -> Result<Vec<f64>> {
    seg.eval(s)
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        v[0].abs()
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A path sampled on every node of `[-r0, T]`.
///
/// The first `M + 1` nodes hold the initial segment; node `M + k` holds the
/// value at `k * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    grid: GridSpec,
    dim: usize,
    data: Vec<f64>,
}

impl DiscretePath {
    pub fn new(grid: GridSpec, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != grid.path_len() * dim {
            return Err(Error::Shape(format!(
                "path data has {} values, expected {} nodes of dimension {dim}",
                data.len(),
                grid.path_len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("path entries must be finite".into()));
        }
        Ok(Self { grid, dim, data })
    }

    /// Starts a path from its initial segment; later nodes are pushed by the scheme.
    pub(crate) fn with_initial(grid: GridSpec, xi: &Segment) -> Result<Self> {
        if xi.len() != grid.segment_len() {
            return Err(Error::Shape(format!(
                "initial segment has {} nodes, grid needs {}",
                xi.len(),
                grid.segment_len()
            )));
        }
        let mut data = Vec::with_capacity(grid.path_len() * xi.dim());
        data.extend_from_slice(xi.as_slice());
        Ok(Self { grid, dim: xi.dim(), data })
    }

    pub(crate) fn push(&mut self, value: &[f64]) {
        debug_assert_eq!(value.len(), self.dim);
        self.data.extend_from_slice(value);
    }

    pub(crate) fn is_complete(&self) -> bool {
        self.data.len() == self.grid.path_len() * self.dim
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes currently stored.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value at path node `j` (time `(j - M) * delta`).
    pub fn node(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// Value at time `k * delta`, `0 <= k <= n`.
    pub fn at_step(&self, k: usize) -> &[f64] {
        self.node(k + self.grid.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// The initial segment `xi`.
    pub fn initial_segment(&self) -> Segment {
        Segment::from_raw(self.dim, self.grid.delta, self.data[..self.grid.segment_len() * self.dim].to_vec())
    }

    /// The interpolated window ending at `k * delta`.
    ///
    /// Sampled on the window grid, the linear interpolation of the observations
    /// at `(k - M) delta, ..., k delta` is exactly that slice of the path.
    pub fn segment_at(&self, k: usize) -> Result<Segment> {
        let available = self.len() - self.grid.segment_len();
        if k > self.grid.n || k > available {
            return Err(Error::IndexOutOfRange { index: k, max: self.grid.n.min(available) });
        }
        let start = k * self.dim;
        let end = (k + self.grid.segment_len()) * self.dim;
        Ok(Segment::from_raw(self.dim, self.grid.delta, self.data[start..end].to_vec()))
    }

    /// Piecewise-linear evaluation at any `t` in `[-r0, T]`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let lo = -self.grid.r0;
        let hi = self.grid.node_time(self.len() - 1);
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain { value: t, lo, hi });
        }
        let pos = (t - lo) / self.grid.delta;
        let last = self.len() - 1;
        let i = (pos.floor() as usize).min(last);
        let frac = pos - i as f64;
        if i == last || frac == 0.0 {
            return Ok(self.node(i).to_vec());
        }
        let (a, b) = (self.node(i), self.node(i + 1));
        Ok(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect())
    }
}

/// The window `Ybar_{k delta}` interpolated from the discrete observations.
pub fn interp_segment(path: &DiscretePath, k: usize) -> Result<Segment> {
    path.segment_at(k)
}
