//! Seeded random-walk label propagation and label map helpers.

use nalgebra::DMatrix;

use crate::config::SegmentationConfig;
use crate::error::{Error, Result};
use crate::feature::LabelMap;
use crate::markov_flow::ClusterAssignment;
use crate::matrix::StochasticMatrix;

/// Node count above which [`solve_direct`] refuses to factor a dense system.
pub const DIRECT_SOLVE_LIMIT: usize = 2048;

/// One-hot `N x K` seed matrix. Each node belongs to exactly one cluster, so
/// the row-normalized seed equals the assignment itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMatrix {
    k: usize,
    assignment: Vec<usize>,
}

impl SeedMatrix {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput(
                "seed matrix needs at least one cluster".into(),
            ));
        }
        if let Some(bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidInput(format!("cluster id {bad} >= K = {k}")));
        }
        Ok(Self { k, assignment })
    }

    pub fn from_clusters(c: &ClusterAssignment) -> Self {
        Self {
            k: c.len().max(1),
            assignment: c.assignment.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Row-major `N x K` dense seed distribution.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.n() * self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            q[i * self.k + c] = 1.0;
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    pub gamma: f64,
    pub prop_tol: f64,
    pub max_iters: usize,
}

impl From<&SegmentationConfig> for PropagationParams {
    fn from(cfg: &SegmentationConfig) -> Self {
        Self {
            gamma: cfg.gamma,
            prop_tol: cfg.prop_tol,
            max_iters: cfg.max_prop_iters,
        }
    }
}

impl Default for PropagationParams {
    fn default() -> Self {
        (&SegmentationConfig::default()).into()
    }
}

impl PropagationParams {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::out_of_range("gamma", self.gamma, "0 < gamma < 1"));
        }
        if !(self.prop_tol.is_finite() && self.prop_tol > 0.0) {
            return Err(Error::out_of_range("prop_tol", self.prop_tol, "> 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::out_of_range("max_prop_iters", 0, ">= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PropagationResult {
    /// Row-major `N x K` propagated distribution.
    pub q: Vec<f64>,
    pub k: usize,
    pub iterations: usize,
    /// `max |Q_{t+1} - Q_t|` of the final step.
    pub residual: f64,
    pub converged: bool,
    /// `max |Q_{t+1} - Q_t|` of every step, in order.
    pub step_norms: Vec<f64>,
    pub labels: Vec<usize>,
}

impl PropagationResult {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }
}

fn argmax_low(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Iterates `Q <- (1 - gamma) Q0 + gamma S Q` from `Q0` until the max-norm step
/// falls below `prop_tol` or `max_iters` steps have run.
pub fn propagate(
    s: &StochasticMatrix,
    seeds: &SeedMatrix,
    params: &PropagationParams,
) -> Result<PropagationResult> {
    params.validate()?;
    if seeds.n() != s.n() {
        return Err(Error::dims(format!("{} seed rows", s.n()), seeds.n()));
    }
    let k = seeds.k();
    let q0 = seeds.to_dense();
    let keep = 1.0 - params.gamma;
    let mut q = q0.clone();
    let mut step_norms = Vec::new();
    let mut converged = false;
    while step_norms.len() < params.max_iters {
        let sq = s.mul_dense(&q, k)?;
        let next: Vec<f64> = q0
            .iter()
            .zip(&sq)
            .map(|(seed, walk)| keep * seed + params.gamma * walk)
            .collect();
        let delta = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        step_norms.push(delta);
        if delta < params.prop_tol {
            converged = true;
            break;
        }
    }
    let labels = q.chunks(k).map(argmax_low).collect();
    Ok(PropagationResult {
        q,
        k,
        iterations: step_norms.len(),
        residual: *step_norms.last().expect("at least one step"),
        converged,
        step_norms,
        labels,
    })
}

/// `max |(I - gamma S) Q - (1 - gamma) Q0|`.
pub fn fixed_point_residual(
    s: &StochasticMatrix,
    seeds: &SeedMatrix,
    q: &[f64],
    gamma: f64,
) -> Result<f64> {
    let k = seeds.k();
    let sq = s.mul_dense(q, k)?;
    let q0 = seeds.to_dense();
    Ok(q.iter()
        .zip(&sq)
        .zip(&q0)
        .map(|((qv, sqv), seed)| (qv - gamma * sqv - (1.0 - gamma) * seed).abs())
        .fold(0.0, f64::max))
}

/// Solves `(I - gamma S) Q = (1 - gamma) Q0` by dense LU. Limited to
/// [`DIRECT_SOLVE_LIMIT`] nodes.
pub fn solve_direct(s: &StochasticMatrix, seeds: &SeedMatrix, gamma: f64) -> Result<Vec<f64>> {
    let n = s.n();
    if n > DIRECT_SOLVE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "direct solve limited to {DIRECT_SOLVE_LIMIT} nodes, got {n}"
        )));
    }
    if seeds.n() != n {
        return Err(Error::dims(format!("{n} seed rows"), seeds.n()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::out_of_range("gamma", gamma, "0 < gamma < 1"));
    }
    let k = seeds.k();
    let dense = s.to_dense_vec();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * dense[i * n + j]
    });
    let q0 = seeds.to_dense();
    let b = DMatrix::from_fn(n, k, |i, c| (1.0 - gamma) * q0[i * k + c]);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::InvalidInput("singular propagation system".into()))?;
    Ok((0..n * k).map(|idx| x[(idx / k, idx % k)]).collect())
}

/// Per-node argmax of the propagated distribution, shaped to `h x w`.
pub fn labels_from(result: &PropagationResult, h: usize, w: usize) -> Result<LabelMap> {
    if h * w != result.n() {
        return Err(Error::dims(
            format!("{h}x{w} = {} nodes", h * w),
            result.n(),
        ));
    }
    LabelMap::new(h, w, result.labels.iter().map(|&l| l as u32).collect())
}

/// Nearest-neighbor upsampling: target pixel `(y, x)` copies source pixel
/// `(floor(y * H / th), floor(x * W / tw))`.
pub fn upsample_labels(lm: &LabelMap, target_h: usize, target_w: usize) -> Result<LabelMap> {
    let (h, w) = (lm.height(), lm.width());
    if target_h < h || target_w < w {
        return Err(Error::InvalidInput(format!(
            "upsample target {target_h}x{target_w} is smaller than source {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let sy = y * h / target_h;
        for x in 0..target_w {
            out.push(lm.get(sy, x * w / target_w));
        }
    }
    LabelMap::new(target_h, target_w, out)
}
