//! Expand / inflate / prune / normalize iteration to a fixpoint, and attractor
//! based cluster extraction from that fixpoint.

use serde::Serialize;

use crate::config::SegmentationConfig;
use crate::error::{Error, Result};
use crate::matrix::{NonnegMatrix, StochasticMatrix, Storage};

/// Parameters of the flow operator. Unlike [`SegmentationConfig`] this accepts
/// `inflation_r = 1` and `prune_tau = 0` so diagnostics can switch steps off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub expansion_l: u32,
    pub inflation_r: f64,
    pub prune_tau: f64,
    pub flow_tol: f64,
    pub max_iters: usize,
    pub topk_cap: Option<usize>,
    pub merge_attractors: bool,
}

impl From<&SegmentationConfig> for FlowParams {
    fn from(cfg: &SegmentationConfig) -> Self {
        Self {
            expansion_l: cfg.expansion_l,
            inflation_r: cfg.inflation_r,
            prune_tau: cfg.prune_tau,
            flow_tol: cfg.flow_tol,
            max_iters: cfg.max_flow_iters,
            topk_cap: cfg.topk_cap,
            merge_attractors: cfg.merge_attractors,
        }
    }
}

impl Default for FlowParams {
    fn default() -> Self {
        (&SegmentationConfig::default()).into()
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.expansion_l < 1 {
            return Err(Error::out_of_range("expansion_l", self.expansion_l, ">= 1"));
        }
        if !(self.inflation_r.is_finite() && self.inflation_r >= 1.0) {
            return Err(Error::out_of_range("inflation_r", self.inflation_r, ">= 1"));
        }
        if !(self.prune_tau.is_finite() && self.prune_tau >= 0.0) {
            return Err(Error::out_of_range("prune_tau", self.prune_tau, ">= 0"));
        }
        if !(self.flow_tol.is_finite() && self.flow_tol > 0.0) {
            return Err(Error::out_of_range("flow_tol", self.flow_tol, "> 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::out_of_range("max_flow_iters", 0, ">= 1"));
        }
        Ok(())
    }
}

/// `p^l`.
pub fn expand(p: &StochasticMatrix, l: u32) -> Result<StochasticMatrix> {
    p.power(l)
}

/// Entrywise `p^r`, not normalized.
pub fn inflate(p: &NonnegMatrix, r: f64) -> Result<NonnegMatrix> {
    p.inflate(r)
}

/// Zeroes entries `< tau`.
pub fn prune(p: &NonnegMatrix, tau: f64) -> Result<NonnegMatrix> {
    p.prune(tau)
}

/// Nonzero counts observed inside one application of the flow operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepStats {
    pub nnz_expanded: usize,
    pub nnz_inflated: usize,
    pub nnz_pruned: usize,
}

fn expand_capped(p: &StochasticMatrix, params: &FlowParams) -> Result<NonnegMatrix> {
    match (p.storage(), params.topk_cap) {
        (Storage::Sparse, Some(cap)) => {
            let mut acc = p.matrix().clone();
            for _ in 1..params.expansion_l {
                acc = acc.matmul(p.matrix(), Some(cap))?;
            }
            if params.expansion_l == 1 {
                acc = acc.keep_top_k(cap);
            }
            Ok(acc)
        }
        _ => Ok(expand(p, params.expansion_l)?.into_matrix()),
    }
}

/// One application of `RowNorm(Prune(Inflate(P^l)))`.
pub fn flow_step(p: &StochasticMatrix, params: &FlowParams) -> Result<StochasticMatrix> {
    flow_step_with_stats(p, params).map(|(m, _)| m)
}

pub fn flow_step_with_stats(
    p: &StochasticMatrix,
    params: &FlowParams,
) -> Result<(StochasticMatrix, StepStats)> {
    params.validate()?;
    let expanded = expand_capped(p, params)?;
    let inflated = inflate(&expanded, params.inflation_r)?;
    let pruned = prune(&inflated, params.prune_tau)?;
    let stats = StepStats {
        nnz_expanded: expanded.nnz(),
        nnz_inflated: inflated.nnz(),
        nnz_pruned: pruned.nnz(),
    };
    Ok((pruned.row_normalize(), stats))
}

/// Node-to-cluster assignment read off a flow fixpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// Attractor column representing each cluster, ascending.
    pub attractors: Vec<usize>,
    /// Cluster index of every node.
    pub assignment: Vec<usize>,
    /// Columns holding any positive mass, before unused ones were dropped.
    pub candidate_attractors: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.attractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractors.is_empty()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (c == k).then_some(i))
            .collect()
    }
}

/// Assigns every node to the column holding its row maximum (lowest column on
/// ties). Columns with mass that win no row are dropped; cluster ids follow
/// ascending attractor column.
pub fn extract_clusters(pstar: &StochasticMatrix) -> ClusterAssignment {
    let n = pstar.n();
    let mut has_mass = vec![false; n];
    let argmax: Vec<usize> = (0..n)
        .map(|i| {
            let row = pstar.row(i);
            for (j, v) in row.iter() {
                if v > 0.0 {
                    has_mass[j] = true;
                }
            }
            // Stochastic rows are never empty.
            row.argmax().unwrap_or(i)
        })
        .collect();
    let mut attractors = argmax.clone();
    attractors.sort_unstable();
    attractors.dedup();
    let assignment = argmax
        .iter()
        .map(|c| attractors.binary_search(c).expect("argmax is an attractor"))
        .collect();
    ClusterAssignment {
        attractors,
        assignment,
        candidate_attractors: has_mass.iter().filter(|&&b| b).count(),
    }
}

/// [`extract_clusters`], then unions clusters whose attractor columns exchange
/// positive flow in `pstar`.
pub fn extract_clusters_merged(pstar: &StochasticMatrix) -> ClusterAssignment {
    let base = extract_clusters(pstar);
    let k = base.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..k {
        for b in a + 1..k {
            let (ja, jb) = (base.attractors[a], base.attractors[b]);
            if pstar.get(ja, jb) > 0.0 || pstar.get(jb, ja) > 0.0 {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                // Keep the lower index as root so ids stay ordered by attractor.
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let roots: Vec<usize> = (0..k).map(|c| find(&mut parent, c)).collect();
    let mut kept: Vec<usize> = roots.clone();
    kept.sort_unstable();
    kept.dedup();
    ClusterAssignment {
        attractors: kept.iter().map(|&r| base.attractors[r]).collect(),
        assignment: base
            .assignment
            .iter()
            .map(|&c| kept.binary_search(&roots[c]).expect("root kept"))
            .collect(),
        candidate_attractors: base.candidate_attractors,
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub fixpoint: StochasticMatrix,
    pub iterations: usize,
    /// Max-norm change between the last two iterates.
    pub residual: f64,
    pub converged: bool,
    pub clusters: ClusterAssignment,
}

/// One iterate as seen by an observer of [`iterate_to_fixpoint_observed`].
pub struct FlowIterate<'a> {
    pub iteration: usize,
    pub matrix: &'a StochasticMatrix,
    pub residual: f64,
    pub stats: StepStats,
}

/// Line-delimited trace record for one flow iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub residual: f64,
    pub nnz: usize,
    pub clusters: usize,
}

impl TraceRecord {
    pub fn from_iterate(it: &FlowIterate<'_>) -> Self {
        Self {
            iteration: it.iteration,
            residual: it.residual,
            nnz: it.matrix.nnz(),
            clusters: extract_clusters(it.matrix).len(),
        }
    }
}

pub fn iterate_to_fixpoint(p0: &StochasticMatrix, params: &FlowParams) -> Result<FlowResult> {
    iterate_to_fixpoint_observed(p0, params, |_| {})
}

/// Applies [`flow_step`] until the max-norm change drops below `flow_tol` or
/// `max_iters` steps have run. Hitting the cap is reported through
/// `converged = false`, not as an error.
pub fn iterate_to_fixpoint_observed(
    p0: &StochasticMatrix,
    params: &FlowParams,
    mut observer: impl FnMut(&FlowIterate<'_>),
) -> Result<FlowResult> {
    params.validate()?;
    let mut current = p0.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iters {
        let (next, stats) = flow_step_with_stats(&current, params)?;
        residual = next.max_abs_diff(&current)?;
        iterations += 1;
        current = next;
        observer(&FlowIterate {
            iteration: iterations,
            matrix: &current,
            residual,
            stats,
        });
        if residual < params.flow_tol {
            converged = true;
            break;
        }
    }
    let clusters = if params.merge_attractors {
        extract_clusters_merged(&current)
    } else {
        extract_clusters(&current)
    };
    Ok(FlowResult {
        fixpoint: current,
        iterations,
        residual,
        converged,
        clusters,
    })
}
