//! Hilbert projective metric and measurements of how the flow operator and its
//! pieces act on it.
//!
//! Only identities that hold analytically are checked here. The contraction
//! behaviour of the full flow operator is measured and reported, never assumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::markov_flow::{iterate_to_fixpoint_observed, FlowParams};
use crate::matrix::{NonnegMatrix, StochasticMatrix};

/// Tolerance used for the non-expansiveness check of positive linear maps.
pub const NONEXPANSIVE_TOL: f64 = 1e-9;

pub const INFLATION_NOTE: &str =
    "Inflation raises every componentwise ratio to the power r, so it \
scales the Hilbert distance by exactly r (measured above) and has unbounded projective diameter. \
The bound tanh(ln r / 4) therefore does not follow for inflation, and the contraction ratios of \
the composite operator are reported as measured rather than checked against it.";

/// `max_i ln(x_i / y_i) - min_i ln(x_i / y_i)` for strictly positive vectors.
pub fn hilbert_metric(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::InvalidInput(
            "hilbert metric of empty vectors".into(),
        ));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::out_of_range("component", v, "finite and > 0"));
    }
    Ok(log_ratio_spread(x, y))
}

fn log_ratio_spread(x: &[f64], y: &[f64]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in x.iter().zip(y) {
        let l = a.ln() - b.ln();
        lo = lo.min(l);
        hi = hi.max(l);
    }
    hi - lo
}

/// Like [`hilbert_metric`] but defined on the boundary of the cone: any zero
/// component gives `+inf`.
pub fn hilbert_metric_extended(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "hilbert metric needs nonnegative finite vectors".into(),
        ));
    }
    if x.iter().chain(y).any(|v| *v == 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(log_ratio_spread(x, y))
}

/// `tanh(ln r / 4)`, the contraction coefficient bound quoted for the flow operator.
pub fn birkhoff_bound(r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 1.0) {
        return Err(Error::out_of_range("inflation_r", r, "> 1"));
    }
    Ok((r.ln() / 4.0).tanh())
}

/// Normalized elementwise power.
pub fn inflate_vector(x: &[f64], r: f64) -> Vec<f64> {
    let powered: Vec<f64> = x.iter().map(|v| v.powf(r)).collect();
    let s: f64 = powered.iter().sum();
    powered.into_iter().map(|v| v / s).collect()
}

fn positive_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z.exp()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonexpansivenessSummary {
    pub trials: usize,
    /// Pairs with `d_H(x, y) = 0` contribute no ratio.
    pub skipped: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Samples positive `x, y` and compares `d_H(Ax, Ay)` with `d_H(x, y)`.
pub fn measure_linear_nonexpansiveness(
    a: &NonnegMatrix,
    trials: usize,
    seed: u64,
) -> Result<NonexpansivenessSummary> {
    let n = a.n();
    let rows = a.to_rows();
    if rows.iter().flatten().any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput(
            "matrix must be strictly positive".into(),
        ));
    }
    let apply = |x: &[f64]| -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = NonexpansivenessSummary {
        trials,
        skipped: 0,
        max_ratio: 0.0,
        violations: 0,
    };
    for _ in 0..trials {
        let x = positive_vector(&mut rng, n);
        let y = positive_vector(&mut rng, n);
        let before = hilbert_metric(&x, &y)?;
        let after = hilbert_metric(&apply(&x), &apply(&y))?;
        if after > before + NONEXPANSIVE_TOL {
            out.violations += 1;
        }
        if before > 0.0 {
            out.max_ratio = out.max_ratio.max(after / before);
        } else {
            out.skipped += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub inflation_r: f64,
    pub trials: usize,
    pub skipped: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Largest `|ratio - r|`.
    pub max_deviation: f64,
}

/// Measures `d_H(inflate(x), inflate(y)) / d_H(x, y)` on random positive pairs.
pub fn measure_inflation_scaling(
    r: f64,
    dim: usize,
    trials: usize,
    seed: u64,
) -> Result<ScalingSummary> {
    if !(r.is_finite() && r > 1.0) {
        return Err(Error::out_of_range("inflation_r", r, "> 1"));
    }
    if dim < 2 {
        return Err(Error::out_of_range("dim", dim, ">= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(trials);
    let mut skipped = 0;
    for _ in 0..trials {
        let x = positive_vector(&mut rng, dim);
        let y = positive_vector(&mut rng, dim);
        let before = hilbert_metric(&x, &y)?;
        if before == 0.0 {
            skipped += 1;
            continue;
        }
        let after = hilbert_metric(&inflate_vector(&x, r), &inflate_vector(&y, r))?;
        ratios.push(after / before);
    }
    Ok(scaling_summary(r, trials, skipped, &ratios))
}

fn scaling_summary(r: f64, trials: usize, skipped: usize, ratios: &[f64]) -> ScalingSummary {
    let fold = |init: f64, f: fn(f64, f64) -> f64| ratios.iter().copied().fold(init, f);
    ScalingSummary {
        inflation_r: r,
        trials,
        skipped,
        min_ratio: fold(f64::INFINITY, f64::min),
        max_ratio: fold(f64::NEG_INFINITY, f64::max),
        mean_ratio: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
        max_deviation: ratios.iter().map(|v| (v - r).abs()).fold(0.0, f64::max),
    }
}

/// Finite/infinite split of a batch of distances.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DistanceSummary {
    pub finite: usize,
    pub infinite: usize,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

impl DistanceSummary {
    fn from_values(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        Self {
            finite: finite.len(),
            infinite: values.len() - finite.len(),
            max: finite.iter().copied().reduce(f64::max),
            mean: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationContraction {
    pub iteration: usize,
    pub residual: f64,
    pub nnz: usize,
    /// `d_H` between a sampled row and the same row one iterate earlier.
    pub step_distance: DistanceSummary,
    /// `d_H` between the two rows of each sampled pair.
    pub pair_distance: DistanceSummary,
    /// Per-pair `d_H_t / d_H_{t-1}`, over pairs finite and nonzero at both steps.
    pub max_pair_ratio: Option<f64>,
    pub mean_pair_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub inflation_r: f64,
    pub expansion_l: u32,
    pub prune_tau: f64,
    pub birkhoff_bound: Option<f64>,
    pub inflation_scaling: Option<ScalingSummary>,
    pub nonexpansiveness: Option<NonexpansivenessSummary>,
    pub nodes: usize,
    pub sampled_pairs: Vec<(usize, usize)>,
    pub initial_pair_distance: DistanceSummary,
    pub iterations: Vec<IterationContraction>,
    /// First iterate at which any tracked distance was infinite (0 is the input).
    pub first_infinite_iteration: Option<usize>,
    pub converged: bool,
    pub clusters: usize,
    pub note: String,
}

fn sample_pairs(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

/// Runs the flow operator from `p0` and records Hilbert distances of sampled
/// rows at every iterate. Zero entries show up as infinite distances; the
/// report only measures and never fails on a bound.
pub fn empirical_flow_contraction(
    p0: &StochasticMatrix,
    params: &FlowParams,
    row_pairs: usize,
    seed: u64,
) -> Result<ContractionReport> {
    params.validate()?;
    let n = p0.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_pairs(n, row_pairs, &mut rng);
    let mut tracked: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    tracked.sort_unstable();
    tracked.dedup();

    let snapshot = |m: &StochasticMatrix| -> Vec<Vec<f64>> {
        tracked.iter().map(|&i| m.row(i).to_dense(n)).collect()
    };
    let slot = |i: usize| tracked.binary_search(&i).expect("tracked row");
    let distances = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(i, j)| hilbert_metric_extended(&rows[slot(i)], &rows[slot(j)]))
            .collect()
    };

    let mut prev_rows = snapshot(p0);
    let mut prev_pair = distances(&prev_rows)?;
    let initial_pair_distance = DistanceSummary::from_values(&prev_pair);
    let mut first_infinite = (initial_pair_distance.infinite > 0).then_some(0);
    let mut records = Vec::new();
    let mut failure: Option<Error> = None;

    let result = iterate_to_fixpoint_observed(p0, params, |it| {
        if failure.is_some() {
            return;
        }
        let rows = snapshot(it.matrix);
        let measured = (|| -> Result<(Vec<f64>, Vec<f64>)> {
            let step = rows
                .iter()
                .zip(&prev_rows)
                .map(|(a, b)| hilbert_metric_extended(a, b))
                .collect::<Result<Vec<f64>>>()?;
            Ok((step, distances(&rows)?))
        })();
        let (step, pair) = match measured {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        let ratios: Vec<f64> = pair
            .iter()
            .zip(&prev_pair)
            .filter(|(now, before)| now.is_finite() && before.is_finite() && **before > 0.0)
            .map(|(now, before)| now / before)
            .collect();
        let record = IterationContraction {
            iteration: it.iteration,
            residual: it.residual,
            nnz: it.matrix.nnz(),
            step_distance: DistanceSummary::from_values(&step),
            pair_distance: DistanceSummary::from_values(&pair),
            max_pair_ratio: ratios.iter().copied().reduce(f64::max),
            mean_pair_ratio: (!ratios.is_empty())
                .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        };
        if first_infinite.is_none()
            && (record.step_distance.infinite > 0 || record.pair_distance.infinite > 0)
        {
            first_infinite = Some(it.iteration);
        }
        records.push(record);
        prev_rows = rows;
        prev_pair = pair;
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let r = params.inflation_r;
    let (bound, scaling) = if r > 1.0 {
        (
            Some(birkhoff_bound(r)?),
            Some(measure_inflation_scaling(r, n.clamp(2, 64), 100, seed)?),
        )
    } else {
        (None, None)
    };
    let positive = p0.matrix().nnz() == n * n;
    let nonexpansiveness = if positive && n <= 512 {
        Some(measure_linear_nonexpansiveness(p0.matrix(), 100, seed)?)
    } else {
        None
    };
    Ok(ContractionReport {
        inflation_r: r,
        expansion_l: params.expansion_l,
        prune_tau: params.prune_tau,
        birkhoff_bound: bound,
        inflation_scaling: scaling,
        nonexpansiveness,
        nodes: n,
        sampled_pairs: pairs,
        initial_pair_distance,
        iterations: records,
        first_infinite_iteration: first_infinite,
        converged: result.converged,
        clusters: result.clusters.len(),
        note: INFLATION_NOTE.to_string(),
    })
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "-".to_string(),
    }
}

impl ContractionReport {
    /// Human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "nodes {}  l {}  r {}  prune_tau {}  pairs {}",
            self.nodes,
            self.expansion_l,
            self.inflation_r,
            self.prune_tau,
            self.sampled_pairs.len()
        );
        let _ = writeln!(
            s,
            "birkhoff bound tanh(ln r / 4): {}",
            opt(self.birkhoff_bound)
        );
        if let Some(sc) = &self.inflation_scaling {
            let _ = writeln!(
                s,
                "inflation scaling: mean {:.6}  min {:.6}  max {:.6}  (r = {}, {} pairs)",
                sc.mean_ratio,
                sc.min_ratio,
                sc.max_ratio,
                sc.inflation_r,
                sc.trials - sc.skipped
            );
        }
        match &self.nonexpansiveness {
            Some(ne) => {
                let _ = writeln!(
                    s,
                    "linear non-expansiveness on p0: {} violations in {} trials, max ratio {:.6}",
                    ne.violations, ne.trials, ne.max_ratio
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "linear non-expansiveness on p0: skipped (p0 not strictly positive)"
                );
            }
        }
        let _ = writeln!(
            s,
            "{:>5} {:>12} {:>8} {:>12} {:>12} {:>12} {:>6}",
            "iter", "residual", "nnz", "pair d_H max", "ratio max", "step d_H max", "inf"
        );
        for it in &self.iterations {
            let _ = writeln!(
                s,
                "{:>5} {:>12.4e} {:>8} {:>12} {:>12} {:>12} {:>6}",
                it.iteration,
                it.residual,
                it.nnz,
                opt(it.pair_distance.max),
                opt(it.max_pair_ratio),
                opt(it.step_distance.max),
                it.pair_distance.infinite + it.step_distance.infinite
            );
        }
        let _ = match self.first_infinite_iteration {
            Some(i) => writeln!(s, "first iterate with infinite d_H: {i}"),
            None => writeln!(s, "d_H finite at every iterate"),
        };
        let _ = writeln!(
            s,
            "converged {}  clusters {}",
            self.converged, self.clusters
        );
        let _ = writeln!(s, "note: {}", self.note);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_planted_graph, PlantedPartitionSpec};
    use proptest::prelude::*;

    fn positive() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-3f64..1e3, 5)
    }

    #[test]
    fn metric_examples() {
        assert_eq!(
            hilbert_metric(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            0.0
        );
        let d = hilbert_metric(&[2.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((d - 2f64.ln()).abs() < 1e-15);
        assert!(hilbert_metric(&[1.0, 0.0], &[1.0, 1.0]).is_err());
        assert!(hilbert_metric(&[1.0], &[1.0, 1.0]).is_err());
        assert_eq!(
            hilbert_metric_extended(&[1.0, 0.0], &[1.0, 1.0]).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn bound_values() {
        assert!((birkhoff_bound(2.0).unwrap() - 0.171573).abs() < 1e-5);
        assert!((birkhoff_bound(2.6).unwrap() - 0.2344).abs() < 1e-3);
        assert!(birkhoff_bound(1.0 + 1e-12).unwrap() < 1e-12);
        assert!(birkhoff_bound(1.0).is_err());
        assert!(birkhoff_bound(0.5).is_err());
    }

    #[test]
    fn rank_one_collapses_distances() {
        let a = NonnegMatrix::from_rows(&vec![vec![0.5; 4]; 4]).unwrap();
        let s = measure_linear_nonexpansiveness(&a, 50, 1).unwrap();
        assert_eq!(s.violations, 0);
        assert!(s.max_ratio < 1e-12);
    }

    #[test]
    fn diagonal_dominant_is_nonexpansive() {
        let a = NonnegMatrix::from_rows(&[
            vec![5.0, 1.0, 0.5],
            vec![0.2, 4.0, 1.0],
            vec![1.0, 0.3, 6.0],
        ])
        .unwrap();
        let s = measure_linear_nonexpansiveness(&a, 100, 9).unwrap();
        assert_eq!(s.violations, 0);
        assert!(s.max_ratio <= 1.0 + 1e-12);
        assert!(measure_linear_nonexpansiveness(
            &NonnegMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            1,
            0
        )
        .is_err());
    }

    #[test]
    fn inflation_scales_by_r() {
        let x = inflate_vector(&[2.0, 1.0], 2.0);
        let y = inflate_vector(&[1.0, 1.0], 2.0);
        assert!((hilbert_metric(&x, &y).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        let s = measure_inflation_scaling(2.6, 8, 100, 4).unwrap();
        assert!(s.max_deviation < 1e-9, "{s:?}");
    }

    #[test]
    fn identical_rows_stay_at_zero() {
        let row = vec![0.1, 0.2, 0.3, 0.4];
        let p0 = StochasticMatrix::from_rows(&vec![row; 4]).unwrap();
        let params = FlowParams {
            prune_tau: 0.0,
            ..FlowParams::default()
        };
        let rep = empirical_flow_contraction(&p0, &params, 6, 2).unwrap();
        assert!(rep.initial_pair_distance.max.unwrap() == 0.0);
        for it in &rep.iterations {
            assert_eq!(it.pair_distance.max, Some(0.0));
            assert_eq!(it.pair_distance.infinite, 0);
        }
    }

    #[test]
    fn positive_block_matrix_report_is_well_formed() {
        let p0 = StochasticMatrix::from_rows(&[
            vec![0.4, 0.4, 0.1, 0.1],
            vec![0.4, 0.4, 0.1, 0.1],
            vec![0.1, 0.1, 0.4, 0.4],
            vec![0.1, 0.15, 0.35, 0.4],
        ])
        .unwrap();
        let rep = empirical_flow_contraction(&p0, &FlowParams::default(), 8, 3).unwrap();
        assert!(!rep.iterations.is_empty());
        for it in &rep.iterations {
            assert!(!it.residual.is_nan());
            for v in [
                it.pair_distance.max,
                it.max_pair_ratio,
                it.step_distance.max,
            ]
            .into_iter()
            .flatten()
            {
                assert!(v.is_finite() && v >= 0.0);
            }
        }
        assert!(rep.nonexpansiveness.as_ref().unwrap().violations == 0);
        let text = rep.to_text();
        assert!(text.contains("0.2344"));
    }

    #[test]
    fn pruning_surfaces_infinite_distances() {
        let spec = PlantedPartitionSpec {
            block_sizes: vec![6, 6],
            within_mean: 0.3,
            cross_mean: 0.01,
            noise: 0.0,
            seed: 1,
        };
        let (p0, _) = gen_planted_graph(&spec).unwrap();
        let params = FlowParams {
            prune_tau: 1e-3,
            ..FlowParams::default()
        };
        let rep = empirical_flow_contraction(&p0, &params, 10, 5).unwrap();
        assert!(matches!(rep.first_infinite_iteration, Some(i) if i >= 1));
    }

    proptest! {
        #[test]
        fn symmetric(x in positive(), y in positive()) {
            prop_assert_eq!(hilbert_metric(&x, &y).unwrap(), hilbert_metric(&y, &x).unwrap());
        }

        #[test]
        fn triangle(x in positive(), y in positive(), z in positive()) {
            let xz = hilbert_metric(&x, &z).unwrap();
            let xy = hilbert_metric(&x, &y).unwrap();
            let yz = hilbert_metric(&y, &z).unwrap();
            prop_assert!(xz <= xy + yz + 1e-9);
        }

        #[test]
        fn scale_invariant(x in positive(), y in positive(), a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
            let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
            let d0 = hilbert_metric(&x, &y).unwrap();
            prop_assert!((hilbert_metric(&xs, &ys).unwrap() - d0).abs() < 1e-12);
        }

        #[test]
        fn zero_iff_proportional(x in positive(), a in 1e-2f64..1e2) {
            let y: Vec<f64> = x.iter().map(|v| v * a).collect();
            prop_assert!(hilbert_metric(&x, &y).unwrap() < 1e-12);
        }
    }
}
