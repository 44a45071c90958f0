//! Global, local and fused affinities over the tokens of a feature map.

use rayon::prelude::*;

use crate::config::SegmentationConfig;
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::matrix::{NonnegMatrix, StochasticMatrix, Storage};

/// 8-connected neighborhood on an `H x W` grid. Neighbors outside the grid are
/// absent, never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighborhood {
    pub height: usize,
    pub width: usize,
}

const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl Neighborhood {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// Flat indices of the neighbors of token `i`, in ascending order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (y, x) = ((i / self.width) as isize, (i % self.width) as isize);
        OFFSETS.iter().filter_map(move |&(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            (ny >= 0 && nx >= 0 && (ny as usize) < self.height && (nx as usize) < self.width)
                .then(|| ny as usize * self.width + nx as usize)
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `max(0, <X_i, X_j>)` for every token pair, dense.
pub fn global_affinity(f: &FeatureMap) -> NonnegMatrix {
    global_affinity_with(f, Storage::Dense, None)
}

/// Global affinity in the requested storage. With `cap`, each row keeps only its
/// `cap` largest entries (sparse storage only).
pub fn global_affinity_with(f: &FeatureMap, storage: Storage, cap: Option<usize>) -> NonnegMatrix {
    let n = f.len();
    match (storage, cap) {
        (Storage::Dense, _) => {
            // Upper triangle once, mirrored, so the result is exactly symmetric.
            let upper: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = f.token(i);
                    (i..n).map(|j| dot(xi, f.token(j)).max(0.0)).collect()
                })
                .collect();
            let mut data = vec![0.0; n * n];
            for (i, row) in upper.into_iter().enumerate() {
                for (off, v) in row.into_iter().enumerate() {
                    let j = i + off;
                    data[i * n + j] = v;
                    data[j * n + i] = v;
                }
            }
            NonnegMatrix::from_dense(n, data).expect("clamped products are nonnegative")
        }
        (Storage::Sparse, cap) => {
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = f.token(i);
                    let mut entries: Vec<(usize, f64)> = (0..n)
                        .map(|j| (j, dot(xi, f.token(j)).max(0.0)))
                        .filter(|&(_, v)| v > 0.0)
                        .collect();
                    if let Some(cap) = cap {
                        if entries.len() > cap {
                            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                            entries.truncate(cap);
                        }
                    }
                    entries
                })
                .collect();
            NonnegMatrix::from_sparse_rows(n, rows).expect("valid sparse rows")
        }
    }
}

/// Sparse cosine graph over the 8-neighborhood: 1 on the diagonal,
/// `max(0, cos) + floor` to each neighbor. Zero-norm tokens have cosine 0.
pub fn local_affinity(f: &FeatureMap, floor: f64) -> Result<NonnegMatrix> {
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::out_of_range(
            "affinity_floor",
            floor,
            "finite and > 0",
        ));
    }
    let n = f.len();
    let norms: Vec<f64> = (0..n).map(|i| dot(f.token(i), f.token(i)).sqrt()).collect();
    let grid = Neighborhood::new(f.height(), f.width());
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = grid
                .neighbors(i)
                .map(|j| {
                    let denom = norms[i] * norms[j];
                    let cos = if denom > 0.0 {
                        dot(f.token(i), f.token(j)) / denom
                    } else {
                        0.0
                    };
                    (j, cos.max(0.0) + floor)
                })
                .collect();
            row.push((i, 1.0));
            row
        })
        .collect();
    NonnegMatrix::from_sparse_rows(n, rows)
}

/// `beta * global + (1 - beta) * local`.
pub fn fuse(
    global: &StochasticMatrix,
    local: &StochasticMatrix,
    beta: f64,
) -> Result<StochasticMatrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::out_of_range("beta", beta, "0 <= beta <= 1"));
    }
    let fused = global.matrix().convex_combination(local.matrix(), beta)?;
    // A convex combination of stochastic rows is stochastic.
    StochasticMatrix::try_from_matrix(fused, 1e-9)
}

/// The fused, row-stochastic transition matrix for a feature map.
pub fn build_transition(f: &FeatureMap, cfg: &SegmentationConfig) -> Result<StochasticMatrix> {
    cfg.validate()?;
    let storage = cfg.storage_mode.resolve(f.len());
    let local = local_affinity(f, cfg.affinity_floor)?
        .to_storage(storage)
        .row_normalize();
    if cfg.beta == 0.0 {
        return Ok(local);
    }
    let cap = match storage {
        Storage::Sparse => cfg.topk_cap,
        Storage::Dense => None,
    };
    let global = global_affinity_with(f, storage, cap).row_normalize();
    if cfg.beta == 1.0 {
        return Ok(global);
    }
    fuse(&global, &local, cfg.beta)
}
