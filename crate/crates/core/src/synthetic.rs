//! Seeded generators of graphs and feature maps with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMap};
use crate::matrix::{NonnegMatrix, StochasticMatrix};

/// Block model with Gaussian weight noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPartitionSpec {
    pub block_sizes: Vec<usize>,
    pub within_mean: f64,
    pub cross_mean: f64,
    /// Standard deviation of the additive Gaussian noise; weights are clamped at 0.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedPartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidInput("block sizes must be positive".into()));
        }
        if self.block_sizes.iter().sum::<usize>() < 2 {
            return Err(Error::InvalidInput(
                "planted graph needs at least two nodes".into(),
            ));
        }
        if !(self.cross_mean.is_finite() && self.cross_mean >= 0.0) {
            return Err(Error::out_of_range("cross_mean", self.cross_mean, ">= 0"));
        }
        if !(self.within_mean.is_finite() && self.within_mean > self.cross_mean) {
            return Err(Error::out_of_range(
                "within_mean",
                self.within_mean,
                "> cross_mean",
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::out_of_range("noise", self.noise, ">= 0"));
        }
        Ok(())
    }

    pub fn partition(&self) -> Vec<usize> {
        self.block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
            .collect()
    }
}

/// Symmetric block-structured weights (self pairs count as within-block),
/// row-normalized, plus the planted block of every node.
pub fn gen_planted_graph(spec: &PlantedPartitionSpec) -> Result<(StochasticMatrix, Vec<usize>)> {
    spec.validate()?;
    let truth = spec.partition();
    let n = truth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mean = if truth[i] == truth[j] {
                spec.within_mean
            } else {
                spec.cross_mean
            };
            let z: f64 = rng.sample(StandardNormal);
            let v = (mean + spec.noise * z).max(0.0);
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    let s = NonnegMatrix::from_dense(n, w)?.row_normalize();
    Ok((s, truth))
}

/// Region layout of a blob fixture.
#[derive(Debug, Clone, PartialEq)]
pub enum BlobLayout {
    /// Left and right halves (`x < W / 2` is region 0).
    HalfPlanes,
    /// Four quadrants, numbered row-major.
    Quadrants,
    /// `k` vertical stripes of near-equal width.
    Stripes(usize),
    /// Explicit region map; ids must be compact.
    Custom(LabelMap),
}

impl BlobLayout {
    pub fn regions(&self, h: usize, w: usize) -> Result<LabelMap> {
        let labels: Vec<u32> = match self {
            BlobLayout::HalfPlanes => (0..h * w).map(|i| u32::from(i % w >= w / 2)).collect(),
            BlobLayout::Quadrants => (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    2 * u32::from(y >= h / 2) + u32::from(x >= w / 2)
                })
                .collect(),
            BlobLayout::Stripes(k) => {
                if *k == 0 || *k > w {
                    return Err(Error::InvalidInput(format!(
                        "cannot cut {w} columns into {k} stripes"
                    )));
                }
                (0..h * w).map(|i| ((i % w) * k / w) as u32).collect()
            }
            BlobLayout::Custom(lm) => {
                if lm.height() != h || lm.width() != w {
                    return Err(Error::dims(
                        format!("{h}x{w} layout"),
                        format!("{}x{}", lm.height(), lm.width()),
                    ));
                }
                if lm.compacted() != *lm {
                    return Err(Error::InvalidInput(
                        "custom layout ids must be 0..K-1".into(),
                    ));
                }
                lm.labels().to_vec()
            }
        };
        let lm = LabelMap::new(h, w, labels)?;
        if lm.distinct() != lm.label_bound() {
            return Err(Error::InvalidInput(format!(
                "layout leaves some region empty on a {h}x{w} grid"
            )));
        }
        Ok(lm)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `count` orthonormal vectors in `R^dim` from seeded Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            normalize(&mut v);
            basis.push(v);
        }
    }
    basis
}

/// Unit-norm tokens scattered around one mean direction per region.
///
/// Region means are `sqrt(1 - s) u + sqrt(s) e_k` for orthonormal `u, e_k`, so
/// any two means have cosine `1 - separation`. Each token is its region mean
/// plus `noise` times a standard Gaussian vector, renormalized.
pub fn gen_blob_features(
    h: usize,
    w: usize,
    c: usize,
    layout: &BlobLayout,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<(FeatureMap, LabelMap)> {
    if !(separation > 0.0 && separation <= 1.0) {
        return Err(Error::out_of_range(
            "separation",
            separation,
            "0 < separation <= 1",
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::out_of_range("noise", noise, ">= 0"));
    }
    let truth = layout.regions(h, w)?;
    let k = truth.label_bound();
    let shared = usize::from(separation < 1.0);
    if c < k + shared {
        return Err(Error::InvalidInput(format!(
            "{c} channels cannot hold {} orthogonal directions",
            k + shared
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal(&mut rng, k + 1, c.max(k + 1));
    let (a, b) = ((1.0 - separation).sqrt(), separation.sqrt());
    let means: Vec<Vec<f64>> = (0..k)
        .map(|r| {
            let mut m: Vec<f64> = (0..c)
                .map(|d| if shared == 1 { a * basis[k][d] } else { 0.0 } + b * basis[r][d])
                .collect();
            normalize(&mut m);
            m
        })
        .collect();
    let mut data = Vec::with_capacity(h * w * c);
    for &region in truth.labels() {
        let mut token = means[region as usize].clone();
        if noise > 0.0 {
            for x in token.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += noise * z;
            }
            normalize(&mut token);
        }
        data.extend(token);
    }
    Ok((FeatureMap::new(h, w, c, data)?, truth))
}

/// Named fixtures used by tests, the CLI and the documentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundledFixture {
    /// 8x8x16, left/right halves, orthogonal means.
    TwoBlob,
    /// 8x8x16, four quadrants, orthogonal means.
    FourBlob,
    /// 12x12x16 noisy quadrants with correlated means, used for inflation sweeps.
    AblationFourBlob,
}

/// A generated feature map and its planted labels.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub features: FeatureMap,
    pub truth: LabelMap,
}

impl BundledFixture {
    pub const ALL: [BundledFixture; 3] = [
        BundledFixture::TwoBlob,
        BundledFixture::FourBlob,
        BundledFixture::AblationFourBlob,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BundledFixture::TwoBlob => "two-blob",
            BundledFixture::FourBlob => "four-blob",
            BundledFixture::AblationFourBlob => "ablation-four-blob",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Noise used when the caller does not pick one.
    pub fn default_noise(self) -> f64 {
        match self {
            BundledFixture::AblationFourBlob => ABLATION_NOISE,
            _ => 0.0,
        }
    }

    pub fn generate(self, noise: f64) -> Result<Fixture> {
        self.generate_seeded(noise, 3)
    }

    pub fn generate_seeded(self, noise: f64, seed: u64) -> Result<Fixture> {
        let (h, w, c, layout, separation) = match self {
            BundledFixture::TwoBlob => (8, 8, 16, BlobLayout::HalfPlanes, 1.0),
            BundledFixture::FourBlob => (8, 8, 16, BlobLayout::Quadrants, 1.0),
            BundledFixture::AblationFourBlob => {
                (12, 12, 16, BlobLayout::Quadrants, ABLATION_SEPARATION)
            }
        };
        let (features, truth) = gen_blob_features(h, w, c, &layout, separation, noise, seed)?;
        Ok(Fixture { features, truth })
    }
}

const ABLATION_SEPARATION: f64 = 0.5;
const ABLATION_NOISE: f64 = 0.1;
