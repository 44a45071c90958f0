use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Storage;

/// Largest node count for which `StorageMode::Auto` picks dense storage.
pub const DENSE_NODE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Dense,
    Sparse,
    #[default]
    Auto,
}

impl StorageMode {
    pub fn resolve(self, n: usize) -> Storage {
        match self {
            StorageMode::Dense => Storage::Dense,
            StorageMode::Sparse => Storage::Sparse,
            StorageMode::Auto if n <= DENSE_NODE_LIMIT => Storage::Dense,
            StorageMode::Auto => Storage::Sparse,
        }
    }
}

impl std::str::FromStr for StorageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(StorageMode::Dense),
            "sparse" => Ok(StorageMode::Sparse),
            "auto" => Ok(StorageMode::Auto),
            other => Err(Error::Config(format!(
                "storage_mode must be dense, sparse or auto, got `{other}`"
            ))),
        }
    }
}

/// Every tunable of the segmentation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Weight of the global affinity in the fused transition matrix, in `[0, 1]`.
    pub beta: f64,
    /// Matrix power taken in each expansion step.
    pub expansion_l: u32,
    /// Entrywise exponent of the inflation step, `> 1`.
    pub inflation_r: f64,
    /// Entries below this value are removed after inflation.
    pub prune_tau: f64,
    /// Constant added to neighbor cosines in the local affinity.
    pub affinity_floor: f64,
    /// Flow iteration stops once the max-norm change between iterates drops below this.
    pub flow_tol: f64,
    pub max_flow_iters: usize,
    /// Propagation weight of the transition matrix against the seeds, in `(0, 1)`.
    pub gamma: f64,
    pub prop_tol: f64,
    pub max_prop_iters: usize,
    pub storage_mode: StorageMode,
    /// Per-row nonzero cap applied after each sparse product.
    pub topk_cap: Option<usize>,
    /// Merge clusters whose attractor columns exchange flow in the fixpoint.
    pub merge_attractors: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            expansion_l: 2,
            inflation_r: 2.6,
            prune_tau: 1e-7,
            affinity_floor: 1e-6,
            flow_tol: 1e-6,
            max_flow_iters: 200,
            gamma: 0.9,
            prop_tol: 1e-6,
            max_prop_iters: 1000,
            storage_mode: StorageMode::Auto,
            topk_cap: None,
            merge_attractors: false,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::out_of_range(name, v, "finite and > 0"))
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::out_of_range("beta", self.beta, "0 <= beta <= 1"));
        }
        if self.expansion_l < 1 {
            return Err(Error::out_of_range("expansion_l", self.expansion_l, ">= 1"));
        }
        if !(self.inflation_r.is_finite() && self.inflation_r > 1.0) {
            return Err(Error::out_of_range("inflation_r", self.inflation_r, "> 1"));
        }
        positive("prune_tau", self.prune_tau)?;
        positive("affinity_floor", self.affinity_floor)?;
        positive("flow_tol", self.flow_tol)?;
        positive("prop_tol", self.prop_tol)?;
        if self.max_flow_iters == 0 {
            return Err(Error::out_of_range("max_flow_iters", 0, ">= 1"));
        }
        if self.max_prop_iters == 0 {
            return Err(Error::out_of_range("max_prop_iters", 0, ">= 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::out_of_range("gamma", self.gamma, "0 < gamma < 1"));
        }
        if let Some(cap) = self.topk_cap {
            if cap < 8 {
                return Err(Error::out_of_range("topk_cap", cap, ">= 8"));
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` config document. Missing keys keep their
    /// defaults; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like [`Self::from_toml_str`] but without validation, also returning the
    /// keys the document set. Used when later overrides may still fix values.
    pub fn from_toml_str_partial(text: &str) -> Result<(Self, Vec<String>)> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let keys = table.keys().cloned().collect();
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok((cfg, keys))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}
