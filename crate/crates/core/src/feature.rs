use crate::error::{Error, Result};

/// An `H x W` grid of `C`-dimensional feature vectors, stored row-major so that
/// token `i = y * W + x` occupies `data[i * C..(i + 1) * C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if height * width < 2 {
            return Err(Error::InvalidInput(
                "feature map needs at least two tokens".into(),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::dims(
                format!(
                    "{height}x{width}x{channels} = {} values",
                    height * width * channels
                ),
                data.len(),
            ));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite feature value at flat index {idx}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of tokens, `H * W`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Per-pixel integer labels on an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dims(
                format!("{height}x{width} labels"),
                labels.len(),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// One past the largest label, or 0 for an empty map.
    pub fn label_bound(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// Number of distinct labels in use.
    pub fn distinct(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Renumbers labels to `0..K-1`, preserving their relative order.
    pub fn compacted(&self) -> LabelMap {
        let mut ids: Vec<u32> = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        let labels = self
            .labels
            .iter()
            .map(|l| ids.binary_search(l).expect("present") as u32)
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }
}
