//! mIoU scoring of unlabeled cluster maps against ground truth.
//!
//! Predicted cluster ids carry no semantics, so each prediction is first matched
//! to ground-truth classes: a maximum-total-IoU one-to-one assignment (Hungarian
//! method), with any predicted clusters left over mapped to the class they
//! overlap best.

use crate::error::{Error, Result};
use crate::feature::LabelMap;

/// Conventional void label.
pub const DEFAULT_IGNORE_ID: u32 = 255;

/// `K_pred x K_gt` pixel co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k_pred: usize,
    k_gt: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k_pred: usize, k_gt: usize) -> Self {
        Self {
            k_pred,
            k_gt,
            counts: vec![0; k_pred * k_gt],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k_gt = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k_gt) {
            return Err(Error::InvalidInput("ragged confusion rows".into()));
        }
        Ok(Self {
            k_pred: rows.len(),
            k_gt,
            counts: rows.concat(),
        })
    }

    pub fn k_pred(&self) -> usize {
        self.k_pred
    }

    pub fn k_gt(&self) -> usize {
        self.k_gt
    }

    pub fn get(&self, p: usize, g: usize) -> u64 {
        self.counts[p * self.k_gt + g]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn pred_total(&self, p: usize) -> u64 {
        (0..self.k_gt).map(|g| self.get(p, g)).sum()
    }

    pub fn gt_total(&self, g: usize) -> u64 {
        (0..self.k_pred).map(|p| self.get(p, g)).sum()
    }

    pub fn iou(&self, p: usize, g: usize) -> f64 {
        let inter = self.get(p, g);
        let union = self.pred_total(p) + self.gt_total(g) - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Elementwise sum, growing to the larger shape.
    pub fn accumulate(&mut self, other: &ConfusionMatrix) {
        let (kp, kg) = (self.k_pred.max(other.k_pred), self.k_gt.max(other.k_gt));
        if (kp, kg) != (self.k_pred, self.k_gt) {
            let mut grown = ConfusionMatrix::zeros(kp, kg);
            for p in 0..self.k_pred {
                for g in 0..self.k_gt {
                    grown.counts[p * kg + g] = self.get(p, g);
                }
            }
            *self = grown;
        }
        for p in 0..other.k_pred {
            for g in 0..other.k_gt {
                self.counts[p * kg + g] += other.get(p, g);
            }
        }
    }
}

/// Counts `(pred, gt)` pixel pairs, skipping pixels whose ground truth is `ignore_id`.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, ignore_id: u32) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::dims(
            format!("{}x{}", gt.height(), gt.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let k_pred = pred.label_bound();
    let k_gt = gt
        .labels()
        .iter()
        .filter(|&&g| g != ignore_id)
        .max()
        .map_or(0, |&m| m as usize + 1);
    let mut cm = ConfusionMatrix::zeros(k_pred, k_gt);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g != ignore_id {
            cm.counts[p as usize * k_gt + g as usize] += 1;
        }
    }
    Ok(cm)
}

/// Minimum-cost assignment on a rectangular cost matrix with `rows <= cols`.
/// Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    // Potentials-based shortest augmenting path, 1-indexed with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

fn argmax_iou(cm: &ConfusionMatrix, p: usize, classes: &[usize]) -> usize {
    let mut best = classes[0];
    for &g in classes {
        if cm.iou(p, g) > cm.iou(p, best) {
            best = g;
        }
    }
    best
}

/// Maps every predicted cluster to a ground-truth class.
///
/// Present predicted clusters and present classes are matched one-to-one to
/// maximize total IoU. Predicted clusters left unmatched (more clusters than
/// classes, or clusters with no pixels) take the class of highest IoU, lowest
/// class id on ties.
pub fn match_clusters(cm: &ConfusionMatrix) -> Result<Vec<usize>> {
    if cm.k_pred() == 0 || cm.k_gt() == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    let preds: Vec<usize> = (0..cm.k_pred()).filter(|&p| cm.pred_total(p) > 0).collect();
    let mut classes: Vec<usize> = (0..cm.k_gt()).filter(|&g| cm.gt_total(g) > 0).collect();
    if classes.is_empty() {
        classes = (0..cm.k_gt()).collect();
    }
    let mut mapping: Vec<Option<usize>> = vec![None; cm.k_pred()];
    if !preds.is_empty() {
        let iou: Vec<Vec<f64>> = preds
            .iter()
            .map(|&p| classes.iter().map(|&g| cm.iou(p, g)).collect())
            .collect();
        if preds.len() <= classes.len() {
            let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
            for (pi, ci) in hungarian(&cost).into_iter().enumerate() {
                mapping[preds[pi]] = Some(classes[ci]);
            }
        } else {
            // Transposed problem: every class picks a distinct prediction.
            let cost: Vec<Vec<f64>> = (0..classes.len())
                .map(|ci| iou.iter().map(|r| -r[ci]).collect())
                .collect();
            for (ci, pi) in hungarian(&cost).into_iter().enumerate() {
                mapping[preds[pi]] = Some(classes[ci]);
            }
        }
    }
    Ok(mapping
        .into_iter()
        .enumerate()
        .map(|(p, m)| m.unwrap_or_else(|| argmax_iou(cm, p, &classes)))
        .collect())
}

/// Per-class IoU after merging predictions by `mapping`, for every class present
/// in the ground truth (`None` for absent classes).
pub fn class_ious(cm: &ConfusionMatrix, mapping: &[usize]) -> Result<Vec<Option<f64>>> {
    if mapping.len() != cm.k_pred() {
        return Err(Error::dims(
            format!("{} mapped clusters", cm.k_pred()),
            mapping.len(),
        ));
    }
    if let Some(bad) = mapping.iter().find(|&&g| g >= cm.k_gt()) {
        return Err(Error::InvalidInput(format!(
            "mapping targets unknown class {bad}"
        )));
    }
    Ok((0..cm.k_gt())
        .map(|g| {
            let gt = cm.gt_total(g);
            if gt == 0 {
                return None;
            }
            let (mut inter, mut pred) = (0u64, 0u64);
            for p in (0..cm.k_pred()).filter(|&p| mapping[p] == g) {
                inter += cm.get(p, g);
                pred += cm.pred_total(p);
            }
            Some(inter as f64 / (pred + gt - inter) as f64)
        })
        .collect())
}

/// Mean IoU over classes present in the ground truth; 0 when none are.
pub fn miou(cm: &ConfusionMatrix, mapping: &[usize]) -> Result<f64> {
    let ious: Vec<f64> = class_ious(cm, mapping)?.into_iter().flatten().collect();
    if ious.is_empty() {
        return Ok(0.0);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Scores of a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub k_pred: usize,
    pub k_gt: usize,
    pub mapping: Vec<usize>,
    pub miou: f64,
    /// Confusion in ground-truth class space (predictions replaced by their match).
    pub mapped: ConfusionMatrix,
}

pub fn score_image(pred: &LabelMap, gt: &LabelMap, ignore_id: u32) -> Result<ImageScore> {
    let cm = confusion(pred, gt, ignore_id)?;
    let mapping = match_clusters(&cm)?;
    let miou = miou(&cm, &mapping)?;
    let mut mapped = ConfusionMatrix::zeros(cm.k_gt(), cm.k_gt());
    for p in 0..cm.k_pred() {
        for g in 0..cm.k_gt() {
            mapped.counts[mapping[p] * cm.k_gt() + g] += cm.get(p, g);
        }
    }
    Ok(ImageScore {
        k_pred: pred.distinct(),
        k_gt: (0..cm.k_gt()).filter(|&g| cm.gt_total(g) > 0).count(),
        mapping,
        miou,
        mapped,
    })
}

/// Dataset-level mIoU from the sum of per-image matched confusions.
pub fn dataset_miou<'a>(scores: impl IntoIterator<Item = &'a ImageScore>) -> f64 {
    let mut total = ConfusionMatrix::zeros(0, 0);
    for s in scores {
        total.accumulate(&s.mapped);
    }
    let identity: Vec<usize> = (0..total.k_pred()).collect();
    miou(&total, &identity).unwrap_or(0.0)
}

/// Adjusted Rand index between two partitions of the same node set.
/// Two single-cluster partitions score 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let rows: f64 = (0..ka)
        .map(|x| pairs(table[x * kb..(x + 1) * kb].iter().sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|y| pairs((0..ka).map(|x| table[x * kb + y]).sum()))
        .sum();
    let expected = rows * cols / pairs(a.len() as u64).max(1.0);
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
