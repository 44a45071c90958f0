//! The full feature map to label map pipeline.

use crate::affinity::build_transition;
use crate::config::SegmentationConfig;
use crate::error::Result;
use crate::feature::{FeatureMap, LabelMap};
use crate::markov_flow::{iterate_to_fixpoint_observed, FlowParams, FlowResult, TraceRecord};
use crate::matrix::StochasticMatrix;
use crate::propagation::{
    labels_from, propagate, PropagationParams, PropagationResult, SeedMatrix,
};

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub transition: StochasticMatrix,
    pub flow: FlowResult,
    pub propagation: PropagationResult,
    pub labels: LabelMap,
}

impl Segmentation {
    /// Number of clusters found by the flow stage.
    pub fn k(&self) -> usize {
        self.flow.clusters.len()
    }
}

pub fn segment(features: &FeatureMap, cfg: &SegmentationConfig) -> Result<Segmentation> {
    segment_traced(features, cfg, |_| {})
}

/// [`segment`], reporting one [`TraceRecord`] per flow iteration.
pub fn segment_traced(
    features: &FeatureMap,
    cfg: &SegmentationConfig,
    mut trace: impl FnMut(TraceRecord),
) -> Result<Segmentation> {
    cfg.validate()?;
    let transition = build_transition(features, cfg)?;
    let flow = iterate_to_fixpoint_observed(&transition, &FlowParams::from(cfg), |it| {
        trace(TraceRecord::from_iterate(it))
    })?;
    let seeds = SeedMatrix::from_clusters(&flow.clusters);
    let propagation = propagate(&transition, &seeds, &PropagationParams::from(cfg))?;
    let labels = labels_from(&propagation, features.height(), features.width())?;
    Ok(Segmentation {
        transition,
        flow,
        propagation,
        labels,
    })
}
