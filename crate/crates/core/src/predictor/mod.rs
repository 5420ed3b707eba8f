//! Per-pixel range predictors and the context they read.

pub mod anchor;
pub mod baseline;
pub mod context;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{LidarCalibration, PoseTrack};

pub use anchor::{anchor_net_infer, Layer, LayerKind, PredictorOutput, WeightBundle};
pub use baseline::{predict_linear, predict_previous_valid, DecodeWindow};
pub use context::{
    build_prev_frame_index, extract_intra_context, extract_temporal_context, ContextPoint,
    ContextPointSet, PrevFrameIndex, RawContextPoint, TemporalNeighbor, PATCH_SIZE,
    TEMPORAL_NEIGHBORS,
};

/// Which predictor a frame was coded with.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorKind {
    PreviousValid,
    LinearInterpolation,
    AnchorNetIntra(Arc<WeightBundle>),
    AnchorNetTemporal(Arc<WeightBundle>),
}

impl PredictorKind {
    /// Identifier stored in the frame header.
    pub fn id(&self) -> u8 {
        match self {
            PredictorKind::PreviousValid => 0,
            PredictorKind::LinearInterpolation => 1,
            PredictorKind::AnchorNetIntra(_) => 2,
            PredictorKind::AnchorNetTemporal(_) => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::PreviousValid => "previous-valid",
            PredictorKind::LinearInterpolation => "linear",
            PredictorKind::AnchorNetIntra(_) => "anchor-intra",
            PredictorKind::AnchorNetTemporal(_) => "anchor-temporal",
        }
    }

    pub fn weights(&self) -> Option<&Arc<WeightBundle>> {
        match self {
            PredictorKind::AnchorNetIntra(w) | PredictorKind::AnchorNetTemporal(w) => Some(w),
            _ => None,
        }
    }

    /// Weight digest, all zeros for the baselines.
    pub fn digest(&self) -> [u8; 32] {
        self.weights().map_or([0; 32], |w| w.digest())
    }

    pub fn is_temporal(&self) -> bool {
        matches!(self, PredictorKind::AnchorNetTemporal(_))
    }

    /// Builds the kind named by header fields, resolving weights by digest.
    pub fn from_header(
        id: u8,
        digest: &[u8; 32],
        weights: &dyn Fn(&[u8; 32]) -> Option<Arc<WeightBundle>>,
    ) -> Result<Self> {
        let resolve = || {
            weights(digest).ok_or_else(|| Error::UnknownWeights(anchor::hex(digest)))
        };
        match id {
            0 => Ok(PredictorKind::PreviousValid),
            1 => Ok(PredictorKind::LinearInterpolation),
            2 => Ok(PredictorKind::AnchorNetIntra(resolve()?)),
            3 => Ok(PredictorKind::AnchorNetTemporal(resolve()?)),
            _ => Err(Error::HeaderMismatch(format!("unknown predictor id {id}"))),
        }
    }

    /// Checks that a bundle has the input width this kind feeds it.
    pub fn validate(&self) -> Result<()> {
        let (w, dim) = match self {
            PredictorKind::AnchorNetIntra(w) => (w, 3),
            PredictorKind::AnchorNetTemporal(w) => (w, 4),
            _ => return Ok(()),
        };
        if w.input_dim() != dim {
            return Err(Error::WeightShapeMismatch(format!(
                "{} needs input_dim {dim}, bundle has {}",
                self.name(),
                w.input_dim()
            )));
        }
        Ok(())
    }
}

/// Everything a prediction may read besides the decoded window.
#[derive(Clone, Copy, Debug)]
pub struct PredictionState<'a> {
    pub calib: &'a LidarCalibration,
    pub track: &'a PoseTrack,
    /// Previous decoded frame; `None` runs temporal kinds on intra context.
    pub prev: Option<&'a PrevFrameIndex>,
}

impl<'a> PredictionState<'a> {
    pub fn max_range(&self) -> f64 {
        self.calib.max_range()
    }
}

/// Context handed to the anchor network for `(i, j)`: intra points, then
/// previous-frame points when available. When the set exceeds the bundle's
/// anchor count the temporal points farthest from their query are dropped.
pub fn anchor_context(
    weights: &WeightBundle,
    temporal: bool,
    win: &DecodeWindow,
    state: &PredictionState<'_>,
    i: usize,
    j: usize,
) -> Result<ContextPointSet> {
    let mut raw = context::intra_points(win, state.calib, i, j, PATCH_SIZE, PATCH_SIZE);
    let limit = weights.num_anchors() as usize;
    if temporal {
        if let Some(prev) = state.prev {
            let mut temporal = extract_temporal_context(Some(prev), win, state.calib, state.track, i, j)?;
            let room = limit.saturating_sub(raw.len());
            if temporal.len() > room {
                temporal.sort_by(|a, b| a.query_distance.total_cmp(&b.query_distance));
                temporal.truncate(room);
            }
            raw.extend(temporal.into_iter().map(|n| n.point));
        }
    }
    if raw.len() > limit {
        return Err(Error::WeightShapeMismatch(format!(
            "{} intra points exceed {limit} anchors",
            raw.len()
        )));
    }
    Ok(ContextPointSet::from_raw(&raw))
}

/// Unquantized prediction of `(i, j)` from the decoded window.
pub fn predict(
    kind: &PredictorKind,
    win: &DecodeWindow,
    state: &PredictionState<'_>,
    i: usize,
    j: usize,
) -> Result<f64> {
    match kind {
        PredictorKind::PreviousValid => Ok(predict_previous_valid(win, i, j)),
        PredictorKind::LinearInterpolation => Ok(predict_linear(win, i, j, state.max_range())),
        PredictorKind::AnchorNetIntra(w) | PredictorKind::AnchorNetTemporal(w) => {
            let ctx = anchor_context(w, kind.is_temporal(), win, state, i, j)?;
            if ctx.is_empty() {
                return Ok(predict_previous_valid(win, i, j));
            }
            Ok(anchor_net_infer(&ctx, w, state.max_range())?.predicted_range)
        }
    }
}
