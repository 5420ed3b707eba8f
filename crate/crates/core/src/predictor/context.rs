//! Context point sets: decoded pixels of the current frame and reprojected
//! points of the previous frame, expressed relative to the target shot.

use super::baseline::{predict_previous_valid, DecodeWindow};
use crate::error::{Error, Result};
use crate::geometry::{
    image_to_point_cloud, project, to_global, to_sensor, unproject, wrap_angle, LidarCalibration,
    PoseTrack, RangeImage, Vec3,
};
use crate::kdtree::KdTree;

/// Patch height and width of the intra-frame context.
pub const PATCH_SIZE: usize = 10;
/// Neighbors fetched from the previous frame per query.
pub const TEMPORAL_NEIGHBORS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContextPoint {
    pub d_azimuth: f64,
    pub d_elevation: f64,
    /// Range minus the set's mean range.
    pub rel_range: f64,
    /// 0 for the current frame, 1 for the previous one.
    pub time: u8,
}

/// Context of one target pixel. `anchor_ranges[k]` is the absolute range of
/// point `k`; current-frame points come first, in raster order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextPointSet {
    points: Vec<ContextPoint>,
    anchor_ranges: Vec<f64>,
    mean_range: f64,
}

/// A context point before mean subtraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawContextPoint {
    pub d_azimuth: f64,
    pub d_elevation: f64,
    pub range: f64,
    pub time: u8,
}

impl ContextPointSet {
    pub fn from_raw(raw: &[RawContextPoint]) -> Self {
        if raw.is_empty() {
            return ContextPointSet::default();
        }
        let mean_range = raw.iter().map(|p| p.range).sum::<f64>() / raw.len() as f64;
        let points = raw
            .iter()
            .map(|p| ContextPoint {
                d_azimuth: p.d_azimuth,
                d_elevation: p.d_elevation,
                rel_range: p.range - mean_range,
                time: p.time,
            })
            .collect();
        ContextPointSet {
            points,
            anchor_ranges: raw.iter().map(|p| p.range).collect(),
            mean_range,
        }
    }

    /// Builds a set from explicit relative ranges and mean; anchors are
    /// `rel_range + mean_range`.
    pub fn from_relative(points: Vec<ContextPoint>, mean_range: f64) -> Self {
        let anchor_ranges = points.iter().map(|p| p.rel_range + mean_range).collect();
        ContextPointSet {
            points,
            anchor_ranges,
            mean_range,
        }
    }

    pub fn points(&self) -> &[ContextPoint] {
        &self.points
    }

    pub fn anchor_ranges(&self) -> &[f64] {
        &self.anchor_ranges
    }

    pub fn mean_range(&self) -> f64 {
        self.mean_range
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Valid decoded pixels of the `h`×`w` patch whose bottom-right corner is
/// `(i, j)`, clipped to the window, excluding the target itself.
pub fn intra_points(
    win: &DecodeWindow,
    calib: &LidarCalibration,
    i: usize,
    j: usize,
    h: usize,
    w: usize,
) -> Vec<RawContextPoint> {
    let rows = win.row_range();
    let cols = win.col_range();
    let r0 = (i + 1).saturating_sub(h).max(rows.start);
    let c0 = (j + 1).saturating_sub(w).max(cols.start);
    let (az, el) = (calib.azimuth(j), calib.elevation(i));
    let mut out = Vec::with_capacity(h * w - 1);
    for r in r0..=i {
        for c in c0..=j {
            if r == i && c == j {
                break;
            }
            if let Some(range) = win.get(r, c) {
                out.push(RawContextPoint {
                    d_azimuth: wrap_angle(calib.azimuth(c) - az),
                    d_elevation: calib.elevation(r) - el,
                    range,
                    time: 0,
                });
            }
        }
    }
    out
}

/// Intra-frame context of `(i, j)` with a mean-centered range channel.
pub fn extract_intra_context(
    win: &DecodeWindow,
    calib: &LidarCalibration,
    i: usize,
    j: usize,
    h: usize,
    w: usize,
) -> ContextPointSet {
    ContextPointSet::from_raw(&intra_points(win, calib, i, j, h, w))
}

/// Spatial index over the previous decoded frame, in the global frame.
#[derive(Clone, Debug)]
pub struct PrevFrameIndex {
    tree: KdTree,
}

impl PrevFrameIndex {
    pub fn from_image(
        img: &RangeImage,
        calib: &LidarCalibration,
        track: &PoseTrack,
    ) -> Result<Self> {
        Ok(build_prev_frame_index(image_to_point_cloud(img, calib, track)?))
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

pub fn build_prev_frame_index(points: Vec<Vec3>) -> PrevFrameIndex {
    PrevFrameIndex {
        tree: KdTree::build(points),
    }
}

/// A previous-frame neighbor of the target shot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalNeighbor {
    pub index: usize,
    /// Distance to the query point that found it.
    pub query_distance: f64,
    pub point: RawContextPoint,
}

/// Previous-frame points around `(i, j)`, reprojected into the target shot's
/// spherical frame.
///
/// Two global-frame queries are formed from the shot direction with the
/// left-valid and up-valid range estimates; each fetches the
/// [`TEMPORAL_NEIGHBORS`] exact nearest neighbors. The union keeps first-seen
/// order: the left query's hits by distance, then the up query's new ones.
pub fn extract_temporal_context(
    index: Option<&PrevFrameIndex>,
    win: &DecodeWindow,
    calib: &LidarCalibration,
    track: &PoseTrack,
    i: usize,
    j: usize,
) -> Result<Vec<TemporalNeighbor>> {
    let index = index.ok_or(Error::NoPreviousFrame)?;
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let left = predict_previous_valid(win, i, j);
    let up = win.above(i, j).unwrap_or(left);
    let (az, el) = (calib.azimuth(j), calib.elevation(i));
    let pose = track.pose(j);
    let mut seen = Vec::<usize>::with_capacity(2 * TEMPORAL_NEIGHBORS);
    let mut out = Vec::with_capacity(2 * TEMPORAL_NEIGHBORS);
    for estimate in [left, up] {
        if !(estimate > 0.0) {
            continue;
        }
        let query = to_global(&unproject(estimate, az, el), pose);
        for n in index.tree.nearest(&query, TEMPORAL_NEIGHBORS) {
            if seen.contains(&n.index) {
                continue;
            }
            seen.push(n.index);
            let local = to_sensor(index.tree.point(n.index), pose);
            let Ok((range, theta, alpha)) = project(&local) else {
                continue;
            };
            out.push(TemporalNeighbor {
                index: n.index,
                query_distance: n.distance(),
                point: RawContextPoint {
                    d_azimuth: wrap_angle(theta - az),
                    d_elevation: alpha - el,
                    range,
                    time: 1,
                },
            });
        }
    }
    Ok(out)
}
