//! Distortion and prediction-quality metrics.
//!
//! All nearest-neighbor queries are exact. Per-point terms are computed in
//! parallel and summed sequentially with compensated summation, so results do
//! not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{RangeImage, Vec3};
use crate::kdtree::KdTree;

/// Neighbors used for normal estimation.
pub const NORMAL_NEIGHBORS: usize = 12;

/// Both MSE directions below this count as a perfect reconstruction.
pub const PSNR_ZERO_MSE: f64 = 1e-18;

/// Neumaier's compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    compensated_sum(values) / n
}

/// Mean distance from each point of `p` to its nearest point in `q`.
pub fn chamfer(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::build(q.to_vec());
    Ok(chamfer_with(p, &tree))
}

fn chamfer_with(p: &[Vec3], tree: &KdTree) -> f64 {
    let d: Vec<f64> = p
        .par_iter()
        .map(|x| tree.nearest_one(x).expect("non-empty tree").distance())
        .collect();
    mean(d)
}

/// `max(chamfer(p, q), chamfer(q, p))`.
pub fn chamfer_sym(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    Ok(chamfer(p, q)?.max(chamfer(q, p)?))
}

/// Unit normal of every point: the eigenvector of the smallest eigenvalue of
/// the covariance of the point and its `k` nearest others. The sign is
/// arbitrary.
pub fn estimate_normals(p: &[Vec3], k: usize) -> Result<Vec<Vec3>> {
    if p.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: p.len(),
        });
    }
    let tree = KdTree::build(p.to_vec());
    Ok(normals_with(&tree, k))
}

fn normals_with(tree: &KdTree, k: usize) -> Vec<Vec3> {
    (0..tree.len())
        .into_par_iter()
        .map(|i| {
            let x = tree.point(i);
            let nbrs = tree.nearest_excluding(x, k, i);
            let pts: Vec<&Vec3> = std::iter::once(x)
                .chain(nbrs.iter().map(|n| tree.point(n.index)))
                .collect();
            let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + *p) / pts.len() as f64;
            let cov = pts.iter().fold(Matrix3::zeros(), |a, p| {
                let d = *p - centroid;
                a + d * d.transpose()
            });
            let eig = SymmetricEigen::new(cov);
            let min = eig.eigenvalues.imin();
            eig.eigenvectors.column(min).normalize()
        })
        .collect()
}

/// Largest nearest-neighbor gap within `p`.
pub fn intrinsic_resolution(p: &[Vec3]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: p.len(),
        });
    }
    let tree = KdTree::build(p.to_vec());
    Ok(resolution_with(&tree))
}

fn resolution_with(tree: &KdTree) -> f64 {
    (0..tree.len())
        .into_par_iter()
        .map(|i| tree.nearest_excluding(tree.point(i), 1, i)[0].distance())
        .reduce(|| 0.0, f64::max)
}

/// Point-to-plane peak signal-to-noise ratio, or a flag for zero error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
        }
    }
}

/// Mean squared distance from each point of `a` to its nearest point in
/// `b`, measured along the normal at the `a` point.
fn point_to_plane_mse(a: &[Vec3], normals: &[Vec3], b: &KdTree) -> f64 {
    let e: Vec<f64> = a
        .par_iter()
        .zip(normals)
        .map(|(x, n)| {
            let nb = b.point(b.nearest_one(x).expect("non-empty tree").index);
            let d = (x - nb).dot(n);
            d * d
        })
        .collect();
    mean(e)
}

/// `10·log10(r² / max(MSE(p, q), MSE(q, p)))` with `r` the intrinsic
/// resolution of `p`. Normals for each direction come from its first cloud.
pub fn psnr(p: &[Vec3], q: &[Vec3]) -> Result<Psnr> {
    let k = NORMAL_NEIGHBORS;
    for c in [p, q] {
        if c.len() < k + 1 {
            return Err(Error::TooFewPoints {
                needed: k + 1,
                got: c.len(),
            });
        }
    }
    let tp = KdTree::build(p.to_vec());
    let tq = KdTree::build(q.to_vec());
    let r = resolution_with(&tp);
    let mse_pq = point_to_plane_mse(p, &normals_with(&tp, k), &tq);
    let mse_qp = point_to_plane_mse(q, &normals_with(&tq, k), &tp);
    if mse_pq < PSNR_ZERO_MSE && mse_qp < PSNR_ZERO_MSE {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Db(10.0 * (r * r / mse_pq.max(mse_qp)).log10()))
}

/// Fraction of valid pixels whose prediction is within half a step of the
/// quantized truth.
pub fn prediction_accuracy(pred: &RangeImage, truth: &RangeImage, precision: f64) -> Result<f64> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    if pred.valid() != truth.valid() {
        return Err(Error::DimensionMismatch("validity masks differ".into()));
    }
    let (mut hits, mut n) = (0usize, 0usize);
    for ((&q, &t), &v) in pred.ranges().iter().zip(truth.ranges()).zip(truth.valid()) {
        if v {
            n += 1;
            hits += ((q - t).abs() < precision / 2.0) as usize;
        }
    }
    if n == 0 {
        return Err(Error::ZeroPoints);
    }
    Ok(hits as f64 / n as f64)
}

/// Rate-distortion summary of one reconstruction, serialized as JSON.
///
/// ```json
/// {"cd_sym": 0.012, "psnr": 61.3, "bpp": 2.4, "accuracy_at": {"0.1": 0.55}}
/// ```
///
/// `psnr` is the string `"inf"` for a perfect reconstruction; `bpp` is
/// `null` when unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cd_sym: f64,
    pub psnr: Psnr,
    pub bpp: Option<f64>,
    pub accuracy_at: BTreeMap<String, f64>,
}

impl MetricReport {
    /// Distortion metrics of `reconstructed` against `original`.
    pub fn compare(original: &[Vec3], reconstructed: &[Vec3]) -> Result<Self> {
        Ok(MetricReport {
            cd_sym: chamfer_sym(original, reconstructed)?,
            psnr: psnr(original, reconstructed)?,
            bpp: None,
            accuracy_at: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
