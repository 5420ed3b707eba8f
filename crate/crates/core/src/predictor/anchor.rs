//! Anchor-classification predictor: weight bundle format and inference.
//!
//! The network treats every context point as an anchor. A shared per-point
//! encoder feeds a max-pooled global feature, which is concatenated back onto
//! a per-point local feature; two heads then score each anchor and regress a
//! correction to its range. The prediction is the best-scoring anchor's range
//! plus its correction.
//!
//! # `RWGT` file layout (little-endian)
//!
//! | field          | type                      |
//! |----------------|---------------------------|
//! | magic          | `b"RWGT"`                 |
//! | version        | u8 (1)                    |
//! | input_dim      | u8 (3 intra, 4 temporal)  |
//! | num_anchors    | u16                       |
//! | normalization  | f32, meters               |
//! | layer count    | u8                        |
//! | per layer      | kind u8, rows u32, cols u32, f32 weights, f32 biases |
//!
//! Layer kinds:
//!
//! * `0` dense on the pooled feature and `1` dense shared across points:
//!   `rows` outputs, `cols` inputs, `rows·cols` row-major weights then `rows`
//!   biases;
//! * `2` max-pool over points: `rows = cols =` width, no floats;
//! * `3` concat global + local: `rows` = output width, `cols` = index of the
//!   earlier layer whose per-point output is the local feature, no floats.
//!   Each point's feature becomes `[global, local]`.
//!
//! The trunk runs through the last pool or concat layer; the layers after it
//! split evenly into the score head and the residual head. A head ends either
//! per point at width 1 or pooled at width `num_anchors`. ReLU follows every
//! dense layer except the last one of each head.
//!
//! Point features are `(Δazimuth, Δelevation, rel_range / normalization)`
//! plus the time channel for `input_dim = 4`. The residual head's output is
//! multiplied by `normalization` to get meters.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::context::ContextPointSet;
use crate::error::{corrupt, Error, Result};

const MAGIC: &[u8; 4] = b"RWGT";
const VERSION: u8 = 1;

/// Anchor slots of the intra-frame model (10×10 patch minus the target).
pub const INTRA_ANCHORS: u16 = 99;
/// Anchor slots of the temporal model (intra slots plus 100 reprojected).
pub const TEMPORAL_ANCHORS: u16 = 199;
pub const DEFAULT_NORMALIZATION: f32 = 75.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerKind {
    Dense = 0,
    PointwiseDense = 1,
    MaxPool = 2,
    ConcatGlobalLocal = 3,
}

impl TryFrom<u8> for LayerKind {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            0 => LayerKind::Dense,
            1 => LayerKind::PointwiseDense,
            2 => LayerKind::MaxPool,
            3 => LayerKind::ConcatGlobalLocal,
            _ => return Err(corrupt(format!("unknown layer kind {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub rows: u32,
    pub cols: u32,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl Layer {
    pub fn dense(rows: usize, cols: usize, weights: Vec<f32>, biases: Vec<f32>) -> Self {
        Layer {
            kind: LayerKind::Dense,
            rows: rows as u32,
            cols: cols as u32,
            weights,
            biases,
        }
    }

    pub fn pointwise(rows: usize, cols: usize, weights: Vec<f32>, biases: Vec<f32>) -> Self {
        Layer {
            kind: LayerKind::PointwiseDense,
            ..Layer::dense(rows, cols, weights, biases)
        }
    }

    pub fn max_pool(width: usize) -> Self {
        Layer {
            kind: LayerKind::MaxPool,
            rows: width as u32,
            cols: width as u32,
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    pub fn concat(out_width: usize, local_layer: usize) -> Self {
        Layer {
            kind: LayerKind::ConcatGlobalLocal,
            rows: out_width as u32,
            cols: local_layer as u32,
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Dense | LayerKind::PointwiseDense)
    }

    fn param_counts(&self) -> (usize, usize) {
        if self.has_params() {
            (self.rows as usize * self.cols as usize, self.rows as usize)
        } else {
            (0, 0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    PerPoint(usize),
    Global(usize),
}

/// How a head's final output maps onto anchors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HeadOutput {
    /// One value per point.
    PerPoint,
    /// `num_anchors` slots, slot `k` for point `k`.
    Slots,
}

#[derive(Clone, Debug, PartialEq)]
struct Plan {
    trunk_end: usize,
    head_len: usize,
}

/// Trained weights of the anchor predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    input_dim: u8,
    num_anchors: u16,
    normalization: f32,
    layers: Vec<Layer>,
    plan: Plan,
}

impl WeightBundle {
    pub fn new(
        input_dim: u8,
        num_anchors: u16,
        normalization: f32,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if !(input_dim == 3 || input_dim == 4) {
            return Err(Error::WeightShapeMismatch(format!(
                "input_dim {input_dim}, expected 3 or 4"
            )));
        }
        if num_anchors == 0 {
            return Err(Error::WeightShapeMismatch("zero anchors".into()));
        }
        if !(normalization.is_finite() && normalization > 0.0) {
            return Err(Error::WeightShapeMismatch(format!(
                "normalization {normalization} must be positive"
            )));
        }
        if layers.len() > u8::MAX as usize {
            return Err(Error::WeightShapeMismatch("more than 255 layers".into()));
        }
        let plan = plan(input_dim as usize, num_anchors as usize, &layers)?;
        Ok(WeightBundle {
            input_dim,
            num_anchors,
            normalization,
            layers,
            plan,
        })
    }

    /// Randomly initialized network with the reference layout: shared
    /// encoder 32-32-64-256, max-pool, concat with the second 32-wide local
    /// feature, and two per-point heads 128-64-1.
    pub fn reference(input_dim: u8, num_anchors: u16, seed: u64) -> Result<Self> {
        Self::random(input_dim, num_anchors, &[32, 32, 64, 256], 1, &[128, 64], seed)
    }

    /// Randomly initialized network: shared per-point `encoder` widths,
    /// max-pool over the last, concat with encoder layer `local`, then two
    /// per-point heads through `head` widths down to 1. He-uniform weights,
    /// zero biases.
    pub fn random(
        input_dim: u8,
        num_anchors: u16,
        encoder: &[usize],
        local: usize,
        head: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if encoder.is_empty() || local >= encoder.len() {
            return Err(Error::WeightShapeMismatch(format!(
                "local layer {local} outside a {}-layer encoder",
                encoder.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |rows: usize, cols: usize| {
            let scale = (6.0 / cols as f64).sqrt();
            let w = (0..rows * cols)
                .map(|_| (rng.gen_range(-1.0..1.0) * scale) as f32)
                .collect();
            Layer::pointwise(rows, cols, w, vec![0.0f32; rows])
        };
        let mut layers = Vec::new();
        let mut width = input_dim as usize;
        for &out in encoder {
            layers.push(init(out, width));
            width = out;
        }
        layers.push(Layer::max_pool(width));
        let joined = width + encoder[local];
        layers.push(Layer::concat(joined, local));
        for _ in 0..2 {
            let mut width = joined;
            for &out in head.iter().chain([&1]) {
                layers.push(init(out, width));
                width = out;
            }
        }
        WeightBundle::new(input_dim, num_anchors, DEFAULT_NORMALIZATION, layers)
    }

    pub fn input_dim(&self) -> u8 {
        self.input_dim
    }

    pub fn num_anchors(&self) -> u16 {
        self.num_anchors
    }

    pub fn normalization(&self) -> f32 {
        self.normalization
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.input_dim);
        out.extend_from_slice(&self.num_anchors.to_le_bytes());
        out.extend_from_slice(&self.normalization.to_le_bytes());
        out.push(self.layers.len() as u8);
        for layer in &self.layers {
            out.push(layer.kind as u8);
            out.extend_from_slice(&layer.rows.to_le_bytes());
            out.extend_from_slice(&layer.cols.to_le_bytes());
            for v in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| corrupt("weight bundle is truncated"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(corrupt("not a RWGT weight bundle"));
        }
        let version = take(1)?[0];
        if version != VERSION {
            return Err(Error::Unsupported(format!("RWGT version {version}")));
        }
        let input_dim = take(1)?[0];
        let num_anchors = u16::from_le_bytes(take(2)?.try_into().unwrap());
        let normalization = f32::from_le_bytes(take(4)?.try_into().unwrap());
        let count = take(1)?[0] as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = LayerKind::try_from(take(1)?[0])?;
            let rows = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let cols = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let mut layer = Layer {
                kind,
                rows,
                cols,
                weights: Vec::new(),
                biases: Vec::new(),
            };
            let (nw, nb) = layer.param_counts();
            let floats = |n: usize, raw: &[u8]| -> Vec<f32> {
                raw.chunks_exact(4)
                    .take(n)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            };
            let wbytes = nw
                .checked_mul(4)
                .ok_or_else(|| corrupt("layer too large"))?;
            layer.weights = floats(nw, take(wbytes)?);
            layer.biases = floats(nb, take(nb * 4)?);
            layers.push(layer);
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes after weight bundle"));
        }
        WeightBundle::new(input_dim, num_anchors, normalization, layers)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized bundle.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn plan(input_dim: usize, num_anchors: usize, layers: &[Layer]) -> Result<Plan> {
    let mismatch = |k: usize, msg: String| Error::WeightShapeMismatch(format!("layer {k}: {msg}"));
    for (k, layer) in layers.iter().enumerate() {
        let (nw, nb) = layer.param_counts();
        if layer.weights.len() != nw || layer.biases.len() != nb {
            return Err(mismatch(k, "parameter count does not match rows × cols".into()));
        }
        if layer.has_params() && (layer.rows == 0 || layer.cols == 0) {
            return Err(mismatch(k, "zero-sized dense layer".into()));
        }
    }
    let trunk_end = layers
        .iter()
        .rposition(|l| !l.has_params())
        .map_or(0, |k| k + 1);
    let head_layers = layers.len() - trunk_end;
    if head_layers == 0 || !head_layers.is_multiple_of(2) {
        return Err(Error::WeightShapeMismatch(format!(
            "{head_layers} layers after the trunk cannot form two equal heads"
        )));
    }
    let head_len = head_layers / 2;

    let mut shapes = Vec::with_capacity(layers.len());
    let mut shape = Shape::PerPoint(input_dim);
    for (k, layer) in layers[..trunk_end].iter().enumerate() {
        shape = step_shape(k, layer, shape, &shapes)?;
        shapes.push(shape);
    }
    let mut head_output = None;
    for h in 0..2 {
        let mut s = shape;
        for k in trunk_end + h * head_len..trunk_end + (h + 1) * head_len {
            s = step_shape(k, &layers[k], s, &shapes)?;
        }
        let out = match s {
            Shape::PerPoint(1) => HeadOutput::PerPoint,
            Shape::Global(w) if w == num_anchors => HeadOutput::Slots,
            other => {
                return Err(Error::WeightShapeMismatch(format!(
                    "head {h} ends in {other:?}; expected one value per point or {num_anchors} slots"
                )))
            }
        };
        if head_output.is_some_and(|o| o != out) {
            return Err(Error::WeightShapeMismatch("heads disagree in output form".into()));
        }
        head_output = Some(out);
    }
    Ok(Plan {
        trunk_end,
        head_len,
    })
}

fn step_shape(k: usize, layer: &Layer, input: Shape, trunk: &[Shape]) -> Result<Shape> {
    let bad = |msg: String| Error::WeightShapeMismatch(format!("layer {k}: {msg}"));
    let (rows, cols) = (layer.rows as usize, layer.cols as usize);
    match (layer.kind, input) {
        (LayerKind::PointwiseDense, Shape::PerPoint(w)) if w == cols => Ok(Shape::PerPoint(rows)),
        (LayerKind::Dense, Shape::Global(w)) if w == cols => Ok(Shape::Global(rows)),
        (LayerKind::MaxPool, Shape::PerPoint(w)) if w == cols && w == rows => Ok(Shape::Global(w)),
        (LayerKind::ConcatGlobalLocal, Shape::Global(g)) => match trunk.get(cols) {
            Some(Shape::PerPoint(l)) if g + l == rows => Ok(Shape::PerPoint(rows)),
            _ => Err(bad(format!(
                "concat of global width {g} with layer {cols} does not give width {rows}"
            ))),
        },
        (kind, shape) => Err(bad(format!("{kind:?} {rows}x{cols} cannot take input {shape:?}"))),
    }
}

/// Scores, residuals (meters) and the resulting prediction. Both vectors have
/// `num_anchors` entries; slots without a point hold −∞ and 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorOutput {
    pub anchor_logits: Vec<f64>,
    pub anchor_residuals: Vec<f64>,
    pub anchor: usize,
    pub predicted_range: f64,
}

/// Per-point activations are stored row-major, one row per point.
#[derive(Clone)]
enum Activation {
    Points { data: Vec<f64>, width: usize },
    Global(Vec<f64>),
    /// `[global, local]` per point, where `local` is the saved output of a
    /// trunk layer; kept unmaterialized so the global part of the next dense
    /// layer is computed once.
    Joined { global: Vec<f64>, local: usize },
}

type Saved = Vec<Option<(Vec<f64>, usize)>>;

/// Forward pass of `weights` over `ctx`.
pub fn anchor_net_infer(
    ctx: &ContextPointSet,
    weights: &WeightBundle,
    max_range: f64,
) -> Result<PredictorOutput> {
    let n = ctx.len();
    let anchors = weights.num_anchors as usize;
    if n == 0 {
        return Err(Error::WeightShapeMismatch("empty context".into()));
    }
    if n > anchors {
        return Err(Error::WeightShapeMismatch(format!(
            "{n} context points exceed {anchors} anchors"
        )));
    }
    let temporal = weights.input_dim == 4;
    if !temporal && ctx.points().iter().any(|p| p.time != 0) {
        return Err(Error::WeightShapeMismatch(
            "previous-frame points given to an intra-frame bundle".into(),
        ));
    }
    let norm = weights.normalization as f64;
    let width = weights.input_dim as usize;
    let mut data = Vec::with_capacity(n * width);
    for p in ctx.points() {
        data.extend_from_slice(&[p.d_azimuth, p.d_elevation, p.rel_range / norm]);
        if temporal {
            data.push(p.time as f64);
        }
    }

    let plan = &weights.plan;
    let layers = &weights.layers;
    let mut saved: Saved = vec![None; plan.trunk_end];
    let mut act = Activation::Points { data, width };
    for k in 0..plan.trunk_end {
        act = apply(&layers[k], act, true, n, &saved);
        if let Activation::Points { ref data, width } = act {
            let wanted = layers
                .iter()
                .any(|l| l.kind == LayerKind::ConcatGlobalLocal && l.cols as usize == k);
            if wanted {
                saved[k] = Some((data.clone(), width));
            }
        }
    }

    let mut heads: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (h, head) in heads.iter_mut().enumerate() {
        let start = plan.trunk_end + h * plan.head_len;
        let mut a = act.clone();
        for k in start..start + plan.head_len {
            let last = k + 1 == start + plan.head_len;
            a = apply(&layers[k], a, !last, n, &saved);
        }
        let mut v = match a {
            Activation::Points { data, .. } => data,
            Activation::Global(v) => v,
            Activation::Joined { .. } => unreachable!("heads end in a dense layer"),
        };
        v.resize(anchors, 0.0);
        *head = v;
    }
    let [mut logits, mut residuals] = heads;
    for k in n..anchors {
        logits[k] = f64::NEG_INFINITY;
        residuals[k] = 0.0;
    }
    for r in residuals.iter_mut() {
        *r *= norm;
    }
    let mut best = 0;
    for k in 1..n {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    let predicted_range = (ctx.anchor_ranges()[best] + residuals[best]).clamp(0.0, max_range);
    Ok(PredictorOutput {
        anchor_logits: logits,
        anchor_residuals: residuals,
        anchor: best,
        predicted_range,
    })
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn dot(w: &[f32], x: &[f64], init: f64) -> f64 {
    w.iter().zip(x).fold(init, |acc, (&w, &v)| acc + w as f64 * v)
}

fn materialize(act: Activation, n: usize, saved: &Saved) -> (Vec<f64>, usize) {
    match act {
        Activation::Points { data, width } => (data, width),
        Activation::Joined { global, local } => {
            let (l, lw) = saved[local].as_ref().expect("local feature kept");
            let width = global.len() + lw;
            let mut data = Vec::with_capacity(n * width);
            for p in 0..n {
                data.extend_from_slice(&global);
                data.extend_from_slice(&l[p * lw..(p + 1) * lw]);
            }
            (data, width)
        }
        Activation::Global(_) => unreachable!("shapes were checked when the bundle was built"),
    }
}

fn apply(layer: &Layer, input: Activation, activate: bool, n: usize, saved: &Saved) -> Activation {
    let (rows, cols) = (layer.rows as usize, layer.cols as usize);
    match (layer.kind, input) {
        (LayerKind::PointwiseDense, Activation::Joined { global, local }) => {
            let (l, lw) = saved[local].as_ref().expect("local feature kept");
            let g = global.len();
            let shared: Vec<f64> = layer
                .weights
                .chunks_exact(cols)
                .zip(&layer.biases)
                .map(|(row, &b)| dot(&row[..g], &global, b as f64))
                .collect();
            let mut data = Vec::with_capacity(n * rows);
            for p in 0..n {
                let x = &l[p * lw..(p + 1) * lw];
                for (row, &s) in layer.weights.chunks_exact(cols).zip(&shared) {
                    data.push(dot(&row[g..], x, s));
                }
            }
            if activate {
                relu(&mut data);
            }
            Activation::Points { data, width: rows }
        }
        (LayerKind::PointwiseDense, Activation::Points { data: x, width }) => {
            debug_assert_eq!(width, cols);
            let mut data = Vec::with_capacity(n * rows);
            for p in x.chunks_exact(width) {
                for (row, &b) in layer.weights.chunks_exact(cols).zip(&layer.biases) {
                    data.push(dot(row, p, b as f64));
                }
            }
            if activate {
                relu(&mut data);
            }
            Activation::Points { data, width: rows }
        }
        (LayerKind::Dense, Activation::Global(x)) => {
            let mut y: Vec<f64> = layer
                .weights
                .chunks_exact(cols)
                .zip(&layer.biases)
                .map(|(row, &b)| dot(row, &x, b as f64))
                .collect();
            if activate {
                relu(&mut y);
            }
            Activation::Global(y)
        }
        (LayerKind::MaxPool, input) => {
            let (data, width) = materialize(input, n, saved);
            let mut pooled = data[..width].to_vec();
            for p in data.chunks_exact(width).skip(1) {
                for (m, &v) in pooled.iter_mut().zip(p) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            Activation::Global(pooled)
        }
        (LayerKind::ConcatGlobalLocal, Activation::Global(global)) => Activation::Joined {
            global,
            local: cols,
        },
        _ => unreachable!("shapes were checked when the bundle was built"),
    }
}
