//! Frame and sequence encoding.
//!
//! A frame is quantized, tiled into blocks and each block's valid pixels are
//! predicted in raster order from context inside the same block. Only the
//! integer residuals `code − round(prediction / precision)` are stored, one
//! [`CodedBlock`] per non-empty block. The validity mask is coded once per
//! frame.
//!
//! # Frame layout (little-endian)
//!
//! | field            | type                                   |
//! |------------------|----------------------------------------|
//! | magic            | `b"RFRM"`                              |
//! | version          | u8 (1)                                 |
//! | height, width    | u16, u16                               |
//! | precision        | f64, meters                            |
//! | max_range        | f32, meters                            |
//! | predictor id     | u8 (0 previous-valid, 1 linear, 2 anchor intra, 3 anchor temporal) |
//! | weight digest    | 32 bytes, SHA-256 of the `RWGT` bundle, zeros for baselines |
//! | rounding id      | u8 (0 = half away from zero)           |
//! | flags            | u8: bit 0 intra reprojection, bit 1 previous frame used |
//! | block_h, block_w | u16, u16                               |
//! | block count      | u32                                    |
//! | mask offset, len | u32, u32                               |
//! | block offsets    | u32 per block, `u32::MAX` for a block with no valid pixel |
//! | body CRC-32      | u32 over the body                      |
//!
//! Offsets are relative to the start of the body, which holds the mask bytes
//! followed by the coded blocks in row-major block order.
//!
//! A sequence file is `b"RSEQ"`, version u8, frame count u32, then for each
//! frame its byte length as u32 and the frame bytes.

mod registry;

use rayon::prelude::*;

use crate::entropy::{choose_coder, decode_mask, encode_mask, CodedBlock, ResidualMap};
use crate::error::{corrupt, Error, Result};
use crate::geometry::{
    code_to_range, image_codes, quantize_code, quantize_with, LidarCalibration, PoseTrack, QuantizationSpec,
    RangeImage,
};
use crate::predictor::{predict, DecodeWindow, PredictionState, PredictorKind, PrevFrameIndex};

pub use registry::WeightRegistry;

const MAGIC: &[u8; 4] = b"RFRM";
const SEQ_MAGIC: &[u8; 4] = b"RSEQ";
const VERSION: u8 = 1;
/// Bytes of a frame header before the block offset table.
pub const HEADER_FIXED_LEN: usize = 72;
const EMPTY_BLOCK: u32 = u32::MAX;

pub const FLAG_INTRA_REPROJECTION: u8 = 1;
pub const FLAG_TEMPORAL_CONTEXT: u8 = 2;
pub const ROUNDING_HALF_AWAY: u8 = 0;

/// Tiling of a frame into independently coded blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub block_h: usize,
    pub block_w: usize,
}

impl Default for BlockLayout {
    fn default() -> Self {
        BlockLayout {
            block_h: 16,
            block_w: 50,
        }
    }
}

/// One tile: top-left corner and size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockRect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockLayout {
    pub fn new(block_h: usize, block_w: usize) -> Result<Self> {
        if block_h == 0 || block_w == 0 || block_h > u16::MAX as usize || block_w > u16::MAX as usize
        {
            return Err(Error::DimensionMismatch(format!(
                "block size {block_h}x{block_w} must be in 1..=65535"
            )));
        }
        Ok(BlockLayout { block_h, block_w })
    }

    /// A single block covering an `h`×`w` frame.
    pub fn whole(h: usize, w: usize) -> Self {
        BlockLayout {
            block_h: h.max(1),
            block_w: w.max(1),
        }
    }

    /// Blocks of an `h`×`w` frame in row-major order; edge blocks are cut
    /// short.
    pub fn blocks(&self, h: usize, w: usize) -> Vec<BlockRect> {
        let mut out = Vec::new();
        for row0 in (0..h).step_by(self.block_h) {
            for col0 in (0..w).step_by(self.block_w) {
                out.push(BlockRect {
                    row0,
                    col0,
                    rows: self.block_h.min(h - row0),
                    cols: self.block_w.min(w - col0),
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameHeader {
    pub height: usize,
    pub width: usize,
    pub precision: f64,
    pub max_range: f32,
    pub predictor_id: u8,
    pub weight_digest: [u8; 32],
    pub rounding: u8,
    pub flags: u8,
    pub layout: BlockLayout,
    pub mask_offset: u32,
    pub mask_len: u32,
    /// Body offset of each block, `None` for blocks without valid pixels.
    pub block_offsets: Vec<Option<u32>>,
}

impl FrameHeader {
    pub fn uses_previous_frame(&self) -> bool {
        self.flags & FLAG_TEMPORAL_CONTEXT != 0
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED_LEN + 4 * self.block_offsets.len() + 4
    }
}

/// An encoded frame: header, mask payload and one coded block per non-empty
/// tile.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedFrame {
    pub header: FrameHeader,
    pub mask: Vec<u8>,
    pub blocks: Vec<Option<CodedBlock>>,
}

impl CompressedFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = self.mask.clone();
        for b in self.blocks.iter().flatten() {
            b.write_to(&mut body);
        }
        let h = &self.header;
        let mut out = Vec::with_capacity(h.encoded_len() + body.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(h.height as u16).to_le_bytes());
        out.extend_from_slice(&(h.width as u16).to_le_bytes());
        out.extend_from_slice(&h.precision.to_le_bytes());
        out.extend_from_slice(&h.max_range.to_le_bytes());
        out.push(h.predictor_id);
        out.extend_from_slice(&h.weight_digest);
        out.push(h.rounding);
        out.push(h.flags);
        out.extend_from_slice(&(h.layout.block_h as u16).to_le_bytes());
        out.extend_from_slice(&(h.layout.block_w as u16).to_le_bytes());
        out.extend_from_slice(&(h.block_offsets.len() as u32).to_le_bytes());
        out.extend_from_slice(&h.mask_offset.to_le_bytes());
        out.extend_from_slice(&h.mask_len.to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_FIXED_LEN);
        for off in &h.block_offsets {
            out.extend_from_slice(&off.unwrap_or(EMPTY_BLOCK).to_le_bytes());
        }
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("not a compressed frame"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Unsupported(format!("frame version {version}")));
        }
        let height = r.u16()? as usize;
        let width = r.u16()? as usize;
        let precision = f64::from_le_bytes(r.array()?);
        let max_range = f32::from_le_bytes(r.array()?);
        let predictor_id = r.u8()?;
        let weight_digest: [u8; 32] = r.array()?;
        let rounding = r.u8()?;
        let flags = r.u8()?;
        let block_h = r.u16()? as usize;
        let block_w = r.u16()? as usize;
        let count = r.u32()? as usize;
        let mask_offset = r.u32()?;
        let mask_len = r.u32()?;
        if rounding != ROUNDING_HALF_AWAY {
            return Err(Error::Unsupported(format!("rounding rule {rounding}")));
        }
        if flags & !(FLAG_INTRA_REPROJECTION | FLAG_TEMPORAL_CONTEXT) != 0 {
            return Err(corrupt(format!("unknown header flags {flags:#04x}")));
        }
        if flags & FLAG_INTRA_REPROJECTION != 0 {
            return Err(Error::Unsupported("intra-frame reprojection".into()));
        }
        QuantizationSpec::new(precision).map_err(|_| corrupt(format!("precision {precision}")))?;
        let layout = BlockLayout::new(block_h, block_w).map_err(|e| corrupt(e.to_string()))?;
        let rects = layout.blocks(height, width);
        if rects.len() != count {
            return Err(corrupt(format!(
                "{count} blocks declared, layout gives {}",
                rects.len()
            )));
        }
        let block_offsets = (0..count)
            .map(|_| r.u32().map(|o| (o != EMPTY_BLOCK).then_some(o)))
            .collect::<Result<Vec<_>>>()?;
        let crc = r.u32()?;
        let body = &bytes[r.pos..];
        if crc32fast::hash(body) != crc {
            return Err(corrupt("frame body checksum mismatch"));
        }
        let slice = |off: u32, len: usize| -> Result<&[u8]> {
            let off = off as usize;
            off.checked_add(len)
                .filter(|&e| e <= body.len())
                .map(|e| &body[off..e])
                .ok_or_else(|| corrupt("offset runs past the frame body"))
        };
        let mask = slice(mask_offset, mask_len as usize)?.to_vec();
        let mut blocks = Vec::with_capacity(count);
        for off in &block_offsets {
            blocks.push(match *off {
                None => None,
                Some(off) => {
                    let rest = body
                        .get(off as usize..)
                        .ok_or_else(|| corrupt("block offset runs past the frame body"))?;
                    Some(CodedBlock::read_from(rest)?.0)
                }
            });
        }
        Ok(CompressedFrame {
            header: FrameHeader {
                height,
                width,
                precision,
                max_range,
                predictor_id,
                weight_digest,
                rounding,
                flags,
                layout,
                mask_offset,
                mask_len,
                block_offsets,
            },
            mask,
            blocks,
        })
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        self.header.encoded_len()
            + self.mask.len()
            + self.blocks.iter().flatten().map(|b| b.encoded_len()).sum::<usize>()
    }

    pub fn valid_count(&self) -> Result<usize> {
        let mask = decode_mask(&self.mask, self.header.height * self.header.width)?;
        Ok(mask.iter().filter(|&&v| v).count())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("frame header is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

/// Bits per valid point of the serialized frame.
pub fn bpp(cf: &CompressedFrame) -> Result<f64> {
    let n = cf.valid_count()?;
    if n == 0 {
        return Err(Error::ZeroPoints);
    }
    Ok(cf.byte_len() as f64 * 8.0 / n as f64)
}

/// A decoded frame made available as temporal context.
#[derive(Clone, Debug)]
pub struct PreviousFrame {
    index: PrevFrameIndex,
}

impl PreviousFrame {
    /// `img` must be the decoded (quantized) frame, with the calibration and
    /// pose track it was captured with.
    pub fn new(img: &RangeImage, calib: &LidarCalibration, track: &PoseTrack) -> Result<Self> {
        Ok(PreviousFrame {
            index: PrevFrameIndex::from_image(img, calib, track)?,
        })
    }

    pub fn index(&self) -> &PrevFrameIndex {
        &self.index
    }
}

fn check_inputs(
    img: &RangeImage,
    calib: &LidarCalibration,
    track: &PoseTrack,
) -> Result<()> {
    calib.check_image(img)?;
    track.check_width(img.width())?;
    if img.height() > u16::MAX as usize || img.width() > u16::MAX as usize {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} exceeds the 65535 limit",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Walks one block's valid pixels in raster order. `code_of(n, i, j,
/// predicted_code)` yields the grid code of the `n`-th valid pixel; its range
/// is written back so later pixels can read it. Returns the unquantized
/// predictions in the same order.
fn walk_block(
    kind: &PredictorKind,
    state: &PredictionState<'_>,
    rect: BlockRect,
    precision: f64,
    valid: &[bool],
    width: usize,
    mut code_of: impl FnMut(usize, usize, usize, i64) -> Result<i64>,
) -> Result<Vec<f64>> {
    let mut win = DecodeWindow::new(rect.row0, rect.col0, rect.rows, rect.cols);
    let mut preds = Vec::new();
    for i in rect.row0..rect.row0 + rect.rows {
        for j in rect.col0..rect.col0 + rect.cols {
            if !valid[i * width + j] {
                continue;
            }
            let pred = predict(kind, &win, state, i, j)?;
            let code = code_of(preds.len(), i, j, quantize_code(pred, precision))?;
            preds.push(pred);
            win.set(i, j, code_to_range(code, precision));
        }
    }
    Ok(preds)
}

struct Encoded {
    quantized: RangeImage,
    rects: Vec<BlockRect>,
    residuals: Vec<ResidualMap>,
    predictions: Vec<Vec<f64>>,
    flags: u8,
}

fn run_encoder(
    img: &RangeImage,
    calib: &LidarCalibration,
    track: &PoseTrack,
    spec: QuantizationSpec,
    kind: &PredictorKind,
    layout: BlockLayout,
    prev: Option<&PreviousFrame>,
) -> Result<Encoded> {
    check_inputs(img, calib, track)?;
    kind.validate()?;
    let precision = spec.precision();
    let quantized = quantize_with(img, precision);
    let codes = image_codes(img, precision);
    let prev = if kind.is_temporal() { prev } else { None };
    let state = PredictionState {
        calib,
        track,
        prev: prev.map(PreviousFrame::index),
    };
    let width = img.width();
    let rects = layout.blocks(img.height(), width);
    let per_block = rects
        .par_iter()
        .map(|&rect| {
            let mut deltas = Vec::new();
            let preds = walk_block(kind, &state, rect, precision, img.valid(), width, |_, i, j, p| {
                let k = codes[i * width + j];
                deltas.push(k - p);
                Ok(k)
            })?;
            Ok((ResidualMap::new(deltas)?, preds))
        })
        .collect::<Result<Vec<_>>>()?;
    let (residuals, predictions) = per_block.into_iter().unzip();
    Ok(Encoded {
        quantized,
        rects,
        residuals,
        predictions,
        flags: if prev.is_some() { FLAG_TEMPORAL_CONTEXT } else { 0 },
    })
}

/// Encodes one frame.
///
/// `prev` is the previous decoded frame; it is only read by the temporal
/// predictor. A temporal predictor without `prev` codes the frame from intra
/// context and clears the header's previous-frame flag.
pub fn encode_frame(
    img: &RangeImage,
    calib: &LidarCalibration,
    track: &PoseTrack,
    spec: QuantizationSpec,
    kind: &PredictorKind,
    layout: BlockLayout,
    prev: Option<&PreviousFrame>,
) -> Result<CompressedFrame> {
    let enc = run_encoder(img, calib, track, spec, kind, layout, prev)?;
    let blocks: Vec<Option<CodedBlock>> = enc
        .residuals
        .par_iter()
        .map(|res| (!res.is_empty()).then(|| choose_coder(res)))
        .collect();
    let mask = encode_mask(img.valid());
    let mut offset = mask.len();
    let mut block_offsets = Vec::with_capacity(blocks.len());
    for b in &blocks {
        block_offsets.push(b.as_ref().map(|b| {
            let o = offset as u32;
            offset += b.encoded_len();
            o
        }));
    }
    if offset > EMPTY_BLOCK as usize {
        return Err(Error::DimensionMismatch("frame body exceeds 4 GiB".into()));
    }
    Ok(CompressedFrame {
        header: FrameHeader {
            height: img.height(),
            width: img.width(),
            precision: spec.precision(),
            max_range: calib.max_range() as f32,
            predictor_id: kind.id(),
            weight_digest: kind.digest(),
            rounding: ROUNDING_HALF_AWAY,
            flags: enc.flags,
            layout,
            mask_offset: 0,
            mask_len: mask.len() as u32,
            block_offsets,
        },
        mask,
        blocks,
    })
}

/// Checks a frame header against the decoding inputs and resolves its
/// predictor.
pub fn resolve_header(
    header: &FrameHeader,
    calib: &LidarCalibration,
    track: &PoseTrack,
    weights: &WeightRegistry,
    prev_given: bool,
) -> Result<PredictorKind> {
    if header.height != calib.height() || header.width != calib.width() {
        return Err(Error::HeaderMismatch(format!(
            "frame is {}x{}, calibration is {}x{}",
            header.height,
            header.width,
            calib.height(),
            calib.width()
        )));
    }
    if header.max_range != calib.max_range() as f32 {
        return Err(Error::HeaderMismatch(format!(
            "frame max_range {} differs from calibration {}",
            header.max_range,
            calib.max_range()
        )));
    }
    if track.len() != header.width {
        return Err(Error::HeaderMismatch(format!(
            "pose track has {} columns, frame has {}",
            track.len(),
            header.width
        )));
    }
    let kind =
        PredictorKind::from_header(header.predictor_id, &header.weight_digest, &|d| weights.get(d))?;
    kind.validate()?;
    if header.uses_previous_frame() {
        if !kind.is_temporal() {
            return Err(corrupt("previous-frame flag on a non-temporal predictor"));
        }
        if !prev_given {
            return Err(Error::MissingPreviousFrame);
        }
    }
    Ok(kind)
}

/// Reconstructs the quantized frame.
pub fn decode_frame(
    cf: &CompressedFrame,
    calib: &LidarCalibration,
    track: &PoseTrack,
    weights: &WeightRegistry,
    prev: Option<&PreviousFrame>,
) -> Result<RangeImage> {
    let h = &cf.header;
    let kind = resolve_header(h, calib, track, weights, prev.is_some())?;
    let (height, width, precision) = (h.height, h.width, h.precision);
    let valid = decode_mask(&cf.mask, height * width)?;
    let rects = h.layout.blocks(height, width);
    if rects.len() != cf.blocks.len() {
        return Err(corrupt("block count does not match the layout"));
    }
    let state = PredictionState {
        calib,
        track,
        prev: if h.uses_previous_frame() {
            prev.map(PreviousFrame::index)
        } else {
            None
        },
    };
    let decoded = rects
        .par_iter()
        .zip(&cf.blocks)
        .map(|(&rect, block)| {
            let n = (rect.row0..rect.row0 + rect.rows)
                .flat_map(|i| (rect.col0..rect.col0 + rect.cols).map(move |j| i * width + j))
                .filter(|&k| valid[k])
                .count();
            let deltas = match block {
                None if n == 0 => return Ok(Vec::new()),
                None => return Err(corrupt("missing block for valid pixels")),
                Some(b) if b.symbol_count as usize != n => {
                    return Err(corrupt(format!(
                        "block holds {} residuals for {n} valid pixels",
                        b.symbol_count
                    )))
                }
                Some(b) => b.decode()?.into_deltas(),
            };
            let mut out = Vec::with_capacity(n);
            walk_block(&kind, &state, rect, precision, &valid, width, |k, i, j, p| {
                let code = p
                    .checked_add(deltas[k])
                    .filter(|&c| c >= 0)
                    .ok_or_else(|| corrupt("residual yields a negative range"))?;
                out.push((i * width + j, code));
                Ok(code)
            })?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranges = vec![0.0; height * width];
    for (k, code) in decoded.into_iter().flatten() {
        ranges[k] = code_to_range(code, precision);
    }
    RangeImage::from_parts(height, width, ranges, valid)
}

/// Prediction-stage output of a frame, for analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameAnalysis {
    pub quantized: RangeImage,
    /// Unquantized prediction at every valid pixel.
    pub predictions: RangeImage,
    /// Residual maps of the blocks, row-major.
    pub block_residuals: Vec<ResidualMap>,
}

impl FrameAnalysis {
    /// All residuals, block by block.
    pub fn residuals(&self) -> impl Iterator<Item = i64> + '_ {
        self.block_residuals.iter().flat_map(|r| r.deltas().iter().copied())
    }

    pub fn zero_fraction(&self) -> f64 {
        let (mut zeros, mut n) = (0usize, 0usize);
        for d in self.residuals() {
            n += 1;
            zeros += (d == 0) as usize;
        }
        if n == 0 {
            1.0
        } else {
            zeros as f64 / n as f64
        }
    }
}

/// Runs the encoder's prediction stage and returns its intermediate values.
pub fn analyze_frame(
    img: &RangeImage,
    calib: &LidarCalibration,
    track: &PoseTrack,
    spec: QuantizationSpec,
    kind: &PredictorKind,
    layout: BlockLayout,
    prev: Option<&PreviousFrame>,
) -> Result<FrameAnalysis> {
    let enc = run_encoder(img, calib, track, spec, kind, layout, prev)?;
    let (height, width) = (img.height(), img.width());
    let mut ranges = vec![0.0; height * width];
    for (rect, preds) in enc.rects.iter().zip(&enc.predictions) {
        let mut it = preds.iter();
        for i in rect.row0..rect.row0 + rect.rows {
            for j in rect.col0..rect.col0 + rect.cols {
                if img.is_valid(i, j) {
                    ranges[i * width + j] = *it.next().expect("one prediction per valid pixel");
                }
            }
        }
    }
    Ok(FrameAnalysis {
        predictions: RangeImage::from_parts(height, width, ranges, img.valid().to_vec())?,
        quantized: enc.quantized,
        block_residuals: enc.residuals,
    })
}

/// Encodes time-ordered frames. Frame `t` uses the decoded frame `t − 1` as
/// temporal context; the first frame is coded intra.
pub fn encode_sequence(
    frames: &[RangeImage],
    calibs: &[LidarCalibration],
    tracks: &[PoseTrack],
    spec: QuantizationSpec,
    kind: &PredictorKind,
    layout: BlockLayout,
) -> Result<Vec<CompressedFrame>> {
    check_sequence(frames.len(), calibs.len(), tracks.len())?;
    let mut out = Vec::with_capacity(frames.len());
    let mut prev: Option<PreviousFrame> = None;
    for t in 0..frames.len() {
        let cf = encode_frame(&frames[t], &calibs[t], &tracks[t], spec, kind, layout, prev.as_ref())?;
        if kind.is_temporal() && t + 1 < frames.len() {
            let decoded = quantize_with(&frames[t], spec.precision());
            prev = Some(PreviousFrame::new(&decoded, &calibs[t], &tracks[t])?);
        }
        out.push(cf);
    }
    Ok(out)
}

pub fn decode_sequence(
    frames: &[CompressedFrame],
    calibs: &[LidarCalibration],
    tracks: &[PoseTrack],
    weights: &WeightRegistry,
) -> Result<Vec<RangeImage>> {
    check_sequence(frames.len(), calibs.len(), tracks.len())?;
    let mut out: Vec<RangeImage> = Vec::with_capacity(frames.len());
    let mut prev: Option<PreviousFrame> = None;
    for t in 0..frames.len() {
        let img = decode_frame(&frames[t], &calibs[t], &tracks[t], weights, prev.as_ref())?;
        if t + 1 < frames.len() && frames[t + 1].header.uses_previous_frame() {
            prev = Some(PreviousFrame::new(&img, &calibs[t], &tracks[t])?);
        } else {
            prev = None;
        }
        out.push(img);
    }
    Ok(out)
}

fn check_sequence(frames: usize, calibs: usize, tracks: usize) -> Result<()> {
    if frames != calibs || frames != tracks {
        return Err(Error::DimensionMismatch(format!(
            "{frames} frames, {calibs} calibrations, {tracks} pose tracks"
        )));
    }
    Ok(())
}

pub fn sequence_to_bytes(frames: &[CompressedFrame]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SEQ_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        let bytes = f.to_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<Vec<CompressedFrame>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != SEQ_MAGIC {
        return Err(corrupt("not a frame sequence"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("sequence version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(bytes.len() / HEADER_FIXED_LEN));
    for _ in 0..count {
        let len = r.u32()? as usize;
        out.push(CompressedFrame::from_bytes(r.take(len)?)?);
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after the last frame"));
    }
    Ok(out)
}

/// Parses either a single frame or a sequence.
pub fn frames_from_bytes(bytes: &[u8]) -> Result<Vec<CompressedFrame>> {
    if bytes.starts_with(SEQ_MAGIC) {
        sequence_from_bytes(bytes)
    } else {
        Ok(vec![CompressedFrame::from_bytes(bytes)?])
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::Pose;
    use crate::predictor::WeightBundle;
    use crate::scene::{generate, small_calibration, SceneKind, SceneSpec};

    fn spec(p: f64) -> QuantizationSpec {
        QuantizationSpec::new(p).unwrap()
    }

    fn kinds() -> Vec<PredictorKind> {
        vec![
            PredictorKind::PreviousValid,
            PredictorKind::LinearInterpolation,
            PredictorKind::AnchorNetIntra(Arc::new(WeightBundle::random(3, 99, &[8, 16], 0, &[8], 1).unwrap())),
            PredictorKind::AnchorNetTemporal(Arc::new(WeightBundle::random(4, 199, &[8, 16], 0, &[8], 2).unwrap())),
        ]
    }

    fn registry() -> WeightRegistry {
        kinds().iter().filter_map(|k| k.weights().cloned()).collect()
    }

    #[test]
    fn layout_tiles_exactly() {
        let rects = BlockLayout::default().blocks(64, 2650);
        assert_eq!(rects.len(), 4 * 53);
        let rects = BlockLayout::new(5, 7).unwrap().blocks(12, 15);
        assert_eq!(rects.len(), 9);
        let area: usize = rects.iter().map(|r| r.rows * r.cols).sum();
        assert_eq!(area, 12 * 15);
        assert_eq!(rects[8], BlockRect { row0: 10, col0: 14, rows: 2, cols: 1 });
        assert!(BlockLayout::new(0, 4).is_err());
    }

    #[test]
    fn all_invalid_frame_has_no_blocks() {
        let calib = small_calibration(8, 20);
        let track = PoseTrack::constant(20, Pose::identity());
        let img = RangeImage::empty(8, 20);
        let cf = encode_frame(&img, &calib, &track, spec(0.1), &PredictorKind::LinearInterpolation, BlockLayout::new(4, 10).unwrap(), None).unwrap();
        assert!(cf.blocks.iter().all(Option::is_none));
        assert_eq!(cf.byte_len(), cf.header.encoded_len() + cf.mask.len());
        assert!(matches!(bpp(&cf), Err(Error::ZeroPoints)));
        let back = decode_frame(&CompressedFrame::from_bytes(&cf.to_bytes()).unwrap(), &calib, &track, &WeightRegistry::new(), None).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn constant_frame_with_linear_predictor() {
        let (h, w) = (8, 20);
        let calib = small_calibration(h, w);
        let track = PoseTrack::constant(w, Pose::identity());
        let img = RangeImage::from_parts(h, w, vec![12.3; h * w], vec![true; h * w]).unwrap();
        let layout = BlockLayout::new(4, 10).unwrap();
        let a = analyze_frame(&img, &calib, &track, spec(0.1), &PredictorKind::LinearInterpolation, layout, None).unwrap();
        // Only the first pixel of each block predicts from nothing.
        for res in &a.block_residuals {
            assert_eq!(res.deltas()[0], 123);
            assert!(res.deltas()[1..].iter().all(|&d| d == 0));
        }
    }

    #[test]
    fn round_trip_all_kinds() {
        let s = generate(
            &SceneSpec::new(SceneKind::MovingSensorPair, 5)
                .with_calibration(small_calibration(16, 120))
                .with_noise(0.02, 0.05),
        );
        let calibs = s.calibrations();
        let reg = registry();
        for kind in kinds() {
            for p in [0.02, 0.1] {
                let layout = BlockLayout::new(8, 30).unwrap();
                let cfs = encode_sequence(&s.frames, &calibs, &s.tracks, spec(p), &kind, layout).unwrap();
                assert_eq!(cfs[1].header.uses_previous_frame(), kind.is_temporal());
                let bytes = sequence_to_bytes(&cfs);
                let parsed = frames_from_bytes(&bytes).unwrap();
                assert_eq!(parsed, cfs);
                let back = decode_sequence(&parsed, &calibs, &s.tracks, &reg).unwrap();
                for (img, dec) in s.frames.iter().zip(&back) {
                    assert_eq!(&quantize_with(img, p), dec, "{} @ {p}", kind.name());
                }
            }
        }
    }

    #[test]
    fn decode_errors() {
        let s = generate(&SceneSpec::new(SceneKind::Planes, 1).with_calibration(small_calibration(8, 64)));
        let (img, calib, track) = (&s.frames[0], &s.spec.calib, &s.tracks[0]);
        let kind = &kinds()[2];
        let cf = encode_frame(img, calib, track, spec(0.1), kind, BlockLayout::default(), None).unwrap();
        let bytes = cf.to_bytes();
        assert!(matches!(
            decode_frame(&cf, calib, track, &WeightRegistry::new(), None),
            Err(Error::UnknownWeights(_))
        ));
        for cut in [10, HEADER_FIXED_LEN + 3, bytes.len() - 1] {
            assert!(matches!(CompressedFrame::from_bytes(&bytes[..cut]), Err(Error::CorruptStream(_))));
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 2;
        flipped[last] ^= 0x10;
        assert!(matches!(CompressedFrame::from_bytes(&flipped), Err(Error::CorruptStream(_))));
        let other = small_calibration(8, 65);
        assert!(matches!(
            decode_frame(&cf, &other, &PoseTrack::constant(65, Pose::identity()), &registry(), None),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn temporal_frame_needs_previous() {
        let s = generate(&SceneSpec::new(SceneKind::StaticPair, 3).with_calibration(small_calibration(8, 64)));
        let calibs = s.calibrations();
        let kind = &kinds()[3];
        let cfs = encode_sequence(&s.frames, &calibs, &s.tracks, spec(0.1), kind, BlockLayout::default()).unwrap();
        assert!(matches!(
            decode_frame(&cfs[1], &calibs[1], &s.tracks[1], &registry(), None),
            Err(Error::MissingPreviousFrame)
        ));
        let single = encode_sequence(&s.frames[..1], &calibs[..1], &s.tracks[..1], spec(0.1), kind, BlockLayout::default()).unwrap();
        let direct = encode_frame(&s.frames[0], &calibs[0], &s.tracks[0], spec(0.1), kind, BlockLayout::default(), None).unwrap();
        assert_eq!(single[0].to_bytes(), direct.to_bytes());
        assert!(!direct.header.uses_previous_frame());
    }

    #[test]
    fn bpp_arithmetic() {
        let cf = CompressedFrame {
            header: FrameHeader {
                height: 10,
                width: 10,
                precision: 0.1,
                max_range: 75.0,
                predictor_id: 0,
                weight_digest: [0; 32],
                rounding: 0,
                flags: 0,
                layout: BlockLayout::whole(10, 10),
                mask_offset: 0,
                mask_len: 0,
                block_offsets: vec![None],
            },
            mask: encode_mask(&[true; 100]),
            blocks: vec![None],
        };
        let bits = cf.byte_len() as f64 * 8.0;
        assert_eq!(bpp(&cf).unwrap(), bits / 100.0);
    }
}
