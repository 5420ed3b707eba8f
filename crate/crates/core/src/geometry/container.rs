//! On-disk formats for range images and their calibration sidecar.
//!
//! `RIMG` layout, little-endian:
//!
//! | field       | type              |
//! |-------------|-------------------|
//! | magic       | `b"RIMG"`         |
//! | version     | u8 (1)            |
//! | height      | u16               |
//! | width       | u16               |
//! | precision   | f64, 0 = raw      |
//! | max_range   | f32               |
//! | ranges      | f32 × H·W         |
//! | valid mask  | ⌈H·W/8⌉ bytes     |
//!
//! Ranges and mask are row-major. Mask bit `k` lives in byte `k / 8` at bit
//! position `k % 8` (LSB first).
//!
//! The sidecar is JSON holding the calibration and one per-column pose list
//! per frame, poses as `(w, x, y, z)` quaternion plus translation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{quantize_value, LidarCalibration, Pose, PoseTrack, RangeImage};
use crate::error::{corrupt, Error, Result};

const MAGIC: &[u8; 4] = b"RIMG";
const VERSION: u8 = 1;

/// Metadata stored alongside the pixels of a `RIMG` file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RimgHeader {
    /// Grid step of the stored ranges; `None` for raw ranges.
    pub precision: Option<f64>,
    pub max_range: f64,
}

pub fn write_rimg<W: Write>(mut w: W, img: &RangeImage, header: RimgHeader) -> Result<()> {
    let h = u16::try_from(img.height())
        .map_err(|_| Error::DimensionMismatch("height exceeds u16".into()))?;
    let wd = u16::try_from(img.width())
        .map_err(|_| Error::DimensionMismatch("width exceeds u16".into()))?;
    let mut buf = Vec::with_capacity(21 + img.len() * 4 + img.len().div_ceil(8));
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&h.to_le_bytes());
    buf.extend_from_slice(&wd.to_le_bytes());
    buf.extend_from_slice(&header.precision.unwrap_or(0.0).to_le_bytes());
    buf.extend_from_slice(&(header.max_range as f32).to_le_bytes());
    for &r in img.ranges() {
        buf.extend_from_slice(&(r as f32).to_le_bytes());
    }
    buf.extend_from_slice(&pack_bits(img.valid()));
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a `RIMG` file.
///
/// Raw images have ranges beyond `max_range` marked invalid. Quantized images
/// are snapped back onto their grid, which undoes the f32 storage rounding.
pub fn read_rimg<R: Read>(mut r: R) -> Result<(RangeImage, RimgHeader)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(4)? != MAGIC {
        return Err(corrupt("not a RIMG file"));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::Unsupported(format!("RIMG version {version}")));
    }
    let h = cur.u16()? as usize;
    let w = cur.u16()? as usize;
    let precision = cur.f64()?;
    let max_range = cur.f32()? as f64;
    if !(precision >= 0.0) || !(max_range > 0.0) {
        return Err(corrupt("bad RIMG precision or max_range"));
    }
    let n = h * w;
    let mut ranges = Vec::with_capacity(n);
    for _ in 0..n {
        ranges.push(cur.f32()? as f64);
    }
    let valid = unpack_bits(cur.take(n.div_ceil(8))?, n);
    if cur.remaining() != 0 {
        return Err(corrupt("trailing bytes after RIMG mask"));
    }
    let mut valid = valid;
    for (range, v) in ranges.iter_mut().zip(valid.iter_mut()) {
        if !*v {
            *range = 0.0;
            continue;
        }
        if !range.is_finite() || *range < 0.0 {
            return Err(corrupt("RIMG holds a negative or non-finite range"));
        }
        if precision > 0.0 {
            *range = quantize_value(*range, precision);
        } else if *range > max_range {
            *v = false;
            *range = 0.0;
        }
    }
    let img = RangeImage::from_parts(h, w, ranges, valid)?;
    Ok((
        img,
        RimgHeader {
            precision: (precision > 0.0).then_some(precision),
            max_range,
        },
    ))
}

pub(crate) fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (k, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        out[k / 8] |= 1 << (k % 8);
    }
    out
}

pub(crate) fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("RIMG file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// One column pose in the sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

/// Calibration plus the pose tracks of every frame in a sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub max_range: f64,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
    /// `frames[t][j]` is the pose of column `j` in frame `t`.
    pub frames: Vec<Vec<PoseRecord>>,
}

impl Sidecar {
    pub fn new(calib: &LidarCalibration, tracks: &[PoseTrack]) -> Self {
        let frames = tracks
            .iter()
            .map(|t| {
                t.poses()
                    .iter()
                    .map(|p| PoseRecord {
                        rotation: p.quaternion(),
                        translation: (*p.translation()).into(),
                    })
                    .collect()
            })
            .collect();
        Sidecar {
            max_range: calib.max_range(),
            elevations: calib.elevations().to_vec(),
            azimuths: calib.azimuths().to_vec(),
            frames,
        }
    }

    pub fn calibration(&self) -> Result<LidarCalibration> {
        LidarCalibration::new(
            self.elevations.clone(),
            self.azimuths.clone(),
            self.max_range,
        )
    }

    pub fn track(&self, frame: usize) -> Result<PoseTrack> {
        let records = self.frames.get(frame).ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "sidecar has {} pose tracks, frame {frame} requested",
                self.frames.len()
            ))
        })?;
        let poses = records
            .iter()
            .map(|r| Pose::from_quaternion(r.rotation, r.translation))
            .collect::<Result<Vec<_>>>()?;
        let track = PoseTrack::new(poses);
        track.check_width(self.azimuths.len())?;
        Ok(track)
    }

    pub fn tracks(&self) -> Result<Vec<PoseTrack>> {
        (0..self.frames.len()).map(|t| self.track(t)).collect()
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}
