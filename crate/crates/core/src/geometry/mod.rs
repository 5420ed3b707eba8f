//! Range-image data model and the conversions between pixels, spherical
//! coordinates, the sensor frame and the global frame.
//!
//! A pixel `(i, j)` is the laser shot fired by beam `i` at azimuth column `j`.
//! Its direction comes from the calibration (`elevations[i]`, `azimuths[j]`),
//! and the pose of column `j` places the sensor frame in the world.

mod container;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub use container::{read_rimg, write_rimg, PoseRecord, RimgHeader, Sidecar};

pub type Vec3 = Vector3<f64>;

/// Default crop distance of the sensor, in meters.
pub const DEFAULT_MAX_RANGE: f64 = 75.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// H×W grid of ranges with a validity mask. Rows are laser beams, columns are
/// azimuth steps. Ranges at invalid pixels are stored as 0 and never read.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeImage {
    height: usize,
    width: usize,
    ranges: Vec<f64>,
    valid: Vec<bool>,
}

impl RangeImage {
    /// An image with no returns.
    pub fn empty(height: usize, width: usize) -> Self {
        RangeImage {
            height,
            width,
            ranges: vec![0.0; height * width],
            valid: vec![false; height * width],
        }
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        mut ranges: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        if ranges.len() != n || valid.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} image needs {n} ranges and mask bits, got {} and {}",
                ranges.len(),
                valid.len()
            )));
        }
        for (r, &v) in ranges.iter_mut().zip(&valid) {
            if !v {
                *r = 0.0;
            } else if !r.is_finite() || *r < 0.0 {
                return Err(Error::DimensionMismatch(format!(
                    "valid range {r} is not a finite non-negative number"
                )));
            }
        }
        Ok(RangeImage {
            height,
            width,
            ranges,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    /// Range at `(i, j)` or `None` for an empty shot.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.index(i, j);
        self.valid[k].then(|| self.ranges[k])
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, range: f64) {
        let k = self.index(i, j);
        self.ranges[k] = range;
        self.valid[k] = true;
    }

    pub fn clear(&mut self, i: usize, j: usize) {
        let k = self.index(i, j);
        self.ranges[k] = 0.0;
        self.valid[k] = false;
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Beam elevations (one per row), column azimuths (one per column) and the
/// crop distance of the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarCalibration {
    elevations: Vec<f64>,
    azimuths: Vec<f64>,
    max_range: f64,
}

impl LidarCalibration {
    pub fn new(elevations: Vec<f64>, azimuths: Vec<f64>, max_range: f64) -> Result<Self> {
        if elevations.is_empty() || azimuths.is_empty() {
            return Err(Error::InvalidCalibration("empty angle table".into()));
        }
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "max_range {max_range} must be positive"
            )));
        }
        if elevations.iter().chain(&azimuths).any(|a| !a.is_finite()) {
            return Err(Error::InvalidCalibration("non-finite angle".into()));
        }
        if !strictly_monotonic(elevations.windows(2).map(|w| w[1] - w[0])) {
            return Err(Error::InvalidCalibration(
                "elevations must be strictly monotonic".into(),
            ));
        }
        let steps: Vec<f64> = azimuths
            .windows(2)
            .map(|w| wrap_angle(w[1] - w[0]))
            .collect();
        let sweep: f64 = steps.iter().map(|s| s.abs()).sum();
        if !strictly_monotonic(steps.iter().copied()) || sweep >= 2.0 * PI {
            return Err(Error::InvalidCalibration(
                "azimuths must be strictly monotonic modulo 2π".into(),
            ));
        }
        Ok(LidarCalibration {
            elevations,
            azimuths,
            max_range,
        })
    }

    /// Evenly spaced beams from `top` to `bottom` elevation (radians) and
    /// `width` columns sweeping one revolution clockwise from +π.
    pub fn uniform(height: usize, width: usize, top: f64, bottom: f64, max_range: f64) -> Result<Self> {
        let elevations = (0..height)
            .map(|i| {
                if height == 1 {
                    top
                } else {
                    top + (bottom - top) * i as f64 / (height - 1) as f64
                }
            })
            .collect();
        let step = 2.0 * PI / width as f64;
        let azimuths = (0..width).map(|j| PI - (j as f64 + 0.5) * step).collect();
        Self::new(elevations, azimuths, max_range)
    }

    pub fn height(&self) -> usize {
        self.elevations.len()
    }

    pub fn width(&self) -> usize {
        self.azimuths.len()
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    #[inline]
    pub fn elevation(&self, i: usize) -> f64 {
        self.elevations[i]
    }

    #[inline]
    pub fn azimuth(&self, j: usize) -> f64 {
        self.azimuths[j]
    }

    pub fn check_image(&self, img: &RangeImage) -> Result<()> {
        if img.height() != self.height() || img.width() != self.width() {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but calibration is {}x{}",
                img.height(),
                img.width(),
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

fn strictly_monotonic(mut diffs: impl Iterator<Item = f64>) -> bool {
    let Some(first) = diffs.next() else {
        return true;
    };
    if first == 0.0 {
        return false;
    }
    diffs.all(|d| d != 0.0 && d.signum() == first.signum())
}

/// Rigid transform from the sensor frame to the global frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        if !(off <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {off:e})"
            )));
        }
        let det = rotation.determinant();
        if !((det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn translation_only(translation: Vec3) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Builds a pose from a `(w, x, y, z)` quaternion, normalized first.
    pub fn from_quaternion(wxyz: [f64; 4], translation: [f64; 3]) -> Result<Self> {
        let [w, x, y, z] = wxyz;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) {
            return Err(Error::InvalidPose("zero quaternion".into()));
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        Pose::new(*rot.matrix(), Vec3::from(translation))
    }

    /// Rotation by `yaw` radians about +z, then translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        let (s, c) = yaw.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Pose {
            rotation,
            translation,
        }
    }

    /// `(w, x, y, z)` with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        [sign * q.w, sign * q.i, sign * q.j, sign * q.k]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }
}

/// Per-column sensor poses of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTrack {
    poses: Vec<Pose>,
}

impl PoseTrack {
    pub fn new(poses: Vec<Pose>) -> Self {
        PoseTrack { poses }
    }

    /// Every column shares `pose`.
    pub fn constant(width: usize, pose: Pose) -> Self {
        PoseTrack {
            poses: vec![pose; width],
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    #[inline]
    pub fn pose(&self, column: usize) -> &Pose {
        &self.poses[column]
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        if self.poses.len() != width {
            return Err(Error::DimensionMismatch(format!(
                "pose track has {} columns, image has {width}",
                self.poses.len()
            )));
        }
        Ok(())
    }
}

/// Grid step, in meters, that ranges are rounded to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizationSpec {
    precision: f64,
}

impl QuantizationSpec {
    pub const MIN_PRECISION: f64 = 1e-4;
    pub const MAX_PRECISION: f64 = 0.5;

    pub fn new(precision: f64) -> Result<Self> {
        if !(Self::MIN_PRECISION..=Self::MAX_PRECISION).contains(&precision) {
            return Err(Error::InvalidPrecision(precision));
        }
        Ok(QuantizationSpec { precision })
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Sensor-frame point of a shot with range `r`, azimuth `theta` and
/// elevation `alpha`.
#[inline]
pub fn unproject(r: f64, theta: f64, alpha: f64) -> Vec3 {
    let (sa, ca) = alpha.sin_cos();
    let (st, ct) = theta.sin_cos();
    Vec3::new(r * ca * ct, r * ca * st, r * sa)
}

/// Inverse of [`unproject`]: `(r, theta, alpha)` with `theta` in `(-π, π]`
/// and `alpha` in `[-π/2, π/2]`. At the poles `theta` is 0.
pub fn project(p: &Vec3) -> Result<(f64, f64, f64)> {
    let r = p.norm();
    if r < 1e-12 {
        return Err(Error::ZeroRange);
    }
    let horizontal = p.x.hypot(p.y);
    let alpha = p.z.atan2(horizontal);
    let theta = if alpha.cos() < 1e-12 || horizontal == 0.0 {
        0.0
    } else {
        // atan2 returns [-π, π]; fold -π onto π.
        let t = p.y.atan2(p.x);
        if t == -PI {
            PI
        } else {
            t
        }
    };
    Ok((r, theta, alpha))
}

#[inline]
pub fn to_global(p: &Vec3, pose: &Pose) -> Vec3 {
    pose.rotation * p + pose.translation
}

/// Inverse of [`to_global`].
#[inline]
pub fn to_sensor(p: &Vec3, pose: &Pose) -> Vec3 {
    pose.rotation.transpose() * (p - pose.translation)
}

/// One global-frame point per valid pixel, in raster order.
pub fn image_to_point_cloud(
    img: &RangeImage,
    calib: &LidarCalibration,
    track: &PoseTrack,
) -> Result<Vec<Vec3>> {
    calib.check_image(img)?;
    track.check_width(img.width())?;
    let mut out = Vec::with_capacity(img.valid_count());
    for i in 0..img.height() {
        for j in 0..img.width() {
            if let Some(r) = img.get(i, j) {
                let p = unproject(r, calib.azimuth(j), calib.elevation(i));
                out.push(to_global(&p, track.pose(j)));
            }
        }
    }
    Ok(out)
}

/// Integer grid index of `range`, rounding half away from zero.
#[inline]
pub fn quantize_code(range: f64, precision: f64) -> i64 {
    (range / precision).round() as i64
}

/// The range an integer grid index stands for.
#[inline]
pub fn code_to_range(code: i64, precision: f64) -> f64 {
    code as f64 * precision
}

#[inline]
pub fn quantize_value(range: f64, precision: f64) -> f64 {
    code_to_range(quantize_code(range, precision), precision)
}

/// Rounds every valid range to the nearest multiple of the precision.
pub fn quantize(img: &RangeImage, spec: QuantizationSpec) -> RangeImage {
    quantize_with(img, spec.precision())
}

pub(crate) fn quantize_with(img: &RangeImage, precision: f64) -> RangeImage {
    let mut out = img.clone();
    for (r, &v) in out.ranges.iter_mut().zip(&img.valid) {
        if v {
            *r = quantize_value(*r, precision);
        }
    }
    out
}

/// Grid indices of a quantized image, 0 at invalid pixels.
pub fn image_codes(img: &RangeImage, precision: f64) -> Vec<i64> {
    img.ranges
        .iter()
        .zip(&img.valid)
        .map(|(&r, &v)| if v { quantize_code(r, precision) } else { 0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn assert_vec(p: Vec3, expect: [f64; 3], tol: f64) {
        for k in 0..3 {
            assert!(close(p[k], expect[k], tol), "{p:?} vs {expect:?}");
        }
    }

    #[test]
    fn unproject_examples() {
        assert_vec(unproject(1.0, 0.0, 0.0), [1.0, 0.0, 0.0], 1e-15);
        assert_vec(unproject(2.0, FRAC_PI_2, 0.0), [0.0, 2.0, 0.0], 1e-15);
        // 5·cos(π/6)·cos(π/4), 5·cos(π/6)·sin(π/4), 5·sin(π/6)
        assert_vec(
            unproject(5.0, PI / 4.0, PI / 6.0),
            [3.061862178478973, 3.061862178478973, 2.5],
            1e-12,
        );
    }

    #[test]
    fn project_examples() {
        let (r, t, a) = project(&Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((r, t, a), (1.0, 0.0, 0.0));
        let (r, t, a) = project(&Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!((r, t), (3.0, 0.0));
        assert!(close(a, FRAC_PI_2, 1e-15));
        let (r, t, a) = project(&Vec3::new(3.061862178478973, 3.061862178478973, 2.5)).unwrap();
        assert!(close(r, 5.0, 1e-12));
        assert!(close(t, PI / 4.0, 1e-12));
        assert!(close(a, PI / 6.0, 1e-12));
    }

    #[test]
    fn project_rejects_origin() {
        assert!(matches!(
            project(&Vec3::new(0.0, 1e-13, 0.0)),
            Err(Error::ZeroRange)
        ));
    }

    #[test]
    fn project_theta_range() {
        let (_, t, _) = project(&Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(t, PI);
        let (_, t, _) = project(&Vec3::new(-1.0, -0.0, 0.0)).unwrap();
        assert_eq!(t, PI);
    }

    #[test]
    fn to_global_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(to_global(&p, &Pose::identity()), p);
        let rot = Pose::from_yaw(FRAC_PI_2, Vec3::zeros());
        assert_vec(to_global(&Vec3::x(), &rot), [0.0, 1.0, 0.0], 1e-15);
        let shift = Pose::translation_only(Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(to_global(&Vec3::x(), &shift), Vec3::new(11.0, 0.0, 0.0));
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = -1.0;
        assert!(Pose::new(m, Vec3::zeros()).is_err(), "reflection");
        m[(0, 0)] = 1.0 + 1e-6;
        assert!(Pose::new(m, Vec3::zeros()).is_err());
        let q = [0.9, 0.1, -0.3, 0.2];
        let pose = Pose::from_quaternion(q, [1.0, 2.0, 3.0]).unwrap();
        let back = Pose::from_quaternion(pose.quaternion(), [1.0, 2.0, 3.0]).unwrap();
        assert!((pose.rotation() - back.rotation()).abs().max() < 1e-14);
    }

    #[test]
    fn calibration_validation() {
        assert!(LidarCalibration::new(vec![0.1, 0.0, -0.1], vec![0.5, 0.0], 75.0).is_ok());
        assert!(LidarCalibration::new(vec![0.1, 0.1], vec![0.5, 0.0], 75.0).is_err());
        assert!(LidarCalibration::new(vec![0.1, 0.0, 0.05], vec![0.5], 75.0).is_err());
        // Crossing the ±π seam is fine as long as the sweep keeps its direction.
        assert!(LidarCalibration::new(vec![0.0], vec![-3.0, 3.1, 3.0], 75.0).is_ok());
        assert!(LidarCalibration::new(vec![0.0], vec![0.0, 0.1, 0.05], 75.0).is_err());
        let c = LidarCalibration::uniform(64, 2650, 0.04, -0.3, 75.0).unwrap();
        assert_eq!((c.height(), c.width()), (64, 2650));
    }

    #[test]
    fn image_to_point_cloud_examples() {
        let calib = LidarCalibration::new(vec![0.0], vec![0.0], 75.0).unwrap();
        let track = PoseTrack::constant(1, Pose::identity());
        let empty = RangeImage::empty(1, 1);
        assert!(image_to_point_cloud(&empty, &calib, &track).unwrap().is_empty());
        let mut one = RangeImage::empty(1, 1);
        one.set(0, 0, 1.0);
        let cloud = image_to_point_cloud(&one, &calib, &track).unwrap();
        assert_eq!(cloud, vec![Vec3::new(1.0, 0.0, 0.0)]);

        let short = PoseTrack::constant(2, Pose::identity());
        assert!(matches!(
            image_to_point_cloud(&one, &calib, &short),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn image_to_point_cloud_matches_per_pixel_composition() {
        let elev = [0.1, -0.2];
        let azim = [1.0, 0.5];
        let calib = LidarCalibration::new(elev.to_vec(), azim.to_vec(), 75.0).unwrap();
        let poses = vec![
            Pose::from_yaw(0.3, Vec3::new(1.0, 2.0, 0.5)),
            Pose::from_yaw(0.31, Vec3::new(1.1, 2.0, 0.5)),
        ];
        let track = PoseTrack::new(poses.clone());
        let ranges = [4.0, 5.5, 7.25, 10.0];
        let img = RangeImage::from_parts(2, 2, ranges.to_vec(), vec![true; 4]).unwrap();
        let cloud = image_to_point_cloud(&img, &calib, &track).unwrap();
        assert_eq!(cloud.len(), 4);
        for i in 0..2 {
            for j in 0..2 {
                // Hand composition: local Cartesian, then yaw rotation, then shift.
                let r = ranges[i * 2 + j];
                let (a, t) = (elev[i], azim[j]);
                let local = [r * a.cos() * t.cos(), r * a.cos() * t.sin(), r * a.sin()];
                let yaw = if j == 0 { 0.3_f64 } else { 0.31 };
                let off = if j == 0 { [1.0, 2.0, 0.5] } else { [1.1, 2.0, 0.5] };
                let g = [
                    yaw.cos() * local[0] - yaw.sin() * local[1] + off[0],
                    yaw.sin() * local[0] + yaw.cos() * local[1] + off[1],
                    local[2] + off[2],
                ];
                assert_vec(cloud[i * 2 + j], g, 1e-12);
            }
        }
    }

    #[test]
    fn quantize_examples() {
        assert!(close(quantize_value(10.07, 0.1), 10.1, 1e-12));
        assert!(close(quantize_value(10.05, 0.1), 10.1, 1e-12));
        assert_eq!(quantize_value(0.0, 0.1), 0.0);
        assert_eq!(quantize_value(0.0, 0.02), 0.0);
        assert_eq!(quantize_code(0.25, 0.1), 3, "2.5 rounds away from zero");
    }

    #[test]
    fn quantize_leaves_mask_alone() {
        let img =
            RangeImage::from_parts(1, 3, vec![1.23, 9.0, 4.56], vec![true, false, true]).unwrap();
        let q = quantize(&img, QuantizationSpec::new(0.1).unwrap());
        assert_eq!(q.valid(), img.valid());
        assert_eq!(q.ranges()[1], 0.0);
        assert!(close(q.ranges()[0], 1.2, 1e-12));
        assert!(close(q.ranges()[2], 4.6, 1e-12));
    }

    #[test]
    fn precision_bounds() {
        assert!(QuantizationSpec::new(1e-4).is_ok());
        assert!(QuantizationSpec::new(0.5).is_ok());
        assert!(QuantizationSpec::new(0.0).is_err());
        assert!(QuantizationSpec::new(0.6).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(-PI), PI, 1e-15));
        assert!(close(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, 1e-15));
    }
}
