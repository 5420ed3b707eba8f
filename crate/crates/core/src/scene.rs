//! Raytraced synthetic lidar scenes.
//!
//! Scenes are built from planes, spheres and axis-aligned boxes with
//! seed-determined placement. Each column of a frame is cast from its own
//! pose, so a moving sensor produces the rolling-shutter skew of a real
//! spinning lidar.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    unproject, LidarCalibration, Pose, PoseTrack, RangeImage, Vec3, DEFAULT_MAX_RANGE,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Planes,
    Sphere,
    BoxesOnGround,
    StaticPair,
    MovingSensorPair,
}

impl SceneKind {
    pub const ALL: [SceneKind; 5] = [
        SceneKind::Planes,
        SceneKind::Sphere,
        SceneKind::BoxesOnGround,
        SceneKind::StaticPair,
        SceneKind::MovingSensorPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Planes => "planes",
            SceneKind::Sphere => "sphere",
            SceneKind::BoxesOnGround => "boxes-on-ground",
            SceneKind::StaticPair => "static-pair",
            SceneKind::MovingSensorPair => "moving-sensor-pair",
        }
    }

    pub fn frame_count(self) -> usize {
        match self {
            SceneKind::StaticPair | SceneKind::MovingSensorPair => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unsupported(format!("scene kind {s:?}")))
    }
}

/// 64 beams from +2.4° to −17.6°, 2650 columns, 75 m.
pub fn default_calibration() -> LidarCalibration {
    small_calibration(64, 2650)
}

/// The default beam spread at another resolution.
pub fn small_calibration(height: usize, width: usize) -> LidarCalibration {
    LidarCalibration::uniform(
        height,
        width,
        2.4f64.to_radians(),
        -17.6f64.to_radians(),
        DEFAULT_MAX_RANGE,
    )
    .expect("default calibration is valid")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    pub calib: LidarCalibration,
    /// Sensor speed along +x in meters per frame (moving-sensor-pair only).
    pub speed: f64,
    /// Yaw change per frame in radians (moving-sensor-pair only).
    pub yaw_rate: f64,
    /// Uniform range noise half-width, meters.
    pub jitter: f64,
    /// Probability that a hit is dropped from the mask.
    pub dropout: f64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        SceneSpec {
            kind,
            seed,
            calib: default_calibration(),
            speed: 1.0,
            yaw_rate: 0.02,
            jitter: 0.0,
            dropout: 0.0,
        }
    }

    pub fn with_calibration(mut self, calib: LidarCalibration) -> Self {
        self.calib = calib;
        self
    }

    pub fn with_noise(mut self, jitter: f64, dropout: f64) -> Self {
        self.jitter = jitter;
        self.dropout = dropout;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    /// Points `p` with `normal·p = offset`.
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Surface {
    /// Smallest ray parameter `t > eps` at which `origin + t·dir` hits.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Surface::Plane { normal, offset } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - normal.dot(origin)) / denom;
                (t > EPS).then_some(t)
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [-b - s, -b + s].into_iter().find(|&t| t > EPS)
            }
            Surface::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[a];
                    let (mut lo, mut hi) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    t0 = t0.max(lo);
                    t1 = t1.min(hi);
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|&t| t > EPS)
            }
        }
    }

    /// Distance from `p` to the surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        match *self {
            Surface::Plane { normal, offset } => (normal.dot(p) - offset).abs(),
            Surface::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Surface::Box { min, max } => {
                let outside = Vec3::from_fn(|a, _| (min[a] - p[a]).max(p[a] - max[a]).max(0.0));
                if outside.norm() > 0.0 {
                    outside.norm()
                } else {
                    (0..3)
                        .map(|a| (p[a] - min[a]).min(max[a] - p[a]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }
}

/// Generated frames with the geometry they were traced from.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub surfaces: Vec<Surface>,
    pub frames: Vec<RangeImage>,
    pub tracks: Vec<PoseTrack>,
}

impl Scene {
    /// Distance from a global-frame point to the nearest surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.surfaces
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn calibrations(&self) -> Vec<LidarCalibration> {
        vec![self.spec.calib.clone(); self.frames.len()]
    }
}

fn ground(rng: &mut ChaCha8Rng) -> Surface {
    Surface::Plane {
        normal: Vec3::z(),
        offset: -rng.gen_range(1.6..2.2),
    }
}

fn wall(rng: &mut ChaCha8Rng) -> Surface {
    let yaw: f64 = rng.gen_range(-PI..PI);
    let tilt: f64 = rng.gen_range(-0.15..0.15);
    let normal = Vec3::new(yaw.cos() * tilt.cos(), yaw.sin() * tilt.cos(), tilt.sin());
    Surface::Plane {
        normal,
        offset: rng.gen_range(8.0..60.0),
    }
}

fn boxes(rng: &mut ChaCha8Rng, ground_z: f64, count: usize) -> Vec<Surface> {
    (0..count)
        .map(|_| {
            let (r, a): (f64, f64) = (rng.gen_range(5.0..45.0), rng.gen_range(-PI..PI));
            let c = Vec3::new(r * a.cos(), r * a.sin(), ground_z);
            let half = Vec3::new(
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
            );
            Surface::Box {
                min: Vec3::new(c.x - half.x, c.y - half.y, ground_z),
                max: Vec3::new(c.x + half.x, c.y + half.y, ground_z + 2.0 * half.z),
            }
        })
        .collect()
}

fn surfaces(kind: SceneKind, rng: &mut ChaCha8Rng) -> Vec<Surface> {
    let g = ground(rng);
    let ground_z = match g {
        Surface::Plane { offset, .. } => offset,
        _ => unreachable!(),
    };
    let mut out = vec![g];
    match kind {
        SceneKind::Planes => {
            let n = rng.gen_range(2..=4);
            out.extend((0..n).map(|_| wall(rng)));
        }
        SceneKind::Sphere => {
            let (r, a): (f64, f64) = (rng.gen_range(10.0..25.0), rng.gen_range(-PI..PI));
            let radius = rng.gen_range(3.0..8.0);
            out.push(Surface::Sphere {
                center: Vec3::new(r * a.cos(), r * a.sin(), ground_z + radius * 0.5),
                radius,
            });
        }
        SceneKind::BoxesOnGround | SceneKind::StaticPair | SceneKind::MovingSensorPair => {
            let n = rng.gen_range(6..=14);
            out.extend(boxes(rng, ground_z, n));
            out.push(wall(rng));
        }
    }
    out
}

fn yaw_pose(yaw: f64, t: Vec3) -> Pose {
    let (s, c) = (yaw / 2.0).sin_cos();
    Pose::from_quaternion([c, 0.0, 0.0, s], [t.x, t.y, t.z]).expect("unit quaternion")
}

fn track_for(spec: &SceneSpec, frame: usize) -> PoseTrack {
    let w = spec.calib.width();
    match spec.kind {
        SceneKind::MovingSensorPair => PoseTrack::new(
            (0..w)
                .map(|j| {
                    let s = frame as f64 + j as f64 / w as f64;
                    yaw_pose(spec.yaw_rate * s, Vec3::new(spec.speed * s, 0.0, 0.0))
                })
                .collect(),
        ),
        _ => PoseTrack::constant(w, yaw_pose(0.0, Vec3::zeros())),
    }
}

fn trace(
    spec: &SceneSpec,
    surfaces: &[Surface],
    track: &PoseTrack,
    rng: &mut ChaCha8Rng,
) -> RangeImage {
    let calib = &spec.calib;
    let (h, w) = (calib.height(), calib.width());
    let mut img = RangeImage::empty(h, w);
    for i in 0..h {
        for j in 0..w {
            let pose = track.pose(j);
            let dir = pose.rotation() * unproject(1.0, calib.azimuth(j), calib.elevation(i));
            let origin = pose.translation();
            let hit = surfaces
                .iter()
                .filter_map(|s| s.intersect(origin, &dir))
                .fold(f64::INFINITY, f64::min);
            // Noise draws happen for every pixel so the stream stays aligned.
            let noise = rng.gen_range(-1.0..=1.0) * spec.jitter;
            let drop = rng.gen::<f64>() < spec.dropout;
            let r = hit + noise;
            if hit.is_finite() && !drop && r > 0.0 && r <= calib.max_range() {
                img.set(i, j, r);
            }
        }
    }
    img
}

/// Traces every frame of `spec`. Identical specs give bit-identical scenes.
pub fn generate(spec: &SceneSpec) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let surfaces = surfaces(spec.kind, &mut rng);
    let mut frames: Vec<RangeImage> = Vec::new();
    let mut tracks = Vec::new();
    for t in 0..spec.kind.frame_count() {
        let track = track_for(spec, t);
        let img = if spec.kind == SceneKind::StaticPair && t > 0 {
            frames[0].clone()
        } else {
            trace(spec, &surfaces, &track, &mut rng)
        };
        frames.push(img);
        tracks.push(track);
    }
    Scene {
        spec: spec.clone(),
        surfaces,
        frames,
        tracks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::image_to_point_cloud;

    fn small(kind: SceneKind, seed: u64) -> SceneSpec {
        SceneSpec::new(kind, seed).with_calibration(small_calibration(16, 256))
    }

    #[test]
    fn ray_primitives() {
        let o = Vec3::zeros();
        let x = Vec3::x();
        let plane = Surface::Plane { normal: x, offset: 4.0 };
        assert_eq!(plane.intersect(&o, &x), Some(4.0));
        assert_eq!(plane.intersect(&o, &-x), None);
        let sphere = Surface::Sphere { center: Vec3::new(10.0, 0.0, 0.0), radius: 2.0 };
        assert!((sphere.intersect(&o, &x).unwrap() - 8.0).abs() < 1e-12);
        let b = Surface::Box { min: Vec3::new(3.0, -1.0, -1.0), max: Vec3::new(5.0, 1.0, 1.0) };
        assert_eq!(b.intersect(&o, &x), Some(3.0));
        assert_eq!(b.intersect(&o, &Vec3::y()), None);
        assert!((b.distance(&Vec3::new(4.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in SceneKind::ALL {
            let a = generate(&small(kind, 3).with_noise(0.01, 0.05));
            let b = generate(&small(kind, 3).with_noise(0.01, 0.05));
            assert_eq!(a.frames, b.frames);
            assert_ne!(generate(&small(kind, 4)).frames, a.frames);
        }
    }

    #[test]
    fn planes_scene_has_sky_and_hits() {
        let s = generate(&small(SceneKind::Planes, 1));
        let img = &s.frames[0];
        assert!(img.valid_count() > 0);
        assert!(img.valid_count() < img.len(), "upward rays miss");
        assert!(img
            .ranges()
            .iter()
            .zip(img.valid())
            .all(|(&r, &v)| !v || (r.is_finite() && r > 0.0 && r <= 75.0)));
    }

    #[test]
    fn static_pair_frames_are_identical() {
        let s = generate(&small(SceneKind::StaticPair, 9));
        assert_eq!(s.frames[0], s.frames[1]);
    }

    #[test]
    fn moving_sensor_points_lie_on_the_scene() {
        let s = generate(&small(SceneKind::MovingSensorPair, 2));
        assert_ne!(s.frames[0], s.frames[1]);
        for (img, track) in s.frames.iter().zip(&s.tracks) {
            for p in image_to_point_cloud(img, &s.spec.calib, track).unwrap() {
                assert!(s.surface_distance(&p) < 1e-6);
            }
        }
    }

    #[test]
    fn kind_names_parse() {
        for kind in SceneKind::ALL {
            assert_eq!(kind.name().parse::<SceneKind>().unwrap(), kind);
        }
        assert!("cube".parse::<SceneKind>().is_err());
    }
}
