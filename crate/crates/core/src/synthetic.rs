//! Synthetic urban road scene with known extrinsics: a planar road with lane
//! and crosswalk markings, curbs, sidewalks, buildings and boxes, observed by
//! four LiDARs along a trajectory and by a rectified stereo camera.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StereoFrame, TRUTH_FILE, TRUTH_RIGHT_FILE};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CloudPoint, IntensityCloud, Pose6, RigidTransform, Vec3};
use crate::io::{self, ResultRecord};
use crate::local_map::{LidarScan, Trajectory, TrajectorySample};
use crate::raster::{GrayImage, Raster};
use crate::stereo_road::DisparityImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub rx_deg: f64,
    pub ry_deg: f64,
    pub rz_deg: f64,
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose6 {
        Pose6::from_degrees(self.tx, self.ty, self.tz, self.rx_deg, self.ry_deg, self.rz_deg)
    }

    fn finite(&self) -> bool {
        [self.tx, self.ty, self.tz, self.rx_deg, self.ry_deg, self.rz_deg]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadSpec {
    /// Curb-to-centerline distance, m.
    pub half_width: f64,
    pub sidewalk_width: f64,
    pub curb_height: f64,
    pub start_x: f64,
    pub end_x: f64,
    pub asphalt: u8,
    pub sidewalk: u8,
    /// Albedo of open ground behind the sidewalks.
    pub ground: u8,
}

impl Default for RoadSpec {
    fn default() -> Self {
        RoadSpec {
            half_width: 5.25,
            sidewalk_width: 3.0,
            curb_height: 0.15,
            start_x: -30.0,
            end_x: 150.0,
            asphalt: 40,
            sidewalk: 100,
            ground: 70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkingSpec {
    /// No markings before this x, m.
    pub start_x: f64,
    pub line_width: f64,
    /// Lateral offsets of dashed lane lines.
    pub dashed_offsets: Vec<f64>,
    /// Lateral offsets of solid edge lines.
    pub solid_offsets: Vec<f64>,
    pub dash_length: f64,
    pub dash_gap: f64,
    /// Start x of each crosswalk.
    pub crosswalks: Vec<f64>,
    /// Crosswalk extent along the road, m.
    pub crosswalk_length: f64,
    pub stripe_width: f64,
    pub stripe_pitch: f64,
    pub albedo: u8,
}

impl Default for MarkingSpec {
    fn default() -> Self {
        MarkingSpec {
            start_x: 35.0,
            line_width: 0.15,
            dashed_offsets: vec![-1.75, 1.75],
            solid_offsets: vec![-5.0, 5.0],
            dash_length: 3.0,
            dash_gap: 5.0,
            crosswalks: vec![48.0, 74.0],
            crosswalk_length: 4.0,
            stripe_width: 0.5,
            stripe_pitch: 1.0,
            albedo: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    /// Length along x, width along y, height, m.
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    pub albedo: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildingSpec {
    /// Gap between the sidewalk's outer edge and the facades, m.
    pub setback: f64,
    pub depth: f64,
    pub length: f64,
    pub gap: f64,
    pub min_height: f64,
    pub max_height: f64,
    pub wall: u8,
    pub window: u8,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        BuildingSpec {
            setback: 0.0,
            depth: 10.0,
            length: 14.0,
            gap: 4.0,
            min_height: 6.0,
            max_height: 15.0,
            wall: 70,
            window: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub length: f64,
    pub speed: f64,
    /// Lateral sinusoidal weave, m.
    pub weave_amplitude: f64,
    pub weave_period: f64,
    pub sample_rate: f64,
    pub image_rate: f64,
    /// Images are taken while the vehicle x is at most this, m.
    pub image_max_x: f64,
    pub scan_rate: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            length: 80.0,
            speed: 5.0,
            weave_amplitude: 0.3,
            weave_period: 40.0,
            sample_rate: 100.0,
            image_rate: 2.0,
            image_max_x: 50.0,
            scan_rate: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    /// Left camera pose in the vehicle frame.
    pub truth: PoseSpec,
    pub f: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
    pub baseline: f64,
    /// Subsamples per pixel side.
    pub supersample: usize,
    /// Camera-only surface grain: cell sizes (m) and amplitudes (gray levels).
    pub grain_cells: Vec<f64>,
    pub grain_amplitudes: Vec<f64>,
    pub sky: u8,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            truth: PoseSpec {
                tx: 1.70,
                ty: 0.24,
                tz: 1.60,
                rx_deg: -92.0,
                ry_deg: -0.6,
                rz_deg: -90.3,
            },
            f: 300.0,
            cu: 160.0,
            cv: 120.0,
            width: 320,
            height: 240,
            baseline: 0.475,
            supersample: 3,
            grain_cells: vec![0.03, 0.12, 0.48],
            grain_amplitudes: vec![10.0, 8.0, 6.0],
            sky: 180,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LidarKind {
    /// Spinning multi-ring sensor.
    Ring,
    /// Single-plane scanner.
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub id: u32,
    pub kind: LidarKind,
    pub pose: PoseSpec,
    #[serde(default = "default_rings")]
    pub rings: usize,
    /// Total vertical field of view of a ring sensor, degrees.
    #[serde(default = "default_ring_fov")]
    pub ring_fov_deg: f64,
    pub azimuth_min_deg: f64,
    pub azimuth_max_deg: f64,
    pub azimuth_step_deg: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    /// Offset of this sensor's scan times, s.
    #[serde(default)]
    pub time_offset: f64,
}

fn default_rings() -> usize {
    16
}

fn default_ring_fov() -> f64 {
    30.0
}

fn default_max_range() -> f64 {
    60.0
}

fn default_lidars() -> Vec<LidarSpec> {
    let ring = |id: u32, y: f64, rz: f64, offset: f64| LidarSpec {
        id,
        kind: LidarKind::Ring,
        // spin axis along the vehicle x axis, azimuth 0 facing outward
        pose: PoseSpec {
            tx: 1.0,
            ty: y,
            tz: 1.9,
            rx_deg: 90.0,
            ry_deg: 0.0,
            rz_deg: rz,
        },
        rings: 16,
        ring_fov_deg: 30.0,
        azimuth_min_deg: -120.0,
        azimuth_max_deg: 90.0,
        azimuth_step_deg: 0.4,
        max_range: 60.0,
        time_offset: offset,
    };
    let line = |id: u32, x: f64, rz: f64, offset: f64| LidarSpec {
        id,
        kind: LidarKind::Line,
        pose: PoseSpec {
            tx: x,
            ty: 0.0,
            tz: 0.6,
            rx_deg: 0.0,
            ry_deg: 70.0,
            rz_deg: rz,
        },
        rings: 1,
        ring_fov_deg: 0.0,
        azimuth_min_deg: -90.0,
        azimuth_max_deg: 90.0,
        azimuth_step_deg: 0.25,
        max_range: 60.0,
        time_offset: offset,
    };
    vec![
        ring(0, 0.9, 90.0, 0.0),
        ring(1, -0.9, -90.0, 0.025),
        line(2, 3.6, 0.0, 0.05),
        line(3, -1.0, 180.0, 0.075),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// LiDAR range noise, m.
    pub range_sigma: f64,
    pub intensity_sigma: f64,
    pub gray_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            range_sigma: 0.01,
            intensity_sigma: 4.0,
            gray_sigma: 2.0,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            range_sigma: 0.0,
            intensity_sigma: 0.0,
            gray_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub road: RoadSpec,
    pub markings: MarkingSpec,
    pub obstacles: Vec<BoxSpec>,
    pub buildings: BuildingSpec,
    pub trajectory: TrajectorySpec,
    pub camera: CameraSpec,
    pub lidars: Vec<LidarSpec>,
    pub noise: NoiseSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            road: RoadSpec::default(),
            markings: MarkingSpec::default(),
            obstacles: vec![
                BoxSpec {
                    center: [22.0, -4.1, 0.75],
                    size: [4.2, 1.8, 1.5],
                    yaw_deg: 0.0,
                    albedo: 90,
                },
                BoxSpec {
                    center: [58.0, 2.6, 0.5],
                    size: [1.0, 1.0, 1.0],
                    yaw_deg: 20.0,
                    albedo: 120,
                },
                BoxSpec {
                    center: [66.0, 4.2, 0.75],
                    size: [4.4, 1.8, 1.5],
                    yaw_deg: 3.0,
                    albedo: 85,
                },
            ],
            buildings: BuildingSpec::default(),
            trajectory: TrajectorySpec::default(),
            camera: CameraSpec::default(),
            lidars: default_lidars(),
            noise: NoiseSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::Scene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Scene(m.to_string()));
        let t = &self.trajectory;
        if !(t.length > 0.0 && t.speed > 0.0 && t.sample_rate > 0.0 && t.image_rate > 0.0 && t.scan_rate > 0.0) {
            return bad("trajectory length, speed and rates must be positive");
        }
        if !self.camera.truth.finite() || self.lidars.iter().any(|l| !l.pose.finite()) {
            return bad("all poses must be finite");
        }
        if self.lidars.is_empty() {
            return bad("at least one lidar is required");
        }
        let mut ids: Vec<u32> = self.lidars.iter().map(|l| l.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.lidars.len() {
            return bad("lidar ids must be unique");
        }
        if self.lidars.iter().any(|l| !(l.azimuth_step_deg > 0.0) || l.azimuth_max_deg < l.azimuth_min_deg) {
            return bad("lidar azimuth range must be ordered with a positive step");
        }
        if self.camera.supersample == 0 {
            return bad("camera supersample must be >= 1");
        }
        if self.camera.grain_cells.len() != self.camera.grain_amplitudes.len() {
            return bad("grain_cells and grain_amplitudes differ in length");
        }
        self.intrinsics()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let c = &self.camera;
        CameraIntrinsics::new(c.f, c.cu, c.cv, c.baseline, c.width, c.height)
    }

    pub fn with_zero_noise(mut self) -> Self {
        self.noise = NoiseSpec::zero();
        self
    }
}

/// Left-camera extrinsic (camera pose in the vehicle frame).
pub fn truth(spec: &SceneSpec) -> Pose6 {
    spec.camera.truth.to_pose()
}

/// Right camera: the left pose moved by the baseline along the camera x axis.
pub fn truth_right(spec: &SceneSpec) -> Pose6 {
    truth(spec)
        .to_transform()
        .compose(&RigidTransform::from_translation(Vec3::new(spec.camera.baseline, 0.0, 0.0)))
        .to_pose()
}

/// Per-axis `estimate - reference`: meters, then degrees.
pub fn pose_errors(estimate: &Pose6, reference: &Pose6) -> [f64; 6] {
    estimate.difference(reference)
}

/// Surface classes of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Surface {
    Sky = 0,
    Road = 1,
    Marking = 2,
    Sidewalk = 3,
    Building = 4,
    Obstacle = 5,
    Ground = 6,
}

struct SceneBox {
    center: Vec3,
    half: Vec3,
    cos: f64,
    sin: f64,
    surface: Surface,
    albedo: u8,
}

impl SceneBox {
    fn axis_aligned(min: Vec3, max: Vec3, surface: Surface, albedo: u8) -> Self {
        SceneBox {
            center: (min + max) / 2.0,
            half: (max - min) / 2.0,
            cos: 1.0,
            sin: 0.0,
            surface,
            albedo,
        }
    }

    fn to_local(&self, v: &Vec3) -> Vec3 {
        Vec3::new(self.cos * v.x + self.sin * v.y, -self.sin * v.x + self.cos * v.y, v.z)
    }

    /// Slab test; entry distance along the ray, if any.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let lo = self.to_local(&(o - self.center));
        let ld = self.to_local(d);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..3 {
            if ld[i].abs() < 1e-15 {
                if lo[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - lo[i]) / ld[i];
            let b = (self.half[i] - lo[i]) / ld[i];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1 && t0 > 1e-9).then_some(t0)
    }
}

/// Ray-castable scene geometry with albedo.
pub struct Scene {
    spec: SceneSpec,
    boxes: Vec<SceneBox>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub surface: Surface,
    pub albedo: u8,
}

fn hash64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, octave: u64) -> f64 {
    let h = hash64(hash64(hash64(hash64(octave) ^ ix as u64) ^ iy as u64) ^ iz as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Trilinear value noise in `[-1, 1]`.
fn value_noise(p: &Vec3, cell: f64, octave: u64) -> f64 {
    let q = p / cell;
    let (fx, fy, fz) = (q.x.floor(), q.y.floor(), q.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty, tz) = (s(q.x - fx), s(q.y - fy), s(q.z - fz));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { tx } else { 1.0 - tx })
                    * (if dy == 1 { ty } else { 1.0 - ty })
                    * (if dz == 1 { tz } else { 1.0 - tz });
                acc += w * lattice(ix + dx, iy + dy, iz + dz, octave);
            }
        }
    }
    acc
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Self {
        let r = &spec.road;
        let mut boxes = Vec::new();
        for side in [-1.0, 1.0] {
            let (y0, y1) = (r.half_width, r.half_width + r.sidewalk_width);
            let (ya, yb) = if side > 0.0 { (y0, y1) } else { (-y1, -y0) };
            boxes.push(SceneBox::axis_aligned(
                Vec3::new(r.start_x, ya, -1.0),
                Vec3::new(r.end_x, yb, r.curb_height),
                Surface::Sidewalk,
                r.sidewalk,
            ));
        }
        let b = &spec.buildings;
        let inner = r.half_width + r.sidewalk_width + b.setback;
        let mut k = 0u64;
        for side in [-1.0, 1.0] {
            let mut x = r.start_x;
            while x < r.end_x {
                let h = b.min_height + (b.max_height - b.min_height) * (lattice(k as i64, 7, 11, 99) * 0.5 + 0.5);
                let (ya, yb) = if side > 0.0 { (inner, inner + b.depth) } else { (-inner - b.depth, -inner) };
                boxes.push(SceneBox::axis_aligned(
                    Vec3::new(x, ya, -1.0),
                    Vec3::new((x + b.length).min(r.end_x), yb, h),
                    Surface::Building,
                    b.wall,
                ));
                x += b.length + b.gap;
                k += 1;
            }
        }
        for o in &spec.obstacles {
            let yaw = o.yaw_deg.to_radians();
            boxes.push(SceneBox {
                center: Vec3::from(o.center),
                half: Vec3::from(o.size) / 2.0,
                cos: yaw.cos(),
                sin: yaw.sin(),
                surface: Surface::Obstacle,
                albedo: o.albedo,
            });
        }
        Scene {
            spec: spec.clone(),
            boxes,
        }
    }

    fn is_marking(&self, x: f64, y: f64) -> bool {
        let m = &self.spec.markings;
        if x < m.start_x || y.abs() > self.spec.road.half_width {
            return false;
        }
        let hw = m.line_width / 2.0;
        if m.solid_offsets.iter().any(|o| (y - o).abs() <= hw) {
            return true;
        }
        let period = m.dash_length + m.dash_gap;
        if period > 0.0 && (x - m.start_x).rem_euclid(period) < m.dash_length && m.dashed_offsets.iter().any(|o| (y - o).abs() <= hw) {
            return true;
        }
        let road = self.spec.road.half_width;
        m.crosswalks.iter().any(|&cx| {
            x >= cx
                && x <= cx + m.crosswalk_length
                && y.abs() <= road - 0.4
                && m.stripe_pitch > 0.0
                && (y + road).rem_euclid(m.stripe_pitch) < m.stripe_width
        })
    }

    fn building_albedo(&self, p: &Vec3) -> u8 {
        let b = &self.spec.buildings;
        // facade coordinate along whichever horizontal axis the wall spans
        let s = p.x + p.y;
        let in_window = (s.rem_euclid(3.0)) > 0.9 && (s.rem_euclid(3.0)) < 2.1 && p.z.rem_euclid(3.0) > 1.0 && p.z.rem_euclid(3.0) < 2.2;
        if in_window {
            b.window
        } else {
            b.wall
        }
    }

    pub fn cast(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(t) = b.intersect(o, d) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, i));
                }
            }
        }
        let ground = if d.z < 0.0 { Some(-o.z / d.z) } else { None };
        match (best, ground) {
            (Some((t, i)), g) if g.map_or(true, |g| t <= g) => {
                let b = &self.boxes[i];
                let point = o + d * t;
                let albedo = match b.surface {
                    Surface::Building => self.building_albedo(&point),
                    _ => b.albedo,
                };
                Some(Hit {
                    t,
                    point,
                    surface: b.surface,
                    albedo,
                })
            }
            (_, Some(t)) if t > 1e-9 => {
                let point = o + d * t;
                let r = &self.spec.road;
                let (surface, albedo) = if point.y.abs() > r.half_width {
                    (Surface::Ground, r.ground)
                } else if self.is_marking(point.x, point.y) {
                    (Surface::Marking, self.spec.markings.albedo)
                } else {
                    (Surface::Road, r.asphalt)
                };
                Some(Hit {
                    t,
                    point: Vec3::new(point.x, point.y, 0.0),
                    surface,
                    albedo,
                })
            }
            _ => None,
        }
    }

    /// Camera-only photometric grain at a world point.
    fn grain(&self, p: &Vec3) -> f64 {
        let c = &self.spec.camera;
        c.grain_cells
            .iter()
            .zip(&c.grain_amplitudes)
            .enumerate()
            .map(|(i, (&cell, &amp))| amp * value_noise(p, cell, i as u64 + 1))
            .sum()
    }
}

/// Zero-noise ground truth of one left image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    /// Camera-frame depth at pixel centers, `INFINITY` for sky.
    pub depth: Raster<f32>,
    /// `Surface` discriminants at pixel centers.
    pub labels: Raster<u8>,
}

impl FrameTruth {
    /// Exact disparity `fB/z` at every pixel with a finite depth.
    pub fn disparity(&self, k: &CameraIntrinsics) -> DisparityImage {
        DisparityImage::from_fn(k.width, k.height, |u, v| k.f * k.baseline / *self.depth.get(u, v) as f64)
    }
}

pub struct SyntheticDataset {
    pub spec: SceneSpec,
    pub dataset: Dataset,
    pub truth_left: Pose6,
    pub truth_right: Pose6,
    pub frame_truth: Vec<FrameTruth>,
}

fn vehicle_pose(spec: &TrajectorySpec, t: f64) -> Pose6 {
    let x = spec.speed * t;
    let w = std::f64::consts::TAU / spec.weave_period;
    let y = spec.weave_amplitude * (w * x).sin();
    let yaw = (spec.weave_amplitude * w * (w * x).cos()).atan();
    Pose6::new(x, y, 0.0, 0.0, 0.0, yaw)
}

pub fn build_trajectory(spec: &TrajectorySpec) -> Result<Trajectory> {
    let end = spec.length / spec.speed;
    let n = (end * spec.sample_rate).ceil() as usize;
    let samples = (0..=n)
        .map(|i| {
            let t = (i as f64 / spec.sample_rate).min(end);
            TrajectorySample {
                timestamp: t,
                pose: vehicle_pose(spec, t),
            }
        })
        .collect::<Vec<_>>();
    let mut dedup: Vec<TrajectorySample> = Vec::with_capacity(samples.len());
    for s in samples {
        if dedup.last().map_or(true, |l| s.timestamp > l.timestamp) {
            dedup.push(s);
        }
    }
    Trajectory::new(dedup)
}

fn render_camera(
    scene: &Scene,
    k: &CameraIntrinsics,
    cam_to_world: &RigidTransform,
    gray_sigma: f64,
    seed: u64,
) -> (GrayImage, FrameTruth) {
    let spec = &scene.spec.camera;
    let ss = spec.supersample;
    let o = *cam_to_world.translation();
    let r = cam_to_world.rotation();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (gray_sigma > 0.0).then(|| Normal::new(0.0, gray_sigma).expect("finite sigma"));
    let mut depth = Raster::filled(k.width, k.height, f32::INFINITY);
    let mut labels = Raster::filled(k.width, k.height, Surface::Sky as u8);
    let img = GrayImage::from_fn(k.width, k.height, |u, v| {
        let mut acc = 0.0;
        for sj in 0..ss {
            for si in 0..ss {
                let du = (si as f64 + 0.5) / ss as f64 - 0.5;
                let dv = (sj as f64 + 0.5) / ss as f64 - 0.5;
                let dir_c = Vec3::new((u as f64 + du - k.cu) / k.f, (v as f64 + dv - k.cv) / k.f, 1.0);
                let dir = r * dir_c;
                acc += match scene.cast(&o, &dir) {
                    Some(hit) => hit.albedo as f64 + scene.grain(&hit.point),
                    None => spec.sky as f64,
                };
            }
        }
        let dir_c = Vec3::new((u as f64 - k.cu) / k.f, (v as f64 - k.cv) / k.f, 1.0);
        if let Some(hit) = scene.cast(&o, &(r * dir_c)) {
            // ray parameter equals camera z since dir_c has unit z
            depth.set(u, v, hit.t as f32);
            labels.set(u, v, hit.surface as u8);
        }
        let mut g = acc / (ss * ss) as f64;
        if let Some(n) = &noise {
            g += n.sample(&mut rng);
        }
        g.round().clamp(0.0, 255.0) as u8
    });
    (img, FrameTruth { depth, labels })
}

fn scan(scene: &Scene, lidar: &LidarSpec, sensor_to_world: &RigidTransform, noise: &NoiseSpec, seed: u64) -> IntensityCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_n = (noise.range_sigma > 0.0).then(|| Normal::new(0.0, noise.range_sigma).expect("finite sigma"));
    let int_n = (noise.intensity_sigma > 0.0).then(|| Normal::new(0.0, noise.intensity_sigma).expect("finite sigma"));
    let o = *sensor_to_world.translation();
    let rot = sensor_to_world.rotation();
    let elevations: Vec<f64> = match lidar.kind {
        LidarKind::Line => vec![0.0],
        LidarKind::Ring if lidar.rings <= 1 => vec![0.0],
        LidarKind::Ring => (0..lidar.rings)
            .map(|i| (-lidar.ring_fov_deg / 2.0 + lidar.ring_fov_deg * i as f64 / (lidar.rings - 1) as f64).to_radians())
            .collect(),
    };
    let n_az = ((lidar.azimuth_max_deg - lidar.azimuth_min_deg) / lidar.azimuth_step_deg).floor() as usize + 1;
    let mut points = Vec::new();
    for &e in &elevations {
        for i in 0..n_az {
            let a = (lidar.azimuth_min_deg + i as f64 * lidar.azimuth_step_deg).to_radians();
            let dir_s = Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
            let Some(hit) = scene.cast(&o, &(rot * dir_s)) else {
                continue;
            };
            if hit.t > lidar.max_range {
                continue;
            }
            let mut range = hit.t;
            let mut intensity = hit.albedo as f64;
            if let Some(n) = &range_n {
                range += n.sample(&mut rng);
            }
            if let Some(n) = &int_n {
                intensity += n.sample(&mut rng);
            }
            let p = dir_s * range;
            points.push(CloudPoint::new(p.x, p.y, p.z, intensity.round().clamp(0.0, 255.0) as u8));
        }
    }
    IntensityCloud::new(format!("lidar{}", lidar.id), points)
}

/// Renders the full dataset. Deterministic for fixed `(spec, seed)`.
pub fn render_dataset(spec: &SceneSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let k = spec.intrinsics()?;
    let scene = Scene::new(spec);
    let trajectory = build_trajectory(&spec.trajectory)?;
    let (t0, t1) = trajectory.span();
    let truth_left = truth(spec);
    let truth_right = truth_right(spec);

    let tr = &spec.trajectory;
    let image_times: Vec<f64> = (0..)
        .map(|i| i as f64 / tr.image_rate)
        .take_while(|&t| t <= t1 && tr.speed * t <= tr.image_max_x)
        .collect();
    if image_times.is_empty() {
        return Err(Error::Scene("no image timestamps inside the trajectory".into()));
    }

    let rendered: Vec<(StereoFrame, FrameTruth)> = image_times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| -> Result<(StereoFrame, FrameTruth)> {
            let vehicle = trajectory.pose_at(t)?.to_transform();
            let left_tf = vehicle.compose(&truth_left.to_transform());
            let right_tf = vehicle.compose(&truth_right.to_transform());
            let s = hash64(seed ^ hash64(i as u64 + 1));
            let (left, ft) = render_camera(&scene, &k, &left_tf, spec.noise.gray_sigma, s);
            let (right, _) = render_camera(&scene, &k, &right_tf, spec.noise.gray_sigma, hash64(s));
            Ok((
                StereoFrame {
                    timestamp: t,
                    left,
                    right,
                    disparity_left: None,
                    disparity_right: None,
                },
                ft,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let road_pixels = rendered[0]
        .1
        .labels
        .data()
        .iter()
        .filter(|&&l| l == Surface::Road as u8 || l == Surface::Marking as u8)
        .count();
    if road_pixels == 0 {
        return Err(Error::Scene("the camera does not see the road".into()));
    }

    let mut jobs = Vec::new();
    for l in &spec.lidars {
        let mut j = 0u64;
        loop {
            let t = j as f64 / tr.scan_rate + l.time_offset;
            if t > t1 {
                break;
            }
            if t >= t0 {
                jobs.push((l, t, j));
            }
            j += 1;
        }
    }
    let scans = jobs
        .par_iter()
        .map(|&(l, t, j)| -> Result<LidarScan> {
            let pose = trajectory.pose_at(t)?.to_transform().compose(&l.pose.to_pose().to_transform());
            let s = hash64(seed ^ hash64(((l.id as u64) << 32) | j) ^ 0x5CA7);
            Ok(LidarScan {
                timestamp: t,
                sensor_id: l.id,
                cloud: scan(&scene, l, &pose, &spec.noise, s),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let lidar_extrinsics: BTreeMap<u32, Pose6> = spec.lidars.iter().map(|l| (l.id, l.pose.to_pose())).collect();
    let (frames, frame_truth) = rendered.into_iter().unzip();
    Ok(SyntheticDataset {
        spec: spec.clone(),
        dataset: Dataset {
            intrinsics: k,
            trajectory,
            lidar_extrinsics,
            scans,
            frames,
        },
        truth_left,
        truth_right,
        frame_truth,
    })
}

pub const SCENE_FILE: &str = "scene.toml";

impl SyntheticDataset {
    /// Writes the dataset plus `truth.txt`, `truth_right.txt`, the scene
    /// description and exact left disparities under `disparity/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut ds = self.dataset.clone();
        for (f, t) in ds.frames.iter_mut().zip(&self.frame_truth) {
            f.disparity_left.get_or_insert_with(|| t.disparity(&ds.intrinsics));
        }
        ds.write(dir)?;
        let rec = |pose| ResultRecord {
            pose,
            cost: 0.0,
            iters: 0,
            converged: true,
        };
        io::write_result(&dir.join(TRUTH_FILE), &rec(self.truth_left))?;
        io::write_result(&dir.join(TRUTH_RIGHT_FILE), &rec(self.truth_right))?;
        io::write_bytes(&dir.join(SCENE_FILE), self.spec.to_toml().as_bytes())
    }
}
