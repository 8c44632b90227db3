//! Local intensity map accumulation and LiDAR intensity image rendering.
//!
//! Frame conventions: a trajectory sample is the vehicle pose in the global
//! frame, a LiDAR extrinsic is the sensor pose in the vehicle frame, and a
//! camera extrinsic is the camera pose in the vehicle frame.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    normalize_angle, CameraIntrinsics, CloudPoint, IntensityCloud, Pose6, RigidTransform, Vec3,
    Z_MIN,
};
use crate::raster::{BinaryImage, GrayImage, Raster};

pub const GLOBAL_FRAME: &str = "global";
pub const CAMERA_FRAME: &str = "stereo_left";

/// Default arc length of one local map, meters.
pub const DEFAULT_MAP_WINDOW: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub pose: Pose6,
}

/// Vehicle poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Trajectory("empty trajectory".into()));
        }
        if let Some(w) = samples.windows(2).find(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::Trajectory(format!(
                "timestamps not strictly increasing at {}",
                w[1].timestamp
            )));
        }
        Ok(Trajectory { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.samples[0].timestamp,
            self.samples[self.samples.len() - 1].timestamp,
        )
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = self.span();
        t >= a && t <= b
    }

    /// Interpolated vehicle pose: linear translation, shortest-arc per-axis angles.
    pub fn pose_at(&self, t: f64) -> Result<Pose6> {
        let (start, end) = self.span();
        if !(t >= start && t <= end) {
            return Err(Error::OutOfSpan {
                timestamp: t,
                start,
                end,
            });
        }
        let i = self.samples.partition_point(|s| s.timestamp <= t);
        // samples[i-1].timestamp <= t < samples[i].timestamp, or t == end
        let a = &self.samples[i - 1];
        if a.timestamp == t || i == self.samples.len() {
            return Ok(a.pose);
        }
        let b = &self.samples[i];
        let s = (t - a.timestamp) / (b.timestamp - a.timestamp);
        let lerp = |x: f64, y: f64| x + (y - x) * s;
        let slerp = |x: f64, y: f64| x + normalize_angle(y - x) * s;
        let (p, q) = (&a.pose, &b.pose);
        Ok(Pose6::new(
            lerp(p.tx, q.tx),
            lerp(p.ty, q.ty),
            lerp(p.tz, q.tz),
            slerp(p.rx, q.rx),
            slerp(p.ry, q.ry),
            slerp(p.rz, q.rz),
        ))
    }

    /// Cumulative path length at each sample.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.samples.len());
        out.push(0.0);
        for w in self.samples.windows(2) {
            acc += (w[1].pose.translation() - w[0].pose.translation()).norm();
            out.push(acc);
        }
        out
    }

    /// Splits the trajectory into consecutive time windows of at most `window_m` path length.
    pub fn windows(&self, window_m: f64) -> Vec<(f64, f64)> {
        let arc = self.arc_lengths();
        let mut out = Vec::new();
        let mut start = 0usize;
        for i in 1..self.samples.len() {
            if arc[i] - arc[start] > window_m {
                out.push((self.samples[start].timestamp, self.samples[i - 1].timestamp));
                start = i - 1;
            }
        }
        out.push((self.samples[start].timestamp, self.span().1));
        out
    }
}

/// One LiDAR sweep in its sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub timestamp: f64,
    pub sensor_id: u32,
    pub cloud: IntensityCloud,
}

/// Accumulated intensity map in the global frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalMap {
    pub cloud: IntensityCloud,
    /// Source scan timestamp of every point.
    pub timestamps: Vec<f64>,
    /// Time span covered by the accumulated scans.
    pub span: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedScan {
    pub timestamp: f64,
    pub sensor_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accumulation {
    pub map: GlobalMap,
    pub rejected: Vec<RejectedScan>,
}

/// Moves every scan `L_i -> V_t -> G` and merges them into one global map.
///
/// Scans are processed in `(timestamp, sensor)` order, so the result does not
/// depend on the order of `scans`. Scans outside the trajectory span, or from a
/// sensor without an extrinsic, are rejected with a diagnostic.
pub fn accumulate(
    scans: &[LidarScan],
    trajectory: &Trajectory,
    lidar_extrinsics: &BTreeMap<u32, Pose6>,
) -> Accumulation {
    let mut order: Vec<&LidarScan> = scans.iter().collect();
    order.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then(a.sensor_id.cmp(&b.sensor_id))
    });

    let results: Vec<std::result::Result<(f64, Vec<CloudPoint>), RejectedScan>> = order
        .par_iter()
        .map(|scan| {
            let reject = |reason: String| RejectedScan {
                timestamp: scan.timestamp,
                sensor_id: scan.sensor_id,
                reason,
            };
            let ext = lidar_extrinsics
                .get(&scan.sensor_id)
                .ok_or_else(|| reject(format!("no extrinsic for lidar {}", scan.sensor_id)))?;
            let vehicle = trajectory
                .pose_at(scan.timestamp)
                .map_err(|e| reject(e.to_string()))?;
            let t = vehicle.to_transform().compose(&ext.to_transform());
            let pts = scan
                .cloud
                .points
                .iter()
                .map(|p| CloudPoint {
                    position: t.transform_point(&p.position),
                    intensity: p.intensity,
                })
                .collect();
            Ok((scan.timestamp, pts))
        })
        .collect();

    let mut acc = Accumulation::default();
    acc.map.cloud.frame = GLOBAL_FRAME.to_string();
    let mut span = (f64::INFINITY, f64::NEG_INFINITY);
    for r in results {
        match r {
            Ok((ts, pts)) => {
                span = (span.0.min(ts), span.1.max(ts));
                acc.map.timestamps.extend(std::iter::repeat(ts).take(pts.len()));
                acc.map.cloud.points.extend(pts);
            }
            Err(rej) => {
                warn!(
                    "rejected scan from lidar {} at t={}: {}",
                    rej.sensor_id, rej.timestamp, rej.reason
                );
                acc.rejected.push(rej);
            }
        }
    }
    acc.map.span = span;
    acc
}

/// Accumulates one map per `window_m` of trajectory arc length.
pub fn accumulate_windows(
    scans: &[LidarScan],
    trajectory: &Trajectory,
    lidar_extrinsics: &BTreeMap<u32, Pose6>,
    window_m: f64,
) -> (Vec<GlobalMap>, Vec<RejectedScan>) {
    let mut maps = Vec::new();
    let mut rejected = Vec::new();
    let windows = trajectory.windows(window_m);
    let n = windows.len();
    for (k, (t0, t1)) in windows.into_iter().enumerate() {
        let last = k + 1 == n;
        let subset: Vec<LidarScan> = scans
            .iter()
            .filter(|s| s.timestamp >= t0 && (s.timestamp < t1 || (last && s.timestamp <= t1)))
            .cloned()
            .collect();
        let mut acc = accumulate(&subset, trajectory, lidar_extrinsics);
        acc.map.span = (t0, t1);
        maps.push(acc.map);
        rejected.extend(acc.rejected);
    }
    rejected.extend(
        scans
            .iter()
            .filter(|s| !trajectory.contains(s.timestamp))
            .map(|s| RejectedScan {
                timestamp: s.timestamp,
                sensor_id: s.sensor_id,
                reason: "outside trajectory span".into(),
            }),
    );
    (maps, rejected)
}

/// Transform taking global-frame points into the camera frame.
pub fn global_to_camera(vehicle_pose: &Pose6, camera_extrinsic: &Pose6) -> RigidTransform {
    camera_extrinsic
        .to_transform()
        .inverse()
        .compose(&vehicle_pose.to_transform().inverse())
}

/// Re-expresses the global map in the stereo-left camera frame under a candidate extrinsic.
pub fn to_camera_frame(
    map: &GlobalMap,
    vehicle_pose_at_image: &Pose6,
    candidate_extrinsic: &Pose6,
) -> IntensityCloud {
    let t = global_to_camera(vehicle_pose_at_image, candidate_extrinsic);
    crate::geometry::apply(&t, &map.cloud, CAMERA_FRAME)
}

/// LiDAR points rendered into the camera image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarIntensityImage {
    pub image: GrayImage,
    /// Meters; `f32::INFINITY` where invalid.
    pub depth: Raster<f32>,
    pub valid: BinaryImage,
}

impl LidarIntensityImage {
    pub fn empty(width: usize, height: usize) -> Self {
        LidarIntensityImage {
            image: GrayImage::filled(width, height, 0),
            depth: Raster::filled(width, height, f32::INFINITY),
            valid: BinaryImage::filled(width, height, false),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Pixels around the hit pixel that a point may fill, `1` = 3x3 footprint.
    pub splat_radius: usize,
    /// Relative depth band inside which two hits count as the same surface.
    pub depth_band: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            splat_radius: 1,
            depth_band: 0.2,
        }
    }
}

/// Z-buffered point splatting.
///
/// A hit closer than the current one by more than the depth band always wins.
/// Hits within the band are the same surface; there the point landing closest
/// to the pixel center wins, so a direct hit beats a neighbor's splat.
pub struct IntensityRenderer {
    k: CameraIntrinsics,
    opts: RenderOptions,
    out: LidarIntensityImage,
    center_dist: Vec<f32>,
}

impl IntensityRenderer {
    pub fn new(k: CameraIntrinsics, opts: RenderOptions) -> Self {
        IntensityRenderer {
            k,
            opts,
            out: LidarIntensityImage::empty(k.width, k.height),
            center_dist: vec![f32::INFINITY; k.width * k.height],
        }
    }

    #[inline]
    pub fn add(&mut self, p: &Vec3, intensity: u8) {
        let Some((u, v)) = self.k.project_unbounded(p) else {
            return;
        };
        let (w, h) = (self.k.width, self.k.height);
        let ui = (u + 0.5).floor();
        let vi = (v + 0.5).floor();
        if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
            return;
        }
        let (ui, vi) = (ui as usize, vi as usize);
        let r = self.opts.splat_radius;
        let (x0, x1) = (ui.saturating_sub(r), (ui + r).min(w - 1));
        let (y0, y1) = (vi.saturating_sub(r), (vi + r).min(h - 1));
        let z = p.z as f32;
        let lo = 1.0 - self.opts.depth_band as f32;
        let hi = 1.0 + self.opts.depth_band as f32;
        let (u, v) = (u as f32, v as f32);
        let depth = self.out.depth.data_mut();
        let image = self.out.image.data_mut();
        let valid = self.out.valid.data_mut();
        for y in y0..=y1 {
            let dy = v - y as f32;
            let row = y * w;
            for x in x0..=x1 {
                let idx = row + x;
                let dx = u - x as f32;
                let dist = dx * dx + dy * dy;
                let cur = depth[idx];
                let take = cur.is_infinite() || z < cur * lo || (z <= cur * hi && dist < self.center_dist[idx]);
                if take {
                    depth[idx] = z;
                    self.center_dist[idx] = dist;
                    image[idx] = intensity;
                    valid[idx] = true;
                }
            }
        }
    }

    pub fn finish(self) -> LidarIntensityImage {
        self.out
    }
}

pub fn render_points<'a>(
    points: impl IntoIterator<Item = &'a CloudPoint>,
    k: &CameraIntrinsics,
    opts: RenderOptions,
) -> LidarIntensityImage {
    let mut r = IntensityRenderer::new(*k, opts);
    for p in points {
        if p.position.z > Z_MIN {
            r.add(&p.position, p.intensity);
        }
    }
    r.finish()
}

/// Renders a camera-frame cloud with the default 3x3 splat.
pub fn render_intensity_image(cloud: &IntensityCloud, k: &CameraIntrinsics) -> LidarIntensityImage {
    render_points(&cloud.points, k, RenderOptions::default())
}

/// Stereo frame in gray with valid LiDAR pixels colored by intensity, dark
/// blue (0) through green to red (255).
pub fn projection_overlay(gray: &GrayImage, lidar: &LidarIntensityImage) -> Raster<[u8; 3]> {
    assert_eq!(gray.dims(), lidar.image.dims(), "image size mismatch");
    Raster::from_fn(gray.width(), gray.height(), |u, v| {
        if !lidar.valid.at(u, v) {
            let g = gray.at(u, v);
            return [g, g, g];
        }
        let t = lidar.image.at(u, v) as f64 / 255.0;
        let r = (2.0 * t - 1.0).clamp(0.0, 1.0);
        let b = (1.0 - 2.0 * t).clamp(0.0, 1.0);
        let g = 1.0 - r - b;
        [(r * 255.0) as u8, (g * 255.0) as u8, (55.0 + b * 200.0) as u8]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn traj(poses: &[(f64, Pose6)]) -> Trajectory {
        Trajectory::new(
            poses
                .iter()
                .map(|&(t, p)| TrajectorySample {
                    timestamp: t,
                    pose: p,
                })
                .collect(),
        )
        .unwrap()
    }

    fn one_scan(ts: f64, pts: Vec<CloudPoint>) -> LidarScan {
        LidarScan {
            timestamp: ts,
            sensor_id: 0,
            cloud: IntensityCloud::new("L0", pts),
        }
    }

    fn identity_ext() -> BTreeMap<u32, Pose6> {
        BTreeMap::from([(0, Pose6::identity())])
    }

    #[test]
    fn trajectory_rejects_nonincreasing() {
        let p = Pose6::identity();
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![
            TrajectorySample { timestamp: 1.0, pose: p },
            TrajectorySample { timestamp: 1.0, pose: p },
        ])
        .is_err());
    }

    #[test]
    fn pose_at_samples_and_midpoint() {
        let a = Pose6::new(0.0, 0.0, 0.0, 0.1, 0.2, 0.3);
        let b = Pose6::new(2.0, 0.0, 0.0, 0.1, 0.2, 0.3);
        let t = traj(&[(0.0, a), (1.0, b)]);
        assert_eq!(t.pose_at(0.0).unwrap(), a);
        assert_eq!(t.pose_at(1.0).unwrap(), b);
        assert_abs_diff_eq!(t.pose_at(0.5).unwrap().tx, 1.0);
        assert!(matches!(t.pose_at(1.5), Err(Error::OutOfSpan { .. })));
        assert!(t.pose_at(-0.1).is_err());
    }

    #[test]
    fn yaw_interpolation_takes_short_way_across_seam() {
        let a = Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, PI - 0.1);
        let b = Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, -PI + 0.1);
        let t = traj(&[(0.0, a), (1.0, b)]);
        // rotation-matrix slerp oracle: halfway between the two yaw rotations
        let ra = a.to_transform();
        let rb = b.to_transform();
        let rel = ra.inverse().compose(&rb).to_pose();
        let half = ra.compose(&Pose6::new(0.0, 0.0, 0.0, 0.0, 0.0, rel.rz / 2.0).to_transform());
        let got = t.pose_at(0.5).unwrap();
        assert_abs_diff_eq!(got.rz, half.to_pose().rz, epsilon = 1e-12);
        assert_abs_diff_eq!(got.rz.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn accumulate_identity_and_shift() {
        let pts = vec![CloudPoint::new(1.0, 2.0, 3.0, 10), CloudPoint::new(-1.0, 0.0, 0.5, 90)];
        let t = traj(&[(0.0, Pose6::identity()), (1.0, Pose6::identity())]);
        let acc = accumulate(&[one_scan(0.5, pts.clone())], &t, &identity_ext());
        assert!(acc.rejected.is_empty());
        assert_eq!(acc.map.cloud.points, pts);

        let shifted = Pose6::new(10.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let t = traj(&[(0.0, shifted), (1.0, shifted)]);
        let acc = accumulate(&[one_scan(0.5, pts.clone())], &t, &identity_ext());
        for (a, b) in acc.map.cloud.points.iter().zip(&pts) {
            assert_eq!(a.position, b.position + Vec3::new(10.0, 0.0, 0.0));
        }
    }

    #[test]
    fn accumulate_rejects_out_of_span_and_unknown_sensor() {
        let t = traj(&[(0.0, Pose6::identity()), (1.0, Pose6::identity())]);
        let mut unknown = one_scan(0.5, vec![CloudPoint::new(0.0, 0.0, 0.0, 0)]);
        unknown.sensor_id = 9;
        let scans = vec![one_scan(2.0, vec![CloudPoint::new(0.0, 0.0, 0.0, 0)]), unknown];
        let acc = accumulate(&scans, &t, &identity_ext());
        assert_eq!(acc.rejected.len(), 2);
        assert!(acc.map.cloud.is_empty());
    }

    #[test]
    fn windows_respect_arc_length() {
        let samples: Vec<(f64, Pose6)> = (0..=200)
            .map(|i| (i as f64, Pose6::new(i as f64, 0.0, 0.0, 0.0, 0.0, 0.0)))
            .collect();
        let t = traj(&samples);
        let w = t.windows(80.0);
        assert_eq!(w.len(), 3);
        for (a, b) in &w {
            assert!(b - a <= 80.0);
        }
        assert_eq!(w[0].0, 0.0);
        assert_eq!(w.last().unwrap().1, 200.0);
    }

    #[test]
    fn camera_frame_identity_and_inverse() {
        let map = GlobalMap {
            cloud: IntensityCloud::new(
                GLOBAL_FRAME,
                vec![CloudPoint::new(4.0, -1.0, 0.2, 5), CloudPoint::new(0.0, 3.0, 1.0, 6)],
            ),
            timestamps: vec![0.0, 0.0],
            span: (0.0, 0.0),
        };
        let same = to_camera_frame(&map, &Pose6::identity(), &Pose6::identity());
        assert_eq!(same.points, map.cloud.points);

        let veh = Pose6::new(12.0, 3.0, 0.1, 0.01, -0.02, 0.4);
        let ext = Pose6::from_degrees(1.7, 0.25, 1.6, -92.0, -0.6, -90.3);
        let cam = to_camera_frame(&map, &veh, &ext);
        let back = crate::geometry::apply(&global_to_camera(&veh, &ext).inverse(), &cam, GLOBAL_FRAME);
        for (a, b) in back.points.iter().zip(&map.cloud.points) {
            assert!((a.position - b.position).norm() < 1e-9);
        }
    }

    fn small_cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 20.0, 15.0, 0.5, 40, 30).unwrap()
    }

    #[test]
    fn render_empty_cloud() {
        let img = render_intensity_image(&IntensityCloud::default(), &small_cam());
        assert_eq!(img.valid_count(), 0);
    }

    #[test]
    fn render_single_point_splat() {
        let cloud = IntensityCloud::new("c", vec![CloudPoint::new(0.0, 0.0, 2.0, 77)]);
        let img = render_intensity_image(&cloud, &small_cam());
        assert_eq!(img.valid_count(), 9);
        for v in 14..=16 {
            for u in 19..=21 {
                assert!(img.valid.at(u, v));
                assert_eq!(img.image.at(u, v), 77);
                assert_eq!(img.depth.at(u, v), 2.0);
            }
        }
    }

    #[test]
    fn render_occlusion_nearest_wins() {
        for pts in [
            vec![CloudPoint::new(0.0, 0.0, 2.0, 200), CloudPoint::new(0.0, 0.0, 5.0, 50)],
            vec![CloudPoint::new(0.0, 0.0, 5.0, 50), CloudPoint::new(0.0, 0.0, 2.0, 200)],
        ] {
            let img = render_intensity_image(&IntensityCloud::new("c", pts), &small_cam());
            assert_eq!(img.image.at(20, 15), 200);
        }
    }

    #[test]
    fn render_prefers_direct_hit_over_neighbor_splat() {
        // same surface depth, one point on pixel (20,15), one on (21,15)
        let k = small_cam();
        let a = CloudPoint::new(0.0, 0.0, 2.0, 10);
        let b = CloudPoint::new(0.02, 0.0, 2.01, 250);
        for pts in [vec![a, b], vec![b, a]] {
            let img = render_points(&pts, &k, RenderOptions::default());
            assert_eq!(img.image.at(20, 15), 10);
            assert_eq!(img.image.at(21, 15), 250);
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let k = small_cam();
        let pts: Vec<CloudPoint> = (0..200)
            .map(|i| {
                let f = i as f64;
                CloudPoint::new((f * 0.37).sin(), (f * 0.11).cos(), 1.0 + (f * 0.05) % 4.0, i as u8)
            })
            .collect();
        let cloud = IntensityCloud::new("c", pts);
        let a = render_intensity_image(&cloud, &k);
        let b = render_intensity_image(&cloud, &k);
        assert_eq!(a, b);
        let in_bounds = cloud.points.iter().filter(|p| k.project(&p.position).is_some()).count();
        assert!(a.valid_count() <= in_bounds * 9);
        for (i, &v) in a.valid.data().iter().enumerate() {
            if v {
                assert!(a.depth.data()[i].is_finite() && a.depth.data()[i] > Z_MIN as f32);
            }
        }
    }
}
