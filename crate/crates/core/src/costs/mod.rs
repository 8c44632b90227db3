//! Calibration costs: edge alignment, NID, road-plane fit and their weighted sum.

mod distance;
mod nid;
mod region;

pub use crate::edges::{canny_edges, CannyParams};
pub use distance::{distance_transform, edge_cost, DistanceTransformImage};
pub use nid::{nid_cost, JointHistogram, NidParams};
pub use region::{
    estimate_normals, plane_cost, segment_road_indices, segment_road_points, voxel_downsample, GridIndex,
    PlaneResidual, RegionParams,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6, Vec3, Z_MIN};
use crate::local_map::{global_to_camera, GlobalMap, IntensityRenderer, LidarIntensityImage, RenderOptions};
use crate::raster::{BinaryImage, GrayImage, RoadMask};
use crate::stereo_road::PlaneModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            k1: 2.0,
            k2: 500.0,
            k3: 0.1,
        }
    }
}

impl CostWeights {
    pub fn new(k1: f64, k2: f64, k3: f64) -> Result<Self> {
        if [k1, k2, k3].iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(Error::Config(format!("cost weights must be finite and >= 0, got ({k1}, {k2}, {k3})")));
        }
        Ok(CostWeights { k1, k2, k3 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub weights: CostWeights,
    pub canny: CannyParams,
    pub nid: NidParams,
    pub region: RegionParams,
    pub plane_residual: PlaneResidual,
    pub render: RenderOptions,
    /// LiDAR edges closer than this to an empty pixel are ignored, px.
    pub lidar_valid_erosion: usize,
    /// Map points farther than this from the camera are dropped, m.
    pub max_depth: f64,
    /// Points projecting this far outside the image under the initial extrinsic are kept, px.
    pub crop_margin: f64,
    /// Points kept per pixel side when thinning the per-frame map.
    pub subpixel_cells: usize,
    /// Voxel size for road segmentation, m.
    pub road_voxel: f64,
    /// Road segmentation only considers points up to this depth, m.
    pub road_max_depth: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            weights: CostWeights::default(),
            canny: CannyParams::default(),
            nid: NidParams::default(),
            region: RegionParams::default(),
            plane_residual: PlaneResidual::Abs,
            render: RenderOptions::default(),
            lidar_valid_erosion: 2,
            max_depth: 40.0,
            crop_margin: 40.0,
            subpixel_cells: 2,
            road_voxel: 0.05,
            road_max_depth: 25.0,
        }
    }
}

/// Per-frame inputs of the cost, fixed across candidate extrinsics.
#[derive(Debug, Clone)]
pub struct FrameCostData {
    pub frame_id: usize,
    pub timestamp: f64,
    pub k: CameraIntrinsics,
    pub vehicle_pose: Pose6,
    pub gray: GrayImage,
    pub road_mask: RoadMask,
    pub stereo_edges: BinaryImage,
    pub stereo_dt: DistanceTransformImage,
    pub d_sat: f64,
    pub plane: PlaneModel,
    /// Global-frame map points near the camera view.
    pub points: Vec<Vec3>,
    pub intensities: Vec<u8>,
    /// Global-frame road-surface points; empty when segmentation failed.
    pub road_points: Vec<Vec3>,
}

/// Stereo-side inputs for one frame.
#[derive(Debug, Clone)]
pub struct FrameInput<'a> {
    pub frame_id: usize,
    pub timestamp: f64,
    pub k: CameraIntrinsics,
    pub vehicle_pose: Pose6,
    pub gray: &'a GrayImage,
    pub road_mask: &'a RoadMask,
    pub plane: PlaneModel,
}

/// Crops and thins the map around the frame's view under `init`, and segments
/// its road points once.
pub fn prepare_frame(map: &GlobalMap, input: &FrameInput, init: &Pose6, params: &CostParams) -> FrameCostData {
    let k = input.k;
    let d_sat = k.diagonal();
    let stereo_edges = canny_edges(input.gray, Some(input.road_mask), &params.canny);
    let stereo_dt = distance_transform(&stereo_edges, d_sat);

    let t = global_to_camera(&input.vehicle_pose, init);
    let m = params.crop_margin;
    let s = params.subpixel_cells.max(1) as f64;
    let (gw, gh) = (((k.width as f64 + 2.0 * m) * s).ceil() as usize, ((k.height as f64 + 2.0 * m) * s).ceil() as usize);
    // nearest point per sub-pixel cell
    let mut cell_best: Vec<(f64, u32)> = vec![(f64::INFINITY, u32::MAX); gw * gh];
    let mut road_candidates = Vec::new();
    for (i, p) in map.cloud.points.iter().enumerate() {
        let q = t.transform_point(&p.position);
        if q.z <= Z_MIN || q.z > params.max_depth {
            continue;
        }
        let Some((u, v)) = k.project_unbounded(&q) else {
            continue;
        };
        if u < -m || v < -m || u >= k.width as f64 + m || v >= k.height as f64 + m {
            continue;
        }
        let (cu, cv) = (((u + m) * s) as usize, ((v + m) * s) as usize);
        if cu < gw && cv < gh {
            let c = &mut cell_best[cv * gw + cu];
            if q.z < c.0 {
                *c = (q.z, i as u32);
            }
        }
        if q.z <= params.road_max_depth && k.pixel_of(u, v).is_some() {
            road_candidates.push((i, q));
        }
    }
    // cell order keeps z-buffer accesses nearly sequential when rendering
    let keep: Vec<u32> = cell_best.into_iter().filter(|c| c.1 != u32::MAX).map(|c| c.1).collect();
    let points: Vec<Vec3> = keep.iter().map(|&i| map.cloud.points[i as usize].position).collect();
    let intensities: Vec<u8> = keep.iter().map(|&i| map.cloud.points[i as usize].intensity).collect();

    let cam_pts: Vec<Vec3> = road_candidates.iter().map(|c| c.1).collect();
    let thinned = voxel_downsample(&cam_pts, params.road_voxel);
    let thinned_pts: Vec<Vec3> = thinned.iter().map(|&j| cam_pts[j]).collect();
    let road_points = match segment_road_indices(&thinned_pts, &input.plane, &params.region) {
        Ok(idx) => idx
            .into_iter()
            .map(|j| map.cloud.points[road_candidates[thinned[j]].0].position)
            .collect(),
        Err(e) => {
            log::warn!("frame {}: {e}; plane cost skipped", input.frame_id);
            Vec::new()
        }
    };

    FrameCostData {
        frame_id: input.frame_id,
        timestamp: input.timestamp,
        k,
        vehicle_pose: input.vehicle_pose,
        gray: input.gray.clone(),
        road_mask: input.road_mask.clone(),
        stereo_edges,
        stereo_dt,
        d_sat,
        plane: input.plane,
        points,
        intensities,
        road_points,
    }
}

/// Individual costs and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub f_edge: f64,
    pub f_nid: f64,
    pub f_plane: f64,
    pub f_sum: f64,
}

impl std::ops::Add for CostBreakdown {
    type Output = CostBreakdown;
    fn add(self, o: CostBreakdown) -> CostBreakdown {
        CostBreakdown {
            f_edge: self.f_edge + o.f_edge,
            f_nid: self.f_nid + o.f_nid,
            f_plane: self.f_plane + o.f_plane,
            f_sum: self.f_sum + o.f_sum,
        }
    }
}

/// LiDAR intensity image of the frame's map under a candidate extrinsic.
pub fn render_frame(frame: &FrameCostData, candidate: &Pose6, opts: RenderOptions) -> LidarIntensityImage {
    let t = global_to_camera(&frame.vehicle_pose, candidate);
    let mut r = IntensityRenderer::new(frame.k, opts);
    for (p, &i) in frame.points.iter().zip(&frame.intensities) {
        let q = t.transform_point(p);
        if q.z > Z_MIN {
            r.add(&q, i);
        }
    }
    r.finish()
}

pub fn frame_cost(frame: &FrameCostData, candidate: &Pose6, params: &CostParams) -> CostBreakdown {
    let lidar = render_frame(frame, candidate, params.render);
    let edge_mask = lidar.valid.erode(params.lidar_valid_erosion).and(&frame.road_mask);
    let lidar_edges = canny_edges(&lidar.image, Some(&edge_mask), &params.canny);
    let f_edge = edge_cost(&lidar_edges, &frame.stereo_dt, &edge_mask, frame.d_sat);
    let f_nid = nid_cost(&frame.gray, &lidar.image, &lidar.valid.and(&frame.road_mask), &params.nid);
    let f_plane = if frame.road_points.is_empty() {
        0.0
    } else {
        let t = global_to_camera(&frame.vehicle_pose, candidate);
        let cam: Vec<Vec3> = frame.road_points.iter().map(|p| t.transform_point(p)).collect();
        plane_cost(&cam, &frame.plane, params.plane_residual).unwrap_or(0.0)
    };
    let w = params.weights;
    CostBreakdown {
        f_edge,
        f_nid,
        f_plane,
        f_sum: w.k1 * f_edge + w.k2 * f_nid + w.k3 * f_plane,
    }
}

/// Sum of per-frame costs. Frames are evaluated in parallel and added in input order.
pub fn total_cost(frames: &[FrameCostData], candidate: &Pose6, params: &CostParams) -> CostBreakdown {
    let per: Vec<CostBreakdown> = frames.par_iter().map(|f| frame_cost(f, candidate, params)).collect();
    per.into_iter().fold(CostBreakdown::default(), |a, b| a + b)
}
