//! Extrinsic estimation: frame analysis and selection, cost preparation, and
//! downhill simplex minimization of the summed cost.

mod experiments;
mod simplex;

pub use experiments::{
    argmin_index, encode_repeat_csv, encode_summary_csv, encode_sweep_csv, perturbations, quartiles, repeatability,
    sweep, sweep_all, sweep_offsets, Quartiles, RepeatRun, RepeatSummary, RepeatabilityReport, SweepRow, PARAM_NAMES,
    REPEAT_HEADER, SUMMARY_HEADER, SWEEP_HEADER,
};
pub use simplex::{is_monotone_nonincreasing, nelder_mead, NelderMeadOptions, NelderMeadResult, SimplexState};

use rayon::prelude::*;

use crate::config::Config;
use crate::costs::{prepare_frame, total_cost, CostBreakdown, CostParams, FrameCostData, FrameInput};
use crate::dataset::{CameraSide, Dataset, StereoFrame};
use crate::error::{Error, Result};
use crate::geometry::{Pose6, Z_MIN};
use crate::image_selection::{
    default_region, detect_segments, estimate_vanishing_point, image_utility, select_informative, ImageUtility, LineSegment,
    VanishingEstimate,
};
use crate::io::ResultRecord;
use crate::local_map::{accumulate_windows, global_to_camera, GlobalMap, IntensityRenderer, LidarIntensityImage};
use crate::raster::GrayImage;
use crate::stereo_road::{compute_disparity, compute_disparity_right_reference, detect_road, DisparityImage, RoadDetection};

/// Road detection and informativeness of one stereo frame.
#[derive(Debug, Clone)]
pub struct FrameAnalysis {
    pub frame_id: usize,
    pub timestamp: f64,
    /// `None` when road detection failed; such frames are never selected.
    pub detection: Option<RoadDetection>,
    pub segments: Vec<LineSegment>,
    pub vanishing: Option<VanishingEstimate>,
    pub utility: ImageUtility,
}

pub fn side_image(frame: &StereoFrame, side: CameraSide) -> &GrayImage {
    match side {
        CameraSide::Left => &frame.left,
        CameraSide::Right => &frame.right,
    }
}

/// Disparity referenced to the chosen side; precomputed maps win over matching.
pub fn side_disparity(frame: &StereoFrame, side: CameraSide, config: &Config) -> DisparityImage {
    match side {
        CameraSide::Left => frame
            .disparity_left
            .clone()
            .unwrap_or_else(|| compute_disparity(&frame.left, &frame.right, &config.stereo)),
        CameraSide::Right => frame
            .disparity_right
            .clone()
            .unwrap_or_else(|| compute_disparity_right_reference(&frame.left, &frame.right, &config.stereo)),
    }
}

pub fn analyze_frame(dataset: &Dataset, frame_id: usize, side: CameraSide, config: &Config) -> FrameAnalysis {
    let frame = &dataset.frames[frame_id];
    let disparity = side_disparity(frame, side, config);
    let empty = ImageUtility {
        frame_id,
        timestamp: frame.timestamp,
        n_segments: 0,
        u_van: 0.0,
        u_i: 0.0,
    };
    let detection = match detect_road(&disparity, &dataset.intrinsics, &config.road_params()) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("frame {frame_id} (t={}): {e}", frame.timestamp);
            return FrameAnalysis {
                frame_id,
                timestamp: frame.timestamp,
                detection: None,
                segments: Vec::new(),
                vanishing: None,
                utility: empty,
            };
        }
    };
    let img = side_image(frame, side);
    let segments = detect_segments(img, &detection.mask, &config.segment_params());
    let van = estimate_vanishing_point(&segments, default_region(img.width(), img.height(), detection.horizon));
    let utility = image_utility(frame_id, frame.timestamp, &segments, &van);
    FrameAnalysis {
        frame_id,
        timestamp: frame.timestamp,
        detection: Some(detection),
        segments,
        vanishing: Some(van),
        utility,
    }
}

/// Result of one calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub estimate: Pose6,
    pub cost: f64,
    pub breakdown: CostBreakdown,
    pub initial_cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best cost at every simplex iteration.
    pub history: Vec<f64>,
    /// Frames used, best utility first.
    pub frames: Vec<usize>,
}

impl CalibrationResult {
    pub fn record(&self) -> ResultRecord {
        ResultRecord {
            pose: self.estimate,
            cost: self.cost,
            iters: self.iterations,
            converged: self.converged,
        }
    }
}

/// Cost inputs of a fixed frame set, cropped around the pose they were prepared at.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub frames: Vec<FrameCostData>,
    pub params: CostParams,
    pub prepared_at: Pose6,
}

impl CalibrationProblem {
    pub fn cost(&self, pose: &Pose6) -> CostBreakdown {
        total_cost(&self.frames, pose, &self.params)
    }

    pub fn solve(&self, init: &Pose6, opts: &NelderMeadOptions) -> CalibrationResult {
        let r = nelder_mead(|x: &[f64]| self.cost(&pose_of(x)).f_sum, &init.to_array(), opts);
        let estimate = pose_of(&r.x);
        let breakdown = self.cost(&estimate);
        CalibrationResult {
            estimate,
            cost: r.cost,
            breakdown,
            initial_cost: r.history.first().copied().unwrap_or(r.cost),
            iterations: r.iterations,
            evaluations: r.evaluations,
            converged: r.converged,
            history: r.history,
            frames: self.frames.iter().map(|f| f.frame_id).collect(),
        }
    }
}

fn pose_of(x: &[f64]) -> Pose6 {
    Pose6::new(x[0], x[1], x[2], x[3], x[4], x[5])
}

/// Per-dataset state shared by calibration runs: accumulated maps and frame analyses.
pub struct Session<'a> {
    pub dataset: &'a Dataset,
    pub side: CameraSide,
    pub config: Config,
    pub maps: Vec<GlobalMap>,
    pub analyses: Vec<FrameAnalysis>,
}

impl<'a> Session<'a> {
    pub fn new(dataset: &'a Dataset, side: CameraSide, config: &Config) -> Result<Session<'a>> {
        config.validate()?;
        if dataset.frames.is_empty() {
            return Err(Error::Dataset("dataset has no stereo frames".into()));
        }
        log::info!("seed {}", config.seed);
        let (maps, rejected) =
            accumulate_windows(&dataset.scans, &dataset.trajectory, &dataset.lidar_extrinsics, config.map_window);
        if !rejected.is_empty() {
            log::warn!("{} scans rejected", rejected.len());
        }
        let analyses: Vec<FrameAnalysis> = (0..dataset.frames.len())
            .into_par_iter()
            .map(|i| analyze_frame(dataset, i, side, config))
            .collect();
        Ok(Session {
            dataset,
            side,
            config: config.clone(),
            maps,
            analyses,
        })
    }

    pub fn utilities(&self) -> Vec<ImageUtility> {
        self.analyses.iter().map(|a| a.utility).collect()
    }

    /// The `k` most informative frames with a detected road, best first.
    pub fn select(&self, k: usize) -> Result<Vec<usize>> {
        let usable: Vec<ImageUtility> = self
            .analyses
            .iter()
            .filter(|a| a.detection.is_some())
            .map(|a| a.utility)
            .collect();
        if usable.is_empty() {
            return Err(Error::NoInformativeFrames);
        }
        Ok(select_informative(&usable, k))
    }

    fn map_for(&self, t: f64) -> Option<&GlobalMap> {
        self.maps.iter().find(|m| t >= m.span.0 && t <= m.span.1)
    }

    /// Prepares the cost inputs of `frame_ids` around `init`.
    pub fn problem(&self, frame_ids: &[usize], init: &Pose6) -> Result<CalibrationProblem> {
        let params = self.config.cost;
        let frames = frame_ids
            .par_iter()
            .map(|&id| -> Result<FrameCostData> {
                let a = self
                    .analyses
                    .get(id)
                    .ok_or_else(|| Error::Dataset(format!("no frame {id}")))?;
                let det = a
                    .detection
                    .as_ref()
                    .ok_or_else(|| Error::NoRoad(format!("frame {id} has no detected road")))?;
                let map = self
                    .map_for(a.timestamp)
                    .ok_or_else(|| Error::Dataset(format!("no map covers frame {id} at t={}", a.timestamp)))?;
                let input = FrameInput {
                    frame_id: id,
                    timestamp: a.timestamp,
                    k: self.dataset.intrinsics,
                    vehicle_pose: self.dataset.trajectory.pose_at(a.timestamp)?,
                    gray: side_image(&self.dataset.frames[id], self.side),
                    road_mask: &det.mask,
                    plane: det.plane,
                };
                Ok(prepare_frame(map, &input, init, &params))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CalibrationProblem {
            frames,
            params,
            prepared_at: *init,
        })
    }

    /// Map intensities rendered into frame `frame_id` under `pose`, up to the cost's depth limit.
    pub fn project(&self, frame_id: usize, pose: &Pose6) -> Result<LidarIntensityImage> {
        let frame = self
            .dataset
            .frames
            .get(frame_id)
            .ok_or_else(|| Error::Dataset(format!("no frame {frame_id}")))?;
        let map = self
            .map_for(frame.timestamp)
            .ok_or_else(|| Error::Dataset(format!("no map covers frame {frame_id}")))?;
        let t = global_to_camera(&self.dataset.trajectory.pose_at(frame.timestamp)?, pose);
        let max_depth = self.config.cost.max_depth;
        let mut r = IntensityRenderer::new(self.dataset.intrinsics, self.config.cost.render);
        for p in &map.cloud.points {
            let q = t.transform_point(&p.position);
            if q.z > Z_MIN && q.z <= max_depth {
                r.add(&q, p.intensity);
            }
        }
        Ok(r.finish())
    }

    /// Selects the `k` most informative frames and minimizes their summed cost from `init`.
    pub fn calibrate(&self, init: &Pose6, k: usize) -> Result<CalibrationResult> {
        let ids = self.select(k)?;
        let problem = self.problem(&ids, init)?;
        let r = problem.solve(init, &self.config.nelder_mead());
        log::info!(
            "calibrated with frames {:?}: cost {:.6} -> {:.6} in {} iterations",
            r.frames,
            r.initial_cost,
            r.cost,
            r.iterations
        );
        Ok(r)
    }
}

/// Full pipeline: maps, road detection, selection of `config.images` frames, minimization.
pub fn calibrate(dataset: &Dataset, side: CameraSide, config: &Config, init: &Pose6) -> Result<CalibrationResult> {
    Session::new(dataset, side, config)?.calibrate(init, config.images)
}
