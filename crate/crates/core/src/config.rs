//! Flat `key=value` configuration covering every tunable of the pipeline.
//!
//! Unknown keys are rejected; missing keys keep their defaults. `Config::to_text`
//! lists every key with its current value.

use std::path::Path;

use crate::costs::{CostParams, CostWeights, PlaneResidual};
use crate::error::{Error, Result};
use crate::image_selection::SegmentParams;
use crate::io;
use crate::optimizer::NelderMeadOptions;
use crate::stereo_road::{RoadParams, StereoParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub step_m: f64,
    pub step_deg: f64,
    pub f_tol: f64,
    pub x_tol_m: f64,
    pub x_tol_deg: f64,
    pub max_iter: usize,
    pub restart: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_m: 0.1,
            step_deg: 1.0,
            f_tol: 1e-6,
            x_tol_m: 1e-4,
            x_tol_deg: 0.01,
            max_iter: 2000,
            restart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub steps: usize,
    pub range_m: f64,
    pub range_deg: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            steps: 61,
            range_m: 0.3,
            range_deg: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatConfig {
    pub runs: usize,
    pub perturb_m: f64,
    pub perturb_deg: f64,
    /// Image counts to compare.
    pub images: Vec<usize>,
}

impl Default for RepeatConfig {
    fn default() -> Self {
        RepeatConfig {
            runs: 40,
            perturb_m: 0.3,
            perturb_deg: 3.0,
            images: vec![1, 2, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Root seed for every randomized step.
    pub seed: u64,
    /// Number of informative images used for calibration.
    pub images: usize,
    /// Arc length of one accumulated map, m.
    pub map_window: f64,
    pub stereo: StereoParams,
    pub road: RoadParams,
    pub segments: SegmentParams,
    pub cost: CostParams,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepConfig,
    pub repeat: RepeatConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            images: 5,
            map_window: crate::local_map::DEFAULT_MAP_WINDOW,
            stereo: StereoParams::default(),
            road: RoadParams::default(),
            segments: SegmentParams::default(),
            cost: CostParams::default(),
            optimizer: OptimizerConfig::default(),
            sweep: SweepConfig::default(),
            repeat: RepeatConfig::default(),
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(f64, usize, u32, u64, bool);

impl Value for PlaneResidual {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "abs" => Some(PlaneResidual::Abs),
            "signed" => Some(PlaneResidual::Signed),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            PlaneResidual::Abs => "abs".into(),
            PlaneResidual::Signed => "signed".into(),
        }
    }
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> Option<Self> {
        s.split(',').map(|p| p.trim().parse().ok()).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        /// Every recognized key, in output order.
        pub const CONFIG_KEYS: &[&str] = &[$($key),*];

        fn set_key(c: &mut Config, key: &str, value: &str) -> Option<bool> {
            match key {
                $($key => Some(match Value::parse(value) {
                    Some(v) => {
                        c$(.$field)+ = v;
                        true
                    }
                    None => false,
                }),)*
                _ => None,
            }
        }

        fn get_key(c: &Config, key: &str) -> Option<String> {
            match key {
                $($key => Some(c$(.$field)+.render()),)*
                _ => None,
            }
        }
    };
}

config_keys! {
    "seed" => seed,
    "selection.images" => images,
    "map.window_m" => map_window,
    "stereo.window" => stereo.window,
    "stereo.max_disp" => stereo.max_disp,
    "stereo.lr_tolerance" => stereo.lr_tolerance,
    "road.line_iterations" => road.line_iterations,
    "road.line_threshold" => road.line_threshold,
    "road.min_inlier_rows" => road.min_inlier_rows,
    "road.tau_road" => road.tau_road,
    "road.plane_iterations" => road.plane_iterations,
    "road.tau_plane" => road.tau_plane,
    "road.min_plane_points" => road.min_plane_points,
    "road.min_plane_inlier_ratio" => road.min_plane_inlier_ratio,
    "segments.min_length" => segments.min_length,
    "segments.max_gap" => segments.max_gap,
    "segments.hough_threshold" => segments.hough_threshold,
    "segments.theta_step_deg" => segments.theta_step_deg,
    "segments.min_mask_fraction" => segments.min_mask_fraction,
    "canny.sigma" => cost.canny.sigma,
    "canny.low" => cost.canny.low,
    "canny.high" => cost.canny.high,
    "weights.k1" => cost.weights.k1,
    "weights.k2" => cost.weights.k2,
    "weights.k3" => cost.weights.k3,
    "nid.bins" => cost.nid.bins,
    "nid.min_covalid" => cost.nid.min_covalid,
    "region.k" => cost.region.k,
    "region.theta_smooth_deg" => cost.region.theta_smooth_deg,
    "region.tau_seed" => cost.region.tau_seed,
    "plane.residual" => cost.plane_residual,
    "render.splat_radius" => cost.render.splat_radius,
    "render.depth_band" => cost.render.depth_band,
    "cost.lidar_valid_erosion" => cost.lidar_valid_erosion,
    "cost.max_depth" => cost.max_depth,
    "cost.crop_margin" => cost.crop_margin,
    "cost.subpixel_cells" => cost.subpixel_cells,
    "cost.road_voxel" => cost.road_voxel,
    "cost.road_max_depth" => cost.road_max_depth,
    "optimizer.step_m" => optimizer.step_m,
    "optimizer.step_deg" => optimizer.step_deg,
    "optimizer.f_tol" => optimizer.f_tol,
    "optimizer.x_tol_m" => optimizer.x_tol_m,
    "optimizer.x_tol_deg" => optimizer.x_tol_deg,
    "optimizer.max_iter" => optimizer.max_iter,
    "optimizer.restart" => optimizer.restart,
    "sweep.steps" => sweep.steps,
    "sweep.range_m" => sweep.range_m,
    "sweep.range_deg" => sweep.range_deg,
    "repeat.runs" => repeat.runs,
    "repeat.perturb_m" => repeat.perturb_m,
    "repeat.perturb_deg" => repeat.perturb_deg,
    "repeat.images" => repeat.images,
}

impl Config {
    pub fn parse(text: &str, ctx: &str) -> Result<Config> {
        let kv = io::parse_key_values(text, ctx)?;
        let mut c = Config::default();
        for (k, v) in &kv {
            match set_key(&mut c, k, v) {
                None => return Err(Error::Config(format!("{ctx}: unknown key {k}"))),
                Some(false) => return Err(Error::Config(format!("{ctx}: bad value {v:?} for {k}"))),
                Some(true) => {}
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// Sets one key, as if it appeared in the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match set_key(self, key, value) {
            None => Err(Error::Config(format!("unknown key {key}"))),
            Some(false) => Err(Error::Config(format!("bad value {value:?} for {key}"))),
            Some(true) => self.validate(),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_key(self, key)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", get_key(self, k).expect("listed key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        CostWeights::new(self.cost.weights.k1, self.cost.weights.k2, self.cost.weights.k3)?;
        if !(1..=256).contains(&self.cost.nid.bins) {
            return bad(format!("nid.bins must be in 1..=256, got {}", self.cost.nid.bins));
        }
        if self.stereo.window % 2 == 0 || self.stereo.max_disp == 0 {
            return bad("stereo.window must be odd and stereo.max_disp positive".into());
        }
        if self.images == 0 {
            return bad("selection.images must be >= 1".into());
        }
        if !(self.map_window > 0.0) {
            return bad("map.window_m must be positive".into());
        }
        if self.cost.region.k < 3 {
            return bad("region.k must be >= 3".into());
        }
        if !(self.cost.road_voxel > 0.0) || self.cost.subpixel_cells == 0 {
            return bad("cost.road_voxel and cost.subpixel_cells must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.step_m > 0.0 && o.step_deg > 0.0) || !(o.f_tol >= 0.0 && o.x_tol_m >= 0.0 && o.x_tol_deg >= 0.0) {
            return bad("optimizer steps must be positive and tolerances non-negative".into());
        }
        if self.sweep.steps == 0 || !(self.sweep.range_m >= 0.0 && self.sweep.range_deg >= 0.0) {
            return bad("sweep.steps must be >= 1 and ranges non-negative".into());
        }
        if self.repeat.runs == 0 || self.repeat.images.iter().any(|&k| k == 0) {
            return bad("repeat.runs and repeat.images entries must be >= 1".into());
        }
        if !(self.repeat.perturb_m >= 0.0 && self.repeat.perturb_deg >= 0.0) {
            return bad("repeat perturbations must be non-negative".into());
        }
        Ok(())
    }

    pub fn road_params(&self) -> RoadParams {
        RoadParams {
            seed: self.seed,
            ..self.road
        }
    }

    pub fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            canny: self.cost.canny,
            seed: self.seed,
            ..self.segments
        }
    }

    pub fn nelder_mead(&self) -> NelderMeadOptions {
        let o = &self.optimizer;
        NelderMeadOptions::pose(o.step_m, o.step_deg, o.f_tol, o.x_tol_m, o.x_tol_deg, o.max_iter, o.restart)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_text(), "t").unwrap(), c);
        assert_eq!(c.to_text().lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn keys_override_defaults() {
        let c = Config::parse("weights.k1=3 nid.bins=64\nplane.residual=signed # comment\nrepeat.images=1,3", "t").unwrap();
        assert_eq!(c.cost.weights.k1, 3.0);
        assert_eq!(c.cost.weights.k2, 500.0);
        assert_eq!(c.cost.nid.bins, 64);
        assert_eq!(c.cost.plane_residual, PlaneResidual::Signed);
        assert_eq!(c.repeat.images, vec![1, 3]);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(Config::parse("weights.k4=1", "t").is_err());
        assert!(Config::parse("nid.bins=x", "t").is_err());
        assert!(Config::parse("nid.bins=0", "t").is_err());
        assert!(Config::parse("weights.k2=-1", "t").is_err());
        assert!(Config::parse("plane.residual=squared", "t").is_err());
        assert!(Config::parse("stereo.window=8", "t").is_err());
    }

    #[test]
    fn seed_reaches_randomized_stages() {
        let mut c = Config::default();
        c.set("seed", "42").unwrap();
        assert_eq!(c.road_params().seed, 42);
        assert_eq!(c.segment_params().seed, 42);
    }
}
