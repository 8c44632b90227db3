//! Calibration dataset: trajectory, LiDAR scans and rectified stereo frames,
//! in memory and on disk.
//!
//! Directory layout:
//!
//! ```text
//! camera.txt               f= cu= cv= baseline= width= height=
//! trajectory.csv           timestamp_s,tx,ty,tz,rx,ry,rz
//! lidar_extrinsics.txt     lidar<id>.tx= ... lidar<id>.rz=
//! scans/scan_<id>_<ns>.ply
//! images/left_<ns>.pgm     8-bit P5
//! images/right_<ns>.pgm
//! disparity/left_<ns>.pgm  optional, 16-bit, value = disparity * 16
//! disparity/right_<ns>.pgm optional, right-referenced
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose6};
use crate::io;
use crate::local_map::{LidarScan, Trajectory};
use crate::raster::GrayImage;
use crate::stereo_road::DisparityImage;

#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub timestamp: f64,
    pub left: GrayImage,
    pub right: GrayImage,
    /// Precomputed left-referenced disparity, if supplied.
    pub disparity_left: Option<DisparityImage>,
    /// Precomputed right-referenced disparity, if supplied.
    pub disparity_right: Option<DisparityImage>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub trajectory: Trajectory,
    pub lidar_extrinsics: BTreeMap<u32, Pose6>,
    pub scans: Vec<LidarScan>,
    /// Sorted by timestamp.
    pub frames: Vec<StereoFrame>,
}

/// Which camera of the rigid stereo pair to calibrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraSide {
    #[default]
    Left,
    Right,
}

pub const CAMERA_FILE: &str = "camera.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const LIDAR_EXTRINSICS_FILE: &str = "lidar_extrinsics.txt";
pub const TRUTH_FILE: &str = "truth.txt";
pub const TRUTH_RIGHT_FILE: &str = "truth_right.txt";

pub fn encode_intrinsics(k: &CameraIntrinsics) -> String {
    format!(
        "f={}\ncu={}\ncv={}\nbaseline={}\nwidth={}\nheight={}\n",
        k.f, k.cu, k.cv, k.baseline, k.width, k.height
    )
}

pub fn parse_intrinsics(text: &str, ctx: &str) -> Result<CameraIntrinsics> {
    let kv = io::parse_key_values(text, ctx)?;
    let get = |key: &str| io::get_f64(&kv, key, ctx);
    let dim = |key: &str| -> Result<usize> {
        let v = get(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(Error::parse(ctx, format!("{key} must be a positive integer")));
        }
        Ok(v as usize)
    };
    CameraIntrinsics::new(get("f")?, get("cu")?, get("cv")?, get("baseline")?, dim("width")?, dim("height")?)
}

fn image_name(prefix: &str, timestamp: f64) -> String {
    format!("{prefix}_{}.pgm", io::seconds_to_ns(timestamp))
}

fn parse_image_name(name: &str, prefix: &str) -> Option<u64> {
    name.strip_prefix(prefix)?.strip_prefix('_')?.strip_suffix(".pgm")?.parse().ok()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

impl Dataset {
    /// Writes the dataset; file contents depend only on the data.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        for sub in ["scans", "images"] {
            create_dir(&dir.join(sub))?;
        }
        io::write_bytes(&dir.join(CAMERA_FILE), encode_intrinsics(&self.intrinsics).as_bytes())?;
        io::write_bytes(&dir.join(TRAJECTORY_FILE), &io::encode_trajectory(self.trajectory.samples())?)?;
        io::write_bytes(
            &dir.join(LIDAR_EXTRINSICS_FILE),
            io::encode_lidar_extrinsics(&self.lidar_extrinsics).as_bytes(),
        )?;
        self.scans.par_iter().try_for_each(|s| {
            let name = io::scan_name(s.sensor_id, io::seconds_to_ns(s.timestamp));
            io::write_ply(&dir.join("scans").join(name), &s.cloud)
        })?;
        let has_disp = self.frames.iter().any(|f| f.disparity_left.is_some() || f.disparity_right.is_some());
        if has_disp {
            create_dir(&dir.join("disparity"))?;
        }
        self.frames.par_iter().try_for_each(|f| -> Result<()> {
            io::write_pgm8(&dir.join("images").join(image_name("left", f.timestamp)), &f.left)?;
            io::write_pgm8(&dir.join("images").join(image_name("right", f.timestamp)), &f.right)?;
            if let Some(d) = &f.disparity_left {
                io::write_pgm16(&dir.join("disparity").join(image_name("left", f.timestamp)), d.raw())?;
            }
            if let Some(d) = &f.disparity_right {
                io::write_pgm16(&dir.join("disparity").join(image_name("right", f.timestamp)), d.raw())?;
            }
            Ok(())
        })
    }

    /// Loads a dataset directory. Precomputed disparities are read only when
    /// `with_disparity` is set.
    pub fn load(dir: &Path, with_disparity: bool) -> Result<Dataset> {
        let read_text = |name: &str| -> Result<(String, PathBuf)> {
            let p = dir.join(name);
            let t = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Ok((t, p))
        };
        let (cam, cam_path) = read_text(CAMERA_FILE)?;
        let intrinsics = parse_intrinsics(&cam, &cam_path.display().to_string())?;
        let trajectory = Trajectory::new(io::read_trajectory(&dir.join(TRAJECTORY_FILE))?)?;
        let (ext, ext_path) = read_text(LIDAR_EXTRINSICS_FILE)?;
        let lidar_extrinsics = io::parse_lidar_extrinsics(&ext, &ext_path.display().to_string())?;

        let scan_dir = dir.join("scans");
        let mut scan_files: Vec<(u32, u64, PathBuf)> = list_dir(&scan_dir)?
            .into_iter()
            .filter_map(|(name, p)| io::parse_scan_name(&name).map(|(id, ns)| (id, ns, p)))
            .collect();
        scan_files.sort_by_key(|s| (s.1, s.0));
        let scans = scan_files
            .par_iter()
            .map(|(id, ns, p)| {
                Ok(LidarScan {
                    timestamp: io::ns_to_seconds(*ns),
                    sensor_id: *id,
                    cloud: io::read_ply(p, &format!("lidar{id}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let image_dir = dir.join("images");
        let mut stamps: Vec<u64> = list_dir(&image_dir)?
            .into_iter()
            .filter_map(|(name, _)| parse_image_name(&name, "left"))
            .collect();
        stamps.sort_unstable();
        let disp_dir = dir.join("disparity");
        let frames = stamps
            .par_iter()
            .map(|&ns| {
                let t = io::ns_to_seconds(ns);
                let left = io::read_pgm8(&image_dir.join(image_name("left", t)))?;
                let right = io::read_pgm8(&image_dir.join(image_name("right", t)))?;
                let disp = |side: &str| -> Result<Option<DisparityImage>> {
                    let p = disp_dir.join(image_name(side, t));
                    if with_disparity && p.exists() {
                        Ok(Some(DisparityImage::from_raw(io::read_pgm16(&p)?)))
                    } else {
                        Ok(None)
                    }
                };
                Ok(StereoFrame {
                    timestamp: t,
                    disparity_left: disp("left")?,
                    disparity_right: disp("right")?,
                    left,
                    right,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for f in &frames {
            if f.left.dims() != (intrinsics.width, intrinsics.height) || f.right.dims() != f.left.dims() {
                return Err(Error::Dataset(format!(
                    "image at t={} is {:?}, camera is {}x{}",
                    f.timestamp,
                    f.left.dims(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
        }
        Ok(Dataset {
            intrinsics,
            trajectory,
            lidar_extrinsics,
            scans,
            frames,
        })
    }
}

fn list_dir(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            out.push((name.to_string(), entry.path()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_round_trip() {
        let k = CameraIntrinsics::new(300.0, 160.0, 120.0, 0.475, 320, 240).unwrap();
        assert_eq!(parse_intrinsics(&encode_intrinsics(&k), "t").unwrap(), k);
        assert!(parse_intrinsics("f=1 cu=1 cv=1 baseline=0.5 width=2.5 height=3", "t").is_err());
    }

    #[test]
    fn image_names() {
        assert_eq!(image_name("left", 1.5), "left_1500000000.pgm");
        assert_eq!(parse_image_name("left_1500000000.pgm", "left"), Some(1_500_000_000));
        assert_eq!(parse_image_name("right_15.pgm", "left"), None);
    }
}
