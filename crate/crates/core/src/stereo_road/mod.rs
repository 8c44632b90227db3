//! Road detection from rectified stereo: disparity, v-disparity line fit, road
//! mask, horizon and road plane.

mod disparity;

pub use disparity::{
    compute_disparity, compute_disparity_right_reference, DisparityImage, StereoParams, DISPARITY_SCALE,
};

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Vec3};
use crate::raster::{Raster, RoadMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadParams {
    pub line_iterations: usize,
    /// Inlier distance along the disparity axis, bins.
    pub line_threshold: f64,
    /// Minimum fraction of image rows that must hold inlier cells.
    pub min_inlier_rows: f64,
    /// Road-mask tolerance around the fitted line, disparity px.
    pub tau_road: f64,
    pub plane_iterations: usize,
    /// Plane inlier distance, m.
    pub tau_plane: f64,
    pub min_plane_points: usize,
    pub min_plane_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RoadParams {
    fn default() -> Self {
        RoadParams {
            line_iterations: 500,
            line_threshold: 1.0,
            min_inlier_rows: 0.3,
            tau_road: 2.0,
            plane_iterations: 300,
            tau_plane: 0.05,
            min_plane_points: 500,
            min_plane_inlier_ratio: 0.5,
            seed: 0,
        }
    }
}

/// Row histograms of rounded disparity; cell `(v, k)` counts pixels of row `v`
/// with disparity `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VDisparity {
    cells: Raster<u32>,
}

impl VDisparity {
    pub fn rows(&self) -> usize {
        self.cells.height()
    }

    pub fn cols(&self) -> usize {
        self.cells.width()
    }

    pub fn count(&self, v: usize, k: usize) -> u32 {
        self.cells.at(k, v)
    }

    pub fn cells(&self) -> &Raster<u32> {
        &self.cells
    }

    pub fn total(&self) -> u64 {
        self.cells.data().iter().map(|&c| c as u64).sum()
    }

    pub fn row_sum(&self, v: usize) -> u64 {
        self.cells.row(v).iter().map(|&c| c as u64).sum()
    }

    /// Builds directly from counts laid out as `(disparity, row)`.
    pub fn from_cells(cells: Raster<u32>) -> Self {
        VDisparity { cells }
    }

    /// Nonzero cells as `(disparity bin, row, count)`.
    fn nonzero(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for v in 0..self.rows() {
            for (k, &c) in self.cells.row(v).iter().enumerate() {
                if c > 0 {
                    out.push((k as f64, v as f64, c as f64));
                }
            }
        }
        out
    }
}

pub fn build_v_disparity(d: &DisparityImage) -> VDisparity {
    let mut max_bin = 0usize;
    for &raw in d.raw().data() {
        if raw != 0 {
            max_bin = max_bin.max(bin_of(raw as f64 / DISPARITY_SCALE));
        }
    }
    let mut cells = Raster::filled(max_bin + 1, d.height(), 0u32);
    for v in 0..d.height() {
        for u in 0..d.width() {
            if let Some(x) = d.get(u, v) {
                *cells.get_mut(bin_of(x), v) += 1;
            }
        }
    }
    VDisparity { cells }
}

fn bin_of(d: f64) -> usize {
    d.round().max(0.0) as usize
}

/// Ground line `v = intercept + slope * d` in v-disparity space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadLine {
    pub slope: f64,
    pub intercept: f64,
    /// Summed count of inlier cells.
    pub inliers: u64,
}

impl RoadLine {
    pub fn disparity_at(&self, v: f64) -> f64 {
        (v - self.intercept) / self.slope
    }

    pub fn row_at(&self, d: f64) -> f64 {
        self.intercept + self.slope * d
    }
}

/// Count-weighted RANSAC line fit, refined by weighted least squares of
/// disparity on row over the inliers.
pub fn fit_road_line(vd: &VDisparity, params: &RoadParams) -> Result<RoadLine> {
    let cells = vd.nonzero();
    let min_rows = (params.min_inlier_rows * vd.rows() as f64).ceil() as usize;
    if cells.len() < 2 {
        return Err(Error::NoRoad("v-disparity has fewer than two occupied cells".into()));
    }
    let mut cumulative = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for c in &cells {
        acc += c.2;
        cumulative.push(acc);
    }
    let draw = |rng: &mut ChaCha8Rng| {
        let x = rng.gen::<f64>() * acc;
        cumulative.partition_point(|&c| c <= x).min(cells.len() - 1)
    };

    // inliers measured along the disparity axis for line d = a + b v
    let score = |a: f64, b: f64| -> (f64, usize) {
        let mut s = 0.0;
        let mut rows = 0usize;
        let mut last_row = -1.0;
        for &(d, v, c) in &cells {
            if (d - (a + b * v)).abs() <= params.line_threshold {
                s += c;
                if v != last_row {
                    rows += 1;
                    last_row = v;
                }
            }
        }
        (s, rows)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(f64, f64, f64)> = None;
    for _ in 0..params.line_iterations {
        let (i, j) = (draw(&mut rng), draw(&mut rng));
        let ((d1, v1, _), (d2, v2, _)) = (cells[i], cells[j]);
        if v1 == v2 || d1 == d2 {
            continue;
        }
        let b = (d2 - d1) / (v2 - v1);
        if b <= 0.0 {
            continue;
        }
        let a = d1 - b * v1;
        let (s, rows) = score(a, b);
        if rows < min_rows {
            continue;
        }
        if best.map_or(true, |(bs, _, _)| s > bs) {
            best = Some((s, a, b));
        }
    }
    let Some((_, a0, b0)) = best else {
        return Err(Error::NoRoad("no line with positive slope and enough support".into()));
    };

    // weighted least squares d = a + b v on inliers
    let (mut sw, mut sv, mut sd, mut svv, mut svd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(d, v, c) in &cells {
        if (d - (a0 + b0 * v)).abs() <= params.line_threshold {
            sw += c;
            sv += c * v;
            sd += c * d;
            svv += c * v * v;
            svd += c * v * d;
        }
    }
    let det = sw * svv - sv * sv;
    let (a, b) = if det.abs() > 1e-12 {
        let b = (sw * svd - sv * sd) / det;
        ((sd - b * sv) / sw, b)
    } else {
        (a0, b0)
    };
    let (a, b) = if b > 0.0 { (a, b) } else { (a0, b0) };
    let (s, _) = score(a, b);
    Ok(RoadLine {
        slope: 1.0 / b,
        intercept: -a / b,
        inliers: s as u64,
    })
}

/// Row where the line reaches zero disparity, clamped to the image.
pub fn horizon_row(line: &RoadLine, height: usize) -> usize {
    let h = line.intercept.round();
    if !h.is_finite() || h <= 0.0 {
        0
    } else {
        (h as usize).min(height.saturating_sub(1))
    }
}

pub fn extract_road_mask(d: &DisparityImage, line: &RoadLine, tau_road: f64) -> RoadMask {
    let horizon = horizon_row(line, d.height());
    RoadMask::from_fn(d.width(), d.height(), |u, v| {
        v > horizon
            && d
                .get(u, v)
                .is_some_and(|x| (x - line.disparity_at(v as f64)).abs() <= tau_road)
    })
}

/// Plane `normal . p + d = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub normal: Vec3,
    pub d: f64,
}

impl PlaneModel {
    /// Normalizes `(normal, d)` jointly.
    pub fn new(normal: Vec3, d: f64) -> Self {
        let n = normal.norm();
        PlaneModel {
            normal: normal / n,
            d: d / n,
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.d
    }

    /// Flips the sign so the normal has `n_y < 0` (up in a camera frame).
    pub fn oriented_up(self) -> Self {
        if self.normal.y > 0.0 {
            PlaneModel {
                normal: -self.normal,
                d: -self.d,
            }
        } else {
            self
        }
    }

    /// Least-squares plane through points via PCA.
    pub fn fit(points: &[Vec3]) -> Option<PlaneModel> {
        if points.len() < 3 {
            return None;
        }
        let n = points.len() as f64;
        let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let q = p - mean;
            cov += q * q.transpose();
        }
        let eig = SymmetricEigen::new(cov / n);
        let (mut imin, mut imid) = (0, 1);
        for i in 0..3 {
            if eig.eigenvalues[i] < eig.eigenvalues[imin] {
                imin = i;
            }
        }
        for i in 0..3 {
            if i != imin && (imid == imin || eig.eigenvalues[i] < eig.eigenvalues[imid]) {
                imid = i;
            }
        }
        // collinear points do not define a plane
        if eig.eigenvalues[imid] <= 1e-12 * eig.eigenvalues.abs().max().max(1e-300) {
            return None;
        }
        let normal: Vec3 = eig.eigenvectors.column(imin).into_owned();
        Some(PlaneModel::new(normal, -normal.normalize().dot(&mean) * normal.norm()))
    }
}

/// RANSAC plane over back-projected road pixels with a PCA refit on the inliers.
pub fn fit_road_plane(
    d: &DisparityImage,
    mask: &RoadMask,
    k: &CameraIntrinsics,
    params: &RoadParams,
) -> Result<PlaneModel> {
    let mut points = Vec::new();
    for v in 0..d.height() {
        for u in 0..d.width() {
            if !mask.at(u, v) {
                continue;
            }
            if let Some(p) = d.get(u, v).and_then(|x| k.disparity_to_point(u as f64, v as f64, x)) {
                points.push(p);
            }
        }
    }
    fit_plane_ransac(&points, params)
}

pub fn fit_plane_ransac(points: &[Vec3], params: &RoadParams) -> Result<PlaneModel> {
    if points.len() < params.min_plane_points.max(3) {
        return Err(Error::NoPlane(format!(
            "{} road points, need {}",
            points.len(),
            params.min_plane_points
        )));
    }
    let count = |m: &PlaneModel| points.iter().filter(|p| m.signed_distance(p).abs() <= params.tau_plane).count();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x706c_616e_65);
    let mut best: Option<(usize, PlaneModel)> = None;
    for _ in 0..params.plane_iterations {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let l = rng.gen_range(0..points.len());
        let n = (points[j] - points[i]).cross(&(points[l] - points[i]));
        if n.norm() < 1e-9 {
            continue;
        }
        let m = PlaneModel::new(n, -n.dot(&points[i]));
        let c = count(&m);
        if best.map_or(true, |(bc, _)| c > bc) {
            best = Some((c, m));
        }
    }
    let Some((_, coarse)) = best else {
        return Err(Error::NoPlane("degenerate point set".into()));
    };
    let inliers: Vec<Vec3> = points
        .iter()
        .filter(|p| coarse.signed_distance(p).abs() <= params.tau_plane)
        .copied()
        .collect();
    let plane = PlaneModel::fit(&inliers).unwrap_or(coarse).oriented_up();
    let support = count(&plane);
    if (support as f64) < params.min_plane_inlier_ratio * points.len() as f64 {
        return Err(Error::NoPlane(format!(
            "only {support} of {} points within {} m of the plane",
            points.len(),
            params.tau_plane
        )));
    }
    Ok(plane)
}

/// Everything road detection yields for one stereo frame.
#[derive(Debug, Clone)]
pub struct RoadDetection {
    pub line: RoadLine,
    pub horizon: usize,
    pub mask: RoadMask,
    pub plane: PlaneModel,
}

pub fn detect_road(d: &DisparityImage, k: &CameraIntrinsics, params: &RoadParams) -> Result<RoadDetection> {
    let line = fit_road_line(&build_v_disparity(d), params)?;
    let mask = extract_road_mask(d, &line, params.tau_road);
    let plane = fit_road_plane(d, &mask, k, params)?;
    Ok(RoadDetection {
        line,
        horizon: horizon_row(&line, d.height()),
        mask,
        plane,
    })
}
