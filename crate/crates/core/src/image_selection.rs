//! Road-marking line segments, vanishing-point voting and per-image utility.

use std::cmp::Ordering;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::edges::{canny_edges, CannyParams};
use crate::error::{Error, Result};
use crate::raster::{EdgeImage, GrayImage, Raster, RoadMask};

/// Votes above this angle (degrees) are discarded.
pub const VOTE_ANGLE_LIMIT: f64 = 3.0;
pub const VOTE_CAP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub s: (f64, f64),
    pub e: (f64, f64),
    pub c: (f64, f64),
    pub length: f64,
}

impl LineSegment {
    pub fn new(s: (f64, f64), e: (f64, f64)) -> Self {
        LineSegment {
            s,
            e,
            c: ((s.0 + e.0) / 2.0, (s.1 + e.1) / 2.0),
            length: (e.0 - s.0).hypot(e.1 - s.1),
        }
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.e.0 - self.s.0, self.e.1 - self.s.1)
    }

    /// Same segment with endpoints in a canonical order.
    fn canonical(&self) -> LineSegment {
        if (self.e.0, self.e.1) < (self.s.0, self.s.1) {
            LineSegment::new(self.e, self.s)
        } else {
            *self
        }
    }
}

/// Unsigned angle in degrees between the line through `c` and `p`, and the
/// segment's own line. `None` when `p` coincides with `c`.
pub fn angle_to_point(seg: &LineSegment, p: (f64, f64)) -> Option<f64> {
    let (dx, dy) = seg.direction();
    let (qx, qy) = (p.0 - seg.c.0, p.1 - seg.c.1);
    if qx == 0.0 && qy == 0.0 {
        return None;
    }
    let cross = dx * qy - dy * qx;
    let dot = dx * qx + dy * qy;
    Some(cross.abs().atan2(dot.abs()).to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub canny: CannyParams,
    pub min_length: f64,
    pub max_gap: usize,
    /// Minimum accumulator votes before a line is traced.
    pub hough_threshold: u32,
    /// Angular resolution of the accumulator, degrees.
    pub theta_step_deg: f64,
    pub min_mask_fraction: f64,
    pub seed: u64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            canny: CannyParams::default(),
            min_length: 20.0,
            max_gap: 3,
            hough_threshold: 12,
            theta_step_deg: 0.5,
            min_mask_fraction: 0.9,
            seed: 0,
        }
    }
}

/// Canny edges followed by progressive probabilistic Hough extraction. Each
/// traced segment is refit to its pixels by total least squares.
pub fn detect_segments(img: &GrayImage, mask: &RoadMask, params: &SegmentParams) -> Vec<LineSegment> {
    let edges = canny_edges(img, None, &params.canny);
    segments_from_edges(&edges, params)
        .into_iter()
        .filter(|s| mask_fraction(s, mask) >= params.min_mask_fraction)
        .collect()
}

fn mask_fraction(seg: &LineSegment, mask: &RoadMask) -> f64 {
    let n = seg.length.ceil().max(1.0) as usize;
    let mut inside = 0usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let u = (seg.s.0 + t * (seg.e.0 - seg.s.0)).round();
        let v = (seg.s.1 + t * (seg.e.1 - seg.s.1)).round();
        if u >= 0.0 && v >= 0.0 && (u as usize) < mask.width() && (v as usize) < mask.height() && mask.at(u as usize, v as usize) {
            inside += 1;
        }
    }
    inside as f64 / (n + 1) as f64
}

pub fn segments_from_edges(edges: &EdgeImage, params: &SegmentParams) -> Vec<LineSegment> {
    let (w, h) = edges.dims();
    let n_theta = (180.0 / params.theta_step_deg).round() as usize;
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..n_theta)
        .map(|i| {
            let t = (i as f64 * params.theta_step_deg).to_radians();
            (t.cos(), t.sin())
        })
        .unzip();
    let diag = ((w * w + h * h) as f64).sqrt().ceil() as i64;
    let n_rho = (2 * diag + 1) as usize;
    let mut acc = vec![0u32; n_theta * n_rho];
    let rho_bin = |x: f64, y: f64, t: usize| ((x * cos_t[t] + y * sin_t[t]).round() as i64 + diag) as usize;

    let mut points: Vec<(usize, usize)> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .filter(|&(u, v)| edges.at(u, v))
        .collect();
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    // 0 = unused edge pixel, 1 = voted, 2 = consumed by a segment
    let mut state = Raster::filled(w, h, 0u8);
    let is_edge = |u: i64, v: i64| u >= 0 && v >= 0 && (u as usize) < w && (v as usize) < h && edges.at(u as usize, v as usize);

    let mut out = Vec::new();
    for &(pu, pv) in &points {
        if state.at(pu, pv) == 2 {
            continue;
        }
        let (x, y) = (pu as f64, pv as f64);
        let mut best = (0u32, 0usize);
        for t in 0..n_theta {
            let a = &mut acc[t * n_rho + rho_bin(x, y, t)];
            *a += 1;
            if *a > best.0 {
                best = (*a, t);
            }
        }
        state.set(pu, pv, 1);
        if best.0 < params.hough_threshold {
            continue;
        }

        // walk both ways along the line direction, tolerating one pixel of drift
        let t = best.1;
        let (nx, ny) = (cos_t[t], sin_t[t]);
        let (dx, dy) = (-ny, nx);
        let mut traced = vec![(pu, pv)];
        for sign in [1.0, -1.0] {
            let mut gap = 0usize;
            let mut k = 1.0;
            loop {
                let (fx, fy) = (x + sign * k * dx, y + sign * k * dy);
                if fx < -0.5 || fy < -0.5 || fx > w as f64 - 0.5 || fy > h as f64 - 0.5 {
                    break;
                }
                let mut hit = None;
                for off in [0.0, 1.0, -1.0] {
                    let (qu, qv) = ((fx + off * nx).round() as i64, (fy + off * ny).round() as i64);
                    if is_edge(qu, qv) && state.at(qu as usize, qv as usize) != 2 {
                        hit = Some((qu as usize, qv as usize));
                        break;
                    }
                }
                match hit {
                    Some(q) => {
                        gap = 0;
                        if traced.last() != Some(&q) {
                            traced.push(q);
                        }
                    }
                    None => {
                        gap += 1;
                        if gap > params.max_gap {
                            break;
                        }
                    }
                }
                k += 1.0;
            }
        }
        traced.sort_unstable();
        traced.dedup();
        let Some(seg) = fit_segment(&traced) else {
            continue;
        };
        if seg.length < params.min_length {
            continue;
        }
        // consume every edge pixel hugging the segment, not only the traced ones,
        // so staircase edges on diagonals do not spawn duplicates
        let (u0, u1) = (seg.s.0.min(seg.e.0).floor() - 2.0, seg.s.0.max(seg.e.0).ceil() + 2.0);
        let (v0, v1) = (seg.s.1.min(seg.e.1).floor() - 2.0, seg.s.1.max(seg.e.1).ceil() + 2.0);
        for qv in (v0.max(0.0) as usize)..=(v1.min(h as f64 - 1.0) as usize) {
            for qu in (u0.max(0.0) as usize)..=(u1.min(w as f64 - 1.0) as usize) {
                if !edges.at(qu, qv) || state.at(qu, qv) == 2 || distance_to_segment(&seg, qu as f64, qv as f64) > 1.5 {
                    continue;
                }
                if state.at(qu, qv) == 1 {
                    for t in 0..n_theta {
                        acc[t * n_rho + rho_bin(qu as f64, qv as f64, t)] -= 1;
                    }
                }
                state.set(qu, qv, 2);
            }
        }
        out.push(seg);
    }
    out
}

fn distance_to_segment(seg: &LineSegment, x: f64, y: f64) -> f64 {
    let (dx, dy) = seg.direction();
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((x - seg.s.0) * dx + (y - seg.s.1) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x - seg.s.0 - t * dx).hypot(y - seg.s.1 - t * dy)
}

/// Total least squares line through pixels, clipped to their extent.
fn fit_segment(pts: &[(usize, usize)]) -> Option<LineSegment> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |a, &(u, v)| (a.0 + u as f64, a.1 + v as f64));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(u, v) in pts {
        let (a, b) = (u as f64 - mx, v as f64 - my);
        sxx += a * a;
        sxy += a * b;
        syy += b * b;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (dx, dy) = (theta.cos(), theta.sin());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v) in pts {
        let t = (u as f64 - mx) * dx + (v as f64 - my) * dy;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if hi - lo <= 0.0 {
        return None;
    }
    Some(LineSegment::new((mx + lo * dx, my + lo * dy), (mx + hi * dx, my + hi * dy)))
}

/// Vote of a segment for a point at angle `alpha_deg`.
pub fn vote_weight(alpha_deg: f64) -> f64 {
    if alpha_deg > VOTE_ANGLE_LIMIT {
        0.0
    } else if alpha_deg <= 0.0 {
        VOTE_CAP
    } else {
        (1.0 / alpha_deg).min(VOTE_CAP)
    }
}

/// Accumulator of votes over a window of candidate vanishing points.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingRegion {
    /// Pixel of accumulator cell `(0, 0)`.
    pub origin: (i64, i64),
    pub width: usize,
    pub height: usize,
    pub accumulator: Raster<f64>,
}

impl VotingRegion {
    /// Window of `width x height` cells centered on `center`.
    pub fn centered(center: (i64, i64), width: usize, height: usize) -> Self {
        let (width, height) = (width.max(1), height.max(1));
        VotingRegion {
            origin: (center.0 - width as i64 / 2, center.1 - height as i64 / 2),
            width,
            height,
            accumulator: Raster::filled(width, height, 0.0),
        }
    }

    pub fn center(&self) -> (i64, i64) {
        (self.origin.0 + self.width as i64 / 2, self.origin.1 + self.height as i64 / 2)
    }

    pub fn cell_pixel(&self, i: usize, j: usize) -> (i64, i64) {
        (self.origin.0 + i as i64, self.origin.1 + j as i64)
    }

    pub fn contains(&self, p: (i64, i64)) -> bool {
        let (i, j) = (p.0 - self.origin.0, p.1 - self.origin.1);
        i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingEstimate {
    pub p_van: (i64, i64),
    pub u_van: f64,
    pub region: VotingRegion,
}

/// Default voting window for an image: a quarter of the width by an eighth of
/// the height, centered on the horizon midpoint.
pub fn default_region(width: usize, height: usize, horizon: usize) -> VotingRegion {
    VotingRegion::centered(((width / 2) as i64, horizon as i64), width / 4, height / 8)
}

pub fn estimate_vanishing_point(segments: &[LineSegment], mut region: VotingRegion) -> VanishingEstimate {
    if segments.is_empty() {
        return VanishingEstimate {
            p_van: region.center(),
            u_van: 0.0,
            region,
        };
    }
    // fixed summation order makes the accumulator independent of input order
    let mut segs: Vec<LineSegment> = segments.iter().map(LineSegment::canonical).collect();
    segs.sort_by(|a, b| {
        [a.s.0, a.s.1, a.e.0, a.e.1]
            .partial_cmp(&[b.s.0, b.s.1, b.e.0, b.e.1])
            .unwrap_or(Ordering::Equal)
    });
    let (w, h) = (region.width, region.height);
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for j in 0..h {
        for i in 0..w {
            let (pu, pv) = region.cell_pixel(i, j);
            let mut total = 0.0;
            for s in &segs {
                if let Some(a) = angle_to_point(s, (pu as f64, pv as f64)) {
                    total += vote_weight(a);
                }
            }
            region.accumulator.set(i, j, total);
            if total > best.0 {
                best = (total, i, j);
            }
        }
    }
    VanishingEstimate {
        p_van: region.cell_pixel(best.1, best.2),
        u_van: best.0,
        region,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageUtility {
    pub frame_id: usize,
    pub timestamp: f64,
    pub n_segments: usize,
    pub u_van: f64,
    pub u_i: f64,
}

/// Utility score of an image: summed per-segment alignment with the
/// vanishing point, scaled by the vote score.
pub fn image_utility(frame_id: usize, timestamp: f64, segments: &[LineSegment], van: &VanishingEstimate) -> ImageUtility {
    let p = (van.p_van.0 as f64, van.p_van.1 as f64);
    let alignment: f64 = segments
        .iter()
        .filter_map(|s| angle_to_point(s, p))
        .map(|a| if a <= 0.0 { 1.0 } else { (1.0 / a).min(1.0) })
        .sum();
    ImageUtility {
        frame_id,
        timestamp,
        n_segments: segments.len(),
        u_van: van.u_van,
        u_i: alignment * van.u_van,
    }
}

/// Frame ids of the `k` highest utilities, best first; ties go to the earlier timestamp.
pub fn select_informative(utilities: &[ImageUtility], k: usize) -> Vec<usize> {
    let mut order: Vec<&ImageUtility> = utilities.iter().collect();
    order.sort_by(|a, b| {
        b.u_i
            .partial_cmp(&a.u_i)
            .unwrap_or(Ordering::Equal)
            .then(a.timestamp.partial_cmp(&b.timestamp).unwrap_or(Ordering::Equal))
            .then(a.frame_id.cmp(&b.frame_id))
    });
    if order.len() < k {
        log::warn!("only {} frames available, {} requested", order.len(), k);
    }
    order.iter().take(k).map(|u| u.frame_id).collect()
}

pub const UTILITY_HEADER: [&str; 6] = ["frame_id", "timestamp_s", "n_segments", "u_van", "u_i", "selected"];

pub fn encode_utility_csv(utilities: &[ImageUtility], selected: &[usize]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::parse("utility csv", e.to_string());
    w.write_record(UTILITY_HEADER).map_err(csv_err)?;
    for u in utilities {
        w.write_record([
            u.frame_id.to_string(),
            format!("{:.6}", u.timestamp),
            u.n_segments.to_string(),
            format!("{:.6}", u.u_van),
            format!("{:.6}", u.u_i),
            (selected.contains(&u.frame_id) as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::parse("utility csv", e.to_string()))
}

pub fn write_utility_csv(path: &Path, utilities: &[ImageUtility], selected: &[usize]) -> Result<()> {
    crate::io::write_bytes(path, &encode_utility_csv(utilities, selected)?)
}

/// Grayscale frame with segments in green, the voting region outline in red
/// and the vanishing point as a red dot.
pub fn overlay(img: &GrayImage, segments: &[LineSegment], van: &VanishingEstimate) -> Raster<[u8; 3]> {
    let mut out = img.map(|&g| [g, g, g]);
    let (w, h) = (out.width() as i64, out.height() as i64);
    let put = |out: &mut Raster<[u8; 3]>, u: i64, v: i64, c: [u8; 3]| {
        if u >= 0 && v >= 0 && u < w && v < h {
            out.set(u as usize, v as usize, c);
        }
    };
    const GREEN: [u8; 3] = [0, 255, 0];
    const RED: [u8; 3] = [255, 0, 0];
    for s in segments {
        let n = s.length.ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            put(
                &mut out,
                (s.s.0 + t * (s.e.0 - s.s.0)).round() as i64,
                (s.s.1 + t * (s.e.1 - s.s.1)).round() as i64,
                GREEN,
            );
        }
    }
    let r = &van.region;
    let (x0, y0) = r.origin;
    let (x1, y1) = (x0 + r.width as i64 - 1, y0 + r.height as i64 - 1);
    for x in x0..=x1 {
        put(&mut out, x, y0, RED);
        put(&mut out, x, y1, RED);
    }
    for y in y0..=y1 {
        put(&mut out, x0, y, RED);
        put(&mut out, x1, y, RED);
    }
    for dv in -1..=1 {
        for du in -1..=1 {
            put(&mut out, van.p_van.0 + du, van.p_van.1 + dv, RED);
        }
    }
    out
}
