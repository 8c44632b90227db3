use crate::raster::{GrayImage, Raster};

/// Fixed-point scale of stored disparities.
pub const DISPARITY_SCALE: f64 = 16.0;

/// Disparities in 1/16 px; `0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityImage {
    raw: Raster<u16>,
}

impl DisparityImage {
    pub fn new(width: usize, height: usize) -> Self {
        DisparityImage {
            raw: Raster::filled(width, height, 0),
        }
    }

    /// Wraps fixed-point values as read from a 16-bit PGM.
    pub fn from_raw(raw: Raster<u16>) -> Self {
        DisparityImage { raw }
    }

    /// Builds from pixel disparities; nonpositive or non-finite values become invalid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        DisparityImage {
            raw: Raster::from_fn(width, height, |u, v| encode(f(u, v))),
        }
    }

    pub fn raw(&self) -> &Raster<u16> {
        &self.raw
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    /// Disparity in pixels, `None` if invalid.
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        match self.raw.at(u, v) {
            0 => None,
            d => Some(d as f64 / DISPARITY_SCALE),
        }
    }

    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        self.raw.set(u, v, encode(d));
    }

    pub fn valid_count(&self) -> usize {
        self.raw.data().iter().filter(|&&d| d != 0).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        DisparityImage {
            raw: self.raw.flip_horizontal(),
        }
    }
}

fn encode(d: f64) -> u16 {
    if !(d > 0.0) || !d.is_finite() {
        return 0;
    }
    (d * DISPARITY_SCALE).round().clamp(1.0, u16::MAX as f64) as u16
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoParams {
    /// Odd SAD window side.
    pub window: usize,
    pub max_disp: usize,
    /// Left-right consistency tolerance, px.
    pub lr_tolerance: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        StereoParams {
            window: 9,
            max_disp: 128,
            lr_tolerance: 1.0,
        }
    }
}

/// SAD block matching with a left-right consistency check, left image as reference.
///
/// Matching costs are box-filtered per disparity with an integral image, so the
/// runtime is `O(width * height * max_disp)` regardless of the window size.
/// Integer minima are refined with a parabola fit before quantization.
pub fn compute_disparity(left: &GrayImage, right: &GrayImage, params: &StereoParams) -> DisparityImage {
    assert_eq!(left.dims(), right.dims(), "stereo pair size mismatch");
    let (w, h) = left.dims();
    let r = params.window / 2;
    let nd = params.max_disp.min(w.saturating_sub(1)) + 1;
    let mut out = DisparityImage::new(w, h);
    if w <= 2 * r || h <= 2 * r {
        return out;
    }

    // cost volume, u16 is enough for 8-bit SAD over windows up to 16x16
    let mut volume = vec![u16::MAX; w * h * nd];
    let mut ad = vec![0u32; w * h];
    let mut integral = vec![0u32; (w + 1) * (h + 1)];
    for d in 0..nd {
        for v in 0..h {
            let (lrow, rrow) = (left.row(v), right.row(v));
            for u in 0..w {
                ad[v * w + u] = if u >= d {
                    (lrow[u] as i32 - rrow[u - d] as i32).unsigned_abs()
                } else {
                    0
                };
            }
        }
        for v in 0..h {
            let mut run = 0u32;
            for u in 0..w {
                run += ad[v * w + u];
                integral[(v + 1) * (w + 1) + u + 1] = integral[v * (w + 1) + u + 1] + run;
            }
        }
        for v in r..h - r {
            for u in (r + d).max(r)..w - r {
                let (u0, u1, v0, v1) = (u - r, u + r + 1, v - r, v + r + 1);
                let s = integral[v1 * (w + 1) + u1] + integral[v0 * (w + 1) + u0]
                    - integral[v0 * (w + 1) + u1]
                    - integral[v1 * (w + 1) + u0];
                volume[(v * w + u) * nd + d] = s.min(u16::MAX as u32 - 1) as u16;
            }
        }
    }

    let best_left = |u: usize, v: usize| -> Option<(usize, f64)> {
        let c = &volume[(v * w + u) * nd..(v * w + u + 1) * nd];
        let mut best = 0usize;
        for d in 1..nd {
            if c[d] < c[best] {
                best = d;
            }
        }
        if c[best] == u16::MAX {
            return None;
        }
        let mut sub = best as f64;
        if best > 0 && best + 1 < nd && c[best - 1] != u16::MAX && c[best + 1] != u16::MAX {
            let (a, b, cc) = (c[best - 1] as f64, c[best] as f64, c[best + 1] as f64);
            let denom = a - 2.0 * b + cc;
            if denom > 0.0 {
                sub += (0.5 * (a - cc) / denom).clamp(-0.5, 0.5);
            }
        }
        Some((best, sub))
    };

    // right-referenced costs are C_R(u, d) = C_L(u + d, d)
    let best_right = |u: usize, v: usize| -> Option<usize> {
        let mut best: Option<(usize, u16)> = None;
        for d in 0..nd {
            if u + d >= w {
                break;
            }
            let c = volume[(v * w + u + d) * nd + d];
            if c == u16::MAX {
                continue;
            }
            if best.map_or(true, |(_, bc)| c < bc) {
                best = Some((d, c));
            }
        }
        best.map(|(d, _)| d)
    };

    for v in r..h - r {
        for u in r..w - r {
            let Some((d, sub)) = best_left(u, v) else {
                continue;
            };
            if d == 0 {
                continue;
            }
            let Some(dr) = best_right(u - d, v) else {
                continue;
            };
            if (dr as f64 - d as f64).abs() <= params.lr_tolerance {
                out.set(u, v, sub);
            }
        }
    }
    out
}

/// Disparity referenced to the right image of a rectified pair.
///
/// Mirroring both images turns the right view into a left reference view.
pub fn compute_disparity_right_reference(
    left: &GrayImage,
    right: &GrayImage,
    params: &StereoParams,
) -> DisparityImage {
    compute_disparity(&right.flip_horizontal(), &left.flip_horizontal(), params).flip_horizontal()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> GrayImage {
        // deterministic pseudo-random texture
        GrayImage::from_fn(w, h, |u, v| {
            let mut x = (u as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (v as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
            x ^= x >> 29;
            x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            x ^= x >> 32;
            (x & 0xFF) as u8
        })
    }

    #[test]
    fn identical_images_have_no_positive_disparity() {
        let img = texture(64, 32);
        let d = compute_disparity(&img, &img, &StereoParams::default());
        // zero disparity is the invalid sentinel, so nothing may be reported
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn pure_shift_is_recovered() {
        let left = texture(96, 40);
        let right = GrayImage::from_fn(96, 40, |u, v| left.at((u + 8).min(95), v));
        let d = compute_disparity(&left, &right, &StereoParams::default());
        assert!(d.valid_count() > 1000);
        // columns whose window has a true correspondence in both views
        for v in 0..40 {
            for u in 16..80 {
                if let Some(x) = d.get(u, v) {
                    assert!((x - 8.0).abs() <= 0.5, "({u},{v}) -> {x}");
                }
            }
        }
    }

    #[test]
    fn right_reference_shift() {
        let left = texture(96, 40);
        let right = GrayImage::from_fn(96, 40, |u, v| left.at((u + 8).min(95), v));
        let d = compute_disparity_right_reference(&left, &right, &StereoParams::default());
        assert!(d.valid_count() > 1000);
        // columns whose window has a true correspondence in both views
        for v in 0..40 {
            for u in 16..80 {
                if let Some(x) = d.get(u, v) {
                    assert!((x - 8.0).abs() <= 0.5);
                }
            }
        }
    }

    #[test]
    fn fixed_point_encoding() {
        let mut d = DisparityImage::new(2, 1);
        d.set(0, 0, 10.25);
        d.set(1, 0, -1.0);
        assert_eq!(d.raw().at(0, 0), 164);
        assert_eq!(d.get(0, 0), Some(10.25));
        assert_eq!(d.get(1, 0), None);
    }
}
