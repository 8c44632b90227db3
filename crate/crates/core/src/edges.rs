//! Canny edge detection.

use crate::raster::{BinaryImage, EdgeImage, GrayImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Hysteresis thresholds on the Sobel gradient magnitude of the 8-bit image.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            low: 40.0,
            high: 100.0,
        }
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Separable convolution with replicated borders.
pub fn gaussian_blur(img: &Raster<f32>, sigma: f64) -> Raster<f32> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.clone();
    }
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let clamp = |x: isize, n: usize| x.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0f32; w * h];
    for v in 0..h {
        let row = img.row(v);
        for u in 0..w {
            let mut acc = 0f32;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * row[clamp(u as isize + j as isize - r, w)];
            }
            tmp[v * w + u] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for v in 0..h {
        for (j, kv) in k.iter().enumerate() {
            let src = clamp(v as isize + j as isize - r, h) * w;
            let dst = &mut out[v * w..(v + 1) * w];
            for (d, s) in dst.iter_mut().zip(&tmp[src..src + w]) {
                *d += kv * s;
            }
        }
    }
    Raster::from_vec(w, h, out)
}

/// Sobel gradients `(gx, gy)` with replicated borders.
pub fn sobel(img: &Raster<f32>) -> (Raster<f32>, Raster<f32>) {
    let (w, h) = img.dims();
    let mut gx = Raster::filled(w, h, 0f32);
    let mut gy = Raster::filled(w, h, 0f32);
    if w == 0 || h == 0 {
        return (gx, gy);
    }
    for v in 0..h {
        let vm = v.saturating_sub(1);
        let vp = (v + 1).min(h - 1);
        for u in 0..w {
            let um = u.saturating_sub(1);
            let up = (u + 1).min(w - 1);
            let p = |x: usize, y: usize| img.at(x, y);
            let dx = (p(up, vm) + 2.0 * p(up, v) + p(up, vp)) - (p(um, vm) + 2.0 * p(um, v) + p(um, vp));
            let dy = (p(um, vp) + 2.0 * p(u, vp) + p(up, vp)) - (p(um, vm) + 2.0 * p(u, vm) + p(up, vm));
            gx.set(u, v, dx);
            gy.set(u, v, dy);
        }
    }
    (gx, gy)
}

/// Canny edges: Gaussian smoothing, Sobel gradient, non-maximum suppression and
/// hysteresis. Pixels outside `mask` (when given) are cleared.
pub fn canny_edges(img: &GrayImage, mask: Option<&BinaryImage>, params: &CannyParams) -> EdgeImage {
    let f = img.map(|&x| x as f32);
    canny_f32(&f, mask, params)
}

pub fn canny_f32(img: &Raster<f32>, mask: Option<&BinaryImage>, params: &CannyParams) -> EdgeImage {
    let (w, h) = img.dims();
    let smooth = gaussian_blur(img, params.sigma);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f32> = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();

    const STRONG: u8 = 2;
    const WEAK: u8 = 1;
    let mut state = vec![0u8; w * h];
    let (low, high) = (params.low as f32, params.high as f32);
    // tan(22.5deg), tan(67.5deg)
    let (t1, t2) = (0.414_213_56f32, 2.414_213_6f32);
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let i = v * w + u;
            let m = mag[i];
            if m < low {
                continue;
            }
            let (dx, dy) = (gx.data()[i], gy.data()[i]);
            let (ax, ay) = (dx.abs(), dy.abs());
            // neighbors along the gradient direction
            let (a, b) = if ay <= ax * t1 {
                (i - 1, i + 1)
            } else if ay >= ax * t2 {
                (i - w, i + w)
            } else if (dx > 0.0) == (dy > 0.0) {
                (i - w - 1, i + w + 1)
            } else {
                (i - w + 1, i + w - 1)
            };
            // asymmetric comparison keeps exactly one pixel on plateaus
            if m > mag[a] && m >= mag[b] {
                state[i] = if m >= high { STRONG } else { WEAK };
            }
        }
    }

    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..w * h {
        if state[i] == STRONG && !edges[i] {
            edges[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (ju, jv) = ((j % w) as isize, (j / w) as isize);
                for dv in -1..=1isize {
                    for du in -1..=1isize {
                        let (x, y) = (ju + du, jv + dv);
                        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                            continue;
                        }
                        let k = y as usize * w + x as usize;
                        if !edges[k] && state[k] != 0 {
                            edges[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    if let Some(m) = mask {
        assert_eq!(m.dims(), (w, h), "mask size mismatch");
        for (e, &keep) in edges.iter_mut().zip(m.data()) {
            *e &= keep;
        }
    }
    Raster::from_vec(w, h, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayImage::filled(40, 30, 123);
        assert_eq!(canny_edges(&img, None, &CannyParams::default()).count(), 0);
    }

    #[test]
    fn vertical_step_gives_one_pixel_wide_line() {
        let img = GrayImage::from_fn(40, 30, |u, _| if u < 20 { 50 } else { 150 });
        let e = canny_edges(&img, None, &CannyParams::default());
        for v in 1..29 {
            let cols: Vec<usize> = (0..40).filter(|&u| e.at(u, v)).collect();
            assert_eq!(cols.len(), 1, "row {v}: {cols:?}");
            assert!(cols[0] == 19 || cols[0] == 20);
        }
    }

    #[test]
    fn mask_clears_edges() {
        let img = GrayImage::from_fn(40, 30, |u, _| if u < 20 { 50 } else { 150 });
        let mask = BinaryImage::from_fn(40, 30, |_, v| v >= 15);
        let e = canny_edges(&img, Some(&mask), &CannyParams::default());
        assert!(e.count() > 0);
        assert!((0..15).all(|v| (0..40).all(|u| !e.at(u, v))));
    }
}
