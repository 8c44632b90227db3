use crate::raster::{EdgeImage, Raster};

/// Per-pixel Euclidean distance to the nearest edge pixel, px.
pub type DistanceTransformImage = Raster<f64>;

/// Exact Euclidean distance transform (lower envelope of parabolas, applied to
/// rows then columns). Squared distances stay integral, so the result equals a
/// brute-force nearest-edge search bit for bit. Without edges every cell is `d_sat`.
pub fn distance_transform(e: &EdgeImage, d_sat: f64) -> DistanceTransformImage {
    let (w, h) = e.dims();
    if e.count() == 0 {
        return Raster::filled(w, h, d_sat);
    }
    const INF: i64 = i64::MAX / 4;
    let mut sq = vec![INF; w * h];
    for (s, &edge) in sq.iter_mut().zip(e.data()) {
        if edge {
            *s = 0;
        }
    }
    let n = w.max(h);
    let (mut f, mut out) = (vec![0i64; n], vec![0i64; n]);
    let (mut vtx, mut z) = (vec![0usize; n], vec![0f64; n + 1]);

    for v in 0..h {
        f[..w].copy_from_slice(&sq[v * w..(v + 1) * w]);
        envelope_1d(&f[..w], &mut out[..w], &mut vtx, &mut z);
        sq[v * w..(v + 1) * w].copy_from_slice(&out[..w]);
    }
    for u in 0..w {
        for v in 0..h {
            f[v] = sq[v * w + u];
        }
        envelope_1d(&f[..h], &mut out[..h], &mut vtx, &mut z);
        for v in 0..h {
            sq[v * w + u] = out[v];
        }
    }
    Raster::from_vec(w, h, sq.into_iter().map(|d| (d as f64).sqrt()).collect())
}

/// `out[q] = min_p (q - p)^2 + f[p]`; entries of `f` at or above `i64::MAX / 4` are empty.
fn envelope_1d(f: &[i64], out: &mut [i64], vtx: &mut [usize], z: &mut [f64]) {
    const INF: i64 = i64::MAX / 4;
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q] < INF).collect();
    if sites.is_empty() {
        out.fill(INF);
        return;
    }
    let mut k = 0usize;
    vtx[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| -> f64 {
        ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64 / (2 * q as i64 - 2 * p as i64) as f64
    };
    for &q in &sites[1..] {
        let mut s = inter(q, vtx[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, vtx[k]);
        }
        k += 1;
        vtx[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - vtx[k] as i64;
        *o = d * d + f[vtx[k]];
    }
}

/// Sum of distances under the LiDAR edge pixels, divided by their number.
/// Without LiDAR edges the cost is `d_sat`.
pub fn edge_cost(lidar_edges: &EdgeImage, dt: &DistanceTransformImage, valid: &EdgeImage, d_sat: f64) -> f64 {
    assert_eq!(lidar_edges.dims(), dt.dims(), "edge image and distance transform differ in size");
    assert_eq!(lidar_edges.dims(), valid.dims(), "edge image and validity mask differ in size");
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&e, &ok), &d) in lidar_edges.data().iter().zip(valid.data()).zip(dt.data()) {
        if e && ok {
            sum += d;
            n += 1;
        }
    }
    if n == 0 {
        d_sat
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_edges_is_zero() {
        let dt = distance_transform(&EdgeImage::filled(7, 5, true), 99.0);
        assert!(dt.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_pixel_is_euclidean() {
        let mut e = EdgeImage::filled(10, 10, false);
        e.set(0, 0, true);
        let dt = distance_transform(&e, 99.0);
        assert_eq!(dt.at(3, 4), 5.0);
        assert_eq!(dt.at(0, 0), 0.0);
    }

    #[test]
    fn no_edges_saturates() {
        let dt = distance_transform(&EdgeImage::filled(4, 3, false), 5.0);
        assert!(dt.data().iter().all(|&d| d == 5.0));
    }

    #[test]
    fn shifted_edge_costs_its_offset() {
        let stereo = EdgeImage::from_fn(40, 30, |u, _| u == 10);
        let lidar = EdgeImage::from_fn(40, 30, |u, _| u == 15);
        let valid = EdgeImage::filled(40, 30, true);
        let dt = distance_transform(&stereo, 50.0);
        assert_eq!(edge_cost(&stereo, &dt, &valid, 50.0), 0.0);
        assert_eq!(edge_cost(&lidar, &dt, &valid, 50.0), 5.0);
        let none = EdgeImage::filled(40, 30, false);
        assert_eq!(edge_cost(&none, &dt, &valid, 50.0), 50.0);
    }
}
