use std::collections::{HashMap, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{IntensityCloud, Vec3};
use crate::stereo_road::PlaneModel;

type CellKey = (i64, i64, i64);

/// Uniform-grid spatial index for k-nearest-neighbor queries.
pub struct GridIndex<'a> {
    points: &'a [Vec3],
    cell: f64,
    order: Vec<u32>,
    cells: HashMap<CellKey, (usize, usize)>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let key = |p: &Vec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
        let mut keyed: Vec<(CellKey, u32)> = points.iter().enumerate().map(|(i, p)| (key(p), i as u32)).collect();
        keyed.sort_unstable();
        let mut cells = HashMap::new();
        let mut start = 0;
        for i in 1..=keyed.len() {
            if i == keyed.len() || keyed[i].0 != keyed[start].0 {
                cells.insert(keyed[start].0, (start, i));
                start = i;
            }
        }
        GridIndex {
            points,
            cell,
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
        }
    }

    fn key(&self, p: &Vec3) -> CellKey {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    /// Indices of the `k` nearest points to `q` (including `q` itself if indexed),
    /// nearest first; ties resolved by index.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = self.key(q);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
        let mut r: i64 = 0;
        loop {
            // visit the shell of cells at Chebyshev distance r
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(&(s, e)) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            for &i in &self.order[s..e] {
                                let i = i as usize;
                                best.push(((self.points[i] - q).norm_squared(), i));
                            }
                        }
                    }
                }
            }
            if best.len() >= k {
                best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                // everything outside the searched cube is at least r * cell away
                let reach = r as f64 * self.cell;
                if best[k - 1].0 <= reach * reach {
                    break;
                }
            }
            r += 1;
            if r > 1_000_000 {
                break;
            }
        }
        best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        best.truncate(k);
        best.into_iter().map(|(_, i)| i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionParams {
    pub k: usize,
    pub theta_smooth_deg: f64,
    /// Seed distance to the road plane, m.
    pub tau_seed: f64,
}

impl Default for RegionParams {
    fn default() -> Self {
        RegionParams {
            k: 12,
            theta_smooth_deg: 10.0,
            tau_seed: 0.1,
        }
    }
}

/// Unit normals from PCA over each point's k nearest neighbors; zero where
/// fewer than three neighbors exist.
pub fn estimate_normals(points: &[Vec3], index: &GridIndex, k: usize) -> Vec<Vec3> {
    points.iter().map(|p| pca_normal(points, &index.knn(p, k))).collect()
}

/// Region growing over the k-NN graph. Seeds lie within `tau_seed` of the
/// plane; a point joins a region when its normal is within `theta_smooth` of
/// the plane normal. Returns the indices of the largest region, ascending.
pub fn segment_road_indices(points: &[Vec3], plane: &PlaneModel, params: &RegionParams) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::NoRoadPoints("empty cloud".into()));
    }
    let spacing = mean_spacing(points);
    let index = GridIndex::new(points, spacing.max(1e-3) * 2.0);
    let neighbors: Vec<Vec<usize>> = points.iter().map(|p| index.knn(p, params.k + 1)).collect();
    let cos_t = params.theta_smooth_deg.to_radians().cos();
    let smooth: Vec<bool> = neighbors
        .iter()
        .map(|nb| {
            let n = pca_normal(points, nb);
            n.norm() > 0.0 && n.dot(&plane.normal).abs() >= cos_t
        })
        .collect();

    let mut label = vec![usize::MAX; points.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..points.len() {
        if label[seed] != usize::MAX || !smooth[seed] || plane.signed_distance(&points[seed]).abs() > params.tau_seed {
            continue;
        }
        let mut region = vec![seed];
        label[seed] = seed;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbors[i] {
                if label[j] == usize::MAX && smooth[j] {
                    label[j] = seed;
                    region.push(j);
                    queue.push_back(j);
                }
            }
        }
        if region.len() > best.len() {
            best = region;
        }
    }
    if best.is_empty() {
        return Err(Error::NoRoadPoints("no seed point near the road plane".into()));
    }
    best.sort_unstable();
    Ok(best)
}

fn pca_normal(points: &[Vec3], nb: &[usize]) -> Vec3 {
    if nb.len() < 3 {
        return Vec3::zeros();
    }
    let mean = nb.iter().fold(Vec3::zeros(), |a, &i| a + points[i]) / nb.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in nb {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned()
}

/// Rough average nearest-neighbor spacing from the bounding box volume.
fn mean_spacing(points: &[Vec3]) -> f64 {
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let mut dims: Vec<f64> = ext.iter().copied().filter(|&e| e > 1e-6).collect();
    dims.sort_by(f64::total_cmp);
    let n = points.len() as f64;
    match dims.len() {
        3 => {
            // treat the thinnest axis as a surface thickness
            (dims[1] * dims[2] / n).sqrt()
        }
        2 => (dims[0] * dims[1] / n).sqrt(),
        1 => dims[0] / n,
        _ => 1.0,
    }
}

/// Road-surface points of a camera-frame cloud.
pub fn segment_road_points(cloud: &IntensityCloud, plane: &PlaneModel, params: &RegionParams) -> Result<IntensityCloud> {
    let pts: Vec<Vec3> = cloud.points.iter().map(|p| p.position).collect();
    let idx = segment_road_indices(&pts, plane, params)?;
    Ok(IntensityCloud::new(cloud.frame.clone(), idx.into_iter().map(|i| cloud.points[i]).collect()))
}

/// Keeps the first point of every occupied voxel; returns kept indices in input order.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    let mut keep = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64);
        if seen.insert(key) {
            keep.push(i);
        }
    }
    keep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlaneResidual {
    /// Mean absolute point-to-plane distance.
    #[default]
    Abs,
    /// Plain sum of signed distances.
    Signed,
}

pub fn plane_cost<'a>(points: impl IntoIterator<Item = &'a Vec3>, m: &PlaneModel, mode: PlaneResidual) -> Result<f64> {
    let mut n = 0usize;
    let mut acc = 0.0;
    for p in points {
        let r = m.signed_distance(p);
        acc += match mode {
            PlaneResidual::Abs => r.abs(),
            PlaneResidual::Signed => r,
        };
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoRoadPoints("plane cost over an empty cloud".into()));
    }
    Ok(match mode {
        PlaneResidual::Abs => acc / n as f64,
        PlaneResidual::Signed => acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ground(step: f64, n: usize) -> Vec<Vec3> {
        // camera-frame ground plane y = 1.6
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                v.push(Vec3::new(i as f64 * step - 2.0, 1.6, 4.0 + j as f64 * step));
            }
        }
        v
    }

    fn road_plane() -> PlaneModel {
        PlaneModel::new(Vec3::new(0.0, -1.0, 0.0), 1.6)
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let idx = GridIndex::new(&pts, 0.15);
        for q in pts.iter().take(50) {
            let got = idx.knn(q, 12);
            let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all.iter().take(12).map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn flat_plane_fully_segmented() {
        let pts = ground(0.1, 30);
        let idx = segment_road_indices(&pts, &road_plane(), &RegionParams::default()).unwrap();
        assert_eq!(idx.len(), pts.len());
    }

    #[test]
    fn floating_box_excluded() {
        let mut pts = ground(0.1, 30);
        let n_ground = pts.len();
        // box top and sides 1 m above the road
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Vec3::new(i as f64 * 0.1 - 0.5, 0.6, 6.0 + j as f64 * 0.1));
            }
        }
        let idx = segment_road_indices(&pts, &road_plane(), &RegionParams::default()).unwrap();
        assert!(idx.iter().all(|&i| i < n_ground));
    }

    #[test]
    fn curb_face_excluded() {
        let mut pts = ground(0.05, 40);
        let n_ground = pts.len();
        // vertical curb face at x = 0, 0.15 m high, behind the road patch
        for i in 0..40 {
            for j in 0..4 {
                pts.push(Vec3::new(-2.05, 1.6 - j as f64 * 0.05, 4.0 + i as f64 * 0.05));
            }
        }
        let idx = segment_road_indices(&pts, &road_plane(), &RegionParams::default()).unwrap();
        let face = idx.iter().filter(|&&i| i >= n_ground && pts[i].y < 1.55).count();
        assert_eq!(face, 0);
    }

    #[test]
    fn plane_cost_examples() {
        let m = PlaneModel::new(Vec3::new(0.0, 0.0, 1.0), -1.0);
        assert_eq!(plane_cost(&[Vec3::new(0.0, 0.0, 3.0)], &m, PlaneResidual::Abs).unwrap(), 2.0);
        let on = [Vec3::new(1.0, 2.0, 1.0), Vec3::new(-4.0, 0.5, 1.0)];
        assert_eq!(plane_cost(&on, &m, PlaneResidual::Abs).unwrap(), 0.0);
        let sym = [Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 0.0)];
        assert_eq!(plane_cost(&sym, &m, PlaneResidual::Signed).unwrap(), 0.0);
        assert_eq!(plane_cost(&sym, &m, PlaneResidual::Abs).unwrap(), 1.0);
        assert!(plane_cost(&[], &m, PlaneResidual::Abs).is_err());
    }

    #[test]
    fn voxel_downsample_keeps_one_per_voxel() {
        let pts = vec![Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        assert_eq!(voxel_downsample(&pts, 0.05), vec![0, 2]);
    }
}
