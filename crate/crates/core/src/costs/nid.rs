use crate::raster::{BinaryImage, GrayImage};

/// Co-occurrence counts of two 8-bit signals quantized into `bins` levels each.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    bins: usize,
    counts: Vec<u64>,
    marginal_x: Vec<u64>,
    marginal_y: Vec<u64>,
    total: u64,
}

impl JointHistogram {
    pub fn new(bins: usize) -> Self {
        assert!((1..=256).contains(&bins), "bins must be in 1..=256");
        JointHistogram {
            bins,
            counts: vec![0; bins * bins],
            marginal_x: vec![0; bins],
            marginal_y: vec![0; bins],
            total: 0,
        }
    }

    pub fn from_pairs(bins: usize, pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut h = JointHistogram::new(bins);
        for (x, y) in pairs {
            h.add(x, y);
        }
        h
    }

    #[inline]
    fn bin(&self, value: u8) -> usize {
        value as usize * self.bins / 256
    }

    #[inline]
    pub fn add(&mut self, x: u8, y: u8) {
        let (bx, by) = (self.bin(x), self.bin(y));
        self.counts[bx * self.bins + by] += 1;
        self.marginal_x[bx] += 1;
        self.marginal_y[by] += 1;
        self.total += 1;
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, bx: usize, by: usize) -> u64 {
        self.counts[bx * self.bins + by]
    }

    pub fn marginal_x(&self) -> &[u64] {
        &self.marginal_x
    }

    pub fn marginal_y(&self) -> &[u64] {
        &self.marginal_y
    }

    pub fn entropy_x(&self) -> f64 {
        entropy(&self.marginal_x, self.total)
    }

    pub fn entropy_y(&self) -> f64 {
        entropy(&self.marginal_y, self.total)
    }

    pub fn joint_entropy(&self) -> f64 {
        entropy(&self.counts, self.total)
    }

    /// `2 - (H(X) + H(Y)) / H(X,Y)`, clamped to `[0, 1]`; 0 when the joint entropy vanishes.
    pub fn nid(&self) -> f64 {
        let hxy = self.joint_entropy();
        if hxy <= 0.0 {
            return 0.0;
        }
        (2.0 - (self.entropy_x() + self.entropy_y()) / hxy).clamp(0.0, 1.0)
    }
}

/// Shannon entropy in nats.
fn entropy(counts: &[u64], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NidParams {
    pub bins: usize,
    pub min_covalid: usize,
}

impl Default for NidParams {
    fn default() -> Self {
        NidParams {
            bins: 32,
            min_covalid: 1000,
        }
    }
}

/// NID between the stereo image and the LiDAR intensity image over pixels that
/// are both road and LiDAR-valid. Too few such pixels give the maximum, 1.
pub fn nid_cost(stereo: &GrayImage, lidar: &GrayImage, valid: &BinaryImage, params: &NidParams) -> f64 {
    assert_eq!(stereo.dims(), lidar.dims(), "image size mismatch");
    assert_eq!(stereo.dims(), valid.dims(), "mask size mismatch");
    let mut h = JointHistogram::new(params.bins);
    for ((&x, &y), &ok) in stereo.data().iter().zip(lidar.data()).zip(valid.data()) {
        if ok {
            h.add(x, y);
        }
    }
    if (h.total() as usize) < params.min_covalid.max(1) {
        return 1.0;
    }
    h.nid()
}
