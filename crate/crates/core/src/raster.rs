//! Row-major 2D rasters.

/// A dense row-major image of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type GrayImage = Raster<u8>;
/// Binary raster; `true` marks a set pixel.
pub type BinaryImage = Raster<bool>;
/// `true` = road pixel.
pub type RoadMask = BinaryImage;
/// `true` = edge pixel.
pub type EdgeImage = BinaryImage;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length mismatch");
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        let w = self.width;
        self.data[v * w + u] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        let w = self.width;
        &mut self.data[v * w + u]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, v: usize) -> &[T] {
        &self.data[v * self.width..(v + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Copy> Raster<T> {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> T {
        self.data[v * self.width + u]
    }

    /// Mirror image about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        Raster::from_fn(self.width, self.height, |u, v| self.at(self.width - 1 - u, v))
    }
}

impl BinaryImage {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryImage) -> BinaryImage {
        assert_eq!(self.dims(), other.dims());
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    /// Morphological erosion with a square `(2r+1)^2` structuring element; the
    /// image border counts as unset.
    pub fn erode(&self, r: usize) -> BinaryImage {
        if r == 0 {
            return self.clone();
        }
        let (w, h) = self.dims();
        // separable: horizontal then vertical run checks
        let mut horiz = BinaryImage::filled(w, h, false);
        for v in 0..h {
            let row = self.row(v);
            let mut run = 0usize;
            let mut runs = vec![0usize; w];
            for u in 0..w {
                run = if row[u] { run + 1 } else { 0 };
                runs[u] = run;
            }
            for u in r..w.saturating_sub(r) {
                if runs[u + r] >= 2 * r + 1 {
                    horiz.set(u, v, true);
                }
            }
        }
        let mut out = BinaryImage::filled(w, h, false);
        for u in 0..w {
            let mut run = 0usize;
            let mut runs = vec![0usize; h];
            for v in 0..h {
                run = if horiz.at(u, v) { run + 1 } else { 0 };
                runs[v] = run;
            }
            for v in r..h.saturating_sub(r) {
                if runs[v + r] >= 2 * r + 1 {
                    out.set(u, v, true);
                }
            }
        }
        out
    }
}
