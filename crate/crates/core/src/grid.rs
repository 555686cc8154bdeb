//! Dense row-major 2D grids used for images, depth maps, masks and labels.

/// A row-major `height x width` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps row-major data. Panics if the length does not match.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length");
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, y: usize, x: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    /// Replicate-padded access.
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> &T {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Grayscale image with values nominally in `[0, 1]`.
pub type GrayImage = Grid<f32>;

/// Per-pixel boolean mask.
pub type MaskMap = Grid<bool>;

impl Grid<f32> {
    /// Halves resolution by averaging 2x2 blocks.
    pub fn halve(&self) -> Grid<f32> {
        let (h, w) = (self.height / 2, self.width / 2);
        Grid::from_fn(h, w, |y, x| {
            let s = *self.get(2 * y, 2 * x)
                + *self.get(2 * y, 2 * x + 1)
                + *self.get(2 * y + 1, 2 * x)
                + *self.get(2 * y + 1, 2 * x + 1);
            s * 0.25
        })
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

impl<T: Clone> Grid<T> {
    /// Subsamples every `2^level`-th pixel (row and column).
    pub fn subsample(&self, level: usize) -> Grid<T> {
        let step = 1usize << level;
        Grid::from_fn(self.height / step, self.width / step, |y, x| {
            self.get(y * step, x * step).clone()
        })
    }

    /// Nearest-neighbor upsampling by `2^level`.
    pub fn upsample_nearest(&self, level: usize) -> Grid<T> {
        Grid::from_fn(self.height << level, self.width << level, |y, x| {
            self.get(y >> level, x >> level).clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halve_averages_blocks() {
        let g = Grid::from_vec(2, 4, vec![0.0f32, 1.0, 2.0, 2.0, 1.0, 2.0, 4.0, 4.0]);
        let h = g.halve();
        assert_eq!(h.shape(), (1, 2));
        assert_eq!(h.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn clamped_access_replicates_border() {
        let g = Grid::from_fn(3, 3, |y, x| y * 3 + x);
        assert_eq!(*g.get_clamped(-1, -1), 0);
        assert_eq!(*g.get_clamped(5, 1), 7);
    }

    #[test]
    fn subsample_then_upsample() {
        let g = Grid::from_fn(4, 4, |y, x| (y, x));
        let s = g.subsample(1);
        assert_eq!(*s.get(1, 1), (2, 2));
        let u = s.upsample_nearest(1);
        assert_eq!(*u.get(3, 2), (2, 2));
    }
}
