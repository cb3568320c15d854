//! Binary masks and mask tubes.

/// A binary `height x width` mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

/// One mask per frame of a video.
pub type Tube = Vec<Mask>;

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width);
        Self { height, width, bits }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    fn check_dims(&self, other: &Mask) {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask size mismatch");
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.check_dims(other);
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.check_dims(other);
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        self.check_dims(other);
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| f(*a, *b)).collect();
        Mask { height: self.height, width: self.width, bits }
    }

    /// `true` when every pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.check_dims(other);
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Tight bounding box as the mask of its enclosed pixels.
    pub fn bounding_box(&self) -> Mask {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bounds = Some(match bounds {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        match bounds {
            None => Mask::empty(self.height, self.width),
            Some((y0, x0, y1, x1)) => {
                Mask::from_fn(self.height, self.width, |y, x| y >= y0 && y <= y1 && x >= x0 && x <= x1)
            }
        }
    }

    /// Nearest-neighbour downsampling by an integer stride, sampling the
    /// pixel at the centre of each `stride x stride` cell.
    pub fn downsample(&self, stride: usize) -> Mask {
        let (h, w) = (self.height / stride, self.width / stride);
        let off = stride / 2;
        Mask::from_fn(h, w, |y, x| self.get(y * stride + off, x * stride + off))
    }

    /// Nearest-neighbour upsampling by an integer stride.
    pub fn upsample(&self, stride: usize) -> Mask {
        Mask::from_fn(self.height * stride, self.width * stride, |y, x| self.get(y / stride, x / stride))
    }

    /// Pixels set in the mask with at least one 4-neighbour unset or outside.
    pub fn boundary(&self) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| {
            self.get(y, x)
                && (y == 0
                    || x == 0
                    || y + 1 == self.height
                    || x + 1 == self.width
                    || !self.get(y - 1, x)
                    || !self.get(y + 1, x)
                    || !self.get(y, x - 1)
                    || !self.get(y, x + 1))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_algebra() {
        let a = Mask::from_fn(2, 2, |y, _| y == 0);
        let b = Mask::from_fn(2, 2, |_, x| x == 0);
        assert_eq!(a.intersection_count(&b), 1);
        assert_eq!(a.union_count(&b), 3);
        assert_eq!(a.difference(&b).count(), 1);
        assert!(a.intersection(&b).is_subset_of(&a));
    }

    #[test]
    fn bounding_box_covers_extremes() {
        let mut m = Mask::empty(5, 5);
        m.set(1, 3, true);
        m.set(3, 1, true);
        assert_eq!(m.bounding_box().count(), 9);
        assert!(Mask::empty(3, 3).bounding_box().is_empty());
    }

    #[test]
    fn resample_roundtrip_preserves_blocks() {
        let m = Mask::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
        assert_eq!(m.upsample(4).downsample(4), m);
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let m = Mask::from_fn(6, 6, |y, x| (1..5).contains(&y) && (1..5).contains(&x));
        assert_eq!(m.boundary().count(), 12);
    }
}
