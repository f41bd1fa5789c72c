//! Dense row-major 2D buffers used for every per-pixel map in the crate.

use num_dual::DualNum;

/// A row-major `width × height` grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ScalarMap = Image<f64>;
pub type RgbImage = Image<[f64; 3]>;
pub type Mask = Image<bool>;

impl<T: Clone> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Image<T> {
    /// Wraps `data` laid out row by row. Panics if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
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

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Image<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert!(self.same_dims(other));
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert!(self.same_dims(other));
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

impl RgbImage {
    /// Rec. 601 luma.
    pub fn to_gray(&self) -> ScalarMap {
        self.map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
    }
}

/// Four integer corners and the generic fractional weights of a bilinear lookup.
pub(crate) struct BilinearTap<T> {
    pub x0: usize,
    pub y0: usize,
    pub fx: T,
    pub fy: T,
}

/// Locates `(u, v)` for bilinear sampling. Returns `None` unless all four
/// corners are inside the image.
pub(crate) fn bilinear_tap<T: DualNum<f64> + Copy>(
    width: usize,
    height: usize,
    u: T,
    v: T,
) -> Option<BilinearTap<T>> {
    let (ur, vr) = (u.re(), v.re());
    if !(ur >= 0.0 && vr >= 0.0 && ur <= (width - 1) as f64 && vr <= (height - 1) as f64) {
        return None;
    }
    // Clamp so the upper corner stays in-image when sampling exactly on the last row/column.
    let x0 = (ur.floor() as usize).min(width.saturating_sub(2));
    let y0 = (vr.floor() as usize).min(height.saturating_sub(2));
    Some(BilinearTap {
        x0,
        y0,
        fx: u - x0 as f64,
        fy: v - y0 as f64,
    })
}

impl<T> BilinearTap<T>
where
    T: DualNum<f64> + Copy,
{
    /// Corner weights in order (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1).
    pub fn weights(&self) -> [T; 4] {
        let one = T::from(1.0);
        let gx = one - self.fx;
        let gy = one - self.fy;
        [gx * gy, self.fx * gy, gx * self.fy, self.fx * self.fy]
    }

    pub fn corners(&self) -> [(usize, usize); 4] {
        let (x, y) = (self.x0, self.y0);
        [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
    }
}

/// Bilinear sample of a scalar map; `None` when any corner is outside.
pub fn sample_bilinear(map: &ScalarMap, u: f64, v: f64) -> Option<f64> {
    let tap = bilinear_tap(map.width(), map.height(), u, v)?;
    let w = tap.weights();
    Some(
        tap.corners()
            .iter()
            .zip(w)
            .map(|(&(x, y), w)| w * *map.get(x, y))
            .sum(),
    )
}
