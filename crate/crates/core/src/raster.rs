//! Dense row-major rasters shared by every stage of the pipeline.
//!
//! Pixel `(x, y)` has its center at integer coordinates; bilinear sampling
//! treats `(x as f64, y as f64)` as the exact pixel center.

use serde::{Deserialize, Serialize};

/// Generic row-major raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Floating-point RGB raster in linear radiometric units.
pub type RadianceImage = Raster<[f32; 3]>;
/// Signed per-channel raster (derivatives, normalized images).
pub type SignedImage = Raster<[f32; 3]>;
/// 8-bit RGB raster, as written to PPM.
pub type Rgb8Image = Raster<[u8; 3]>;
/// Single-channel float raster.
pub type ScalarImage = Raster<f32>;
/// Per-pixel validity.
pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    /// Wraps an existing row-major buffer.
    ///
    /// Panics when the buffer length does not match `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            width * height,
            "raster buffer length does not match {width}x{height}"
        );
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
    pub fn index_of(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
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

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
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

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, T> {
        self.data.chunks_mut(self.width)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Values that can be bilinearly interpolated.
pub trait Lerp: Copy {
    fn weighted(self, w: f32) -> Self;
    fn add(self, other: Self) -> Self;
}

impl Lerp for f32 {
    #[inline]
    fn weighted(self, w: f32) -> Self {
        self * w
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
}

impl Lerp for [f32; 3] {
    #[inline]
    fn weighted(self, w: f32) -> Self {
        [self[0] * w, self[1] * w, self[2] * w]
    }
    #[inline]
    fn add(self, o: Self) -> Self {
        [self[0] + o[0], self[1] + o[1], self[2] + o[2]]
    }
}

impl<T: Lerp> Raster<T> {
    /// Bilinear sample at continuous coordinates; `None` outside the pixel-center hull.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<T> {
        if !self.contains(x, y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.get(x0, y0).weighted(1.0 - fx).add(self.get(x1, y0).weighted(fx));
        let bottom = self.get(x0, y1).weighted(1.0 - fx).add(self.get(x1, y1).weighted(fx));
        Some(top.weighted(1.0 - fy).add(bottom.weighted(fy)))
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Nearest-pixel lookup at continuous coordinates.
    pub fn at_nearest(&self, x: f64, y: f64) -> bool {
        let xi = x.round();
        let yi = y.round();
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return false;
        }
        *self.get(xi as usize, yi as usize)
    }
}

/// Separable Gaussian blur of a multi-channel raster, clamping at the borders.
///
/// `sigma <= 0` returns a copy.
pub fn gaussian_blur<T: Lerp + Default + Send + Sync>(image: &Raster<T>, sigma: f64) -> Raster<T> {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = image.dims();
    let mut tmp = Raster::filled(w, h, T::default());
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::default();
            for (i, &k) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc = acc.add(image.get(xx, y).weighted(k));
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Raster::filled(w, h, T::default());
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::default();
            for (i, &k) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc = acc.add(tmp.get(x, yy).weighted(k));
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Normalized, odd-length sampled Gaussian truncated at 3 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k.into_iter().map(|v| v as f32).collect()
}
