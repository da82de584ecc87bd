//! Pixel tensors in `[0, 1]`, stored height × width × channel, row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    /// Number of scalar entries, the `d` used to normalize distances.
    pub const fn dim(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    pub const fn index(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    pixels: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image, rejecting empty shapes, wrong lengths and pixels outside `[0, 1]`.
    pub fn new(shape: Shape, pixels: Vec<f32>) -> Result<Self> {
        if shape.dim() == 0 {
            return Err(Error::Argument(format!("empty image shape {shape}")));
        }
        if pixels.len() != shape.dim() {
            return Err(Error::shape(shape.dim(), pixels.len()));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Argument(format!("pixel {p} outside [0, 1]")));
        }
        Ok(ImageTensor { shape, pixels })
    }

    /// Builds an image after clamping every pixel into `[0, 1]`; returns the
    /// number of clamped entries alongside. NaN becomes 0.
    pub fn clamped(shape: Shape, mut pixels: Vec<f32>) -> Result<(Self, usize)> {
        if shape.dim() == 0 || pixels.len() != shape.dim() {
            return Err(Error::shape(shape.dim(), pixels.len()));
        }
        let mut n = 0;
        for p in pixels.iter_mut() {
            if !(0.0..=1.0).contains(p) {
                *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
                n += 1;
            }
        }
        Ok((ImageTensor { shape, pixels }, n))
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value) && shape.dim() > 0);
        ImageTensor {
            shape,
            pixels: vec![value; shape.dim()],
        }
    }

    /// Maps model-space values in `[-1, 1]` back to pixels, clamping first.
    pub fn from_model_space(shape: Shape, values: &[f32]) -> Self {
        assert_eq!(values.len(), shape.dim());
        let pixels = values
            .iter()
            .map(|v| (v.clamp(-1.0, 1.0) + 1.0) * 0.5)
            .collect();
        ImageTensor { shape, pixels }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.pixels[self.shape.index(y, x, ch)]
    }

    /// Writes `2p - 1` for every pixel into `out`.
    pub fn write_model_space(&self, out: &mut [f32]) {
        for (o, p) in out.iter_mut().zip(&self.pixels) {
            *o = 2.0 * p - 1.0;
        }
    }

    pub fn to_model_space(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.dim()];
        self.write_model_space(&mut v);
        v
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = self.pixels.clone();
        flip_horizontal_in_place(self.shape, &mut pixels);
        ImageTensor {
            shape: self.shape,
            pixels,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.pixels.iter().all(|&p| p == self.pixels[0])
    }

    pub(crate) fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }
}

/// Mirrors an HWC buffer left-to-right.
pub fn flip_horizontal_in_place<T>(shape: Shape, data: &mut [T]) {
    debug_assert_eq!(data.len(), shape.dim());
    let Shape { h, w, c } = shape;
    for y in 0..h {
        for x in 0..w / 2 {
            for ch in 0..c {
                data.swap(shape.index(y, x, ch), shape.index(y, w - 1 - x, ch));
            }
        }
    }
}
