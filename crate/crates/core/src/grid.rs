//! Dense height x width x channel tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major HWC tensor. Pixel images, latents, latent masks and velocity
/// fields all share this layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

/// Pixel image with 3 channels in `[-1, 1]`.
pub type ImageTensor<T = f32> = Grid<T>;
/// Latent produced by the codec.
pub type Latent<T = f32> = Grid<T>;
/// `z_t`: a latent part way between noise and data.
pub type NoisyLatent<T = f32> = Grid<T>;
/// Model output / flow target, same shape as the latent.
pub type VelocityField<T = f32> = Grid<T>;
/// Single-channel soft mask at latent resolution.
pub type LatentMask<T = f32> = Grid<T>;
/// `z_t ⊕ v ⊕ m` along channels.
pub type ConditionedLatent<T = f32> = Grid<T>;

impl<T: Scalar> Grid<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![v; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.idx(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same shape, new values.
    pub fn like(&self, data: Vec<T>) -> Self {
        assert_eq!(data.len(), self.data.len(), "grid data length");
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Pixel `[y, x]` as a slice over channels.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = self.idx(y, x, 0);
        &self.data[i..i + self.channels]
    }
}

/// Binary pixel mask; 1 marks the region to generate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskImage {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("{} values for a {height}x{width} mask", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    /// Number of pixels set to 1.
    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}
