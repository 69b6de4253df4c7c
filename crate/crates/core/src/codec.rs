//! Invertible pixel-shuffle latent codec and mask resizing.
//!
//! Encoding folds every `s x s x 3` pixel block into one latent cell with
//! `3 s^2` channels, ordered by block row, block column, then colour channel.
//! Decoding is the exact inverse, so round trips are bit exact.

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor, Latent, LatentMask, MaskImage};
use crate::scalar::Scalar;

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Codec {
    /// Downsample factor `s`.
    pub factor: usize,
}

impl Default for Codec {
    fn default() -> Self {
        Self { factor: 2 }
    }
}

impl Codec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Invalid("codec factor must be positive".into()));
        }
        Ok(Self { factor })
    }

    /// Latent channel count `3 s^2`.
    pub fn latent_channels(&self) -> usize {
        IMAGE_CHANNELS * self.factor * self.factor
    }

    pub fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let s = self.factor;
        if height == 0 || width == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(Error::Shape(format!(
                "image {height}x{width} not divisible by codec factor {s}"
            )));
        }
        Ok((height / s, width / s))
    }

    pub fn encode<T: Scalar>(&self, image: &ImageTensor<T>) -> Result<Latent<T>> {
        if image.channels != IMAGE_CHANNELS {
            return Err(Error::Shape(format!("image has {} channels, expected 3", image.channels)));
        }
        let (h, w) = self.latent_dims(image.height, image.width)?;
        let s = self.factor;
        let c_lat = self.latent_channels();
        let mut out = Grid::zeros(h, w, c_lat);
        for ly in 0..h {
            for lx in 0..w {
                let base = out.idx(ly, lx, 0);
                for dy in 0..s {
                    for dx in 0..s {
                        let src = image.idx(ly * s + dy, lx * s + dx, 0);
                        let dst = base + (dy * s + dx) * IMAGE_CHANNELS;
                        out.data[dst..dst + IMAGE_CHANNELS]
                            .copy_from_slice(&image.data[src..src + IMAGE_CHANNELS]);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn decode<T: Scalar>(&self, latent: &Latent<T>) -> Result<ImageTensor<T>> {
        let s = self.factor;
        if latent.channels != self.latent_channels() {
            return Err(Error::Shape(format!(
                "latent has {} channels, codec expects {}",
                latent.channels,
                self.latent_channels()
            )));
        }
        let mut out = Grid::zeros(latent.height * s, latent.width * s, IMAGE_CHANNELS);
        for ly in 0..latent.height {
            for lx in 0..latent.width {
                let base = latent.idx(ly, lx, 0);
                for dy in 0..s {
                    for dx in 0..s {
                        let dst = out.idx(ly * s + dy, lx * s + dx, 0);
                        let src = base + (dy * s + dx) * IMAGE_CHANNELS;
                        out.data[dst..dst + IMAGE_CHANNELS]
                            .copy_from_slice(&latent.data[src..src + IMAGE_CHANNELS]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Area-average pooling of a binary mask down to `h x w` cells.
pub fn resize_mask<T: Scalar>(mask: &MaskImage, h: usize, w: usize) -> Result<LatentMask<T>> {
    if h == 0 || w == 0 || !mask.height.is_multiple_of(h) || !mask.width.is_multiple_of(w) {
        return Err(Error::Shape(format!(
            "mask {}x{} cannot be pooled to {h}x{w}",
            mask.height, mask.width
        )));
    }
    let (by, bx) = (mask.height / h, mask.width / w);
    let inv = T::one() / T::lit((by * bx) as f64);
    let mut out = Grid::zeros(h, w, 1);
    for cy in 0..h {
        for cx in 0..w {
            let mut count = 0usize;
            for y in cy * by..(cy + 1) * by {
                for x in cx * bx..(cx + 1) * bx {
                    count += mask.get(y, x) as usize;
                }
            }
            out.data[cy * w + cx] = T::lit(count as f64) * inv;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_from(h: usize, w: usize, vals: &[f32]) -> ImageTensor {
        Grid::from_vec(h, w, 3, vals.to_vec()).unwrap()
    }

    #[test]
    fn shapes_for_default_factor() {
        let codec = Codec::default();
        let img: ImageTensor = Grid::zeros(64, 64, 3);
        let z = codec.encode(&img).unwrap();
        assert_eq!(z.dims(), (32, 32, 12));
        assert!(z.data.iter().all(|&v| v == 0.0));
        assert_eq!(codec.decode(&z).unwrap().dims(), (64, 64, 3));
    }

    #[test]
    fn block_layout_is_row_major_then_channel() {
        // 2x2 image, one latent cell
        let vals: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let z = Codec::default().encode(&image_from(2, 2, &vals)).unwrap();
        // pixel (0,0) -> ch 0..3, (0,1) -> 3..6, (1,0) -> 6..9, (1,1) -> 9..12
        assert_eq!(z.data, vals);
        let vals2: Vec<f32> = (0..48).map(|v| v as f32).collect();
        let z2 = Codec::default().encode(&image_from(2, 8, &vals2)).unwrap();
        assert_eq!(z2.dims(), (1, 4, 12));
        // latent cell 1 starts with pixel (0,2)
        assert_eq!(z2.get(0, 1, 0), vals2[2 * 3]);
        // its channel 6 is pixel (1,2), channel 0
        assert_eq!(z2.get(0, 1, 6), vals2[(8 + 2) * 3]);
    }

    #[test]
    fn rejects_bad_dims() {
        let codec = Codec::default();
        assert!(codec.encode(&Grid::<f32>::zeros(63, 64, 3)).is_err());
        assert!(codec.decode(&Grid::<f32>::zeros(4, 4, 8)).is_err());
        assert!(Codec::new(0).is_err());
    }

    #[test]
    fn mask_resize_examples() {
        let ones = MaskImage::filled(64, 64, true);
        let m: LatentMask<f64> = resize_mask(&ones, 32, 32).unwrap();
        assert!(m.data.iter().all(|&v| v == 1.0));

        let mut half = MaskImage::filled(64, 64, false);
        for y in 0..64 {
            for x in 0..32 {
                half.set(y, x, true);
            }
        }
        let m: LatentMask<f64> = resize_mask(&half, 32, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                // oracle: average of the 2x2 pixel block
                let mut s = 0.0;
                for py in 2 * y..2 * y + 2 {
                    for px in 2 * x..2 * x + 2 {
                        s += half.get(py, px) as u8 as f64;
                    }
                }
                assert_eq!(m.get(y, x, 0), s / 4.0);
                assert_eq!(m.get(y, x, 0), if x < 16 { 1.0 } else { 0.0 });
            }
        }

        let small = MaskImage::from_vec(2, 2, vec![1, 0, 0, 0]).unwrap();
        let m: LatentMask<f64> = resize_mask(&small, 1, 1).unwrap();
        assert_eq!(m.data, vec![0.25]);
        assert!(resize_mask::<f32>(&small, 3, 1).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_energy(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let codec = Codec::default();
            let img: ImageTensor<f64> = Grid::from_vec(2 * h, 2 * w, 3,
                (0..12 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let z = codec.encode(&img).unwrap();
            prop_assert_eq!(&codec.decode(&z).unwrap(), &img);
            prop_assert_eq!(&codec.encode(&codec.decode(&z).unwrap()).unwrap(), &z);
            let e0: f64 = img.data.iter().map(|v| v * v).sum();
            let e1: f64 = z.data.iter().map(|v| v * v).sum();
            prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1.0));
        }

        #[test]
        fn mask_resize_monotone(bits in proptest::collection::vec(any::<bool>(), 64), extra in proptest::collection::vec(any::<bool>(), 64)) {
            let m1 = MaskImage::from_vec(8, 8, bits.iter().map(|&b| b as u8).collect()).unwrap();
            let m2 = MaskImage::from_vec(8, 8, bits.iter().zip(&extra).map(|(&a, &b)| (a || b) as u8).collect()).unwrap();
            let r1: LatentMask<f64> = resize_mask(&m1, 4, 4).unwrap();
            let r2: LatentMask<f64> = resize_mask(&m2, 4, 4).unwrap();
            for (a, b) in r1.data.iter().zip(&r2.data) {
                prop_assert!(a <= b);
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
