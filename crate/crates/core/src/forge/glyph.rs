//! Identity glyphs: a fixed library of patterned tiles standing in for
//! subject identities, plus normalized cross-correlation scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor};
use crate::imageio::level_to_unit;

pub const GLYPH_SIZE: usize = 16;
pub const GLYPH_COUNT: usize = 64;
const BLOCK: usize = 2;
const LEVELS: [u8; 4] = [0, 85, 170, 255];
const LIBRARY_SEED: u64 = 0x6c79_7068;

/// Library of `GLYPH_COUNT` deterministic tiles. Each tile is an 8x8 grid
/// of 2x2 pixel blocks with every block colour drawn from four levels per
/// channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphLibrary {
    tiles: Vec<ImageTensor>,
}

impl Default for GlyphLibrary {
    fn default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(LIBRARY_SEED);
        let n = GLYPH_SIZE / BLOCK;
        let tiles = (0..GLYPH_COUNT)
            .map(|_| {
                let mut t = Grid::zeros(GLYPH_SIZE, GLYPH_SIZE, 3);
                for by in 0..n {
                    for bx in 0..n {
                        let rgb: [f32; 3] = std::array::from_fn(|_| level_to_unit(LEVELS[rng.random_range(0..4)]));
                        for y in by * BLOCK..(by + 1) * BLOCK {
                            for x in bx * BLOCK..(bx + 1) * BLOCK {
                                for (c, &v) in rgb.iter().enumerate() {
                                    t.set(y, x, c, v);
                                }
                            }
                        }
                    }
                }
                t
            })
            .collect();
        Self { tiles }
    }
}

impl GlyphLibrary {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&ImageTensor> {
        self.tiles
            .get(id)
            .ok_or_else(|| Error::Invalid(format!("unknown glyph id {id}")))
    }
}

/// Pearson correlation of two equal-length vectors; 0 when either is flat.
pub fn ncc(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa <= 1e-12 || bb <= 1e-12 {
        return 0.0;
    }
    ab / (aa * bb).sqrt()
}

/// Best correlation of `tile` over every placement inside `image`.
pub fn max_ncc(image: &ImageTensor, tile: &ImageTensor) -> f64 {
    let (th, tw) = (tile.height, tile.width);
    if image.height < th || image.width < tw || image.channels != tile.channels {
        return 0.0;
    }
    let c = tile.channels;
    let mut window = vec![0.0f32; th * tw * c];
    let mut best = f64::NEG_INFINITY;
    for y in 0..=image.height - th {
        for x in 0..=image.width - tw {
            for r in 0..th {
                let src = image.idx(y + r, x, 0);
                window[r * tw * c..(r + 1) * tw * c].copy_from_slice(&image.data[src..src + tw * c]);
            }
            best = best.max(ncc(&window, &tile.data));
        }
    }
    best
}

/// Copies `tile` into `image` with its top-left corner at `(y, x)`.
pub fn composite(image: &mut ImageTensor, tile: &ImageTensor, y: usize, x: usize) {
    let c = tile.channels;
    for r in 0..tile.height {
        let dst = image.idx(y + r, x, 0);
        let src = r * tile.width * c;
        image.data[dst..dst + tile.width * c].copy_from_slice(&tile.data[src..src + tile.width * c]);
    }
}
