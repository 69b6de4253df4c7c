//! Dual-stream joint-attention diffusion transformer.
//!
//! Prompt rows and latent patch tokens keep separate projections and
//! adaptive layer-norm modulation but attend jointly. The flow time drives
//! every modulation vector through a small MLP. The output head and all
//! modulation layers start at zero, so a fresh model predicts a zero field.

pub mod config;
pub mod flops;
pub mod forward;
pub mod params;

use std::sync::Arc;

pub use config::{ConditioningMode, ModelConfig, SizeTag};
pub use forward::ForwardCache;
pub use params::{ModelIndex, ParamGroup, ParamLayout, Params};

use crate::error::{Error, Result};
use crate::grid::{ConditionedLatent, Grid, Latent, LatentMask};
use crate::scalar::Scalar;

/// Model definition: config, parameter layout and offsets. Weights live in
/// a separate [`Params`] buffer so one definition serves f32 and f64.
#[derive(Clone, Debug)]
pub struct Mmdit {
    pub config: ModelConfig,
    pub layout: Arc<ParamLayout>,
    pub index: ModelIndex,
    pos_table: Vec<f64>,
}

impl Mmdit {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, index) = params::build_layout(&config);
        let pos_table = crate::nn::pos_embed_2d(config.grid_tokens_h(), config.grid_tokens_w(), config.d_model);
        Ok(Self {
            config,
            layout: Arc::new(layout),
            index,
            pos_table,
        })
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Params<T> {
        Params::init(self.layout.clone(), seed)
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn pos_table<T: Scalar>(&self) -> Vec<T> {
        self.pos_table.iter().map(|&v| T::lit(v)).collect()
    }
}

/// Channel concatenation `z_t ⊕ v ⊕ m`.
pub fn assemble_input<T: Scalar>(
    z_t: &Latent<T>,
    v: &Latent<T>,
    m: &LatentMask<T>,
) -> Result<ConditionedLatent<T>> {
    z_t.check_same_shape(v, "noisy latent vs image latent")?;
    if m.channels != 1 {
        return Err(Error::Shape(format!("mask has {} channels, expected 1", m.channels)));
    }
    concat_channels(&[z_t, v, m])
}

/// Stacks grids of equal height and width along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Grid<T>]) -> Result<Grid<T>> {
    let (h, w) = (parts[0].height, parts[0].width);
    if let Some(bad) = parts.iter().find(|g| (g.height, g.width) != (h, w)) {
        return Err(Error::Shape(format!(
            "grid {:?} does not match latent grid {h}x{w}",
            bad.dims()
        )));
    }
    let total: usize = parts.iter().map(|g| g.channels).sum();
    let mut out = Grid::zeros(h, w, total);
    for cell in 0..h * w {
        let mut off = cell * total;
        for g in parts {
            let c = g.channels;
            out.data[off..off + c].copy_from_slice(&g.data[cell * c..(cell + 1) * c]);
            off += c;
        }
    }
    Ok(out)
}

/// Splits a grid into `patch x patch` tokens; features ordered by patch
/// row, patch column, then channel.
pub fn patchify<T: Scalar>(grid: &Grid<T>, patch: usize) -> Vec<T> {
    let (gh, gw, c) = (grid.height / patch, grid.width / patch, grid.channels);
    let f = patch * patch * c;
    let mut out = vec![T::zero(); gh * gw * f];
    for ty in 0..gh {
        for tx in 0..gw {
            let tok = &mut out[(ty * gw + tx) * f..(ty * gw + tx + 1) * f];
            for py in 0..patch {
                for px in 0..patch {
                    let src = grid.idx(ty * patch + py, tx * patch + px, 0);
                    let dst = (py * patch + px) * c;
                    tok[dst..dst + c].copy_from_slice(&grid.data[src..src + c]);
                }
            }
        }
    }
    out
}

pub fn unpatchify<T: Scalar>(tokens: &[T], gh: usize, gw: usize, patch: usize, channels: usize) -> Grid<T> {
    let f = patch * patch * channels;
    let mut out = Grid::zeros(gh * patch, gw * patch, channels);
    for ty in 0..gh {
        for tx in 0..gw {
            let tok = &tokens[(ty * gw + tx) * f..(ty * gw + tx + 1) * f];
            for py in 0..patch {
                for px in 0..patch {
                    let dst = out.idx(ty * patch + py, tx * patch + px, 0);
                    let src = (py * patch + px) * channels;
                    out.data[dst..dst + channels].copy_from_slice(&tok[src..src + channels]);
                }
            }
        }
    }
    out
}
