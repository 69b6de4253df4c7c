//! Flat parameter storage and the tensor layout of the transformer.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ConditioningMode, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::LinearIdx;
use crate::scalar::Scalar;

/// Coarse parameter families, used to spread gradient checks and to freeze
/// the identity encoder outside the last stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embedding,
    Attention,
    Mlp,
    Modulation,
    OutputHead,
    ExternalEncoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Embedding,
        ParamGroup::Attention,
        ParamGroup::Mlp,
        ParamGroup::Modulation,
        ParamGroup::OutputHead,
        ParamGroup::ExternalEncoder,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Normal(f64),
    XavierUniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub group: ParamGroup,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Weight matrices get decoupled weight decay; vectors do not.
    pub fn decays(&self) -> bool {
        self.shape.len() >= 2 && !self.name.contains("embedding")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    pub specs: Vec<TensorSpec>,
    pub total: usize,
    by_name: HashMap<String, usize>,
}

impl ParamLayout {
    fn push(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, init: Init) -> usize {
        let offset = self.total;
        let spec = TensorSpec {
            name: name.clone(),
            shape,
            offset,
            group,
            init,
        };
        self.total += spec.len();
        self.by_name.insert(name, self.specs.len());
        self.specs.push(spec);
        offset
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize, group: ParamGroup, init: Init) -> LinearIdx {
        let w = self.push(format!("{name}.weight"), vec![d_in, d_out], group, init);
        let b = self.push(format!("{name}.bias"), vec![d_out], group, Init::Zeros);
        LinearIdx { w, b, d_in, d_out }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.by_name.get(name).map(|&i| &self.specs[i])
    }

    pub fn group_of(&self, index: usize) -> Option<ParamGroup> {
        self.specs.iter().find(|s| s.range().contains(&index)).map(|s| s.group)
    }
}

/// Offsets for one stream (prompt or latent) of a dual-stream block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamIdx {
    /// Produces `(shift1, scale1, gate1, shift2, scale2, gate2)`, or only
    /// `(shift1, scale1)` when the stream is `pre_only`.
    pub modulation: LinearIdx,
    pub qkv: LinearIdx,
    pub proj: Option<LinearIdx>,
    pub fc1: Option<LinearIdx>,
    pub fc2: Option<LinearIdx>,
}

impl StreamIdx {
    /// Stream only contributes keys/values (prompt stream of the last block).
    pub fn pre_only(&self) -> bool {
        self.proj.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIdx {
    pub txt: StreamIdx,
    pub img: StreamIdx,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextIdx {
    /// `vocab x d`.
    pub token_embedding: usize,
    /// `max_len x d`.
    pub position_embedding: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityIdx {
    pub fc1: LinearIdx,
    pub fc2: LinearIdx,
    pub n_features: usize,
    pub d_model: usize,
    pub glyph_size: usize,
}

/// Every tensor offset the forward pass needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelIndex {
    pub text: TextIdx,
    pub identity: IdentityIdx,
    /// Channel mode: `c_in p^2 -> d`. Sequence mode: `c_lat p^2 -> d`.
    pub patch: LinearIdx,
    /// Sequence mode only: `(c_lat + 1) p^2 -> d`.
    pub cond_patch: Option<LinearIdx>,
    pub time_fc1: LinearIdx,
    pub time_fc2: LinearIdx,
    pub blocks: Vec<BlockIdx>,
    pub final_modulation: LinearIdx,
    pub out: LinearIdx,
}

pub fn build_layout(cfg: &ModelConfig) -> (ParamLayout, ModelIndex) {
    use ParamGroup::*;
    let d = cfg.d_model;
    let pp = cfg.patch * cfg.patch;
    let mut l = ParamLayout::default();

    let token_embedding = l.push("text.token_embedding".into(), vec![cfg.vocab_size, d], Embedding, Init::Normal(0.02));
    let position_embedding =
        l.push("text.position_embedding".into(), vec![cfg.max_len, d], Embedding, Init::Normal(0.02));
    let glyph_in = cfg.glyph_size * cfg.glyph_size * 3;
    let identity = IdentityIdx {
        fc1: l.linear("identity.fc1", glyph_in, d, ExternalEncoder, Init::XavierUniform),
        fc2: l.linear("identity.fc2", d, cfg.n_placeholders * d, ExternalEncoder, Init::Normal(0.02)),
        n_features: cfg.n_placeholders,
        d_model: d,
        glyph_size: cfg.glyph_size,
    };
    let (patch, cond_patch) = match cfg.mode {
        ConditioningMode::Channel => (l.linear("patch", cfg.c_in() * pp, d, Embedding, Init::XavierUniform), None),
        ConditioningMode::Sequence => (
            l.linear("patch", cfg.latent_channels * pp, d, Embedding, Init::XavierUniform),
            Some(l.linear("cond_patch", (cfg.latent_channels + 1) * pp, d, Embedding, Init::XavierUniform)),
        ),
    };
    let time_fc1 = l.linear("time.fc1", cfg.time_freq_dim, d, Modulation, Init::Normal(0.02));
    let time_fc2 = l.linear("time.fc2", d, d, Modulation, Init::Normal(0.02));

    let hidden = cfg.mlp_ratio * d;
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let mut stream = |s: &str, pre_only: bool| {
            let p = format!("blocks.{i}.{s}");
            let n_mod = if pre_only { 2 } else { 6 };
            let modulation = l.linear(&format!("{p}.modulation"), d, n_mod * d, Modulation, Init::Zeros);
            let qkv = l.linear(&format!("{p}.qkv"), d, 3 * d, Attention, Init::XavierUniform);
            if pre_only {
                StreamIdx {
                    modulation,
                    qkv,
                    proj: None,
                    fc1: None,
                    fc2: None,
                }
            } else {
                StreamIdx {
                    modulation,
                    qkv,
                    proj: Some(l.linear(&format!("{p}.proj"), d, d, Attention, Init::XavierUniform)),
                    fc1: Some(l.linear(&format!("{p}.mlp.fc1"), d, hidden, Mlp, Init::XavierUniform)),
                    fc2: Some(l.linear(&format!("{p}.mlp.fc2"), hidden, d, Mlp, Init::XavierUniform)),
                }
            }
        };
        let last = i + 1 == cfg.n_layers;
        let txt = stream("txt", last);
        let img = stream("img", false);
        blocks.push(BlockIdx { txt, img });
    }
    let final_modulation = l.linear("final.modulation", d, 2 * d, Modulation, Init::Zeros);
    let out = l.linear("final.out", d, pp * cfg.latent_channels, OutputHead, Init::Zeros);

    let index = ModelIndex {
        text: TextIdx {
            token_embedding,
            position_embedding,
            vocab_size: cfg.vocab_size,
            max_len: cfg.max_len,
            d_model: d,
        },
        identity,
        patch,
        cond_patch,
        time_fc1,
        time_fc2,
        blocks,
        final_modulation,
        out,
    };
    (l, index)
}

/// Flat parameter (or gradient, or optimizer moment) buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub layout: Arc<ParamLayout>,
    pub data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total];
        Self { layout, data }
    }

    /// Standard initialization: modulation and output head zero, so the
    /// network output is identically zero before training.
    pub fn init(layout: Arc<ParamLayout>, seed: u64) -> Self {
        let mut p = Self::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &layout.specs {
            let slice = &mut p.data[spec.range()];
            match spec.init {
                Init::Zeros => {}
                Init::Normal(std) => {
                    for v in slice.iter_mut() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        *v = T::lit((n * std) as f32 as f64);
                    }
                }
                Init::XavierUniform => {
                    let (fan_in, fan_out) = (spec.shape[0], spec.shape[1]);
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in slice.iter_mut() {
                        *v = T::lit(rng.random_range(-a..a) as f32 as f64);
                    }
                }
            }
        }
        p
    }

    /// Every tensor random and nonzero, including the zero-initialized
    /// ones; used by gradient checks so no path is trivially dead.
    pub fn init_dense(layout: Arc<ParamLayout>, seed: u64, scale: f64) -> Self {
        let mut p = Self::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &layout.specs {
            let fan_in = if spec.shape.len() >= 2 { spec.shape[0] } else { 1 };
            let std = scale / (fan_in as f64).sqrt();
            for v in &mut p.data[spec.range()] {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v = T::lit(n * std.max(0.02));
            }
        }
        p
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.get(name).map(|s| &self.data[s.range()])
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            layout: self.layout.clone(),
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_layout(&self, layout: &ParamLayout) -> Result<()> {
        if *self.layout != *layout || self.data.len() != layout.total {
            return Err(Error::Shape("parameter layout does not match model config".into()));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.data.len()
    }
}
