use std::fmt;
use std::str::FromStr;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::forge::TaskKind;
use crate::text::vocab::DEFAULT_MAX_LEN;

/// Named rungs of the model ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeTag {
    MicroB,
    MicroL,
    MicroXL,
    /// Hand-sized configs (tests, smoke runs).
    Custom,
}

impl SizeTag {
    pub const LADDER: [SizeTag; 3] = [SizeTag::MicroB, SizeTag::MicroL, SizeTag::MicroXL];

    pub fn name(self) -> &'static str {
        match self {
            SizeTag::MicroB => "micro-B",
            SizeTag::MicroL => "micro-L",
            SizeTag::MicroXL => "micro-XL",
            SizeTag::Custom => "custom",
        }
    }

    /// `(layers, d_model, heads)`.
    pub fn dims(self) -> Option<(usize, usize, usize)> {
        match self {
            SizeTag::MicroB => Some((6, 192, 6)),
            SizeTag::MicroL => Some((9, 288, 9)),
            SizeTag::MicroXL => Some((12, 384, 12)),
            SizeTag::Custom => None,
        }
    }
}

impl fmt::Display for SizeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "micro-B" => Ok(SizeTag::MicroB),
            "micro-L" => Ok(SizeTag::MicroL),
            "micro-XL" => Ok(SizeTag::MicroXL),
            "custom" => Ok(SizeTag::Custom),
            _ => Err(format!("unknown model size `{s}`")),
        }
    }
}

/// How visual conditions reach the transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConditioningMode {
    /// `z_t ⊕ v ⊕ m` stacked along channels; token count never changes.
    Channel,
    /// Baseline: `v ⊕ m` patchified into extra tokens after the noise tokens.
    Sequence,
}

impl ConditioningMode {
    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::Channel => "channel",
            ConditioningMode::Sequence => "sequence",
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditioningMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "channel" => Ok(ConditioningMode::Channel),
            "sequence" => Ok(ConditioningMode::Sequence),
            _ => Err(format!("unknown conditioning mode `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub size: SizeTag,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Latent cells per token side.
    pub patch: usize,
    /// Prompt length `L_max`.
    pub max_len: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    /// `c_lat`.
    pub latent_channels: usize,
    pub mlp_ratio: usize,
    pub time_freq_dim: usize,
    /// Number of `<p>` rows the identity encoder fills.
    pub n_placeholders: usize,
    /// Side of the square identity crop in pixels.
    pub glyph_size: usize,
    pub vocab_size: usize,
    pub mode: ConditioningMode,
}

impl ModelConfig {
    /// Ladder config at the default 64x64 resolution (32x32x12 latent).
    pub fn micro(size: SizeTag) -> Self {
        let (n_layers, d_model, n_heads) = size.dims().unwrap_or((2, 32, 2));
        Self {
            size,
            n_layers,
            d_model,
            n_heads,
            patch: 2,
            max_len: DEFAULT_MAX_LEN,
            latent_h: 32,
            latent_w: 32,
            latent_channels: 12,
            mlp_ratio: 4,
            time_freq_dim: 256,
            n_placeholders: 4,
            glyph_size: 16,
            vocab_size: crate::text::Vocabulary::default().len(),
            mode: ConditioningMode::Channel,
        }
    }

    /// Small custom config for tests and smoke runs.
    pub fn tiny() -> Self {
        Self {
            size: SizeTag::Custom,
            n_layers: 2,
            d_model: 32,
            n_heads: 2,
            time_freq_dim: 32,
            ..Self::micro(SizeTag::Custom)
        }
    }

    pub fn with_mode(mut self, mode: ConditioningMode) -> Self {
        self.mode = mode;
        self
    }

    /// Input channels in channel mode: `2 c_lat + 1`.
    pub fn c_in(&self) -> usize {
        2 * self.latent_channels + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn grid_tokens_h(&self) -> usize {
        self.latent_h / self.patch
    }

    pub fn grid_tokens_w(&self) -> usize {
        self.latent_w / self.patch
    }

    /// Tokens covering one latent grid.
    pub fn grid_tokens(&self) -> usize {
        self.grid_tokens_h() * self.grid_tokens_w()
    }

    pub fn image_height(&self, codec_factor: usize) -> usize {
        self.latent_h * codec_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("model config: {msg}")));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("layers, d_model and heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by heads {}", self.d_model, self.n_heads));
        }
        if !self.d_model.is_multiple_of(4) {
            return bad("d_model must be a multiple of 4".into());
        }
        if self.patch == 0 || !self.latent_h.is_multiple_of(self.patch) || !self.latent_w.is_multiple_of(self.patch) {
            return bad(format!(
                "latent {}x{} not divisible by patch {}",
                self.latent_h, self.latent_w, self.patch
            ));
        }
        if !self.time_freq_dim.is_multiple_of(2) || self.time_freq_dim == 0 {
            return bad("time_freq_dim must be even".into());
        }
        if let Some(dims) = self.size.dims() {
            if dims != (self.n_layers, self.d_model, self.n_heads) {
                return bad(format!("{} must be {:?}", self.size, dims));
            }
        }
        if self.max_len == 0 || self.vocab_size == 0 || self.latent_channels == 0 {
            return bad("max_len, vocab_size and latent_channels must be positive".into());
        }
        Ok(())
    }

    /// Sequence length attention runs over for a task kind.
    pub fn count_tokens(&self, kind: TaskKind, mode: ConditioningMode) -> usize {
        let n = self.grid_tokens();
        match mode {
            ConditioningMode::Channel => self.max_len + n,
            ConditioningMode::Sequence => {
                self.max_len + n + if kind.has_visual_condition() { n } else { 0 }
            }
        }
    }

    pub const KEYS: [&'static str; 15] = [
        "size",
        "layers",
        "d_model",
        "heads",
        "patch",
        "max_len",
        "latent_h",
        "latent_w",
        "latent_channels",
        "mlp_ratio",
        "time_freq_dim",
        "n_placeholders",
        "glyph_size",
        "vocab_size",
        "mode",
    ];

    pub fn to_flat(&self, prefix: &str) -> FlatConfig {
        let mut c = FlatConfig::new();
        let k = |s: &str| format!("{prefix}{s}");
        c.set(k("size"), self.size);
        c.set(k("layers"), self.n_layers);
        c.set(k("d_model"), self.d_model);
        c.set(k("heads"), self.n_heads);
        c.set(k("patch"), self.patch);
        c.set(k("max_len"), self.max_len);
        c.set(k("latent_h"), self.latent_h);
        c.set(k("latent_w"), self.latent_w);
        c.set(k("latent_channels"), self.latent_channels);
        c.set(k("mlp_ratio"), self.mlp_ratio);
        c.set(k("time_freq_dim"), self.time_freq_dim);
        c.set(k("n_placeholders"), self.n_placeholders);
        c.set(k("glyph_size"), self.glyph_size);
        c.set(k("vocab_size"), self.vocab_size);
        c.set(k("mode"), self.mode);
        c
    }

    /// Reads `{prefix}size`; ladder sizes need nothing else, every other
    /// key overrides the ladder default.
    pub fn from_flat(c: &FlatConfig, prefix: &str) -> Result<Self> {
        let k = |s: &str| format!("{prefix}{s}");
        let size: SizeTag = c.get(&k("size"))?;
        let base = if size == SizeTag::Custom {
            Self {
                size,
                ..Self::tiny()
            }
        } else {
            Self::micro(size)
        };
        let cfg = Self {
            size,
            n_layers: c.get_or(&k("layers"), base.n_layers)?,
            d_model: c.get_or(&k("d_model"), base.d_model)?,
            n_heads: c.get_or(&k("heads"), base.n_heads)?,
            patch: c.get_or(&k("patch"), base.patch)?,
            max_len: c.get_or(&k("max_len"), base.max_len)?,
            latent_h: c.get_or(&k("latent_h"), base.latent_h)?,
            latent_w: c.get_or(&k("latent_w"), base.latent_w)?,
            latent_channels: c.get_or(&k("latent_channels"), base.latent_channels)?,
            mlp_ratio: c.get_or(&k("mlp_ratio"), base.mlp_ratio)?,
            time_freq_dim: c.get_or(&k("time_freq_dim"), base.time_freq_dim)?,
            n_placeholders: c.get_or(&k("n_placeholders"), base.n_placeholders)?,
            glyph_size: c.get_or(&k("glyph_size"), base.glyph_size)?,
            vocab_size: c.get_or(&k("vocab_size"), base.vocab_size)?,
            mode: c.get_or(&k("mode"), base.mode)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
