//! One optimization step: conditioning, condition dropout, loss and
//! gradient, reduction over the batch, and the parameter update.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::optimizer::{AdamW, Trainable};
use crate::codec::{resize_mask, Codec};
use crate::error::{Error, Result};
use crate::flow::{cfm_loss, cfm_loss_grad, draw_noise, interpolate, target_velocity, TimeSampling};
use crate::forge::{GlyphLibrary, TaskSample};
use crate::grid::{Latent, LatentMask};
use crate::model::{ConditioningMode, Mmdit, Params};
use crate::scalar::Scalar;
use crate::text::{
    embed, embed_backward, encode_identity, encode_identity_backward, inject_external, null_prompt, IdentityCache,
    PromptEmbeddings, Vocabulary,
};

/// Probabilities of nulling conditions for one sample. The three events
/// are disjoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutRates {
    pub text: f64,
    pub visual: f64,
    pub both: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        Self {
            text: 0.05,
            visual: 0.05,
            both: 0.05,
        }
    }
}

impl DropoutRates {
    pub const NONE: DropoutRates = DropoutRates {
        text: 0.0,
        visual: 0.0,
        both: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.text, self.visual, self.both];
        if all.iter().any(|r| !(0.0..=1.0).contains(r)) || all.iter().sum::<f64>() > 1.0 {
            return Err(Error::Invalid(format!("bad dropout rates {self:?}")));
        }
        Ok(())
    }
}

/// Which conditions a sample trains without.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dropped {
    Nothing,
    Text,
    Visual,
    Both,
}

impl Dropped {
    pub fn draw<R: Rng>(rng: &mut R, rates: &DropoutRates) -> Self {
        let r: f64 = rng.random();
        if r < rates.text {
            Dropped::Text
        } else if r < rates.text + rates.visual {
            Dropped::Visual
        } else if r < rates.text + rates.visual + rates.both {
            Dropped::Both
        } else {
            Dropped::Nothing
        }
    }

    pub fn text(self) -> bool {
        matches!(self, Dropped::Text | Dropped::Both)
    }

    pub fn visual(self) -> bool {
        matches!(self, Dropped::Visual | Dropped::Both)
    }
}

/// A sample with all its per-step randomness fixed.
#[derive(Clone, Debug)]
pub struct Draw {
    pub sample: TaskSample,
    pub dropped: Dropped,
    pub t: f64,
    pub noise: Latent<f32>,
}

/// Encoded input image and pooled mask. Blank-input tasks (text-to-image,
/// identity) still carry their black image and all-ones mask in channel
/// mode; sequence mode appends no condition tokens for them.
pub fn visual_condition<T: Scalar>(
    codec: &Codec,
    sample: &TaskSample,
    mode: ConditioningMode,
) -> Result<Option<(Latent<T>, LatentMask<T>)>> {
    if mode == ConditioningMode::Sequence && !sample.kind.has_visual_condition() {
        return Ok(None);
    }
    let v = codec.encode(&sample.input_image.cast::<T>())?;
    let m = resize_mask(&sample.input_mask, v.height, v.width)?;
    Ok(Some((v, m)))
}

/// Prompt rows for a sample, with identity features injected into the
/// placeholder rows when the sample carries a crop.
pub fn prompt_embeddings<T: Scalar>(
    model: &Mmdit,
    vocab: &Vocabulary,
    params: &Params<T>,
    sample: &TaskSample,
) -> Result<(PromptEmbeddings<T>, Option<IdentityCache<T>>)> {
    let tokens = vocab.tokenize(&sample.prompt, model.config.max_len)?;
    let embs = embed(&tokens, vocab, params, &model.index.text)?;
    match &sample.external {
        Some(crop) if !embs.placeholder_positions.is_empty() => {
            let (feats, cache) = encode_identity(&crop.cast::<T>(), params, &model.index.identity)?;
            Ok((inject_external(&embs, &feats)?, Some(cache)))
        }
        _ => Ok((embs, None)),
    }
}

/// Data, model and randomness settings shared by every step.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Mmdit,
    pub vocab: Vocabulary,
    pub codec: Codec,
    pub glyphs: GlyphLibrary,
    pub dropout: DropoutRates,
    pub time: TimeSampling,
    /// Samples evaluated concurrently; 1 is fully sequential. The
    /// reduction order is fixed, so results do not depend on it.
    pub threads: usize,
    pool: Option<Arc<rayon::ThreadPool>>,
}

/// Loss and gradient of a batch.
#[derive(Clone, Debug)]
pub struct BatchGrad<T> {
    pub loss: f64,
    pub grads: Vec<T>,
    /// Largest residual-stream magnitude over the batch.
    pub max_activation: f64,
}

/// Per-step training record.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub text_dropped: usize,
    pub visual_dropped: usize,
    pub max_activation: f64,
}

impl Trainer {
    pub fn new(model: Mmdit) -> Self {
        Self {
            model,
            vocab: Vocabulary::default(),
            codec: Codec::default(),
            glyphs: GlyphLibrary::default(),
            dropout: DropoutRates::default(),
            time: TimeSampling::Uniform,
            threads: 1,
            pool: None,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        let threads = threads.max(1);
        self.pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        self.threads = threads;
        Ok(self)
    }

    /// Fixes dropout, time and noise for `sample`, in that draw order.
    pub fn draw<R: Rng>(&self, sample: TaskSample, rng: &mut R) -> Draw {
        let dropped = Dropped::draw(rng, &self.dropout);
        let t = self.time.draw(rng);
        let c = &self.model.config;
        let noise = draw_noise(rng, c.latent_h, c.latent_w, c.latent_channels);
        Draw {
            sample,
            dropped,
            t,
            noise,
        }
    }

    /// Loss of one drawn sample. With `grads`, also accumulates the
    /// gradient of `scale * loss`; the identity encoder receives gradient
    /// only when `train_external` is set.
    pub fn sample_loss<T: Scalar>(
        &self,
        params: &Params<T>,
        draw: &Draw,
        grad: Option<(&mut [T], T, bool)>,
    ) -> Result<(T, T)> {
        let model = &self.model;
        let s = &draw.sample;
        let (prompt, id_cache) = if draw.dropped.text() {
            (null_prompt(&self.vocab, params, &model.index.text), None)
        } else {
            prompt_embeddings(model, &self.vocab, params, s)?
        };
        let cond = if draw.dropped.visual() {
            None
        } else {
            visual_condition::<T>(&self.codec, s, model.config.mode)?
        };
        let z = self.codec.encode(&s.target_image.cast::<T>())?;
        let eps = draw.noise.cast::<T>();
        let t = T::lit(draw.t);
        let z_t = interpolate(&z, &eps, t)?;
        let target = target_velocity(&z, &eps)?;
        let (pred, cache) = model.predict_with_cache(params, &prompt, t, &z_t, cond.as_ref().map(|(v, m)| (v, m)))?;
        let loss = cfm_loss(&pred, &target)?;
        if let Some((g, scale, train_external)) = grad {
            let d_out = cfm_loss_grad(&pred, &target).map(|v| v * scale);
            let d_rows = model.backward(params, &cache, &d_out, g);
            let d_feats = embed_backward(&prompt, &d_rows, &model.index.text, g);
            if let (Some(ic), true) = (&id_cache, train_external) {
                encode_identity_backward(ic, &d_feats, params, &model.index.identity, g);
            }
        }
        Ok((loss, cache.max_abs_activation))
    }

    /// Mean loss over `draws` and its gradient. Per-sample gradients are
    /// summed in draw order whatever the thread count.
    pub fn batch_grad<T: Scalar>(&self, params: &Params<T>, draws: &[Draw], train_external: bool) -> Result<BatchGrad<T>> {
        let n = params.data.len();
        let scale = T::one() / T::from_usize(draws.len().max(1)).unwrap();
        let mut acc = vec![T::zero(); n];
        let mut loss = 0.0f64;
        let mut peak = 0.0f64;
        let mut add = |l: T, a: T, g: &[T]| {
            loss += l.as_f64();
            peak = peak.max(a.as_f64());
            for (x, &y) in acc.iter_mut().zip(g) {
                *x += y;
            }
        };
        match &self.pool {
            None => {
                let mut scratch = vec![T::zero(); n];
                for d in draws {
                    scratch.iter_mut().for_each(|v| *v = T::zero());
                    let (l, a) = self.sample_loss(params, d, Some((&mut scratch, scale, train_external)))?;
                    add(l, a, &scratch);
                }
            }
            Some(pool) => {
                for chunk in draws.chunks(self.threads) {
                    let results: Vec<Result<(T, T, Vec<T>)>> = pool.install(|| {
                        chunk
                            .par_iter()
                            .map(|d| {
                                let mut g = vec![T::zero(); n];
                                let (l, a) = self.sample_loss(params, d, Some((&mut g, scale, train_external)))?;
                                Ok((l, a, g))
                            })
                            .collect()
                    });
                    for r in results {
                        let (l, a, g) = r?;
                        add(l, a, &g);
                    }
                }
            }
        }
        Ok(BatchGrad {
            loss: loss / draws.len().max(1) as f64,
            grads: acc,
            max_activation: peak,
        })
    }

    /// Gradient, clip and update on an already drawn batch. A non-finite
    /// loss or activation leaves the parameters untouched and reports
    /// [`Error::LossNan`].
    pub fn step_on<T: Scalar>(
        &self,
        params: &mut Params<T>,
        opt: &mut AdamW<T>,
        draws: &[Draw],
        lr: f64,
        trainable: &Trainable,
        step: u64,
    ) -> Result<StepMetrics> {
        let train_external = !trainable.is_frozen(crate::model::ParamGroup::ExternalEncoder);
        let bg = match self.batch_grad(params, draws, train_external) {
            Ok(bg) => bg,
            Err(e) if e.is_numeric() => return Err(Error::LossNan { step, dump: None }),
            Err(e) => return Err(e),
        };
        if !bg.loss.is_finite() || bg.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::LossNan { step, dump: None });
        }
        let stats = opt.step(params, &bg.grads, lr, trainable);
        Ok(StepMetrics {
            step,
            loss: bg.loss,
            grad_norm: stats.grad_norm,
            lr,
            text_dropped: draws.iter().filter(|d| d.dropped.text()).count(),
            visual_dropped: draws.iter().filter(|d| d.dropped.visual()).count(),
            max_activation: bg.max_activation,
        })
    }
}
