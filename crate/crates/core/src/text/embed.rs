//! Prompt embedding, placeholder replacement and the identity encoder.

use super::vocab::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::grid::ImageTensor;
use crate::model::params::{IdentityIdx, Params, TextIdx};
use crate::nn::{gelu, gelu_grad};
use crate::scalar::Scalar;

/// `max_len x d_model` prompt rows plus the bookkeeping the transformer
/// and the backward pass need.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbeddings<T> {
    pub rows: Vec<T>,
    pub max_len: usize,
    pub d_model: usize,
    pub token_ids: Vec<u32>,
    pub placeholder_positions: Vec<usize>,
    /// False for `<pad>` rows, which attention ignores.
    pub key_valid: Vec<bool>,
    /// Placeholder rows hold external features rather than table rows.
    pub injected: bool,
    /// The unconditional prompt (`<null>` row broadcast, no positions).
    pub null: bool,
}

impl<T: Scalar> PromptEmbeddings<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.d_model..(i + 1) * self.d_model]
    }
}

/// `n_f x d_model` features produced by an external encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFeatures<T> {
    pub rows: Vec<T>,
    pub n: usize,
    pub d_model: usize,
}

impl<T: Scalar> ConditionFeatures<T> {
    pub fn empty(d_model: usize) -> Self {
        Self {
            rows: Vec::new(),
            n: 0,
            d_model,
        }
    }
}

/// Row `i` = token table row for `ids[i]` + position row `i`.
pub fn embed<T: Scalar>(
    tokens: &TokenSequence,
    vocab: &Vocabulary,
    params: &Params<T>,
    idx: &TextIdx,
) -> Result<PromptEmbeddings<T>> {
    let d = idx.d_model;
    if tokens.len() != idx.max_len {
        return Err(Error::Shape(format!(
            "token sequence has length {}, model expects {}",
            tokens.len(),
            idx.max_len
        )));
    }
    let mut rows = vec![T::zero(); idx.max_len * d];
    for (i, &id) in tokens.ids.iter().enumerate() {
        if id as usize >= idx.vocab_size {
            return Err(Error::Invalid(format!("token id {id} outside vocabulary")));
        }
        let tok = &params.data[idx.token_embedding + id as usize * d..][..d];
        let pos = &params.data[idx.position_embedding + i * d..][..d];
        for (o, (&a, &b)) in rows[i * d..(i + 1) * d].iter_mut().zip(tok.iter().zip(pos)) {
            *o = a + b;
        }
    }
    Ok(PromptEmbeddings {
        rows,
        max_len: idx.max_len,
        d_model: d,
        placeholder_positions: tokens.positions_of(vocab.placeholder_id()),
        key_valid: tokens.ids.iter().map(|&id| id != vocab.pad_id()).collect(),
        token_ids: tokens.ids.clone(),
        injected: false,
        null: false,
    })
}

/// The unconditional text condition: the learned `<null>` row at every
/// position, no position embedding, nothing masked.
pub fn null_prompt<T: Scalar>(vocab: &Vocabulary, params: &Params<T>, idx: &TextIdx) -> PromptEmbeddings<T> {
    let d = idx.d_model;
    let null_id = vocab.null_id();
    let row = &params.data[idx.token_embedding + null_id as usize * d..][..d];
    PromptEmbeddings {
        rows: row.iter().copied().cycle().take(idx.max_len * d).collect(),
        max_len: idx.max_len,
        d_model: d,
        token_ids: vec![null_id; idx.max_len],
        placeholder_positions: Vec::new(),
        key_valid: vec![true; idx.max_len],
        injected: false,
        null: true,
    }
}

/// Replaces the placeholder rows, in order, with `feats`.
pub fn inject_external<T: Scalar>(
    embs: &PromptEmbeddings<T>,
    feats: &ConditionFeatures<T>,
) -> Result<PromptEmbeddings<T>> {
    if embs.placeholder_positions.len() != feats.n {
        return Err(Error::Shape(format!(
            "{} placeholders but {} feature rows",
            embs.placeholder_positions.len(),
            feats.n
        )));
    }
    if feats.n > 0 && feats.d_model != embs.d_model {
        return Err(Error::Shape(format!(
            "feature width {} vs embedding width {}",
            feats.d_model, embs.d_model
        )));
    }
    let d = embs.d_model;
    let mut out = embs.clone();
    for (k, &pos) in embs.placeholder_positions.iter().enumerate() {
        out.rows[pos * d..(pos + 1) * d].copy_from_slice(&feats.rows[k * d..(k + 1) * d]);
    }
    out.injected = feats.n > 0 || embs.injected;
    Ok(out)
}

/// Routes prompt-row gradients back to the token and position tables.
/// Injected placeholder rows are skipped; their gradient is returned as
/// `n_f x d` rows for the external encoder.
pub fn embed_backward<T: Scalar>(embs: &PromptEmbeddings<T>, d_rows: &[T], idx: &TextIdx, grads: &mut [T]) -> Vec<T> {
    let d = idx.d_model;
    let mut d_feats = Vec::new();
    for (i, &id) in embs.token_ids.iter().enumerate() {
        let g = &d_rows[i * d..(i + 1) * d];
        if embs.injected && embs.placeholder_positions.contains(&i) {
            d_feats.extend_from_slice(g);
            continue;
        }
        let tok = idx.token_embedding + id as usize * d;
        for (a, &b) in grads[tok..tok + d].iter_mut().zip(g) {
            *a += b;
        }
        if !embs.null {
            let pos = idx.position_embedding + i * d;
            for (a, &b) in grads[pos..pos + d].iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    d_feats
}

/// Activations kept for the identity encoder backward pass.
#[derive(Clone, Debug)]
pub struct IdentityCache<T> {
    input: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

/// Two-layer MLP over the flattened crop: `fc2(gelu(fc1(x)))`, reshaped
/// to `n_f x d_model`.
pub fn encode_identity<T: Scalar>(
    crop: &ImageTensor<T>,
    params: &Params<T>,
    idx: &IdentityIdx,
) -> Result<(ConditionFeatures<T>, IdentityCache<T>)> {
    let g = idx.glyph_size;
    if crop.dims() != (g, g, 3) {
        return Err(Error::Shape(format!(
            "identity crop is {:?}, expected {g}x{g}x3",
            crop.dims()
        )));
    }
    let p = &params.data;
    let input = crop.data.clone();
    let pre = idx.fc1.forward_vec(p, &input);
    let hidden: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
    let rows = idx.fc2.forward_vec(p, &hidden);
    Ok((
        ConditionFeatures {
            rows,
            n: idx.n_features,
            d_model: idx.d_model,
        },
        IdentityCache { input, pre, hidden },
    ))
}

pub fn encode_identity_backward<T: Scalar>(
    cache: &IdentityCache<T>,
    d_feats: &[T],
    params: &Params<T>,
    idx: &IdentityIdx,
    grads: &mut [T],
) {
    let p = &params.data;
    let mut d_hidden = vec![T::zero(); cache.hidden.len()];
    idx.fc2.backward(p, grads, &cache.hidden, d_feats, 1, Some(&mut d_hidden));
    let d_pre: Vec<T> = d_hidden
        .iter()
        .zip(&cache.pre)
        .map(|(&g, &x)| g * gelu_grad(x))
        .collect();
    idx.fc1.backward(p, grads, &cache.input, &d_pre, 1, None);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{Mmdit, ModelConfig};
    use rand::{Rng, SeedableRng};

    fn setup() -> (Mmdit, Params<f64>, Vocabulary) {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let params = model.init_params::<f64>(3);
        (model, params, Vocabulary::default())
    }

    #[test]
    fn embed_is_rowwise() {
        let (model, params, vocab) = setup();
        let idx = &model.index.text;
        let a = embed(&vocab.tokenize("<t2i> a red circle", 24).unwrap(), &vocab, &params, idx).unwrap();
        let b = embed(&vocab.tokenize("<t2i> a red circle", 24).unwrap(), &vocab, &params, idx).unwrap();
        assert_eq!(a, b);
        let c = embed(&vocab.tokenize("<t2i> a blue circle", 24).unwrap(), &vocab, &params, idx).unwrap();
        for i in 0..24 {
            assert_eq!(a.row(i) == c.row(i), i != 2, "row {i}");
        }
        assert_eq!(a.key_valid.iter().filter(|&&v| v).count(), 4);
    }

    #[test]
    fn placeholder_positions_recorded() {
        let (model, params, vocab) = setup();
        let e = embed(&vocab.tokenize("<t2i> a <p> <p> <p> <p>", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        assert_eq!(e.placeholder_positions, vec![2, 3, 4, 5]);
    }

    #[test]
    fn injection_replaces_only_placeholders() {
        let (model, params, vocab) = setup();
        let d = model.config.d_model;
        let e = embed(&vocab.tokenize("<t2i> <p> <p> <p> <p> in the top left", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        let feats = ConditionFeatures {
            rows: (0..4 * d).map(|i| i as f64).collect(),
            n: 4,
            d_model: d,
        };
        let out = inject_external(&e, &feats).unwrap();
        for (k, &pos) in e.placeholder_positions.iter().enumerate() {
            assert_eq!(out.row(pos), &feats.rows[k * d..(k + 1) * d]);
        }
        let mut max_change = 0.0f64;
        for i in (0..24).filter(|i| !e.placeholder_positions.contains(i)) {
            for (a, b) in out.row(i).iter().zip(e.row(i)) {
                max_change = max_change.max((a - b).abs());
            }
        }
        assert_eq!(max_change, 0.0);
        // idempotent
        assert_eq!(inject_external(&out, &feats).unwrap(), out);
        // count mismatch
        let three = ConditionFeatures { rows: feats.rows[..3 * d].to_vec(), n: 3, d_model: d };
        assert!(inject_external(&e, &three).is_err());
        // no placeholders, no features
        let plain = embed(&vocab.tokenize("<t2i> a red circle", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        assert_eq!(inject_external(&plain, &ConditionFeatures::empty(d)).unwrap(), plain);
    }

    #[test]
    fn null_prompt_is_broadcast_row() {
        let (model, params, vocab) = setup();
        let n1 = null_prompt(&vocab, &params, &model.index.text);
        let n2 = null_prompt(&vocab, &params, &model.index.text);
        assert_eq!(n1, n2);
        for i in 1..24 {
            assert_eq!(n1.row(i), n1.row(0));
        }
    }

    fn crop(seed: u64) -> ImageTensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(16, 16, 3, (0..768).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_encoder_shapes() {
        let (model, params, _) = setup();
        let (f1, _) = encode_identity(&crop(1), &params, &model.index.identity).unwrap();
        let (f2, _) = encode_identity(&crop(1), &params, &model.index.identity).unwrap();
        assert_eq!(f1, f2);
        assert_eq!((f1.n, f1.d_model, f1.rows.len()), (4, 32, 128));
        assert!(encode_identity(&Grid::zeros(8, 8, 3), &params, &model.index.identity).is_err());

        let big = Mmdit::new(ModelConfig { d_model: 256, n_heads: 8, ..ModelConfig::tiny() }).unwrap();
        let bp = big.init_params::<f64>(0);
        let (f, _) = encode_identity(&crop(2), &bp, &big.index.identity).unwrap();
        assert_eq!((f.n, f.d_model), (4, 256));
    }

    #[test]
    fn identity_encoder_gradient_matches_central_differences() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let mut params = Params::<f64>::init_dense(model.layout.clone(), 5, 1.0);
        let idx = &model.index.identity;
        let x = crop(9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..idx.n_features * idx.d_model).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |p: &Params<f64>| -> f64 {
            let (f, _) = encode_identity(&x, p, idx).unwrap();
            f.rows.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = encode_identity(&x, &params, idx).unwrap();
        let mut grads = vec![0.0; params.data.len()];
        encode_identity_backward(&cache, &w, &params, idx, &mut grads);
        let candidates: Vec<usize> = [idx.fc1.w, idx.fc1.b, idx.fc2.w, idx.fc2.b]
            .iter()
            .flat_map(|&o| (0..8).map(move |k| o + k * 3))
            .collect();
        for i in candidates {
            let orig = params.data[i];
            params.data[i] = orig + 1e-5;
            let up = objective(&params);
            params.data[i] = orig - 1e-5;
            let down = objective(&params);
            params.data[i] = orig;
            let num = (up - down) / 2e-5;
            let rel = (num - grads[i]).abs() / num.abs().max(grads[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: fd {num} vs analytic {}", grads[i]);
        }
    }
}
