//! Checkpoint directories.
//!
//! Layout: `config.txt` (model config and the run's config snapshot),
//! `vocab.txt`, `manifest.txt` (dtype, then one `name shape offset` line
//! per tensor), `weights.bin` (raw little-endian values), `optimizer.bin`
//! (first then second moments) and `state.txt` (counters, stage progress
//! and generator position).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optimizer::{AdamW, AdamWConfig};
use super::stages::{StageName, TrainState};
use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::model::{Mmdit, ModelConfig, ParamLayout, Params};
use crate::scalar::Scalar;
use crate::text::Vocabulary;

use super::recipe::MODEL_PREFIX;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_values<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for v in values {
        v.write_le(&mut out);
    }
    out
}

fn decode_values<T: Scalar>(bytes: &[u8], dtype: &str, n: usize, what: &str) -> Result<Vec<T>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        _ => return Err(Error::Checkpoint(format!("unknown dtype `{dtype}`"))),
    };
    if bytes.len() != n * width {
        return Err(Error::Checkpoint(format!(
            "{what} holds {} bytes, expected {}",
            bytes.len(),
            n * width
        )));
    }
    Ok(bytes
        .chunks_exact(width)
        .map(|c| match width {
            4 => T::from_f32_lossy(f32::from_le_bytes(c.try_into().unwrap())),
            _ => T::lit(f64::from_le_bytes(c.try_into().unwrap())),
        })
        .collect())
}

fn manifest<T: Scalar>(layout: &ParamLayout) -> String {
    let mut s = format!("dtype {}\n", T::NAME);
    for spec in &layout.specs {
        let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        s.push_str(&format!("{} {} {}\n", spec.name, shape.join("x"), spec.offset));
    }
    s
}

/// Checks the manifest against `layout` and returns the stored dtype.
fn check_manifest(text: &str, layout: &ParamLayout) -> Result<String> {
    let mut lines = text.lines();
    let dtype = lines
        .next()
        .and_then(|l| l.strip_prefix("dtype "))
        .ok_or_else(|| Error::Checkpoint("manifest lacks a dtype line".into()))?
        .to_string();
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != layout.specs.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config implies {}",
            rows.len(),
            layout.specs.len()
        )));
    }
    for (row, spec) in rows.iter().zip(&layout.specs) {
        let shape: Vec<String> = spec.shape.iter().map(usize::to_string).collect();
        let expect = format!("{} {} {}", spec.name, shape.join("x"), spec.offset);
        if row.trim() != expect {
            return Err(Error::Checkpoint(format!("manifest entry `{row}` does not match `{expect}`")));
        }
    }
    Ok(dtype)
}

pub fn save<T: Scalar>(
    dir: &Path,
    model: &Mmdit,
    vocab: &Vocabulary,
    state: &TrainState<T>,
    snapshot: &FlatConfig,
) -> Result<()> {
    save_params(dir, model, vocab, &state.params, snapshot)?;
    let mut moments = encode_values(&state.opt.m);
    moments.extend(encode_values(&state.opt.v));
    write(&dir.join("optimizer.bin"), &moments)?;
    let mut s = FlatConfig::new();
    s.set("step", state.step);
    s.set("stage", state.stage.map_or("none".to_string(), |n| n.to_string()));
    s.set("stage_step", state.stage_step);
    let done: Vec<&str> = state.completed.iter().map(|n| n.name()).collect();
    s.set("completed", done.join(","));
    let oc = &state.opt.config;
    s.set("opt.t", state.opt.t);
    s.set("opt.beta1", oc.beta1);
    s.set("opt.beta2", oc.beta2);
    s.set("opt.eps", oc.eps);
    s.set("opt.weight_decay", oc.weight_decay);
    s.set("opt.clip_norm", oc.clip_norm.map_or("none".to_string(), |c| c.to_string()));
    let seed: String = state.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    s.set("rng.seed", seed);
    s.set("rng.stream", state.rng.get_stream());
    s.set("rng.word_pos", state.rng.get_word_pos());
    write(&dir.join("state.txt"), s.to_text().as_bytes())
}

/// Weights only; enough for sampling and evaluation.
pub fn save_params<T: Scalar>(
    dir: &Path,
    model: &Mmdit,
    vocab: &Vocabulary,
    params: &Params<T>,
    snapshot: &FlatConfig,
) -> Result<()> {
    params.check_layout(&model.layout)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cfg = snapshot.clone();
    cfg.merge(&model.config.to_flat(MODEL_PREFIX));
    write(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    vocab.save(&dir.join("vocab.txt"))?;
    write(&dir.join("manifest.txt"), manifest::<T>(&model.layout).as_bytes())?;
    write(&dir.join("weights.bin"), &encode_values(&params.data))
}

/// A loaded checkpoint without training state.
pub struct Loaded<T> {
    pub model: Mmdit,
    pub vocab: Vocabulary,
    pub params: Params<T>,
    pub config: FlatConfig,
}

pub fn load_params<T: Scalar>(dir: &Path) -> Result<Loaded<T>> {
    let config = FlatConfig::load(&dir.join("config.txt"))?;
    let model = Mmdit::new(ModelConfig::from_flat(&config, MODEL_PREFIX)?)?;
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} tokens, config says {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let text = std::fs::read_to_string(dir.join("manifest.txt")).map_err(|e| Error::io(dir.join("manifest.txt"), e))?;
    let dtype = check_manifest(&text, &model.layout)?;
    let data = decode_values(&read(&dir.join("weights.bin"))?, &dtype, model.layout.total, "weights.bin")?;
    let params = Params {
        layout: model.layout.clone(),
        data,
    };
    Ok(Loaded {
        model,
        vocab,
        params,
        config,
    })
}

fn parse_stage(raw: &str) -> Result<Option<StageName>> {
    match raw {
        "none" => Ok(None),
        s => s.parse().map(Some),
    }
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(Loaded<T>, TrainState<T>)> {
    let loaded = load_params::<T>(dir)?;
    let s = FlatConfig::load(&dir.join("state.txt"))?;
    let dtype = check_manifest(
        &std::fs::read_to_string(dir.join("manifest.txt")).map_err(|e| Error::io(dir.join("manifest.txt"), e))?,
        &loaded.model.layout,
    )?;
    let n = loaded.model.layout.total;
    let moments = decode_values::<T>(&read(&dir.join("optimizer.bin"))?, &dtype, 2 * n, "optimizer.bin")?;
    let clip: String = s.get("opt.clip_norm")?;
    let config = AdamWConfig {
        beta1: s.get("opt.beta1")?,
        beta2: s.get("opt.beta2")?,
        eps: s.get("opt.eps")?,
        weight_decay: s.get("opt.weight_decay")?,
        clip_norm: if clip == "none" { None } else { Some(s.get("opt.clip_norm")?) },
    };
    let opt = AdamW {
        config,
        m: moments[..n].to_vec(),
        v: moments[n..].to_vec(),
        t: s.get("opt.t")?,
    };
    let seed_hex: String = s.get("rng.seed")?;
    if seed_hex.len() != 64 {
        return Err(Error::Checkpoint("rng.seed must be 64 hex digits".into()));
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Checkpoint("rng.seed is not hex".into()))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(s.get("rng.stream")?);
    rng.set_word_pos(s.get("rng.word_pos")?);
    let completed_raw: String = s.get_or("completed", String::new())?;
    let completed = completed_raw
        .split(',')
        .filter(|x| !x.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<StageName>>>()?;
    let state = TrainState {
        params: loaded.params.clone(),
        opt,
        step: s.get("step")?,
        stage: parse_stage(&s.get::<String>("stage")?)?,
        stage_step: s.get("stage_step")?,
        completed,
        rng,
    };
    Ok((loaded, state))
}
