//! The complete training configuration as flat `key = value` text.

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::flow::TimeSampling;
use crate::model::{Mmdit, ModelConfig};
use crate::scalar::Scalar;

use super::optimizer::AdamWConfig;
use super::stages::{StageName, StageSpec, TrainState};
use super::step::{DropoutRates, Trainer};

pub const MODEL_PREFIX: &str = "model.";

/// Seed, model, per-stage schedule, optimizer and data settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// Stages I, II and III in order.
    pub stages: [StageSpec; 3],
    pub optimizer: AdamWConfig,
    pub dropout: DropoutRates,
    pub time: TimeSampling,
    /// Checkpoint period in steps; 0 keeps only end-of-stage checkpoints.
    pub checkpoint_every: u64,
}

const OTHER_KEYS: [&str; 11] = [
    "seed",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "optimizer.weight_decay",
    "optimizer.clip_norm",
    "dropout.text",
    "dropout.visual",
    "dropout.both",
    "time.sampling",
    "checkpoint_every",
];

impl RecipeConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            seed: 0,
            model,
            stages: StageName::ALL.map(StageSpec::default_for),
            optimizer: AdamWConfig::default(),
            dropout: DropoutRates::default(),
            time: TimeSampling::Uniform,
            checkpoint_every: 1000,
        }
    }

    /// Keys that must be present. Model keys other than `model.size`
    /// override the ladder defaults and may be omitted.
    pub fn required_keys() -> Vec<String> {
        let mut keys: Vec<String> = OTHER_KEYS.iter().map(|k| k.to_string()).collect();
        keys.push(format!("{MODEL_PREFIX}size"));
        for name in StageName::ALL {
            keys.extend(StageSpec::keys(name));
        }
        keys
    }

    pub fn allowed_keys() -> Vec<String> {
        let mut keys = Self::required_keys();
        keys.extend(ModelConfig::KEYS.iter().map(|k| format!("{MODEL_PREFIX}{k}")));
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        for key in Self::required_keys() {
            if !c.contains(&key) {
                return Err(Error::MissingKey(key));
            }
        }
        let allowed = Self::allowed_keys();
        let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
        c.check_known(&allowed)?;
        let clip: String = c.get("optimizer.clip_norm")?;
        let clip_norm = match clip.as_str() {
            "none" => None,
            v => Some(v.parse::<f64>().map_err(|e| Error::BadKey {
                key: "optimizer.clip_norm".into(),
                msg: format!("`{v}`: {e}"),
            })?),
        };
        let dropout = DropoutRates {
            text: c.get("dropout.text")?,
            visual: c.get("dropout.visual")?,
            both: c.get("dropout.both")?,
        };
        dropout.validate()?;
        Ok(Self {
            seed: c.get("seed")?,
            model: ModelConfig::from_flat(c, MODEL_PREFIX)?,
            stages: [
                StageSpec::from_flat(c, StageName::I)?,
                StageSpec::from_flat(c, StageName::II)?,
                StageSpec::from_flat(c, StageName::III)?,
            ],
            optimizer: AdamWConfig {
                beta1: c.get("optimizer.beta1")?,
                beta2: c.get("optimizer.beta2")?,
                eps: c.get("optimizer.eps")?,
                weight_decay: c.get("optimizer.weight_decay")?,
                clip_norm,
            },
            dropout,
            time: c.get("time.sampling")?,
            checkpoint_every: c.get("checkpoint_every")?,
        })
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut c = self.model.to_flat(MODEL_PREFIX);
        c.set("seed", self.seed);
        for s in &self.stages {
            s.to_flat(&mut c);
        }
        let o = &self.optimizer;
        c.set("optimizer.beta1", o.beta1);
        c.set("optimizer.beta2", o.beta2);
        c.set("optimizer.eps", o.eps);
        c.set("optimizer.weight_decay", o.weight_decay);
        c.set("optimizer.clip_norm", o.clip_norm.map_or("none".to_string(), |v| v.to_string()));
        c.set("dropout.text", self.dropout.text);
        c.set("dropout.visual", self.dropout.visual);
        c.set("dropout.both", self.dropout.both);
        c.set("time.sampling", self.time);
        c.set("checkpoint_every", self.checkpoint_every);
        c
    }

    pub fn stage(&self, name: StageName) -> &StageSpec {
        &self.stages[name as usize]
    }

    pub fn trainer(&self, threads: usize) -> Result<Trainer> {
        let mut t = Trainer::new(Mmdit::new(self.model.clone())?).with_threads(threads)?;
        t.dropout = self.dropout;
        t.time = self.time;
        Ok(t)
    }

    /// Initial weights and a fresh optimizer, both derived from `seed`.
    pub fn fresh_state<T: Scalar>(&self, model: &Mmdit) -> TrainState<T> {
        TrainState::new(model.init_params(self.seed), self.optimizer, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SizeTag;

    #[test]
    fn flat_round_trip_and_key_errors() {
        let mut r = RecipeConfig::new(ModelConfig::micro(SizeTag::MicroXL));
        r.seed = 17;
        r.optimizer.clip_norm = None;
        r.time = TimeSampling::LogitNormal { mean: 0.0, std: 1.0 };
        let flat = r.to_flat();
        let text = flat.to_text();
        let back = RecipeConfig::from_flat(&FlatConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.stage(StageName::III).lr, 2e-5);

        let mut missing = flat.clone();
        missing = FlatConfig::parse(&missing.to_text().replace("dropout.visual = 0.05\n", "")).unwrap();
        match RecipeConfig::from_flat(&missing) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "dropout.visual"),
            other => panic!("{other:?}"),
        }
        let mut unknown = flat.clone();
        unknown.set("optimiser.beta1", 0.9);
        assert!(matches!(RecipeConfig::from_flat(&unknown), Err(Error::BadKey { key, .. }) if key == "optimiser.beta1"));
    }

    #[test]
    fn ladder_size_alone_fixes_the_model() {
        let mut c = RecipeConfig::new(ModelConfig::micro(SizeTag::MicroB)).to_flat();
        let mut slim = FlatConfig::new();
        for k in c.keys().map(str::to_string).collect::<Vec<_>>() {
            if !k.starts_with(MODEL_PREFIX) || k == "model.size" {
                slim.set(k.clone(), c.raw(&k).unwrap());
            }
        }
        c = slim;
        assert_eq!(RecipeConfig::from_flat(&c).unwrap().model, ModelConfig::micro(SizeTag::MicroB));
    }

    #[test]
    fn time_sampling_text() {
        assert_eq!("uniform".parse::<TimeSampling>().unwrap(), TimeSampling::Uniform);
        let t: TimeSampling = "logit_normal:0.5:1.2".parse().unwrap();
        assert_eq!(t, TimeSampling::LogitNormal { mean: 0.5, std: 1.2 });
        assert_eq!(t.to_string().parse::<TimeSampling>().unwrap(), t);
        assert!("logit_normal:0:0".parse::<TimeSampling>().is_err());
        assert!("beta".parse::<TimeSampling>().is_err());
    }
}
