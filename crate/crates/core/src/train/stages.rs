//! The three-stage recipe and the resumable stage loop.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::metrics::MetricsWriter;
use super::mixture::{sample_batch, MixtureSpec};
use super::optimizer::{AdamW, AdamWConfig, Trainable};
use super::step::{StepMetrics, Trainer};
use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::model::{ParamGroup, Params};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageName {
    I,
    II,
    III,
}

impl StageName {
    pub const ALL: [StageName; 3] = [StageName::I, StageName::II, StageName::III];

    pub fn name(self) -> &'static str {
        match self {
            StageName::I => "I",
            StageName::II => "II",
            StageName::III => "III",
        }
    }

    /// Stage that must have completed first.
    pub fn predecessor(self) -> Option<StageName> {
        match self {
            StageName::I => None,
            StageName::II => Some(StageName::I),
            StageName::III => Some(StageName::II),
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(StageName::I),
            "II" | "2" => Ok(StageName::II),
            "III" | "3" => Ok(StageName::III),
            _ => Err(Error::Invalid(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub name: StageName,
    pub mixture: MixtureSpec,
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
    pub trains_external_encoder: bool,
}

impl StageSpec {
    /// Default recipe: t2i pretraining, multi-task training, then identity
    /// training with the encoder unfrozen.
    pub fn default_for(name: StageName) -> Self {
        let (mixture, lr, steps, enc) = match name {
            StageName::I => (MixtureSpec::stage_one(), 1e-4, 20_000, false),
            StageName::II => (MixtureSpec::stage_two(), 1e-4, 20_000, false),
            StageName::III => (MixtureSpec::stage_three(), 2e-5, 2_000, true),
        };
        Self {
            name,
            mixture,
            lr,
            steps,
            batch: 64,
            trains_external_encoder: enc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name == StageName::III && !self.trains_external_encoder {
            return Err(Error::Invalid("stage III must train the external encoder".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Invalid(format!("stage {} learning rate {}", self.name, self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Invalid(format!("stage {} batch size is zero", self.name)));
        }
        Ok(())
    }

    pub fn trainable(&self) -> Trainable {
        if self.trains_external_encoder {
            Trainable::all()
        } else {
            Trainable::freezing(&[ParamGroup::ExternalEncoder])
        }
    }

    pub fn keys(name: StageName) -> [String; 5] {
        ["mixture", "lr", "steps", "batch", "train_encoder"].map(|k| format!("stage.{name}.{k}"))
    }

    pub fn to_flat(&self, c: &mut FlatConfig) {
        let [mix, lr, steps, batch, enc] = Self::keys(self.name);
        c.set(mix, &self.mixture);
        c.set(lr, self.lr);
        c.set(steps, self.steps);
        c.set(batch, self.batch);
        c.set(enc, self.trains_external_encoder);
    }

    pub fn from_flat(c: &FlatConfig, name: StageName) -> Result<Self> {
        let base = Self::default_for(name);
        let [mix, lr, steps, batch, enc] = Self::keys(name);
        let mixture = match c.raw(&mix) {
            Some(text) => MixtureSpec::parse(text).map_err(|e| Error::BadKey {
                key: mix.clone(),
                msg: e.to_string(),
            })?,
            None => base.mixture,
        };
        let spec = Self {
            name,
            mixture,
            lr: c.get_or(&lr, base.lr)?,
            steps: c.get_or(&steps, base.steps)?,
            batch: c.get_or(&batch, base.batch)?,
            trains_external_encoder: c.get_or(&enc, base.trains_external_encoder)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub params: Params<T>,
    pub opt: AdamW<T>,
    /// Optimizer steps taken over all stages.
    pub step: u64,
    /// Stage in progress, or the last one run.
    pub stage: Option<StageName>,
    pub stage_step: u64,
    pub completed: Vec<StageName>,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: Params<T>, opt: AdamWConfig, seed: u64) -> Self {
        let n = params.data.len();
        Self {
            params,
            opt: AdamW::new(opt, n),
            step: 0,
            stage: None,
            stage_step: 0,
            completed: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Where and how often a stage run writes artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Root for `metrics.csv` and `checkpoints/`; nothing is written
    /// without it.
    pub out: Option<PathBuf>,
    /// Checkpoint every this many global steps (0 = only at stage end).
    pub checkpoint_every: u64,
    /// Skip the stage-order check.
    pub force: bool,
    /// Stop once this global step count is reached.
    pub stop_at: Option<u64>,
    /// Config snapshot stored with every checkpoint.
    pub snapshot: FlatConfig,
}

#[derive(Clone, Debug, Default)]
pub struct StageOutcome {
    pub metrics: Vec<StepMetrics>,
    /// False when `stop_at` interrupted the stage.
    pub finished: bool,
}

fn check_order<T>(state: &TrainState<T>, name: StageName) -> Result<()> {
    if state.completed.contains(&name) {
        return Err(Error::StageOrder(format!("stage {name} already completed")));
    }
    if let Some(prev) = name.predecessor() {
        if !state.completed.contains(&prev) {
            return Err(Error::StageOrder(format!("stage {name} requires stage {prev} first")));
        }
    }
    if let Some(cur) = state.stage {
        if cur != name && !state.completed.contains(&cur) {
            return Err(Error::StageOrder(format!("stage {cur} is still in progress")));
        }
    }
    Ok(())
}

pub fn checkpoint_dir(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step-{step:08}"))
}

/// Runs (or resumes) one stage. A non-finite loss stops the run, writes
/// the state to `<out>/nan_dump` and returns [`Error::LossNan`].
pub fn run_stage<T: Scalar>(
    trainer: &Trainer,
    spec: &StageSpec,
    state: &mut TrainState<T>,
    opts: &RunOptions,
) -> Result<StageOutcome> {
    spec.validate()?;
    if !opts.force {
        check_order(state, spec.name)?;
    }
    if state.stage != Some(spec.name) {
        state.stage = Some(spec.name);
        state.stage_step = 0;
    }
    let trainable = spec.trainable();
    let mut writer = match &opts.out {
        Some(out) => Some(MetricsWriter::open(&out.join("metrics.csv"))?),
        None => None,
    };
    let save = |state: &TrainState<T>, dir: &Path| checkpoint::save(dir, &trainer.model, &trainer.vocab, state, &opts.snapshot);
    let mut outcome = StageOutcome::default();
    while state.stage_step < spec.steps {
        if opts.stop_at.is_some_and(|s| state.step >= s) {
            return Ok(outcome);
        }
        let batch = sample_batch(&spec.mixture, spec.batch, &mut state.rng, &trainer.glyphs);
        let draws: Vec<_> = batch.into_iter().map(|s| trainer.draw(s, &mut state.rng)).collect();
        let step = state.step + 1;
        let m = match trainer.step_on(&mut state.params, &mut state.opt, &draws, spec.lr, &trainable, step) {
            Ok(m) => m,
            Err(Error::LossNan { step, .. }) => {
                let dump = match &opts.out {
                    Some(out) => {
                        let dir = out.join("nan_dump");
                        save(state, &dir)?;
                        Some(dir)
                    }
                    None => None,
                };
                return Err(Error::LossNan { step, dump });
            }
            Err(e) => return Err(e),
        };
        state.step = step;
        state.stage_step += 1;
        if let Some(w) = writer.as_mut() {
            w.append(&m, spec.name)?;
        }
        outcome.metrics.push(m);
        if let Some(out) = &opts.out {
            if opts.checkpoint_every > 0 && step.is_multiple_of(opts.checkpoint_every) {
                save(state, &checkpoint_dir(out, step))?;
            }
        }
    }
    if !state.completed.contains(&spec.name) {
        state.completed.push(spec.name);
    }
    if let Some(out) = &opts.out {
        save(state, &out.join("checkpoints").join(format!("stage-{}", spec.name)))?;
    }
    outcome.finished = true;
    Ok(outcome)
}

/// Runs the given stages in order, skipping those already completed.
/// Stops after the first stage that ends early at `opts.stop_at`.
pub fn run_recipe<T: Scalar>(
    trainer: &Trainer,
    stages: &[StageSpec],
    state: &mut TrainState<T>,
    opts: &RunOptions,
) -> Result<Vec<StageOutcome>> {
    let mut outcomes = Vec::new();
    for spec in stages {
        if state.completed.contains(&spec.name) {
            continue;
        }
        let o = run_stage(trainer, spec, state, opts)?;
        let finished = o.finished;
        outcomes.push(o);
        if !finished {
            break;
        }
    }
    Ok(outcomes)
}
