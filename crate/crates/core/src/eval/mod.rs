//! Evaluation suites scored by the shapes-world verifier, the efficiency
//! benchmark, and the ablation and scaling runners.

pub mod ablation;
pub mod bench;
pub mod report;
pub mod suites;

pub use ablation::{
    run_ablation, run_scaling, AblationPlan, AblationRow, AblationTable, AblationVariant, EvalSettings, ScalingPlan, ScalingRow,
    ScalingTable,
};
pub use bench::{bench_efficiency, spearman, BenchReport, BenchRow};
pub use report::EvalReport;
pub use suites::{eval_auxiliary, eval_categories, eval_compositional, eval_editing, eval_id, Category};

use crate::codec::Codec;
use crate::error::Result;
use crate::flow::{sample, Bound, GuidanceScales, SampleSpec};
use crate::forge::TaskSample;
use crate::grid::ImageTensor;
use crate::model::{Mmdit, Params};
use crate::scalar::Scalar;
use crate::text::{null_prompt, Vocabulary};
use crate::train::{prompt_embeddings, visual_condition};

/// Produces an image for a task sample.
pub trait ImageSource {
    fn generate(&self, sample: &TaskSample, seed: u64) -> Result<ImageTensor>;
}

/// Returns the ground-truth target; scores perfectly by construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct Oracle;

impl ImageSource for Oracle {
    fn generate(&self, sample: &TaskSample, _seed: u64) -> Result<ImageTensor> {
        Ok(sample.target_image.clone())
    }
}

/// Returns the input image unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct CopyInput;

impl ImageSource for CopyInput {
    fn generate(&self, sample: &TaskSample, _seed: u64) -> Result<ImageTensor> {
        Ok(sample.input_image.clone())
    }
}

/// A trained model driven by the guided Euler sampler.
#[derive(Clone, Copy, Debug)]
pub struct ModelSource<'a, T> {
    pub model: &'a Mmdit,
    pub vocab: &'a Vocabulary,
    pub params: &'a Params<T>,
    pub codec: &'a Codec,
    pub steps: usize,
    pub scales: GuidanceScales,
}

impl<T: Scalar> ImageSource for ModelSource<'_, T> {
    fn generate(&self, s: &TaskSample, seed: u64) -> Result<ImageTensor> {
        let cfg = &self.model.config;
        let (prompt, _) = prompt_embeddings(self.model, self.vocab, self.params, s)?;
        let spec = SampleSpec {
            prompt,
            null_prompt: null_prompt(self.vocab, self.params, &self.model.index.text),
            visual: visual_condition(self.codec, s, cfg.mode)?,
            latent_dims: (cfg.latent_h, cfg.latent_w, cfg.latent_channels),
            steps: self.steps,
            seed,
            scales: self.scales,
        };
        let bound = Bound {
            model: self.model,
            params: self.params,
        };
        Ok(sample(&bound, &spec, self.codec)?.cast::<f32>())
    }
}
