//! Training: task mixtures, condition dropout, the optimizer, the staged
//! recipe, checkpoints, metrics and gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod metrics;
pub mod mixture;
pub mod optimizer;
pub mod recipe;
pub mod stages;
pub mod step;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mixture::{group_of, sample_batch, MixtureSpec, AUXILIARY};
pub use optimizer::{AdamW, AdamWConfig, Trainable};
pub use recipe::RecipeConfig;
pub use stages::{run_recipe, run_stage, RunOptions, StageName, StageOutcome, StageSpec, TrainState};
pub use step::{prompt_embeddings, visual_condition, Draw, DropoutRates, Dropped, StepMetrics, Trainer};
