//! Multi-task ablation rows and the model-size ladder, each trained with
//! a shared recipe and scored by the verifier suites.

use std::fmt::{self, Write as _};

use super::suites::{eval_categories, eval_editing, eval_id, Category};
use super::ModelSource;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::flow::GuidanceScales;
use crate::forge::TaskKind;
use crate::model::{Mmdit, ModelConfig, SizeTag};
use crate::scalar::Scalar;
use crate::train::{
    group_of, run_recipe, run_stage, AdamWConfig, MixtureSpec, RunOptions, StageName, StageSpec, TrainState, Trainer,
};

/// Task-set variants. `A` is t2i with in/outpainting; each later row adds
/// a task family. `C` is optional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    A,
    B,
    C,
    D,
    E,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];
    pub const DEFAULT: [AblationVariant; 4] = [Self::A, Self::B, Self::D, Self::E];

    pub fn label(self) -> &'static str {
        match self {
            Self::A => "(a)",
            Self::B => "(b)",
            Self::C => "(c)",
            Self::D => "(d)",
            Self::E => "(e)",
        }
    }

    pub fn has_edit(self) -> bool {
        self != Self::A
    }

    pub fn has_auxiliary(self) -> bool {
        matches!(self, Self::D | Self::E)
    }

    pub fn has_id(self) -> bool {
        matches!(self, Self::C | Self::E)
    }

    /// Multi-task ratios restricted to the row's families and
    /// renormalized; identity rows add id samples 1:1 against the rest.
    pub fn mixture(self) -> MixtureSpec {
        let keep = |k: TaskKind| match group_of(k) {
            "edit" => self.has_edit(),
            "auxiliary" | "layout" => self.has_auxiliary(),
            _ => true,
        };
        let base: Vec<(TaskKind, f64)> = MixtureSpec::stage_two()
            .ratios()
            .iter()
            .copied()
            .filter(|&(k, _)| keep(k))
            .collect();
        let total: f64 = base.iter().map(|&(_, r)| r).sum();
        let share = if self.has_id() { 0.5 } else { 1.0 };
        let mut ratios: Vec<(TaskKind, f64)> = base.into_iter().map(|(k, r)| (k, share * r / total)).collect();
        if self.has_id() {
            ratios.insert(0, (TaskKind::Id, 0.5));
        }
        MixtureSpec::new(ratios).expect("ablation mixture")
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().trim_start_matches('(').trim_end_matches(')').to_ascii_lowercase();
        match key.as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            "e" => Ok(Self::E),
            _ => Err(format!("unknown ablation row `{s}`")),
        }
    }
}

/// Evaluation settings shared by the ablation and scaling runners.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    /// Samples per suite (per category for single-object accuracy).
    pub n: usize,
    pub seed: u64,
    pub sampler_steps: usize,
    pub scales: GuidanceScales,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n: 100,
            seed: 1234,
            sampler_steps: 50,
            scales: GuidanceScales::default(),
        }
    }
}

/// Stage I is trained once; every row then branches from it with the
/// same seed, steps and learning rate, differing only in its mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub model: ModelConfig,
    pub variants: Vec<AblationVariant>,
    pub stage_one: StageSpec,
    /// Template for the branch stage; its mixture is replaced per row.
    pub branch: StageSpec,
    pub seed: u64,
    pub threads: usize,
    pub eval: EvalSettings,
}

impl AblationPlan {
    /// Default recipe budgets for rows (a), (b), (d), (e).
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            variants: AblationVariant::DEFAULT.to_vec(),
            stage_one: StageSpec::default_for(StageName::I),
            branch: StageSpec::default_for(StageName::II),
            seed: 0,
            threads: 1,
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// Mean loss over the last 10 branch steps.
    pub final_loss: f64,
    pub single_object: Option<f64>,
    pub edit_success: Option<f64>,
    pub preservation_rmse: Option<f64>,
    pub id_correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl AblationTable {
    pub fn row(&self, v: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Adding editing keeps t2i accuracy within `tol` of row (a).
    pub fn t2i_retained(&self, tol: f64) -> Option<bool> {
        let a = self.row(AblationVariant::A)?.single_object?;
        let b = self.row(AblationVariant::B)?.single_object?;
        Some(b >= a - tol)
    }

    /// Adding auxiliary tasks does not lower edit success.
    pub fn auxiliary_helps_editing(&self) -> Option<bool> {
        let b = self.row(AblationVariant::B)?.edit_success?;
        let d = self.row(AblationVariant::D)?.edit_success?;
        Some(d >= b)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,t2i_edit,auxiliary,id,final_loss,single_object,edit_success,preservation_rmse,id_correlation\n");
        for r in &self.rows {
            let v = r.variant;
            let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                v.label(),
                v.has_edit() as u8,
                v.has_auxiliary() as u8,
                v.has_id() as u8,
                r.final_loss,
                opt(r.single_object),
                opt(r.edit_success),
                opt(r.preservation_rmse),
                opt(r.id_correlation)
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mark = |b: bool| if b { "x" } else { " " };
        let mut s = format!(
            "{:<4} {:^4} {:^4} {:^4} {:^4} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "row", "base", "edit", "aux", "id", "loss", "t2i", "edit", "rmse", "id corr"
        );
        for r in &self.rows {
            let v = r.variant;
            writeln!(
                s,
                "{:<4} {:^4} {:^4} {:^4} {:^4} {:>10.4} {:>10} {:>10} {:>10} {:>10}",
                v.label(),
                "x",
                mark(v.has_edit()),
                mark(v.has_auxiliary()),
                mark(v.has_id()),
                r.final_loss,
                cell(r.single_object),
                cell(r.edit_success),
                cell(r.preservation_rmse),
                cell(r.id_correlation)
            )
            .unwrap();
        }
        s
    }
}

fn tail_mean(losses: &[f64]) -> f64 {
    let tail = &losses[losses.len().saturating_sub(10)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

struct Scores {
    single_object: Option<f64>,
    edit: Option<(Option<f64>, Option<f64>)>,
    id: Option<f64>,
}

fn score<T: Scalar>(trainer: &Trainer, params: &crate::model::Params<T>, eval: &EvalSettings, edit: bool, id: bool) -> Result<Scores> {
    let codec = Codec::default();
    let source = ModelSource {
        model: &trainer.model,
        vocab: &trainer.vocab,
        params,
        codec: &codec,
        steps: eval.sampler_steps,
        scales: eval.scales,
    };
    let single_object = eval_categories(&source, &[Category::SingleObject], eval.n, eval.seed)?.get("single_object");
    let edit = if edit {
        let r = eval_editing(&source, eval.n, eval.seed)?;
        Some((r.get("edit_success"), r.get("preservation_rmse")))
    } else {
        None
    };
    let id = if id { eval_id(&source, eval.n, eval.seed)?.get("id_correlation") } else { None };
    Ok(Scores { single_object, edit, id })
}

/// Trains and scores every row of `plan`. Nothing is written to disk.
pub fn run_ablation<T: Scalar>(plan: &AblationPlan) -> Result<AblationTable> {
    if plan.variants.is_empty() {
        return Err(Error::Invalid("ablation plan has no rows".into()));
    }
    let model = Mmdit::new(plan.model.clone())?;
    let trainer = Trainer::new(model).with_threads(plan.threads)?;
    let opts = RunOptions::default();
    let mut base = TrainState::new(trainer.model.init_params::<T>(plan.seed), AdamWConfig::default(), plan.seed);
    run_stage(&trainer, &plan.stage_one, &mut base, &opts)?;

    let mut table = AblationTable::default();
    for &variant in &plan.variants {
        let spec = StageSpec {
            name: StageName::II,
            mixture: variant.mixture(),
            trains_external_encoder: variant.has_id(),
            ..plan.branch.clone()
        };
        let mut state = base.clone();
        let branch_opts = RunOptions {
            force: true,
            ..RunOptions::default()
        };
        let outcome = run_stage(&trainer, &spec, &mut state, &branch_opts)?;
        let losses: Vec<f64> = outcome.metrics.iter().map(|m| m.loss).collect();
        let s = score(&trainer, &state.params, &plan.eval, variant.has_edit(), variant.has_id())?;
        let (edit_success, preservation_rmse) = s.edit.unwrap_or((None, None));
        table.rows.push(AblationRow {
            variant,
            final_loss: tail_mean(&losses),
            single_object: s.single_object,
            edit_success,
            preservation_rmse,
            id_correlation: s.id,
        });
    }
    Ok(table)
}

/// The same recipe, seed and evaluation for every rung of the ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPlan {
    pub sizes: Vec<SizeTag>,
    /// Applied to each rung's ladder dims; `size`, `n_layers`, `d_model`
    /// and `n_heads` are overwritten.
    pub base: ModelConfig,
    pub stages: Vec<StageSpec>,
    pub seed: u64,
    pub threads: usize,
    pub eval: EvalSettings,
}

impl ScalingPlan {
    pub fn new(base: ModelConfig) -> Self {
        Self {
            sizes: SizeTag::LADDER.to_vec(),
            base,
            stages: StageName::ALL.iter().map(|&n| StageSpec::default_for(n)).collect(),
            seed: 0,
            threads: 1,
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub size: SizeTag,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub params: usize,
    pub final_loss: f64,
    pub single_object: Option<f64>,
    pub edit_success: Option<f64>,
    pub id_correlation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    /// Single-object accuracy never drops by more than `band` from one
    /// rung to the next.
    pub fn monotone_within(&self, band: f64) -> Option<bool> {
        let acc: Option<Vec<f64>> = self.rows.iter().map(|r| r.single_object).collect();
        Some(acc?.windows(2).all(|w| w[1] >= w[0] - band))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("size,layers,d_model,heads,params,final_loss,single_object,edit_success,id_correlation\n");
        let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.size,
                r.n_layers,
                r.d_model,
                r.n_heads,
                r.params,
                r.final_loss,
                opt(r.single_object),
                opt(r.edit_success),
                opt(r.id_correlation)
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<9} {:>6} {:>7} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "size", "layers", "d_model", "heads", "params", "loss", "t2i", "edit", "id corr"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<9} {:>6} {:>7} {:>5} {:>10} {:>10.4} {:>10} {:>10} {:>10}",
                r.size.name(),
                r.n_layers,
                r.d_model,
                r.n_heads,
                r.params,
                r.final_loss,
                cell(r.single_object),
                cell(r.edit_success),
                cell(r.id_correlation)
            )
            .unwrap();
        }
        s
    }
}

pub fn run_scaling<T: Scalar>(plan: &ScalingPlan) -> Result<ScalingTable> {
    let mut table = ScalingTable::default();
    for &size in &plan.sizes {
        let (n_layers, d_model, n_heads) = size
            .dims()
            .ok_or_else(|| Error::Invalid(format!("`{size}` is not a ladder size")))?;
        let cfg = ModelConfig {
            size,
            n_layers,
            d_model,
            n_heads,
            ..plan.base.clone()
        };
        let trainer = Trainer::new(Mmdit::new(cfg)?).with_threads(plan.threads)?;
        let mut state = TrainState::new(trainer.model.init_params::<T>(plan.seed), AdamWConfig::default(), plan.seed);
        let outcomes = run_recipe(&trainer, &plan.stages, &mut state, &RunOptions::default())?;
        let losses: Vec<f64> = outcomes.last().map(|o| o.metrics.iter().map(|m| m.loss).collect()).unwrap_or_default();
        let trains_edit = plan.stages.iter().any(|s| s.mixture.ratio(TaskKind::Edit) > 0.0);
        let trains_id = plan.stages.iter().any(|s| s.mixture.ratio(TaskKind::Id) > 0.0);
        let s = score(&trainer, &state.params, &plan.eval, trains_edit, trains_id)?;
        table.rows.push(ScalingRow {
            size,
            n_layers,
            d_model,
            n_heads,
            params: trainer.model.param_count(),
            final_loss: tail_mean(&losses),
            single_object: s.single_object,
            edit_success: s.edit.and_then(|e| e.0),
            id_correlation: s.id,
        });
    }
    Ok(table)
}
