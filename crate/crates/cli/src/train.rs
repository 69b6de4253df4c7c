use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use unidiff::config::FlatConfig;
use unidiff::train::checkpoint;
use unidiff::train::{run_recipe, run_stage, RecipeConfig, RunOptions, StageName, StageOutcome};

use crate::manifest::RunManifest;

/// `I`, `II`, `III` or `all`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageArg {
    One(StageName),
    All,
}

fn parse_stage(s: &str) -> Result<StageArg, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(StageArg::All);
    }
    s.parse().map(StageArg::One).map_err(|e: unidiff::Error| e.to_string())
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Flat `key = value` training config. Defaults to the config stored in
    /// the checkpoint when resuming.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stage to run (`I`, `II`, `III`), or `all` for the remaining stages.
    #[arg(long, default_value = "all", value_parser = parse_stage)]
    pub stage: StageArg,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Allow running stages out of order.
    #[arg(long)]
    pub force: bool,
    /// Output root for metrics, checkpoints and manifests.
    #[arg(long)]
    pub out: PathBuf,
    /// Stop once this global step is reached; the run can be resumed.
    #[arg(long)]
    pub stop_at: Option<u64>,
}

fn checkpoints(out: &Path) -> BTreeSet<PathBuf> {
    std::fs::read_dir(out.join("checkpoints"))
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default()
}

pub fn run(a: &Args, threads: usize, m: &mut RunManifest) -> Result<()> {
    let load_config = |p: &Path| FlatConfig::load(p).with_context(|| format!("config {}", p.display()));
    let (recipe, mut state) = match (&a.config, &a.resume) {
        (config, Some(ckpt)) => {
            let (loaded, state) = checkpoint::load::<f32>(ckpt)?;
            let flat = match config {
                Some(p) => load_config(p)?,
                None => loaded.config.clone(),
            };
            let recipe = RecipeConfig::from_flat(&flat)?;
            if recipe.model != loaded.model.config {
                bail!("config model does not match the checkpoint in {}", ckpt.display());
            }
            m.set("resume", ckpt.display());
            (recipe, state)
        }
        (Some(p), None) => {
            let recipe = RecipeConfig::from_flat(&load_config(p)?)?;
            let model = unidiff::Mmdit::new(recipe.model.clone())?;
            let state = recipe.fresh_state::<f32>(&model);
            (recipe, state)
        }
        (None, None) => bail!("either --config or --resume is required"),
    };
    let snapshot = recipe.to_flat();
    m.snapshot(&snapshot);
    m.seed = Some(recipe.seed);
    let specs = match a.stage {
        StageArg::One(n) => vec![recipe.stage(n).clone()],
        StageArg::All => recipe.stages.to_vec(),
    };
    for s in &specs {
        m.detail(&format!("stage.{}.mixture", s.name), &s.mixture);
    }
    let trainer = recipe.trainer(threads)?;
    let opts = RunOptions {
        out: Some(a.out.clone()),
        checkpoint_every: recipe.checkpoint_every,
        force: a.force,
        stop_at: a.stop_at,
        snapshot,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let before = checkpoints(&a.out);
    let start_step = state.step;
    let result: unidiff::Result<Vec<StageOutcome>> = match a.stage {
        StageArg::One(_) => run_stage(&trainer, &specs[0], &mut state, &opts).map(|o| vec![o]),
        StageArg::All => run_recipe(&trainer, &specs, &mut state, &opts),
    };
    m.outputs.push("metrics.csv".into());
    for p in checkpoints(&a.out).difference(&before) {
        m.output(&a.out, p);
    }
    if let Err(unidiff::Error::LossNan { dump: Some(d), .. }) = &result {
        m.output(&a.out, d);
    }
    let outcomes = result?;
    let done: Vec<&str> = state.completed.iter().map(|n| n.name()).collect();
    m.detail("start_step", start_step);
    m.detail("end_step", state.step);
    m.detail("completed", done.join(","));
    if let Some(last) = outcomes.iter().rev().find_map(|o| o.metrics.last()) {
        m.detail("final_loss", last.loss);
    }
    for o in &outcomes {
        if let (Some(first), Some(last)) = (o.metrics.first(), o.metrics.last()) {
            println!(
                "steps {}..{}: loss {:.5} -> {:.5}{}",
                first.step,
                last.step,
                first.loss,
                last.loss,
                if o.finished { "" } else { " (stopped)" }
            );
        }
    }
    println!("step {} complete; stages done: [{}]", state.step, done.join(", "));
    Ok(())
}
