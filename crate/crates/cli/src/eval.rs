use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use unidiff::config::FlatConfig;
use unidiff::eval::{
    eval_auxiliary, eval_compositional, eval_editing, eval_id, run_ablation, run_scaling, AblationPlan,
    AblationVariant, EvalReport, EvalSettings, ImageSource, ModelSource, Oracle, ScalingPlan,
};
use unidiff::model::SizeTag;
use unidiff::train::{checkpoint, RecipeConfig, StageName};
use unidiff::{Codec, GuidanceScales};

use crate::manifest::RunManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Compositional,
    Edit,
    Id,
    Auxiliary,
    Ablation,
    Scaling,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Compositional => "compositional",
            Suite::Edit => "edit",
            Suite::Id => "id",
            Suite::Auxiliary => "auxiliary",
            Suite::Ablation => "ablation",
            Suite::Scaling => "scaling",
        }
    }

    fn trains(self) -> bool {
        matches!(self, Suite::Ablation | Suite::Scaling)
    }
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Checkpoint to score.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score ground-truth targets instead of a model.
    #[arg(long)]
    pub oracle: bool,
    /// Training config for the ablation and scaling suites.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Samples per suite (per category for compositional).
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 4.0)]
    pub alpha_x: f64,
    #[arg(long, default_value_t = 1.5)]
    pub alpha_v: f64,
    /// Ablation rows, e.g. `a,b,d,e`.
    #[arg(long, value_delimiter = ',', default_value = "a,b,d,e")]
    pub rows: Vec<AblationVariant>,
    /// Ladder sizes for the scaling suite.
    #[arg(long, value_delimiter = ',', default_value = "micro-B,micro-L,micro-XL")]
    pub sizes: Vec<SizeTag>,
    #[arg(long)]
    pub out: PathBuf,
}

fn score<S: ImageSource>(suite: Suite, source: &S, n: usize, seed: u64) -> Result<EvalReport> {
    Ok(match suite {
        Suite::Compositional => eval_compositional(source, n, seed)?,
        Suite::Edit => eval_editing(source, n, seed)?,
        Suite::Id => eval_id(source, n, seed)?,
        Suite::Auxiliary => eval_auxiliary(source, n, seed)?,
        Suite::Ablation | Suite::Scaling => unreachable!("training suites"),
    })
}

pub fn run(a: &Args, threads: usize, m: &mut RunManifest) -> Result<()> {
    m.seed = Some(a.seed);
    m.set("suite", a.suite.name());
    m.set("n", a.n);
    m.set("steps", a.steps);
    m.set("alpha_x", a.alpha_x);
    m.set("alpha_v", a.alpha_v);
    m.set("oracle", a.oracle);
    let settings = EvalSettings {
        n: a.n,
        seed: a.seed,
        sampler_steps: a.steps,
        scales: GuidanceScales {
            alpha_x: a.alpha_x,
            alpha_v: a.alpha_v,
        },
    };
    std::fs::create_dir_all(&a.out)?;
    if a.suite.trains() {
        if a.oracle || a.ckpt.is_some() {
            bail!("the {} suite trains its own models; pass --config, not --ckpt or --oracle", a.suite.name());
        }
        let Some(path) = &a.config else {
            bail!("the {} suite needs --config", a.suite.name());
        };
        let flat = FlatConfig::load(path).with_context(|| format!("config {}", path.display()))?;
        let recipe = RecipeConfig::from_flat(&flat)?;
        m.snapshot(&flat);
        let (csv, table, file) = if a.suite == Suite::Ablation {
            let rows: Vec<String> = a.rows.iter().map(|r| r.to_string()).collect();
            m.set("rows", rows.join(","));
            let plan = AblationPlan {
                model: recipe.model.clone(),
                variants: a.rows.clone(),
                stage_one: recipe.stage(StageName::I).clone(),
                branch: recipe.stage(StageName::II).clone(),
                seed: recipe.seed,
                threads,
                eval: settings,
            };
            let t = run_ablation::<f32>(&plan)?;
            if let Some(ok) = t.t2i_retained(0.03) {
                m.detail("check.t2i_retained", ok);
            }
            if let Some(ok) = t.auxiliary_helps_editing() {
                m.detail("check.auxiliary_helps_editing", ok);
            }
            (t.to_csv(), t.to_table(), "ablation.csv")
        } else {
            let sizes: Vec<String> = a.sizes.iter().map(|s| s.to_string()).collect();
            m.set("sizes", sizes.join(","));
            let plan = ScalingPlan {
                sizes: a.sizes.clone(),
                base: recipe.model.clone(),
                stages: recipe.stages.to_vec(),
                seed: recipe.seed,
                threads,
                eval: settings,
            };
            let t = run_scaling::<f32>(&plan)?;
            if let Some(ok) = t.monotone_within(0.02) {
                m.detail("check.monotone", ok);
            }
            (t.to_csv(), t.to_table(), "scaling.csv")
        };
        let path = a.out.join(file);
        std::fs::write(&path, csv)?;
        m.output(&a.out, &path);
        print!("{table}");
        return Ok(());
    }

    let report = match (&a.ckpt, a.oracle) {
        (Some(_), true) => bail!("--ckpt and --oracle are mutually exclusive"),
        (None, false) => bail!("pass --ckpt or --oracle"),
        (None, true) => score(a.suite, &Oracle, a.n, a.seed)?,
        (Some(ckpt), false) => {
            m.set("ckpt", ckpt.display());
            let loaded = checkpoint::load_params::<f32>(ckpt)?;
            let codec = Codec::default();
            let source = ModelSource {
                model: &loaded.model,
                vocab: &loaded.vocab,
                params: &loaded.params,
                codec: &codec,
                steps: a.steps,
                scales: settings.scales,
            };
            score(a.suite, &source, a.n, a.seed)?
        }
    };
    for (k, v) in &report.metrics {
        if let Some(v) = v {
            m.detail(k, v);
        }
    }
    let path = a.out.join(format!("eval-{}.csv", a.suite.name()));
    std::fs::write(&path, report.to_csv())?;
    m.output(&a.out, &path);
    print!("{}", report.to_table());
    Ok(())
}
