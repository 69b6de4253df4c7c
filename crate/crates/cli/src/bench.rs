use std::path::PathBuf;

use anyhow::{Context, Result};
use unidiff::config::FlatConfig;
use unidiff::eval::bench_efficiency;
use unidiff::model::SizeTag;
use unidiff::train::RecipeConfig;
use unidiff::{ConditioningMode, ModelConfig, TaskKind};

use crate::manifest::RunManifest;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Training config supplying the model; micro-XL by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "channel,sequence")]
    pub modes: Vec<ConditioningMode>,
    #[arg(long, value_delimiter = ',', default_value = "t2i,edit")]
    pub kinds: Vec<TaskKind>,
    /// Square image sides in pixels.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: &Args, m: &mut RunManifest) -> Result<()> {
    let model = match &a.config {
        Some(p) => {
            let flat = FlatConfig::load(p).with_context(|| format!("config {}", p.display()))?;
            m.snapshot(&flat);
            RecipeConfig::from_flat(&flat)?.model
        }
        None => {
            let model = ModelConfig::micro(SizeTag::MicroXL);
            m.snapshot(&model.to_flat("model."));
            model
        }
    };
    let join = |v: Vec<String>| v.join(",");
    m.set("modes", join(a.modes.iter().map(|x| x.to_string()).collect()));
    m.set("kinds", join(a.kinds.iter().map(|x| x.to_string()).collect()));
    m.set("sizes", join(a.sizes.iter().map(|x| x.to_string()).collect()));
    m.set("reps", a.reps);
    let report = bench_efficiency(&model, &a.kinds, &a.modes, &a.sizes, a.reps)?;
    for w in &report.warnings {
        m.warn(w.clone());
    }
    m.detail("rank_correlation", report.rank_correlation);
    for &mode in &a.modes {
        for &size in &a.sizes {
            if let Some(r) = report.time_ratio(mode, TaskKind::Edit, TaskKind::T2i, size) {
                m.detail(&format!("time_ratio.edit_over_t2i.{mode}.{size}"), r);
            }
        }
    }
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join("bench.csv");
    std::fs::write(&path, report.to_csv())?;
    m.output(&a.out, &path);
    print!("{}", report.to_table());
    Ok(())
}
