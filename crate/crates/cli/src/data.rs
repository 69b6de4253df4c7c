use std::path::PathBuf;

use anyhow::Result;
use unidiff::forge::{write_dataset, GlyphLibrary, INDEX_FILE};
use unidiff::TaskKind;

use crate::manifest::RunManifest;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Dataset root.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_per_task: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated task kinds; all kinds by default.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Vec<TaskKind>,
}

pub fn run(a: &Args, m: &mut RunManifest) -> Result<()> {
    let kinds = if a.kinds.is_empty() { TaskKind::ALL.to_vec() } else { a.kinds.clone() };
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    m.seed = Some(a.seed);
    m.set("n_per_task", a.n_per_task);
    m.set("kinds", names.join(","));
    let records = write_dataset(&a.out, &kinds, a.n_per_task, a.seed, &GlyphLibrary::default())?;
    m.outputs.push(INDEX_FILE.into());
    for r in &records {
        m.outputs.extend([r.input.clone(), r.mask.clone(), r.target.clone()]);
        m.outputs.extend(r.external.clone());
    }
    m.detail("samples", records.len());
    println!("wrote {} samples to {}", records.len(), a.out.display());
    Ok(())
}
