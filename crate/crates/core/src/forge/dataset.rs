//! On-disk datasets: PPM/PGM files per sample plus a JSON-lines index.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate, GlyphLibrary, SceneSpec, Split, TaskKind, TaskMeta};
use crate::error::{Error, Result};
use crate::imageio::{write_pgm, write_ppm};

pub const INDEX_FILE: &str = "samples.jsonl";

/// One line of the index. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: String,
    pub scene: SceneSpec,
    pub meta: TaskMeta,
    pub input: String,
    pub mask: String,
    pub target: String,
    pub external: Option<String>,
}

/// Generates `n_per_task` training samples for each kind, in the order
/// given, from one generator seeded with `seed`.
pub fn write_dataset(
    out: &Path,
    kinds: &[TaskKind],
    n_per_task: usize,
    seed: u64,
    glyphs: &GlyphLibrary,
) -> Result<Vec<DatasetRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(kinds.len() * n_per_task);
    for &kind in kinds {
        let dir = out.join(kind.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n_per_task {
            let s = generate(kind, &mut rng, Split::Train, glyphs);
            let id = format!("{}-{i:06}", kind.name());
            let rel = |suffix: &str| format!("{}/{id}_{suffix}", kind.name());
            let r = DatasetRecord {
                id: id.clone(),
                kind,
                prompt: s.prompt.clone(),
                scene: s.scene.clone(),
                meta: s.meta.clone(),
                input: rel("input.ppm"),
                mask: rel("mask.pgm"),
                target: rel("target.ppm"),
                external: s.external.as_ref().map(|_| rel("external.ppm")),
            };
            write_ppm(&out.join(&r.input), &s.input_image)?;
            write_pgm(&out.join(&r.mask), &s.input_mask)?;
            write_ppm(&out.join(&r.target), &s.target_image)?;
            if let (Some(path), Some(img)) = (&r.external, &s.external) {
                write_ppm(&out.join(path), img)?;
            }
            records.push(r);
        }
    }
    let path = out.join(INDEX_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for r in &records {
        let line = serde_json::to_string(r).map_err(|e| Error::Invalid(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

pub fn read_index(root: &Path) -> Result<Vec<DatasetRecord>> {
    let path = root.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Invalid(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}
