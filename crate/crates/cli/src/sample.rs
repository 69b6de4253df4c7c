use std::path::PathBuf;

use anyhow::{bail, Result};
use unidiff::eval::{ImageSource, ModelSource};
use unidiff::forge::{SceneSpec, TaskMeta, CANVAS};
use unidiff::imageio::{read_pgm, read_ppm, write_ppm};
use unidiff::train::checkpoint;
use unidiff::{Codec, GuidanceScales, Grid, MaskImage, TaskKind, TaskSample};

use crate::manifest::RunManifest;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Prompt starting with a task token, e.g. `<t2i> a red circle`.
    #[arg(long)]
    pub prompt: String,
    /// Input image (binary PPM). Omit for text-to-image.
    #[arg(long)]
    pub input_image: Option<PathBuf>,
    /// Mask of the region to generate (binary PGM); all ones by default.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Identity crop (binary PPM) for prompts with `<p>` placeholders.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pub alpha_x: f64,
    #[arg(long, default_value_t = 1.5)]
    pub alpha_v: f64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; the image is written to `<out>/<name>.ppm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "sample")]
    pub name: String,
}

/// Task implied by the leading token and the supplied images.
fn task_kind(prompt: &str, has_input: bool, has_external: bool) -> Result<TaskKind> {
    let first = prompt.split_whitespace().next().unwrap_or("");
    let kind = match first {
        "<t2i>" if has_input => TaskKind::Inpaint,
        "<t2i>" if has_external => TaskKind::Id,
        _ => match TaskKind::ALL.into_iter().find(|k| k.task_token() == first) {
            Some(k) => k,
            None => bail!("prompt must start with a task token, found `{first}`"),
        },
    };
    Ok(kind)
}

pub fn run(a: &Args, m: &mut RunManifest) -> Result<()> {
    m.seed = Some(a.seed);
    m.set("ckpt", a.ckpt.display());
    m.set("prompt", &a.prompt);
    m.set("alpha_x", a.alpha_x);
    m.set("alpha_v", a.alpha_v);
    m.set("steps", a.steps);
    for (k, v) in [("input_image", &a.input_image), ("mask", &a.mask), ("external", &a.external)] {
        if let Some(p) = v {
            m.set(k, p.display());
        }
    }
    if a.steps == 0 {
        bail!("--steps must be positive");
    }
    let loaded = checkpoint::load_params::<f32>(&a.ckpt)?;
    let codec = Codec::default();
    let side = loaded.model.config.image_height(codec.factor);
    let kind = task_kind(&a.prompt, a.input_image.is_some(), a.external.is_some())?;
    m.detail("task", kind);
    if kind.has_visual_condition() && a.input_image.is_none() {
        bail!("`{}` prompts need --input-image", kind.task_token());
    }
    let input_image = match &a.input_image {
        Some(p) => read_ppm(p)?,
        None => Grid::filled(side, side, 3, -1.0),
    };
    let input_mask = match &a.mask {
        Some(p) => read_pgm(p)?,
        None => MaskImage::filled(input_image.height, input_image.width, true),
    };
    if (input_image.height, input_image.width) != (side, side) {
        bail!("input image is {}x{}, the model expects {side}x{side}", input_image.width, input_image.height);
    }
    if (input_mask.height, input_mask.width) != (side, side) {
        bail!("mask is {}x{}, the model expects {side}x{side}", input_mask.width, input_mask.height);
    }
    let external = a.external.as_deref().map(read_ppm).transpose()?;
    if kind == TaskKind::Id && external.is_none() {
        bail!("identity prompts need --external");
    }
    let sample = TaskSample {
        kind,
        prompt: a.prompt.clone(),
        input_image,
        input_mask,
        target_image: Grid::zeros(CANVAS, CANVAS, 3),
        external,
        scene: SceneSpec::default(),
        meta: TaskMeta::Plain,
    };
    let source = ModelSource {
        model: &loaded.model,
        vocab: &loaded.vocab,
        params: &loaded.params,
        codec: &codec,
        steps: a.steps,
        scales: GuidanceScales {
            alpha_x: a.alpha_x,
            alpha_v: a.alpha_v,
        },
    };
    let image = source.generate(&sample, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    let path = a.out.join(format!("{}.ppm", a.name));
    write_ppm(&path, &image)?;
    m.output(&a.out, &path);
    println!("wrote {}", path.display());
    Ok(())
}
