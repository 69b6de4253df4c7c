//! Forward-pass cost per task kind and conditioning mode: token counts,
//! analytic FLOPs and measured wall time.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::flow::draw_noise;
use crate::forge::{generate, GlyphLibrary, Split, TaskKind};
use crate::model::flops::{attention_flops, forward_flops};
use crate::model::{ConditioningMode, Mmdit, ModelConfig, Params};
use crate::text::Vocabulary;
use crate::train::{prompt_embeddings, visual_condition};

pub const CSV_HEADER: &str = "task,mode,image_size,tokens,attention_flops,forward_flops,median_seconds,reps";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: TaskKind,
    pub mode: ConditioningMode,
    /// Square image side in pixels.
    pub image_size: usize,
    pub tokens: usize,
    pub attention_flops: u64,
    pub forward_flops: u64,
    pub median_seconds: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Spearman correlation between the token-quadratic attention term
    /// and median time. Rows with equal token counts tie on this term, so
    /// timing noise among them does not move the statistic.
    pub rank_correlation: f64,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn row(&self, kind: TaskKind, mode: ConditioningMode, image_size: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.mode == mode && r.image_size == image_size)
    }

    /// Median time of `num` over `den` at one mode and size.
    pub fn time_ratio(&self, mode: ConditioningMode, num: TaskKind, den: TaskKind, image_size: usize) -> Option<f64> {
        Some(self.row(num, mode, image_size)?.median_seconds / self.row(den, mode, image_size)?.median_seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.kind, r.mode, r.image_size, r.tokens, r.attention_flops, r.forward_flops, r.median_seconds, r.reps
            )
            .unwrap();
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:<9} {:>5} {:>7} {:>14} {:>12}\n",
            "task", "mode", "size", "tokens", "GFLOP/forward", "median ms"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<8} {:<9} {:>5} {:>7} {:>14.3} {:>12.2}",
                r.kind.name(),
                r.mode.name(),
                r.image_size,
                r.tokens,
                r.forward_flops as f64 / 1e9,
                r.median_seconds * 1e3
            )
            .unwrap();
        }
        writeln!(s, "rank correlation (attention flops vs time): {:.3}", self.rank_correlation).unwrap();
        s
    }
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ties share their mean rank
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma).powi(2);
        bb += (y - mb).powi(2);
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa * bb).sqrt()
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Times one forward pass per `(image size, mode, kind)` over `reps`
/// interleaved repetitions after one warm-up call each. Runs on the
/// calling thread.
pub fn bench_efficiency(
    base: &ModelConfig,
    kinds: &[TaskKind],
    modes: &[ConditioningMode],
    image_sizes: &[usize],
    reps: usize,
) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::Invalid("benchmark needs at least one repetition".into()));
    }
    let codec = Codec::default();
    let vocab = Vocabulary::default();
    let glyphs = GlyphLibrary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let samples: Vec<_> = kinds.iter().map(|&k| generate(k, &mut rng, Split::Eval, &glyphs)).collect();

    struct Case {
        row: BenchRow,
        model: Mmdit,
        params: Params<f32>,
        input: usize,
        times: Vec<f64>,
    }
    let mut cases = Vec::new();
    for &size in image_sizes {
        let (lh, lw) = codec.latent_dims(size, size)?;
        for &mode in modes {
            let cfg = ModelConfig {
                latent_h: lh,
                latent_w: lw,
                ..base.clone()
            }
            .with_mode(mode);
            let model = Mmdit::new(cfg.clone())?;
            let params = Params::init_dense(model.layout.clone(), 0, 1.0);
            for (i, &kind) in kinds.iter().enumerate() {
                cases.push(Case {
                    row: BenchRow {
                        kind,
                        mode,
                        image_size: size,
                        tokens: cfg.count_tokens(kind, mode),
                        attention_flops: attention_flops(&cfg, kind, mode),
                        forward_flops: forward_flops(&cfg, kind, mode),
                        median_seconds: 0.0,
                        reps,
                    },
                    model: model.clone(),
                    params: params.clone(),
                    input: i,
                    times: Vec::with_capacity(reps),
                });
            }
        }
    }

    let run = |c: &Case, noise_rng: &mut ChaCha8Rng| -> Result<f64> {
        let cfg = &c.model.config;
        let mut s = samples[c.input].clone();
        if s.input_image.height != cfg.latent_h * codec.factor {
            s = resize_sample(&s, cfg.latent_h * codec.factor);
        }
        let (prompt, _) = prompt_embeddings(&c.model, &vocab, &c.params, &s)?;
        let cond = visual_condition::<f32>(&codec, &s, cfg.mode)?;
        let z = draw_noise::<f32, _>(noise_rng, cfg.latent_h, cfg.latent_w, cfg.latent_channels);
        let start = Instant::now();
        let out = c.model.predict(&c.params, &prompt, 0.5, &z, cond.as_ref().map(|(v, m)| (v, m)))?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        Ok(elapsed)
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(1);
    for c in &cases {
        run(c, &mut noise_rng)?;
    }
    for _ in 0..reps {
        for c in cases.iter_mut() {
            let t = run(c, &mut noise_rng)?;
            c.times.push(t);
        }
    }
    let rows: Vec<BenchRow> = cases
        .into_iter()
        .map(|mut c| {
            c.row.median_seconds = median(&mut c.times);
            c.row
        })
        .collect();
    let flops: Vec<f64> = rows.iter().map(|r| r.attention_flops as f64).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.median_seconds).collect();
    let mut warnings = Vec::new();
    if reps < 3 {
        warnings.push(format!("only {reps} repetitions; medians are unreliable below 3"));
    }
    Ok(BenchReport {
        rank_correlation: spearman(&flops, &times),
        rows,
        warnings,
    })
}

/// Nearest-neighbour rescale of a sample's input image and mask to
/// `side x side` pixels; only the cost of the pass matters here.
fn resize_sample(s: &crate::forge::TaskSample, side: usize) -> crate::forge::TaskSample {
    let img = &s.input_image;
    let mut out = s.clone();
    out.input_image = crate::grid::Grid::zeros(side, side, img.channels);
    out.input_mask = crate::grid::MaskImage::filled(side, side, true);
    for y in 0..side {
        for x in 0..side {
            let (sy, sx) = (y * img.height / side, x * img.width / side);
            for c in 0..img.channels {
                out.input_image.set(y, x, c, img.get(sy, sx, c));
            }
            out.input_mask.set(y, x, s.input_mask.get(sy, sx));
        }
    }
    out
}
