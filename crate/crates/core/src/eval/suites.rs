//! Verifier-scored suites over held-out scenes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::EvalReport;
use super::ImageSource;
use crate::error::Result;
use crate::forge::scene::{Cell, Object, SceneSpec, Size};
use crate::forge::tasks::{is_held_out, random_scene};
use crate::forge::{generate, make_t2i, verify, CheckName, Color, GlyphLibrary, Shape, Split, TaskKind, VerifyConfig};

/// Compositional prompt families and the checks each is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    SingleObject,
    Color,
    TwoObject,
    Counting,
    Position,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::SingleObject,
        Category::Color,
        Category::TwoObject,
        Category::Counting,
        Category::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::SingleObject => "single_object",
            Category::Color => "color",
            Category::TwoObject => "two_object",
            Category::Counting => "counting",
            Category::Position => "position",
        }
    }

    fn checks(self) -> &'static [CheckName] {
        match self {
            Category::SingleObject | Category::TwoObject => &[CheckName::Presence],
            Category::Color => &[CheckName::Presence, CheckName::Color],
            Category::Counting => &[CheckName::Count],
            Category::Position => &[CheckName::Position],
        }
    }

    /// A held-out scene of this family.
    pub fn scene<R: Rng>(self, rng: &mut R) -> SceneSpec {
        match self {
            Category::SingleObject | Category::Color => random_scene(rng, Split::Eval, 1, &[]),
            Category::TwoObject | Category::Position => loop {
                let s = random_scene(rng, Split::Eval, 2, &[]);
                let (a, b) = (&s.objects[0], &s.objects[1]);
                if (a.shape, a.color) != (b.shape, b.color) {
                    break s;
                }
            },
            Category::Counting => loop {
                let n = rng.random_range(2..=3);
                let shape = *Shape::ALL.choose(rng).unwrap();
                let color = *Color::ALL.choose(rng).unwrap();
                let cells: Vec<Cell> = Cell::all().collect::<Vec<_>>().choose_multiple(rng, n).copied().collect();
                let objects = cells
                    .into_iter()
                    .map(|cell| Object {
                        shape,
                        color,
                        cell,
                        size: *Size::ALL.choose(rng).unwrap(),
                    })
                    .collect();
                let s = SceneSpec::new(objects).expect("distinct cells");
                if is_held_out(&s) {
                    break s;
                }
            },
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `n` prompts per category from held-out scenes.
pub fn eval_compositional<S: ImageSource>(source: &S, n: usize, seed: u64) -> Result<EvalReport> {
    eval_categories(source, &Category::ALL, n, seed)
}

/// [`eval_compositional`] restricted to some categories. Each category
/// draws from its own stream, so a subset scores identically to the
/// same categories in the full suite.
pub fn eval_categories<S: ImageSource>(source: &S, categories: &[Category], n: usize, seed: u64) -> Result<EvalReport> {
    let cfg = VerifyConfig::default();
    let mut report = EvalReport::new("compositional", seed);
    for &cat in categories {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cat as u64);
        let mut hits = Vec::with_capacity(n);
        for _ in 0..n {
            let sample = make_t2i(&cat.scene(&mut rng))?;
            let image = source.generate(&sample, rng.random())?;
            let r = verify(&sample, &image, &cfg);
            let ok = cat.checks().iter().all(|&c| r.get(c).is_some_and(|c| c.passed));
            hits.push(ok as u8 as f64);
        }
        report.samples += n;
        report.set(cat.name(), mean(&hits));
    }
    Ok(report)
}

/// Instruction success and untouched-region RMSE over `n` held-out edits.
pub fn eval_editing<S: ImageSource>(source: &S, n: usize, seed: u64) -> Result<EvalReport> {
    let cfg = VerifyConfig::default();
    let glyphs = GlyphLibrary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut rmse) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let sample = generate(TaskKind::Edit, &mut rng, Split::Eval, &glyphs);
        let image = source.generate(&sample, rng.random())?;
        let r = verify(&sample, &image, &cfg);
        hits.push(r.get(CheckName::Instruction).is_some_and(|c| c.passed) as u8 as f64);
        rmse.push(r.get(CheckName::Preservation).map_or(f64::NAN, |c| c.value));
    }
    let mut report = EvalReport::new("edit", seed);
    report.samples = n;
    report.set("edit_success", mean(&hits));
    report.set("preservation_rmse", mean(&rmse));
    Ok(report)
}

/// Mean best correlation between generations and their conditioning
/// glyph over `n` identity samples.
pub fn eval_id<S: ImageSource>(source: &S, n: usize, seed: u64) -> Result<EvalReport> {
    let cfg = VerifyConfig::default();
    let glyphs = GlyphLibrary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corr = Vec::new();
    for _ in 0..n {
        let sample = generate(TaskKind::Id, &mut rng, Split::Eval, &glyphs);
        let image = source.generate(&sample, rng.random())?;
        corr.push(verify(&sample, &image, &cfg).get(CheckName::Correlation).map_or(0.0, |c| c.value));
    }
    let mut report = EvalReport::new("id", seed);
    report.samples = n;
    report.set("id_correlation", mean(&corr));
    Ok(report)
}

/// Mean pixel agreement for depth, pose and segmentation, `n` each.
pub fn eval_auxiliary<S: ImageSource>(source: &S, n: usize, seed: u64) -> Result<EvalReport> {
    let cfg = VerifyConfig::default();
    let glyphs = GlyphLibrary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EvalReport::new("auxiliary", seed);
    for (kind, key) in [
        (TaskKind::Depth, "depth_agreement"),
        (TaskKind::Pose, "pose_agreement"),
        (TaskKind::Seg, "seg_agreement"),
    ] {
        let mut agree = Vec::new();
        for _ in 0..n {
            let sample = generate(kind, &mut rng, Split::Eval, &glyphs);
            let image = source.generate(&sample, rng.random())?;
            agree.push(verify(&sample, &image, &cfg).get(CheckName::PixelAgreement).map_or(0.0, |c| c.value));
        }
        report.samples += n;
        report.set(key, mean(&agree));
    }
    Ok(report)
}
