//! Acceptance run: one PASS / FAIL / BLOCKED line per criterion on stderr.
//! Exits non-zero when any criterion fails. Criteria that need the full
//! training recipe only run with `UNIDIFF_FULL_RECIPE=1`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use unidiff::eval::{
    bench_efficiency, eval_auxiliary, eval_categories, eval_compositional, eval_editing, eval_id, run_ablation,
    AblationPlan, Category, EvalSettings, ModelSource, Oracle,
};
use unidiff::flow::{
    cfg_combine, draw_noise, initial_noise, interpolate, sample_latent, target_velocity, SampleSpec, VelocityModel,
};
use unidiff::forge::tasks::ID_SLOTS;
use unidiff::forge::{
    generate, make_id, make_layout, make_t2i, render, verify, Cell, CheckName, Color, GlyphLibrary, Object, SceneSpec,
    Shape, Size, Split, TaskKind, VerifyConfig,
};
use unidiff::forge::glyph::composite;
use unidiff::forge::scene::blank_canvas;
use unidiff::imageio::{encode_latent, encode_ppm};
use unidiff::model::{ParamGroup, SizeTag};
use unidiff::text::{null_prompt, Vocabulary};
use unidiff::train::checkpoint;
use unidiff::train::metrics::deterministic_columns;
use unidiff::train::{
    grad_check, run_recipe, sample_batch, AdamW, AdamWConfig, DropoutRates, MixtureSpec, RecipeConfig, RunOptions,
    Trainable, TrainState, Trainer,
};
use unidiff::{
    Codec, ConditioningMode, GuidanceScales, Latent, LatentMask, Mmdit, ModelConfig, Params, PromptEmbeddings,
    VelocityField,
};

const IDENTITY_REL_TOL: f64 = 1e-12;
const IDENTITY_TENSORS: usize = 1000;
const SAMPLER_TOL: f64 = 1e-5;
const GRAD_WEIGHTS: usize = 30;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const BENCH_REPS: usize = 30;
const CHANNEL_RATIO: (f64, f64) = (0.9, 1.1);
const SEQUENCE_RATIO_MIN: f64 = 1.8;
const MIXTURE_DRAWS: usize = 10_000;
const MIXTURE_SIGMAS: f64 = 3.0;
const ID_FRACTION: (f64, f64) = (0.47, 0.53);
const OVERFIT_STEPS: u64 = 200;
const OVERFIT_LR: f64 = 1e-3;
const OVERFIT_BATCH: usize = 2;
const OVERFIT_REDUCTION: f64 = 0.5;
const ZERO_INIT_REL_TOL: f64 = 1e-6;
const FULL_SINGLE_OBJECT: f64 = 0.90;
const FULL_EDIT_SUCCESS: f64 = 0.60;
const FULL_EDIT_RMSE: f64 = 0.08;
const FULL_SEG_AGREEMENT: f64 = 0.90;
const FULL_ID_CORRELATION: f64 = 0.5;
const FULL_EVAL_N: usize = 100;
const ABLATION_T2I_BAND: f64 = 0.03;
const FULL_RECIPE_ENV: &str = "UNIDIFF_FULL_RECIPE";

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn full_recipe() -> bool {
    std::env::var(FULL_RECIPE_ENV).is_ok_and(|v| v == "1")
}

fn threads() -> usize {
    std::env::var("UNIDIFF_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn normal_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Latent<f64> {
    let data = (0..h * w * c).map(|_| StandardNormal.sample(rng)).collect();
    Latent::from_vec(h, w, c, data).unwrap()
}

fn analytic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut endpoints = true;
    let mut worst = 0.0f64;
    let mut telescopes = true;
    for _ in 0..IDENTITY_TENSORS {
        let z = normal_grid(&mut rng, 4, 4, 12);
        let eps = normal_grid(&mut rng, 4, 4, 12);
        endpoints &= interpolate(&z, &eps, 1.0).unwrap() == z && interpolate(&z, &eps, 0.0).unwrap() == eps;
        let t: f64 = rng.random();
        let zt = interpolate(&z, &eps, t).unwrap();
        let u = target_velocity(&z, &eps).unwrap();
        let scale = z.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = zt
            .data
            .iter()
            .zip(&u.data)
            .zip(&z.data)
            .fold(0.0f64, |m, ((a, b), c)| m.max((a + (1.0 - t) * b - c).abs()));
        worst = worst.max(err / scale);
        let other = normal_grid(&mut rng, 4, 4, 12);
        telescopes &= cfg_combine(&other, &eps, &z, GuidanceScales::UNIT).unwrap() == z;
        let zero = GuidanceScales {
            alpha_x: 0.0,
            alpha_v: 0.0,
        };
        telescopes &= cfg_combine(&other, &eps, &z, zero).unwrap() == other;
    }
    judge(
        endpoints && telescopes && worst <= IDENTITY_REL_TOL,
        format!(
            "endpoints exact: {endpoints}; max relative identity error {worst:.2e} (tol {IDENTITY_REL_TOL:.0e}); guidance telescopes exactly: {telescopes}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut tr = Trainer::new(Mmdit::new(ModelConfig::micro(SizeTag::MicroB)).unwrap());
    tr.dropout = DropoutRates::NONE;
    let params = Params::<f64>::init_dense(tr.model.layout.clone(), 11, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = generate(TaskKind::Id, &mut rng, Split::Train, &tr.glyphs);
    let d = tr.draw(s, &mut rng);
    let r = grad_check(&tr, &params, &d, GRAD_WEIGHTS, GRAD_STEP, 1).unwrap();
    let groups = r.groups();
    let all = groups == ParamGroup::ALL.to_vec();
    judge(
        all && r.weights.len() >= 25 && r.max_rel_error < GRAD_TOL,
        format!(
            "micro-B float64, {} weights over {} of {} groups, max relative error {:.2e} (tol {GRAD_TOL:.0e})",
            r.weights.len(),
            groups.len(),
            ParamGroup::ALL.len(),
            r.max_rel_error
        ),
    )
}

/// Velocity `target - noise` regardless of inputs.
struct Constant(VelocityField<f64>);

impl VelocityModel<f64> for Constant {
    fn velocity(
        &self,
        _: &PromptEmbeddings<f64>,
        _: f64,
        _: &Latent<f64>,
        _: Option<(&Latent<f64>, &LatentMask<f64>)>,
    ) -> unidiff::Result<VelocityField<f64>> {
        Ok(self.0.clone())
    }
}

fn oracle_sampler() -> Outcome {
    let model = Mmdit::new(ModelConfig::tiny()).unwrap();
    let params = model.init_params::<f64>(0);
    let np = null_prompt(&Vocabulary::default(), &params, &model.index.text);
    let dims = (32, 32, 12);
    let target: Latent<f64> = draw_noise::<f32, _>(&mut ChaCha8Rng::seed_from_u64(99), dims.0, dims.1, dims.2).cast();
    let seed = 5;
    let eps = initial_noise::<f64>(seed, dims.0, dims.1, dims.2);
    let oracle = Constant(target_velocity(&target, &eps).unwrap());
    let spec = |steps| SampleSpec {
        prompt: np.clone(),
        null_prompt: np.clone(),
        visual: None,
        latent_dims: dims,
        steps,
        seed,
        scales: GuidanceScales::default(),
    };
    let one = sample_latent(&oracle, &spec(1)).unwrap();
    let fifty = sample_latent(&oracle, &spec(50)).unwrap().max_abs_diff(&target);
    let exact = one == target;
    judge(
        exact && fifty <= SAMPLER_TOL,
        format!("1 step exact: {exact}; 50 steps max abs error {fifty:.2e} (tol {SAMPLER_TOL:.0e})"),
    )
}

fn sequence_length() -> Outcome {
    let xl = ModelConfig::micro(SizeTag::MicroXL);
    let channel: Vec<usize> = TaskKind::ALL.iter().map(|&k| xl.count_tokens(k, ConditioningMode::Channel)).collect();
    let same = channel.iter().all(|&n| n == channel[0]);
    let seq = (
        xl.count_tokens(TaskKind::Edit, ConditioningMode::Sequence),
        xl.count_tokens(TaskKind::T2i, ConditioningMode::Sequence),
    );
    let modes = [ConditioningMode::Channel, ConditioningMode::Sequence];
    let r = bench_efficiency(&xl, &[TaskKind::T2i, TaskKind::Edit], &modes, &[64], BENCH_REPS).unwrap();
    let cr = r.time_ratio(ConditioningMode::Channel, TaskKind::Edit, TaskKind::T2i, 64).unwrap();
    let sr = r.time_ratio(ConditioningMode::Sequence, TaskKind::Edit, TaskKind::T2i, 64).unwrap();
    judge(
        same && seq == (536, 280) && (CHANNEL_RATIO.0..=CHANNEL_RATIO.1).contains(&cr) && sr >= SEQUENCE_RATIO_MIN,
        format!(
            "channel tokens {} for all 9 kinds: {same}; sequence edit/t2i tokens {}/{}; micro-XL median of {BENCH_REPS} time ratio edit/t2i: channel {cr:.3} (want [{}, {}]), sequence {sr:.3} (want >= {SEQUENCE_RATIO_MIN})",
            channel[0], seq.0, seq.1, CHANNEL_RATIO.0, CHANNEL_RATIO.1
        ),
    )
}

fn mixture_fidelity() -> Outcome {
    let glyphs = GlyphLibrary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let batch = sample_batch(&MixtureSpec::stage_two(), MIXTURE_DRAWS, &mut rng, &glyphs);
    let n = MIXTURE_DRAWS as f64;
    let groups = [
        ("t2i", 0.28),
        ("inpaint", 0.10),
        ("outpaint", 0.10),
        ("edit", 0.47),
        ("auxiliary", 0.03),
        ("layout", 0.02),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (g, p) in groups {
        let count = batch.iter().filter(|s| unidiff::train::group_of(s.kind) == g).count() as f64;
        let z = (count / n - p) / (p * (1.0 - p) / n).sqrt();
        ok &= z.abs() <= MIXTURE_SIGMAS;
        parts.push(format!("{g} {:.4} ({z:+.2} sd)", count / n));
    }
    let three = sample_batch(&MixtureSpec::stage_three(), MIXTURE_DRAWS, &mut rng, &glyphs);
    let id = three.iter().filter(|s| s.kind == TaskKind::Id).count() as f64 / n;
    let id_ok = (ID_FRACTION.0..=ID_FRACTION.1).contains(&id);
    judge(
        ok && id_ok,
        format!(
            "{MIXTURE_DRAWS} draws: {}; stage III id fraction {id:.4} (want [{}, {}])",
            parts.join(", "),
            ID_FRACTION.0,
            ID_FRACTION.1
        ),
    )
}

fn overfit_smoke() -> Outcome {
    let mut tr = Trainer::new(Mmdit::new(ModelConfig::micro(SizeTag::MicroB)).unwrap());
    tr.dropout = DropoutRates::NONE;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample = generate(TaskKind::T2i, &mut rng, Split::Train, &tr.glyphs);

    // zero-init loss against the batch mean of |u|^2, in float64
    let p64 = tr.model.init_params::<f64>(0);
    let draws: Vec<_> = (0..OVERFIT_BATCH).map(|_| tr.draw(sample.clone(), &mut rng)).collect();
    let bg = tr.batch_grad(&p64, &draws, false).unwrap();
    let z = tr.codec.encode(&sample.target_image.cast::<f64>()).unwrap();
    let expect = draws
        .iter()
        .map(|d| {
            let u = target_velocity(&z, &d.noise.cast()).unwrap();
            u.data.iter().map(|v| v * v).sum::<f64>() / u.data.len() as f64
        })
        .sum::<f64>()
        / OVERFIT_BATCH as f64;
    let zero_rel = ((bg.loss - expect) / expect).abs();

    let mut params = tr.model.init_params::<f32>(0);
    let mut opt = AdamW::new(AdamWConfig::default(), params.data.len());
    let trainable = Trainable::freezing(&[ParamGroup::ExternalEncoder]);
    let mut losses = Vec::new();
    for step in 1..=OVERFIT_STEPS {
        let draws: Vec<_> = (0..OVERFIT_BATCH).map(|_| tr.draw(sample.clone(), &mut rng)).collect();
        let m = tr.step_on(&mut params, &mut opt, &draws, OVERFIT_LR, &trainable, step).unwrap();
        losses.push(m.loss);
    }
    let first = losses[0];
    let tail = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    let reduction = 1.0 - tail / first;
    judge(
        reduction >= OVERFIT_REDUCTION && zero_rel <= ZERO_INIT_REL_TOL,
        format!(
            "micro-B, one t2i sample, batch {OVERFIT_BATCH}, lr {OVERFIT_LR}: step-1 loss {first:.4}, mean of last 10 {tail:.4}, reduction {:.1}% (want >= {:.0}%); zero-init loss relative error {zero_rel:.1e} (tol {ZERO_INIT_REL_TOL:.0e})",
            reduction * 100.0,
            OVERFIT_REDUCTION * 100.0
        ),
    )
}

fn score_settings() -> EvalSettings {
    EvalSettings {
        n: FULL_EVAL_N,
        ..EvalSettings::default()
    }
}

fn end_to_end() -> Outcome {
    if !full_recipe() {
        return Outcome {
            status: Status::Blocked,
            detail: format!("needs the full micro-XL three-stage recipe; set {FULL_RECIPE_ENV}=1 to run"),
        };
    }
    let recipe = RecipeConfig::new(ModelConfig::micro(SizeTag::MicroXL));
    let tr = recipe.trainer(threads()).unwrap();
    let mut state: TrainState<f32> = recipe.fresh_state(&tr.model);
    let opts = RunOptions::default();
    run_recipe(&tr, &recipe.stages[..2], &mut state, &opts).unwrap();
    let codec = Codec::default();
    let s = score_settings();
    let source = |params| ModelSource {
        model: &tr.model,
        vocab: &tr.vocab,
        params,
        codec: &codec,
        steps: s.sampler_steps,
        scales: s.scales,
    };
    let id_two = eval_id(&source(&state.params), s.n, s.seed).unwrap().get("id_correlation").unwrap();
    run_recipe(&tr, &recipe.stages, &mut state, &opts).unwrap();
    let src = ModelSource {
        model: &tr.model,
        vocab: &tr.vocab,
        params: &state.params,
        codec: &codec,
        steps: s.sampler_steps,
        scales: s.scales,
    };
    let single = eval_categories(&src, &[Category::SingleObject], s.n, s.seed).unwrap().get("single_object").unwrap();
    let edit = eval_editing(&src, s.n, s.seed).unwrap();
    let (succ, rmse) = (edit.get("edit_success").unwrap(), edit.get("preservation_rmse").unwrap());
    let seg = eval_auxiliary(&src, s.n, s.seed).unwrap().get("seg_agreement").unwrap();
    let id_three = eval_id(&src, s.n, s.seed).unwrap().get("id_correlation").unwrap();
    judge(
        single >= FULL_SINGLE_OBJECT
            && succ >= FULL_EDIT_SUCCESS
            && rmse <= FULL_EDIT_RMSE
            && seg >= FULL_SEG_AGREEMENT
            && id_three >= FULL_ID_CORRELATION
            && id_three >= id_two,
        format!(
            "single-object {single:.3}, edit success {succ:.3} rmse {rmse:.4}, seg agreement {seg:.3}, id correlation stage II {id_two:.3} stage III {id_three:.3}"
        ),
    )
}

fn ablation() -> Outcome {
    if !full_recipe() {
        return Outcome {
            status: Status::Blocked,
            detail: format!("needs four micro-XL training runs; set {FULL_RECIPE_ENV}=1 to run"),
        };
    }
    let plan = AblationPlan {
        threads: threads(),
        eval: score_settings(),
        ..AblationPlan::new(ModelConfig::micro(SizeTag::MicroXL))
    };
    let t = run_ablation::<f32>(&plan).unwrap();
    let retained = t.t2i_retained(ABLATION_T2I_BAND).unwrap();
    let helps = t.auxiliary_helps_editing().unwrap();
    judge(
        retained && helps,
        format!("(b) t2i within {ABLATION_T2I_BAND} of (a): {retained}; (d) edit >= (b): {helps}\n{}", t.to_table()),
    )
}

fn tiny_recipe() -> RecipeConfig {
    let mut r = RecipeConfig::new(ModelConfig::tiny());
    r.seed = 77;
    r.checkpoint_every = 2;
    for s in r.stages.iter_mut() {
        s.steps = 3;
        s.batch = 2;
        s.lr = 1e-3;
    }
    r
}

fn train_into(out: &Path, stop_at: Option<u64>) -> TrainState<f32> {
    let recipe = tiny_recipe();
    let tr = recipe.trainer(1).unwrap();
    let mut state = recipe.fresh_state(&tr.model);
    let opts = RunOptions {
        out: Some(out.to_path_buf()),
        checkpoint_every: recipe.checkpoint_every,
        stop_at,
        snapshot: recipe.to_flat(),
        ..RunOptions::default()
    };
    run_recipe(&tr, &recipe.stages, &mut state, &opts).unwrap();
    state
}

fn sample_bytes(state: &TrainState<f32>) -> (Vec<u8>, Vec<u8>) {
    let tr = tiny_recipe().trainer(1).unwrap();
    let codec = Codec::default();
    let src = ModelSource {
        model: &tr.model,
        vocab: &tr.vocab,
        params: &state.params,
        codec: &codec,
        steps: 4,
        scales: GuidanceScales::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = generate(TaskKind::Edit, &mut rng, Split::Eval, &tr.glyphs);
    let img = unidiff::eval::ImageSource::generate(&src, &s, 123).unwrap();
    (encode_ppm(&img).unwrap(), encode_latent(&img))
}

fn determinism() -> Outcome {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = train_into(dirs[0].path(), None);
    let b = train_into(dirs[1].path(), None);
    let metrics = |d: &Path| deterministic_columns(&d.join("metrics.csv")).unwrap();
    let same_metrics = metrics(dirs[0].path()) == metrics(dirs[1].path());
    let same_samples = sample_bytes(&a) == sample_bytes(&b);

    // interrupt in stage II, resume from the step-4 checkpoint
    train_into(dirs[2].path(), Some(4));
    let (loaded, mut state) = checkpoint::load::<f32>(&dirs[2].path().join("checkpoints/step-00000004")).unwrap();
    let recipe = RecipeConfig::from_flat(&loaded.config).unwrap();
    let tr = recipe.trainer(1).unwrap();
    let opts = RunOptions {
        out: Some(dirs[2].path().to_path_buf()),
        checkpoint_every: recipe.checkpoint_every,
        snapshot: recipe.to_flat(),
        ..RunOptions::default()
    };
    run_recipe(&tr, &recipe.stages, &mut state, &opts).unwrap();
    let weights = |s: &TrainState<f32>| s.params.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let resumed = weights(&state) == weights(&a)
        && state.opt.m == a.opt.m
        && state.opt.v == a.opt.v
        && metrics(dirs[2].path()) == metrics(dirs[0].path());
    judge(
        same_metrics && same_samples && resumed,
        format!("same seed: metric streams identical {same_metrics}, sample bytes identical {same_samples}; resume from step 4 bit-exact {resumed}"),
    )
}

fn single_object_scenes() -> Vec<SceneSpec> {
    let mut out = Vec::new();
    for shape in Shape::ALL {
        for color in Color::ALL {
            for cell in Cell::all() {
                for size in Size::ALL {
                    out.push(SceneSpec::new(vec![Object { shape, color, cell, size }]).unwrap());
                }
            }
        }
    }
    out
}

fn verifier_soundness() -> Outcome {
    let cfg = VerifyConfig::default();
    let glyphs = GlyphLibrary::default();
    let scenes = single_object_scenes();
    let mut bad: Vec<String> = Vec::new();
    let mut expect = |what: &str, i: usize, failed: Vec<CheckName>, want: &[CheckName]| {
        if failed != want && bad.len() < 5 {
            bad.push(format!("scene {i} {what}: failed {failed:?}, want {want:?}"));
        }
    };
    for (i, scene) in scenes.iter().enumerate() {
        let o = scene.objects[0];
        let t2i = make_t2i(scene).unwrap();
        expect("oracle t2i", i, verify(&t2i, &t2i.target_image, &cfg).failed(), &[]);

        let mut recolored = scene.clone();
        recolored.objects[0].color = Color::ALL[(o.color as usize + 1) % Color::ALL.len()];
        expect("wrong color", i, verify(&t2i, &render(&recolored).unwrap(), &cfg).failed(), &[CheckName::Color]);

        expect("missing object", i, verify(&t2i, &blank_canvas(), &cfg).failed(), &[CheckName::Presence]);

        let layout = make_layout(scene).unwrap();
        expect("oracle layout", i, verify(&layout, &layout.target_image, &cfg).failed(), &[]);
        let cells: Vec<Cell> = Cell::all().collect();
        let here = cells.iter().position(|&c| c == o.cell).unwrap();
        let mut moved = scene.clone();
        moved.objects[0].cell = cells[(here + 1 + i % (cells.len() - 1)) % cells.len()];
        expect("wrong cell", i, verify(&layout, &render(&moved).unwrap(), &cfg).failed(), &[CheckName::Layout]);

        let slot = ID_SLOTS[i % ID_SLOTS.len()];
        let rest = if o.cell == slot { SceneSpec::default() } else { scene.clone() };
        let glyph = i % glyphs.len();
        let id = make_id(&glyphs, glyph, slot, &rest).unwrap();
        expect("oracle id", i, verify(&id, &id.target_image, &cfg).failed(), &[]);
        let wrong = (glyph + 1 + i / glyphs.len()) % glyphs.len();
        let mut img = render(&rest).unwrap();
        let (y, x) = slot.origin();
        composite(&mut img, glyphs.get(wrong).unwrap(), y, x);
        expect("wrong glyph", i, verify(&id, &img, &cfg).failed(), &[CheckName::Correlation]);
    }
    let n = 20;
    let c = eval_compositional(&Oracle, n, 3).unwrap();
    let e = eval_editing(&Oracle, n, 3).unwrap();
    let id = eval_id(&Oracle, n, 3).unwrap();
    let aux = eval_auxiliary(&Oracle, n, 3).unwrap();
    let perfect = c.metrics.iter().chain(&aux.metrics).all(|(_, v)| *v == Some(1.0))
        && e.get("edit_success") == Some(1.0)
        && e.get("preservation_rmse") == Some(0.0)
        && id.get("id_correlation").is_some_and(|v| v >= 0.99);
    judge(
        bad.is_empty() && perfect,
        format!(
            "{} single-object scenes x 5 counterexample/oracle constructions: {}; oracle scores perfect on all suites: {perfect}",
            scenes.len(),
            if bad.is_empty() { "all as intended".to_string() } else { bad.join("; ") }
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("analytic identities", analytic_identities),
        ("gradient correctness", gradient_check),
        ("oracle sampler exactness", oracle_sampler),
        ("sequence-length invariance", sequence_length),
        ("mixture fidelity", mixture_fidelity),
        ("overfit smoke", overfit_smoke),
        ("end-to-end micro-training", end_to_end),
        ("ablation directionality", ablation),
        ("determinism and resume", determinism),
        ("verifier soundness", verifier_soundness),
    ];
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut err = std::io::stderr();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !args.is_empty() && !args.iter().any(|a| name.contains(a.as_str()) || *a == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            judge(false, format!("panicked: {msg}"))
        });
        let label = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => "BLOCKED",
        };
        writeln!(
            err,
            "criterion {n:>2} {name:<28} {label:<7} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        )
        .unwrap();
    }
    if failed > 0 {
        writeln!(err, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
