//! Central finite-difference check of the analytic gradient.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::step::{Draw, Trainer};
use crate::error::Result;
use crate::model::{ParamGroup, Params};

/// Gradients smaller than this count as zero when forming relative errors.
pub const REL_FLOOR: f64 = 1e-8;

/// Multiple of the central-difference roundoff bound `eps * |loss| / h`
/// below which a gradient is too small to be measured by the probe.
pub const RESOLVABLE: f64 = 1e4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckedWeight {
    pub index: usize,
    pub group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub weights: Vec<CheckedWeight>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<ParamGroup> = self.weights.iter().map(|w| w.group).collect();
        g.sort();
        g.dedup();
        g
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of the sample loss with central
/// differences of step `h` on `n_weights` weights. Weights are spread
/// round-robin over parameter groups and drawn at random within a group
/// from those whose gradient the step can resolve, falling back to any
/// weight the loss depends on, then to any weight of the group.
pub fn grad_check(
    trainer: &Trainer,
    params: &Params<f64>,
    draw: &Draw,
    n_weights: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut grads = vec![0.0; params.data.len()];
    let (loss, _) = trainer.sample_loss(params, draw, Some((&mut grads, 1.0, true)))?;
    let resolvable = RESOLVABLE * f64::EPSILON * loss.abs() / h;
    let layout = &params.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<(ParamGroup, Vec<usize>)> = ParamGroup::ALL
        .iter()
        .filter_map(|&g| {
            let all: Vec<usize> = layout
                .specs
                .iter()
                .filter(|s| s.group == g)
                .flat_map(|s| s.range())
                .collect();
            let live: Vec<usize> = all.iter().copied().filter(|&i| grads[i] != 0.0).collect();
            let sharp: Vec<usize> = live.iter().copied().filter(|&i| grads[i].abs() >= resolvable).collect();
            let pool = [sharp, live, all].into_iter().find(|p| !p.is_empty()).unwrap_or_default();
            (!pool.is_empty()).then_some((g, pool))
        })
        .collect();
    let mut probe = params.clone();
    let mut weights = Vec::with_capacity(n_weights);
    for k in 0..n_weights {
        let (group, pool) = &pools[k % pools.len()];
        let index = *pool.choose(&mut rng).expect("non-empty pool");
        let w = params.data[index];
        probe.data[index] = w + h;
        let (plus, _) = trainer.sample_loss(&probe, draw, None)?;
        probe.data[index] = w - h;
        let (minus, _) = trainer.sample_loss(&probe, draw, None)?;
        probe.data[index] = w;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[index];
        weights.push(CheckedWeight {
            index,
            group: *group,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    let max_rel_error = weights.iter().map(|w| w.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { weights, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{generate, Split, TaskKind};
    use crate::model::{ConditioningMode, Mmdit, ModelConfig};
    use crate::train::step::DropoutRates;

    fn check(mode: ConditioningMode, kind: TaskKind) -> GradCheckReport {
        let mut tr = Trainer::new(Mmdit::new(ModelConfig::tiny().with_mode(mode)).unwrap());
        tr.dropout = DropoutRates::NONE;
        let params = Params::<f64>::init_dense(tr.model.layout.clone(), 11, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate(kind, &mut rng, Split::Train, &tr.glyphs);
        let d = tr.draw(s, &mut rng);
        grad_check(&tr, &params, &d, 30, 1e-5, 1).unwrap()
    }

    #[test]
    fn identity_sample_covers_every_group() {
        let r = check(ConditioningMode::Channel, TaskKind::Id);
        assert_eq!(r.groups(), ParamGroup::ALL.to_vec());
        assert!(r.max_rel_error < 1e-4, "{r:#?}");
    }

    #[test]
    fn sequence_mode_edit_gradients() {
        let r = check(ConditioningMode::Sequence, TaskKind::Edit);
        assert!(r.max_rel_error < 1e-4, "{r:#?}");
    }

    #[test]
    fn pad_rows_get_zero_gradient() {
        let mut tr = Trainer::new(Mmdit::new(ModelConfig::tiny()).unwrap());
        tr.dropout = DropoutRates::NONE;
        let params = Params::<f64>::init_dense(tr.model.layout.clone(), 4, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = generate(TaskKind::T2i, &mut rng, Split::Train, &tr.glyphs);
        let d = tr.draw(s, &mut rng);
        let mut g = vec![0.0; params.data.len()];
        tr.sample_loss(&params, &d, Some((&mut g, 1.0, true))).unwrap();
        let text = &tr.model.index.text;
        let dm = text.d_model;
        let pad = tr.vocab.pad_id() as usize;
        assert!(g[text.token_embedding + pad * dm..][..dm].iter().all(|&v| v == 0.0));
        let tokens = tr.vocab.tokenize(&d.sample.prompt, text.max_len).unwrap();
        let used = tokens.ids.iter().filter(|&&id| id != tr.vocab.pad_id()).count();
        for i in used..text.max_len {
            assert!(g[text.position_embedding + i * dm..][..dm].iter().all(|&v| v == 0.0), "row {i}");
        }
        assert!(g[text.position_embedding..][..dm].iter().any(|&v| v != 0.0));
    }
}
