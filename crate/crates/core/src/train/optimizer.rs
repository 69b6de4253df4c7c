//! Adam with decoupled weight decay and global gradient-norm clipping.

use crate::model::{ParamGroup, ParamLayout, Params};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// First and second moments plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Outcome of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    /// Norm of the trainable gradient before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Which parameters an update may touch.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainable {
    frozen: Vec<ParamGroup>,
}

impl Trainable {
    pub fn all() -> Self {
        Self { frozen: Vec::new() }
    }

    pub fn freezing(groups: &[ParamGroup]) -> Self {
        Self {
            frozen: groups.to_vec(),
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        Self {
            config,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    /// Global L2 norm of the gradient over trainable tensors.
    pub fn grad_norm(layout: &ParamLayout, grads: &[T], trainable: &Trainable) -> f64 {
        let mut sq = 0.0f64;
        for spec in layout.specs.iter().filter(|s| !trainable.is_frozen(s.group)) {
            for &g in &grads[spec.range()] {
                sq += g.as_f64() * g.as_f64();
            }
        }
        sq.sqrt()
    }

    /// One update with learning rate `lr`. Frozen tensors keep their
    /// values and moments.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[T], lr: f64, trainable: &Trainable) -> UpdateStats {
        assert_eq!(grads.len(), params.data.len(), "gradient buffer size");
        let c = self.config;
        let grad_norm = Self::grad_norm(&params.layout, grads, trainable);
        let clip = match c.clip_norm {
            Some(max) if grad_norm > max => max / grad_norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let scale = T::lit(clip);
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let layout = params.layout.clone();
        for spec in layout.specs.iter().filter(|s| !trainable.is_frozen(s.group)) {
            let decay = if spec.decays() { T::lit(lr * c.weight_decay) } else { T::zero() };
            for i in spec.range() {
                let g = grads[i] * scale;
                self.m[i] = b1 * self.m[i] + one_b1 * g;
                self.v[i] = b2 * self.v[i] + one_b2 * g * g;
                let denom = (self.v[i] * inv_bc2).sqrt() + eps;
                let p = params.data[i];
                params.data[i] = p - decay * p - step * self.m[i] / denom;
            }
        }
        UpdateStats {
            grad_norm,
            clipped: clip < 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mmdit, ModelConfig};

    fn setup() -> (Params<f64>, Vec<f64>) {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let p = Params::<f64>::init_dense(model.layout.clone(), 1, 1.0);
        let g: Vec<f64> = (0..p.data.len()).map(|i| ((i % 17) as f64 - 8.0) * 1e-3).collect();
        (p, g)
    }

    #[test]
    fn zero_lr_is_identity() {
        let (mut p, g) = setup();
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), p.data.len());
        opt.step(&mut p, &g, 0.0, &Trainable::all());
        assert_eq!(p, before);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_matches_scalar_reference() {
        let (mut p, g) = setup();
        let cfg = AdamWConfig {
            clip_norm: None,
            ..AdamWConfig::default()
        };
        let before = p.clone();
        let mut opt = AdamW::new(cfg, p.data.len());
        opt.step(&mut p, &g, 1e-3, &Trainable::all());
        let layout = before.layout.clone();
        for spec in &layout.specs {
            let wd = if spec.decays() { 0.01 } else { 0.0 };
            for i in spec.range() {
                // first Adam step: m_hat = g, v_hat = g^2
                let expect = before.data[i] - 1e-3 * wd * before.data[i] - 1e-3 * g[i] / (g[i].abs() + 1e-8);
                assert!((p.data[i] - expect).abs() < 1e-12, "{}", spec.name);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let (mut p, g) = setup();
        let big: Vec<f64> = g.iter().map(|v| v * 1e4).collect();
        let mut opt = AdamW::new(AdamWConfig::default(), p.data.len());
        let stats = opt.step(&mut p, &big, 1e-3, &Trainable::all());
        assert!(stats.clipped && stats.grad_norm > 1.0);
        let norm: f64 = opt.m.iter().map(|m| m * m).sum::<f64>().sqrt();
        // m = (1 - beta1) * clipped grad
        assert!((norm - 0.1).abs() < 1e-9, "{norm}");
    }

    #[test]
    fn frozen_groups_are_untouched() {
        let (mut p, g) = setup();
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig::default(), p.data.len());
        let tr = Trainable::freezing(&[ParamGroup::ExternalEncoder]);
        opt.step(&mut p, &g, 1e-2, &tr);
        let layout = p.layout.clone();
        let mut moved = false;
        for spec in &layout.specs {
            let same = p.data[spec.range()] == before.data[spec.range()];
            if spec.group == ParamGroup::ExternalEncoder {
                assert!(same && opt.m[spec.range()].iter().all(|&m| m == 0.0));
            } else {
                moved |= !same;
            }
        }
        assert!(moved);
    }
}
