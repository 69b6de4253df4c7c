//! Analytic forward cost, counted as multiply-adds times two.

use super::config::{ConditioningMode, ModelConfig};
use crate::forge::TaskKind;

/// Score and value products over the joint sequence, all layers.
pub fn attention_flops(cfg: &ModelConfig, kind: TaskKind, mode: ConditioningMode) -> u64 {
    let seq = cfg.count_tokens(kind, mode) as u64;
    4 * seq * seq * cfg.d_model as u64 * cfg.n_layers as u64
}

/// Attention plus every projection and MLP of one forward pass.
pub fn forward_flops(cfg: &ModelConfig, kind: TaskKind, mode: ConditioningMode) -> u64 {
    let d = cfg.d_model as u64;
    let hidden = (cfg.mlp_ratio * cfg.d_model) as u64;
    let l = cfg.max_len as u64;
    let n = cfg.grid_tokens() as u64;
    let img = cfg.count_tokens(kind, mode) as u64 - l;
    let pp = (cfg.patch * cfg.patch) as u64;
    let lat = cfg.latent_channels as u64;
    let lin = |rows: u64, din: u64, dout: u64| 2 * rows * din * dout;

    let embed_in = match mode {
        ConditioningMode::Channel => lin(n, cfg.c_in() as u64 * pp, d),
        ConditioningMode::Sequence => lin(n, lat * pp, d) + lin(img - n, (lat + 1) * pp, d),
    };
    let mut total = embed_in + lin(1, cfg.time_freq_dim as u64, d) + lin(1, d, d);
    for layer in 0..cfg.n_layers {
        let last = layer + 1 == cfg.n_layers;
        let full = |rows: u64| lin(rows, d, 3 * d) + lin(rows, d, d) + lin(rows, d, hidden) + lin(rows, hidden, d);
        total += lin(1, d, 6 * d) + full(img);
        total += if last {
            lin(1, d, 2 * d) + lin(l, d, 3 * d)
        } else {
            lin(1, d, 6 * d) + full(l)
        };
    }
    total += attention_flops(cfg, kind, mode);
    total + lin(1, d, 2 * d) + lin(n, d, pp * lat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SizeTag;

    #[test]
    fn attention_ratio_by_mode() {
        let cfg = ModelConfig::micro(SizeTag::MicroXL);
        let r = |mode| {
            attention_flops(&cfg, TaskKind::Edit, mode) as f64 / attention_flops(&cfg, TaskKind::T2i, mode) as f64
        };
        assert_eq!(r(ConditioningMode::Channel), 1.0);
        let seq = r(ConditioningMode::Sequence);
        assert!((seq - (536.0f64 / 280.0).powi(2)).abs() < 1e-12);
        assert!(seq >= 2.5);
    }

    #[test]
    fn channel_mode_cost_is_task_independent() {
        let cfg = ModelConfig::micro(SizeTag::MicroB);
        let base = forward_flops(&cfg, TaskKind::T2i, ConditioningMode::Channel);
        for kind in TaskKind::ALL {
            assert_eq!(forward_flops(&cfg, kind, ConditioningMode::Channel), base);
        }
        assert!(forward_flops(&cfg, TaskKind::Edit, ConditioningMode::Sequence) > base);
    }
}
