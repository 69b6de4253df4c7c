//! Forward and backward passes.

use super::params::{BlockIdx, Params, StreamIdx};
use super::{patchify, unpatchify, ConditioningMode, Mmdit};
use crate::error::{Error, Result};
use crate::grid::{ConditionedLatent, Grid, Latent, LatentMask, VelocityField};
use crate::nn::{
    attention, attention_backward, gated_add, gated_add_backward, gelu, gelu_grad, layer_norm, layer_norm_backward,
    modulate, modulate_backward, silu, silu_grad, timestep_embedding,
};
use crate::scalar::Scalar;
use crate::text::PromptEmbeddings;

#[derive(Clone, Debug, Default)]
struct StreamCache<T> {
    rows: usize,
    modv: Vec<T>,
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    h1: Vec<T>,
    attn: Vec<T>,
    y1: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    y2: Vec<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    txt: StreamCache<T>,
    img: StreamCache<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
}

/// Activations retained for [`Mmdit::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    t_emb: Vec<T>,
    a1: Vec<T>,
    s1: Vec<T>,
    c: Vec<T>,
    c_act: Vec<T>,
    latent_in: Vec<T>,
    cond_in: Option<Vec<T>>,
    n_out: usize,
    n_img: usize,
    blocks: Vec<BlockCache<T>>,
    mod_f: Vec<T>,
    xhat_f: Vec<T>,
    rstd_f: Vec<T>,
    h_f: Vec<T>,
    /// Largest residual-stream magnitude seen (divergence tripwire).
    pub max_abs_activation: T,
}

fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

fn max_abs<T: Scalar>(xs: &[T]) -> Option<T> {
    let mut m = T::zero();
    for &x in xs {
        if !x.is_finite() {
            return None;
        }
        m = m.max(x.abs());
    }
    Some(m)
}

fn add_rows<T: Scalar>(x: &mut [T], table: &[T]) {
    for (a, &b) in x.iter_mut().zip(table) {
        *a += b;
    }
}

impl Mmdit {
    /// Velocity prediction for a channel-concatenated input.
    pub fn forward<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        d: &ConditionedLatent<T>,
    ) -> Result<VelocityField<T>> {
        self.forward_with_cache(params, prompt, t, d).map(|(v, _)| v)
    }

    pub fn forward_with_cache<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        d: &ConditionedLatent<T>,
    ) -> Result<(VelocityField<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if cfg.mode != ConditioningMode::Channel {
            return Err(Error::Invalid("forward needs a channel-mode model".into()));
        }
        if d.dims() != (cfg.latent_h, cfg.latent_w, cfg.c_in()) {
            return Err(Error::Shape(format!(
                "conditioned latent {:?}, expected {:?}",
                d.dims(),
                (cfg.latent_h, cfg.latent_w, cfg.c_in())
            )));
        }
        if !d.is_finite() {
            return Err(Error::NonFinite {
                what: "conditioned latent".into(),
            });
        }
        let n = cfg.grid_tokens();
        let patches = patchify(d, cfg.patch);
        let mut x_img = zeros(n * cfg.d_model);
        self.index.patch.forward(&params.data, &patches, n, &mut x_img);
        add_rows(&mut x_img, &self.pos_table::<T>());
        self.run(params, prompt, t, x_img, n, patches, None)
    }

    /// Baseline conditioning: `v ⊕ m` become their own token block after
    /// the noise tokens. `cond = None` (text-only tasks) appends nothing.
    pub fn forward_seq_concat<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<VelocityField<T>> {
        self.forward_seq_concat_with_cache(params, prompt, t, z_t, cond).map(|(v, _)| v)
    }

    pub fn forward_seq_concat_with_cache<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<(VelocityField<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        let cond_patch = match (cfg.mode, &self.index.cond_patch) {
            (ConditioningMode::Sequence, Some(cp)) => cp,
            _ => return Err(Error::Invalid("forward_seq_concat needs a sequence-mode model".into())),
        };
        let grid = (cfg.latent_h, cfg.latent_w, cfg.latent_channels);
        if z_t.dims() != grid {
            return Err(Error::Shape(format!("noisy latent {:?}, expected {grid:?}", z_t.dims())));
        }
        if !z_t.is_finite() {
            return Err(Error::NonFinite {
                what: "noisy latent".into(),
            });
        }
        let n = cfg.grid_tokens();
        let d = cfg.d_model;
        let pos = self.pos_table::<T>();
        let patches = patchify(z_t, cfg.patch);
        let mut x_img = zeros(n * d);
        self.index.patch.forward(&params.data, &patches, n, &mut x_img);
        add_rows(&mut x_img, &pos);
        let mut cond_in = None;
        if let Some((v, m)) = cond {
            if v.dims() != grid || m.dims() != (grid.0, grid.1, 1) {
                return Err(Error::Shape(format!("condition latent {:?}, expected {grid:?}", v.dims())));
            }
            let vm = super::concat_channels(&[v, m])?;
            if !vm.is_finite() {
                return Err(Error::NonFinite {
                    what: "visual condition".into(),
                });
            }
            let cp = patchify(&vm, cfg.patch);
            let mut x_cond = zeros(n * d);
            cond_patch.forward(&params.data, &cp, n, &mut x_cond);
            add_rows(&mut x_cond, &pos);
            x_img.extend_from_slice(&x_cond);
            cond_in = Some(cp);
        }
        self.run(params, prompt, t, x_img, n, patches, cond_in)
    }

    /// Velocity for either conditioning mode. `cond = None` is the null
    /// visual condition: zero latent and mask in channel mode, no
    /// condition tokens in sequence mode.
    pub fn predict<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<VelocityField<T>> {
        self.predict_with_cache(params, prompt, t, z_t, cond).map(|(v, _)| v)
    }

    pub fn predict_with_cache<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<(VelocityField<T>, ForwardCache<T>)> {
        match self.config.mode {
            ConditioningMode::Channel => {
                let d = match cond {
                    Some((v, m)) => super::assemble_input(z_t, v, m)?,
                    None => super::assemble_input(
                        z_t,
                        &Grid::zeros(z_t.height, z_t.width, z_t.channels),
                        &Grid::zeros(z_t.height, z_t.width, 1),
                    )?,
                };
                self.forward_with_cache(params, prompt, t, &d)
            }
            ConditioningMode::Sequence => self.forward_seq_concat_with_cache(params, prompt, t, z_t, cond),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run<T: Scalar>(
        &self,
        params: &Params<T>,
        prompt: &PromptEmbeddings<T>,
        t: T,
        mut x_img: Vec<T>,
        n_out: usize,
        latent_in: Vec<T>,
        cond_in: Option<Vec<T>>,
    ) -> Result<(VelocityField<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        let p = &params.data;
        let d = cfg.d_model;
        if params.data.len() != self.layout.total {
            return Err(Error::Shape("parameter buffer does not match model layout".into()));
        }
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::Invalid(format!("time {t} outside [0, 1]")));
        }
        if prompt.rows.len() != cfg.max_len * d || prompt.key_valid.len() != cfg.max_len {
            return Err(Error::Shape(format!(
                "prompt embeddings are {}x{}, model expects {}x{d}",
                prompt.max_len, prompt.d_model, cfg.max_len
            )));
        }
        if max_abs(&prompt.rows).is_none() {
            return Err(Error::NonFinite {
                what: "prompt embeddings".into(),
            });
        }
        let n_img = x_img.len() / d;

        let t_emb = timestep_embedding(t, cfg.time_freq_dim);
        let a1 = self.index.time_fc1.forward_vec(p, &t_emb);
        let s1: Vec<T> = a1.iter().map(|&v| silu(v)).collect();
        let c = self.index.time_fc2.forward_vec(p, &s1);
        let c_act: Vec<T> = c.iter().map(|&v| silu(v)).collect();

        let mut key_valid = prompt.key_valid.clone();
        key_valid.extend(std::iter::repeat_n(true, n_img));
        let mut x_txt = prompt.rows.clone();
        let mut blocks = Vec::with_capacity(self.index.blocks.len());
        let mut peak = T::zero();
        for (li, b) in self.index.blocks.iter().enumerate() {
            let bc = block_forward(cfg.n_heads, d, p, b, &c_act, &mut x_txt, &mut x_img, &key_valid);
            blocks.push(bc);
            let m_img = max_abs(&x_img).ok_or(Error::LayerNan { layer: li })?;
            let m_txt = max_abs(&x_txt).ok_or(Error::LayerNan { layer: li })?;
            peak = peak.max(m_img).max(m_txt);
        }

        let mod_f = self.index.final_modulation.forward_vec(p, &c_act);
        let x_noise = &x_img[..n_out * d];
        let mut xhat_f = zeros(n_out * d);
        let mut rstd_f = zeros(n_out);
        layer_norm(x_noise, d, &mut xhat_f, &mut rstd_f);
        let mut h_f = zeros(n_out * d);
        modulate(&xhat_f, &mod_f[..d], &mod_f[d..2 * d], &mut h_f);
        let out_dim = self.index.out.d_out;
        let mut y = zeros(n_out * out_dim);
        self.index.out.forward(p, &h_f, n_out, &mut y);
        let vel = unpatchify(
            &y,
            cfg.grid_tokens_h(),
            cfg.grid_tokens_w(),
            cfg.patch,
            cfg.latent_channels,
        );
        if max_abs(&vel.data).is_none() {
            return Err(Error::LayerNan { layer: cfg.n_layers });
        }
        Ok((
            vel,
            ForwardCache {
                t_emb,
                a1,
                s1,
                c,
                c_act,
                latent_in,
                cond_in,
                n_out,
                n_img,
                blocks,
                mod_f,
                xhat_f,
                rstd_f,
                h_f,
                max_abs_activation: peak,
            },
        ))
    }

    /// Accumulates parameter gradients of `<d_out, output>` into `grads`
    /// and returns the gradient with respect to the prompt rows.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &ForwardCache<T>,
        d_out: &VelocityField<T>,
        grads: &mut [T],
    ) -> Vec<T> {
        let cfg = &self.config;
        let p = &params.data;
        let d = cfg.d_model;
        let n_out = cache.n_out;
        let l = cfg.max_len;
        assert_eq!(grads.len(), p.len(), "gradient buffer size");

        let dy = patchify(d_out, cfg.patch);
        let mut dh_f = zeros(n_out * d);
        self.index.out.backward(p, grads, &cache.h_f, &dy, n_out, Some(&mut dh_f));
        let mut dmod_f = zeros(2 * d);
        let mut dxhat_f = zeros(n_out * d);
        {
            let (dshift, dscale) = dmod_f.split_at_mut(d);
            modulate_backward(&dh_f, &cache.xhat_f, &cache.mod_f[d..2 * d], &mut dxhat_f, dshift, dscale);
        }
        let mut dx_img = zeros(cache.n_img * d);
        layer_norm_backward(&dxhat_f, &cache.xhat_f, &cache.rstd_f, d, &mut dx_img[..n_out * d]);
        let mut dc_act = zeros(d);
        self.index
            .final_modulation
            .backward(p, grads, &cache.c_act, &dmod_f, 1, Some(&mut dc_act));

        let mut dx_txt = zeros(l * d);
        for (b, bc) in self.index.blocks.iter().zip(&cache.blocks).rev() {
            block_backward(
                cfg.n_heads,
                d,
                p,
                grads,
                b,
                bc,
                &cache.c_act,
                &mut dx_txt,
                &mut dx_img,
                &mut dc_act,
            );
        }

        let dc: Vec<T> = dc_act.iter().zip(&cache.c).map(|(&g, &x)| g * silu_grad(x)).collect();
        let mut ds1 = zeros(d);
        self.index.time_fc2.backward(p, grads, &cache.s1, &dc, 1, Some(&mut ds1));
        let da1: Vec<T> = ds1.iter().zip(&cache.a1).map(|(&g, &x)| g * silu_grad(x)).collect();
        self.index.time_fc1.backward(p, grads, &cache.t_emb, &da1, 1, None);

        let n = cfg.grid_tokens();
        self.index
            .patch
            .backward(p, grads, &cache.latent_in, &dx_img[..n * d], n, None);
        if let (Some(cp), Some(cond_in)) = (&self.index.cond_patch, &cache.cond_in) {
            cp.backward(p, grads, cond_in, &dx_img[n * d..], n, None);
        }
        dx_txt
    }
}

#[allow(clippy::too_many_arguments)]
fn block_forward<T: Scalar>(
    heads: usize,
    d: usize,
    p: &[T],
    b: &BlockIdx,
    c_act: &[T],
    x_txt: &mut [T],
    x_img: &mut [T],
    key_valid: &[bool],
) -> BlockCache<T> {
    let l = x_txt.len() / d;
    let n = x_img.len() / d;
    let seq = l + n;
    let mut q = zeros(seq * d);
    let mut k = zeros(seq * d);
    let mut v = zeros(seq * d);
    let txt = stream_pre(d, p, &b.txt, c_act, x_txt, 0, &mut q, &mut k, &mut v);
    let img = stream_pre(d, p, &b.img, c_act, x_img, l, &mut q, &mut k, &mut v);
    let mut attn_out = zeros(seq * d);
    let mut probs = zeros(heads * seq * seq);
    attention(&q, &k, &v, seq, d, heads, key_valid, &mut attn_out, &mut probs);
    let mut bc = BlockCache {
        txt,
        img,
        q,
        k,
        v,
        probs,
    };
    stream_post(d, p, &b.txt, &mut bc.txt, x_txt, &attn_out[..l * d]);
    stream_post(d, p, &b.img, &mut bc.img, x_img, &attn_out[l * d..]);
    bc
}

#[allow(clippy::too_many_arguments)]
fn stream_pre<T: Scalar>(
    d: usize,
    p: &[T],
    s: &StreamIdx,
    c_act: &[T],
    x: &[T],
    row0: usize,
    q: &mut [T],
    k: &mut [T],
    v: &mut [T],
) -> StreamCache<T> {
    let rows = x.len() / d;
    let modv = s.modulation.forward_vec(p, c_act);
    let mut xhat1 = zeros(rows * d);
    let mut rstd1 = zeros(rows);
    layer_norm(x, d, &mut xhat1, &mut rstd1);
    let mut h1 = zeros(rows * d);
    modulate(&xhat1, &modv[..d], &modv[d..2 * d], &mut h1);
    let mut qkv = zeros(rows * 3 * d);
    s.qkv.forward(p, &h1, rows, &mut qkv);
    for r in 0..rows {
        let src = &qkv[r * 3 * d..(r + 1) * 3 * d];
        let dst = (row0 + r) * d;
        q[dst..dst + d].copy_from_slice(&src[..d]);
        k[dst..dst + d].copy_from_slice(&src[d..2 * d]);
        v[dst..dst + d].copy_from_slice(&src[2 * d..]);
    }
    StreamCache {
        rows,
        modv,
        xhat1,
        rstd1,
        h1,
        ..Default::default()
    }
}

fn stream_post<T: Scalar>(d: usize, p: &[T], s: &StreamIdx, sc: &mut StreamCache<T>, x: &mut [T], attn: &[T]) {
    let (Some(proj), Some(fc1), Some(fc2)) = (&s.proj, &s.fc1, &s.fc2) else {
        return;
    };
    let rows = sc.rows;
    let modv = &sc.modv;
    sc.attn = attn.to_vec();
    sc.y1 = zeros(rows * d);
    proj.forward(p, &sc.attn, rows, &mut sc.y1);
    gated_add(x, &modv[2 * d..3 * d], &sc.y1);
    sc.xhat2 = zeros(rows * d);
    sc.rstd2 = zeros(rows);
    layer_norm(x, d, &mut sc.xhat2, &mut sc.rstd2);
    sc.h2 = zeros(rows * d);
    modulate(&sc.xhat2, &modv[3 * d..4 * d], &modv[4 * d..5 * d], &mut sc.h2);
    let hidden = fc1.d_out;
    sc.u = zeros(rows * hidden);
    fc1.forward(p, &sc.h2, rows, &mut sc.u);
    sc.g = sc.u.iter().map(|&v| gelu(v)).collect();
    sc.y2 = zeros(rows * d);
    fc2.forward(p, &sc.g, rows, &mut sc.y2);
    gated_add(x, &modv[5 * d..6 * d], &sc.y2);
}

#[allow(clippy::too_many_arguments)]
fn block_backward<T: Scalar>(
    heads: usize,
    d: usize,
    p: &[T],
    g: &mut [T],
    b: &BlockIdx,
    bc: &BlockCache<T>,
    c_act: &[T],
    dx_txt: &mut [T],
    dx_img: &mut [T],
    dc_act: &mut [T],
) {
    let l = bc.txt.rows;
    let n = bc.img.rows;
    let seq = l + n;
    let mut d_attn = zeros(seq * d);
    let mut dmod_txt = zeros(b.txt.modulation.d_out);
    let mut dmod_img = zeros(b.img.modulation.d_out);
    stream_post_backward(d, p, g, &b.txt, &bc.txt, dx_txt, &mut d_attn[..l * d], &mut dmod_txt);
    stream_post_backward(d, p, g, &b.img, &bc.img, dx_img, &mut d_attn[l * d..], &mut dmod_img);

    let mut dq = zeros(seq * d);
    let mut dk = zeros(seq * d);
    let mut dv = zeros(seq * d);
    let mut scratch = zeros(seq * seq);
    attention_backward(
        &bc.q, &bc.k, &bc.v, &bc.probs, &d_attn, seq, d, heads, &mut dq, &mut dk, &mut dv, &mut scratch,
    );
    stream_pre_backward(d, p, g, &b.txt, &bc.txt, c_act, 0, &dq, &dk, &dv, dx_txt, &mut dmod_txt, dc_act);
    stream_pre_backward(d, p, g, &b.img, &bc.img, c_act, l, &dq, &dk, &dv, dx_img, &mut dmod_img, dc_act);
}

/// Backprop through the attention residual and MLP of one stream. On
/// return `dx` holds the residual part of the block-input gradient.
#[allow(clippy::too_many_arguments)]
fn stream_post_backward<T: Scalar>(
    d: usize,
    p: &[T],
    g: &mut [T],
    s: &StreamIdx,
    sc: &StreamCache<T>,
    dx: &mut [T],
    d_attn: &mut [T],
    dmodv: &mut [T],
) {
    let (Some(proj), Some(fc1), Some(fc2)) = (&s.proj, &s.fc1, &s.fc2) else {
        return;
    };
    let rows = sc.rows;
    let modv = &sc.modv;
    let hidden = fc1.d_out;

    let mut dy2 = zeros(rows * d);
    gated_add_backward(dx, &modv[5 * d..6 * d], &sc.y2, &mut dy2, &mut dmodv[5 * d..6 * d]);
    let mut dgl = zeros(rows * hidden);
    fc2.backward(p, g, &sc.g, &dy2, rows, Some(&mut dgl));
    for (gv, &u) in dgl.iter_mut().zip(&sc.u) {
        *gv *= gelu_grad(u);
    }
    let mut dh2 = zeros(rows * d);
    fc1.backward(p, g, &sc.h2, &dgl, rows, Some(&mut dh2));
    let mut dxhat2 = zeros(rows * d);
    {
        let (dshift, dscale) = dmodv[3 * d..5 * d].split_at_mut(d);
        modulate_backward(&dh2, &sc.xhat2, &modv[4 * d..5 * d], &mut dxhat2, dshift, dscale);
    }
    layer_norm_backward(&dxhat2, &sc.xhat2, &sc.rstd2, d, dx);

    let mut dy1 = zeros(rows * d);
    gated_add_backward(dx, &modv[2 * d..3 * d], &sc.y1, &mut dy1, &mut dmodv[2 * d..3 * d]);
    proj.backward(p, g, &sc.attn, &dy1, rows, Some(d_attn));
}

#[allow(clippy::too_many_arguments)]
fn stream_pre_backward<T: Scalar>(
    d: usize,
    p: &[T],
    g: &mut [T],
    s: &StreamIdx,
    sc: &StreamCache<T>,
    c_act: &[T],
    row0: usize,
    dq: &[T],
    dk: &[T],
    dv: &[T],
    dx: &mut [T],
    dmodv: &mut [T],
    dc_act: &mut [T],
) {
    let rows = sc.rows;
    let mut dqkv = zeros(rows * 3 * d);
    for r in 0..rows {
        let src = (row0 + r) * d;
        let dst = &mut dqkv[r * 3 * d..(r + 1) * 3 * d];
        dst[..d].copy_from_slice(&dq[src..src + d]);
        dst[d..2 * d].copy_from_slice(&dk[src..src + d]);
        dst[2 * d..].copy_from_slice(&dv[src..src + d]);
    }
    let mut dh1 = zeros(rows * d);
    s.qkv.backward(p, g, &sc.h1, &dqkv, rows, Some(&mut dh1));
    let mut dxhat1 = zeros(rows * d);
    {
        let (dshift, dscale) = dmodv[..2 * d].split_at_mut(d);
        modulate_backward(&dh1, &sc.xhat1, &sc.modv[d..2 * d], &mut dxhat1, dshift, dscale);
    }
    layer_norm_backward(&dxhat1, &sc.xhat1, &sc.rstd1, d, dx);
    s.modulation.backward(p, g, c_act, dmodv, 1, Some(dc_act));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_input, ModelConfig};
    use crate::text::{embed, null_prompt, Vocabulary};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_grid(h: usize, w: usize, c: usize, seed: u64) -> Grid<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Grid::from_vec(h, w, c, (0..h * w * c).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn inputs(model: &Mmdit) -> ConditionedLatent<f64> {
        let c = &model.config;
        let z = random_grid(c.latent_h, c.latent_w, c.latent_channels, 1);
        let v = random_grid(c.latent_h, c.latent_w, c.latent_channels, 2);
        let m = Grid::filled(c.latent_h, c.latent_w, 1, 1.0);
        assemble_input(&z, &v, &m).unwrap()
    }

    #[test]
    fn zero_init_outputs_zero() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let params = model.init_params::<f64>(0);
        let vocab = Vocabulary::default();
        let prompt = embed(&vocab.tokenize("<t2i> a red circle", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        let out = model.forward(&params, &prompt, 0.3, &inputs(&model)).unwrap();
        assert_eq!(out.dims(), (32, 32, 12));
        assert!(out.data.iter().all(|&v| v == 0.0));
        let np = null_prompt(&vocab, &params, &model.index.text);
        let out = model.forward(&params, &np, 1.0, &inputs(&model)).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_rows_are_inert() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let params = Params::<f64>::init_dense(model.layout.clone(), 7, 1.0);
        let vocab = Vocabulary::default();
        let prompt = embed(&vocab.tokenize("<t2i> a red circle", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        let d = inputs(&model);
        let base = model.forward(&params, &prompt, 0.6, &d).unwrap();
        let mut scrambled = prompt.clone();
        let dm = model.config.d_model;
        // swap and perturb pad rows
        let (a, b) = (10, 20);
        for j in 0..dm {
            scrambled.rows.swap(a * dm + j, b * dm + j);
            scrambled.rows[15 * dm + j] += 3.0;
        }
        let out = model.forward(&params, &scrambled, 0.6, &d).unwrap();
        assert_eq!(base.max_abs_diff(&out), 0.0);
        assert!(base.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn deterministic_forward() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let params = Params::<f32>::init_dense(model.layout.clone(), 3, 1.0);
        let vocab = Vocabulary::default();
        let prompt = embed(&vocab.tokenize("<ie> remove the square", 24).unwrap(), &vocab, &params, &model.index.text).unwrap();
        let d = inputs(&model).cast::<f32>();
        let a = model.forward(&params, &prompt, 0.25, &d).unwrap();
        let b = model.forward(&params, &prompt, 0.25, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let params = model.init_params::<f64>(0);
        let vocab = Vocabulary::default();
        let prompt = null_prompt(&vocab, &params, &model.index.text);
        let mut d = inputs(&model);
        assert!(model.forward(&params, &prompt, 1.5, &d).is_err());
        d.data[5] = f64::NAN;
        assert!(matches!(model.forward(&params, &prompt, 0.5, &d), Err(Error::NonFinite { .. })));
        assert!(model.forward(&params, &prompt, 0.5, &Grid::zeros(32, 32, 24)).is_err());
    }

    #[test]
    fn nan_weights_report_layer() {
        let model = Mmdit::new(ModelConfig::tiny()).unwrap();
        let mut params = Params::<f64>::init_dense(model.layout.clone(), 1, 1.0);
        let qkv = model.index.blocks[1].img.qkv.w;
        params.data[qkv] = f64::NAN;
        let vocab = Vocabulary::default();
        let prompt = null_prompt(&vocab, &params, &model.index.text);
        match model.forward(&params, &prompt, 0.5, &inputs(&model)) {
            Err(Error::LayerNan { layer }) => assert_eq!(layer, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sequence_mode_token_counts_and_shapes() {
        let model = Mmdit::new(ModelConfig::tiny().with_mode(ConditioningMode::Sequence)).unwrap();
        let params = Params::<f64>::init_dense(model.layout.clone(), 2, 1.0);
        let vocab = Vocabulary::default();
        let prompt = null_prompt(&vocab, &params, &model.index.text);
        let z = random_grid(32, 32, 12, 1);
        let v = random_grid(32, 32, 12, 2);
        let m = Grid::filled(32, 32, 1, 1.0);
        let (a, ca) = model.forward_seq_concat_with_cache(&params, &prompt, 0.5, &z, None).unwrap();
        let (b, cb) = model.forward_seq_concat_with_cache(&params, &prompt, 0.5, &z, Some((&v, &m))).unwrap();
        assert_eq!(ca.n_img, 256);
        assert_eq!(cb.n_img, 512);
        assert_eq!(a.dims(), b.dims());
        assert!(a.max_abs_diff(&b) > 0.0);
        // channel-mode entry point refuses the baseline model
        assert!(model.forward(&params, &prompt, 0.5, &inputs(&model)).is_err());
    }
}
