//! Forward and backward kernels for the transformer building blocks.
//!
//! Matrices are row-major `rows x cols` slices. Backward functions
//! accumulate into their gradient outputs; callers zero them first.

use crate::scalar::{gemm, MatMut, MatRef, Scalar};

pub const LN_EPS: f64 = 1e-6;

/// Offsets of a dense layer `y = x W + b` inside the flat parameter buffer.
/// `W` is stored `d_in x d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearIdx {
    pub fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.d_in * self.d_out]
    }

    pub fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.d_out]
    }

    /// `y = x W + b` for `rows` input rows.
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], rows: usize, y: &mut [T]) {
        debug_assert_eq!(x.len(), rows * self.d_in);
        debug_assert_eq!(y.len(), rows * self.d_out);
        let bias = self.bias(p);
        for row in y.chunks_exact_mut(self.d_out) {
            row.copy_from_slice(bias);
        }
        gemm(
            T::one(),
            MatRef::new(x, rows, self.d_in),
            MatRef::new(self.weight(p), self.d_in, self.d_out),
            T::one(),
            MatMut::new(y, rows, self.d_out),
        );
    }

    pub fn forward_vec<T: Scalar>(&self, p: &[T], x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.d_out];
        self.forward(p, x, 1, &mut y);
        y
    }

    /// Accumulates weight/bias gradients into `g` and, if given, the input
    /// gradient into `dx`.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        x: &[T],
        dy: &[T],
        rows: usize,
        dx: Option<&mut [T]>,
    ) {
        debug_assert_eq!(dy.len(), rows * self.d_out);
        {
            let gw = &mut g[self.w..self.w + self.d_in * self.d_out];
            gemm(
                T::one(),
                MatRef::new(x, rows, self.d_in).t(),
                MatRef::new(dy, rows, self.d_out),
                T::one(),
                MatMut::new(gw, self.d_in, self.d_out),
            );
        }
        {
            let gb = &mut g[self.b..self.b + self.d_out];
            for row in dy.chunks_exact(self.d_out) {
                for (a, &b) in gb.iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
        if let Some(dx) = dx {
            gemm(
                T::one(),
                MatRef::new(dy, rows, self.d_out),
                MatRef::new(self.weight(p), self.d_in, self.d_out).t(),
                T::one(),
                MatMut::new(dx, rows, self.d_in),
            );
        }
    }
}

/// Parameter-free layer norm. Writes normalized rows to `xhat` and the
/// per-row reciprocal standard deviation to `rstd`.
pub fn layer_norm<T: Scalar>(x: &[T], d: usize, xhat: &mut [T], rstd: &mut [T]) {
    let eps = T::lit(LN_EPS);
    let inv_d = T::one() / T::lit(d as f64);
    for ((row, out), r) in x.chunks_exact(d).zip(xhat.chunks_exact_mut(d)).zip(rstd.iter_mut()) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        *r = rs;
    }
}

pub fn layer_norm_backward<T: Scalar>(dxhat: &[T], xhat: &[T], rstd: &[T], d: usize, dx: &mut [T]) {
    let inv_d = T::one() / T::lit(d as f64);
    for (((g, xh), &rs), out) in dxhat
        .chunks_exact(d)
        .zip(xhat.chunks_exact(d))
        .zip(rstd)
        .zip(dx.chunks_exact_mut(d))
    {
        let mean_g = g.iter().copied().sum::<T>() * inv_d;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o += rs * (gi - mean_g - xi * mean_gx);
        }
    }
}

/// `h = xhat * (1 + scale) + shift`, broadcasting the vectors over rows.
pub fn modulate<T: Scalar>(xhat: &[T], shift: &[T], scale: &[T], h: &mut [T]) {
    let d = shift.len();
    for (row, out) in xhat.chunks_exact(d).zip(h.chunks_exact_mut(d)) {
        for i in 0..d {
            out[i] = row[i] * (T::one() + scale[i]) + shift[i];
        }
    }
}

pub fn modulate_backward<T: Scalar>(
    dh: &[T],
    xhat: &[T],
    scale: &[T],
    dxhat: &mut [T],
    dshift: &mut [T],
    dscale: &mut [T],
) {
    let d = scale.len();
    for ((g, xh), out) in dh.chunks_exact(d).zip(xhat.chunks_exact(d)).zip(dxhat.chunks_exact_mut(d)) {
        for i in 0..d {
            out[i] += g[i] * (T::one() + scale[i]);
            dshift[i] += g[i];
            dscale[i] += g[i] * xh[i];
        }
    }
}

/// `x += gate * y` rowwise.
pub fn gated_add<T: Scalar>(x: &mut [T], gate: &[T], y: &[T]) {
    let d = gate.len();
    for (xr, yr) in x.chunks_exact_mut(d).zip(y.chunks_exact(d)) {
        for i in 0..d {
            xr[i] += gate[i] * yr[i];
        }
    }
}

/// Given `dx` flowing into `x += gate * y`, accumulates `dy` and `dgate`.
pub fn gated_add_backward<T: Scalar>(dx: &[T], gate: &[T], y: &[T], dy: &mut [T], dgate: &mut [T]) {
    let d = gate.len();
    for ((g, yr), out) in dx.chunks_exact(d).zip(y.chunks_exact(d)).zip(dy.chunks_exact_mut(d)) {
        for i in 0..d {
            out[i] += g[i] * gate[i];
            dgate[i] += g[i] * yr[i];
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

const GELU_K: f64 = 0.044715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = c * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(GELU_K);
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    let half = T::lit(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::lit(3.0) * k * x * x)
}

/// Sinusoidal embedding of a scalar (the flow time scaled by 1000), `dim`
/// entries: cosines then sines.
pub fn timestep_embedding<T: Scalar>(t: T, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    let arg0 = t * T::lit(1000.0);
    for i in 0..half {
        let freq = T::lit((-(10000f64.ln()) * i as f64 / half as f64).exp());
        let a = arg0 * freq;
        out[i] = a.cos();
        out[half + i] = a.sin();
    }
    out
}

/// Fixed 2-D sine/cosine position table for a `gh x gw` token grid.
pub fn pos_embed_2d<T: Scalar>(gh: usize, gw: usize, d: usize) -> Vec<T> {
    let quarter = d / 4;
    let mut out = vec![T::zero(); gh * gw * d];
    for y in 0..gh {
        for x in 0..gw {
            let row = &mut out[(y * gw + x) * d..(y * gw + x + 1) * d];
            for (axis, pos) in [(0usize, y as f64), (1, x as f64)] {
                for i in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(i as f64 / quarter.max(1) as f64);
                    row[axis * 2 * quarter + i] = T::lit((pos * omega).sin());
                    row[axis * 2 * quarter + quarter + i] = T::lit((pos * omega).cos());
                }
            }
        }
    }
    out
}

/// Multi-head joint attention over `seq` rows.
///
/// `q`, `k`, `v`, `out` are `seq x d`, `probs` is `heads x seq x seq`.
/// Keys with `key_valid[j] == false` get exactly zero weight.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    seq: usize,
    d: usize,
    heads: usize,
    key_valid: &[bool],
    out: &mut [T],
    probs: &mut [T],
) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for h in 0..heads {
        let p = &mut probs[h * seq * seq..(h + 1) * seq * seq];
        gemm(
            scale,
            MatRef::cols_of(q, seq, d, h * dh, dh),
            MatRef::cols_of(k, seq, d, h * dh, dh).t(),
            T::zero(),
            MatMut::new(p, seq, seq),
        );
        for row in p.chunks_exact_mut(seq) {
            masked_softmax(row, key_valid);
        }
        gemm(
            T::one(),
            MatRef::new(p, seq, seq),
            MatRef::cols_of(v, seq, d, h * dh, dh),
            T::zero(),
            MatMut::cols_of(out, seq, d, h * dh, dh),
        );
    }
}

fn masked_softmax<T: Scalar>(row: &mut [T], valid: &[bool]) {
    let mut max = T::neg_infinity();
    let mut any = false;
    for (x, &ok) in row.iter().zip(valid) {
        if ok {
            any = true;
            // NaN scores must poison the row rather than vanish
            if x.is_nan() || *x > max {
                max = *x;
            }
            if max.is_nan() {
                break;
            }
        }
    }
    if !any {
        row.iter_mut().for_each(|x| *x = T::zero());
        return;
    }
    let mut sum = T::zero();
    for (x, &ok) in row.iter_mut().zip(valid) {
        if ok {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|x| *x *= inv);
}

/// Backward of [`attention`]; accumulates into `dq`, `dk`, `dv`.
/// `scratch` must hold `seq * seq` values.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    seq: usize,
    d: usize,
    heads: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
    scratch: &mut [T],
) {
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    for h in 0..heads {
        let p = &probs[h * seq * seq..(h + 1) * seq * seq];
        // dV_h += P^T dO_h
        gemm(
            T::one(),
            MatRef::new(p, seq, seq).t(),
            MatRef::cols_of(dout, seq, d, h * dh, dh),
            T::one(),
            MatMut::cols_of(dv, seq, d, h * dh, dh),
        );
        // dP = dO_h V_h^T
        let ds = &mut scratch[..seq * seq];
        gemm(
            T::one(),
            MatRef::cols_of(dout, seq, d, h * dh, dh),
            MatRef::cols_of(v, seq, d, h * dh, dh).t(),
            T::zero(),
            MatMut::new(ds, seq, seq),
        );
        // dS = P * (dP - rowsum(P * dP))
        for (drow, prow) in ds.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
            let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            for (g, &pi) in drow.iter_mut().zip(prow) {
                *g = pi * (*g - dot);
            }
        }
        gemm(
            scale,
            MatRef::new(ds, seq, seq),
            MatRef::cols_of(k, seq, d, h * dh, dh),
            T::one(),
            MatMut::cols_of(dq, seq, d, h * dh, dh),
        );
        gemm(
            scale,
            MatRef::new(ds, seq, seq).t(),
            MatRef::cols_of(q, seq, d, h * dh, dh),
            T::one(),
            MatMut::cols_of(dk, seq, d, h * dh, dh),
        );
    }
}
