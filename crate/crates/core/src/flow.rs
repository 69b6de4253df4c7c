//! Linear-path flow matching: interpolant, target velocity, loss,
//! three-branch guidance and the Euler sampler.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor, Latent, LatentMask, NoisyLatent, VelocityField};
use crate::model::{Mmdit, Params};
use crate::scalar::Scalar;
use crate::text::PromptEmbeddings;

/// `t * z + (1 - t) * eps`; `t = 0` is pure noise, `t = 1` is data.
pub fn interpolate<T: Scalar>(z: &Latent<T>, eps: &Latent<T>, t: T) -> Result<NoisyLatent<T>> {
    z.check_same_shape(eps, "data vs noise")?;
    if !(t >= T::zero() && t <= T::one()) {
        return Err(Error::Invalid(format!("time {t} outside [0, 1]")));
    }
    let s = T::one() - t;
    let data = z.data.iter().zip(&eps.data).map(|(&a, &e)| t * a + s * e).collect();
    Ok(z.like(data))
}

/// `z - eps`, constant along the path.
pub fn target_velocity<T: Scalar>(z: &Latent<T>, eps: &Latent<T>) -> Result<VelocityField<T>> {
    z.check_same_shape(eps, "data vs noise")?;
    let data = z.data.iter().zip(&eps.data).map(|(&a, &e)| a - e).collect();
    Ok(z.like(data))
}

/// Mean squared error over every cell and channel.
pub fn cfm_loss<T: Scalar>(pred: &VelocityField<T>, target: &VelocityField<T>) -> Result<T> {
    pred.check_same_shape(target, "prediction vs target")?;
    // compensated sum keeps the reduction error independent of the grid size
    let (mut acc, mut carry) = (T::zero(), T::zero());
    for (&p, &q) in pred.data.iter().zip(&target.data) {
        let r = p - q;
        let x = r * r;
        let s = acc + x;
        carry += if acc.abs() >= x { (acc - s) + x } else { (x - s) + acc };
        acc = s;
    }
    let loss = (acc + carry) / T::from_usize(pred.data.len().max(1)).unwrap();
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "loss".into() });
    }
    Ok(loss)
}

/// Gradient of [`cfm_loss`] with respect to the prediction.
pub fn cfm_loss_grad<T: Scalar>(pred: &VelocityField<T>, target: &VelocityField<T>) -> VelocityField<T> {
    let k = T::lit(2.0) / T::from_usize(pred.data.len().max(1)).unwrap();
    let data = pred.data.iter().zip(&target.data).map(|(&p, &q)| k * (p - q)).collect();
    pred.like(data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceScales {
    /// Text scale.
    pub alpha_x: f64,
    /// Image scale.
    pub alpha_v: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self {
            alpha_x: 4.0,
            alpha_v: 1.5,
        }
    }
}

impl GuidanceScales {
    pub const UNIT: Self = Self {
        alpha_x: 1.0,
        alpha_v: 1.0,
    };
}

/// `u_uncond + a_v (u_img - u_uncond) + a_x (u_full - u_img)`, evaluated
/// as a weighted sum so unit and zero scales reproduce a branch exactly.
pub fn cfg_combine<T: Scalar>(
    u_uncond: &VelocityField<T>,
    u_img: &VelocityField<T>,
    u_full: &VelocityField<T>,
    scales: GuidanceScales,
) -> Result<VelocityField<T>> {
    u_uncond.check_same_shape(u_img, "guidance branches")?;
    u_uncond.check_same_shape(u_full, "guidance branches")?;
    let w_uncond = T::lit(1.0 - scales.alpha_v);
    let w_img = T::lit(scales.alpha_v - scales.alpha_x);
    let w_full = T::lit(scales.alpha_x);
    let data = u_uncond
        .data
        .iter()
        .zip(&u_img.data)
        .zip(&u_full.data)
        .map(|((&a, &b), &c)| w_uncond * a + w_img * b + w_full * c)
        .collect();
    Ok(u_uncond.like(data))
}

/// How training draws flow times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeSampling {
    Uniform,
    LogitNormal { mean: f64, std: f64 },
}

impl TimeSampling {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            TimeSampling::Uniform => rng.random::<f64>(),
            TimeSampling::LogitNormal { mean, std } => {
                let n: f64 = StandardNormal.sample(rng);
                1.0 / (1.0 + (-(mean + std * n)).exp())
            }
        }
    }
}

impl fmt::Display for TimeSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeSampling::Uniform => f.write_str("uniform"),
            TimeSampling::LogitNormal { mean, std } => write!(f, "logit_normal:{mean}:{std}"),
        }
    }
}

impl FromStr for TimeSampling {
    type Err = String;
    /// `uniform` or `logit_normal:<mean>:<std>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["uniform"] => Ok(TimeSampling::Uniform),
            ["logit_normal", m, sd] => {
                let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
                let (mean, std) = (num(m)?, num(sd)?);
                if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                    return Err(format!("bad logit-normal parameters in `{s}`"));
                }
                Ok(TimeSampling::LogitNormal { mean, std })
            }
            _ => Err(format!("unknown time sampling `{s}`")),
        }
    }
}

/// Standard normal latent. Values are drawn at single precision and
/// widened, so f32 and f64 runs start from the same noise.
pub fn draw_noise<T: Scalar, R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> Latent<T> {
    let data = (0..h * w * c)
        .map(|_| {
            let n: f32 = StandardNormal.sample(rng);
            T::from_f32_lossy(n)
        })
        .collect();
    Grid {
        height: h,
        width: w,
        channels: c,
        data,
    }
}

/// Starting latent of [`sample_latent`] for a seed.
pub fn initial_noise<T: Scalar>(seed: u64, h: usize, w: usize, c: usize) -> Latent<T> {
    draw_noise(&mut ChaCha8Rng::seed_from_u64(seed), h, w, c)
}

/// Anything that predicts a velocity. `cond = None` is the null visual
/// condition.
pub trait VelocityModel<T: Scalar> {
    fn velocity(
        &self,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<VelocityField<T>>;
}

/// A model definition bound to weights.
#[derive(Clone, Copy, Debug)]
pub struct Bound<'a, T> {
    pub model: &'a Mmdit,
    pub params: &'a Params<T>,
}

impl<T: Scalar> VelocityModel<T> for Bound<'_, T> {
    fn velocity(
        &self,
        prompt: &PromptEmbeddings<T>,
        t: T,
        z_t: &Latent<T>,
        cond: Option<(&Latent<T>, &LatentMask<T>)>,
    ) -> Result<VelocityField<T>> {
        self.model.predict(self.params, prompt, t, z_t, cond)
    }
}

/// Everything one guided generation needs.
#[derive(Clone, Debug)]
pub struct SampleSpec<T> {
    pub prompt: PromptEmbeddings<T>,
    pub null_prompt: PromptEmbeddings<T>,
    /// Visual condition; `None` behaves as the null image and mask.
    pub visual: Option<(Latent<T>, LatentMask<T>)>,
    /// Latent grid `(h, w, c_lat)`.
    pub latent_dims: (usize, usize, usize),
    pub steps: usize,
    pub seed: u64,
    pub scales: GuidanceScales,
}

/// Euler integration from noise at `t = 0` to data at `t = 1` with three
/// model calls per step: unconditional, image-only, full.
pub fn sample_latent<T: Scalar, M: VelocityModel<T>>(model: &M, spec: &SampleSpec<T>) -> Result<Latent<T>> {
    if spec.steps == 0 {
        return Err(Error::Invalid("sampler needs at least one step".into()));
    }
    let (h, w, c) = spec.latent_dims;
    let mut z = initial_noise::<T>(spec.seed, h, w, c);
    let visual = spec.visual.as_ref().map(|(v, m)| (v, m));
    let dt = T::one() / T::from_usize(spec.steps).unwrap();
    for k in 0..spec.steps {
        let t = T::from_usize(k).unwrap() / T::from_usize(spec.steps).unwrap();
        let u_uncond = model.velocity(&spec.null_prompt, t, &z, None)?;
        let u_img = model.velocity(&spec.null_prompt, t, &z, visual)?;
        let u_full = model.velocity(&spec.prompt, t, &z, visual)?;
        let u = cfg_combine(&u_uncond, &u_img, &u_full, spec.scales)?;
        for (a, &b) in z.data.iter_mut().zip(&u.data) {
            *a += dt * b;
        }
        if !z.is_finite() {
            return Err(Error::SamplerNan { step: k });
        }
    }
    Ok(z)
}

/// [`sample_latent`] followed by decoding to pixels.
pub fn sample<T: Scalar, M: VelocityModel<T>>(model: &M, spec: &SampleSpec<T>, codec: &Codec) -> Result<ImageTensor<T>> {
    codec.decode(&sample_latent(model, spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{null_prompt, Vocabulary};
    use proptest::prelude::*;

    fn grid(h: usize, w: usize, c: usize, v: Vec<f64>) -> Grid<f64> {
        Grid::from_vec(h, w, c, v).unwrap()
    }

    #[test]
    fn scalar_examples() {
        let z = grid(1, 1, 1, vec![2.0]);
        let e = grid(1, 1, 1, vec![0.0]);
        assert_eq!(interpolate(&z, &e, 0.25).unwrap().data, vec![0.5]);
        let e = grid(1, 1, 1, vec![0.5]);
        assert_eq!(target_velocity(&z, &e).unwrap().data, vec![1.5]);
        assert_eq!(target_velocity(&z, &z).unwrap().data, vec![0.0]);
        assert!(interpolate(&z, &grid(1, 1, 2, vec![0.0, 0.0]), 0.5).is_err());
        assert!(interpolate(&z, &e, 1.5).is_err());
    }

    #[test]
    fn loss_examples() {
        let a = grid(2, 2, 1, vec![1.0, -2.0, 3.0, 0.5]);
        assert_eq!(cfm_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 0.75);
        assert!((cfm_loss(&b, &a).unwrap() - 0.5625).abs() < 1e-15);
        let mut nan = a.clone();
        nan.data[0] = f64::NAN;
        assert!(cfm_loss(&nan, &a).is_err());
    }

    #[test]
    fn guidance_examples() {
        let f = |v: f64| grid(1, 1, 1, vec![v]);
        let u = cfg_combine(&f(0.0), &f(1.0), &f(3.0), GuidanceScales::default()).unwrap();
        assert_eq!(u.data, vec![9.5]);
    }

    #[test]
    fn loss_grad_matches_differences() {
        let p = grid(1, 2, 2, vec![0.3, -1.1, 2.0, 0.1]);
        let q = grid(1, 2, 2, vec![-0.4, 0.2, 1.5, 0.0]);
        let g = cfm_loss_grad(&p, &q);
        for i in 0..4 {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi.data[i] += 1e-6;
            lo.data[i] -= 1e-6;
            let fd = (cfm_loss(&hi, &q).unwrap() - cfm_loss(&lo, &q).unwrap()) / 2e-6;
            assert!((fd - g.data[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn endpoints_and_identity(vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40), t in 0.0f64..1.0) {
            let n = vals.len();
            let z = grid(1, 1, n, vals.iter().map(|v| v.0).collect());
            let e = grid(1, 1, n, vals.iter().map(|v| v.1).collect());
            prop_assert_eq!(interpolate(&z, &e, 1.0).unwrap(), z.clone());
            prop_assert_eq!(interpolate(&z, &e, 0.0).unwrap(), e.clone());
            let zt = interpolate(&z, &e, t).unwrap();
            let u = target_velocity(&z, &e).unwrap();
            for i in 0..n {
                let back = zt.data[i] + (1.0 - t) * u.data[i];
                prop_assert!((back - z.data[i]).abs() <= 1e-12 * z.data[i].abs().max(1.0));
            }
        }

        #[test]
        fn guidance_telescopes(vals in prop::collection::vec((-9.0f64..9.0, -9.0f64..9.0, -9.0f64..9.0), 1..20)) {
            let n = vals.len();
            let a = grid(1, 1, n, vals.iter().map(|v| v.0).collect());
            let b = grid(1, 1, n, vals.iter().map(|v| v.1).collect());
            let c = grid(1, 1, n, vals.iter().map(|v| v.2).collect());
            prop_assert_eq!(cfg_combine(&a, &b, &c, GuidanceScales::UNIT).unwrap(), c.clone());
            let zero = GuidanceScales { alpha_x: 0.0, alpha_v: 0.0 };
            prop_assert_eq!(cfg_combine(&a, &b, &c, zero).unwrap(), a.clone());
        }
    }

    /// Velocity `target - noise` regardless of inputs.
    struct Constant(Latent<f64>);

    impl VelocityModel<f64> for Constant {
        fn velocity(
            &self,
            _: &PromptEmbeddings<f64>,
            _: f64,
            _: &Latent<f64>,
            _: Option<(&Latent<f64>, &LatentMask<f64>)>,
        ) -> Result<VelocityField<f64>> {
            Ok(self.0.clone())
        }
    }

    /// `u = target - z`: Euler error shrinks with the step size.
    struct Linear(Latent<f64>);

    impl VelocityModel<f64> for Linear {
        fn velocity(
            &self,
            _: &PromptEmbeddings<f64>,
            _: f64,
            z: &Latent<f64>,
            _: Option<(&Latent<f64>, &LatentMask<f64>)>,
        ) -> Result<VelocityField<f64>> {
            target_velocity(&self.0, z)
        }
    }

    fn spec(steps: usize, seed: u64, scales: GuidanceScales) -> SampleSpec<f64> {
        let model = Mmdit::new(crate::model::ModelConfig::tiny()).unwrap();
        let params = model.init_params::<f64>(0);
        let np = null_prompt(&Vocabulary::default(), &params, &model.index.text);
        SampleSpec {
            prompt: np.clone(),
            null_prompt: np,
            visual: None,
            latent_dims: (4, 4, 12),
            steps,
            seed,
            scales,
        }
    }

    fn target() -> Latent<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        draw_noise::<f32, _>(&mut rng, 4, 4, 12).cast()
    }

    #[test]
    fn constant_field_oracle() {
        let codec = Codec::default();
        let z_star = target();
        let eps = initial_noise::<f64>(5, 4, 4, 12);
        let oracle = Constant(target_velocity(&z_star, &eps).unwrap());
        let one = sample(&oracle, &spec(1, 5, GuidanceScales::UNIT), &codec).unwrap();
        assert_eq!(one, codec.decode(&z_star).unwrap());
        let many = sample_latent(&oracle, &spec(50, 5, GuidanceScales::UNIT)).unwrap();
        assert!(many.max_abs_diff(&z_star) < 1e-5);
    }

    #[test]
    fn seeds_and_convergence() {
        let lin = Linear(target());
        let a = sample_latent(&lin, &spec(10, 1, GuidanceScales::default())).unwrap();
        let b = sample_latent(&lin, &spec(10, 1, GuidanceScales::default())).unwrap();
        let c = sample_latent(&lin, &spec(10, 2, GuidanceScales::default())).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let runs: Vec<_> = [10, 20, 40, 80, 160]
            .iter()
            .map(|&s| sample_latent(&lin, &spec(s, 1, GuidanceScales::UNIT)).unwrap())
            .collect();
        let gaps: Vec<f64> = runs.windows(2).map(|w| w[0].max_abs_diff(&w[1])).collect();
        assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{gaps:?}");
    }

    #[test]
    fn nan_reports_step() {
        struct Blowup;
        impl VelocityModel<f64> for Blowup {
            fn velocity(
                &self,
                _: &PromptEmbeddings<f64>,
                t: f64,
                z: &Latent<f64>,
                _: Option<(&Latent<f64>, &LatentMask<f64>)>,
            ) -> Result<VelocityField<f64>> {
                Ok(z.map(|_| if t > 0.25 { f64::INFINITY } else { 0.0 }))
            }
        }
        match sample_latent(&Blowup, &spec(4, 0, GuidanceScales::UNIT)) {
            Err(Error::SamplerNan { step }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }
}
