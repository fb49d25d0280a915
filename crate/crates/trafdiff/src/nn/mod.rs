//! Small neural-network toolkit with explicit reverse-mode gradients.
//!
//! No autodiff graph: each layer caches what its backward pass needs and
//! the models wire forward/backward calls by hand. Everything is generic
//! over the element type so production runs in f32 while gradient checks
//! run the same code in f64.

pub mod layers;
pub mod optim;

pub use layers::{
    global_avg_pool, global_avg_pool_backward, sinusoid_embedding, Conv1d, Conv2d, Embedding,
    GlobalAvgPool, GroupNorm, Layer, Linear, Sequential, SiLU, Upsample1d, Upsample2d,
};
pub use optim::{Adam, Ema};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type of tensors: f32 in production, f64 when checking gradients.
pub trait El:
    num_traits::Float
    + num_traits::NumAssignOps
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl El for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl El for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// A tensor of learnable weights with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<E> {
    pub w: ArrayD<E>,
    pub g: ArrayD<E>,
}

impl<E: El> Param<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { w: ArrayD::zeros(IxDyn(shape)), g: ArrayD::zeros(IxDyn(shape)) }
    }

    /// Gaussian init with the given std-dev. Draws in f64 so f32 and f64
    /// models built from the same seed agree up to rounding.
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = StandardNormal;
        let w = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            E::from_f64(<StandardNormal as Distribution<f64>>::sample(&normal, rng) * std)
        });
        let g = ArrayD::zeros(w.raw_dim());
        Self { w, g }
    }

    /// Uniform(-bound, bound) init, the usual fan-in rule for conv/linear.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = ArrayD::from_shape_simple_fn(IxDyn(shape), || {
            E::from_f64(rng.random_range(-bound..bound))
        });
        let g = ArrayD::zeros(w.raw_dim());
        Self { w, g }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(E::zero());
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Zero the gradients of a parameter set.
pub fn zero_grads<E: El>(params: &mut [&mut Param<E>]) {
    for p in params {
        p.zero_grad();
    }
}

/// Total scalar count of a parameter set.
pub fn param_count<E: El>(params: &[&mut Param<E>]) -> usize {
    params.iter().map(|p| p.len()).sum()
}

/// Result of probing one coordinate in a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradProbe {
    pub param_index: usize,
    pub flat_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compare analytic gradients against central finite differences on
/// `probes` randomly chosen coordinates. `loss_and_grad` must zero old
/// gradients, run forward+backward, and return the loss; `read` exposes
/// the model's parameters between calls. f64 models only; f32 cannot hold
/// the tolerance.
pub fn finite_diff_check<M>(
    model: &mut M,
    mut params_of: impl FnMut(&mut M) -> Vec<&mut Param<f64>>,
    mut loss_and_grad: impl FnMut(&mut M) -> f64,
    probes: usize,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<GradProbe> {
    // One full backward pass for the analytic side.
    loss_and_grad(model);
    let (coords, analytic): (Vec<(usize, usize)>, Vec<f64>) = {
        let params = params_of(model);
        let total: usize = params.iter().map(|p| p.len()).sum();
        assert!(total > 0, "model has no parameters");
        let mut coords = Vec::with_capacity(probes);
        let mut analytic = Vec::with_capacity(probes);
        for _ in 0..probes {
            let mut flat = rng.random_range(0..total);
            let mut pi = 0;
            while flat >= params[pi].len() {
                flat -= params[pi].len();
                pi += 1;
            }
            coords.push((pi, flat));
            analytic.push(params[pi].g.as_slice().expect("standard layout")[flat]);
        }
        (coords, analytic)
    };

    let mut out = Vec::with_capacity(probes);
    for (k, &(pi, flat)) in coords.iter().enumerate() {
        let orig = {
            let mut params = params_of(model);
            let w = params[pi].w.as_slice_mut().expect("standard layout");
            let orig = w[flat];
            w[flat] = orig + h;
            orig
        };
        let up = loss_and_grad(model);
        {
            let mut params = params_of(model);
            params[pi].w.as_slice_mut().unwrap()[flat] = orig - h;
        }
        let down = loss_and_grad(model);
        {
            let mut params = params_of(model);
            params[pi].w.as_slice_mut().unwrap()[flat] = orig;
        }
        let numeric = (up - down) / (2.0 * h);
        // Floor absorbs central-difference roundoff (~1e-11 at unit loss
        // scale) on parameters whose true gradient vanishes.
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        out.push(GradProbe {
            param_index: pi,
            flat_index: flat,
            analytic: analytic[k],
            numeric,
            rel_err: (analytic[k] - numeric).abs() / denom,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn param_init_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a: Param<f32> = Param::randn(&[3, 4], 0.1, &mut r1);
        let b: Param<f32> = Param::randn(&[3, 4], 0.1, &mut r2);
        assert_eq!(a.w, b.w);
        assert!(a.g.iter().all(|&g| g == 0.0));
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn f32_and_f64_share_draws() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a: Param<f32> = Param::randn(&[8], 1.0, &mut r1);
        let b: Param<f64> = Param::randn(&[8], 1.0, &mut r2);
        for (x, y) in a.w.iter().zip(b.w.iter()) {
            assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn finite_diff_agrees_on_quadratic() {
        // loss = sum(w^2); grad = 2w.
        struct Quad {
            p: Param<f64>,
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Quad { p: Param::randn(&[10], 1.0, &mut rng) };
        let probes = finite_diff_check(
            &mut m,
            |m| vec![&mut m.p],
            |m| {
                let loss: f64 = m.p.w.iter().map(|w| w * w).sum();
                m.p.g.assign(&(&m.p.w * 2.0));
                loss
            },
            10,
            1e-6,
            &mut rng,
        );
        for p in probes {
            assert!(p.rel_err < 1e-8, "{p:?}");
        }
    }
}
