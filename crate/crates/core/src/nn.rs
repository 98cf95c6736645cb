//! Parameterised layers on top of the autodiff tape.
//!
//! Each layer owns only [`ParamId`]s; values live in a shared [`ParamStore`]
//! so that the two Siamese branches read literally the same tensors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use siamdefect_grad::{ConvGeometry, ParamId, ParamStore, Tape, Tensor, Var};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

/// Normal(0, std) samples redrawn until they fall within two deviations.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

/// Builds parameters under a dotted name prefix.
pub struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    prefix: String,
}

impl<'a, R: Rng> Builder<'a, R> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = self.full_name(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = trunc_normal(self.rng, shape, INIT_STD);
        let n = self.full_name(name);
        self.store.add(n, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Tensor::full(shape.to_vec(), value))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
    ) -> Self {
        b.scoped(name, |b| Self {
            weight: b.weight("weight", &[cin, cout]),
            bias: bias.then(|| b.constant("bias", &[cout], 0.0)),
            in_features: cin,
            out_features: cout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, dim: usize) -> Self {
        b.scoped(name, |b| Self {
            gamma: b.constant("gamma", &[dim], 1.0),
            beta: b.constant("beta", &[dim], 0.0),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Dense channels-last convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        b: &mut Builder<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        geometry: ConvGeometry,
    ) -> Self {
        let k = geometry.kernel;
        b.scoped(name, |b| Self {
            weight: b.weight("weight", &[k * k * cin, cout]),
            bias: b.constant("bias", &[cout], 0.0),
            geometry,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.conv2d(x, w, Some(b), self.geometry)
    }
}

/// Depthwise 3x3 convolution with same padding.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl DepthwiseConv {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, channels: usize, kernel: usize) -> Self {
        b.scoped(name, |b| Self {
            weight: b.weight("weight", &[kernel * kernel, channels]),
            bias: b.constant("bias", &[channels], 0.0),
            kernel,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.depthwise_conv2d(x, w, Some(b), self.kernel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_two_by_three_has_nine_parameters() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        Linear::new(&mut b, "fc", 2, 3, true);
        assert_eq!(store.num_scalars(), 9);
        assert!(store.find("fc.weight").is_some());
        assert!(store.find("fc.bias").is_some());
    }

    #[test]
    fn trunc_normal_stays_within_two_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = trunc_normal(&mut rng, &[10_000], INIT_STD);
        assert!(t.max_abs() <= 2.0 * INIT_STD);
        let mean = t.sum() / 10_000.0;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn scopes_nest_names() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        b.scoped("enc", |b| b.scoped("s0", |b| LayerNorm::new(b, "norm", 4)));
        assert!(store.find("enc.s0.norm.gamma").is_some());
    }
}
