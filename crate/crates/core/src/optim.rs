//! AdamW with a warmed-up polynomial learning-rate schedule.

use siamdefect_grad::{ParamId, ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
/// Learning-rate factor at the first warmup step.
pub const WARMUP_RATIO: f64 = 1e-6;

/// Learning rate at zero-based step `t` of a `total`-step run: linear warmup
/// from `base * WARMUP_RATIO` over `warmup` steps, times linear decay to zero.
pub fn learning_rate(base: f64, t: usize, total: usize, warmup: usize) -> f64 {
    let poly = if total == 0 {
        1.0
    } else {
        (1.0 - t as f64 / total as f64).max(0.0)
    };
    let warm = if t < warmup {
        WARMUP_RATIO + (1.0 - WARMUP_RATIO) * t as f64 / warmup as f64
    } else {
        1.0
    };
    base * poly * warm
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far; drives bias correction.
    pub steps: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    /// Decay applies to matrices and kernels only; biases and norm gains are
    /// left alone.
    pub fn decays(t: &Tensor) -> bool {
        t.rank() >= 2
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; `None` means
    /// the parameter did not influence the loss, which still decays it and
    /// still advances its moments towards zero. Parameter `i` uses the
    /// learning rate `lr * lr_mult[i]`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
        lr_mult: &[f64],
    ) {
        assert_eq!(grads.len(), self.m.len(), "one gradient slot per parameter");
        assert_eq!(
            lr_mult.len(),
            self.m.len(),
            "one learning-rate multiplier per parameter"
        );
        self.steps += 1;
        let c1 = 1.0 - BETA1.powi(self.steps as i32);
        let c2 = 1.0 - BETA2.powi(self.steps as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = store.get_mut(ParamId(i));
            let wd = if Self::decays(p) {
                self.weight_decay
            } else {
                0.0
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            let lr = lr * lr_mult[i];
            for j in 0..pd.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data()[j]);
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
                pd[j] -= lr * (update + wd * pd[j]);
            }
        }
    }
}
