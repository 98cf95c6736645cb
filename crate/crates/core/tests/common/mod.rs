//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops and dense algebra, without
//! reusing the library code it is compared against.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use siamdefect::image::{Image, LabelMask};
use siamdefect_grad::{ParamId, ParamStore, Tape, Tensor, Var};

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

/// `x W + b` with `W` stored `[in, out]`.
pub fn affine(x: &[Vec<f64>], w: &Tensor, b: Option<&Tensor>) -> Vec<Vec<f64>> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|r| {
            assert_eq!(r.len(), cin);
            (0..cout)
                .map(|o| {
                    let mut s = b.map_or(0.0, |b| b.data()[o]);
                    for (i, v) in r.iter().enumerate() {
                        s += v * w.data()[i * cout + o];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Textbook multi-head attention with sequence reduction: the key/value
/// rows are concatenated in groups of `ratio`, every projection is applied
/// explicitly, and each head runs its own softmax.
#[allow(clippy::too_many_arguments)]
pub fn attention_oracle(
    q_in: &[Vec<f64>],
    kv_in: &[Vec<f64>],
    wq: (&Tensor, &Tensor),
    wk: (&Tensor, &Tensor),
    wv: (&Tensor, &Tensor),
    wo: (&Tensor, &Tensor),
    heads: usize,
    ratio: usize,
) -> Vec<Vec<f64>> {
    let grouped: Vec<Vec<f64>> = kv_in.chunks(ratio).map(|g| g.concat()).collect();
    let q = affine(q_in, wq.0, Some(wq.1));
    let k = affine(&grouped, wk.0, Some(wk.1));
    let v = affine(&grouped, wv.0, Some(wv.1));
    let c = q[0].len();
    let dh = c / heads;
    let mut out = vec![vec![0.0; c]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|t| qi[t] * kj[t]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in cols.clone() {
                out[i][t] = e.iter().zip(&v).map(|(a, vj)| a / z * vj[t]).sum();
            }
        }
    }
    affine(&out, wo.0, Some(wo.1))
}

/// Dense solve of the 4-neighbour Poisson blend of one channel.
pub fn dense_poisson(
    source: &[f64],
    target: &[f64],
    mask: &[bool],
    w: usize,
    h: usize,
) -> Vec<f64> {
    let unknowns: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
    let n = unknowns.len();
    let index = |p: usize| unknowns.iter().position(|&u| u == p);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (k, &p) in unknowns.iter().enumerate() {
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        a[(k, k)] = 4.0;
        for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let q = ((y + dy) * w as i64 + x + dx) as usize;
            b[k] += source[p] - source[q];
            match index(q) {
                Some(j) => a[(k, j)] -= 1.0,
                None => b[k] += target[q],
            }
        }
    }
    let sol = a.lu().solve(&b).expect("Poisson system is nonsingular");
    let mut out = target.to_vec();
    for (k, &p) in unknowns.iter().enumerate() {
        out[p] = sol[k];
    }
    out
}

pub fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Pixel-by-pixel `counts[gt][pred]`.
pub fn naive_confusion(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            m[gt.get(x, y) as usize][pred.get(x, y) as usize] += 1;
        }
    }
    m
}

/// `(tp, fp, fn)` of "prob >= t" against the boolean ground truth.
pub fn naive_counts(prob: &[f64], gt: &[bool], t: f64) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in prob.iter().zip(gt) {
        let pos = p >= t;
        if pos && g {
            tp += 1;
        } else if pos {
            fp += 1;
        } else if g {
            fn_ += 1;
        }
    }
    (tp, fp, fn_)
}

pub fn random_mask<R: Rng>(rng: &mut R, w: usize, h: usize, classes: u8) -> LabelMask {
    LabelMask::new(
        w,
        h,
        (0..w * h).map(|_| rng.random_range(0..classes)).collect(),
    )
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// Relative error as reported by the gradient checker:
/// `max |a - n| / max(max |a|, max |n|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference check of a scalar function's gradient with respect to
/// stored parameters. Up to `per_tensor` entries of every listed tensor are
/// probed. Returns the largest relative error over the tensors.
pub fn param_gradcheck<F>(
    store: &ParamStore,
    ids: &[ParamId],
    per_tensor: usize,
    eps: f64,
    f: F,
) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store);
    let grads = tape.backward(root);
    let eval = |s: &ParamStore| {
        let mut t = Tape::inference();
        let r = f(&mut t, s);
        t.value(r).item()
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.get(id).numel();
        let stride = (n / per_tensor).max(1);
        let probes: Vec<usize> = (0..n).step_by(stride).take(per_tensor).collect();
        let analytic: Vec<f64> = probes
            .iter()
            .map(|&i| grads.param(id).map_or(0.0, |g| g.data()[i]))
            .collect();
        let mut work = store.clone();
        let numeric: Vec<f64> = probes
            .iter()
            .map(|&i| {
                let orig = work.get(id).data()[i];
                work.get_mut(id).data_mut()[i] = orig + eps;
                let plus = eval(&work);
                work.get_mut(id).data_mut()[i] = orig - eps;
                let minus = eval(&work);
                work.get_mut(id).data_mut()[i] = orig;
                (plus - minus) / (2.0 * eps)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
