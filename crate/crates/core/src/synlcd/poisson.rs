//! Gradient-domain compositing.
//!
//! Inside the mask the output solves the 4-neighbour discrete Poisson
//! equation whose right-hand side is the divergence of the source
//! gradients; outside the mask the target is copied and serves as the
//! Dirichlet boundary. Each channel is solved independently with conjugate
//! gradients on the symmetric positive definite system.

use crate::error::{Error, Result};
use crate::image::Image;

/// Relative residual at which conjugate gradients stops.
pub const CG_TOLERANCE: f64 = 1e-12;

/// Blends `source` into `target` over `mask` (row-major, `true` = unknown).
///
/// The mask must not touch the image border: every unknown needs all four
/// neighbours. See [`poisson_blend_padded`] for masks that do.
pub fn poisson_blend(source: &Image, target: &Image, mask: &[bool]) -> Result<Image> {
    let (w, h) = target.dims();
    if source.dims() != (w, h) || mask.len() != w * h {
        return Err(Error::Shape(format!(
            "source {:?}, target {:?} and a mask of {} pixels do not align",
            source.dims(),
            (w, h),
            mask.len()
        )));
    }
    let mut out = target.clone();
    let unknowns: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
    if unknowns.is_empty() {
        return Ok(out);
    }
    for &i in &unknowns {
        let (x, y) = (i % w, i / w);
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            return Err(Error::Poisson(format!(
                "mask touches the image border at ({x}, {y}); no boundary values there"
            )));
        }
    }
    let mut slot = vec![usize::MAX; w * h];
    for (k, &i) in unknowns.iter().enumerate() {
        slot[i] = k;
    }
    let neighbours = |i: usize| [i - 1, i + 1, i - w, i + w];
    let n = unknowns.len();
    for c in 0..3 {
        let s = |i: usize| source.data()[i * 3 + c];
        let t = |i: usize| target.data()[i * 3 + c];
        let mut b = vec![0.0; n];
        for (k, &i) in unknowns.iter().enumerate() {
            for q in neighbours(i) {
                b[k] += s(i) - s(q);
                if !mask[q] {
                    b[k] += t(q);
                }
            }
        }
        // A x = 4 x_p - sum of unknown neighbours.
        let apply = |x: &[f64], out: &mut [f64]| {
            for (k, &i) in unknowns.iter().enumerate() {
                let mut v = 4.0 * x[k];
                for q in neighbours(i) {
                    if mask[q] {
                        v -= x[slot[q]];
                    }
                }
                out[k] = v;
            }
        };
        let x0: Vec<f64> = unknowns.iter().map(|&i| t(i)).collect();
        let x = conjugate_gradient(apply, &b, x0);
        for (k, &i) in unknowns.iter().enumerate() {
            out.data_mut()[i * 3 + c] = x[k];
        }
    }
    Ok(out)
}

/// [`poisson_blend`] for masks that may reach the border: both images are
/// padded by one replicated pixel, so the target's edge values act as the
/// boundary there, and the result is cropped back.
pub fn poisson_blend_padded(source: &Image, target: &Image, mask: &[bool]) -> Result<Image> {
    let (w, h) = target.dims();
    if source.dims() != (w, h) || mask.len() != w * h {
        return Err(Error::Shape("source, target and mask do not align".into()));
    }
    let pad = |img: &Image| {
        Image::from_fn(w + 2, h + 2, |x, y| {
            img.pixel(
                x.saturating_sub(1).min(w - 1),
                y.saturating_sub(1).min(h - 1),
            )
        })
    };
    let mut pmask = vec![false; (w + 2) * (h + 2)];
    for y in 0..h {
        for x in 0..w {
            pmask[(y + 1) * (w + 2) + x + 1] = mask[y * w + x];
        }
    }
    let out = poisson_blend(&pad(source), &pad(target), &pmask)?;
    Ok(out.crop(1, 1, w, h))
}

fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], mut x: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let b_norm = dot(b, b).sqrt().max(1.0);
    let mut ap = vec![0.0; n];
    // The operator is SPD with condition number O(n); 10n iterations is
    // far more than exact-arithmetic convergence needs.
    for _ in 0..10 * n + 10 {
        if rr.sqrt() <= CG_TOLERANCE * b_norm {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    x
}

/// Largest `|4 u_p - sum u_q - sum (s_p - s_q)|` over masked pixels.
pub fn poisson_residual(out: &Image, source: &Image, mask: &[bool]) -> f64 {
    let (w, _) = out.dims();
    let mut worst: f64 = 0.0;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..3 {
            let u = |j: usize| out.data()[j * 3 + c];
            let s = |j: usize| source.data()[j * 3 + c];
            let mut r = 4.0 * u(i);
            for q in [i - 1, i + 1, i - w, i + w] {
                r -= u(q);
                r -= s(i) - s(q);
            }
            worst = worst.max(r.abs());
        }
    }
    worst
}
