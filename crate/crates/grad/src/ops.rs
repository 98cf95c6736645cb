//! Differentiable operations recorded on a [`Tape`].
//!
//! Spatial operations use channels-last layout: a feature map is a
//! `[H, W, C]` tensor, and token sequences are `[N, C]`.

use crate::tape::{Tape, Var};
use crate::tensor::{gemm, Tensor};

/// Strides of `shape` with zeros on axes where `shape` has size 1 but
/// `target` does not.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    assert_eq!(
        shape.len(),
        target.len(),
        "broadcast needs equal ranks: {shape:?} vs {target:?}"
    );
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        assert!(
            shape[i] == target[i] || shape[i] == 1,
            "cannot broadcast {shape:?} to {target:?}"
        );
        strides[i] = if shape[i] == 1 && target[i] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[i];
    }
    strides
}

/// For each linear index of `target`, the linear index into the broadcast operand.
fn broadcast_index_map(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, target);
    let n: usize = target.iter().product();
    let mut out = Vec::with_capacity(n);
    let rank = target.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < target[ax] {
                break;
            }
            off -= strides[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sums `t` down to `shape` along broadcast axes.
pub fn sum_to_shape(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let map = broadcast_index_map(shape, t.shape());
    let mut out = Tensor::zeros(shape.to_vec());
    let od = out.data_mut();
    for (v, &j) in t.data().iter().zip(&map) {
        od[j] += v;
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-axis linear interpolation taps for half-pixel bilinear resizing.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = pos - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Geometry of a channels-last 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }
}

fn im2col(x: &[f64], h: usize, w: usize, c: usize, g: ConvGeometry) -> (Vec<f64>, usize, usize) {
    let (ho, wo) = g.output_size(h, w);
    let k = g.kernel;
    let row = k * k * c;
    let mut cols = vec![0.0; ho * wo * row];
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * row;
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = base + (ky * k + kx) * c;
                    cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    (cols, ho, wo)
}

fn col2im(cols: &[f64], h: usize, w: usize, c: usize, g: ConvGeometry) -> Vec<f64> {
    let (ho, wo) = g.output_size(h, w);
    let k = g.kernel;
    let row = k * k * c;
    let mut x = vec![0.0; h * w * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * row;
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = base + (ky * k + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] += cols[src + ch];
                    }
                }
            }
        }
    }
    x
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.custom(
            &[a, b],
            value,
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.custom(
            &[a, b],
            value,
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.scale(-1.0))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.custom(
            &[a, b],
            value,
            Box::new(|g, p, _| {
                vec![
                    Some(g.zip_map(p[1], |g, y| g * y)),
                    Some(g.zip_map(p[0], |g, x| g * x)),
                ]
            }),
        )
    }

    /// `a + b` where `b` has the rank of `a` and size 1 on broadcast axes.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let map = broadcast_index_map(bv.shape(), av.shape());
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .zip(&map)
            .map(|(x, &j)| x + bd[j])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.custom(
            &[a, b],
            value,
            Box::new(|g, p, _| vec![Some(g.clone()), Some(sum_to_shape(g, p[1].shape()))]),
        )
    }

    /// `a * b` where `b` has the rank of `a` and size 1 on broadcast axes.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let map = broadcast_index_map(bv.shape(), av.shape());
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .zip(&map)
            .map(|(x, &j)| x * bd[j])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.custom(
            &[a, b],
            value,
            Box::new(move |g, p, _| {
                let bd = p[1].data();
                let ga: Vec<f64> = g.data().iter().zip(&map).map(|(g, &j)| g * bd[j]).collect();
                let mut gb = Tensor::zeros(p[1].shape().to_vec());
                let gbd = gb.data_mut();
                for ((gv, xv), &j) in g.data().iter().zip(p[0].data()).zip(&map) {
                    gbd[j] += gv * xv;
                }
                vec![Some(Tensor::new(g.shape().to_vec(), ga)), Some(gb)]
            }),
        )
    }

    /// Adds a `[C]` bias to every row of an `[.., C]` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        let (_, c) = av.rows_cols();
        assert_eq!(
            bv.numel(),
            c,
            "bias length {} vs feature width {}",
            bv.numel(),
            c
        );
        let mut value = av.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        self.custom(
            &[a, bias],
            value,
            Box::new(|g, p, _| {
                let c = p[1].numel();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(Tensor::new(p[1].shape().to_vec(), gb)),
                ]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.custom(&[a], value, Box::new(move |g, _, _| vec![Some(g.scale(s))]))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.custom(&[a], value, Box::new(|g, _, _| vec![Some(g.clone())]))
    }

    /// `op(a) @ op(b)` for 2-D operands.
    pub fn matmul_t(&mut self, a: Var, trans_a: bool, b: Var, trans_b: bool) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.rank(), 2, "matmul lhs must be 2-D, got {:?}", av.shape());
        assert_eq!(bv.rank(), 2, "matmul rhs must be 2-D, got {:?}", bv.shape());
        let (m, k) = if trans_a {
            (av.shape()[1], av.shape()[0])
        } else {
            (av.shape()[0], av.shape()[1])
        };
        let (k2, n) = if trans_b {
            (bv.shape()[1], bv.shape()[0])
        } else {
            (bv.shape()[0], bv.shape()[1])
        };
        assert_eq!(
            k,
            k2,
            "matmul inner dims {:?} x {:?}",
            av.shape(),
            bv.shape()
        );
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            av.data(),
            trans_a,
            bv.data(),
            trans_b,
            0.0,
            &mut out,
        );
        let value = Tensor::new([m, n], out);
        self.custom(
            &[a, b],
            value,
            Box::new(move |g, p, _| {
                let (a, b) = (p[0], p[1]);
                let mut ga = vec![0.0; m * k];
                if trans_a {
                    gemm(
                        k,
                        n,
                        m,
                        1.0,
                        b.data(),
                        trans_b,
                        g.data(),
                        true,
                        0.0,
                        &mut ga,
                    );
                } else {
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        g.data(),
                        false,
                        b.data(),
                        !trans_b,
                        0.0,
                        &mut ga,
                    );
                }
                let mut gb = vec![0.0; k * n];
                if trans_b {
                    gemm(
                        n,
                        m,
                        k,
                        1.0,
                        g.data(),
                        true,
                        a.data(),
                        trans_a,
                        0.0,
                        &mut gb,
                    );
                } else {
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        a.data(),
                        !trans_a,
                        g.data(),
                        false,
                        0.0,
                        &mut gb,
                    );
                }
                vec![
                    Some(Tensor::new(a.shape().to_vec(), ga)),
                    Some(Tensor::new(b.shape().to_vec(), gb)),
                ]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `x @ w + b` over the last axis. `x` is `[.., in]`, `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let shape = self.shape(x).to_vec();
        let (rows, cin) = self.value(x).rows_cols();
        let cout = self.shape(w)[1];
        let x2 = if shape.len() == 2 {
            x
        } else {
            self.reshape(x, [rows, cin])
        };
        let mut y = self.matmul(x2, w);
        if let Some(b) = b {
            y = self.add_bias(y, b);
        }
        if shape.len() == 2 {
            y
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().unwrap() = cout;
            self.reshape(y, out_shape)
        }
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let value = self.value(a).clone().reshaped(shape);
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(g.clone().reshaped(p[0].shape().to_vec()))]),
        )
    }

    /// Columns `start..start + len` of a `[R, C]` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        assert!(
            start + len <= c,
            "column slice {start}+{len} exceeds width {c}"
        );
        let mut data = Vec::with_capacity(r * len);
        for row in av.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new([r, len], data);
        self.custom(
            &[a],
            value,
            Box::new(move |g, p, _| {
                let mut ga = Tensor::zeros(p[0].shape().to_vec());
                let (_, c) = p[0].rows_cols();
                for (dst, src) in ga.data_mut().chunks_mut(c).zip(g.data().chunks(len)) {
                    dst[start..start + len].copy_from_slice(src);
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Concatenates `[R, C_i]` tensors along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows_cols().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).rows_cols();
                assert_eq!(r, rows, "concat row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for (dst, src) in data.chunks_mut(total).zip(self.value(p).data().chunks(w)) {
                dst[off..off + w].copy_from_slice(src);
            }
            off += w;
        }
        let value = Tensor::new([rows, total], data);
        self.custom(
            parts,
            value,
            Box::new(move |g, p, _| {
                let mut off = 0;
                let mut out = Vec::with_capacity(widths.len());
                for (&w, pv) in widths.iter().zip(p) {
                    let mut d = Vec::with_capacity(rows * w);
                    for row in g.data().chunks(total) {
                        d.extend_from_slice(&row[off..off + w]);
                    }
                    off += w;
                    out.push(Some(Tensor::new(pv.shape().to_vec(), d)));
                }
                out
            }),
        )
    }

    /// Row gather: `out[i] = a[index[i]]` for a `[R, C]` tensor.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            assert!(i < r, "row index {i} out of range {r}");
            data.extend_from_slice(&av.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new([index.len(), c], data);
        self.custom(
            &[a],
            value,
            Box::new(move |g, p, _| {
                let mut ga = Tensor::zeros(p[0].shape().to_vec());
                let gd = ga.data_mut();
                for (row, &i) in g.data().chunks(c).zip(&index) {
                    for (d, v) in gd[i * c..(i + 1) * c].iter_mut().zip(row) {
                        *d += v;
                    }
                }
                vec![Some(ga)]
            }),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape().to_vec(), g.item()))]),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums along axes where `shape` has size 1.
    pub fn sum_to(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let value = sum_to_shape(self.value(a), &shape);
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| {
                let map = broadcast_index_map(g.shape(), p[0].shape());
                let gd = g.data();
                let data = map.iter().map(|&j| gd[j]).collect();
                vec![Some(Tensor::new(p[0].shape().to_vec(), data))]
            }),
        )
    }

    /// Mean along axes where `shape` has size 1.
    pub fn mean_to(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let ratio = self.value(a).numel() as f64 / shape.iter().product::<usize>() as f64;
        let s = self.sum_to(a, shape);
        self.scale(s, 1.0 / ratio)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(g.zip_map(p[0], |g, x| if x > 0.0 { g } else { 0.0 }))]),
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(g.zip_map(p[0], |g, x| g * gelu_grad(x)))]),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.custom(
            &[a],
            value,
            Box::new(|g, _, y| vec![Some(g.zip_map(y, |g, y| g * y * (1.0 - y)))]),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (_, c) = av.rows_cols();
        let mut value = av.clone();
        for row in value.data_mut().chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.custom(
            &[a],
            value,
            Box::new(move |g, _, y| {
                let mut ga = y.clone();
                for (gr, (yr, gi)) in ga
                    .data_mut()
                    .chunks_mut(c)
                    .zip(y.data().chunks(c).zip(g.data().chunks(c)))
                {
                    let dot: f64 = yr.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gr.iter_mut().zip(yr).zip(gi) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(ga)]
            }),
        )
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (_, c) = xv.rows_cols();
        assert_eq!(self.value(gamma).numel(), c);
        assert_eq!(self.value(beta).numel(), c);
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(c) {
            let (mu, inv) = row_stats(row, eps);
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mu) * inv * gd[i] + bd[i];
            }
        }
        self.custom(
            &[x, gamma, beta],
            value,
            Box::new(move |g, p, _| {
                let (x, gamma) = (p[0], p[1].data());
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for ((xr, gr), out) in x
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(gx.data_mut().chunks_mut(c))
                {
                    let (mu, inv) = row_stats(xr, eps);
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for i in 0..c {
                        xhat[i] = (xr[i] - mu) * inv;
                        dxhat[i] = gr[i] * gamma[i];
                        gg[i] += gr[i] * xhat[i];
                        gbeta[i] += gr[i];
                        mean_d += dxhat[i];
                        mean_dx += dxhat[i] * xhat[i];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for i in 0..c {
                        out[i] = inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
                    }
                }
                vec![
                    Some(gx),
                    Some(Tensor::new(p[1].shape().to_vec(), gg)),
                    Some(Tensor::new(p[2].shape().to_vec(), gbeta)),
                ]
            }),
        )
    }

    /// Channels-last convolution. `x` is `[H, W, Cin]`, `w` is
    /// `[K*K*Cin, Cout]` ordered (ky, kx, cin), `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Var {
        let xv = self.value(x);
        assert_eq!(
            xv.rank(),
            3,
            "conv2d input must be [H, W, C], got {:?}",
            xv.shape()
        );
        let (h, wd, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let wv = self.value(w);
        let kdim = geom.kernel * geom.kernel * cin;
        assert_eq!(
            wv.shape()[0],
            kdim,
            "conv weight {:?} vs kernel rows {}",
            wv.shape(),
            kdim
        );
        let cout = wv.shape()[1];
        let (cols, ho, wo) = im2col(xv.data(), h, wd, cin, geom);
        let mut out = vec![0.0; ho * wo * cout];
        gemm(
            ho * wo,
            kdim,
            cout,
            1.0,
            &cols,
            false,
            wv.data(),
            false,
            0.0,
            &mut out,
        );
        drop(cols);
        let value = Tensor::new([ho, wo, cout], out);
        let y = self.custom(
            &[x, w],
            value,
            Box::new(move |g, p, _| {
                let (cols, _, _) = im2col(p[0].data(), h, wd, cin, geom);
                let mut gw = vec![0.0; kdim * cout];
                gemm(
                    kdim,
                    ho * wo,
                    cout,
                    1.0,
                    &cols,
                    true,
                    g.data(),
                    false,
                    0.0,
                    &mut gw,
                );
                let mut gcols = cols;
                gemm(
                    ho * wo,
                    cout,
                    kdim,
                    1.0,
                    g.data(),
                    false,
                    p[1].data(),
                    true,
                    0.0,
                    &mut gcols,
                );
                let gx = col2im(&gcols, h, wd, cin, geom);
                vec![
                    Some(Tensor::new([h, wd, cin], gx)),
                    Some(Tensor::new(p[1].shape().to_vec(), gw)),
                ]
            }),
        );
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    /// Depthwise stride-1 convolution with "same" padding. `x` is `[H, W, C]`,
    /// `w` is `[K*K, C]`, `b` is `[C]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rank(), 3, "depthwise input must be [H, W, C]");
        let (h, wd, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        assert_eq!(self.value(w).shape(), &[kernel * kernel, c]);
        let pad = kernel / 2;
        let taps = move |y: usize, x: usize| {
            (0..kernel)
                .flat_map(move |ky| (0..kernel).map(move |kx| (ky, kx)))
                .filter_map(move |(ky, kx)| {
                    let iy = (y + ky) as isize - pad as isize;
                    let ix = (x + kx) as isize - pad as isize;
                    (iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize)
                        .then(|| (ky * kernel + kx, iy as usize * wd + ix as usize))
                })
        };
        let wdata = self.value(w).data();
        let xd = xv.data();
        let mut out = vec![0.0; h * wd * c];
        for y in 0..h {
            for xx in 0..wd {
                let o = (y * wd + xx) * c;
                for (t, src) in taps(y, xx) {
                    let wr = &wdata[t * c..(t + 1) * c];
                    let xr = &xd[src * c..(src + 1) * c];
                    for ch in 0..c {
                        out[o + ch] += wr[ch] * xr[ch];
                    }
                }
            }
        }
        let value = Tensor::new([h, wd, c], out);
        let y = self.custom(
            &[x, w],
            value,
            Box::new(move |g, p, _| {
                let (xd, wdata, gd) = (p[0].data(), p[1].data(), g.data());
                let mut gx = vec![0.0; h * wd * c];
                let mut gw = vec![0.0; kernel * kernel * c];
                for y in 0..h {
                    for xx in 0..wd {
                        let o = (y * wd + xx) * c;
                        let gr = &gd[o..o + c];
                        for (t, src) in taps(y, xx) {
                            for ch in 0..c {
                                gx[src * c + ch] += wdata[t * c + ch] * gr[ch];
                                gw[t * c + ch] += xd[src * c + ch] * gr[ch];
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::new([h, wd, c], gx)),
                    Some(Tensor::new(p[1].shape().to_vec(), gw)),
                ]
            }),
        );
        match b {
            Some(b) => self.add_bias(y, b),
            None => y,
        }
    }

    /// Half-pixel bilinear resize of a `[h, w, C]` map to `[out_h, out_w, C]`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rank(), 3, "resize input must be [H, W, C]");
        let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if (h, w) == (out_h, out_w) {
            return x;
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let xd = xv.data();
        let mut out = vec![0.0; out_h * out_w * c];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let o = (oy * out_w + ox) * c;
                let corners = [
                    ((y0 * w + x0) * c, wy0 * wx0),
                    ((y0 * w + x1) * c, wy0 * wx1),
                    ((y1 * w + x0) * c, wy1 * wx0),
                    ((y1 * w + x1) * c, wy1 * wx1),
                ];
                for (src, wt) in corners {
                    if wt == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        out[o + ch] += wt * xd[src + ch];
                    }
                }
            }
        }
        let value = Tensor::new([out_h, out_w, c], out);
        self.custom(
            &[x],
            value,
            Box::new(move |g, _, _| {
                let gd = g.data();
                let mut gx = vec![0.0; h * w * c];
                for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                        let o = (oy * out_w + ox) * c;
                        let corners = [
                            ((y0 * w + x0) * c, wy0 * wx0),
                            ((y0 * w + x1) * c, wy0 * wx1),
                            ((y1 * w + x0) * c, wy1 * wx0),
                            ((y1 * w + x1) * c, wy1 * wx1),
                        ];
                        for (dst, wt) in corners {
                            if wt == 0.0 {
                                continue;
                            }
                            for ch in 0..c {
                                gx[dst + ch] += wt * gd[o + ch];
                            }
                        }
                    }
                }
                vec![Some(Tensor::new([h, w, c], gx))]
            }),
        )
    }

    /// Euclidean norm of each row of an `[.., C]` tensor; output drops the
    /// last axis to size 1. The gradient at a zero row is taken as zero.
    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (_, c) = av.rows_cols();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let data = av
            .data()
            .chunks(c)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::new(shape, data);
        self.custom(
            &[a],
            value,
            Box::new(move |g, p, y| {
                let mut ga = Tensor::zeros(p[0].shape().to_vec());
                for (((out, xr), &n), &gv) in ga
                    .data_mut()
                    .chunks_mut(c)
                    .zip(p[0].data().chunks(c))
                    .zip(y.data())
                    .zip(g.data())
                {
                    if n > 0.0 {
                        for (o, x) in out.iter_mut().zip(xr) {
                            *o = gv * x / n;
                        }
                    }
                }
                vec![Some(ga)]
            }),
        )
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_map_covers_axes() {
        let map = broadcast_index_map(&[1, 3], &[2, 3]);
        assert_eq!(map, vec![0, 1, 2, 0, 1, 2]);
        let map = broadcast_index_map(&[2, 1], &[2, 3]);
        assert_eq!(map, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn sum_to_reduces_broadcast_axes() {
        let t = Tensor::from_fn([2, 2, 3], |i| i as f64);
        let s = sum_to_shape(&t, &[1, 2, 1]);
        // rows (y=0,1), x=0: 0+1+2+6+7+8, x=1: 3+4+5+9+10+11
        assert_eq!(s.data(), &[24.0, 42.0]);
    }

    #[test]
    fn bilinear_taps_match_half_pixel_convention() {
        // 2 -> 4: positions -0.25(clamped 0), 0.25, 0.75, 1.25
        let t = bilinear_taps(2, 4);
        assert_eq!(t[0], (0, 1, 1.0, 0.0));
        assert_eq!((t[1].0, t[1].1), (0, 1));
        assert!((t[1].3 - 0.25).abs() < 1e-15);
        assert!((t[2].3 - 0.75).abs() < 1e-15);
        assert_eq!(t[3].0, 1);
        assert_eq!(t[3].1, 1);
    }

    #[test]
    fn resize_preserves_constants() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full([3, 5, 2], 1.75));
        let y = tape.resize_bilinear(x, 12, 20);
        assert!(tape
            .value(y)
            .data()
            .iter()
            .all(|&v| (v - 1.75).abs() < 1e-14));
    }

    #[test]
    fn conv_output_geometry() {
        let g = ConvGeometry {
            kernel: 7,
            stride: 4,
            padding: 3,
        };
        assert_eq!(g.output_size(512, 512), (128, 128));
        let g = ConvGeometry {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(g.output_size(128, 128), (64, 64));
        assert_eq!(g.output_size(2, 2), (1, 1));
    }
}
