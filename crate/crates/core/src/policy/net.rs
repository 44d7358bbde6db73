//! Forward and reverse passes over a flat parameter vector.

use super::kernels::{col2im, gemm, im2col, sigmoid, silu_grad_cached, ConvGeom, Scalar};
use super::Layout;

/// Pre-squash head outputs: `[t₀ t₁ t₂ r₀ r₁ r₂ logit]`.
pub type HeadOut<T> = [T; 7];

/// Activations kept for the reverse pass.
pub struct Trace<T> {
    cols: Vec<Vec<T>>,
    z: Vec<Vec<T>>,
    /// sigmoid of `z`, kept so the reverse pass needs no exponentials
    s: Vec<Vec<T>>,
    feat: Vec<T>,
    h_pre: Vec<T>,
    h_s: Vec<T>,
    h: Vec<T>,
    pub raw: HeadOut<T>,
}

fn dense<T: Scalar>(x: &[T], w: &[T], b: &[T], n_out: usize, y: &mut [T]) {
    y[..n_out].copy_from_slice(&b[..n_out]);
    gemm(1, x.len(), n_out, (x, x.len(), 1), (w, n_out, 1), T::one(), y);
}

/// Average over `grid × grid` regions of a channels-last map.
pub(super) fn pool<T: Scalar>(a: &[T], h: usize, w: usize, c: usize, grid: usize, out: &mut [T]) {
    out.fill(T::zero());
    for gy in 0..grid {
        let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
        for gx in 0..grid {
            let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
            let o = &mut out[(gy * grid + gx) * c..][..c];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (d, s) in o.iter_mut().zip(&a[(y * w + x) * c..][..c]) {
                        *d += *s;
                    }
                }
            }
            let inv = T::one() / T::of(((y1 - y0) * (x1 - x0)) as f64);
            o.iter_mut().for_each(|v| *v = *v * inv);
        }
    }
}

fn unpool<T: Scalar>(d: &[T], h: usize, w: usize, c: usize, grid: usize, out: &mut [T]) {
    for gy in 0..grid {
        let (y0, y1) = (gy * h / grid, (gy + 1) * h / grid);
        for gx in 0..grid {
            let (x0, x1) = (gx * w / grid, (gx + 1) * w / grid);
            let inv = T::one() / T::of(((y1 - y0) * (x1 - x0)) as f64);
            let g = &d[(gy * grid + gx) * c..][..c];
            for y in y0..y1 {
                for x in x0..x1 {
                    for (o, s) in out[(y * w + x) * c..][..c].iter_mut().zip(g) {
                        *o = *s * inv;
                    }
                }
            }
        }
    }
}

pub fn forward<T: Scalar>(layout: &Layout, p: &[T], x: &[T]) -> Trace<T> {
    let mut cols = Vec::with_capacity(layout.convs.len());
    let mut zs = Vec::with_capacity(layout.convs.len());
    let mut ss = Vec::with_capacity(layout.convs.len());
    let mut act: Vec<T> = Vec::new();
    for (li, conv) in layout.convs.iter().enumerate() {
        let g = &conv.geom;
        let input: &[T] = if li == 0 { x } else { &act };
        let c = im2col(g, input);
        let mut z = vec![T::zero(); g.pixels_out() * g.cout];
        let bias = &p[conv.b..conv.b + g.cout];
        for row in z.chunks_exact_mut(g.cout) {
            row.copy_from_slice(bias);
        }
        gemm(
            g.pixels_out(),
            g.patch(),
            g.cout,
            (&c, g.patch(), 1),
            (&p[conv.w..conv.w + g.patch() * g.cout], g.cout, 1),
            T::one(),
            &mut z,
        );
        let mut s = vec![T::zero(); z.len()];
        T::sigmoid_into(&z, &mut s);
        act = z.iter().zip(&s).map(|(&v, &g)| v * g).collect();
        cols.push(c);
        zs.push(z);
        ss.push(s);
    }
    let last = &layout.convs.last().unwrap().geom;
    let mut feat = vec![T::zero(); layout.features];
    pool(&act, last.h_out, last.w_out, last.cout, layout.pool_grid, &mut feat);

    let fc = &layout.fc;
    let mut h_pre = vec![T::zero(); fc.n_out];
    dense(&feat, &p[fc.w..fc.w + fc.n_in * fc.n_out], &p[fc.b..], fc.n_out, &mut h_pre);
    let mut h_s = vec![T::zero(); h_pre.len()];
    T::sigmoid_into(&h_pre, &mut h_s);
    let h: Vec<T> = h_pre.iter().zip(&h_s).map(|(&v, &g)| v * g).collect();

    let mut raw = [T::zero(); 7];
    let mut off = 0;
    for head in &layout.heads {
        dense(
            &h,
            &p[head.w..head.w + head.n_in * head.n_out],
            &p[head.b..],
            head.n_out,
            &mut raw[off..off + head.n_out],
        );
        off += head.n_out;
    }
    Trace {
        cols,
        z: zs,
        s: ss,
        feat,
        h_pre,
        h_s,
        h,
        raw,
    }
}

/// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂raw`.
pub fn backward<T: Scalar>(layout: &Layout, p: &[T], tr: &Trace<T>, d_raw: &HeadOut<T>, grad: &mut [T]) {
    let fc = &layout.fc;
    let mut dh = vec![T::zero(); fc.n_out];
    let mut off = 0;
    for head in &layout.heads {
        let dz = &d_raw[off..off + head.n_out];
        off += head.n_out;
        // dW += hᵀ dz
        gemm(
            head.n_in,
            1,
            head.n_out,
            (&tr.h, 1, 1),
            (dz, head.n_out, 1),
            T::one(),
            &mut grad[head.w..head.w + head.n_in * head.n_out],
        );
        for (g, d) in grad[head.b..head.b + head.n_out].iter_mut().zip(dz) {
            *g += *d;
        }
        // dh += W dz
        gemm(
            head.n_in,
            head.n_out,
            1,
            (&p[head.w..], head.n_out, 1),
            (dz, 1, 1),
            T::one(),
            &mut dh,
        );
    }
    let dh_pre: Vec<T> = dh
        .iter()
        .zip(tr.h_pre.iter().zip(&tr.h_s))
        .map(|(&d, (&z, &s))| d * silu_grad_cached(z, s))
        .collect();
    gemm(
        fc.n_in,
        1,
        fc.n_out,
        (&tr.feat, 1, 1),
        (&dh_pre, fc.n_out, 1),
        T::one(),
        &mut grad[fc.w..fc.w + fc.n_in * fc.n_out],
    );
    for (g, d) in grad[fc.b..fc.b + fc.n_out].iter_mut().zip(&dh_pre) {
        *g += *d;
    }
    let mut dfeat = vec![T::zero(); fc.n_in];
    gemm(fc.n_in, fc.n_out, 1, (&p[fc.w..], fc.n_out, 1), (&dh_pre, 1, 1), T::zero(), &mut dfeat);

    let last = &layout.convs.last().unwrap().geom;
    let mut d_act = vec![T::zero(); last.pixels_out() * last.cout];
    unpool(&dfeat, last.h_out, last.w_out, last.cout, layout.pool_grid, &mut d_act);

    for li in (0..layout.convs.len()).rev() {
        let conv = &layout.convs[li];
        let g: &ConvGeom = &conv.geom;
        let dz: Vec<T> = d_act
            .iter()
            .zip(tr.z[li].iter().zip(&tr.s[li]))
            .map(|(&d, (&z, &s))| d * silu_grad_cached(z, s))
            .collect();
        let (np, kk) = (g.pixels_out(), g.patch());
        gemm(
            kk,
            np,
            g.cout,
            (&tr.cols[li], 1, kk),
            (&dz, g.cout, 1),
            T::one(),
            &mut grad[conv.w..conv.w + kk * g.cout],
        );
        let db = &mut grad[conv.b..conv.b + g.cout];
        for row in dz.chunks_exact(g.cout) {
            for (b, d) in db.iter_mut().zip(row) {
                *b += *d;
            }
        }
        if li == 0 {
            break;
        }
        let mut dcols = vec![T::zero(); np * kk];
        gemm(np, g.cout, kk, (&dz, g.cout, 1), (&p[conv.w..], 1, g.cout), T::zero(), &mut dcols);
        d_act = vec![T::zero(); g.h_in * g.w_in * g.cin];
        col2im(g, &dcols, &mut d_act);
    }
}

/// `m · tanh(|z|) · z/|z|`: bounds the vector norm by `m`.
pub fn squash3<T: Scalar>(z: &[T], m: T) -> [T; 3] {
    let n = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
    let s = ratio(n) * m;
    [z[0] * s, z[1] * s, z[2] * s]
}

// tanh(n)/n
fn ratio<T: Scalar>(n: T) -> T {
    if n < T::of(0.05) {
        let n2 = n * n;
        T::one() - n2 * (T::of(1.0 / 3.0) - n2 * (T::of(2.0 / 15.0) - n2 * T::of(17.0 / 315.0)))
    } else {
        n.tanh() / n
    }
}

// (d/dn ratio) / n
fn ratio_slope<T: Scalar>(n: T) -> T {
    if n < T::of(0.05) {
        let n2 = n * n;
        T::of(-2.0 / 3.0) + n2 * (T::of(8.0 / 15.0) - n2 * T::of(102.0 / 315.0))
    } else {
        let t = n.tanh();
        (n * (T::one() - t * t) - t) / (n * n * n)
    }
}

/// Vector-Jacobian product of [`squash3`].
pub fn squash3_vjp<T: Scalar>(z: &[T], m: T, g: &[T; 3]) -> [T; 3] {
    let n = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
    let s = ratio(n);
    let zg = (z[0] * g[0] + z[1] * g[1] + z[2] * g[2]) * ratio_slope(n);
    [
        m * (s * g[0] + zg * z[0]),
        m * (s * g[1] + zg * z[1]),
        m * (s * g[2] + zg * z[2]),
    ]
}

/// Squashed outputs `(t, r, logit)` from raw head values.
pub fn squash<T: Scalar>(raw: &HeadOut<T>, t_max: T, r_max: T) -> ([T; 3], [T; 3], T) {
    (squash3(&raw[0..3], t_max), squash3(&raw[3..6], r_max), raw[6])
}

pub fn prob<T: Scalar>(logit: T) -> T {
    sigmoid(logit)
}
