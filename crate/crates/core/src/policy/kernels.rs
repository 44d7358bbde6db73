//! Dense kernels shared by the f32 training path and the f64 check path.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = a·b + beta·c` on strided row/column views.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must
    /// be in bounds of the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    /// Elementwise logistic function.
    fn sigmoid_into(z: &[Self], out: &mut [Self]) {
        for (o, &v) in out.iter_mut().zip(z) {
            *o = sigmoid(v);
        }
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    // libm expf does not vectorize and dominated the forward pass
    fn sigmoid_into(z: &[f32], out: &mut [f32]) {
        for (o, &v) in out.iter_mut().zip(z) {
            *o = 1.0 / (1.0 + exp_f32(-v));
        }
    }
}

/// Branch-free `e^x` for f32 (Cody-Waite reduction, degree-6 polynomial),
/// within 2 ulp of libm on the clamped range.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // 1.5·2²³: adding and subtracting rounds to the nearest integer
    const ROUND: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Strided matrix view: `(buffer, row stride, col stride)`.
pub type View<'a, T> = (&'a [T], usize, usize);

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, with `c` row-major.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: View<T>, b: View<T>, beta: T, c: &mut [T]) {
    assert!(a.0.len() >= extent(m, k, a.1, a.2), "gemm: a too short");
    assert!(b.0.len() >= extent(k, n, b.1, b.2), "gemm: b too short");
    assert!(c.len() >= m * n, "gemm: c too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents checked above
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, h_in: usize, w_in: usize) -> Self {
        let pad = k / 2;
        ConvGeom {
            cin,
            cout,
            k,
            stride,
            pad,
            h_in,
            w_in,
            h_out: (h_in + 2 * pad - k) / stride + 1,
            w_out: (w_in + 2 * pad - k) / stride + 1,
        }
    }

    /// Patch length, ordered `(ky, kx, ci)`.
    pub fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    pub fn pixels_out(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Channels-last input to a `(pixels_out × patch)` matrix, zero padded.
pub fn im2col<T: Scalar>(g: &ConvGeom, x: &[T]) -> Vec<T> {
    let mut cols = Vec::with_capacity(g.pixels_out() * g.patch());
    let zero = T::zero();
    for oy in 0..g.h_out {
        for ox in 0..g.w_out {
            // in-bounds kx form one contiguous run of the input row
            let x0 = (ox * g.stride) as isize - g.pad as isize;
            let kx_lo = (-x0).clamp(0, g.k as isize) as usize;
            let kx_hi = (g.w_in as isize - x0).clamp(kx_lo as isize, g.k as isize) as usize;
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h_in as isize {
                    cols.resize(cols.len() + g.k * g.cin, zero);
                    continue;
                }
                cols.resize(cols.len() + kx_lo * g.cin, zero);
                let src = (iy as usize * g.w_in) as isize + x0 + kx_lo as isize;
                let src = src as usize * g.cin;
                cols.extend_from_slice(&x[src..src + (kx_hi - kx_lo) * g.cin]);
                cols.resize(cols.len() + (g.k - kx_hi) * g.cin, zero);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back to the input.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let kk = g.patch();
    dx.fill(T::zero());
    for oy in 0..g.h_out {
        for ox in 0..g.w_out {
            let row = &cols[(oy * g.w_out + ox) * kk..][..kk];
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h_in as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w_in as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.w_in + ix as usize) * g.cin;
                    let src = &row[(ky * g.k + kx) * g.cin..][..g.cin];
                    for (d, s) in dx[dst..dst + g.cin].iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Scalar>(x: T) -> T {
    silu_grad_cached(x, sigmoid(x))
}

/// `silu'(x)` given `s = sigmoid(x)`.
pub fn silu_grad_cached<T: Scalar>(x: T, s: T) -> T {
    s * (T::one() + x * (T::one() - s))
}

/// `max(z,0) − z·y + ln(1 + e^{−|z|})`
pub fn bce_with_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm() {
        let mut worst = 0.0f64;
        for i in 0..=200_000 {
            let x = -87.0 + 175.0 * i as f32 / 200_000.0;
            let (a, b) = (exp_f32(x) as f64, (x as f64).exp());
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 4e-7, "{worst}");
        let z = [-100.0f32, -3.0, 0.0, 0.5, 40.0, 100.0];
        let mut s = [0.0f32; 6];
        f32::sigmoid_into(&z, &mut s);
        for (v, g) in z.iter().zip(s) {
            assert!((g - sigmoid(*v)).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, (&a, k, 1), (&b, n, 1), 0.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // aᵀ through strides: treat `a` as k×m col-major
        let mut ct = vec![0.0; k * k];
        gemm(k, m, k, (&a, 1, k), (&a, k, 1), 0.0, &mut ct);
        for i in 0..k {
            for j in 0..k {
                let want: f64 = (0..m).map(|p| a[p * k + i] * a[p * k + j]).sum();
                assert!((ct[i * k + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(3, 4, 3, 2, 7, 6);
        let kk = g.patch();
        let x: Vec<f64> = (0..g.h_in * g.w_in * g.cin).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..g.pixels_out() * kk).map(|i| (i as f64 * 0.3).cos()).collect();
        let cols = im2col(&g, &x);
        assert_eq!(cols.len(), g.pixels_out() * kk);
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        for c in 0..g.cin {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            let inside = iy >= 0 && ix >= 0 && iy < g.h_in as isize && ix < g.w_in as isize;
                            let want = if inside { x[(iy as usize * g.w_in + ix as usize) * g.cin + c] } else { 0.0 };
                            assert_eq!(cols[(oy * g.w_out + ox) * kk + (ky * g.k + kx) * g.cin + c], want);
                        }
                    }
                }
            }
        }
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn output_sizes() {
        let g = ConvGeom::new(5, 16, 5, 2, 128, 128);
        assert_eq!((g.h_out, g.w_out), (64, 64));
        let g = ConvGeom::new(16, 32, 3, 2, 64, 64);
        assert_eq!((g.h_out, g.w_out), (32, 32));
    }

    #[test]
    fn stable_bce() {
        assert!(bce_with_logit(20.0f64, 1.0) < 2.1e-9);
        assert!((bce_with_logit(0.0f64, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logit(-800.0f64, 1.0).is_finite());
        assert!((bce_with_logit(-800.0f64, 1.0) - 800.0).abs() < 1e-9);
    }
}
