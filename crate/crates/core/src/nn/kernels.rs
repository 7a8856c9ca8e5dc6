//! Precision-generic numeric kernels shared by the eager ops and the tape.

use num_traits::Float;

/// Floating point types the tape can run in. Parameters are stored as `f32`;
/// a graph in `f64` is the high-precision shadow path used for gradient checks.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    fn of_f32(v: f32) -> Self;
    fn of_f64(v: f64) -> Self;
    fn as_f32(self) -> f32;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of_f32(v: f32) -> Self {
        v
    }
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f32(self) -> f32 {
        self
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of_f32(v: f32) -> Self {
        f64::from(v)
    }
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`, row-major, inner loop over contiguous `n`.
pub fn matmul<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]^T`.
pub fn matmul_grad_lhs<T: Float>(g: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for (g_row, out_row) in g.chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks_exact(n)) {
            let mut acc = T::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc = acc + gv * bv;
            }
            *o = *o + acc;
        }
    }
    let _ = m;
}

/// `out[k, n] += a[m, k]^T * g[m, n]`.
pub fn matmul_grad_rhs<T: Float>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for (a_row, g_row) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&av, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            if av == T::zero() {
                continue;
            }
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + av * gv;
            }
        }
    }
    let _ = m;
}

pub fn add_row_broadcast<T: Float>(data: &mut [T], bias: &[T]) {
    for row in data.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_row<T: Float>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn clamp_prob<T: Float>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

/// Per-sample binary cross-entropy term on a clamped probability.
pub fn bce_term<T: Float>(p: T, y: T, eps: T) -> T {
    let p = clamp_prob(p, eps);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}
