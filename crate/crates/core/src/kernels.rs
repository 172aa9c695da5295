//! Slice-level forward and backward kernels shared by the tape and by
//! standalone callers.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Strides;
use crate::Real;

/// Row-wise softmax over `cols`-wide rows with an optional additive mask of
/// the same layout (entries `0` or `-inf`).
///
/// A row whose every entry is masked becomes all zeros; the number of such
/// rows is returned.
pub fn softmax_rows<T: Real>(x: &mut [T], cols: usize, mask: Option<&[f32]>) -> usize {
    if cols == 0 {
        return 0;
    }
    let mut fully_masked = 0;
    for (r, row) in x.chunks_mut(cols).enumerate() {
        if let Some(m) = mask {
            let mrow = &m[r * cols..(r + 1) * cols];
            for (v, &mv) in row.iter_mut().zip(mrow) {
                if mv != 0.0 {
                    *v += T::from_f32(mv);
                }
            }
        }
        if !softmax_row(row) {
            fully_masked += 1;
        }
    }
    fully_masked
}

/// In-place stabilized softmax of one row. Returns `false` (and zeros the
/// row) when every entry is `-inf`.
#[inline]
pub fn softmax_row<T: Real>(row: &mut [T]) -> bool {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return false;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
    true
}

/// Backward of a row softmax given its output `y` and upstream `dy`.
pub fn softmax_rows_backward<T: Real>(y: &[T], dy: &[T], cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    if cols == 0 {
        return dx;
    }
    for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: T = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    dx
}

/// RMS normalization over contiguous groups of `group` elements with a
/// per-position gain of length `group`. Returns the output and the inverse
/// RMS of each group.
pub fn rmsnorm_groups<T: Real>(x: &[T], gain: &[T], group: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let groups = x.len() / group;
    let mut out = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(groups);
    let gf = T::from_f64(group as f64);
    for (xs, os) in x.chunks(group).zip(out.chunks_mut(group)) {
        let ms: T = xs.iter().map(|&v| v * v).sum::<T>() / gf;
        let r = T::one() / (ms + eps).sqrt();
        for ((o, &v), &g) in os.iter_mut().zip(xs).zip(gain) {
            *o = v * r * g;
        }
        inv.push(r);
    }
    (out, inv)
}

/// Backward of [`rmsnorm_groups`]: returns `(dx, dgain)`.
pub fn rmsnorm_groups_backward<T: Real>(x: &[T], gain: &[T], inv: &[T], dy: &[T], group: usize) -> (Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let mut dg = vec![T::zero(); group];
    let gf = T::from_f64(group as f64);
    for (((xs, dys), dxs), &r) in x.chunks(group).zip(dy.chunks(group)).zip(dx.chunks_mut(group)).zip(inv) {
        // y = x * r * g, r = (mean(x^2) + eps)^-1/2
        let mut dot = T::zero();
        for i in 0..group {
            dg[i] += dys[i] * xs[i] * r;
            dot += dys[i] * gain[i] * xs[i];
        }
        let coeff = dot * r * r * r / gf;
        for i in 0..group {
            dxs[i] = dys[i] * gain[i] * r - xs[i] * coeff;
        }
    }
    (dx, dg)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Extents of a multi-head attention call. Queries are `[q_len, heads *
/// head_dim]`, keys and values `[k_len, heads * head_dim]`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnDims {
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnDims {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

pub struct AttnForward<T> {
    pub out: Vec<T>,
    /// Attention probabilities `[heads, q_len, k_len]`; empty unless kept.
    pub probs: Vec<T>,
    pub fully_masked_rows: usize,
}

/// `softmax(Q K^T * scale + mask) V` for every head.
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    dims: AttnDims,
    mask: Option<&[f32]>,
    scale: T,
    keep_probs: bool,
) -> AttnForward<T> {
    let AttnDims { q_len, k_len, heads, head_dim } = dims;
    let width = dims.width();
    let plane = q_len * k_len;
    let mut out = vec![T::zero(); q_len * width];
    let mut probs = if keep_probs { vec![T::zero(); heads * plane] } else { Vec::new() };
    let mut scratch = if keep_probs { Vec::new() } else { vec![T::zero(); plane] };
    let mut fully_masked_rows = 0;
    for h in 0..heads {
        let off = h * head_dim;
        let p = if keep_probs { &mut probs[h * plane..(h + 1) * plane] } else { &mut scratch[..] };
        T::gemm(
            q_len,
            head_dim,
            k_len,
            scale,
            &q[off..],
            Strides::row_major(width),
            &k[off..],
            Strides::transposed(width),
            T::zero(),
            p,
            Strides::row_major(k_len),
        );
        fully_masked_rows += softmax_rows(p, k_len, mask);
        T::gemm(
            q_len,
            k_len,
            head_dim,
            T::one(),
            p,
            Strides::row_major(k_len),
            &v[off..],
            Strides::row_major(width),
            T::zero(),
            &mut out[off..],
            Strides::row_major(width),
        );
    }
    AttnForward { out, probs, fully_masked_rows }
}

pub struct AttnGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
}

/// Backward of [`attention_forward`] from the kept probabilities.
pub fn attention_backward<T: Real>(q: &[T], k: &[T], v: &[T], probs: &[T], d_out: &[T], dims: AttnDims, scale: T) -> AttnGrads<T> {
    let AttnDims { q_len, k_len, heads, head_dim } = dims;
    let width = dims.width();
    let plane = q_len * k_len;
    let mut dq = vec![T::zero(); q_len * width];
    let mut dk = vec![T::zero(); k_len * width];
    let mut dv = vec![T::zero(); k_len * width];
    let mut dp = vec![T::zero(); plane];
    for h in 0..heads {
        let off = h * head_dim;
        let p = &probs[h * plane..(h + 1) * plane];
        // dV = P^T dO
        T::gemm(
            k_len,
            q_len,
            head_dim,
            T::one(),
            p,
            Strides::transposed(k_len),
            &d_out[off..],
            Strides::row_major(width),
            T::zero(),
            &mut dv[off..],
            Strides::row_major(width),
        );
        // dP = dO V^T
        T::gemm(
            q_len,
            head_dim,
            k_len,
            T::one(),
            &d_out[off..],
            Strides::row_major(width),
            &v[off..],
            Strides::transposed(width),
            T::zero(),
            &mut dp,
            Strides::row_major(k_len),
        );
        // dS = P * (dP - rowdot(dP, P)), in place
        for (pr, dr) in p.chunks(k_len).zip(dp.chunks_mut(k_len)) {
            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pv) in dr.iter_mut().zip(pr) {
                *d = pv * (*d - dot);
            }
        }
        // dQ = scale * dS K
        T::gemm(
            q_len,
            k_len,
            head_dim,
            scale,
            &dp,
            Strides::row_major(k_len),
            &k[off..],
            Strides::row_major(width),
            T::zero(),
            &mut dq[off..],
            Strides::row_major(width),
        );
        // dK = scale * dS^T Q
        T::gemm(
            k_len,
            q_len,
            head_dim,
            scale,
            &dp,
            Strides::transposed(k_len),
            &q[off..],
            Strides::row_major(width),
            T::zero(),
            &mut dk[off..],
            Strides::row_major(width),
        );
    }
    AttnGrads { dq, dk, dv }
}

/// Applies per-pair planar rotations. `cos`/`sin` hold `half = head_dim / 2`
/// angles per row; every head of a row shares them. `inverse` rotates by the
/// negated angles, which is also the backward pass.
pub fn rotate_pairs<T: Real>(x: &[T], cos: &[T], sin: &[T], heads: usize, head_dim: usize, inverse: bool) -> Vec<T> {
    let half = head_dim / 2;
    let width = heads * head_dim;
    let mut out = vec![T::zero(); x.len()];
    for (r, (xr, or)) in x.chunks(width).zip(out.chunks_mut(width)).enumerate() {
        let c = &cos[r * half..(r + 1) * half];
        let s = &sin[r * half..(r + 1) * half];
        for h in 0..heads {
            let base = h * head_dim;
            for p in 0..half {
                let (a, b) = (xr[base + 2 * p], xr[base + 2 * p + 1]);
                let (cp, sp) = (c[p], if inverse { -s[p] } else { s[p] });
                or[base + 2 * p] = a * cp - b * sp;
                or[base + 2 * p + 1] = a * sp + b * cp;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_softmax_examples() {
        let mut x = [0.0f64, 0.0];
        let ninf = f32::NEG_INFINITY;
        softmax_rows(&mut x, 2, Some(&[0.0, ninf]));
        assert_eq!(x, [1.0, 0.0]);

        let mut x = [1.0f64, 1.0, 1.0];
        softmax_rows(&mut x, 3, None);
        for v in x {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut x = [1000.0f32, 0.0];
        softmax_rows(&mut x, 2, None);
        assert_eq!(x[0], 1.0);
        assert!(x[1] >= 0.0 && x[1] < 1e-30);
    }

    #[test]
    fn fully_masked_row_is_zero_and_counted() {
        let ninf = f32::NEG_INFINITY;
        let mut x = [3.0f32, 4.0, 1.0, 2.0];
        let n = softmax_rows(&mut x, 2, Some(&[ninf, ninf, 0.0, 0.0]));
        assert_eq!(n, 1);
        assert_eq!(&x[..2], &[0.0, 0.0]);
        assert!(x.iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn rmsnorm_of_constant_is_gain() {
        let x = [3.0f64; 4];
        let g = [1.0, 2.0, 3.0, 4.0];
        let (y, _) = rmsnorm_groups(&x, &g, 4, 0.0);
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rotation_inverse_restores_input() {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let cos = [0.3f64.cos(), 1.1f64.cos()];
        let sin = [0.3f64.sin(), 1.1f64.sin()];
        let y = rotate_pairs(&x, &cos, &sin, 2, 4, false);
        let back = rotate_pairs(&y, &cos, &sin, 2, 4, true);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
