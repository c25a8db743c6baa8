//! Inner loops for convolution: small GEMM variants plus im2col/col2im.
//!
//! Matrices are row-major slices. All reductions run in a fixed order so
//! results are bitwise reproducible for a given build.

use crate::tensor::Real;

/// `c[m×p] += a[m×k] · b[k×p]`
pub(crate) fn gemm_acc<T: Real>(m: usize, k: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    let mut rows = c.chunks_exact_mut(p);
    let mut i = 0;
    while i + 4 <= m {
        let c0 = rows.next().unwrap();
        let c1 = rows.next().unwrap();
        let c2 = rows.next().unwrap();
        let c3 = rows.next().unwrap();
        for kk in 0..k {
            let a0 = a[i * k + kk];
            let a1 = a[(i + 1) * k + kk];
            let a2 = a[(i + 2) * k + kk];
            let a3 = a[(i + 3) * k + kk];
            let br = &b[kk * p..(kk + 1) * p];
            for ((((x0, x1), x2), x3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(br)
            {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
        i += 4;
    }
    for (r, row) in rows.enumerate() {
        let ii = i + r;
        for kk in 0..k {
            let av = a[ii * k + kk];
            let br = &b[kk * p..(kk + 1) * p];
            for (x, &bv) in row.iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    }
}

/// `c[k×p] += aᵀ · b` where `a` is `m×k` and `b` is `m×p`.
pub(crate) fn gemm_at_b_acc<T: Real>(m: usize, k: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * p);
    debug_assert_eq!(c.len(), k * p);
    let mut rows = c.chunks_exact_mut(p);
    let mut kk = 0;
    while kk + 4 <= k {
        let c0 = rows.next().unwrap();
        let c1 = rows.next().unwrap();
        let c2 = rows.next().unwrap();
        let c3 = rows.next().unwrap();
        for i in 0..m {
            let a0 = a[i * k + kk];
            let a1 = a[i * k + kk + 1];
            let a2 = a[i * k + kk + 2];
            let a3 = a[i * k + kk + 3];
            let br = &b[i * p..(i + 1) * p];
            for ((((x0, x1), x2), x3), &bv) in c0
                .iter_mut()
                .zip(c1.iter_mut())
                .zip(c2.iter_mut())
                .zip(c3.iter_mut())
                .zip(br)
            {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
        kk += 4;
    }
    for (r, row) in rows.enumerate() {
        let col = kk + r;
        for i in 0..m {
            let av = a[i * k + col];
            let br = &b[i * p..(i + 1) * p];
            for (x, &bv) in row.iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×p] · bᵀ` where `b` is `k×p`.
pub(crate) fn gemm_a_bt_acc<T: Real>(m: usize, k: usize, p: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let ar = &a[i * p..(i + 1) * p];
        for j in 0..k {
            c[i * k + j] += dot(ar, &b[j * p..(j + 1) * p]);
        }
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Unfold one (C, H, W) image into a `(C·k·k) × (H·W)` matrix for a
/// same-padded, stride-1 convolution.
pub(crate) fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    debug_assert_eq!(cols.len(), c * k * k * plane);
    for ci in 0..c {
        let src = &input[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..h {
                    let sy = y as isize + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    let (x0, x1) = valid_range(w, dx);
                    drow[..x0].fill(T::zero());
                    drow[x1..].fill(T::zero());
                    let s0 = (x0 as isize + dx) as usize;
                    drow[x0..x1].copy_from_slice(&srow[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a (C, H, W) image.
pub(crate) fn col2im_acc<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let dst = &mut out[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let drow = &mut dst[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, &s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Output columns `[x0, x1)` whose source column `x + dx` lies inside `[0, w)`.
#[inline]
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)).max(x0 as isize) as usize;
    (x0.min(w), x1.min(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, p: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                for l in 0..k {
                    c[i * p + j] += a[i * k + l] * b[l * p + j];
                }
            }
        }
        c
    }

    fn seq(n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 * s).sin() * 3.0).round() / 2.0).collect()
    }

    #[test]
    fn gemm_variants_agree_with_naive_product() {
        for &(m, k, p) in &[(1, 1, 1), (5, 3, 7), (8, 9, 13), (7, 6, 33)] {
            let a = seq(m * k, 0.7);
            let b = seq(k * p, 1.3);
            let want = naive(m, k, p, &a, &b);
            let mut c = vec![0.0; m * p];
            gemm_acc(m, k, p, &a, &b, &mut c);
            assert_eq!(c, want);

            // aᵀ·b with a stored as k×m
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for l in 0..k {
                    at[l * m + i] = a[i * k + l];
                }
            }
            let mut c2 = vec![0.0; m * p];
            gemm_at_b_acc(k, m, p, &at, &b, &mut c2);
            assert_eq!(c2, want);

            // a·bᵀ with b stored as p×k
            let mut bt = vec![0.0; p * k];
            for l in 0..k {
                for j in 0..p {
                    bt[j * k + l] = b[l * p + j];
                }
            }
            let mut c3 = vec![0.0; m * p];
            gemm_a_bt_acc(m, p, k, &a, &bt, &mut c3);
            assert_eq!(c3, want);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w, k) = (2, 5, 4, 3);
        let x = seq(c * h * w, 0.37);
        let y = seq(c * k * k * h * w, 0.91);
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, k, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_acc(&y, c, h, w, k, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
