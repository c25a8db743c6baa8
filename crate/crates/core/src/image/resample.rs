//! Separable interpolation (Keys bicubic, bilinear) with half-pixel centers.
//!
//! Every resize is a fixed linear map, stored per axis as a sparse row
//! matrix. The same matrices drive image resizing and the differentiable
//! tensor op, so both paths produce identical bits.

use crate::tensor::Real;

/// Keys' cubic-convolution parameter.
pub const KEYS_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Filter {
    Bicubic,
    Bilinear,
}

impl Filter {
    pub fn support(self) -> f64 {
        match self {
            Filter::Bicubic => 2.0,
            Filter::Bilinear => 1.0,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Filter::Bicubic => cubic(x),
            Filter::Bilinear => (1.0 - x.abs()).max(0.0),
        }
    }
}

/// Keys cubic kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse `out_len × in_len` interpolation matrix for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleMatrix {
    in_len: usize,
    out_len: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl ResampleMatrix {
    /// Build the matrix mapping `in_len` samples to `out_len` samples.
    ///
    /// Downscaling widens the kernel by the scale ratio; weights are
    /// renormalized to sum to one, and taps falling outside the input are
    /// folded onto the nearest edge sample.
    pub fn new(filter: Filter, in_len: usize, out_len: usize) -> Self {
        assert!(in_len > 0 && out_len > 0, "resample lengths must be positive");
        let scale = in_len as f64 / out_len as f64;
        let stretch = scale.max(1.0);
        let support = filter.support() * stretch;

        let mut offsets = Vec::with_capacity(out_len + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        let mut taps: Vec<(usize, f64)> = Vec::new();
        offsets.push(0);
        for i in 0..out_len {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            taps.clear();
            let mut total = 0.0;
            for j in lo..=hi {
                let w = filter.eval((j as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                total += w;
                let clamped = j.clamp(0, in_len as i64 - 1) as usize;
                match taps.last_mut() {
                    Some((last, acc)) if *last == clamped => *acc += w,
                    _ => taps.push((clamped, w)),
                }
            }
            for &(j, w) in &taps {
                let w = w / total;
                if w != 0.0 {
                    index.push(j);
                    weight.push(w);
                }
            }
            offsets.push(index.len());
        }
        ResampleMatrix {
            in_len,
            out_len,
            offsets,
            index,
            weight,
        }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// Nonzero taps `(input indices, weights)` of output sample `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.index[r.clone()], &self.weight[r])
    }

    pub fn is_identity(&self) -> bool {
        self.in_len == self.out_len
            && (0..self.out_len).all(|i| {
                let (idx, w) = self.row(i);
                idx == [i] && w == [1.0]
            })
    }
}

/// A 2-D resize: one matrix per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Resize2d {
    pub rows: ResampleMatrix,
    pub cols: ResampleMatrix,
}

impl Resize2d {
    pub fn new(filter: Filter, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Resize2d {
            rows: ResampleMatrix::new(filter, in_h, out_h),
            cols: ResampleMatrix::new(filter, in_w, out_w),
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len, self.cols.out_len)
    }

    /// Resize one plane: horizontal pass, then vertical pass.
    pub fn apply_plane<T: Real>(&self, src: &[T], dst: &mut [T]) {
        let (h, w) = self.in_dims();
        let (oh, ow) = self.out_dims();
        debug_assert_eq!(src.len(), h * w);
        debug_assert_eq!(dst.len(), oh * ow);
        let mut tmp = vec![T::zero(); h * ow];
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            let trow = &mut tmp[y * ow..(y + 1) * ow];
            for (x, t) in trow.iter_mut().enumerate() {
                let (idx, wt) = self.cols.row(x);
                let mut acc = T::zero();
                for (&j, &c) in idx.iter().zip(wt) {
                    acc += T::from_f64(c) * srow[j];
                }
                *t = acc;
            }
        }
        dst.fill(T::zero());
        for y in 0..oh {
            let drow = &mut dst[y * ow..(y + 1) * ow];
            let (idx, wt) = self.rows.row(y);
            for (&j, &c) in idx.iter().zip(wt) {
                let c = T::from_f64(c);
                for (d, &t) in drow.iter_mut().zip(&tmp[j * ow..(j + 1) * ow]) {
                    *d += c * t;
                }
            }
        }
    }

    /// Adjoint of [`apply_plane`](Self::apply_plane), accumulated into `grad_src`.
    pub fn adjoint_plane_acc<T: Real>(&self, grad_dst: &[T], grad_src: &mut [T]) {
        let (h, w) = self.in_dims();
        let (oh, ow) = self.out_dims();
        let mut tmp = vec![T::zero(); h * ow];
        for y in 0..oh {
            let grow = &grad_dst[y * ow..(y + 1) * ow];
            let (idx, wt) = self.rows.row(y);
            for (&j, &c) in idx.iter().zip(wt) {
                let c = T::from_f64(c);
                for (t, &g) in tmp[j * ow..(j + 1) * ow].iter_mut().zip(grow) {
                    *t += c * g;
                }
            }
        }
        for y in 0..h {
            let trow = &tmp[y * ow..(y + 1) * ow];
            let srow = &mut grad_src[y * w..(y + 1) * w];
            for (x, &t) in trow.iter().enumerate() {
                let (idx, wt) = self.cols.row(x);
                for (&j, &c) in idx.iter().zip(wt) {
                    srow[j] += T::from_f64(c) * t;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values_at_knots() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(-1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        // a|x|^3 - 5a|x|^2 + 8a|x| - 4a at 1.5 with a = -0.5
        assert!((cubic(1.5) - (-0.0625)).abs() < 1e-15);
        // (a+2)|x|^3 - (a+3)|x|^2 + 1 at 0.5
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn same_size_resize_is_identity() {
        for f in [Filter::Bicubic, Filter::Bilinear] {
            assert!(ResampleMatrix::new(f, 7, 7).is_identity());
        }
    }

    #[test]
    fn rows_sum_to_one() {
        for &(n, m) in &[(10, 20), (20, 10), (13, 7), (5, 17), (64, 256), (320, 256), (1, 5), (5, 1)] {
            let r = ResampleMatrix::new(Filter::Bicubic, n, m);
            for i in 0..m {
                let s: f64 = r.row(i).1.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "{n}->{m} row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn adjoint_matches_transpose() {
        let rz = Resize2d::new(Filter::Bicubic, 5, 6, 9, 4);
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..36).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut ax = vec![0.0; 36];
        rz.apply_plane(&x, &mut ax);
        let mut aty = vec![0.0; 30];
        rz.adjoint_plane_acc(&y, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
