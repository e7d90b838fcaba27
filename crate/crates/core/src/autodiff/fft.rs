//! Iterative radix-2 FFT on split real/imaginary buffers.

use super::Real;
use crate::{Error, Result};

/// Twiddle tables and bit-reversal permutation for a fixed power-of-two length.
pub struct FftPlan<T> {
    n: usize,
    /// stage twiddles `exp(-2πi k/len)`, k < len/2, concatenated for len = 2, 4, …, n
    cos: Vec<T>,
    sin: Vec<T>,
    reversed: Vec<usize>,
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "FFT length {n} is not a power of two"
            )));
        }
        let mut cos = Vec::with_capacity(n);
        let mut sin = Vec::with_capacity(n);
        let mut len = 2;
        while len <= n {
            for k in 0..len / 2 {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
                cos.push(T::lit(theta.cos()));
                sin.push(T::lit(theta.sin()));
            }
            len <<= 1;
        }
        let bits = n.trailing_zeros();
        let reversed = (0..n)
            .map(|i| if n == 1 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Self {
            n,
            cos,
            sin,
            reversed,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place transform. Forward uses `exp(-2πi jk/n)`; `inverse` flips the
    /// sign of the exponent. Neither direction normalizes.
    pub fn transform(&self, re: &mut [T], im: &mut [T], inverse: bool) {
        debug_assert!(re.len() == self.n && im.len() == self.n);
        self.transform_columns(re, im, 1, inverse);
    }

    /// Transforms every column of an `n × width` row-major block at once;
    /// the butterflies run along whole rows so the inner loops are contiguous.
    pub fn transform_columns(&self, re: &mut [T], im: &mut [T], width: usize, inverse: bool) {
        let n = self.n;
        debug_assert!(re.len() == n * width && im.len() == n * width);
        if n == 1 {
            return;
        }
        for i in 0..n {
            let j = self.reversed[i];
            if j > i {
                for c in 0..width {
                    re.swap(i * width + c, j * width + c);
                    im.swap(i * width + c, j * width + c);
                }
            }
        }
        let sign = if inverse { -T::one() } else { T::one() };
        let mut len = 2;
        let mut offset = 0;
        while len <= n {
            let half = len / 2;
            for (block_re, block_im) in re
                .chunks_exact_mut(len * width)
                .zip(im.chunks_exact_mut(len * width))
            {
                let (lo_re, hi_re) = block_re.split_at_mut(half * width);
                let (lo_im, hi_im) = block_im.split_at_mut(half * width);
                for k in 0..half {
                    let wr = self.cos[offset + k];
                    let wi = sign * self.sin[offset + k];
                    let span = k * width..(k + 1) * width;
                    let ar = &mut lo_re[span.clone()];
                    let ai = &mut lo_im[span.clone()];
                    let br = &mut hi_re[span.clone()];
                    let bi = &mut hi_im[span];
                    for c in 0..width {
                        let tr = br[c] * wr - bi[c] * wi;
                        let ti = br[c] * wi + bi[c] * wr;
                        br[c] = ar[c] - tr;
                        bi[c] = ai[c] - ti;
                        ar[c] += tr;
                        ai[c] += ti;
                    }
                }
            }
            offset += half;
            len <<= 1;
        }
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Unnormalized 2-D transform over the last two axes of `batch` stacked
/// `rows×cols` planes.
pub fn fft2_planes<T: Real>(
    re: &mut [T],
    im: &mut [T],
    rows: usize,
    cols: usize,
    inverse: bool,
) -> Result<()> {
    let col_plan = FftPlan::<T>::new(rows)?;
    let row_plan = if rows == cols {
        None
    } else {
        Some(FftPlan::<T>::new(cols)?)
    };
    let row_plan = row_plan.as_ref().unwrap_or(&col_plan);
    let plane = rows * cols;
    debug_assert_eq!(re.len() % plane, 0);
    let mut t_re = vec![T::zero(); plane];
    let mut t_im = vec![T::zero(); plane];
    for (pr, pi) in re.chunks_mut(plane).zip(im.chunks_mut(plane)) {
        col_plan.transform_columns(pr, pi, cols, inverse);
        transpose(pr, &mut t_re, rows, cols);
        transpose(pi, &mut t_im, rows, cols);
        row_plan.transform_columns(&mut t_re, &mut t_im, rows, inverse);
        transpose(&t_re, pr, cols, rows);
        transpose(&t_im, pi, cols, rows);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for k in 0..n {
            for j in 0..n {
                let th = -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                out_re[k] += re[j] * th.cos() - im[j] * th.sin();
                out_im[k] += re[j] * th.sin() + im[j] * th.cos();
            }
        }
        (out_re, out_im)
    }

    #[test]
    fn matches_naive_dft_1d() {
        for n in [1usize, 2, 4, 8, 16, 32] {
            let re: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
            let im: Vec<f64> = (0..n).map(|i| ((i * 5 + 1) % 7) as f64 * 0.5).collect();
            let (er, ei) = naive_dft(&re, &im);
            let (mut r, mut i) = (re.clone(), im.clone());
            FftPlan::new(n).unwrap().transform(&mut r, &mut i, false);
            for k in 0..n {
                assert!((r[k] - er[k]).abs() < 1e-9 && (i[k] - ei[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::<f32>::new(12).is_err());
        assert!(FftPlan::<f32>::new(0).is_err());
    }
}
