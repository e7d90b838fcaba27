//! Forward and adjoint kernels for the fused graph operations.

use num_complex::Complex;

use super::real::matmul_into;
use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        let pad = k / 2;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Self {
            c_in,
            h,
            w,
            k,
            stride,
            ho,
            wo,
        }
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let pad = self.k / 2;
        let y = (oy * self.stride + ky).checked_sub(pad)?;
        let x = (ox * self.stride + kx).checked_sub(pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Zero-padded patch matrix `[c_in·k·k, ho·wo]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch() * p];
    for ci in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                            dst[oy * g.wo + ox] = x[(ci * g.h + y) * g.w + xx];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_acc<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                            dx[(ci * g.h + y) * g.w + xx] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let p = g.positions();
    let mut out = vec![T::zero(); c_out * p];
    matmul_into(w, false, &cols, false, c_out, g.patch(), p, &mut out, false);
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(p).zip(b) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    (out, cols)
}

/// Row-wise softmax of an `r×c` matrix.
pub(crate) fn softmax_rows<T: Real>(x: &[T], c: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Column-wise layer normalization statistics for a `c×n` matrix:
/// returns `(xhat, inv_std)`.
pub(crate) fn layer_norm_cols<T: Real>(x: &[T], c: usize, n: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let cf = T::from_usize(c).unwrap();
    let mut mean = vec![T::zero(); n];
    for row in x.chunks(n) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cf);
    let mut var = vec![T::zero(); n];
    for row in x.chunks(n) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s / cf + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); c * n];
    for (orow, row) in xhat.chunks_mut(n).zip(x.chunks(n)) {
        for j in 0..n {
            orow[j] = (row[j] - mean[j]) * inv_std[j];
        }
    }
    (xhat, inv_std)
}

/// Offsets of the four retained low-frequency corner blocks of an `s×s` spectrum.
pub(crate) fn corner_offsets(s: usize, modes: usize) -> [(usize, usize); 4] {
    let hi = s - modes;
    [(0, 0), (hi, 0), (0, hi), (hi, hi)]
}

/// `Σ w·x` over complex vectors in split form, with eight independent
/// partial sums so the loop vectorizes.
fn complex_dot<T: Real>(wr: &[T], wi: &[T], xr: &[T], xi: &[T]) -> (T, T) {
    const LANES: usize = 8;
    let mut acc_r = [T::zero(); LANES];
    let mut acc_i = [T::zero(); LANES];
    let n = wr.len() / LANES * LANES;
    for (((a, b), c), d) in wr[..n]
        .chunks_exact(LANES)
        .zip(wi[..n].chunks_exact(LANES))
        .zip(xr[..n].chunks_exact(LANES))
        .zip(xi[..n].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc_r[l] += a[l] * c[l] - b[l] * d[l];
            acc_i[l] += a[l] * d[l] + b[l] * c[l];
        }
    }
    let (mut sr, mut si) = (T::zero(), T::zero());
    for l in 0..LANES {
        sr += acc_r[l];
        si += acc_i[l];
    }
    for j in n..wr.len() {
        sr += wr[j] * xr[j] - wi[j] * xi[j];
        si += wr[j] * xi[j] + wi[j] * xr[j];
    }
    (sr, si)
}

/// Channel mixing on the retained corners. Weights are laid out
/// `[corner, a, b, c_out, c_in]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn spectral_mix_forward<T: Real>(
    xr: &[T],
    xi: &[T],
    wr: &[T],
    wi: &[T],
    c_in: usize,
    c_out: usize,
    s: usize,
    modes: usize,
) -> (Vec<T>, Vec<T>) {
    let plane = s * s;
    let mut yr = vec![T::zero(); c_out * plane];
    let mut yi = vec![T::zero(); c_out * plane];
    let mut gr = vec![T::zero(); c_in];
    let mut gi = vec![T::zero(); c_in];
    for (corner, &(r0, c0)) in corner_offsets(s, modes).iter().enumerate() {
        for a in 0..modes {
            for b in 0..modes {
                let k = (r0 + a) * s + c0 + b;
                for i in 0..c_in {
                    gr[i] = xr[i * plane + k];
                    gi[i] = xi[i * plane + k];
                }
                let base = ((corner * modes + a) * modes + b) * c_out * c_in;
                for o in 0..c_out {
                    let wrow_r = &wr[base + o * c_in..base + (o + 1) * c_in];
                    let wrow_i = &wi[base + o * c_in..base + (o + 1) * c_in];
                    let (sr, si) = complex_dot(wrow_r, wrow_i, &gr, &gi);
                    yr[o * plane + k] = sr;
                    yi[o * plane + k] = si;
                }
            }
        }
    }
    (yr, yi)
}

/// Adjoint of [`spectral_mix_forward`]: returns `(dx_re, dx_im, dw_re, dw_im)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn spectral_mix_backward<T: Real>(
    xr: &[T],
    xi: &[T],
    wr: &[T],
    wi: &[T],
    dyr: &[T],
    dyi: &[T],
    c_in: usize,
    c_out: usize,
    s: usize,
    modes: usize,
) -> [Vec<T>; 4] {
    let plane = s * s;
    let mut dxr = vec![T::zero(); c_in * plane];
    let mut dxi = vec![T::zero(); c_in * plane];
    let mut dwr = vec![T::zero(); wr.len()];
    let mut dwi = vec![T::zero(); wi.len()];
    let (mut xkr, mut xki) = (vec![T::zero(); c_in], vec![T::zero(); c_in]);
    let (mut dkr, mut dki) = (vec![T::zero(); c_in], vec![T::zero(); c_in]);
    for (corner, &(r0, c0)) in corner_offsets(s, modes).iter().enumerate() {
        for a in 0..modes {
            for b in 0..modes {
                let k = (r0 + a) * s + c0 + b;
                for i in 0..c_in {
                    xkr[i] = xr[i * plane + k];
                    xki[i] = xi[i * plane + k];
                }
                dkr.iter_mut().for_each(|v| *v = T::zero());
                dki.iter_mut().for_each(|v| *v = T::zero());
                let base = ((corner * modes + a) * modes + b) * c_out * c_in;
                for o in 0..c_out {
                    let gr = dyr[o * plane + k];
                    let gim = dyi[o * plane + k];
                    let row = base + o * c_in..base + (o + 1) * c_in;
                    let (wrow_r, wrow_i) = (&wr[row.clone()], &wi[row.clone()]);
                    let (drow_r, drow_i) = (&mut dwr[row.clone()], &mut dwi[row]);
                    // dx += conj(w) * g ; dw += conj(x) * g
                    for i in 0..c_in {
                        dkr[i] += wrow_r[i] * gr + wrow_i[i] * gim;
                        dki[i] += wrow_r[i] * gim - wrow_i[i] * gr;
                        drow_r[i] += xkr[i] * gr + xki[i] * gim;
                        drow_i[i] += xkr[i] * gim - xki[i] * gr;
                    }
                }
                for i in 0..c_in {
                    dxr[i * plane + k] += dkr[i];
                    dxi[i * plane + k] += dki[i];
                }
            }
        }
    }
    [dxr, dxi, dwr, dwi]
}

/// Retained integer frequencies `0, 1, …, m-1, -(m-1), …, -1`.
pub fn retained_frequencies(modes: usize) -> Vec<i64> {
    let m = modes as i64;
    (0..m).chain(-(m - 1)..0).collect()
}

/// Pole-residue transfer function `H(s) = Σ_n β_n / (s - μ_n)`.
pub fn transfer_function<T: Real>(
    residues: &[Complex<T>],
    poles: &[Complex<T>],
    s: Complex<T>,
) -> Complex<T> {
    residues
        .iter()
        .zip(poles)
        .map(|(&b, &mu)| b / (s - mu))
        .fold(Complex::new(T::zero(), T::zero()), |acc, v| acc + v)
}

/// Transient response `Σ_n γ_n e^{μ_n t}` at each sample time.
pub fn transient_response<T: Real>(
    gammas: &[Complex<T>],
    poles: &[Complex<T>],
    times: &[T],
) -> Vec<Complex<T>> {
    times
        .iter()
        .map(|&t| {
            gammas
                .iter()
                .zip(poles)
                .map(|(&g, &mu)| g * (mu * t).exp())
                .fold(Complex::new(T::zero(), T::zero()), |acc, v| acc + v)
        })
        .collect()
}

/// Saved state of one pole-residue pass along the last axis.
#[derive(Debug)]
pub(crate) struct LaplaceSaved<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub rows: usize,
    pub len: usize,
    pub poles: usize,
    /// `e[l, j] = exp(2πi f_l j / len)`.
    pub basis: Vec<Complex<T>>,
    /// Normalized input coefficients `a[i, r, l]`.
    pub coeff: Vec<Complex<T>>,
    /// `p[n, l] = 1 / (iω_l - μ_n)`.
    pub kernel: Vec<Complex<T>>,
    /// `h[o, i, l] = Σ_n β[n,o,i] p[n,l]`.
    pub transfer: Vec<Complex<T>>,
    /// `g[n, i, r] = -Σ_l p[n,l] a[i,r,l]`.
    pub gsum: Vec<Complex<T>>,
    /// `gamma[n, o, r]` transient residues.
    pub gamma: Vec<Complex<T>>,
    /// `ex[n, j] = exp(μ_n t_j)`.
    pub decay: Vec<Complex<T>>,
    pub beta: Vec<Complex<T>>,
    pub freqs: usize,
}

fn cz<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Pole-residue response along the last axis of a `[c_in, rows, len]` field:
/// steady part `Re Σ_l (Σ_i H_{oi}(iω_l) a_{il}) e^{iω_l t}` plus transient part
/// `Re Σ_n γ_n e^{μ_n t}`, where the transient residues are produced by the
/// same convolution, `γ_{n,o} = Σ_i β_{n,o,i} Σ_l a_{i,l} / (μ_n - iω_l)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn laplace_forward<T: Real>(
    v: &[T],
    beta: Vec<Complex<T>>,
    mu: Vec<Complex<T>>,
    c_in: usize,
    c_out: usize,
    rows: usize,
    len: usize,
    modes: usize,
) -> (Vec<T>, LaplaceSaved<T>) {
    let n_poles = mu.len();
    let freqs = retained_frequencies(modes);
    let nf = freqs.len();
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let lenf = T::from_usize(len).unwrap();

    let mut basis = vec![cz::<T>(); nf * len];
    for (l, &f) in freqs.iter().enumerate() {
        for j in 0..len {
            let th = 2.0 * std::f64::consts::PI * (f * j as i64) as f64 / len as f64;
            basis[l * len + j] = Complex::new(T::lit(th.cos()), T::lit(th.sin()));
        }
    }
    let mut coeff = vec![cz::<T>(); c_in * rows * nf];
    for ir in 0..c_in * rows {
        let src = &v[ir * len..(ir + 1) * len];
        for l in 0..nf {
            let e = &basis[l * len..(l + 1) * len];
            let mut acc = cz::<T>();
            for j in 0..len {
                acc += e[j].conj() * src[j];
            }
            coeff[ir * nf + l] = acc / lenf;
        }
    }
    let mut kernel = vec![cz::<T>(); n_poles * nf];
    for n in 0..n_poles {
        for (l, &f) in freqs.iter().enumerate() {
            let s = Complex::new(T::zero(), two_pi * T::from_i64(f).unwrap());
            kernel[n * nf + l] = (s - mu[n]).inv();
        }
    }
    let mut transfer = vec![cz::<T>(); c_out * c_in * nf];
    for n in 0..n_poles {
        for oi in 0..c_out * c_in {
            let b = beta[n * c_out * c_in + oi];
            for l in 0..nf {
                transfer[oi * nf + l] += b * kernel[n * nf + l];
            }
        }
    }
    // steady spectrum s[o, r, l]
    let mut steady = vec![cz::<T>(); c_out * rows * nf];
    for o in 0..c_out {
        for i in 0..c_in {
            let h = &transfer[(o * c_in + i) * nf..(o * c_in + i + 1) * nf];
            for r in 0..rows {
                let a = &coeff[(i * rows + r) * nf..(i * rows + r + 1) * nf];
                let dst = &mut steady[(o * rows + r) * nf..(o * rows + r + 1) * nf];
                for l in 0..nf {
                    dst[l] += h[l] * a[l];
                }
            }
        }
    }
    let mut gsum = vec![cz::<T>(); n_poles * c_in * rows];
    for n in 0..n_poles {
        let p = &kernel[n * nf..(n + 1) * nf];
        for ir in 0..c_in * rows {
            let a = &coeff[ir * nf..(ir + 1) * nf];
            let mut acc = cz::<T>();
            for l in 0..nf {
                acc += p[l] * a[l];
            }
            gsum[n * c_in * rows + ir] = -acc;
        }
    }
    let mut gamma = vec![cz::<T>(); n_poles * c_out * rows];
    for n in 0..n_poles {
        for o in 0..c_out {
            for i in 0..c_in {
                let b = beta[(n * c_out + o) * c_in + i];
                let g = &gsum[(n * c_in + i) * rows..(n * c_in + i + 1) * rows];
                let dst = &mut gamma[(n * c_out + o) * rows..(n * c_out + o + 1) * rows];
                for r in 0..rows {
                    dst[r] += b * g[r];
                }
            }
        }
    }
    let mut decay = vec![cz::<T>(); n_poles * len];
    for n in 0..n_poles {
        for j in 0..len {
            let t = T::from_usize(j).unwrap() / lenf;
            decay[n * len + j] = (mu[n] * t).exp();
        }
    }
    let mut out = vec![T::zero(); c_out * rows * len];
    for or in 0..c_out * rows {
        let s: &[Complex<T>] = &steady[or * nf..(or + 1) * nf];
        let dst = &mut out[or * len..(or + 1) * len];
        for l in 0..nf {
            let e = &basis[l * len..(l + 1) * len];
            for j in 0..len {
                dst[j] += (s[l] * e[j]).re;
            }
        }
    }
    for n in 0..n_poles {
        let ex = &decay[n * len..(n + 1) * len];
        for or in 0..c_out * rows {
            let g = gamma[n * c_out * rows + or];
            let dst = &mut out[or * len..(or + 1) * len];
            for j in 0..len {
                dst[j] += (g * ex[j]).re;
            }
        }
    }
    let saved = LaplaceSaved {
        c_in,
        c_out,
        rows,
        len,
        poles: n_poles,
        basis,
        coeff,
        kernel,
        transfer,
        gsum,
        gamma,
        decay,
        beta,
        freqs: nf,
    };
    (out, saved)
}

/// Adjoint of [`laplace_forward`]: returns `(dv, dbeta, dmu)` with complex
/// gradients packed as `∂L/∂re + i ∂L/∂im`.
pub(crate) fn laplace_backward<T: Real>(
    s: &LaplaceSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<Complex<T>>, Vec<Complex<T>>) {
    let (c_in, c_out, rows, len, np, nf) = (s.c_in, s.c_out, s.rows, s.len, s.poles, s.freqs);
    let lenf = T::from_usize(len).unwrap();
    let mut dbeta = vec![cz::<T>(); np * c_out * c_in];
    let mut dmu = vec![cz::<T>(); np];

    // steady: gS[o,r,l] = Σ_j dy conj(e[l,j])
    let mut g_steady = vec![cz::<T>(); c_out * rows * nf];
    for or in 0..c_out * rows {
        let d = &dy[or * len..(or + 1) * len];
        for l in 0..nf {
            let e = &s.basis[l * len..(l + 1) * len];
            let mut acc = cz::<T>();
            for j in 0..len {
                acc += e[j].conj() * d[j];
            }
            g_steady[or * nf + l] = acc;
        }
    }
    // transient: gγ[n,o,r] = Σ_j dy conj(ex[n,j]); gEx[n,j] = Σ_or conj(γ) dy
    let mut g_gamma = vec![cz::<T>(); np * c_out * rows];
    for n in 0..np {
        let ex = &s.decay[n * len..(n + 1) * len];
        let mut g_ex = vec![cz::<T>(); len];
        for or in 0..c_out * rows {
            let d = &dy[or * len..(or + 1) * len];
            let gm = s.gamma[n * c_out * rows + or].conj();
            let mut acc = cz::<T>();
            for j in 0..len {
                acc += ex[j].conj() * d[j];
                g_ex[j] += gm * d[j];
            }
            g_gamma[n * c_out * rows + or] = acc;
        }
        for j in 0..len {
            let t = T::from_usize(j).unwrap() / lenf;
            dmu[n] += (ex[j] * t).conj() * g_ex[j];
        }
    }
    // γ = Σ_i β G
    let mut g_gsum = vec![cz::<T>(); np * c_in * rows];
    for n in 0..np {
        for o in 0..c_out {
            let gg = &g_gamma[(n * c_out + o) * rows..(n * c_out + o + 1) * rows];
            for i in 0..c_in {
                let bi = (n * c_out + o) * c_in + i;
                let g = &s.gsum[(n * c_in + i) * rows..(n * c_in + i + 1) * rows];
                let dst = &mut g_gsum[(n * c_in + i) * rows..(n * c_in + i + 1) * rows];
                let bconj = s.beta[bi].conj();
                let mut acc = cz::<T>();
                for r in 0..rows {
                    acc += g[r].conj() * gg[r];
                    dst[r] += bconj * gg[r];
                }
                dbeta[bi] += acc;
            }
        }
    }
    let mut g_coeff = vec![cz::<T>(); c_in * rows * nf];
    let mut g_kernel = vec![cz::<T>(); np * nf];
    // G = -Σ_l p a
    for n in 0..np {
        let p = &s.kernel[n * nf..(n + 1) * nf];
        for ir in 0..c_in * rows {
            let gg = g_gsum[n * c_in * rows + ir];
            let a = &s.coeff[ir * nf..(ir + 1) * nf];
            let ga = &mut g_coeff[ir * nf..(ir + 1) * nf];
            for l in 0..nf {
                g_kernel[n * nf + l] -= a[l].conj() * gg;
                ga[l] -= p[l].conj() * gg;
            }
        }
    }
    // steady = Σ_i h a
    let mut g_transfer = vec![cz::<T>(); c_out * c_in * nf];
    for o in 0..c_out {
        for i in 0..c_in {
            let h = &s.transfer[(o * c_in + i) * nf..(o * c_in + i + 1) * nf];
            let gh = &mut g_transfer[(o * c_in + i) * nf..(o * c_in + i + 1) * nf];
            for r in 0..rows {
                let a = &s.coeff[(i * rows + r) * nf..(i * rows + r + 1) * nf];
                let gs = &g_steady[(o * rows + r) * nf..(o * rows + r + 1) * nf];
                let ga = &mut g_coeff[(i * rows + r) * nf..(i * rows + r + 1) * nf];
                for l in 0..nf {
                    gh[l] += a[l].conj() * gs[l];
                    ga[l] += h[l].conj() * gs[l];
                }
            }
        }
    }
    // h = Σ_n β p
    for n in 0..np {
        let p = &s.kernel[n * nf..(n + 1) * nf];
        for oi in 0..c_out * c_in {
            let gh = &g_transfer[oi * nf..(oi + 1) * nf];
            let b = s.beta[n * c_out * c_in + oi].conj();
            let mut acc = cz::<T>();
            for l in 0..nf {
                acc += p[l].conj() * gh[l];
                g_kernel[n * nf + l] += b * gh[l];
            }
            dbeta[n * c_out * c_in + oi] += acc;
        }
    }
    // p = 1/(iω - μ), dp/dμ = p²
    for n in 0..np {
        for l in 0..nf {
            let p = s.kernel[n * nf + l];
            dmu[n] += (p * p).conj() * g_kernel[n * nf + l];
        }
    }
    // a = (1/len) Σ_j v conj(e)
    let mut dv = vec![T::zero(); c_in * rows * len];
    for ir in 0..c_in * rows {
        let ga = &g_coeff[ir * nf..(ir + 1) * nf];
        let dst = &mut dv[ir * len..(ir + 1) * len];
        for l in 0..nf {
            let e = &s.basis[l * len..(l + 1) * len];
            for j in 0..len {
                dst[j] += (e[j] * ga[l]).re / lenf;
            }
        }
    }
    (dv, dbeta, dmu)
}
