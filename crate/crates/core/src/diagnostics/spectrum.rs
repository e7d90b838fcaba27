use crate::autodiff::{fft2_planes, Tensor};
use crate::{Error, Result};

/// Normalized radial distribution of Fourier magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralProfile {
    /// `rho[κ]` for κ = 0..=S/2
    pub rho: Vec<f64>,
}

/// Centered integer frequency of DFT index `k` on an `s`-point axis, in (−s/2, s/2].
fn centered(k: usize, s: usize) -> f64 {
    if k <= s / 2 {
        k as f64
    } else {
        k as f64 - s as f64
    }
}

/// Radial bin κ = ⌊|k|⌋ per DFT index of an `s×s` grid; radii beyond `s/2`
/// (the corners of the frequency square) fall into the last bin.
pub fn radial_bins(s: usize) -> Vec<usize> {
    let mut bins = vec![0; s * s];
    for r in 0..s {
        for c in 0..s {
            let k = centered(r, s).hypot(centered(c, s));
            bins[r * s + c] = (k.floor() as usize).min(s / 2);
        }
    }
    bins
}

/// Magnitude spectrum of a `[c, s, s]` field binned by radial wavenumber
/// and normalized to unit total.
pub fn spectral_profile(v: &Tensor<f32>) -> Result<SpectralProfile> {
    let shape = v.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::shape("spectral_profile", format!("need [c, s, s], got {shape:?}")));
    }
    let s = shape[1];
    let mut re: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut im = vec![0.0; re.len()];
    fft2_planes(&mut re, &mut im, s, s, false)?;
    let bins = radial_bins(s);
    let mut rho = vec![0.0; s / 2 + 1];
    for (k, (r, i)) in re.iter().zip(&im).enumerate() {
        rho[bins[k % (s * s)]] += r.hypot(*i);
    }
    let total: f64 = rho.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Degenerate(
            "spectral profile undefined for an identically zero field".into(),
        ));
    }
    rho.iter_mut().for_each(|x| *x /= total);
    Ok(SpectralProfile { rho })
}

/// Mean of the per-field profiles.
pub fn mean_profile(fields: &[Tensor<f32>]) -> Result<SpectralProfile> {
    if fields.is_empty() {
        return Err(Error::Contract("no fields to profile".into()));
    }
    let mut acc: Option<Vec<f64>> = None;
    for f in fields {
        let p = spectral_profile(f)?;
        match &mut acc {
            None => acc = Some(p.rho),
            Some(a) => a.iter_mut().zip(&p.rho).for_each(|(x, y)| *x += y),
        }
    }
    let mut rho = acc.unwrap();
    rho.iter_mut().for_each(|x| *x /= fields.len() as f64);
    Ok(SpectralProfile { rho })
}
