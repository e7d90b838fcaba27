use crate::{Error, Result};

/// Cell-centred 5-point discretisation of `−∇·(a∇u)` on the masked cells of
/// an `s×s` grid over the unit square.
///
/// Face coefficients are harmonic means of the two adjacent cell values.
/// A neighbour outside the mask is a Dirichlet node (`u = 0`) at its cell
/// centre; a neighbour beyond the square is a Dirichlet node on the square's
/// edge, half a cell away.
pub struct DarcyOperator<'a> {
    s: usize,
    a: &'a [f64],
    mask: &'a [f64],
    /// per cell: coefficient towards [left, right, down, up]; zero towards
    /// Dirichlet nodes
    links: Vec<[f64; 4]>,
    diag: Vec<f64>,
}

fn harmonic(x: f64, y: f64) -> f64 {
    2.0 * x * y / (x + y)
}

impl<'a> DarcyOperator<'a> {
    pub fn new(a: &'a [f64], mask: &'a [f64], s: usize) -> Result<Self> {
        if a.len() != s * s || mask.len() != s * s {
            return Err(Error::shape(
                "darcy",
                format!("fields of {} / {} cells for S={s}", a.len(), mask.len()),
            ));
        }
        let inside = |k: usize| mask[k] > 0.5;
        if !(0..s * s).any(inside) {
            return Err(Error::Degenerate("mask has no interior cells".into()));
        }
        if let Some(k) = (0..s * s).find(|&k| inside(k) && !(a[k] > 0.0 && a[k].is_finite())) {
            return Err(Error::Config(format!(
                "coefficient must be positive inside the domain, got {} at cell {k}",
                a[k]
            )));
        }
        let inv_h2 = (s * s) as f64;
        let mut links = vec![[0.0; 4]; s * s];
        let mut diag = vec![0.0; s * s];
        for j in 0..s {
            for i in 0..s {
                let k = j * s + i;
                if !inside(k) {
                    continue;
                }
                let neighbours = [
                    (i > 0).then(|| k - 1),
                    (i + 1 < s).then(|| k + 1),
                    (j > 0).then(|| k - s),
                    (j + 1 < s).then(|| k + s),
                ];
                for (d, nb) in neighbours.into_iter().enumerate() {
                    match nb {
                        None => diag[k] += 2.0 * a[k] * inv_h2,
                        Some(n) => {
                            let c = harmonic(a[k], a[n]) * inv_h2;
                            diag[k] += c;
                            if inside(n) {
                                links[k][d] = c;
                            }
                        }
                    }
                }
            }
        }
        Ok(Self {
            s,
            a,
            mask,
            links,
            diag,
        })
    }

    pub fn resolution(&self) -> usize {
        self.s
    }

    pub fn coefficient(&self) -> &[f64] {
        self.a
    }

    pub fn is_interior(&self, k: usize) -> bool {
        self.mask[k] > 0.5
    }

    /// `A_h u` on interior cells, zero elsewhere.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let s = self.s;
        for k in 0..s * s {
            if !self.is_interior(k) {
                out[k] = 0.0;
                continue;
            }
            let l = &self.links[k];
            let mut v = self.diag[k] * u[k];
            if l[0] != 0.0 {
                v -= l[0] * u[k - 1];
            }
            if l[1] != 0.0 {
                v -= l[1] * u[k + 1];
            }
            if l[2] != 0.0 {
                v -= l[2] * u[k - s];
            }
            if l[3] != 0.0 {
                v -= l[3] * u[k + s];
            }
            out[k] = v;
        }
    }

    /// `‖A_h u − f‖ / ‖f‖` over interior cells (`‖A_h u‖` when `f` vanishes).
    pub fn relative_residual(&self, u: &[f64], f: &[f64]) -> f64 {
        let mut au = vec![0.0; u.len()];
        self.apply(u, &mut au);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..u.len() {
            if self.is_interior(k) {
                num += (au[k] - f[k]).powi(2);
                den += f[k] * f[k];
            }
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }
}

pub const CG_TOLERANCE: f64 = 1e-8;

/// Solves `−∇·(a∇u) = f` on the mask with `u = 0` elsewhere by conjugate
/// gradients. Fields are row-major `s×s`; the result is zero off the mask.
pub fn solve_darcy(a: &[f64], mask: &[f64], f: &[f64], s: usize) -> Result<Vec<f64>> {
    let op = DarcyOperator::new(a, mask, s)?;
    if f.len() != s * s {
        return Err(Error::shape("darcy", format!("forcing of {} cells", f.len())));
    }
    let n = s * s;
    let mut u = vec![0.0; n];
    let mut r: Vec<f64> = (0..n)
        .map(|k| if op.is_interior(k) { f[k] } else { 0.0 })
        .collect();
    let b_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(u);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 10 * n;
    for _ in 0..max_iter {
        if rr.sqrt() <= CG_TOLERANCE * b_norm {
            return Ok(u);
        }
        op.apply(&p, &mut ap);
        let alpha = rr / p.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>();
        for k in 0..n {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= CG_TOLERANCE * b_norm {
        return Ok(u);
    }
    Err(Error::Solver(format!(
        "conjugate gradients stalled at relative residual {:.3e} after {max_iter} iterations",
        rr.sqrt() / b_norm
    )))
}
