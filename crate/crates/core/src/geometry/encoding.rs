use super::polygon::Polygon;
use crate::autodiff::Tensor;
use crate::{Error, Result};

pub const MIN_RESOLUTION: usize = 8;

fn check_resolution(s: usize) -> Result<()> {
    if s < MIN_RESOLUTION {
        return Err(Error::Config(format!(
            "resolution {s} below minimum {MIN_RESOLUTION}"
        )));
    }
    Ok(())
}

/// Centre of cell `i` along one axis of an `s`-cell grid over [0, 1].
#[inline]
pub fn cell_center(i: usize, s: usize) -> f64 {
    (i as f64 + 0.5) / s as f64
}

/// Row-major `s×s` grid, rows along y: entry `j*s + i` is the cell at
/// `(cell_center(i), cell_center(j))`.
pub fn rasterize_mask(p: &Polygon, s: usize) -> Result<Vec<f64>> {
    check_resolution(s)?;
    let mut mask = vec![0.0; s * s];
    for j in 0..s {
        let y = cell_center(j, s);
        for i in 0..s {
            if p.contains([cell_center(i, s), y]) {
                mask[j * s + i] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// `(1 − 2·mask)·dist(x, ∂D)` at every cell centre, same layout as the mask.
pub fn signed_distance(p: &Polygon, s: usize) -> Result<Vec<f64>> {
    let mask = rasterize_mask(p, s)?;
    Ok(signed_distance_with_mask(p, s, &mask))
}

fn signed_distance_with_mask(p: &Polygon, s: usize, mask: &[f64]) -> Vec<f64> {
    let mut sdf = vec![0.0; s * s];
    for j in 0..s {
        let y = cell_center(j, s);
        for i in 0..s {
            let d = p.boundary_distance([cell_center(i, s), y]);
            sdf[j * s + i] = (1.0 - 2.0 * mask[j * s + i]) * d;
        }
    }
    sdf
}

/// Mask, signed distance and cell-centre coordinates on an `s×s` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryEncoding {
    pub resolution: usize,
    pub mask: Vec<f64>,
    pub sdf: Vec<f64>,
    /// `[x plane, y plane]`, each `s×s`
    pub coords: Vec<f64>,
}

pub const GEOMETRY_CHANNELS: usize = 4;

impl GeometryEncoding {
    /// Stacked `[mask, sdf, x, y]` block of shape `4×s×s`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self
            .mask
            .iter()
            .chain(&self.sdf)
            .chain(&self.coords)
            .map(|&v| v as f32)
            .collect();
        let s = self.resolution;
        Tensor::new(&[GEOMETRY_CHANNELS, s, s], data).expect("consistent encoding")
    }

    pub fn interior_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.5).count()
    }
}

pub fn coordinate_planes(s: usize) -> Vec<f64> {
    let mut coords = vec![0.0; 2 * s * s];
    for j in 0..s {
        for i in 0..s {
            coords[j * s + i] = cell_center(i, s);
            coords[s * s + j * s + i] = cell_center(j, s);
        }
    }
    coords
}

pub fn encode_geometry(p: &Polygon, s: usize) -> Result<GeometryEncoding> {
    let mask = rasterize_mask(p, s)?;
    let sdf = signed_distance_with_mask(p, s, &mask);
    Ok(GeometryEncoding {
        resolution: s,
        mask,
        sdf,
        coords: coordinate_planes(s),
    })
}
