use super::coefficient::sample_coefficient;
use super::format::{DatasetFile, SampleRecord};
use super::solver::{solve_darcy, DarcyOperator};
use crate::geometry::{encode_geometry, sample_polygon, Family, GeometryEncoding, Polygon};
use crate::{Error, Result};

pub const DEFAULT_JITTER: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub resolution: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 64,
            val: 16,
            test: 32,
            resolution: 32,
            seed: 0,
            jitter: DEFAULT_JITTER,
        }
    }
}

impl SplitConfig {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Split membership of the sample at position `index` in the file.
    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Pentagons for train/val; test alternates hexagon and octagon.
    pub fn family_of(&self, index: usize) -> Family {
        match self.split_of(index) {
            Split::Train | Split::Val => Family::Pentagon,
            Split::Test if (index - self.train - self.val) % 2 == 0 => Family::Hexagon,
            Split::Test => Family::Octagon,
        }
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.total(),
        }
    }
}

/// One solved Darcy problem in double precision.
#[derive(Clone, Debug)]
pub struct DarcySample {
    pub polygon: Polygon,
    pub a: Vec<f64>,
    pub geometry: GeometryEncoding,
    pub forcing: Vec<f64>,
    pub u: Vec<f64>,
}

impl DarcySample {
    /// Unit forcing on the masked cells.
    pub fn solve(polygon: Polygon, a: Vec<f64>, s: usize) -> Result<Self> {
        let geometry = encode_geometry(&polygon, s)?;
        let forcing = geometry.mask.clone();
        let u = solve_darcy(&a, &geometry.mask, &forcing, s)?;
        Ok(Self {
            polygon,
            a,
            geometry,
            forcing,
            u,
        })
    }

    pub fn generate(family: Family, jitter: f64, seed: u64, s: usize) -> Result<Self> {
        let polygon = sample_polygon(family, jitter, seed)?;
        Self::solve(polygon, sample_coefficient(seed, s), s)
    }

    pub fn residual(&self) -> Result<f64> {
        let op = DarcyOperator::new(&self.a, &self.geometry.mask, self.geometry.resolution)?;
        Ok(op.relative_residual(&self.u, &self.forcing))
    }

    pub fn to_record(&self) -> SampleRecord {
        let g = &self.geometry;
        let input = self
            .a
            .iter()
            .chain(&g.mask)
            .chain(&g.sdf)
            .chain(&g.coords)
            .map(|&v| v as f32)
            .collect();
        SampleRecord {
            input,
            target: self.u.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Solves every sample of the split layout, in file order.
pub fn generate_samples(config: &SplitConfig) -> Result<Vec<DarcySample>> {
    if config.train == 0 || config.val == 0 || config.test == 0 {
        return Err(Error::Config(format!(
            "split counts must be at least 1, got {}/{}/{}",
            config.train, config.val, config.test
        )));
    }
    (0..config.total())
        .map(|index| {
            let seed = config.sample_seed(index);
            DarcySample::generate(config.family_of(index), config.jitter, seed, config.resolution)
                .map_err(|e| match e {
                    Error::Solver(msg) | Error::Degenerate(msg) | Error::Generation(msg) => {
                        Error::Generation(format!("sample {index} (seed {seed}): {msg}"))
                    }
                    other => other,
                })
        })
        .collect()
}

pub fn generate_dataset(config: &SplitConfig) -> Result<DatasetFile> {
    let samples = generate_samples(config)?;
    Ok(DatasetFile {
        resolution: config.resolution,
        samples: samples.iter().map(DarcySample::to_record).collect(),
    })
}
