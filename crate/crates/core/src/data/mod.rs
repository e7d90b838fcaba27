//! Darcy-flow ground truth on polygonal domains and the dataset container.

mod coefficient;
mod dataset;
mod format;
mod solver;

pub use coefficient::{
    sample_coefficient, LogCoefficient, COEFF_MAX, COEFF_MIN, MODE_AMPLITUDE, WAVE_VECTORS,
};
pub use dataset::{
    generate_dataset, generate_samples, DarcySample, Split, SplitConfig, DEFAULT_JITTER,
};
pub use format::{
    read_dataset, write_dataset, DatasetFile, SampleRecord, IN_CHANNELS, MAGIC, OUT_CHANNELS,
    VERSION,
};
pub use solver::{solve_darcy, DarcyOperator, CG_TOLERANCE};
pub(crate) use format::hex_digest;
