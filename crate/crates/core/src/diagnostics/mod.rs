//! Probing, spectral and gradient diagnostics of trained operators.

mod gradients;
mod probe;
mod spectrum;
mod studies;

pub use gradients::{gradient_ratio, group_norms, GradientReport};
pub use probe::{train_probe, ProbeConfig, ProbeDecoder, ProbeOutcome, PROBE_HIDDEN};
pub use spectrum::{mean_profile, radial_bins, spectral_profile, SpectralProfile};
pub use studies::{
    capture_representations, gradient_csv, probe_csv, representation_label, run_forgetting_study,
    run_shortcut_study, run_spectra, spectrum_csv, write_forgetting, write_gradients,
    write_spectra, ForgettingReport, ShortcutReport, GRADIENT_FILE, PROBE_FILE,
};
