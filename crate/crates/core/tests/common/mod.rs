#![allow(dead_code)]

use conevol_core::calibration::{make_profile_pair, CalibrationConfig, ProfilePair};
use conevol_core::experiment::ExperimentConfig;
use conevol_core::sphere::Dimension;

/// n = 64 with a coarse envelope grid; fast to calibrate.
pub fn coarse_calibration() -> CalibrationConfig {
    let mut c = CalibrationConfig::for_dimension(Dimension::new(64).unwrap());
    c.grid_size = 32;
    c.tol_pair = 1e-4;
    c
}

pub fn coarse_pair() -> ProfilePair {
    make_profile_pair(&coarse_calibration()).unwrap()
}

pub fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::flagship();
    cfg.calibration = coarse_calibration();
    cfg.seed = 11;
    cfg.sampling.points_per_sequence = 16;
    cfg.sampling.sequences_per_family = 20;
    cfg.sampling.volume_bodies = 20;
    cfg.sampling.volume_samples = 400;
    cfg.sampling.density_grid = 33;
    cfg.sampling.histogram_bins = 8;
    cfg.diagnostics.cap_ratio_pairs = 8;
    cfg.diagnostics.cap_ratio_samples = 100;
    cfg.diagnostics.factorization_bodies = 600;
    cfg
}
