#![allow(dead_code)]

use catlab::experiment::ExperimentConfig;
use catlab::failure_sets::FailureSet;
use catlab::ma_process::{CoefficientFamily, ModelSpec};
use catlab::tail_noise::{NoiseModel, SpectralMeasure};
use nalgebra::DMatrix;

pub fn rc1_noise() -> NoiseModel {
    NoiseModel::new(1.5, SpectralMeasure::balanced(1.0).unwrap(), 1.0).unwrap()
}

pub fn rc1_spec() -> ModelSpec {
    let coeffs = CoefficientFamily::Geometric {
        base: DMatrix::from_element(1, 1, 1.0),
        rho: 0.5,
    };
    ModelSpec::new(coeffs, rc1_noise(), 1e-8).unwrap()
}

pub fn rc1_gamma() -> FailureSet {
    FailureSet::half_space(vec![1.0], 1.2).unwrap()
}

pub fn rc1_psi() -> FailureSet {
    FailureSet::half_space(vec![1.0], 2.4).unwrap()
}

pub const RC1_MODEL: &str = r#"
[model.coeffs]
kind = "geometric"
B = [[1.0]]
rho = 0.5

[model.noise]
alpha = 1.5
xm = 1.0
spectral.atoms = [[[1.0], 1.0]]

[gamma]
kind = "half_space"
w = [1.0]
c = 1.2

[psi]
kind = "half_space"
w = [1.0]
c = 2.4
"#;

/// RC1 config for `experiment` with extra top-level keys prepended.
pub fn rc1_config(experiment: &str, extra: &str) -> ExperimentConfig {
    let text = format!("experiment = \"{experiment}\"\nrecord_runtime = false\n{extra}\n{RC1_MODEL}");
    ExperimentConfig::from_toml(&text).unwrap()
}
