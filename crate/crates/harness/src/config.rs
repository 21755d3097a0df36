//! Experiment identifiers, documented parameter ranges and default seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{HarnessError, Result};

/// Environment variable overriding the default output root.
pub const OUTPUT_ENV: &str = "SCATTERNET_OUT";
pub const DEFAULT_OUTPUT_ROOT: &str = "scatternet-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentId {
    Envelope,
    Fringes,
    KernelCompare,
    TrainCnn,
    TrainRbm,
    Verify,
}

/// A numeric parameter with its default and accepted closed range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub key: &'static str,
    pub default: f64,
    pub min: f64,
    pub max: f64,
    /// Whether the value must be a whole number.
    pub integer: bool,
    pub help: &'static str,
}

const fn real(key: &'static str, default: f64, min: f64, max: f64, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, min, max, integer: false, help }
}

const fn int(key: &'static str, default: f64, min: f64, max: f64, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, min, max, integer: true, help }
}

const ENVELOPE_PARAMS: &[ParamSpec] = &[
    int("points", 400.0, 16.0, 1e6, "samples of kr in (0, 4pi] for the sweep"),
    int("panels", 2000.0, 16.0, 1e6, "Simpson panels for the quadrature oracle"),
];

const FRINGES_PARAMS: &[ParamSpec] = &[
    int("samples", 4096.0, 64.0, 1e6, "screen samples"),
    real("separation", 10.0, 1.0, 100.0, "slit centre separation in wavelengths"),
    real("width", 0.1, 0.05, 10.0, "slit width in wavelengths"),
    real("distance", 1000.0, 10.0, 1e6, "aperture-to-screen distance in wavelengths"),
    real("half_width", 600.0, 1.0, 1e6, "half extent of the screen in wavelengths"),
];

const CNN_DATA_PARAMS: [ParamSpec; 4] = [
    int("size", 16.0, 8.0, 64.0, "image side in pixels"),
    real("wavelength", 4.0, 2.0, 32.0, "grating wavelength in pixels"),
    real("noise", 0.5, 0.0, 10.0, "standard deviation of additive Gaussian noise"),
    int("filters", 8.0, 1.0, 64.0, "first-layer convolution filters"),
];

const TRAIN_CNN_PARAMS: &[ParamSpec] = &[
    CNN_DATA_PARAMS[0],
    CNN_DATA_PARAMS[1],
    CNN_DATA_PARAMS[2],
    CNN_DATA_PARAMS[3],
    int("train_per_class", 500.0, 1.0, 1e5, "training images per class"),
    int("test_per_class", 100.0, 1.0, 1e5, "test images per class"),
    int("epochs", 5.0, 1.0, 1000.0, "training epochs"),
    int("batch", 16.0, 1.0, 1e5, "minibatch size"),
    real("lr", 0.02, 1e-6, 10.0, "learning rate"),
    real("momentum", 0.9, 0.0, 0.999, "momentum coefficient (0 = plain SGD)"),
];

const KERNEL_COMPARE_PARAMS: &[ParamSpec] = &[
    CNN_DATA_PARAMS[0],
    CNN_DATA_PARAMS[1],
    CNN_DATA_PARAMS[2],
    CNN_DATA_PARAMS[3],
    int("train_per_class", 100.0, 1.0, 1e5, "training images per class"),
    int("epochs", 2.0, 1.0, 1000.0, "training epochs"),
    real("k", 1.2, 0.01, 10.0, "wavenumber for the scatter kernel"),
    int("grid", 11.0, 5.0, 41.0, "potential grid points per axis"),
];

const TRAIN_RBM_PARAMS: &[ParamSpec] = &[
    int("hidden", 3.0, 1.0, 20.0, "hidden units"),
    int("epochs", 2000.0, 1.0, 1e6, "CD epochs"),
    int("batch", 10.0, 1.0, 1e5, "minibatch size"),
    int("cd_k", 1.0, 1.0, 100.0, "Gibbs sweeps in the negative phase"),
    real("lr", 0.1, 1e-6, 10.0, "learning rate"),
];

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Envelope,
        ExperimentId::Fringes,
        ExperimentId::KernelCompare,
        ExperimentId::TrainCnn,
        ExperimentId::TrainRbm,
        ExperimentId::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Envelope => "envelope",
            ExperimentId::Fringes => "fringes",
            ExperimentId::KernelCompare => "kernel-compare",
            ExperimentId::TrainCnn => "train-cnn",
            ExperimentId::TrainRbm => "train-rbm",
            ExperimentId::Verify => "verify",
        }
    }

    /// Seed used when none is given on the command line.
    pub fn default_seed(self) -> u64 {
        match self {
            ExperimentId::Envelope | ExperimentId::Fringes => 0,
            ExperimentId::KernelCompare | ExperimentId::TrainCnn => 7,
            ExperimentId::TrainRbm => 11,
            ExperimentId::Verify => 1,
        }
    }

    pub fn params(self) -> &'static [ParamSpec] {
        match self {
            ExperimentId::Envelope => ENVELOPE_PARAMS,
            ExperimentId::Fringes => FRINGES_PARAMS,
            ExperimentId::KernelCompare => KERNEL_COMPARE_PARAMS,
            ExperimentId::TrainCnn => TRAIN_CNN_PARAMS,
            ExperimentId::TrainRbm => TRAIN_RBM_PARAMS,
            ExperimentId::Verify => &[],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.to_string()))
    }
}

/// Output root: `$SCATTERNET_OUT` if set, otherwise `scatternet-out`.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seed: u64,
    /// Output root; artifacts go to `out_root/<id>/`.
    pub out_root: PathBuf,
    params: BTreeMap<&'static str, f64>,
}

impl ExperimentConfig {
    /// Default parameters and the experiment's default seed.
    pub fn new(id: ExperimentId, out_root: impl Into<PathBuf>) -> Self {
        Self {
            id,
            seed: id.default_seed(),
            out_root: out_root.into(),
            params: id.params().iter().map(|p| (p.key, p.default)).collect(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Overrides one parameter after checking its name and range.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let spec = self
            .id
            .params()
            .iter()
            .find(|p| p.key == key)
            .ok_or_else(|| HarnessError::Param(format!("{} has no parameter {key:?}", self.id)))?;
        if !(value >= spec.min && value <= spec.max) {
            return Err(HarnessError::Param(format!(
                "{key}={value} is outside [{}, {}]",
                spec.min, spec.max
            )));
        }
        if spec.integer && value.fract() != 0.0 {
            return Err(HarnessError::Param(format!("{key} must be a whole number, got {value}")));
        }
        self.params.insert(spec.key, value);
        Ok(())
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Result<Self> {
        self.set(key, value)?;
        Ok(self)
    }

    /// Applies a `key=value` string.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Param(format!("expected key=value, got {assignment:?}")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| HarnessError::Param(format!("{key}: {value:?} is not a number")))?;
        self.set(key.trim(), value)
    }

    /// Value of a declared parameter.
    ///
    /// Panics on an undeclared key: that is a programming error, not input.
    pub fn get(&self, key: &str) -> f64 {
        match self.params.get(key) {
            Some(v) => *v,
            None => panic!("{} declares no parameter {key:?}", self.id),
        }
    }

    pub fn get_usize(&self, key: &str) -> usize {
        self.get(key) as usize
    }

    pub fn artifact_dir(&self) -> PathBuf {
        self.out_root.join(self.id.name())
    }

    pub fn params(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        self.params.iter().map(|(k, v)| (*k, *v))
    }
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(HarnessError::io(path))
}
