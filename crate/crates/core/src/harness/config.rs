use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{Regime, DEFAULT_SIZES};
use crate::distill::{CodistillConfig, StudentConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::indicators::{IndicatorSpec, DEFAULT_WINDOW_LEN};
use crate::nn::train::FitConfig;
use crate::pkn::{PretrainConfig, TrainConfig};

/// Models a sweep can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "PK")]
    Pk,
    #[serde(rename = "PKN")]
    Pkn,
    #[serde(rename = "PKDN")]
    Pkdn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Dnn,
        ModelKind::Pk,
        ModelKind::Pkn,
        ModelKind::Pkdn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dnn => "DNN",
            ModelKind::Pk => "PK",
            ModelKind::Pkn => "PKN",
            ModelKind::Pkdn => "PKDN",
        }
    }

    /// Stream tag mixed into per-cell seeds.
    pub(crate) fn seed_tag(self) -> u64 {
        match self {
            ModelKind::Dnn => 0x0044_4e4e,
            ModelKind::Pk => 0x504b,
            ModelKind::Pkn => 0x0050_4b4e,
            ModelKind::Pkdn => 0x504b_444e,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown model `{s}`")))
    }
}

/// Train / validation / test sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        let (train, valid, test) = DEFAULT_SIZES;
        Self { train, valid, test }
    }
}

impl SplitSizes {
    pub fn as_tuple(self) -> (usize, usize, usize) {
        (self.train, self.valid, self.test)
    }

    pub fn total(self) -> usize {
        self.train + self.valid + self.test
    }
}

/// A price series to run on instead of synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealDataConfig {
    pub path: PathBuf,
    /// Forecast horizon in steps.
    pub horizon: usize,
}

pub const REAL_HORIZONS: [usize; 5] = [1, 3, 6, 9, 12];

/// Plain MLP baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnnConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
    pub fit: FitConfig,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
            dropout: 0.2,
            l2: 1e-4,
            fit: FitConfig::default(),
        }
    }
}

/// Fixed-indicator baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PkConfig {
    /// Candidate lags for both indicator families.
    pub lags: Vec<usize>,
    pub fit: FitConfig,
}

impl Default for PkConfig {
    fn default() -> Self {
        Self {
            lags: (1..=9).map(|i| 5 * i).collect(),
            fit: FitConfig {
                learning_rate: 0.1,
                ..FitConfig::default()
            },
        }
    }
}

/// Teacher construction and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PknConfig {
    /// Indicators handed to the teacher as prior knowledge.
    pub indicators: Vec<IndicatorSpec>,
    pub head_hidden: Vec<usize>,
    /// Standardize each normalized input position with training statistics.
    pub standardize_inputs: bool,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
}

impl Default for PknConfig {
    fn default() -> Self {
        Self {
            indicators: vec![
                IndicatorSpec::SmaCross { fast: 15, slow: 30 },
                IndicatorSpec::Roc { lag: 15 },
            ],
            head_hidden: vec![8],
            standardize_inputs: false,
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Single-window timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    pub enabled: bool,
    pub n: usize,
    pub warmup: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n: 1000,
            warmup: 100,
        }
    }
}

/// One experiment: a data source swept over a grid, repeated over seeds,
/// for a set of models. Seeds inside the nested configs are replaced by
/// per-cell seeds derived from `base_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub regime: Regime,
    /// Noise levels, or lag shifts for the lag-perturbed regime. Empty means
    /// the regime's default grid.
    pub noise_grid: Vec<f64>,
    pub real_data: Option<RealDataConfig>,
    pub models: Vec<ModelKind>,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub sizes: SplitSizes,
    pub window_len: usize,
    /// Standardize the two signal components before summing them into `y`.
    pub standardize_components: bool,
    pub exec: Exec,
    pub dnn: DnnConfig,
    pub pk: PkConfig,
    pub pkn: PknConfig,
    pub student: StudentConfig,
    pub codistill: CodistillConfig,
    pub latency: LatencyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Stationary,
            noise_grid: Vec::new(),
            real_data: None,
            models: ModelKind::ALL.to_vec(),
            n_repeats: 10,
            base_seed: 0,
            sizes: SplitSizes::default(),
            window_len: DEFAULT_WINDOW_LEN,
            standardize_components: false,
            exec: Exec::Parallel,
            dnn: DnnConfig::default(),
            pk: PkConfig::default(),
            pkn: PknConfig::default(),
            student: StudentConfig::default(),
            codistill: CodistillConfig::default(),
            latency: LatencyConfig::default(),
        }
    }
}

pub fn default_grid(regime: Regime) -> Vec<f64> {
    match regime {
        Regime::LagPerturbed => vec![0.0, 2.0, 5.0, 10.0],
        _ => vec![0.0, 1.0, 2.0, 5.0, 10.0],
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(s).map_err(|e| Error::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Swept values: horizons for real data, else the noise grid.
    pub fn grid(&self) -> Vec<f64> {
        if let Some(r) = &self.real_data {
            return vec![r.horizon as f64];
        }
        if self.noise_grid.is_empty() {
            default_grid(self.regime)
        } else {
            self.noise_grid.clone()
        }
    }

    /// Name used in reports and file names.
    pub fn source_name(&self) -> String {
        match &self.real_data {
            Some(_) => "real".into(),
            None => self.regime.name().into(),
        }
    }

    /// Sorted, de-duplicated model list.
    pub fn model_set(&self) -> Vec<ModelKind> {
        let mut m = self.models.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("model list is empty"));
        }
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats must be positive"));
        }
        if self.sizes.train == 0 || self.sizes.test == 0 {
            return Err(Error::config("train and test sizes must be positive"));
        }
        if self.pkn.indicators.is_empty() {
            return Err(Error::config("the teacher needs at least one indicator"));
        }
        for spec in &self.pkn.indicators {
            if spec.min_window() > self.window_len {
                return Err(Error::config(format!(
                    "{spec} does not fit a window of {}",
                    self.window_len
                )));
            }
        }
        if self.pk.lags.iter().any(|&l| l < 1 || l >= self.window_len) {
            return Err(Error::config("PK lags must lie in 1..window_len"));
        }
        if self.latency.enabled && self.latency.n == 0 {
            return Err(Error::config("latency sample count must be positive"));
        }
        match &self.real_data {
            Some(r) => {
                if !REAL_HORIZONS.contains(&r.horizon) {
                    return Err(Error::config(format!(
                        "horizon {} is not one of {REAL_HORIZONS:?}",
                        r.horizon
                    )));
                }
            }
            None => {
                let grid = self.grid();
                if grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::config(
                        "noise grid values must be finite and non-negative",
                    ));
                }
                if self.regime == Regime::LagPerturbed && grid.iter().any(|v| v.fract() != 0.0) {
                    return Err(Error::config(
                        "lag-perturbed grid values must be whole lags",
                    ));
                }
            }
        }
        Ok(())
    }
}
