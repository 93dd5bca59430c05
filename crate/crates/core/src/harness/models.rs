//! Trained models behind a common single-window prediction interface, plus
//! the two baselines.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetSplit, LabeledSample};
use crate::distill::PkdnModel;
use crate::error::{Error, Result};
use crate::indicators::{grid_search, IndicatorKind, IndicatorSpec};
use crate::nn::train::{fit_classifier, LabeledInputs};
use crate::nn::{accuracy, Activation, Matrix, Mlp};
use crate::pkn::{InputPipeline, PknModel, PreparedSplit};
use crate::rng::{rng_from, tag};

use super::config::{DnnConfig, PkConfig};

/// Single-window inference.
pub trait Predictor: Send + Sync {
    /// `(p_fall, p_rise)` for one raw price window.
    fn predict_window(&self, window: &[f64]) -> Result<[f64; 2]>;

    fn param_count(&self) -> usize;

    /// Window length the model requires, if fixed.
    fn input_width(&self) -> Option<usize>;
}

/// A plain classifier on the shared input pipeline (the DNN baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub pipeline: InputPipeline,
    pub net: Mlp,
}

impl Predictor for MlpClassifier {
    fn predict_window(&self, window: &[f64]) -> Result<[f64; 2]> {
        let p = self
            .net
            .predict_one(&self.pipeline.transform_one(window)?)?;
        Ok([p[0], p[1]])
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn input_width(&self) -> Option<usize> {
        Some(self.net.input_width())
    }
}

impl Predictor for PknModel {
    fn predict_window(&self, window: &[f64]) -> Result<[f64; 2]> {
        self.predict(window)
    }

    fn param_count(&self) -> usize {
        PknModel::param_count(self)
    }

    fn input_width(&self) -> Option<usize> {
        Some(PknModel::input_width(self))
    }
}

impl Predictor for PkdnModel {
    fn predict_window(&self, window: &[f64]) -> Result<[f64; 2]> {
        self.predict(window)
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn input_width(&self) -> Option<usize> {
        Some(self.net.input_width())
    }
}

/// Test accuracy of any predictor, one window at a time.
pub fn test_accuracy(model: &dyn Predictor, samples: &[LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("empty test split"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        rows.push(model.predict_window(&s.window)?);
    }
    let probs = Matrix::from_rows(&rows)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(accuracy(&probs, &labels))
}

/// Trains the plain MLP baseline on hard labels.
pub fn run_dnn_baseline(
    data: &PreparedSplit,
    pipeline: &InputPipeline,
    cfg: &DnnConfig,
    seed: u64,
) -> Result<MlpClassifier> {
    let mut widths = vec![data.train_x.cols()];
    widths.extend(&cfg.hidden);
    widths.push(2);
    let mut rng = rng_from(&[seed, tag::INIT]);
    let net = Mlp::new(&widths, Activation::Tanh, Activation::Softmax, &mut rng)?
        .with_dropout(cfg.dropout)?
        .with_l2(cfg.l2)?;
    let fit = crate::nn::train::FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let train = LabeledInputs::new(&data.train_x, &data.train_y)?;
    let valid = LabeledInputs::new(&data.valid_x, &data.valid_y)?;
    let (net, _) = fit_classifier(net, train, valid, &fit, tag::DROPOUT, "DNN")?;
    Ok(MlpClassifier {
        pipeline: pipeline.clone(),
        net,
    })
}

/// Softmax regression on analytic indicator values with frozen lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkModel {
    pub specs: Vec<IndicatorSpec>,
    /// Training mean and standard deviation of each indicator.
    pub feature_scale: Vec<(f64, f64)>,
    pub net: Mlp,
}

impl PkModel {
    fn features(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.specs
            .iter()
            .zip(&self.feature_scale)
            .map(|(s, (m, sd))| Ok((s.evaluate(window)? - m) / sd))
            .collect()
    }
}

impl Predictor for PkModel {
    fn predict_window(&self, window: &[f64]) -> Result<[f64; 2]> {
        let p = self.net.predict_one(&self.features(window)?)?;
        Ok([p[0], p[1]])
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn input_width(&self) -> Option<usize> {
        None
    }
}

/// Lags chosen on the training split, one indicator per family.
pub fn select_pk_lags(train: &[LabeledSample], lags: &[usize]) -> Result<Vec<IndicatorSpec>> {
    let windows: Vec<&[f64]> = train.iter().map(|s| &s.window[..]).collect();
    let returns: Vec<f64> = train.iter().map(|s| s.y).collect();
    [IndicatorKind::SmaCross, IndicatorKind::Roc]
        .into_iter()
        .map(|kind| Ok(grid_search(&windows, &returns, &kind.grid(lags))?.best_spec))
        .collect()
}

/// Grid-searches both indicators on the training split, then fits a
/// single-layer softmax on their standardized values.
pub fn run_pk_baseline(data: &DatasetSplit, cfg: &PkConfig, seed: u64) -> Result<PkModel> {
    let specs = select_pk_lags(&data.train, &cfg.lags)?;
    let raw = |part: &[LabeledSample]| -> Result<Vec<Vec<f64>>> {
        part.iter()
            .map(|s| specs.iter().map(|sp| sp.evaluate(&s.window)).collect())
            .collect()
    };
    let train_raw = raw(&data.train)?;
    let feature_scale: Vec<(f64, f64)> = (0..specs.len())
        .map(|j| {
            let n = train_raw.len() as f64;
            let m = train_raw.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = train_raw.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            (m, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    let scale = |rows: Vec<Vec<f64>>| -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(&feature_scale)
                    .map(|(v, (m, sd))| (v - m) / sd)
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows)
    };
    let train_x = scale(train_raw)?;
    let valid_x = if data.valid.is_empty() {
        Matrix::zeros(0, specs.len())
    } else {
        scale(raw(&data.valid)?)?
    };
    let labels = |part: &[LabeledSample]| part.iter().map(|s| s.label).collect::<Vec<u8>>();
    let (train_y, valid_y) = (labels(&data.train), labels(&data.valid));
    let mut rng = rng_from(&[seed, tag::INIT]);
    let net = Mlp::new(
        &[specs.len(), 2],
        Activation::Identity,
        Activation::Softmax,
        &mut rng,
    )?;
    let fit = crate::nn::train::FitConfig {
        seed,
        ..cfg.fit.clone()
    };
    let (net, _) = fit_classifier(
        net,
        LabeledInputs::new(&train_x, &train_y)?,
        LabeledInputs::new(&valid_x, &valid_y)?,
        &fit,
        tag::DROPOUT,
        "PK",
    )?;
    Ok(PkModel {
        specs,
        feature_scale,
        net,
    })
}

/// Wall-clock cost of single-window predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    /// Sample standard deviation; 0 for a single call.
    pub std_us: f64,
    pub n: usize,
}

/// Times `n` eval-mode predictions of `window` after `warmup` untimed calls.
pub fn measure_latency(
    model: &dyn Predictor,
    window: &[f64],
    n: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if n == 0 {
        return Err(Error::invalid("latency needs at least one timed call"));
    }
    for _ in 0..warmup {
        std::hint::black_box(model.predict_window(std::hint::black_box(window))?);
    }
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        let start = Instant::now();
        std::hint::black_box(model.predict_window(std::hint::black_box(window))?);
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    let (mean_us, std_us) = super::report::mean_std(&times);
    Ok(LatencyStats { mean_us, std_us, n })
}
