//! Prior-knowledge network (the teacher).
//!
//! Each indicator is represented by a small regression network pretrained to
//! reproduce the indicator from a normalized price window. The sub-network
//! outputs form a feature layer that a softmax head maps to `(p_fall, p_rise)`.
//! The assembled model is trained end to end on
//!
//! ```text
//! loss = CE(labels, probs) + λ · Σ_j MSE(subnet_j(x), anchor_j)
//! ```
//!
//! where `anchor_j` are the analytic indicator values frozen at assembly.
//! Sub-network outputs and anchors are both expressed in units of the
//! indicator's training-set standard deviation, so `λ` weighs every
//! indicator equally regardless of its raw scale.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::datagen::{DatasetSplit, LabeledSample};
use crate::error::{Error, Result};
use crate::indicators::{IndicatorSpec, Window};
use crate::nn::train::{clip_joint, shuffled_batches, EarlyStopping};
use crate::nn::{
    accuracy, check_probability_rows, cross_entropy, mse_loss, one_hot, predicted_label, sgd_step,
    Activation, ForwardCache, Grad, Matrix, Mlp, Mode, OptState,
};
use crate::rng::{rng_from, tag};

/// Scale-free network input: `v_i = x_i / x_n − 1`. The last entry is always 0.
pub fn normalize(x: &[f64]) -> Result<Vec<f64>> {
    let last = *x.last().ok_or_else(|| Error::invalid("empty window"))?;
    if last == 0.0 {
        return Err(Error::invalid("final price is zero"));
    }
    Ok(x.iter().map(|&p| p / last - 1.0).collect())
}

/// Per-position affine standardization fitted on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Window → network input: [`normalize`], then optionally standardize each
/// position with training-set statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InputPipeline {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<InputScaler>,
}

impl InputPipeline {
    pub fn fit<W: AsRef<[f64]>>(windows: &[W], standardize: bool) -> Result<Self> {
        if !standardize {
            return Ok(Self::default());
        }
        let first = windows
            .first()
            .ok_or_else(|| Error::invalid("cannot fit an input scaler on no windows"))?;
        let width = first.as_ref().len();
        let n = windows.len() as f64;
        let mut mean = vec![0.0; width];
        let mut sq = vec![0.0; width];
        for w in windows {
            let v = normalize(w.as_ref())?;
            if v.len() != width {
                return Err(Error::shape("windows differ in length"));
            }
            for (i, x) in v.iter().enumerate() {
                mean[i] += x;
                sq[i] += x * x;
            }
        }
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0);
                // the last position is identically zero
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            scaler: Some(InputScaler { mean, std }),
        })
    }

    pub fn transform_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = normalize(x)?;
        if let Some(s) = &self.scaler {
            if s.mean.len() != v.len() {
                return Err(Error::shape(format!(
                    "window of length {} fed to a pipeline fitted on {}",
                    v.len(),
                    s.mean.len()
                )));
            }
            for ((vi, m), sd) in v.iter_mut().zip(&s.mean).zip(&s.std) {
                *vi = (*vi - m) / sd;
            }
        }
        Ok(v)
    }

    pub fn transform<W: AsRef<[f64]>>(&self, windows: &[W]) -> Result<Matrix> {
        let rows = windows
            .iter()
            .map(|w| self.transform_one(w.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

impl AsRef<[f64]> for Window {
    fn as_ref(&self) -> &[f64] {
        self
    }
}

impl AsRef<[f64]> for LabeledSample {
    fn as_ref(&self) -> &[f64] {
        &self.window
    }
}

/// Dropout and weight penalty used while pretraining a sub-network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constriction {
    Slight,
    Heavy,
}

impl Constriction {
    pub fn dropout(self) -> f64 {
        match self {
            Constriction::Slight => 0.0,
            Constriction::Heavy => 0.5,
        }
    }

    pub fn l2(self) -> f64 {
        match self {
            Constriction::Slight => 1e-6,
            Constriction::Heavy => 1e-2,
        }
    }
}

/// Location and scale of an indicator on the training windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let n = values.len() as f64;
        if values.len() < 2 {
            return Err(Error::invalid("need at least two target values"));
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // a constant target is kept in raw units around its mean
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn scale(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    #[inline]
    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// A pretrained indicator representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubNet {
    pub spec: IndicatorSpec,
    pub net: Mlp,
    pub constriction: Constriction,
    pub target: TargetScale,
}

impl SubNet {
    /// Indicator estimates in raw units for already-transformed inputs.
    pub fn predict_raw(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        let out = self.net.predict(inputs)?;
        Ok(out
            .as_slice()
            .iter()
            .map(|&z| self.target.unscale(z))
            .collect())
    }
}

/// Hyper-parameters of sub-network pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_grad_norm: Option<f64>,
    /// Epoch `e` runs at `learning_rate / (1 + lr_decay · e)`.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            max_grad_norm: Some(5.0),
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

/// Per-epoch mean training loss of a pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Fits a sub-network to reproduce `spec` on `windows` under MSE.
pub fn pretrain_subnet<W: AsRef<[f64]>>(
    spec: IndicatorSpec,
    windows: &[W],
    pipeline: &InputPipeline,
    constriction: Constriction,
    cfg: &PretrainConfig,
) -> Result<(SubNet, PretrainReport)> {
    if windows.is_empty() {
        return Err(Error::invalid("no pretraining windows"));
    }
    let raw: Vec<f64> = windows
        .iter()
        .map(|w| spec.evaluate(w.as_ref()))
        .collect::<Result<_>>()?;
    let target = TargetScale::fit(&raw)?;
    let inputs = pipeline.transform(windows)?;
    let targets = Matrix::from_vec(raw.len(), 1, raw.iter().map(|&r| target.scale(r)).collect())?;

    let spec_tag = match spec {
        IndicatorSpec::SmaCross { fast, slow } => {
            (1u64 << 32) | ((fast as u64) << 16) | slow as u64
        }
        IndicatorSpec::Roc { lag } => (2u64 << 32) | lag as u64,
    };
    let mut init_rng = rng_from(&[cfg.seed, tag::INIT, tag::SUBNET, spec_tag]);
    let mut widths = vec![inputs.cols()];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut net = Mlp::new(
        &widths,
        Activation::Tanh,
        Activation::Identity,
        &mut init_rng,
    )?
    .with_dropout(constriction.dropout())?
    .with_l2(constriction.l2())?;

    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut opt = OptState::new(cfg.learning_rate, cfg.momentum)?;
    let mut shuffle_rng = rng_from(&[cfg.seed, tag::SHUFFLE, tag::SUBNET, spec_tag]);
    let mut dropout_rng = rng_from(&[cfg.seed, tag::DROPOUT, tag::SUBNET, spec_tag]);
    let name = format!("sub-network {spec}");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        let mut sum = 0.0;
        for batch in shuffled_batches(inputs.rows(), cfg.batch_size, &mut shuffle_rng) {
            let x = inputs.select_rows(&batch);
            let t = targets.select_rows(&batch);
            let cache = net.forward(&x, Mode::Train(&mut dropout_rng))?;
            let lg = mse_loss(cache.output(), &t)?;
            if !lg.value.is_finite() {
                return Err(Error::Training {
                    network: name,
                    epoch,
                    reason: "loss is NaN".into(),
                });
            }
            sum += lg.value * batch.len() as f64;
            let mut g = net.backward(&cache, &lg.grad)?;
            clip_joint(&mut [&mut g], cfg.max_grad_norm);
            sgd_step(&mut net, &g, &mut opt).map_err(|e| Error::Training {
                network: name.clone(),
                epoch,
                reason: e.to_string(),
            })?;
        }
        epoch_losses.push(sum / inputs.rows() as f64);
    }
    Ok((
        SubNet {
            spec,
            net,
            constriction,
            target,
        },
        PretrainReport { epoch_losses },
    ))
}

/// Coefficient of determination of a sub-network on held-out windows, in raw units.
pub fn r_squared<W: AsRef<[f64]>>(
    subnet: &SubNet,
    pipeline: &InputPipeline,
    windows: &[W],
) -> Result<f64> {
    let truth: Vec<f64> = windows
        .iter()
        .map(|w| subnet.spec.evaluate(w.as_ref()))
        .collect::<Result<_>>()?;
    let pred = subnet.predict_raw(&pipeline.transform(windows)?)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(&pred).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedCorrelation("constant target".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Teacher: indicator sub-networks feeding a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct PknModel {
    pub pipeline: InputPipeline,
    pub subnets: Vec<SubNet>,
    pub head: Mlp,
    /// Analytic indicator values on the training windows, raw units, one
    /// vector per sub-network.
    pub anchor_targets: Vec<Vec<f64>>,
    pub anchor_weight: f64,
}

/// Hyper-parameters of teacher training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight λ of the anchor distance.
    pub anchor_weight: f64,
    pub patience: usize,
    pub max_grad_norm: Option<f64>,
    /// Whether gradients reach the sub-networks.
    pub train_subnets: bool,
    pub constriction: Constriction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            anchor_weight: 1.0,
            patience: 10,
            max_grad_norm: Some(5.0),
            train_subnets: true,
            constriction: Constriction::Slight,
            seed: 0,
        }
    }
}

/// Builds a teacher around pretrained sub-networks with a fresh head.
/// `head_widths` must start with the number of sub-networks and end with 2.
pub fn assemble_teacher<W: AsRef<[f64]>>(
    subnets: Vec<SubNet>,
    pipeline: InputPipeline,
    head_widths: &[usize],
    train_windows: &[W],
    cfg: &TrainConfig,
) -> Result<PknModel> {
    if subnets.is_empty() {
        return Err(Error::config("a teacher needs at least one sub-network"));
    }
    if head_widths.len() < 2
        || head_widths.first() != Some(&subnets.len())
        || head_widths.last() != Some(&2)
    {
        return Err(Error::shape(format!(
            "head widths {head_widths:?} must run from {} inputs to 2 outputs",
            subnets.len()
        )));
    }
    let width = subnets[0].net.input_width();
    if subnets
        .iter()
        .any(|s| s.net.input_width() != width || s.net.output_width() != 1)
    {
        return Err(Error::shape(
            "sub-networks disagree on input width or are not scalar",
        ));
    }
    if !(cfg.anchor_weight >= 0.0 && cfg.anchor_weight.is_finite()) {
        return Err(Error::config(
            "anchor weight must be finite and non-negative",
        ));
    }
    let mut rng = rng_from(&[cfg.seed, tag::INIT, tag::TEACHER]);
    let head = Mlp::new(head_widths, Activation::Tanh, Activation::Softmax, &mut rng)?;
    let anchor_targets = subnets
        .iter()
        .map(|s| {
            train_windows
                .iter()
                .map(|w| s.spec.evaluate(w.as_ref()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(PknModel {
        pipeline,
        subnets,
        head,
        anchor_targets,
        anchor_weight: cfg.anchor_weight,
    })
}

/// Teacher loss with its parts and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLoss {
    pub total: f64,
    pub ce: f64,
    /// Σ over sub-networks of the per-network MSE to the anchor.
    pub anchor: f64,
    pub d_probs: Matrix,
    pub d_subnet_outputs: Matrix,
}

/// `CE(targets, probs) + λ · Σ_j MSE(subnet_outputs[:, j], anchor_targets[:, j])`.
///
/// `targets` are probability rows (usually one-hot labels). The two matrices
/// `subnet_outputs` and `anchor_targets` are `n × k`, one column per sub-network.
pub fn teacher_loss(
    probs: &Matrix,
    targets: &Matrix,
    subnet_outputs: &Matrix,
    anchor_targets: &Matrix,
    anchor_weight: f64,
) -> Result<TeacherLoss> {
    if anchor_weight.is_nan() || anchor_weight < 0.0 {
        return Err(Error::invalid("anchor weight must be non-negative"));
    }
    subnet_outputs.check_same_shape(anchor_targets, "sub-network outputs vs anchors")?;
    if subnet_outputs.rows() != probs.rows() {
        return Err(Error::shape(
            "sub-network outputs and probabilities differ in rows",
        ));
    }
    let ce = cross_entropy(probs, targets)?;
    let (n, k) = subnet_outputs.shape();
    let mut anchor = 0.0;
    let mut d_sub = Matrix::zeros(n, k);
    for j in 0..k {
        let f = Matrix::from_vec(n, 1, subnet_outputs.column(j))?;
        let a = Matrix::from_vec(n, 1, anchor_targets.column(j))?;
        let lg = mse_loss(&f, &a)?;
        anchor += lg.value;
        for r in 0..n {
            d_sub.set(r, j, anchor_weight * lg.grad.get(r, 0));
        }
    }
    Ok(TeacherLoss {
        total: ce.value + anchor_weight * anchor,
        ce: ce.value,
        anchor,
        d_probs: ce.grad,
        d_subnet_outputs: d_sub,
    })
}

/// Cached forward pass of the teacher on a batch.
pub struct TeacherForward {
    pub subnet_caches: Vec<ForwardCache>,
    /// `n × k` sub-network outputs (standardized units).
    pub features: Matrix,
    pub head_cache: ForwardCache,
}

impl TeacherForward {
    pub fn probs(&self) -> &Matrix {
        self.head_cache.output()
    }
}

/// Gradients for every component of the teacher.
#[derive(Debug, Clone)]
pub struct TeacherGrad {
    pub head: Grad,
    pub subnets: Vec<Grad>,
}

impl PknModel {
    pub fn input_width(&self) -> usize {
        self.subnets[0].net.input_width()
    }

    /// Total trainable parameters: sub-networks plus head.
    pub fn param_count(&self) -> usize {
        self.head.param_count()
            + self
                .subnets
                .iter()
                .map(|s| s.net.param_count())
                .sum::<usize>()
    }

    pub fn forward(&self, inputs: &Matrix, mut mode: Mode<'_>) -> Result<TeacherForward> {
        let n = inputs.rows();
        let k = self.subnets.len();
        let mut features = Matrix::zeros(n, k);
        let mut subnet_caches = Vec::with_capacity(k);
        for (j, s) in self.subnets.iter().enumerate() {
            let m = match &mut mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(rng) => Mode::Train(&mut **rng),
            };
            let cache = s.net.forward(inputs, m)?;
            for r in 0..n {
                features.set(r, j, cache.output().get(r, 0));
            }
            subnet_caches.push(cache);
        }
        let head_cache = self.head.forward(&features, mode)?;
        Ok(TeacherForward {
            subnet_caches,
            features,
            head_cache,
        })
    }

    /// Back-propagates `dL/dprobs` through the head and `dL/dfeatures` (the
    /// direct feature gradient, e.g. from the anchor term) into every part.
    pub fn backward(
        &self,
        fwd: &TeacherForward,
        d_probs: &Matrix,
        d_features_direct: &Matrix,
        with_subnets: bool,
    ) -> Result<TeacherGrad> {
        let (head, d_feat) = self.head.backward_full(&fwd.head_cache, d_probs)?;
        d_feat.check_same_shape(d_features_direct, "feature gradients")?;
        let n = d_feat.rows();
        let mut subnets = Vec::with_capacity(self.subnets.len());
        for (j, s) in self.subnets.iter().enumerate() {
            if !with_subnets {
                subnets.push(Grad::zeros_like(&s.net));
                continue;
            }
            let mut d = Matrix::zeros(n, 1);
            for r in 0..n {
                d.set(r, 0, d_feat.get(r, j) + d_features_direct.get(r, j));
            }
            subnets.push(s.net.backward(&fwd.subnet_caches[j], &d)?);
        }
        Ok(TeacherGrad { head, subnets })
    }

    /// Standardized anchors for the given training rows, `n × k`.
    pub fn anchor_matrix(&self, rows: &[usize]) -> Result<Matrix> {
        let k = self.subnets.len();
        let mut m = Matrix::zeros(rows.len(), k);
        for (j, s) in self.subnets.iter().enumerate() {
            let a = &self.anchor_targets[j];
            for (r, &i) in rows.iter().enumerate() {
                let v = *a.get(i).ok_or_else(|| {
                    Error::shape(format!(
                        "anchor row {i} outside {} training windows",
                        a.len()
                    ))
                })?;
                m.set(r, j, s.target.scale(v));
            }
        }
        Ok(m)
    }

    /// Eval-mode probabilities for already-transformed inputs.
    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward(inputs, Mode::Eval)?.head_cache.into_output())
    }

    /// Eval-mode `(p_fall, p_rise)` for one raw price window.
    pub fn predict(&self, window: &[f64]) -> Result<[f64; 2]> {
        let x = self.pipeline.transform_one(window)?;
        if x.len() != self.input_width() {
            return Err(Error::shape(format!(
                "window of length {} for a teacher expecting {}",
                x.len(),
                self.input_width()
            )));
        }
        let mut feats = Vec::with_capacity(self.subnets.len());
        for s in &self.subnets {
            feats.push(s.net.predict_one(&x)?[0]);
        }
        let p = self.head.predict_one(&feats)?;
        Ok([p[0], p[1]])
    }

    pub fn predict_label(&self, window: &[f64]) -> Result<u8> {
        Ok(predicted_label(&self.predict(window)?))
    }

    /// RMS deviation of the sub-network outputs from the frozen anchors over
    /// `windows`, standardized units, pooled over sub-networks.
    pub fn anchor_rms<W: AsRef<[f64]>>(&self, windows: &[W]) -> Result<f64> {
        let inputs = self.pipeline.transform(windows)?;
        let mut sq = 0.0;
        let mut count = 0usize;
        for s in &self.subnets {
            let out = s.net.predict(&inputs)?;
            for (w, &z) in windows.iter().zip(out.as_slice()) {
                let a = s.target.scale(s.spec.evaluate(w.as_ref())?);
                sq += (z - a).powi(2);
                count += 1;
            }
        }
        Ok((sq / count as f64).sqrt())
    }

    fn apply(
        &mut self,
        g: &TeacherGrad,
        head_opt: &mut OptState,
        sub_opts: &mut [OptState],
    ) -> Result<()> {
        sgd_step(&mut self.head, &g.head, head_opt)?;
        for ((s, gs), opt) in self.subnets.iter_mut().zip(&g.subnets).zip(sub_opts) {
            sgd_step(&mut s.net, gs, opt)?;
        }
        Ok(())
    }
}

/// One epoch of teacher history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
    /// Mean Σ_j MSE to the anchors over the epoch's batches.
    pub anchor_term: f64,
}

/// Optimizer bundle for the teacher's components.
pub(crate) struct TeacherOpt {
    pub head: OptState,
    pub subnets: Vec<OptState>,
}

impl TeacherOpt {
    pub fn new(model: &PknModel, lr: f64, momentum: f64) -> Result<Self> {
        Ok(Self {
            head: OptState::new(lr, momentum)?,
            subnets: model
                .subnets
                .iter()
                .map(|_| OptState::new(lr, momentum))
                .collect::<Result<_>>()?,
        })
    }

    pub fn step(&mut self, model: &mut PknModel, g: &TeacherGrad) -> Result<()> {
        model.apply(g, &mut self.head, &mut self.subnets)
    }
}

/// Scales the sub-network part of the update by `1 / (1 + λ)` so the step
/// stays bounded as the anchor weight grows, then clips jointly over all parts.
pub(crate) fn precondition_teacher(g: &mut TeacherGrad, anchor_weight: f64, max_norm: Option<f64>) {
    if anchor_weight > 0.0 {
        let s = 1.0 / (1.0 + anchor_weight);
        for gs in &mut g.subnets {
            gs.scale(s);
        }
    }
    clip_teacher(g, max_norm);
}

/// Clips the teacher gradient jointly over all parts.
fn clip_teacher(g: &mut TeacherGrad, max_norm: Option<f64>) {
    let mut parts: Vec<&mut Grad> = Vec::with_capacity(1 + g.subnets.len());
    parts.push(&mut g.head);
    parts.extend(g.subnets.iter_mut());
    clip_joint(&mut parts, max_norm);
}

/// Transformed inputs and labels of the three parts of a split.
pub struct PreparedSplit {
    pub train_x: Matrix,
    pub train_y: Vec<u8>,
    pub valid_x: Matrix,
    pub valid_y: Vec<u8>,
    pub test_x: Matrix,
    pub test_y: Vec<u8>,
}

impl PreparedSplit {
    pub fn new(data: &DatasetSplit, pipeline: &InputPipeline) -> Result<Self> {
        let labels = |s: &[LabeledSample]| s.iter().map(|x| x.label).collect::<Vec<u8>>();
        Ok(Self {
            train_x: pipeline.transform(&data.train)?,
            train_y: labels(&data.train),
            valid_x: pipeline.transform(&data.valid)?,
            valid_y: labels(&data.valid),
            test_x: pipeline.transform(&data.test)?,
            test_y: labels(&data.test),
        })
    }
}

/// Eval-mode cross-entropy and accuracy of the teacher.
pub fn evaluate_teacher(model: &PknModel, x: &Matrix, y: &[u8]) -> Result<(f64, f64)> {
    if y.is_empty() {
        return Ok((0.0, 0.0));
    }
    let p = model.predict_batch(x)?;
    Ok((cross_entropy(&p, &one_hot(y))?.value, accuracy(&p, y)))
}

/// End-to-end SGD of the teacher under [`teacher_loss`], keeping the epoch
/// with the best validation accuracy.
pub fn train_teacher(
    model: PknModel,
    data: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(PknModel, Vec<TeacherEpoch>)> {
    let prepared = PreparedSplit::new(data, &model.pipeline)?;
    train_teacher_prepared(model, &prepared, cfg)
}

pub fn train_teacher_prepared(
    mut model: PknModel,
    data: &PreparedSplit,
    cfg: &TrainConfig,
) -> Result<(PknModel, Vec<TeacherEpoch>)> {
    let n = data.train_y.len();
    if n == 0 {
        return Err(Error::invalid("empty training split"));
    }
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::config(format!(
            "batch size {} must be in 1..={n}",
            cfg.batch_size
        )));
    }
    if model.anchor_targets.iter().any(|a| a.len() != n) {
        return Err(Error::shape(
            "anchor targets were frozen on a different training set",
        ));
    }
    model.anchor_weight = cfg.anchor_weight;
    let mut opt = TeacherOpt::new(&model, cfg.learning_rate, cfg.momentum)?;
    let mut shuffle_rng = rng_from(&[cfg.seed, tag::SHUFFLE]);
    let mut dropout_rng = rng_from(&[cfg.seed, tag::DROPOUT, tag::TEACHER]);
    let targets = one_hot(&data.train_y);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut anchor_sum = 0.0;
        let mut hits = 0usize;
        for batch in shuffled_batches(n, cfg.batch_size, &mut shuffle_rng) {
            let x = data.train_x.select_rows(&batch);
            let t = targets.select_rows(&batch);
            let anchors = model.anchor_matrix(&batch)?;
            let fwd = model.forward(&x, Mode::Train(&mut dropout_rng as &mut dyn RngCore))?;
            let loss = teacher_loss(fwd.probs(), &t, &fwd.features, &anchors, cfg.anchor_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::Training {
                    network: "teacher".into(),
                    epoch,
                    reason: "loss is NaN".into(),
                });
            }
            let m = batch.len() as f64;
            loss_sum += loss.total * m;
            anchor_sum += loss.anchor * m;
            hits += batch
                .iter()
                .enumerate()
                .filter(|&(r, &i)| predicted_label(fwd.probs().row(r)) == data.train_y[i])
                .count();
            let mut g = model.backward(
                &fwd,
                &loss.d_probs,
                &loss.d_subnet_outputs,
                cfg.train_subnets,
            )?;
            precondition_teacher(&mut g, cfg.anchor_weight, cfg.max_grad_norm);
            opt.step(&mut model, &g).map_err(|e| Error::Training {
                network: "teacher".into(),
                epoch,
                reason: e.to_string(),
            })?;
        }
        let (valid_loss, valid_acc) = evaluate_teacher(&model, &data.valid_x, &data.valid_y)?;
        history.push(TeacherEpoch {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: hits as f64 / n as f64,
            valid_loss,
            valid_acc,
            anchor_term: anchor_sum / n as f64,
        });
        if !data.valid_y.is_empty() && stopper.observe(epoch, valid_acc, || model.clone()) {
            break;
        }
    }
    let best = stopper.into_best().unwrap_or(model);
    Ok((best, history))
}

/// Persisted teacher: head in the plain model format plus sub-networks and
/// training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PknDoc {
    pub kind: String,
    pub subnet_specs: Vec<IndicatorSpec>,
    pub anchor_weight: f64,
    pub constriction: Constriction,
    #[serde(default)]
    pub pipeline: InputPipeline,
    pub subnets: Vec<SubNet>,
    pub head: Mlp,
}

pub const PKN_KIND: &str = "pkn";

impl PknModel {
    /// Serializable form. Anchor targets are training-time state and are dropped.
    pub fn to_doc(&self) -> PknDoc {
        PknDoc {
            kind: PKN_KIND.into(),
            subnet_specs: self.subnets.iter().map(|s| s.spec).collect(),
            anchor_weight: self.anchor_weight,
            constriction: self
                .subnets
                .first()
                .map_or(Constriction::Slight, |s| s.constriction),
            pipeline: self.pipeline.clone(),
            subnets: self.subnets.clone(),
            head: self.head.clone(),
        }
    }

    pub fn from_doc(doc: PknDoc) -> Result<Self> {
        if doc.kind != PKN_KIND {
            return Err(Error::config(format!(
                "expected a `{PKN_KIND}` document, got `{}`",
                doc.kind
            )));
        }
        if doc.head.input_width() != doc.subnets.len() || doc.head.output_width() != 2 {
            return Err(Error::shape("teacher head does not match its sub-networks"));
        }
        Ok(Self {
            pipeline: doc.pipeline,
            anchor_targets: vec![Vec::new(); doc.subnets.len()],
            subnets: doc.subnets,
            head: doc.head,
            anchor_weight: doc.anchor_weight,
        })
    }
}

/// Writes the teacher history as
/// `epoch,train_loss,train_acc,valid_loss,valid_acc,anchor_term`.
pub fn write_teacher_history(path: &std::path::Path, history: &[TeacherEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_loss",
        "train_acc",
        "valid_loss",
        "valid_acc",
        "anchor_term",
    ])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.train_acc.to_string(),
            h.valid_loss.to_string(),
            h.valid_acc.to_string(),
            h.anchor_term.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Validates probability rows of a teacher output (used by tests and callers
/// that build probabilities by hand).
pub fn check_teacher_output(p: &Matrix) -> Result<()> {
    check_probability_rows(p, "teacher output")
}
