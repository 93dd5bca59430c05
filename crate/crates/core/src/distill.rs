//! Co-distillation of the teacher into a compact student (PKDN).
//!
//! Both networks see the same mini-batches and are updated simultaneously:
//!
//! ```text
//! loss_t = CE(y, p_t) + β · CE(sg(p_s), p_t) + λ · anchor
//! loss_s = CE(y, p_s) + β · CE(sg(p_t), p_s)
//! ```
//!
//! `sg` blocks the gradient, so each network treats its peer's current
//! prediction as a fixed soft target.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::train::{
    clip_joint, fit_classifier, shuffled_batches, EarlyStopping, FitConfig, LabeledInputs,
};
use crate::nn::{
    cross_entropy, one_hot, predicted_label, sgd_step, Activation, Matrix, Mlp, MlpDoc, Mode,
    OptState, LOG_EPS,
};
use crate::pkn::{
    evaluate_teacher, precondition_teacher, teacher_loss, InputPipeline, PknModel, PreparedSplit,
    TeacherOpt,
};
use crate::rng::{rng_from, tag};

/// Student architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub l2: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![12],
            dropout: 0.0,
            l2: 1e-4,
        }
    }
}

/// Largest allowed student size as a fraction of the teacher.
pub const MAX_PARAM_RATIO: f64 = 1.0 / 3.0;

/// Fresh student for `input_width` inputs. Fails when the student would hold
/// more than a third of `teacher_params` parameters.
pub fn build_student(
    input_width: usize,
    cfg: &StudentConfig,
    teacher_params: usize,
    seed: u64,
) -> Result<Mlp> {
    let mut widths = vec![input_width];
    widths.extend(&cfg.hidden);
    widths.push(2);
    let mut rng = rng_from(&[seed, tag::INIT, tag::STUDENT]);
    let net = Mlp::new(&widths, Activation::Tanh, Activation::Softmax, &mut rng)?
        .with_dropout(cfg.dropout)?
        .with_l2(cfg.l2)?;
    if net.param_count() as f64 > teacher_params as f64 * MAX_PARAM_RATIO {
        return Err(Error::config(format!(
            "student with {} parameters exceeds a third of the teacher's {teacher_params}",
            net.param_count()
        )));
    }
    Ok(net)
}

/// Both co-distillation losses with their parts and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CodistillLoss {
    pub loss_t: f64,
    pub loss_s: f64,
    pub t_ce: f64,
    pub t_peer: f64,
    pub s_ce: f64,
    pub s_peer: f64,
    pub d_p_t: Matrix,
    pub d_p_s: Matrix,
}

/// Co-distillation losses at temperature 1. `targets` are probability rows,
/// usually one-hot labels. The anchor term is added by the caller.
pub fn codistill_losses(
    p_t: &Matrix,
    p_s: &Matrix,
    targets: &Matrix,
    beta: f64,
) -> Result<CodistillLoss> {
    codistill_losses_at(p_t, p_s, targets, beta, 1.0)
}

/// `q ∝ p^(1/T)` row-wise, i.e. the softmax of logits divided by `T`.
pub fn soften(p: &Matrix, temperature: f64) -> Matrix {
    let a = 1.0 / temperature;
    let mut out = p.clone();
    for row in out.as_mut_slice().chunks_mut(p.cols().max(1)) {
        for v in row.iter_mut() {
            *v = v.max(LOG_EPS).powf(a);
        }
        let z: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Pulls a gradient on `soften(p, T)` back onto `p`.
fn soften_backward(p: &Matrix, q: &Matrix, temperature: f64, g: &Matrix) -> Matrix {
    let a = 1.0 / temperature;
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let (pr, qr, gr) = (p.row(r), q.row(r), g.row(r));
        let mean: f64 = gr.iter().zip(qr).map(|(x, y)| x * y).sum();
        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = a * qr[k] * (gr[k] - mean) / pr[k].max(LOG_EPS);
        }
    }
    out
}

/// [`codistill_losses`] with both peer terms computed on distributions
/// softened by `temperature`. The hard-label terms are never softened.
pub fn codistill_losses_at(
    p_t: &Matrix,
    p_s: &Matrix,
    targets: &Matrix,
    beta: f64,
    temperature: f64,
) -> Result<CodistillLoss> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(
            "peer weight must be finite and non-negative",
        ));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be finite and positive"));
    }
    let t_ce = cross_entropy(p_t, targets)?;
    let s_ce = cross_entropy(p_s, targets)?;
    let (t_peer, s_peer, t_peer_grad, s_peer_grad) = if temperature == 1.0 {
        let t_peer = cross_entropy(p_t, p_s)?;
        let s_peer = cross_entropy(p_s, p_t)?;
        (t_peer.value, s_peer.value, t_peer.grad, s_peer.grad)
    } else {
        let (q_t, q_s) = (soften(p_t, temperature), soften(p_s, temperature));
        let t_peer = cross_entropy(&q_t, &q_s)?;
        let s_peer = cross_entropy(&q_s, &q_t)?;
        (
            t_peer.value,
            s_peer.value,
            soften_backward(p_t, &q_t, temperature, &t_peer.grad),
            soften_backward(p_s, &q_s, temperature, &s_peer.grad),
        )
    };
    let mut d_p_t = t_ce.grad;
    let mut d_p_s = s_ce.grad;
    // skipped at β = 0 so the update equals plain cross-entropy bit for bit
    if beta != 0.0 {
        for (d, g) in d_p_t.as_mut_slice().iter_mut().zip(t_peer_grad.as_slice()) {
            *d += beta * g;
        }
        for (d, g) in d_p_s.as_mut_slice().iter_mut().zip(s_peer_grad.as_slice()) {
            *d += beta * g;
        }
    }
    Ok(CodistillLoss {
        loss_t: t_ce.value + beta * t_peer,
        loss_s: s_ce.value + beta * s_peer,
        t_ce: t_ce.value,
        t_peer,
        s_ce: s_ce.value,
        s_peer,
        d_p_t,
        d_p_s,
    })
}

/// Hyper-parameters of the co-distillation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodistillConfig {
    /// Peer weight β.
    pub beta: f64,
    /// Anchor weight λ on the teacher's sub-networks.
    pub anchor_weight: f64,
    pub teacher_lr: f64,
    pub student_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub max_grad_norm: Option<f64>,
    /// Keep sub-network weights fixed; only the teacher head moves.
    pub freeze_subnets: bool,
    /// Train the student alone on hard labels before co-distillation.
    pub solo_warmup: bool,
    /// Softening applied to both peer terms; 1 leaves probabilities as they are.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for CodistillConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            anchor_weight: 1.0,
            teacher_lr: 0.02,
            student_lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            patience: 10,
            max_grad_norm: Some(5.0),
            freeze_subnets: false,
            solo_warmup: true,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl CodistillConfig {
    /// Plain training settings for a student trained alone with the same schedule.
    pub fn solo_fit(&self) -> FitConfig {
        FitConfig {
            learning_rate: self.student_lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }
}

/// One epoch of co-distillation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodistillEpoch {
    pub epoch: usize,
    pub loss_t_ce: f64,
    pub loss_t_peer: f64,
    pub loss_t_anchor: f64,
    pub loss_s_ce: f64,
    pub loss_s_peer: f64,
    pub acc_t_valid: f64,
    pub acc_s_valid: f64,
}

/// Outcome of [`codistill`]: best-validation snapshots of both networks.
#[derive(Debug, Clone)]
pub struct CodistillOutcome {
    pub teacher: PknModel,
    pub student: Mlp,
    pub history: Vec<CodistillEpoch>,
}

/// Trains the student alone on hard labels.
pub fn train_student_solo(student: Mlp, data: &PreparedSplit, cfg: &FitConfig) -> Result<Mlp> {
    let train = LabeledInputs::new(&data.train_x, &data.train_y)?;
    let valid = LabeledInputs::new(&data.valid_x, &data.valid_y)?;
    Ok(fit_classifier(student, train, valid, cfg, tag::STUDENT, "student")?.0)
}

/// Simultaneous co-distillation of `teacher` and `student`.
///
/// Each network keeps its own early-stopping tracker; once one stops it is
/// frozen at its best snapshot and keeps serving as the other's peer.
pub fn codistill(
    mut teacher: PknModel,
    mut student: Mlp,
    data: &PreparedSplit,
    cfg: &CodistillConfig,
) -> Result<CodistillOutcome> {
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
    if student.input_width() != data.train_x.cols() || teacher.input_width() != data.train_x.cols()
    {
        return Err(Error::shape(
            "teacher, student and inputs disagree on width",
        ));
    }
    if teacher.anchor_targets.iter().any(|a| a.len() != n) {
        return Err(Error::shape(
            "anchor targets were frozen on a different training set",
        ));
    }
    teacher.anchor_weight = cfg.anchor_weight;

    let mut t_opt = TeacherOpt::new(&teacher, cfg.teacher_lr, cfg.momentum)?;
    let mut s_opt = OptState::new(cfg.student_lr, cfg.momentum)?;
    let mut shuffle_rng = rng_from(&[cfg.seed, tag::SHUFFLE]);
    let mut t_drop = rng_from(&[cfg.seed, tag::DROPOUT, tag::TEACHER]);
    let mut s_drop = rng_from(&[cfg.seed, tag::DROPOUT, tag::STUDENT]);
    let targets = one_hot(&data.train_y);
    let mut t_stop = EarlyStopping::new(cfg.patience);
    let mut s_stop = EarlyStopping::new(cfg.patience);
    let (mut t_live, mut s_live) = (true, true);
    let mut history = Vec::with_capacity(cfg.epochs);
    let has_valid = !data.valid_y.is_empty();

    for epoch in 0..cfg.epochs {
        if !t_live && !s_live {
            break;
        }
        let mut sums = [0.0f64; 5];
        for batch in shuffled_batches(n, cfg.batch_size, &mut shuffle_rng) {
            let x = data.train_x.select_rows(&batch);
            let t = targets.select_rows(&batch);
            let anchors = teacher.anchor_matrix(&batch)?;
            let t_mode = if t_live {
                Mode::Train(&mut t_drop as &mut dyn RngCore)
            } else {
                Mode::Eval
            };
            let t_fwd = teacher.forward(&x, t_mode)?;
            let s_mode = if s_live {
                Mode::Train(&mut s_drop as &mut dyn RngCore)
            } else {
                Mode::Eval
            };
            let s_cache = student.forward(&x, s_mode)?;
            let losses = codistill_losses_at(
                t_fwd.probs(),
                s_cache.output(),
                &t,
                cfg.beta,
                cfg.temperature,
            )?;
            let anchor = teacher_loss(
                t_fwd.probs(),
                &t,
                &t_fwd.features,
                &anchors,
                cfg.anchor_weight,
            )?;
            if !(losses.loss_t.is_finite()
                && losses.loss_s.is_finite()
                && anchor.anchor.is_finite())
            {
                return Err(Error::Training {
                    network: "co-distillation".into(),
                    epoch,
                    reason: "loss is NaN".into(),
                });
            }
            let m = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip([
                losses.t_ce,
                losses.t_peer,
                anchor.anchor,
                losses.s_ce,
                losses.s_peer,
            ]) {
                *s += v * m;
            }
            // both gradients come from the pre-update weights
            let t_grad = if t_live {
                let mut g = teacher.backward(
                    &t_fwd,
                    &losses.d_p_t,
                    &anchor.d_subnet_outputs,
                    !cfg.freeze_subnets,
                )?;
                precondition_teacher(&mut g, cfg.anchor_weight, cfg.max_grad_norm);
                Some(g)
            } else {
                None
            };
            let s_grad = if s_live {
                let mut g = student.backward(&s_cache, &losses.d_p_s)?;
                clip_joint(&mut [&mut g], cfg.max_grad_norm);
                Some(g)
            } else {
                None
            };
            let fail = |who: &str, e: Error| Error::Training {
                network: who.into(),
                epoch,
                reason: e.to_string(),
            };
            if let Some(g) = t_grad {
                t_opt
                    .step(&mut teacher, &g)
                    .map_err(|e| fail("teacher", e))?;
            }
            if let Some(g) = s_grad {
                sgd_step(&mut student, &g, &mut s_opt).map_err(|e| fail("student", e))?;
            }
        }
        let (_, acc_t) = evaluate_teacher(&teacher, &data.valid_x, &data.valid_y)?;
        let acc_s = if has_valid {
            let p = student.predict(&data.valid_x)?;
            crate::nn::accuracy(&p, &data.valid_y)
        } else {
            0.0
        };
        let nf = n as f64;
        history.push(CodistillEpoch {
            epoch,
            loss_t_ce: sums[0] / nf,
            loss_t_peer: sums[1] / nf,
            loss_t_anchor: sums[2] / nf,
            loss_s_ce: sums[3] / nf,
            loss_s_peer: sums[4] / nf,
            acc_t_valid: acc_t,
            acc_s_valid: acc_s,
        });
        if has_valid {
            if t_live && t_stop.observe(epoch, acc_t, || teacher.clone()) {
                t_live = false;
                teacher = t_stop.best_snapshot().cloned().unwrap_or(teacher);
            }
            if s_live && s_stop.observe(epoch, acc_s, || student.clone()) {
                s_live = false;
                student = s_stop.best_snapshot().cloned().unwrap_or(student);
            }
        }
    }
    Ok(CodistillOutcome {
        teacher: t_stop.into_best().unwrap_or(teacher),
        student: s_stop.into_best().unwrap_or(student),
        history,
    })
}

/// Eval-mode label of a student for one transformed input row.
pub fn student_label(student: &Mlp, x: &[f64]) -> Result<u8> {
    Ok(predicted_label(&student.predict_one(x)?))
}

/// Where a student came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the teacher's serialized document.
    pub teacher_hash: String,
    pub codistill_config: CodistillConfig,
}

/// Hex SHA-256 of the teacher's canonical JSON document.
pub fn teacher_hash(teacher: &PknModel) -> Result<String> {
    let bytes = serde_json::to_vec(&teacher.to_doc())?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Persisted student: the plain model format plus input pipeline and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkdnDoc {
    #[serde(flatten)]
    pub model: MlpDoc,
    #[serde(default)]
    pub pipeline: InputPipeline,
    pub provenance: Provenance,
}

/// A distilled student ready for inference on raw windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PkdnModel {
    pub pipeline: InputPipeline,
    pub net: Mlp,
    pub provenance: Provenance,
}

impl PkdnModel {
    pub fn predict(&self, window: &[f64]) -> Result<[f64; 2]> {
        let p = self
            .net
            .predict_one(&self.pipeline.transform_one(window)?)?;
        Ok([p[0], p[1]])
    }

    pub fn to_doc(&self) -> PkdnDoc {
        PkdnDoc {
            model: MlpDoc::from(&self.net),
            pipeline: self.pipeline.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn from_doc(doc: PkdnDoc) -> Result<Self> {
        let net = Mlp::try_from(doc.model)?;
        if net.output_width() != 2 {
            return Err(Error::shape("student must have two outputs"));
        }
        Ok(Self {
            pipeline: doc.pipeline,
            net,
            provenance: doc.provenance,
        })
    }
}

/// Writes the co-distillation history as
/// `epoch,loss_t_ce,loss_t_peer,loss_t_anchor,loss_s_ce,loss_s_peer,acc_t_valid,acc_s_valid`.
pub fn write_codistill_history(path: &Path, history: &[CodistillEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "loss_t_ce",
        "loss_t_peer",
        "loss_t_anchor",
        "loss_s_ce",
        "loss_s_peer",
        "acc_t_valid",
        "acc_s_valid",
    ])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.loss_t_ce.to_string(),
            h.loss_t_peer.to_string(),
            h.loss_t_anchor.to_string(),
            h.loss_s_ce.to_string(),
            h.loss_s_peer.to_string(),
            h.acc_t_valid.to_string(),
            h.acc_s_valid.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncertain_teacher_costs_two_ln_two() {
        let y = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let p_t = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let p_s = Matrix::from_rows(&[[0.8, 0.2]]).unwrap();
        let l = codistill_losses(&p_t, &p_s, &y, 1.0).unwrap();
        assert!((l.loss_t - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        // student side: −ln 0.8 − (0.5 ln 0.8 + 0.5 ln 0.2)
        let want_s = -(0.8f64.ln()) - 0.5 * (0.8f64.ln() + 0.2f64.ln());
        assert!((l.loss_s - want_s).abs() < 1e-12);
    }

    #[test]
    fn agreeing_one_hot_predictions_cost_nothing() {
        let y = one_hot(&[1, 0]);
        let l = codistill_losses(&y, &y, &y, 1.0).unwrap();
        assert!(l.loss_t.abs() < 1e-9 && l.loss_s.abs() < 1e-9);
    }

    #[test]
    fn softening_gradient_matches_differences() {
        let p_t = Matrix::from_rows(&[[0.3, 0.7], [0.9, 0.1]]).unwrap();
        let p_s = Matrix::from_rows(&[[0.6, 0.4], [0.2, 0.8]]).unwrap();
        let y = one_hot(&[1, 0]);
        let base = codistill_losses_at(&p_t, &p_s, &y, 0.5, 2.0).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut up = p_t.clone();
            let mut dn = p_t.clone();
            up.as_mut_slice()[i] += h;
            dn.as_mut_slice()[i] -= h;
            // unnormalized perturbation: the CE terms accept only probability
            // rows, so differentiate the pieces directly
            let f = |p: &Matrix| {
                let q = soften(p, 2.0);
                let qs = soften(&p_s, 2.0);
                let mut v = 0.0;
                for r in 0..2 {
                    v -= y
                        .row(r)
                        .iter()
                        .zip(p.row(r))
                        .map(|(a, b)| a * b.ln())
                        .sum::<f64>()
                        / 2.0;
                    v -= 0.5
                        * qs.row(r)
                            .iter()
                            .zip(q.row(r))
                            .map(|(a, b)| a * b.ln())
                            .sum::<f64>()
                        / 2.0;
                }
                v
            };
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let an = base.d_p_t.as_slice()[i];
            assert!(
                (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                "{i}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn losses_swap_with_the_networks() {
        let a = Matrix::from_rows(&[[0.2, 0.8], [0.7, 0.3]]).unwrap();
        let b = Matrix::from_rows(&[[0.6, 0.4], [0.1, 0.9]]).unwrap();
        let y = one_hot(&[1, 0]);
        let ab = codistill_losses(&a, &b, &y, 0.7).unwrap();
        let ba = codistill_losses(&b, &a, &y, 0.7).unwrap();
        assert_eq!(ab.loss_t, ba.loss_s);
        assert_eq!(ab.loss_s, ba.loss_t);
        assert_eq!(ab.d_p_t, ba.d_p_s);
    }

    #[test]
    fn zero_beta_is_plain_cross_entropy() {
        let a = Matrix::from_rows(&[[0.2, 0.8]]).unwrap();
        let b = Matrix::from_rows(&[[0.6, 0.4]]).unwrap();
        let y = one_hot(&[0]);
        let l = codistill_losses(&a, &b, &y, 0.0).unwrap();
        let ce = cross_entropy(&a, &y).unwrap();
        assert_eq!(l.loss_t, ce.value);
        assert_eq!(l.d_p_t, ce.grad);
        assert!(codistill_losses(&a, &b, &y, -1.0).is_err());
    }

    #[test]
    fn oversized_student_is_rejected() {
        let cfg = StudentConfig::default();
        assert!(build_student(50, &cfg, 3 * 638, 1).is_ok());
        assert!(build_student(50, &cfg, 3 * 638 - 1, 1).is_err());
    }
}
