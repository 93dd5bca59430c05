//! Test-side oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use pkd_core::distill::codistill_losses;
use pkd_core::indicators::IndicatorSpec;
use pkd_core::nn::{cross_entropy, mse_loss, Activation, Grad, Matrix, Mlp, Mode};
use pkd_core::pkn::{teacher_loss, Constriction, InputPipeline, PknModel, SubNet, TargetScale};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, with a floor so that two zero vectors agree.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn fd_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let dn = f(&p);
            p[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

pub fn random_prob_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let w: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (c, v) in w.iter().enumerate() {
            m.set(r, c, v / s);
        }
    }
    m
}

/// Random small network: `depth` layers (1..=3), widths 1..=8, tanh hidden.
pub fn random_mlp(rng: &mut ChaCha8Rng, input: usize, output: usize, out_act: Activation) -> Mlp {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![input];
    for _ in 1..depth {
        widths.push(rng.random_range(1..=8));
    }
    widths.push(output);
    let l2 = rng.random_range(0.0..0.01);
    Mlp::new(&widths, Activation::Tanh, out_act, rng)
        .unwrap()
        .with_l2(l2)
        .unwrap()
}

#[derive(Clone, Copy, Debug)]
pub enum PlainLoss {
    Mse,
    CrossEntropy,
}

/// Relative error between back-propagated and finite-difference gradients of
/// `loss(net(x), t) + l2 penalty` for one random network.
pub fn mlp_gradient_error(seed: u64, loss: PlainLoss) -> f64 {
    let mut rng = rng(seed);
    let input = rng.random_range(1..=8);
    let n = rng.random_range(1..=6);
    let (net, target) = match loss {
        PlainLoss::Mse => {
            let out = rng.random_range(1..=4);
            let net = random_mlp(&mut rng, input, out, Activation::Identity);
            let t = random_matrix(&mut rng, n, out, 1.0);
            (net, t)
        }
        PlainLoss::CrossEntropy => {
            let out = rng.random_range(2..=4);
            let net = random_mlp(&mut rng, input, out, Activation::Softmax);
            let t = random_prob_rows(&mut rng, n, out);
            (net, t)
        }
    };
    let x = random_matrix(&mut rng, n, input, 1.0);
    let eval = |m: &Mlp| -> (f64, Matrix) {
        let cache = m.forward(&x, Mode::Eval).unwrap();
        let lg = match loss {
            PlainLoss::Mse => mse_loss(cache.output(), &target).unwrap(),
            PlainLoss::CrossEntropy => cross_entropy(cache.output(), &target).unwrap(),
        };
        (lg.value + m.l2_penalty(), lg.grad)
    };
    let cache = net.forward(&x, Mode::Eval).unwrap();
    let (_, d) = eval(&net);
    let analytic = net.backward(&cache, &d).unwrap().to_vec();
    let numeric = fd_grad(&net.parameters(), |p| {
        let mut m = net.clone();
        m.set_parameters(p).unwrap();
        eval(&m).0
    });
    rel_err(&analytic, &numeric)
}

/// A teacher with random small sub-networks and head.
pub fn random_teacher(rng: &mut ChaCha8Rng, input: usize) -> PknModel {
    let k = rng.random_range(1..=3);
    let subnets = (0..k)
        .map(|j| SubNet {
            spec: IndicatorSpec::Roc { lag: j + 1 },
            net: random_mlp(rng, input, 1, Activation::Identity),
            constriction: Constriction::Slight,
            target: TargetScale {
                mean: rng.random_range(-1.0..1.0),
                std: rng.random_range(0.5..2.0),
            },
        })
        .collect();
    let head = random_mlp(rng, k, 2, Activation::Softmax);
    PknModel {
        pipeline: InputPipeline::default(),
        subnets,
        head,
        anchor_targets: Vec::new(),
        anchor_weight: 1.0,
    }
}

pub fn teacher_params(t: &PknModel) -> Vec<f64> {
    let mut p = t.head.parameters();
    for s in &t.subnets {
        p.extend(s.net.parameters());
    }
    p
}

pub fn set_teacher_params(t: &mut PknModel, p: &[f64]) {
    let mut at = t.head.param_count();
    t.head.set_parameters(&p[..at]).unwrap();
    for s in &mut t.subnets {
        let n = s.net.param_count();
        s.net.set_parameters(&p[at..at + n]).unwrap();
        at += n;
    }
}

pub fn teacher_l2(t: &PknModel) -> f64 {
    t.head.l2_penalty() + t.subnets.iter().map(|s| s.net.l2_penalty()).sum::<f64>()
}

pub fn flatten(head: &Grad, subnets: &[Grad]) -> Vec<f64> {
    let mut v = head.to_vec();
    for g in subnets {
        v.extend(g.to_vec());
    }
    v
}

/// Gradient check of `teacher_loss` through a random teacher.
pub fn teacher_gradient_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let input = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let teacher = random_teacher(&mut rng, input);
    let k = teacher.subnets.len();
    let x = random_matrix(&mut rng, n, input, 1.0);
    let targets = random_prob_rows(&mut rng, n, 2);
    let anchors = random_matrix(&mut rng, n, k, 1.0);
    let lambda = rng.random_range(0.0..3.0);
    let value = |t: &PknModel| {
        let f = t.forward(&x, Mode::Eval).unwrap();
        teacher_loss(f.probs(), &targets, &f.features, &anchors, lambda)
            .unwrap()
            .total
            + teacher_l2(t)
    };
    let fwd = teacher.forward(&x, Mode::Eval).unwrap();
    let l = teacher_loss(fwd.probs(), &targets, &fwd.features, &anchors, lambda).unwrap();
    let g = teacher
        .backward(&fwd, &l.d_probs, &l.d_subnet_outputs, true)
        .unwrap();
    let analytic = flatten(&g.head, &g.subnets);
    let numeric = fd_grad(&teacher_params(&teacher), |p| {
        let mut t = teacher.clone();
        set_teacher_params(&mut t, p);
        value(&t)
    });
    rel_err(&analytic, &numeric)
}

/// Gradient check of both co-distillation losses. Returns the teacher-side
/// error (with the anchor term), the student-side error, and the largest
/// finite-difference sensitivity of `loss_t` to the student's parameters,
/// which the stop-gradient keeps out of every update.
pub fn codistill_gradient_errors(seed: u64) -> (f64, f64, f64) {
    let mut rng = rng(seed);
    let input = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let teacher = random_teacher(&mut rng, input);
    let k = teacher.subnets.len();
    let student = random_mlp(&mut rng, input, 2, Activation::Softmax);
    let x = random_matrix(&mut rng, n, input, 1.0);
    let targets = random_prob_rows(&mut rng, n, 2);
    let anchors = random_matrix(&mut rng, n, k, 1.0);
    let beta = rng.random_range(0.0..2.0);
    let lambda = rng.random_range(0.0..2.0);

    let p_s0 = student.predict(&x).unwrap();
    let p_t0 = teacher.predict_batch(&x).unwrap();
    let loss_t = |t: &PknModel, p_s: &Matrix| {
        let f = t.forward(&x, Mode::Eval).unwrap();
        let c = codistill_losses(f.probs(), p_s, &targets, beta).unwrap();
        let a = teacher_loss(f.probs(), &targets, &f.features, &anchors, lambda).unwrap();
        c.loss_t + lambda * a.anchor + teacher_l2(t)
    };
    let loss_s = |s: &Mlp, p_t: &Matrix| {
        let p = s.predict(&x).unwrap();
        codistill_losses(p_t, &p, &targets, beta).unwrap().loss_s + s.l2_penalty()
    };

    let fwd = teacher.forward(&x, Mode::Eval).unwrap();
    let s_cache = student.forward(&x, Mode::Eval).unwrap();
    let c = codistill_losses(fwd.probs(), s_cache.output(), &targets, beta).unwrap();
    let a = teacher_loss(fwd.probs(), &targets, &fwd.features, &anchors, lambda).unwrap();
    let gt = teacher
        .backward(&fwd, &c.d_p_t, &a.d_subnet_outputs, true)
        .unwrap();
    let gs = student.backward(&s_cache, &c.d_p_s).unwrap();

    let num_t = fd_grad(&teacher_params(&teacher), |p| {
        let mut t = teacher.clone();
        set_teacher_params(&mut t, p);
        loss_t(&t, &p_s0)
    });
    let num_s = fd_grad(&student.parameters(), |p| {
        let mut s = student.clone();
        s.set_parameters(p).unwrap();
        loss_s(&s, &p_t0)
    });
    // the peer's parameters move the teacher's loss value
    let cross = fd_grad(&student.parameters(), |p| {
        let mut s = student.clone();
        s.set_parameters(p).unwrap();
        loss_t(&teacher, &s.predict(&x).unwrap())
    });
    let sensitivity = cross.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (
        rel_err(&flatten(&gt.head, &gt.subnets), &num_t),
        rel_err(&gs.to_vec(), &num_s),
        if beta > 0.0 { sensitivity } else { f64::NAN },
    )
}
