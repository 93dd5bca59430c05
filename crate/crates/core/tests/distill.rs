use pkd_core::datagen::{synthetic_split, DatasetSplit, Regime, SyntheticSpec};
use pkd_core::distill::{
    build_student, codistill, teacher_hash, train_student_solo, write_codistill_history,
    CodistillConfig, PkdnDoc, PkdnModel, Provenance, StudentConfig,
};
use pkd_core::indicators::IndicatorSpec;
use pkd_core::nn::accuracy;
use pkd_core::nn::train::{fit_classifier, LabeledInputs};
use pkd_core::pkn::{
    assemble_teacher, pretrain_subnet, train_teacher_prepared, Constriction, InputPipeline,
    PknModel, PreparedSplit, PretrainConfig, TrainConfig,
};
use pkd_core::rng::tag;

fn data(regime: Regime, noise: f64, n: usize, seed: u64) -> DatasetSplit {
    synthetic_split(
        &SyntheticSpec::new(regime, noise, 0, seed),
        (n, n / 10, n / 10),
        false,
    )
    .unwrap()
}

fn teacher(d: &DatasetSplit, anchor_weight: f64) -> PknModel {
    let subs = [
        IndicatorSpec::SmaCross { fast: 15, slow: 30 },
        IndicatorSpec::Roc { lag: 15 },
    ]
    .into_iter()
    .map(|s| {
        pretrain_subnet(
            s,
            &d.train,
            &InputPipeline::default(),
            Constriction::Slight,
            &PretrainConfig::default(),
        )
        .unwrap()
        .0
    })
    .collect();
    let cfg = TrainConfig {
        anchor_weight,
        ..TrainConfig::default()
    };
    assemble_teacher(subs, InputPipeline::default(), &[2, 8, 2], &d.train, &cfg).unwrap()
}

fn student(t: &PknModel) -> pkd_core::nn::Mlp {
    build_student(50, &StudentConfig::default(), t.param_count(), 0).unwrap()
}

#[test]
fn default_sizes_meet_the_ratio() {
    let d = data(Regime::Stationary, 0.0, 100, 1);
    let t = teacher(&d, 1.0);
    let s = student(&t);
    assert_eq!(t.param_count(), 4396);
    assert_eq!(s.param_count(), 638);
    assert_eq!(s.layer_widths(), vec![50, 12, 2]);
}

#[test]
fn zero_coupling_matches_independent_training() {
    let d = data(Regime::Stationary, 2.0, 600, 2);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let t0 = teacher(&d, 0.0);
    let s0 = student(&t0);
    let cfg = CodistillConfig {
        beta: 0.0,
        anchor_weight: 0.0,
        epochs: 2,
        solo_warmup: false,
        ..CodistillConfig::default()
    };
    let out = codistill(t0.clone(), s0.clone(), &prep, &cfg).unwrap();

    let tcfg = TrainConfig {
        learning_rate: cfg.teacher_lr,
        momentum: cfg.momentum,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        anchor_weight: 0.0,
        patience: cfg.patience,
        max_grad_norm: cfg.max_grad_norm,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (t_alone, _) = train_teacher_prepared(t0, &prep, &tcfg).unwrap();
    let train = LabeledInputs::new(&prep.train_x, &prep.train_y).unwrap();
    let valid = LabeledInputs::new(&prep.valid_x, &prep.valid_y).unwrap();
    let (s_alone, _) =
        fit_classifier(s0, train, valid, &cfg.solo_fit(), tag::STUDENT, "student").unwrap();

    assert_eq!(out.teacher.head, t_alone.head);
    for (a, b) in out.teacher.subnets.iter().zip(&t_alone.subnets) {
        assert_eq!(a.net, b.net);
    }
    assert_eq!(out.student, s_alone);
    for h in &out.history {
        assert!(h.loss_t_peer.is_finite() && h.loss_s_peer.is_finite());
    }
}

#[test]
fn frozen_teacher_does_not_hurt_the_student() {
    let d = data(Regime::Stationary, 1.0, 3000, 3);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let (t, _) = train_teacher_prepared(teacher(&d, 1.0), &prep, &TrainConfig::default()).unwrap();
    let s0 = student(&t);
    let cfg = CodistillConfig {
        teacher_lr: 0.0,
        solo_warmup: false,
        ..CodistillConfig::default()
    };
    let solo = train_student_solo(s0.clone(), &prep, &cfg.solo_fit()).unwrap();
    let out = codistill(t.clone(), s0, &prep, &cfg).unwrap();
    let acc = |net: &pkd_core::nn::Mlp| accuracy(&net.predict(&prep.test_x).unwrap(), &prep.test_y);
    let (a_solo, a_dist) = (acc(&solo), acc(&out.student));
    assert!(
        a_dist >= a_solo - 0.02,
        "distilled {a_dist} vs solo {a_solo}"
    );
    // a zero learning rate leaves the teacher where it started
    assert_eq!(out.teacher.head, t.head);
}

#[test]
fn noise_free_student_learns_and_is_deterministic() {
    let d = data(Regime::Stationary, 0.0, 3000, 4);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let (t, _) = train_teacher_prepared(teacher(&d, 1.0), &prep, &TrainConfig::default()).unwrap();
    let cfg = CodistillConfig::default();
    let run = || {
        let s = train_student_solo(student(&t), &prep, &cfg.solo_fit()).unwrap();
        codistill(t.clone(), s, &prep, &cfg).unwrap()
    };
    let a = run();
    let acc = accuracy(&a.student.predict(&prep.test_x).unwrap(), &prep.test_y);
    assert!(acc >= 0.9, "student test accuracy {acc}");
    let b = run();
    assert_eq!(a.student, b.student);
    assert_eq!(a.teacher, b.teacher);
    assert_eq!(a.history, b.history);
}

#[test]
fn zero_epochs_return_the_inputs() {
    let d = data(Regime::Stationary, 0.0, 200, 5);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let t = teacher(&d, 1.0);
    let s = student(&t);
    let cfg = CodistillConfig {
        epochs: 0,
        ..CodistillConfig::default()
    };
    let out = codistill(t.clone(), s.clone(), &prep, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.teacher, t);
    assert_eq!(out.student, s);
}

#[test]
fn bad_setups_are_rejected() {
    let d = data(Regime::Stationary, 0.0, 200, 6);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let t = teacher(&d, 1.0);
    let narrow = build_student(40, &StudentConfig::default(), t.param_count(), 0).unwrap();
    assert!(codistill(t.clone(), narrow, &prep, &CodistillConfig::default()).is_err());
    let big = StudentConfig {
        hidden: vec![64],
        ..StudentConfig::default()
    };
    assert!(build_student(50, &big, t.param_count(), 0).is_err());
    let cfg = CodistillConfig {
        batch_size: 0,
        ..CodistillConfig::default()
    };
    assert!(codistill(t.clone(), student(&t), &prep, &cfg).is_err());
}

#[test]
fn student_documents_carry_provenance() {
    let d = data(Regime::Stationary, 0.0, 200, 7);
    let prep = PreparedSplit::new(&d, &InputPipeline::default()).unwrap();
    let t = teacher(&d, 1.0);
    let cfg = CodistillConfig {
        epochs: 2,
        ..CodistillConfig::default()
    };
    let out = codistill(t.clone(), student(&t), &prep, &cfg).unwrap();
    let hash = teacher_hash(&t).unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(hash, teacher_hash(&t.clone()).unwrap());
    assert_ne!(hash, teacher_hash(&out.teacher).unwrap());

    let model = PkdnModel {
        pipeline: InputPipeline::default(),
        net: out.student,
        provenance: Provenance {
            teacher_hash: hash.clone(),
            codistill_config: cfg.clone(),
        },
    };
    let text = serde_json::to_string(&model.to_doc()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["provenance"]["teacher_hash"], hash.as_str());
    assert_eq!(v["provenance"]["codistill_config"]["beta"], 1.0);
    assert!(v["layer_widths"].is_array());
    let back = PkdnModel::from_doc(serde_json::from_str::<PkdnDoc>(&text).unwrap()).unwrap();
    assert_eq!(back, model);
    for s in &d.test {
        assert_eq!(
            model.predict(&s.window).unwrap(),
            back.predict(&s.window).unwrap()
        );
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    write_codistill_history(&path, &out.history).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(
        "epoch,loss_t_ce,loss_t_peer,loss_t_anchor,loss_s_ce,loss_s_peer,acc_t_valid,acc_s_valid\n"
    ));
    assert_eq!(text.lines().count(), 1 + out.history.len());
}
