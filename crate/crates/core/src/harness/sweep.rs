use log::{info, warn};

use crate::datagen::{
    load_csv, split, synthetic_split, window_real_series, DatasetSplit, LabeledSample, Regime,
    SyntheticSpec,
};
use crate::distill::{
    build_student, codistill, teacher_hash, train_student_solo, CodistillConfig, CodistillEpoch,
    PkdnModel, Provenance,
};
use crate::error::{Error, Result};
use crate::exec::map_with;
use crate::pkn::{
    assemble_teacher, pretrain_subnet, train_teacher_prepared, InputPipeline, PknModel,
    PreparedSplit, PretrainConfig, TeacherEpoch, TrainConfig,
};
use crate::rng::{derive_seed, tag};

use super::config::{ExperimentConfig, ModelKind};
use super::models::{
    measure_latency, run_dnn_baseline, run_pk_baseline, test_accuracy, MlpClassifier, PkModel,
    Predictor,
};
use super::report::{aggregate, CellResult, ExperimentReport, LatencyRecord};

/// Seed of one (model, grid value, repeat) cell.
pub fn cell_seed(base_seed: u64, model: ModelKind, grid_value: f64, seed_index: usize) -> u64 {
    derive_seed(&[
        base_seed,
        model.seed_tag(),
        grid_value.to_bits(),
        seed_index as u64,
    ])
}

/// Seed of the data shared by every model at one (grid value, repeat).
pub fn data_seed(base_seed: u64, grid_value: f64, seed_index: usize) -> u64 {
    derive_seed(&[
        base_seed,
        tag::DATA,
        grid_value.to_bits(),
        seed_index as u64,
    ])
}

/// Synthetic split for one grid value and repeat.
pub fn synthetic_data(
    cfg: &ExperimentConfig,
    grid_value: f64,
    seed_index: usize,
) -> Result<DatasetSplit> {
    let n = cfg.sizes.total();
    let seed = data_seed(cfg.base_seed, grid_value, seed_index);
    let mut spec = if cfg.regime == Regime::LagPerturbed {
        SyntheticSpec::new(cfg.regime, 0.0, n, seed).with_lag_noise(grid_value as i64)
    } else {
        SyntheticSpec::new(cfg.regime, grid_value, n, seed)
    };
    spec.window_len = cfg.window_len;
    synthetic_split(&spec, cfg.sizes.as_tuple(), cfg.standardize_components)
}

/// Everything trained for one (grid value, repeat).
pub struct CellModels {
    pub data: DatasetSplit,
    pub dnn: Option<Result<MlpClassifier>>,
    pub pk: Option<Result<PkModel>>,
    /// Trained whenever PKN or PKDN is requested, always with the PKN cell seed.
    pub teacher: Option<Result<(PknModel, Vec<TeacherEpoch>)>>,
    pub pkdn: Option<Result<(PkdnModel, Vec<CodistillEpoch>)>>,
}

impl CellModels {
    pub fn predictor(&self, model: ModelKind) -> Option<Result<&dyn Predictor>> {
        fn view<T: Predictor>(r: &Result<T>) -> Result<&dyn Predictor> {
            match r {
                Ok(m) => Ok(m),
                Err(e) => Err(Error::Data(e.to_string())),
            }
        }
        match model {
            ModelKind::Dnn => self.dnn.as_ref().map(view),
            ModelKind::Pk => self.pk.as_ref().map(view),
            ModelKind::Pkn => self.teacher.as_ref().map(|r| match r {
                Ok((m, _)) => Ok(m as &dyn Predictor),
                Err(e) => Err(Error::Data(e.to_string())),
            }),
            ModelKind::Pkdn => self.pkdn.as_ref().map(|r| match r {
                Ok((m, _)) => Ok(m as &dyn Predictor),
                Err(e) => Err(Error::Data(e.to_string())),
            }),
        }
    }
}

/// Pretrains the sub-networks, assembles the teacher and trains it end to end.
pub fn build_teacher(
    cfg: &ExperimentConfig,
    data: &DatasetSplit,
    pipeline: &InputPipeline,
    prepared: &PreparedSplit,
    seed: u64,
) -> Result<(PknModel, Vec<TeacherEpoch>)> {
    let train_cfg = TrainConfig {
        seed,
        ..cfg.pkn.train.clone()
    };
    let pre_cfg = PretrainConfig {
        seed,
        ..cfg.pkn.pretrain.clone()
    };
    let subnets = cfg
        .pkn
        .indicators
        .iter()
        .map(|&spec| {
            pretrain_subnet(
                spec,
                &data.train,
                pipeline,
                train_cfg.constriction,
                &pre_cfg,
            )
            .map(|(s, _)| s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut head = vec![subnets.len()];
    head.extend(&cfg.pkn.head_hidden);
    head.push(2);
    let teacher = assemble_teacher(subnets, pipeline.clone(), &head, &data.train, &train_cfg)?;
    train_teacher_prepared(teacher, prepared, &train_cfg)
}

/// Solo-trains a student, then co-distills it with `teacher`.
pub fn build_pkdn(
    cfg: &ExperimentConfig,
    teacher: &PknModel,
    pipeline: &InputPipeline,
    prepared: &PreparedSplit,
    seed: u64,
) -> Result<(PkdnModel, Vec<CodistillEpoch>)> {
    let cd = CodistillConfig {
        seed,
        ..cfg.codistill.clone()
    };
    let student = build_student(
        prepared.train_x.cols(),
        &cfg.student,
        teacher.param_count(),
        seed,
    )?;
    let student = if cd.solo_warmup {
        train_student_solo(student, prepared, &cd.solo_fit())?
    } else {
        student
    };
    let teacher_hash = teacher_hash(teacher)?;
    let out = codistill(teacher.clone(), student, prepared, &cd)?;
    Ok((
        PkdnModel {
            pipeline: pipeline.clone(),
            net: out.student,
            provenance: Provenance {
                teacher_hash,
                codistill_config: cd,
            },
        },
        out.history,
    ))
}

/// Trains every requested model on one split.
pub fn train_cell(
    cfg: &ExperimentConfig,
    models: &[ModelKind],
    data: DatasetSplit,
    grid_value: f64,
    seed_index: usize,
) -> Result<CellModels> {
    let seed = |m| cell_seed(cfg.base_seed, m, grid_value, seed_index);
    let pipeline = InputPipeline::fit(&data.train, cfg.pkn.standardize_inputs)?;
    let prepared = PreparedSplit::new(&data, &pipeline)?;
    let wants = |m| models.contains(&m);
    let dnn = wants(ModelKind::Dnn)
        .then(|| run_dnn_baseline(&prepared, &pipeline, &cfg.dnn, seed(ModelKind::Dnn)));
    let pk = wants(ModelKind::Pk).then(|| run_pk_baseline(&data, &cfg.pk, seed(ModelKind::Pk)));
    let teacher = (wants(ModelKind::Pkn) || wants(ModelKind::Pkdn))
        .then(|| build_teacher(cfg, &data, &pipeline, &prepared, seed(ModelKind::Pkn)));
    let pkdn = wants(ModelKind::Pkdn).then(|| match &teacher {
        Some(Ok((t, _))) => build_pkdn(cfg, t, &pipeline, &prepared, seed(ModelKind::Pkdn)),
        Some(Err(e)) => Err(Error::Training {
            network: "teacher".into(),
            epoch: 0,
            reason: format!("teacher unavailable: {e}"),
        }),
        None => unreachable!("teacher is trained whenever PKDN is requested"),
    });
    Ok(CellModels {
        data,
        dnn,
        pk,
        teacher,
        pkdn,
    })
}

fn evaluate_cells(
    cfg: &ExperimentConfig,
    models: &[ModelKind],
    cell: &CellModels,
    grid_value: f64,
    seed_index: usize,
) -> Vec<CellResult> {
    models
        .iter()
        .map(|&model| {
            let outcome = cell
                .predictor(model)
                .expect("every requested model was trained")
                .and_then(|p| Ok((test_accuracy(p, &cell.data.test)?, p.param_count())));
            let (test_acc, param_count, error) = match outcome {
                Ok((acc, pc)) => (Some(acc), Some(pc), None),
                Err(e) => {
                    warn!("{model} at {grid_value} repeat {seed_index}: {e}");
                    (None, None, Some(e.to_string()))
                }
            };
            CellResult {
                model,
                noise_level: grid_value,
                seed_index,
                seed: cell_seed(cfg.base_seed, model, grid_value, seed_index),
                test_acc,
                param_count,
                error,
            }
        })
        .collect()
}

fn failed_cells(
    cfg: &ExperimentConfig,
    models: &[ModelKind],
    grid_value: f64,
    seed_index: usize,
    e: &Error,
) -> Vec<CellResult> {
    warn!("data for {grid_value} repeat {seed_index}: {e}");
    models
        .iter()
        .map(|&model| CellResult {
            model,
            noise_level: grid_value,
            seed_index,
            seed: cell_seed(cfg.base_seed, model, grid_value, seed_index),
            test_acc: None,
            param_count: None,
            error: Some(e.to_string()),
        })
        .collect()
}

/// Consecutive non-overlapping blocks of windows from a price file, one per repeat.
fn real_blocks(cfg: &ExperimentConfig) -> Result<Vec<LabeledSample>> {
    let real = cfg.real_data.as_ref().expect("checked by caller");
    let (prices, stamps) = load_csv(&real.path)?;
    let samples = window_real_series(&prices, &stamps, cfg.window_len, real.horizon)?;
    let need = cfg.sizes.total() * cfg.n_repeats;
    if samples.len() < need {
        return Err(Error::Data(format!(
            "{} windows cannot fill {} repeats of {}",
            samples.len(),
            cfg.n_repeats,
            cfg.sizes.total()
        )));
    }
    Ok(samples)
}

/// Runs every (grid value, repeat) job, records per-cell outcomes and
/// aggregates. Cell failures are recorded and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let models = cfg.model_set();
    let grid = cfg.grid();
    let real = match cfg.real_data {
        Some(_) => Some(real_blocks(cfg)?),
        None => None,
    };
    let jobs: Vec<(usize, f64, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(gi, &v)| (0..cfg.n_repeats).map(move |i| (gi, v, i)))
        .collect();
    let total = cfg.sizes.total();
    let outputs = map_with(cfg.exec, &jobs, |&(gi, v, i)| {
        let data = match &real {
            Some(samples) => split(
                samples[i * total..(i + 1) * total].to_vec(),
                cfg.sizes.as_tuple(),
            ),
            None => synthetic_data(cfg, v, i),
        };
        let trained = data.and_then(|d| train_cell(cfg, &models, d, v, i));
        let out = match &trained {
            Ok(cell) => evaluate_cells(cfg, &models, cell, v, i),
            Err(e) => failed_cells(cfg, &models, v, i, e),
        };
        info!("finished grid value {v} repeat {i}");
        // the first job's models are kept for timing
        (
            out,
            if gi == 0 && i == 0 {
                trained.ok()
            } else {
                None
            },
        )
    });
    let mut cells = Vec::with_capacity(jobs.len() * models.len());
    let mut timed = None;
    for (c, m) in outputs {
        cells.extend(c);
        if m.is_some() {
            timed = m;
        }
    }
    let mut latency = Vec::new();
    let mut param_ratio = None;
    if let Some(cell) = &timed {
        if cfg.latency.enabled {
            let window = &cell.data.test[0].window;
            for &model in &models {
                if let Some(Ok(p)) = cell.predictor(model) {
                    let stats = measure_latency(p, window, cfg.latency.n, cfg.latency.warmup)?;
                    latency.push(LatencyRecord {
                        model,
                        param_count: p.param_count(),
                        stats,
                    });
                }
            }
        }
        if let (Some(Ok((t, _))), Some(Ok((s, _)))) = (&cell.teacher, &cell.pkdn) {
            param_ratio = Some(s.net.param_count() as f64 / t.param_count() as f64);
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        regime: cfg.source_name(),
        aggregates: aggregate(&cells),
        cells,
        latency,
        param_ratio,
    })
}
