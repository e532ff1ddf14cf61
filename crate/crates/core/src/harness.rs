//! The class-incremental training and evaluation harness.
//!
//! One task at a time: new classes get fresh coding vectors, old ones are
//! frozen, the previous extractor is snapshotted for distillation, and
//! every mini-batch runs forward → prototype replay → topology update →
//! loss → descent step. After each task the harness stores class means,
//! evaluates on everything seen so far, and appends an accuracy-matrix
//! row. Six ablation variants share this loop, differing only in which
//! loss terms and augmenters are active.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, RunConfig};
use crate::data::{generate_synthetic_stream, Dataset, LabeledVector, TaskSchedule};
use crate::error::{Error, Result};
use crate::ioutil;
use crate::metrics::{confusion_matrix, AccuracyMatrix};
use crate::model::{
    loss_kd, rotate_augment, total_loss, Activation, FeatureModel, GridSample, Layer,
    LossWeights, ModelGrads,
};
use crate::proto::{
    build_prototype_batch, compute_class_means, loss_hat_dce, loss_hat_na, AugmentedBatch,
    AugmentedPrototype, PrototypeStore,
};
use crate::rng::derive_rng;
use crate::table::FeatureTable;
use crate::vecmath::{distance, normalized};
use crate::vq::{
    freeze_old_cvs, insert_class_cvs, loss_dce, loss_na, update_topology, CodingVectorSet,
    TopologyGraph,
};

/// The six experiment variants: the full method, its ablations, and the
/// two baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FullNapaVq,
    NavqKd,
    DceKd,
    BaselineCceKd,
    NavqGaussianPa,
    Finetune,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FullNapaVq,
        Variant::NavqKd,
        Variant::DceKd,
        Variant::BaselineCceKd,
        Variant::NavqGaussianPa,
        Variant::Finetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FullNapaVq => "full_napavq",
            Variant::NavqKd => "navq_kd",
            Variant::DceKd => "dce_kd",
            Variant::BaselineCceKd => "baseline_cce_kd",
            Variant::NavqGaussianPa => "navq_gaussian_pa",
            Variant::Finetune => "finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "variant",
                    format!(
                        "unknown variant {s:?} (expected one of {})",
                        Variant::ALL.map(|v| v.name()).join(", ")
                    ),
                )
            })
    }

    /// Nearest-CV classification and the distance-based losses (all
    /// variants except the softmax-head baseline).
    fn uses_quantizer(self) -> bool {
        !matches!(self, Variant::BaselineCceKd)
    }

    fn uses_na(self) -> bool {
        matches!(
            self,
            Variant::FullNapaVq | Variant::NavqKd | Variant::NavqGaussianPa
        )
    }

    fn uses_protos(self) -> bool {
        matches!(self, Variant::FullNapaVq | Variant::NavqGaussianPa)
    }

    fn gaussian_protos(self) -> bool {
        matches!(self, Variant::NavqGaussianPa)
    }

    fn uses_kd(self) -> bool {
        !matches!(self, Variant::Finetune)
    }
}

/// Per-batch loss term switches handed to [`batch_objective`].
#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub tau: f64,
    pub beta: f64,
    pub weights: LossWeights,
    pub task: usize,
    pub use_na: bool,
    pub use_protos: bool,
    pub use_kd: bool,
}

/// The assembled objective for one mini-batch: the scalar total, the term
/// breakdown, and gradients for the extractor and the coding vectors.
/// All reductions are means, so gradient scale does not depend on batch
/// size.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub total: f64,
    pub dce: f64,
    pub na: f64,
    pub hat_dce: f64,
    pub hat_na: f64,
    pub kd: f64,
    pub model_grads: ModelGrads,
    pub cv_grads: BTreeMap<usize, Vec<f64>>,
}

fn accumulate_cv_grads(
    acc: &mut BTreeMap<usize, Vec<f64>>,
    grads: &BTreeMap<usize, Vec<f64>>,
    scale: f64,
) {
    for (&id, g) in grads {
        let entry = acc
            .entry(id)
            .or_insert_with(|| vec![0.0; g.len()]);
        for (slot, v) in entry.iter_mut().zip(g) {
            *slot += scale * v;
        }
    }
}

/// Evaluates the task-`t` objective on one mini-batch of real samples
/// plus an augmented-prototype batch, with exact gradients for every
/// parameter. On the first task the prototype and distillation terms are
/// forbidden; on later tasks they are required (inactive variants pass
/// zero by construction: an empty prototype batch and `use_kd = false`).
pub fn batch_objective(
    model: &FeatureModel,
    model_prev: Option<&FeatureModel>,
    cvs: &CodingVectorSet,
    graph: &TopologyGraph,
    batch: &[LabeledVector],
    protos: &AugmentedBatch,
    s: &LossSettings,
) -> Result<BatchObjective> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch".to_string()));
    }
    if s.task == 0 && (!protos.is_empty() || model_prev.is_some()) {
        return Err(Error::contract(
            "prototype replay and distillation are undefined on the first task".to_string(),
        ));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut model_grads = ModelGrads::zeros_like(model);
    let mut cv_grads = BTreeMap::new();
    let mut dce_sum = 0.0;
    let mut na_sum = 0.0;

    for sample in batch {
        let (z, cache) = model.forward_cached(&sample.x)?;
        let dce = loss_dce(&z, sample.y, cvs, s.tau)?;
        dce_sum += dce.loss;
        accumulate_cv_grads(&mut cv_grads, &dce.grad_cvs, inv_b);
        let mut upstream: Vec<f64> = dce.grad_z;
        if s.use_na {
            let na = loss_na(&z, sample.y, cvs, graph, s.beta)?;
            na_sum += na.loss;
            accumulate_cv_grads(&mut cv_grads, &na.grad_cvs, inv_b);
            for (u, g) in upstream.iter_mut().zip(&na.grad_z) {
                *u += g;
            }
        }
        for u in &mut upstream {
            *u *= inv_b;
        }
        let (g, _) = model.backward(&upstream, &cache)?;
        model_grads.add_scaled(&g, 1.0);
    }
    let dce_mean = dce_sum * inv_b;
    let na_mean = na_sum * inv_b;

    if s.task == 0 {
        let total = total_loss(dce_mean, na_mean, None, None, &s.weights, 0)?;
        return Ok(BatchObjective {
            total,
            dce: dce_mean,
            na: na_mean,
            hat_dce: 0.0,
            hat_na: 0.0,
            kd: 0.0,
            model_grads,
            cv_grads,
        });
    }

    let (hat_dce_mean, hat_na_mean) = if s.use_protos && !protos.is_empty() {
        let inv_p = 1.0 / protos.len() as f64;
        let hd = loss_hat_dce(protos, cvs, s.tau)?;
        accumulate_cv_grads(&mut cv_grads, &hd.grad_cvs, s.weights.lambda1 * inv_p);
        let hn = if s.use_na {
            let hn = loss_hat_na(protos, cvs, graph, s.beta)?;
            accumulate_cv_grads(&mut cv_grads, &hn.grad_cvs, inv_p);
            hn.loss * inv_p
        } else {
            0.0
        };
        (hd.loss * inv_p, hn)
    } else {
        (0.0, 0.0)
    };

    let kd_mean = if s.use_kd {
        let prev = model_prev.ok_or_else(|| {
            Error::contract("distillation requires the previous-task model".to_string())
        })?;
        let xs: Vec<Vec<f64>> = batch.iter().map(|b| b.x.clone()).collect();
        let (kd, kd_grads) = loss_kd(&xs, prev, model)?;
        model_grads.add_scaled(&kd_grads, s.weights.lambda2);
        kd
    } else {
        0.0
    };

    let total = total_loss(
        dce_mean,
        na_mean,
        Some((hat_dce_mean, hat_na_mean)),
        Some(kd_mean),
        &s.weights,
        s.task,
    )?;
    Ok(BatchObjective {
        total,
        dce: dce_mean,
        na: na_mean,
        hat_dce: hat_dce_mean,
        hat_na: hat_na_mean,
        kd: kd_mean,
        model_grads,
        cv_grads,
    })
}

/// One plain gradient-descent step on the extractor and the coding
/// vectors, with separate learning rates, an optional global norm clip
/// (`grad_clip = 0` disables), and frozen CVs masked. Any non-finite
/// gradient aborts the step before touching either parameter set.
pub fn sgd_step(
    model: &mut FeatureModel,
    cvs: &mut CodingVectorSet,
    model_grads: &ModelGrads,
    cv_grads: &BTreeMap<usize, Vec<f64>>,
    lr_theta: f64,
    lr_cvs: f64,
    grad_clip: f64,
) -> Result<()> {
    let cvs_finite = cv_grads
        .values()
        .all(|g| g.iter().all(|v| v.is_finite()));
    if !model_grads.is_finite() || !cvs_finite {
        return Err(Error::Numeric(
            "non-finite gradient; descent step aborted".to_string(),
        ));
    }
    let mut scale = 1.0;
    if grad_clip > 0.0 {
        let cv_sq: f64 = cv_grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        let norm = (model_grads.norm().powi(2) + cv_sq).sqrt();
        if norm > grad_clip {
            scale = grad_clip / norm;
        }
    }
    if scale == 1.0 {
        model.apply_gradients(model_grads, lr_theta)?;
        cvs.apply_gradients(cv_grads, lr_cvs)?;
    } else {
        let mut mg = model_grads.clone();
        mg.scale(scale);
        let cg: BTreeMap<usize, Vec<f64>> = cv_grads
            .iter()
            .map(|(&id, g)| (id, g.iter().map(|v| v * scale).collect()))
            .collect();
        model.apply_gradients(&mg, lr_theta)?;
        cvs.apply_gradients(&cg, lr_cvs)?;
    }
    Ok(())
}

/// Nearest-CV classification over the given original class ids:
/// `argmin_i d(z/‖z‖, m_i/‖m_i‖)`, ties to the lower id. With rotation
/// augmentation active, each original class `y` is represented by the
/// unrotated pseudo-class CV `4y`.
pub fn classify(
    x: &[f64],
    model: &FeatureModel,
    cvs: &CodingVectorSet,
    original_class_ids: &[usize],
    rotation: bool,
) -> Result<usize> {
    if original_class_ids.is_empty() {
        return Err(Error::contract("empty candidate class set".to_string()));
    }
    let z = model.forward(x)?;
    let zn = normalized(&z);
    let mut best: Option<(usize, f64)> = None;
    for &y in original_class_ids {
        let cv_id = if rotation { y * 4 } else { y };
        let mn = normalized(cvs.vector(cv_id)?);
        let d = distance(&zn, &mn);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((y, d)),
        }
    }
    Ok(best.expect("non-empty candidates").0)
}

/// Softmax-head classification for the baseline variant: the argmax
/// logit over the candidate classes, ties to the lower id.
fn classify_head(
    x: &[f64],
    model: &FeatureModel,
    head: &FeatureModel,
    original_class_ids: &[usize],
    rotation: bool,
) -> Result<usize> {
    if original_class_ids.is_empty() {
        return Err(Error::contract("empty candidate class set".to_string()));
    }
    let logits = head.forward(&model.forward(x)?)?;
    let mut best: Option<(usize, f64)> = None;
    for &y in original_class_ids {
        let idx = if rotation { y * 4 } else { y };
        let v = logits[idx];
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((y, v)),
        }
    }
    Ok(best.expect("non-empty candidates").0)
}

/// One prediction made during the final evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredRecord {
    pub task: usize,
    pub true_label: usize,
    pub predicted: usize,
}

/// Everything a finished run reports. Deliberately free of wall-clock
/// data so that deterministic runs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub config: RunConfig,
    pub accuracy: AccuracyMatrix,
    pub average_accuracy: f64,
    pub average_forgetting: f64,
    pub per_step_forgetting: Vec<f64>,
    /// Per evaluation step: a confusion matrix over all original
    /// classes (rows of unseen classes are zero).
    pub confusions: Vec<Vec<Vec<usize>>>,
    pub final_predictions: Vec<PredRecord>,
}

/// The trained artifacts of a run, serializable as a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedState {
    pub format: String,
    pub variant: String,
    pub rotation: bool,
    pub model: FeatureModel,
    pub head: Option<FeatureModel>,
    pub cvs: CodingVectorSet,
    pub graph: TopologyGraph,
    pub store: PrototypeStore,
}

pub const CHECKPOINT_FORMAT: &str = "napavq-checkpoint-v1";

/// A run's result, final state, and deterministic event log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub result: RunResult,
    pub state: TrainedState,
    pub events: Vec<String>,
}

/// Materializes the configured dataset and schedule.
pub fn build_dataset(config: &RunConfig) -> Result<(Dataset, TaskSchedule)> {
    config.validate()?;
    match &config.dataset {
        DatasetSpec::Synthetic(spec) => {
            generate_synthetic_stream(spec, config.tasks, config.first_task_classes, config.seed)
        }
        DatasetSpec::Table(t) => {
            let table = FeatureTable::load(Path::new(&t.path))?;
            let dataset = table.into_dataset(t.test_fraction, config.seed)?;
            let schedule = TaskSchedule::split_classes(
                dataset.num_classes,
                config.tasks,
                config.first_task_classes,
            )?;
            Ok((dataset, schedule))
        }
    }
}

/// Runs the full method (the default variant) on the configured stream.
pub fn run_incremental(config: &RunConfig) -> Result<RunOutcome> {
    run_ablation(config, Variant::FullNapaVq)
}

fn unflatten(x: &[f64], side: usize) -> Vec<Vec<f64>> {
    (0..side).map(|i| x[i * side..(i + 1) * side].to_vec()).collect()
}

/// Expands a task's training samples into rotation pseudo-classes when
/// rotation is active; otherwise passes them through.
fn task_train_samples(
    dataset: &Dataset,
    classes: &[usize],
    rotation: bool,
) -> Result<Vec<LabeledVector>> {
    let raw: Vec<LabeledVector> = dataset.train_of(classes).into_iter().cloned().collect();
    if !rotation {
        return Ok(raw);
    }
    let side = dataset.grid_side.ok_or_else(|| {
        Error::config(
            "rotation",
            "rotation augmentation requires square-grid data".to_string(),
        )
    })?;
    let grids: Vec<GridSample> = raw
        .iter()
        .map(|s| GridSample {
            pixels: unflatten(&s.x, side),
            label: s.y,
        })
        .collect();
    let rotated = rotate_augment(&grids, dataset.num_classes)?;
    Ok(rotated
        .into_iter()
        .map(|g| LabeledVector {
            x: g.flatten(),
            y: g.label,
        })
        .collect())
}

fn with_task_context(e: Error, t: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("task {t}: {m}")),
        other => other,
    }
}

/// Gaussian prototype augmentation (the variant replacing the
/// neighborhood-aware sampler): `a_i = μ_i + σ·noise`.
fn gaussian_prototype_batch(
    old_class_ids: &[usize],
    store: &PrototypeStore,
    rng: &mut impl Rng,
    per_class: usize,
    sigma: f64,
) -> Result<AugmentedBatch> {
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut prototypes = Vec::with_capacity(old_class_ids.len() * per_class);
    for &i in old_class_ids {
        let mu = store.mean(i).ok_or(Error::MissingClass(i))?;
        for _ in 0..per_class {
            let vector: Vec<f64> = mu.iter().map(|m| m + sigma * normal.sample(rng)).collect();
            prototypes.push(AugmentedPrototype {
                vector,
                class_id: i,
                alpha: 1.0,
                neighbor: None,
            });
        }
    }
    Ok(AugmentedBatch { prototypes })
}

/// Grows the baseline classification head to `new_classes` outputs,
/// keeping the trained rows and initializing the new ones.
fn grow_head(
    head: Option<&FeatureModel>,
    feature_dim: usize,
    new_classes: usize,
    init_scale: f64,
    rng: &mut impl Rng,
) -> Result<FeatureModel> {
    let normal =
        Normal::new(0.0, init_scale).map_err(|e| Error::Numeric(e.to_string()))?;
    let mut weights = vec![0.0; new_classes * feature_dim];
    let mut bias = vec![0.0; new_classes];
    let mut copied = 0;
    if let Some(prev) = head {
        let (w, b) = prev.head_parameters();
        copied = b.len();
        weights[..w.len()].copy_from_slice(w);
        bias[..b.len()].copy_from_slice(b);
    }
    for row in copied..new_classes {
        for slot in &mut weights[row * feature_dim..(row + 1) * feature_dim] {
            *slot = normal.sample(rng);
        }
    }
    FeatureModel::from_layers(
        feature_dim,
        vec![Layer::new(
            feature_dim,
            new_classes,
            weights,
            bias,
            Activation::Linear,
        )?],
    )
}

/// Categorical cross-entropy over head logits with gradients for the
/// head and the extractor, mean-reduced over the batch.
fn baseline_batch_objective(
    model: &FeatureModel,
    head: &FeatureModel,
    model_prev: Option<&FeatureModel>,
    batch: &[LabeledVector],
    weights: &LossWeights,
    task: usize,
) -> Result<(f64, f64, f64, ModelGrads, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::contract("empty training batch".to_string()));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut model_grads = ModelGrads::zeros_like(model);
    let mut head_grads = ModelGrads::zeros_like(head);
    let mut cce_sum = 0.0;
    for sample in batch {
        let (z, cache) = model.forward_cached(&sample.x)?;
        let (logits, head_cache) = head.forward_cached(&z)?;
        if sample.y >= logits.len() {
            return Err(Error::contract(format!(
                "label {} outside the {}-way head",
                sample.y,
                logits.len()
            )));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        cce_sum += log_sum - logits[sample.y];
        let upstream: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| ((l - log_sum).exp() - ((i == sample.y) as u8 as f64)) * inv_b)
            .collect();
        let (hg, grad_z) = head.backward(&upstream, &head_cache)?;
        head_grads.add_scaled(&hg, 1.0);
        let (mg, _) = model.backward(&grad_z, &cache)?;
        model_grads.add_scaled(&mg, 1.0);
    }
    let cce_mean = cce_sum * inv_b;

    let kd_mean = if task > 0 {
        let prev = model_prev.ok_or_else(|| {
            Error::contract("distillation requires the previous-task model".to_string())
        })?;
        let xs: Vec<Vec<f64>> = batch.iter().map(|b| b.x.clone()).collect();
        let (kd, kd_grads) = loss_kd(&xs, prev, model)?;
        model_grads.add_scaled(&kd_grads, weights.lambda2);
        kd
    } else {
        0.0
    };
    let total = if task == 0 {
        total_loss(cce_mean, 0.0, None, None, weights, 0)?
    } else {
        total_loss(cce_mean, 0.0, Some((0.0, 0.0)), Some(kd_mean), weights, task)?
    };
    Ok((total, cce_mean, kd_mean, model_grads, head_grads))
}

/// Runs one experiment variant end to end.
pub fn run_ablation(config: &RunConfig, variant: Variant) -> Result<RunOutcome> {
    let (dataset, schedule) = build_dataset(config)?;
    run_on(config, variant, &dataset, &schedule)
}

fn run_on(
    config: &RunConfig,
    variant: Variant,
    dataset: &Dataset,
    schedule: &TaskSchedule,
) -> Result<RunOutcome> {
    let seed = config.seed;
    let rotation = config.rotation;
    let label_factor = if rotation { 4 } else { 1 };
    let weights = config.loss_weights();

    let mut model = FeatureModel::new_mlp(
        dataset.input_dim,
        &config.hidden,
        config.feature_dim,
        &mut derive_rng(seed, "model-init"),
    )?;
    let mut cvs = CodingVectorSet::new(config.feature_dim);
    let mut graph = TopologyGraph::new(0, config.topology_params())?;
    let mut store = PrototypeStore::new(config.feature_dim);
    let mut head: Option<FeatureModel> = None;
    let mut model_prev: Option<FeatureModel> = None;

    let mut cv_rng = derive_rng(seed, "cv-init");
    let mut shuffle_rng = derive_rng(seed, "shuffle");
    let mut proto_rng = derive_rng(seed, "proto");

    let mut matrix = AccuracyMatrix::new();
    let mut confusions = Vec::new();
    let mut final_predictions = Vec::new();
    let mut events = vec![format!(
        "run variant={} seed={seed} tasks={}",
        variant.name(),
        schedule.num_tasks()
    )];

    for t in 0..schedule.num_tasks() {
        let classes = schedule.classes(t);
        let samples = task_train_samples(dataset, classes, rotation)?;
        let new_ids: Vec<usize> = classes
            .iter()
            .flat_map(|&y| (0..label_factor).map(move |k| y * label_factor + k))
            .collect();
        let old_ids: Vec<usize> = (0..cvs.len()).collect();

        if t > 0 {
            model_prev = Some(model.clone());
            if variant.uses_quantizer() {
                freeze_old_cvs(&mut cvs, &old_ids)?;
            }
        }

        if variant.uses_quantizer() {
            insert_class_cvs(&mut cvs, &mut graph, &new_ids, config.cv_init_scale, &mut cv_rng)?;
            if cvs.len() >= 2 {
                let eff_k = config.k.min(cvs.len()).max(2);
                if eff_k != config.k {
                    events.push(format!(
                        "task {t} note connectivity clamped from {} to {eff_k}",
                        config.k
                    ));
                }
                graph.set_connectivity(eff_k)?;
            }
        } else {
            head = Some(grow_head(
                head.as_ref(),
                config.feature_dim,
                label_factor * schedule.cumulative(t),
                config.cv_init_scale,
                &mut cv_rng,
            )?);
        }
        events.push(format!(
            "task {t} start classes={classes:?} trained_ids={}..{}",
            new_ids.first().copied().unwrap_or(0),
            new_ids.last().copied().unwrap_or(0) + 1
        ));

        let settings = LossSettings {
            tau: config.tau,
            beta: config.beta,
            weights,
            task: t,
            use_na: variant.uses_na(),
            use_protos: variant.uses_protos(),
            use_kd: variant.uses_kd(),
        };
        let topology_on = variant.uses_quantizer() && cvs.len() >= 2;

        for epoch in 0..config.epochs_per_task {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<LabeledVector> =
                    chunk.iter().map(|&i| samples[i].clone()).collect();

                let total = if variant.uses_quantizer() {
                    let protos = if t > 0 && variant.uses_protos() {
                        if variant.gaussian_protos() {
                            gaussian_prototype_batch(
                                &old_ids,
                                &store,
                                &mut proto_rng,
                                config.protos_per_class,
                                config.gaussian_pa_sigma,
                            )?
                        } else {
                            build_prototype_batch(
                                &old_ids,
                                &store,
                                &graph,
                                &mut proto_rng,
                                config.protos_per_class,
                                config.clip_alpha,
                            )?
                        }
                    } else {
                        AugmentedBatch::default()
                    };
                    if topology_on {
                        for s in &batch {
                            let z = model.forward(&s.x)?;
                            update_topology(&z, Some(s.y), &cvs, &mut graph)
                                .map_err(|e| with_task_context(e, t))?;
                        }
                        for p in &protos.prototypes {
                            update_topology(&p.vector, Some(p.class_id), &cvs, &mut graph)
                                .map_err(|e| with_task_context(e, t))?;
                        }
                    }
                    let obj = batch_objective(
                        &model,
                        model_prev.as_ref(),
                        &cvs,
                        &graph,
                        &batch,
                        &protos,
                        &settings,
                    )
                    .map_err(|e| with_task_context(e, t))?;
                    sgd_step(
                        &mut model,
                        &mut cvs,
                        &obj.model_grads,
                        &obj.cv_grads,
                        config.lr_theta,
                        config.lr_cvs,
                        config.grad_clip,
                    )
                    .map_err(|e| with_task_context(e, t))?;
                    obj.total
                } else {
                    let h = head.as_mut().expect("baseline head exists");
                    let (total, _, _, mut model_grads, mut head_grads) =
                        baseline_batch_objective(
                            &model,
                            h,
                            model_prev.as_ref(),
                            &batch,
                            &weights,
                            t,
                        )
                        .map_err(|e| with_task_context(e, t))?;
                    if !model_grads.is_finite() || !head_grads.is_finite() {
                        return Err(Error::Numeric(format!(
                            "task {t}: non-finite gradient; descent step aborted"
                        )));
                    }
                    if config.grad_clip > 0.0 {
                        let norm = (model_grads.norm().powi(2)
                            + head_grads.norm().powi(2))
                        .sqrt();
                        if norm > config.grad_clip {
                            let s = config.grad_clip / norm;
                            model_grads.scale(s);
                            head_grads.scale(s);
                        }
                    }
                    model.apply_gradients(&model_grads, config.lr_theta)?;
                    h.apply_gradients(&head_grads, config.lr_cvs)?;
                    total
                };
                epoch_loss += total;
                batches += 1;
            }
            events.push(format!(
                "task {t} epoch {epoch} mean_total_loss {:.6}",
                epoch_loss / batches.max(1) as f64
            ));
        }

        if variant.uses_quantizer() {
            let mut feats = Vec::with_capacity(samples.len());
            for s in &samples {
                feats.push((model.forward(&s.x)?, s.y));
            }
            let means = compute_class_means(&feats, &new_ids)?;
            store.insert_task_means(means, t)?;
        }

        // Evaluate on every seen task, restricted to original classes.
        let seen = schedule.seen_classes(t);
        let mut row = Vec::with_capacity(t + 1);
        let mut pooled_preds = Vec::new();
        let mut pooled_labels = Vec::new();
        let final_task = t + 1 == schedule.num_tasks();
        for j in 0..=t {
            let test = dataset.test_of(schedule.classes(j));
            if test.is_empty() {
                return Err(Error::contract(format!("task {j} has no test samples")));
            }
            let mut correct = 0usize;
            for s in &test {
                let pred = if variant.uses_quantizer() {
                    classify(&s.x, &model, &cvs, &seen, rotation)?
                } else {
                    classify_head(
                        &s.x,
                        &model,
                        head.as_ref().expect("baseline head exists"),
                        &seen,
                        rotation,
                    )?
                };
                if pred == s.y {
                    correct += 1;
                }
                pooled_preds.push(pred);
                pooled_labels.push(s.y);
                if final_task {
                    final_predictions.push(PredRecord {
                        task: j,
                        true_label: s.y,
                        predicted: pred,
                    });
                }
            }
            row.push(correct as f64 / test.len() as f64);
        }
        let new_test_count = dataset.test_of(classes).len();
        events.push(format!("task {t} eval row {row:?}"));
        matrix.push_row(row, new_test_count)?;
        confusions.push(confusion_matrix(
            &pooled_preds,
            &pooled_labels,
            dataset.num_classes,
        )?);
    }

    if schedule.num_tasks() < 2 {
        events.push("warning: single-task run; forgetting reported as 0".to_string());
    }
    let average_accuracy = matrix.average_accuracy()?;
    let average_forgetting = matrix.average_forgetting()?;
    let per_step_forgetting: Vec<f64> = (0..matrix.num_tasks())
        .map(|t| matrix.forgetting_at(t))
        .collect();
    events.push(format!(
        "done avg_accuracy {average_accuracy:.6} avg_forgetting {average_forgetting:.6}"
    ));

    Ok(RunOutcome {
        result: RunResult {
            variant: variant.name().to_string(),
            seed,
            config: config.clone(),
            accuracy: matrix,
            average_accuracy,
            average_forgetting,
            per_step_forgetting,
            confusions,
            final_predictions,
        },
        state: TrainedState {
            format: CHECKPOINT_FORMAT.to_string(),
            variant: variant.name().to_string(),
            rotation,
            model,
            head,
            cvs,
            graph,
            store,
        },
        events,
    })
}

/// One row of a connectivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub status: String,
    pub note: String,
    pub average_accuracy: f64,
    pub average_forgetting: f64,
    pub wall_time_s: f64,
}

/// Runs the full method once per requested connectivity value under a
/// shared seed, timing each run. Unusable values (below 2) produce a
/// warning row instead of failing the sweep; values above the first
/// task's class count run with boundary clamping and say so.
pub fn k_sweep(config: &RunConfig, k_values: &[usize]) -> Result<Vec<KSweepRow>> {
    config.validate()?;
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        if k < 2 {
            rows.push(KSweepRow {
                k,
                status: "skipped".to_string(),
                note: "connectivity must be at least 2".to_string(),
                average_accuracy: 0.0,
                average_forgetting: 0.0,
                wall_time_s: 0.0,
            });
            continue;
        }
        let mut c = config.clone();
        c.k = k;
        let start = Instant::now();
        let outcome = run_ablation(&c, Variant::FullNapaVq)?;
        let wall_time_s = start.elapsed().as_secs_f64();
        let clamped = outcome
            .events
            .iter()
            .any(|e| e.contains("connectivity clamped"));
        rows.push(KSweepRow {
            k,
            status: "ok".to_string(),
            note: if clamped {
                "clamped to the class count on early tasks".to_string()
            } else {
                String::new()
            },
            average_accuracy: outcome.result.average_accuracy,
            average_forgetting: outcome.result.average_forgetting,
            wall_time_s,
        });
    }
    Ok(rows)
}

/// Renders sweep rows as a comma-separated table.
pub fn k_sweep_csv(rows: &[KSweepRow]) -> String {
    let mut out = String::from("k,status,avg_accuracy,avg_forgetting,wall_time_s,note\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k, r.status, r.average_accuracy, r.average_forgetting, r.wall_time_s, r.note
        ));
    }
    out
}

/// Writes one row per sample: the feature vector under the trained
/// extractor, the true label, the predicted label, and the task that
/// introduced the label.
pub fn export_embeddings(
    state: &TrainedState,
    samples: &[LabeledVector],
    schedule: &TaskSchedule,
    path: &Path,
) -> Result<()> {
    let seen = schedule.seen_classes(schedule.num_tasks() - 1);
    let task_of_label = |y: usize| -> Result<usize> {
        (0..schedule.num_tasks())
            .find(|&t| schedule.classes(t).contains(&y))
            .ok_or_else(|| Error::contract(format!("label {y} not in the schedule")))
    };
    let n = state.model.output_dim();
    let mut out = String::new();
    for i in 0..n {
        out.push_str(&format!("z{i},"));
    }
    out.push_str("label,predicted,task\n");
    for s in samples {
        let z = state.model.forward(&s.x)?;
        let pred = match &state.head {
            Some(head) => classify_head(&s.x, &state.model, head, &seen, state.rotation)?,
            None => classify(&s.x, &state.model, &state.cvs, &seen, state.rotation)?,
        };
        for v in &z {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{},{}\n", s.y, pred, task_of_label(s.y)?));
    }
    ioutil::write_string(path, &out)
}
