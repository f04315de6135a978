//! Full-batch transductive training: alternating weight / fusion-logit
//! optimization with early stopping, plus grid search, ablations and an
//! MLP control.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DataSplit, Graph, GraphError, Labels};
use crate::linalg::DenseMatrix;
use crate::model::{
    importance_scores, Branch, FusionMode, GradTarget, IngnnConfig, IngnnModel, MlpModel, ModelError, ModelInput,
    NodeClassifier,
};
use crate::nn::{softmax_cross_entropy, AdamState, Mode, NnError};
use crate::rng::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("cannot evaluate on an empty node set")]
    EmptyEvalSet,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, record: Box<RunRecord> },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub w_epochs_per_round: usize,
    pub p_epochs_per_round: usize,
    pub p_lr: f64,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            w_epochs_per_round: 20,
            p_epochs_per_round: 10,
            p_lr: 0.01,
            patience: 100,
            max_epochs: 3000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.w_epochs_per_round,
            self.p_epochs_per_round,
            self.patience,
            self.max_epochs,
        ];
        if counts.contains(&0) || !(self.p_lr > 0.0) {
            return Err(TrainError::Config("schedule entries must be positive".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("w_epochs".into(), self.w_epochs_per_round.to_string()),
            ("p_epochs".into(), self.p_epochs_per_round.to_string()),
            ("p_lr".into(), self.p_lr.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
        ]
    }

    /// Sets one field by key; `Ok(false)` if the key is not a schedule key.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "w_epochs" => self.w_epochs_per_round = parse(key, value)?,
            "p_epochs" => self.p_epochs_per_round = parse(key, value)?,
            "p_lr" => self.p_lr = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value {value:?} for {key}")))
}

/// Model architecture plus the weight optimizer's settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: IngnnConfig,
    pub lr: f64,
    pub weight_decay: f64,
    /// Alternate weight and fusion updates; when off, both are trained
    /// jointly on the train set with one optimizer.
    pub bilevel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: IngnnConfig::default(),
            lr: 0.01,
            weight_decay: 0.0005,
            bilevel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = self.model.to_kv();
        kv.push(("lr".into(), self.lr.to_string()));
        kv.push(("weight_decay".into(), self.weight_decay.to_string()));
        kv.push(("bilevel".into(), self.bilevel.to_string()));
        kv
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "bilevel" => self.bilevel = parse(key, value)?,
            _ => return Ok(self.model.apply_kv(key, value)?),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Weights on the train set.
    W,
    /// Fusion logits on the validation set.
    P,
    /// Weights and fusion logits together on the train set.
    Joint,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::W => "w",
            Phase::P => "p",
            Phase::Joint => "joint",
        })
    }
}

/// One epoch: the optimized objective before the update, then eval-mode
/// loss and accuracy after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    #[serde(with = "nan_as_null")]
    pub objective: f64,
    #[serde(with = "nan_as_null")]
    pub train_loss: f64,
    pub train_acc: f64,
    #[serde(with = "nan_as_null")]
    pub valid_loss: f64,
    pub valid_acc: f64,
}

pub const METRICS_HEADER: [&str; 7] = ["epoch", "phase", "objective", "train_loss", "train_acc", "valid_loss", "valid_acc"];

impl EpochMetrics {
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.phase.to_string(),
            self.objective.to_string(),
            self.train_loss.to_string(),
            self.train_acc.to_string(),
            self.valid_loss.to_string(),
            self.valid_acc.to_string(),
        ]
    }
}

/// JSON has no NaN; diverged runs write `null` and read it back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `"ingnn"` or `"mlp"`.
    pub model: String,
    pub config: TrainConfig,
    pub schedule: Schedule,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub fusion_logits: Vec<f64>,
    pub fusion_weights: Vec<f64>,
    /// `I_ego, I_agg, I_strc` at the restored parameters.
    pub importance: Option<[f64; 3]>,
    /// NaN until the run finishes.
    #[serde(with = "nan_as_null")]
    pub test_acc: f64,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn metrics_rows(&self) -> Vec<Vec<String>> {
        self.epochs.iter().map(EpochMetrics::csv_fields).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(logits: &DenseMatrix, labels: &Labels, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let hits = nodes.iter().filter(|&&v| argmax(logits.row(v)) == labels.get(v)).count();
    Ok(hits as f64 / nodes.len() as f64)
}

/// Eval-mode accuracy of `model` on `nodes`.
pub fn evaluate<M: NodeClassifier>(model: &mut M, input: &ModelInput, labels: &Labels, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let logits = model.forward(input, Mode::Eval)?;
    accuracy(&logits, labels, nodes)
}

/// How [`train_loop`] schedules updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    /// Alternate W and P phases; otherwise train jointly (or W only when
    /// `train_fusion` is false).
    pub bilevel: bool,
    /// Whether the fusion logits are trainable at all.
    pub train_fusion: bool,
}

/// Trace of one training loop, with the best-validation model restored.
#[derive(Debug, Clone)]
pub struct TrainedModel<M> {
    /// Parameters at the best validation accuracy.
    pub model: M,
    /// Parameters after the final epoch.
    pub last: M,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    pub diverged_at: Option<usize>,
}

fn all_zero(params: Vec<&mut crate::nn::Param>) -> bool {
    params.into_iter().all(|p| p.grad_is_zero())
}

/// Runs optimization until early stopping and returns the model at its
/// best validation accuracy (first occurrence on ties).
///
/// With `bilevel`, rounds of `w_epochs_per_round` weight epochs (train
/// mode, train nodes) alternate with `p_epochs_per_round` fusion epochs
/// (eval mode, validation nodes, Adam at `p_lr` without weight decay).
/// Every epoch counts toward patience and `max_epochs`.
pub fn train_loop<M: NodeClassifier + Clone>(
    mut model: M,
    input: &ModelInput,
    labels: &Labels,
    split: &DataSplit,
    opts: &LoopOptions,
) -> Result<TrainedModel<M>> {
    opts.schedule.validate()?;
    split.check(labels.len())?;
    let sched = opts.schedule;
    let mut w_opt = AdamState::new(opts.lr, opts.weight_decay);
    let mut p_opt = AdamState::new(sched.p_lr, 0.0);
    let joint = !opts.bilevel && opts.train_fusion;
    let mut joint_opt = AdamState::new(opts.lr, opts.weight_decay);

    // the untrained model is never a candidate: epoch 1 always becomes the first best
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_valid_acc = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let round = sched.w_epochs_per_round + sched.p_epochs_per_round;

    for epoch in 1..=sched.max_epochs {
        let phase = if joint {
            Phase::Joint
        } else if opts.bilevel && opts.train_fusion && (epoch - 1) % round >= sched.w_epochs_per_round {
            Phase::P
        } else {
            Phase::W
        };
        model.zero_grad();
        let (mode, nodes, target) = match phase {
            Phase::W => (Mode::Train, &split.train, GradTarget::Weights),
            Phase::P => (Mode::Eval, &split.valid, GradTarget::Fusion),
            Phase::Joint => (Mode::Train, &split.train, GradTarget::Both),
        };
        let logits = model.forward(input, mode)?;
        let (objective, grad) = softmax_cross_entropy(&logits, labels.values(), nodes)?;
        if !objective.is_finite() {
            return Ok(TrainedModel {
                model: best,
                last: model,
                epochs,
                best_epoch,
                best_valid_acc,
                diverged_at: Some(epoch),
            });
        }
        model.backward(&grad, target)?;
        match phase {
            Phase::W => {
                assert!(all_zero(model.fusion_params_mut()), "fusion gradient during a W phase");
                w_opt.step(&mut model.weight_params_mut())?;
            }
            Phase::P => {
                assert!(all_zero(model.weight_params_mut()), "weight gradient during a P phase");
                p_opt.step(&mut model.fusion_params_mut())?;
            }
            Phase::Joint => {
                let mut params = model.all_params_mut();
                joint_opt.step(&mut params)?;
            }
        }

        let eval_logits = model.forward(input, Mode::Eval)?;
        let (train_loss, _) = softmax_cross_entropy(&eval_logits, labels.values(), &split.train)?;
        let (valid_loss, _) = softmax_cross_entropy(&eval_logits, labels.values(), &split.valid)?;
        let metrics = EpochMetrics {
            epoch,
            phase,
            objective,
            train_loss,
            train_acc: accuracy(&eval_logits, labels, &split.train)?,
            valid_loss,
            valid_acc: accuracy(&eval_logits, labels, &split.valid)?,
        };
        epochs.push(metrics);
        if !train_loss.is_finite() {
            return Ok(TrainedModel {
                model: best,
                last: model,
                epochs,
                best_epoch,
                best_valid_acc,
                diverged_at: Some(epoch),
            });
        }
        if metrics.valid_acc > best_valid_acc {
            best_valid_acc = metrics.valid_acc;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= sched.patience {
                break;
            }
        }
    }
    Ok(TrainedModel {
        model: best,
        last: model,
        epochs,
        best_epoch,
        best_valid_acc,
        diverged_at: None,
    })
}

/// Trains INGNN on one split and reports test accuracy at the restored
/// best-validation parameters.
pub fn bilevel_train(
    graph: &Graph,
    features: &DenseMatrix,
    labels: &Labels,
    split: &DataSplit,
    config: &TrainConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<RunRecord> {
    bilevel_train_model(graph, features, labels, split, config, schedule, seed).map(|(record, _)| record)
}

/// [`bilevel_train`] that also hands back the restored model.
pub fn bilevel_train_model(
    graph: &Graph,
    features: &DenseMatrix,
    labels: &Labels,
    split: &DataSplit,
    config: &TrainConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(RunRecord, IngnnModel)> {
    let start = Instant::now();
    config.validate()?;
    check_data(graph, features, labels)?;
    let input = ModelInput::new(graph, features, &config.model)?;
    let model = IngnnModel::new(
        config.model.clone(),
        graph.num_nodes(),
        features.cols(),
        labels.num_classes(),
        seed,
    )?;
    let opts = LoopOptions {
        lr: config.lr,
        weight_decay: config.weight_decay,
        schedule: *schedule,
        bilevel: config.bilevel,
        train_fusion: config.model.fusion_mode == FusionMode::Adaptive,
    };
    let trained = train_loop(model, &input, labels, split, &opts)?;
    let mut model = trained.model;
    let logits = model.forward(&input, Mode::Eval)?;
    let importance = model
        .branch_outputs()
        .and_then(|b| importance_scores(&b.ego, &b.agg, &b.strc, b.pi));
    let mut record = RunRecord {
        model: "ingnn".into(),
        config: config.clone(),
        schedule: *schedule,
        seed,
        epochs: trained.epochs,
        best_epoch: trained.best_epoch,
        best_valid_acc: trained.best_valid_acc,
        fusion_logits: model.fusion_logits(),
        fusion_weights: model.fusion_weights().to_vec(),
        importance,
        test_acc: f64::NAN,
        wall_time_secs: 0.0,
    };
    if let Some(epoch) = trained.diverged_at {
        record.wall_time_secs = start.elapsed().as_secs_f64();
        return Err(TrainError::Diverged {
            epoch,
            record: Box::new(record),
        });
    }
    record.test_acc = accuracy(&logits, labels, &split.test)?;
    record.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((record, model))
}

fn check_data(graph: &Graph, features: &DenseMatrix, labels: &Labels) -> Result<()> {
    if labels.len() != graph.num_nodes() {
        return Err(GraphError::LengthMismatch {
            labels: labels.len(),
            nodes: graph.num_nodes(),
        }
        .into());
    }
    if features.rows() != graph.num_nodes() {
        return Err(TrainError::Config(format!(
            "features have {} rows, graph has {} nodes",
            features.rows(),
            graph.num_nodes()
        )));
    }
    Ok(())
}

/// `Dropout → Linear → ReLU → Linear` on the features alone, trained with
/// the same optimizer, schedule and early stopping (W phases only).
pub fn mlp_baseline(
    features: &DenseMatrix,
    labels: &Labels,
    split: &DataSplit,
    config: &TrainConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<RunRecord> {
    mlp_baseline_model(features, labels, split, config, schedule, seed).map(|(record, _)| record)
}

/// [`mlp_baseline`] that also hands back the restored model.
pub fn mlp_baseline_model(
    features: &DenseMatrix,
    labels: &Labels,
    split: &DataSplit,
    config: &TrainConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(RunRecord, MlpModel)> {
    let start = Instant::now();
    config.validate()?;
    let graph = Graph::empty(labels.len());
    check_data(&graph, features, labels)?;
    let mut model_config = config.model.clone();
    model_config.self_loops = false;
    let input = ModelInput::new(&graph, features, &model_config)?;
    let model = MlpModel::new(
        features.cols(),
        config.model.hidden,
        labels.num_classes(),
        config.model.dropout,
        seed,
    )?;
    let opts = LoopOptions {
        lr: config.lr,
        weight_decay: config.weight_decay,
        schedule: *schedule,
        bilevel: false,
        train_fusion: false,
    };
    let trained = train_loop(model, &input, labels, split, &opts)?;
    let mut model = trained.model;
    let mut record = RunRecord {
        model: "mlp".into(),
        config: config.clone(),
        schedule: *schedule,
        seed,
        epochs: trained.epochs,
        best_epoch: trained.best_epoch,
        best_valid_acc: trained.best_valid_acc,
        fusion_logits: Vec::new(),
        fusion_weights: Vec::new(),
        importance: None,
        test_acc: f64::NAN,
        wall_time_secs: 0.0,
    };
    if let Some(epoch) = trained.diverged_at {
        record.wall_time_secs = start.elapsed().as_secs_f64();
        return Err(TrainError::Diverged {
            epoch,
            record: Box::new(record),
        });
    }
    record.test_acc = evaluate(&mut model, &input, labels, &split.test)?;
    record.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((record, model))
}

/// One graph with one split, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct Task<'a> {
    pub graph: &'a Graph,
    pub features: &'a DenseMatrix,
    pub labels: &'a Labels,
    pub split: &'a DataSplit,
}

/// The full hyper-parameter grid: hidden ∈ {64, 128}, propagation steps ∈
/// {2, 5, 10, 20}, adjacency powers ∈ {1, 2, 5}, lr ∈ {0.01, 0.001},
/// weight decay ∈ {0.001, 0.0005}, feature row-normalization on/off.
/// Other settings come from `base`.
pub fn full_grid(base: &TrainConfig) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for hidden in [64, 128] {
        for prop_steps in [2, 5, 10, 20] {
            for adj_powers in [1, 2, 5] {
                for lr in [0.01, 0.001] {
                    for weight_decay in [0.001, 0.0005] {
                        for row_normalize in [true, false] {
                            let mut c = base.clone();
                            c.model.hidden = hidden;
                            c.model.prop_steps = prop_steps;
                            c.model.adj_powers = adj_powers;
                            c.model.row_normalize_features = row_normalize;
                            c.lr = lr;
                            c.weight_decay = weight_decay;
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: TrainConfig,
    pub mean_valid_acc: f64,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every config on every task (task `i` uses seed
/// `derive_seed(seed, i)`) and picks the highest mean validation accuracy;
/// ties go to the earlier config.
pub fn grid_search(tasks: &[Task<'_>], grid: &[TrainConfig], schedule: &Schedule, seed: u64) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if tasks.is_empty() {
        return Err(TrainError::Config("grid search needs at least one task".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for config in grid {
        let mut valid = Vec::new();
        let mut test = Vec::new();
        for (i, t) in tasks.iter().enumerate() {
            let r = bilevel_train(t.graph, t.features, t.labels, t.split, config, schedule, derive_seed(seed, i as u64))?;
            valid.push(r.best_valid_acc);
            test.push(r.test_acc);
        }
        let (mean_test_acc, std_test_acc) = mean_std(&test);
        rows.push(GridRow {
            config: config.clone(),
            mean_valid_acc: mean_std(&valid).0,
            mean_test_acc,
            std_test_acc,
        });
    }
    let mut best_index = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_valid_acc > rows[best_index].mean_valid_acc {
            best_index = i;
        }
    }
    Ok(GridResult {
        best: rows[best_index].config.clone(),
        best_index,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Base,
    WithoutEgo,
    WithoutAgg,
    WithoutStrc,
    /// Equal-weight sum instead of learned fusion.
    WithoutFusion,
    /// Joint training of weights and fusion logits on the train set.
    WithoutBilevel,
    Concat,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Base,
        Ablation::WithoutEgo,
        Ablation::WithoutAgg,
        Ablation::WithoutStrc,
        Ablation::WithoutFusion,
        Ablation::WithoutBilevel,
        Ablation::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Base => "base",
            Ablation::WithoutEgo => "w/o ego",
            Ablation::WithoutAgg => "w/o agg",
            Ablation::WithoutStrc => "w/o strc",
            Ablation::WithoutFusion => "w/o fusion",
            Ablation::WithoutBilevel => "w/o bi-level",
            Ablation::Concat => "concat",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Ablation::Base => {}
            Ablation::WithoutEgo => c.model = c.model.with_disabled(Branch::Ego),
            Ablation::WithoutAgg => c.model = c.model.with_disabled(Branch::Agg),
            Ablation::WithoutStrc => c.model = c.model.with_disabled(Branch::Strc),
            Ablation::WithoutFusion => c.model.fusion_mode = FusionMode::EqualSum,
            Ablation::WithoutBilevel => c.bilevel = false,
            Ablation::Concat => c.model.fusion_mode = FusionMode::Concat,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Ablation,
    pub record: RunRecord,
    /// Test accuracy minus the base run's.
    pub delta: f64,
}

/// Runs all seven variants with the same seed.
pub fn ablation_suite(task: &Task<'_>, base: &TrainConfig, schedule: &Schedule, seed: u64) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = Vec::with_capacity(Ablation::ALL.len());
    for variant in Ablation::ALL {
        let config = variant.apply(base);
        let record = bilevel_train(task.graph, task.features, task.labels, task.split, &config, schedule, seed)?;
        let base_acc = rows.first().map_or(record.test_acc, |r| r.record.test_acc);
        rows.push(AblationRow {
            variant,
            delta: record.test_acc - base_acc,
            record,
        });
    }
    Ok(rows)
}
