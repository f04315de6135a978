//! The INGNN network: ego, aggregated-neighborhood and structure feature
//! extractors, softmax-weighted fusion, and a linear prediction head.
//!
//! Forward pass, with `Â = D^{-1/2} A D^{-1/2}`:
//!
//! ```text
//! H_ego  = Dropout(X) · W_ego
//! H_agg  = Σ_{i=1..s1} Â^i H_ego                  (repeated spmm)
//! S_1    = BN_1(A · W_strc),  S_j = BN_j(A · S_{j-1})
//! H_strc = Σ_{j=1..s2} S_j
//! H      = ReLU(Dropout(π_ego H_ego + π_agg H_agg + π_strc H_strc))
//! logits = H · W_pred
//! ```
//!
//! `π = softmax(p)` over the enabled branches only. The structure branch
//! multiplies by `W_strc` before the batch-norm chain so no `N × N` matrix
//! is ever formed; [`StructureMode::DenseLiteral`] keeps the literal
//! `Σ BN^j(A) · W_strc` form for small graphs, normalizing over `N`
//! columns instead of `d`. The two are not numerically equivalent.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::linalg::{DenseMatrix, LinalgError, SparseMatrix};
use crate::nn::{glorot_uniform, BatchNorm, Dropout, Linear, Mode, NnError, Param};
use crate::rng::{stream_rng, Stream};

/// Largest graph accepted by [`StructureMode::DenseLiteral`].
pub const DENSE_STRUCTURE_MAX_NODES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input does not match the model: {0}")]
    Input(String),
    #[error("no forward pass cached")]
    NoForward,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Adaptive,
    EqualSum,
    Concat,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Adaptive => "adaptive",
            FusionMode::EqualSum => "equal_sum",
            FusionMode::Concat => "concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(FusionMode::Adaptive),
            "equal_sum" => Ok(FusionMode::EqualSum),
            "concat" => Ok(FusionMode::Concat),
            other => Err(ModelError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureMode {
    /// Batch-norm chain applied to `A · W_strc` products (`d` features).
    Factored,
    /// Batch-norm chain applied to dense `A`-powers (`N` features).
    DenseLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Ego,
    Agg,
    Strc,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Ego, Branch::Agg, Branch::Strc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Ego => "ego",
            Branch::Agg => "agg",
            Branch::Strc => "strc",
        }
    }
}

impl FromStr for Branch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ego" => Ok(Branch::Ego),
            "agg" => Ok(Branch::Agg),
            "strc" => Ok(Branch::Strc),
            other => Err(ModelError::Config(format!("unknown branch {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngnnConfig {
    /// Hidden width `d`.
    pub hidden: usize,
    /// Propagation steps `s1` of the aggregated branch.
    pub prop_steps: usize,
    /// Adjacency powers `s2` of the structure branch.
    pub adj_powers: usize,
    pub dropout: f64,
    /// Row-wise L1 normalization of the input features.
    pub row_normalize_features: bool,
    pub fusion_mode: FusionMode,
    pub disabled: Vec<Branch>,
    /// Use `D̃^{-1/2}(A + I)D̃^{-1/2}` for propagation instead of `Â`.
    pub self_loops: bool,
    pub structure_mode: StructureMode,
}

impl Default for IngnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            prop_steps: 2,
            adj_powers: 1,
            dropout: 0.5,
            row_normalize_features: false,
            fusion_mode: FusionMode::Adaptive,
            disabled: Vec::new(),
            self_loops: false,
            structure_mode: StructureMode::Factored,
        }
    }
}

impl IngnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.prop_steps == 0 || self.adj_powers == 0 {
            return Err(ModelError::Config("hidden, prop_steps and adj_powers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if Branch::ALL.iter().all(|b| self.disabled.contains(b)) {
            return Err(ModelError::Config("all branches disabled".into()));
        }
        Ok(())
    }

    pub fn enabled(&self, b: Branch) -> bool {
        !self.disabled.contains(&b)
    }

    pub fn enabled_branches(&self) -> Vec<Branch> {
        Branch::ALL.into_iter().filter(|&b| self.enabled(b)).collect()
    }

    pub fn with_disabled(mut self, b: Branch) -> Self {
        if !self.disabled.contains(&b) {
            self.disabled.push(b);
            self.disabled.sort();
        }
        self
    }

    /// Flat `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let disabled: Vec<&str> = self.disabled.iter().map(|b| b.name()).collect();
        vec![
            ("hidden".into(), self.hidden.to_string()),
            ("prop_steps".into(), self.prop_steps.to_string()),
            ("adj_powers".into(), self.adj_powers.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("row_normalize_features".into(), self.row_normalize_features.to_string()),
            ("fusion_mode".into(), self.fusion_mode.to_string()),
            ("disable".into(), disabled.join(",")),
            ("self_loops".into(), self.self_loops.to_string()),
            (
                "structure_mode".into(),
                match self.structure_mode {
                    StructureMode::Factored => "factored",
                    StructureMode::DenseLiteral => "dense_literal",
                }
                .into(),
            ),
        ]
    }

    /// Applies one `key=value` pair. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "hidden" => self.hidden = parse(key, value)?,
            "prop_steps" => self.prop_steps = parse(key, value)?,
            "adj_powers" => self.adj_powers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "row_normalize_features" => self.row_normalize_features = parse(key, value)?,
            "fusion_mode" => self.fusion_mode = value.trim().parse()?,
            "disable" => {
                self.disabled = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
                self.disabled.sort();
                self.disabled.dedup();
            }
            "self_loops" => self.self_loops = parse(key, value)?,
            "structure_mode" => {
                self.structure_mode = match value.trim() {
                    "factored" => StructureMode::Factored,
                    "dense_literal" => StructureMode::DenseLiteral,
                    other => return Err(ModelError::Config(format!("unknown structure mode {other:?}"))),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Graph operators and features prepared once per dataset.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// Raw adjacency `A`.
    pub adj: SparseMatrix,
    /// Propagation operator `Â`.
    pub prop: SparseMatrix,
    /// Input features, row-normalized if the config asks for it.
    pub features: DenseMatrix,
}

impl ModelInput {
    pub fn new(graph: &Graph, features: &DenseMatrix, config: &IngnnConfig) -> Result<Self> {
        if features.rows() != graph.num_nodes() {
            return Err(ModelError::Input(format!(
                "features have {} rows, graph has {} nodes",
                features.rows(),
                graph.num_nodes()
            )));
        }
        let prop = if config.self_loops {
            graph.normalized_adjacency_with_self_loops()
        } else {
            graph.normalized_adjacency()
        };
        let features = if config.row_normalize_features {
            features.row_l1_normalized()
        } else {
            features.clone()
        };
        Ok(Self {
            adj: graph.adjacency(),
            prop,
            features,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Which parameter group a backward pass writes gradients for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    /// Model weights `W` (linear maps, batch-norm affine parameters).
    Weights,
    /// Fusion logits `p`.
    Fusion,
    Both,
}

impl GradTarget {
    fn weights(self) -> bool {
        matches!(self, GradTarget::Weights | GradTarget::Both)
    }

    fn fusion(self) -> bool {
        matches!(self, GradTarget::Fusion | GradTarget::Both)
    }
}

/// Common surface of trainable node classifiers.
pub trait NodeClassifier {
    fn forward(&mut self, input: &ModelInput, mode: Mode) -> Result<DenseMatrix>;
    fn backward(&mut self, dlogits: &DenseMatrix, target: GradTarget) -> Result<()>;
    fn weight_params_mut(&mut self) -> Vec<&mut Param>;
    fn fusion_params_mut(&mut self) -> Vec<&mut Param>;
    fn fusion_logits(&self) -> Vec<f64>;
    fn named_tensors(&self) -> Vec<(String, DenseMatrix)>;
    /// Weight parameters followed by fusion parameters.
    fn all_params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.weight_params_mut() {
            p.zero_grad();
        }
        for p in self.fusion_params_mut() {
            p.zero_grad();
        }
    }
}

/// Softmax over the entries of `logits` whose mask bit is set; masked
/// entries get weight 0.
pub fn masked_softmax(logits: &[f64], enabled: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(enabled)
        .filter(|(_, &on)| on)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(enabled)
        .map(|(&l, &on)| if on { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
struct ForwardCache {
    h_ego: DenseMatrix,
    h_agg: Option<DenseMatrix>,
    h_strc: Option<DenseMatrix>,
    /// Σ S_j before the final `W_strc` product (dense-literal mode only).
    strc_pre: Option<DenseMatrix>,
    /// Fused features after dropout, before ReLU.
    fused_dropped: DenseMatrix,
    pi: [f64; 3],
    adj: SparseMatrix,
    prop: SparseMatrix,
}

/// Per-branch outputs of the most recent forward pass.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    pub ego: DenseMatrix,
    pub agg: DenseMatrix,
    pub strc: DenseMatrix,
    pub pi: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct IngnnModel {
    config: IngnnConfig,
    pub w_ego: Linear,
    pub w_strc: Param,
    pub w_pred: Linear,
    pub bn_chain: Vec<BatchNorm>,
    pub fusion: Param,
    input_dropout: Dropout,
    fusion_dropout: Dropout,
    dropout_rng: ChaCha8Rng,
    num_nodes: usize,
    cache: Option<ForwardCache>,
}

impl IngnnModel {
    /// Glorot-initialized model for a graph of `num_nodes` nodes with
    /// `in_features`-dimensional inputs and `num_classes` classes.
    pub fn new(config: IngnnConfig, num_nodes: usize, in_features: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.structure_mode == StructureMode::DenseLiteral && num_nodes > DENSE_STRUCTURE_MAX_NODES {
            return Err(ModelError::Config(format!(
                "dense_literal structure mode needs N <= {DENSE_STRUCTURE_MAX_NODES}, got {num_nodes}"
            )));
        }
        let mut rng = stream_rng(seed, Stream::Init);
        let d = config.hidden;
        let pred_in = match config.fusion_mode {
            FusionMode::Concat => d * config.enabled_branches().len(),
            _ => d,
        };
        let bn_width = match config.structure_mode {
            StructureMode::Factored => d,
            StructureMode::DenseLiteral => num_nodes,
        };
        let w_ego = Linear::new(glorot_uniform(in_features, d, &mut rng));
        let w_strc = Param::new(glorot_uniform(num_nodes, d, &mut rng));
        let w_pred = Linear::new(glorot_uniform(pred_in, num_classes, &mut rng));
        Ok(Self {
            bn_chain: (0..config.adj_powers).map(|_| BatchNorm::new(bn_width)).collect(),
            fusion: Param::new(DenseMatrix::zeros(1, 3)),
            input_dropout: Dropout::new(config.dropout)?,
            fusion_dropout: Dropout::new(config.dropout)?,
            dropout_rng: stream_rng(seed, Stream::Dropout),
            num_nodes,
            cache: None,
            config,
            w_ego,
            w_strc,
            w_pred,
        })
    }

    pub fn config(&self) -> &IngnnConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.w_pred.out_features()
    }

    fn enabled_mask(&self) -> [bool; 3] {
        Branch::ALL.map(|b| self.config.enabled(b))
    }

    /// Current fusion weights `π`. Fixed at `1/k` over the enabled
    /// branches for equal-sum and concat fusion.
    pub fn fusion_weights(&self) -> [f64; 3] {
        let mask = self.enabled_mask();
        let k = mask.iter().filter(|&&m| m).count() as f64;
        match self.config.fusion_mode {
            FusionMode::Adaptive => {
                let pi = masked_softmax(self.fusion.value.data(), &mask);
                [pi[0], pi[1], pi[2]]
            }
            _ => mask.map(|m| if m { 1.0 / k } else { 0.0 }),
        }
    }

    pub fn set_fusion_logits(&mut self, logits: [f64; 3]) {
        self.fusion.value = DenseMatrix::from_rows(&[logits]);
    }

    /// Branch outputs cached by the last forward pass; disabled branches
    /// are reported as zeros.
    pub fn branch_outputs(&self) -> Option<BranchOutputs> {
        let c = self.cache.as_ref()?;
        let (n, d) = (self.num_nodes, self.config.hidden);
        Some(BranchOutputs {
            ego: if self.config.enabled(Branch::Ego) {
                c.h_ego.clone()
            } else {
                DenseMatrix::zeros(n, d)
            },
            agg: c.h_agg.clone().unwrap_or_else(|| DenseMatrix::zeros(n, d)),
            strc: c.h_strc.clone().unwrap_or_else(|| DenseMatrix::zeros(n, d)),
            pi: c.pi,
        })
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.num_nodes() != self.num_nodes {
            return Err(ModelError::Input(format!(
                "model built for {} nodes, input has {}",
                self.num_nodes,
                input.num_nodes()
            )));
        }
        if input.features.cols() != self.w_ego.in_features() {
            return Err(ModelError::Input(format!(
                "model expects {} features, input has {}",
                self.w_ego.in_features(),
                input.features.cols()
            )));
        }
        Ok(())
    }

    fn structure_forward(&mut self, adj: &SparseMatrix, mode: Mode) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
        let first = match self.config.structure_mode {
            StructureMode::Factored => adj.spmm(&self.w_strc.value)?,
            StructureMode::DenseLiteral => adj.to_dense(),
        };
        let mut s = self.bn_chain[0].forward(&first, mode)?;
        let mut total = s.clone();
        for bn in self.bn_chain.iter_mut().skip(1) {
            let u = adj.spmm(&s)?;
            s = bn.forward(&u, mode)?;
            total.add_assign(&s)?;
        }
        match self.config.structure_mode {
            StructureMode::Factored => Ok((total, None)),
            StructureMode::DenseLiteral => Ok((total.matmul(&self.w_strc.value)?, Some(total))),
        }
    }

    /// Backpropagates `d_strc` through the batch-norm chain into `W_strc`.
    fn structure_backward(&mut self, d_strc: &DenseMatrix, adj: &SparseMatrix, strc_pre: Option<&DenseMatrix>) -> Result<()> {
        let d_total = match (self.config.structure_mode, strc_pre) {
            (StructureMode::DenseLiteral, Some(pre)) => {
                let dw = pre.t_matmul(d_strc)?;
                self.w_strc.grad.add_assign(&dw)?;
                d_strc.matmul_t(&self.w_strc.value)?
            }
            _ => d_strc.clone(),
        };
        let mut carry: Option<DenseMatrix> = None;
        for bn in self.bn_chain.iter_mut().rev() {
            let mut ds = d_total.clone();
            if let Some(du_next) = &carry {
                // U_{j+1} = A S_j and A is symmetric
                ds.add_assign(&adj.spmm(du_next)?)?;
            }
            carry = Some(bn.backward(&ds)?);
        }
        if self.config.structure_mode == StructureMode::Factored {
            let du_first = carry.expect("chain has at least one layer");
            let dw = adj.spmm(&du_first)?;
            self.w_strc.grad.add_assign(&dw)?;
        }
        Ok(())
    }
}

/// `Σ_{i=1..steps} Â^i h`, by repeated sparse products.
pub fn propagate_sum(prop: &SparseMatrix, h: &DenseMatrix, steps: usize) -> Result<DenseMatrix> {
    let mut current = prop.spmm(h)?;
    let mut total = current.clone();
    for _ in 1..steps {
        current = prop.spmm(&current)?;
        total.add_assign(&current)?;
    }
    Ok(total)
}

impl NodeClassifier for IngnnModel {
    fn forward(&mut self, input: &ModelInput, mode: Mode) -> Result<DenseMatrix> {
        self.check_input(input)?;
        let need_ego_features = self.config.enabled(Branch::Ego) || self.config.enabled(Branch::Agg);
        let (n, d) = (self.num_nodes, self.config.hidden);

        let h_ego = if need_ego_features {
            let x = self.input_dropout.forward(&input.features, mode, &mut self.dropout_rng);
            self.w_ego.forward(&x)?
        } else {
            DenseMatrix::zeros(n, d)
        };
        let h_agg = if self.config.enabled(Branch::Agg) {
            Some(propagate_sum(&input.prop, &h_ego, self.config.prop_steps)?)
        } else {
            None
        };
        let (h_strc, strc_pre) = if self.config.enabled(Branch::Strc) {
            let (h, pre) = self.structure_forward(&input.adj, mode)?;
            (Some(h), pre)
        } else {
            (None, None)
        };

        let pi = self.fusion_weights();
        let fused = match self.config.fusion_mode {
            FusionMode::Concat => {
                let mut parts = Vec::new();
                if self.config.enabled(Branch::Ego) {
                    parts.push(&h_ego);
                }
                if let Some(h) = &h_agg {
                    parts.push(h);
                }
                if let Some(h) = &h_strc {
                    parts.push(h);
                }
                DenseMatrix::hconcat(&parts)?
            }
            _ => {
                let mut z = DenseMatrix::zeros(n, d);
                if self.config.enabled(Branch::Ego) {
                    z.axpy(pi[0], &h_ego)?;
                }
                if let Some(h) = &h_agg {
                    z.axpy(pi[1], h)?;
                }
                if let Some(h) = &h_strc {
                    z.axpy(pi[2], h)?;
                }
                z
            }
        };
        let fused_dropped = self.fusion_dropout.forward(&fused, mode, &mut self.dropout_rng);
        let hidden = fused_dropped.relu();
        let logits = self.w_pred.forward(&hidden)?;
        self.cache = Some(ForwardCache {
            h_ego,
            h_agg,
            h_strc,
            strc_pre,
            fused_dropped,
            pi,
            adj: input.adj.clone(),
            prop: input.prop.clone(),
        });
        Ok(logits)
    }

    fn backward(&mut self, dlogits: &DenseMatrix, target: GradTarget) -> Result<()> {
        let cache = self.cache.take().ok_or(ModelError::NoForward)?;
        let result = self.backward_cached(&cache, dlogits, target);
        self.cache = Some(cache);
        result
    }

    fn weight_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.w_ego.weight, &mut self.w_strc, &mut self.w_pred.weight];
        for bn in &mut self.bn_chain {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    fn fusion_params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.fusion]
    }

    fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.w_ego.weight, &mut self.w_strc, &mut self.w_pred.weight];
        for bn in &mut self.bn_chain {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.fusion);
        out
    }

    fn fusion_logits(&self) -> Vec<f64> {
        self.fusion.value.data().to_vec()
    }

    fn named_tensors(&self) -> Vec<(String, DenseMatrix)> {
        let mut out = vec![
            ("w_ego".to_string(), self.w_ego.weight.value.clone()),
            ("w_strc".to_string(), self.w_strc.value.clone()),
            ("w_pred".to_string(), self.w_pred.weight.value.clone()),
        ];
        for (j, bn) in self.bn_chain.iter().enumerate() {
            let f = bn.features();
            out.push((format!("bn.{j}.gamma"), bn.gamma.value.clone()));
            out.push((format!("bn.{j}.beta"), bn.beta.value.clone()));
            out.push((
                format!("bn.{j}.running_mean"),
                DenseMatrix::from_vec(1, f, bn.running_mean.clone()).expect("length f"),
            ));
            out.push((
                format!("bn.{j}.running_var"),
                DenseMatrix::from_vec(1, f, bn.running_var.clone()).expect("length f"),
            ));
        }
        out.push(("fusion_logits".to_string(), self.fusion.value.clone()));
        out
    }
}

impl IngnnModel {
    fn backward_cached(&mut self, cache: &ForwardCache, dlogits: &DenseMatrix, target: GradTarget) -> Result<()> {
        let d_hidden = if target.weights() {
            self.w_pred.backward(dlogits)?
        } else {
            dlogits.matmul_t(&self.w_pred.weight.value)?
        };
        let d_dropped = d_hidden.hadamard(&cache.fused_dropped.relu_mask())?;
        let d_fused = self.fusion_dropout.backward(&d_dropped)?;

        let (n, d) = (self.num_nodes, self.config.hidden);
        let mut d_branch: [Option<DenseMatrix>; 3] = [None, None, None];
        match self.config.fusion_mode {
            FusionMode::Concat => {
                let mut offset = 0;
                for b in self.config.enabled_branches() {
                    d_branch[b.index()] = Some(d_fused.column_block(offset, d));
                    offset += d;
                }
            }
            mode => {
                if target.fusion() && mode == FusionMode::Adaptive {
                    let outputs = [
                        self.config.enabled(Branch::Ego).then_some(&cache.h_ego),
                        cache.h_agg.as_ref(),
                        cache.h_strc.as_ref(),
                    ];
                    let mut dpi = [0.0; 3];
                    for (k, h) in outputs.iter().enumerate() {
                        if let Some(h) = h {
                            dpi[k] = d_fused.dot(h)?;
                        }
                    }
                    let weighted: f64 = (0..3).map(|k| cache.pi[k] * dpi[k]).sum();
                    for k in 0..3 {
                        // π_k = 0 for disabled branches, so their logits get no gradient
                        self.fusion.grad.data_mut()[k] += cache.pi[k] * (dpi[k] - weighted);
                    }
                }
                for b in self.config.enabled_branches() {
                    d_branch[b.index()] = Some(d_fused.scale(cache.pi[b.index()]));
                }
            }
        }
        if !target.weights() {
            return Ok(());
        }

        let [d_ego, d_agg, d_strc] = d_branch;
        let mut d_h_ego = d_ego;
        if let Some(g) = d_agg {
            // Â is symmetric, so the adjoint of Σ Â^i is itself
            let back = propagate_sum(&cache.prop, &g, self.config.prop_steps)?;
            match &mut d_h_ego {
                Some(acc) => acc.add_assign(&back)?,
                None => d_h_ego = Some(back),
            }
        }
        if let Some(g) = d_h_ego {
            self.w_ego.backward_weight(&g)?;
        }
        if let Some(g) = d_strc {
            self.structure_backward(&g, &cache.adj, cache.strc_pre.as_ref())?;
        }
        debug_assert_eq!(cache.h_ego.shape(), (n, d));
        Ok(())
    }
}

/// Share of each branch in the fused representation:
/// `I_s = π_s ⟨H_s⟩ / Σ_t π_t ⟨H_t⟩` with `⟨·⟩` the mean absolute value.
/// `None` when the denominator is zero.
pub fn importance_scores(ego: &DenseMatrix, agg: &DenseMatrix, strc: &DenseMatrix, pi: [f64; 3]) -> Option<[f64; 3]> {
    let weighted = [pi[0] * ego.mean_abs(), pi[1] * agg.mean_abs(), pi[2] * strc.mean_abs()];
    let total: f64 = weighted.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return None;
    }
    Some(weighted.map(|w| w / total))
}

/// Two-layer perceptron on the features alone:
/// `Dropout → Linear → ReLU → Linear`.
#[derive(Debug, Clone)]
pub struct MlpModel {
    dropout: Dropout,
    pub hidden_layer: Linear,
    pub output_layer: Linear,
    dropout_rng: ChaCha8Rng,
    pre_activation: Option<DenseMatrix>,
}

impl MlpModel {
    pub fn new(in_features: usize, hidden: usize, num_classes: usize, dropout: f64, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        Ok(Self {
            dropout: Dropout::new(dropout)?,
            hidden_layer: Linear::glorot(in_features, hidden, &mut rng),
            output_layer: Linear::glorot(hidden, num_classes, &mut rng),
            dropout_rng: stream_rng(seed, Stream::Dropout),
            pre_activation: None,
        })
    }
}

impl NodeClassifier for MlpModel {
    fn forward(&mut self, input: &ModelInput, mode: Mode) -> Result<DenseMatrix> {
        let x = self.dropout.forward(&input.features, mode, &mut self.dropout_rng);
        let pre = self.hidden_layer.forward(&x)?;
        let logits = self.output_layer.forward(&pre.relu())?;
        self.pre_activation = Some(pre);
        Ok(logits)
    }

    fn backward(&mut self, dlogits: &DenseMatrix, target: GradTarget) -> Result<()> {
        if !target.weights() {
            return Ok(());
        }
        let pre = self.pre_activation.as_ref().ok_or(ModelError::NoForward)?;
        let d_act = self.output_layer.backward(dlogits)?;
        let d_pre = d_act.hadamard(&pre.relu_mask())?;
        self.hidden_layer.backward_weight(&d_pre)?;
        Ok(())
    }

    fn weight_params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.hidden_layer.weight, &mut self.output_layer.weight]
    }

    fn fusion_params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn all_params_mut(&mut self) -> Vec<&mut Param> {
        self.weight_params_mut()
    }

    fn fusion_logits(&self) -> Vec<f64> {
        Vec::new()
    }

    fn named_tensors(&self) -> Vec<(String, DenseMatrix)> {
        vec![
            ("hidden".into(), self.hidden_layer.weight.value.clone()),
            ("output".into(), self.output_layer.weight.value.clone()),
        ]
    }
}

impl IngnnModel {
    /// Restores parameters and batch-norm statistics written by
    /// [`NodeClassifier::named_tensors`]. Every tensor must be present with
    /// its current shape.
    pub fn load_named_tensors(&mut self, tensors: &[(String, DenseMatrix)]) -> Result<()> {
        let lookup = |name: &str, shape| lookup_tensor(tensors, name, shape);
        self.w_ego.weight.value = lookup("w_ego", self.w_ego.weight.value.shape())?;
        self.w_strc.value = lookup("w_strc", self.w_strc.value.shape())?;
        self.w_pred.weight.value = lookup("w_pred", self.w_pred.weight.value.shape())?;
        for (j, bn) in self.bn_chain.iter_mut().enumerate() {
            let f = bn.features();
            bn.gamma.value = lookup(&format!("bn.{j}.gamma"), (1, f))?;
            bn.beta.value = lookup(&format!("bn.{j}.beta"), (1, f))?;
            bn.running_mean = lookup(&format!("bn.{j}.running_mean"), (1, f))?.into_vec();
            bn.running_var = lookup(&format!("bn.{j}.running_var"), (1, f))?.into_vec();
        }
        self.fusion.value = lookup("fusion_logits", (1, 3))?;
        Ok(())
    }
}

impl MlpModel {
    /// Restores the two weight matrices written by
    /// [`NodeClassifier::named_tensors`].
    pub fn load_named_tensors(&mut self, tensors: &[(String, DenseMatrix)]) -> Result<()> {
        self.hidden_layer.weight.value = lookup_tensor(tensors, "hidden", self.hidden_layer.weight.value.shape())?;
        self.output_layer.weight.value = lookup_tensor(tensors, "output", self.output_layer.weight.value.shape())?;
        Ok(())
    }
}

fn lookup_tensor(tensors: &[(String, DenseMatrix)], name: &str, shape: (usize, usize)) -> Result<DenseMatrix> {
    let t = tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t.clone())
        .ok_or_else(|| ModelError::Input(format!("checkpoint lacks tensor {name}")))?;
    if t.shape() != shape {
        return Err(ModelError::Input(format!(
            "tensor {name} has shape {:?}, expected {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests;
