//! Desk-scale ranking harness: a toy click model with a user-history block
//! pooled by one-layer PMA, fed either by hashed SID lookups or by SIDE
//! vectors projected through Ω.

mod data;

use std::collections::HashMap;
use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

pub use data::{EngagementConfig, Sample, SyntheticEngagementSet};

use crate::eval::{normalized_entropy, EvalError, NeReport};
use crate::nn::{AdamState, Graph, NnError, NodeId, ParamStore, Tensor2};
use crate::sid::{side_embed, sid_hash};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training diverged in epoch {epoch} of variant {variant}")]
    Diverged { variant: &'static str, epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// `U = softmax(Q Kᵀ/√d) V` with `K = V Θ`.
pub fn pma_forward(q: &Tensor2, v: &Tensor2, theta: &Tensor2) -> Result<Tensor2, RankError> {
    let d = q.cols();
    if v.cols() != d || theta.shape() != (d, d) {
        return Err(RankError::Shape(format!(
            "Q {:?}, V {:?}, Θ {:?} are inconsistent",
            q.shape(),
            v.shape(),
            theta.shape()
        )));
    }
    let k = v.matmul(theta)?;
    let logits = q.matmul(&k.transpose())?.scale(1.0 / (d as f32).sqrt());
    let mut attn = logits;
    for r in 0..attn.rows() {
        softmax_in_place(attn.row_mut(r));
    }
    Ok(attn.matmul(v)?)
}

fn softmax_in_place(row: &mut [f32]) {
    let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

/// Hashed-table lookup of each event's SID.
pub fn build_features_sid(sids: &[u64], table: &Tensor2) -> Tensor2 {
    let rows: Vec<usize> = sids.iter().map(|&s| sid_hash(s, table.rows())).collect();
    table.select_rows(&rows)
}

/// SIDE vectors (one per row of `side`, length `t`) projected by Ω (`t×d`).
pub fn build_features_side(side: &Tensor2, omega: &Tensor2) -> Result<Tensor2, RankError> {
    if side.cols() != omega.rows() {
        return Err(RankError::Shape(format!(
            "SIDE length {} does not match Ω with {} rows",
            side.cols(),
            omega.rows()
        )));
    }
    Ok(side.matmul(omega)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FeaturePath {
    /// SID as a hashed sparse id.
    Sid { hash_size: usize },
    /// SIDE digits through Ω.
    Side,
}

impl FeaturePath {
    pub fn name(&self) -> &'static str {
        match self {
            FeaturePath::Sid { .. } => "sid",
            FeaturePath::Side => "side",
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            FeaturePath::Sid { .. } => "sid.",
            FeaturePath::Side => "side.",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Users with `user % holdout_folds == 0` form the test split and those
    /// with `== 1` the validation split.
    pub holdout_folds: usize,
    pub seed: u64,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            epochs: 6,
            batch_size: 256,
            learning_rate: 5e-3,
            holdout_folds: 5,
            seed: 0,
        }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.dim == 0 || self.batch_size == 0 || self.holdout_folds < 3 {
            return Err(RankError::Config("dim and batch_size must be positive, holdout_folds ≥ 3".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(RankError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Toy click model: feature path → query map and PMA pooling of the
/// history against the shown item → logistic head over `[U, q, U⊙q]`.
/// With `history` off the head sees only `q` (the no-history ablation).
#[derive(Debug, Clone)]
pub struct ToyRankingModel {
    pub path: FeaturePath,
    pub history: bool,
    pub dim: usize,
    pub digits: usize,
    pub params: ParamStore,
}

const TABLE_STD: f32 = 0.1;

impl ToyRankingModel {
    pub fn new(path: FeaturePath, history: bool, dim: usize, digits: usize, seed: u64) -> Result<Self, RankError> {
        if dim == 0 || digits == 0 {
            return Err(RankError::Config("dim and SIDE length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        match path {
            FeaturePath::Sid { hash_size } => {
                if hash_size == 0 {
                    return Err(RankError::Config("hash_size must be ≥ 1".into()));
                }
                let normal = Normal::new(0.0f32, TABLE_STD).expect("valid std");
                let data = (0..hash_size * dim).map(|_| normal.sample(&mut rng)).collect();
                params.insert("sid.table", Tensor2::new(hash_size, dim, data)?);
            }
            FeaturePath::Side => {
                params.insert("side.omega", crate::nn::glorot_uniform(digits, dim, &mut rng));
            }
        }
        params.init_linear("query", dim, dim, &mut rng);
        if history {
            params.insert("pma.theta", crate::nn::glorot_uniform(dim, dim, &mut rng));
            params.init_linear("head", 3 * dim, 1, &mut rng);
        } else {
            params.init_linear("head", dim, 1, &mut rng);
        }
        Ok(Self {
            path,
            history,
            dim,
            digits,
            params,
        })
    }

    /// Learned scalars in the feature path (table or Ω).
    pub fn feature_param_count(&self) -> usize {
        self.params.scalar_count_with_prefix(self.path.prefix())
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn features(&self, g: &mut Graph, data: &SyntheticEngagementSet, items: &[usize]) -> Result<NodeId, RankError> {
        match self.path {
            FeaturePath::Sid { hash_size } => {
                let table = g.param("sid.table", self.params.get("sid.table")?);
                let rows = items
                    .iter()
                    .map(|&i| sid_hash(data.item_sids[i], hash_size))
                    .collect();
                Ok(g.gather_rows(table, rows))
            }
            FeaturePath::Side => {
                let omega = g.param("side.omega", self.params.get("side.omega")?);
                let mut side = Vec::with_capacity(items.len() * self.digits);
                for &i in items {
                    let v = side_embed(std::slice::from_ref(&data.scheme), &[data.item_sids[i]])
                        .map_err(|e| RankError::Shape(e.to_string()))?;
                    if v.len() != self.digits {
                        return Err(RankError::Shape(format!("SIDE length {} != {}", v.len(), self.digits)));
                    }
                    side.extend(v);
                }
                let x = g.constant(Tensor2::new(items.len(), self.digits, side)?);
                Ok(g.matmul(x, omega))
            }
        }
    }

    /// Builds logits (`B×1`) and the mean BCE loss for a batch of samples.
    fn build(
        &self,
        g: &mut Graph,
        data: &SyntheticEngagementSet,
        batch: &[usize],
    ) -> Result<(NodeId, NodeId), RankError> {
        let d = self.dim;
        let b = batch.len();
        let targets: Vec<usize> = batch.iter().map(|&i| data.samples[i].target).collect();
        let tf = self.features(g, data, &targets)?;
        let qw = g.param("query.w", self.params.get("query.w")?);
        let qb = g.param("query.b", self.params.get("query.b")?);
        let q = g.linear(tf, qw, qb);
        let hw = g.param("head.w", self.params.get("head.w")?);
        let hb = g.param("head.b", self.params.get("head.b")?);
        let logits = if self.history {
            let l = data.history_len();
            let events: Vec<usize> = batch
                .iter()
                .flat_map(|&i| data.histories[data.samples[i].user].iter().copied())
                .collect();
            let v = self.features(g, data, &events)?;
            let theta = g.param("pma.theta", self.params.get("pma.theta")?);
            let k = g.matmul(v, theta);
            let rep: Vec<usize> = (0..b).flat_map(|r| std::iter::repeat_n(r, l)).collect();
            let q_rep = g.gather_rows(q, rep);
            let qk = g.mul(q_rep, k);
            let scores = g.reduce(qk, crate::nn::Reduction::RowSums);
            let scores = g.scale(scores, 1.0 / (d as f32).sqrt());
            let scores = g.reshape(scores, b, l);
            let attn = g.softmax_rows(scores);
            let attn = g.reshape(attn, b * l, 1);
            let weighted = g.mul(attn, v);
            let weighted = g.reshape(weighted, b, l * d);
            // Block-sum over the history positions.
            let mut pool = Tensor2::zeros(l * d, d);
            for j in 0..l {
                for c in 0..d {
                    pool.set(j * d + c, c, 1.0);
                }
            }
            let pool = g.constant(pool);
            let u = g.matmul(weighted, pool);
            let uq = g.mul(u, q);
            let feats = g.concat(&[u, q, uq]);
            g.linear(feats, hw, hb)
        } else {
            g.linear(q, hw, hb)
        };
        let labels: Vec<f32> = batch.iter().map(|&i| data.samples[i].label).collect();
        let y = g.constant(Tensor2::column_vector(&labels));
        // BCE with logits: softplus(z) − y·z.
        let sp = g.softplus(logits);
        let yz = g.mul(y, logits);
        let per = g.sub(sp, yz);
        let loss = g.mean(per);
        Ok((logits, loss))
    }

    /// Click probabilities for the given samples.
    pub fn predict(&self, data: &SyntheticEngagementSet, samples: &[usize]) -> Result<Vec<f64>, RankError> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(1024) {
            let mut g = Graph::new();
            let (logits, _) = self.build(&mut g, data, chunk)?;
            g.forward(HashMap::new())?;
            let z = g.value(logits).expect("evaluated");
            out.extend(z.data().iter().map(|&z| 1.0 / (1.0 + (-(z as f64)).exp())));
        }
        Ok(out)
    }

    /// Adam on the mean BCE; returns the per-epoch mean training loss.
    ///
    /// With a validation set the parameters of the epoch with the lowest
    /// validation NE are kept.
    pub fn fit(
        &mut self,
        data: &SyntheticEngagementSet,
        train: &[usize],
        valid: Option<&[usize]>,
        cfg: &RankConfig,
    ) -> Result<Vec<f64>, RankError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00AB_7E57);
        let mut adam = AdamState::new(cfg.learning_rate);
        let mut order = train.to_vec();
        let mut losses = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, ParamStore)> = None;
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let mut g = Graph::new();
                let (_, loss) = self.build(&mut g, data, batch)?;
                let step = g
                    .forward(HashMap::new())
                    .and_then(|_| g.backward(loss))
                    .and_then(|grads| adam.step(&mut self.params, &grads));
                match step {
                    Ok(()) => {}
                    Err(NnError::NonFinite { .. } | NnError::NonFiniteGradient(_)) => {
                        return Err(RankError::Diverged {
                            variant: self.path.name(),
                            epoch,
                        })
                    }
                    Err(e) => return Err(e.into()),
                }
                total += g.value(loss).expect("evaluated").get(0, 0) as f64 * batch.len() as f64;
            }
            losses.push(total / order.len().max(1) as f64);
            if let Some(valid) = valid.filter(|v| !v.is_empty()) {
                let ne = self.score(data, valid)?.ne;
                debug!("{} epoch {epoch}: validation NE {ne:.5}", self.path.name());
                if best.as_ref().is_none_or(|(b, _)| ne < *b) {
                    best = Some((ne, self.params.clone()));
                }
            }
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        Ok(losses)
    }

    /// NE of the model's predictions on the given samples.
    pub fn score(&self, data: &SyntheticEngagementSet, samples: &[usize]) -> Result<NeReport, RankError> {
        let preds = self.predict(data, samples)?;
        let labels: Vec<f64> = samples.iter().map(|&i| data.samples[i].label as f64).collect();
        Ok(normalized_entropy(&labels, &preds)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: String,
    pub ne: NeReport,
    pub feature_params: usize,
    pub total_params: usize,
    /// NE gain over the no-history ablation, in percent (positive = better).
    pub gain_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbReport {
    pub baseline: NeReport,
    pub sid: VariantReport,
    pub side: VariantReport,
    pub hash_size: usize,
}

impl AbReport {
    /// Relative NE difference `(SIDE − SID)/SID`.
    pub fn side_vs_sid(&self) -> f64 {
        (self.side.ne.ne - self.sid.ne.ne) / self.sid.ne.ne
    }

    /// Rows `Click NE gain`, `Feature-path parameters`, columns per variant.
    pub fn markdown(&self) -> String {
        let mut out = String::from("| | SID (hashed, ");
        let _ = writeln!(out, "{}) | SIDE |", self.hash_size);
        out.push_str("|---|---|---|\n");
        let _ = writeln!(
            out,
            "| Click NE gain | {:+.3}% | {:+.3}% |",
            self.sid.gain_percent, self.side.gain_percent
        );
        let _ = writeln!(out, "| Click NE | {:.5} | {:.5} |", self.sid.ne.ne, self.side.ne.ne);
        let _ = writeln!(
            out,
            "| Parameter count (feature path) | {} | {} |",
            self.sid.feature_params, self.side.feature_params
        );
        let _ = writeln!(out, "| Variant | sid | side |");
        let _ = writeln!(out, "\nNo-history baseline NE: {:.5}", self.baseline.ne);
        out
    }
}

fn train_and_score(
    data: &SyntheticEngagementSet,
    path: FeaturePath,
    history: bool,
    split: &(Vec<usize>, Vec<usize>),
    cfg: &RankConfig,
) -> Result<(NeReport, ToyRankingModel), RankError> {
    let mut model = ToyRankingModel::new(path, history, cfg.dim, data.digits(), cfg.seed)?;
    // One more user fold of the training split picks the epoch.
    let (fit, valid): (Vec<usize>, Vec<usize>) = split
        .0
        .iter()
        .partition(|&&i| data.samples[i].user % cfg.holdout_folds != 1);
    model.fit(data, &fit, Some(&valid), cfg)?;
    Ok((model.score(data, &split.1)?, model))
}

/// Trains the SID and SIDE variants and a no-history ablation (on SIDE
/// features) on the same split with the same seeds, and reports test NE.
pub fn run_ab(data: &SyntheticEngagementSet, hash_size: usize, cfg: &RankConfig) -> Result<AbReport, RankError> {
    cfg.validate()?;
    let split = data.split(cfg.holdout_folds, 0);
    if split.0.is_empty() || split.1.is_empty() {
        return Err(RankError::Config("too few users for a train/test split".into()));
    }
    let ((sid, side), base) = rayon::join(
        || {
            rayon::join(
                || train_and_score(data, FeaturePath::Sid { hash_size }, true, &split, cfg),
                || train_and_score(data, FeaturePath::Side, true, &split, cfg),
            )
        },
        || train_and_score(data, FeaturePath::Side, false, &split, cfg),
    );
    let (sid, sid_model) = sid?;
    let (side, side_model) = side?;
    let (baseline, _) = base?;
    let variant = |name: &str, ne: NeReport, m: &ToyRankingModel| VariantReport {
        variant: name.to_string(),
        gain_percent: 100.0 * (baseline.ne - ne.ne) / baseline.ne,
        ne,
        feature_params: m.feature_param_count(),
        total_params: m.param_count(),
    };
    let report = AbReport {
        sid: variant("sid", sid, &sid_model),
        side: variant("side", side, &side_model),
        baseline,
        hash_size,
    };
    info!(
        "A/B hash {}: baseline NE {:.5}, SID {:.5}, SIDE {:.5}",
        hash_size, report.baseline.ne, report.sid.ne.ne, report.side.ne.ne
    );
    Ok(report)
}

#[cfg(test)]
mod tests;
