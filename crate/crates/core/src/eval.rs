//! Metrics: cosine reconstruction loss, exhaustive kNN ground truth with
//! Recall@k, and Normalized Entropy.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::nn::Tensor2;

/// Predictions are clipped to `[CLIP, 1 − CLIP]` before taking logs.
pub const NE_CLIP: f64 = 1e-7;
pub const DEFAULT_KS: [usize; 3] = [20, 50, 100];
pub const DEFAULT_GT_DEPTH: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {row} of {which} has zero norm")]
    ZeroNorm { row: usize, which: &'static str },
    #[error("depth {depth} is invalid for a corpus of {rows} rows")]
    Depth { depth: usize, rows: usize },
    #[error("query index {index} is outside the corpus of {rows} rows")]
    QueryIndex { index: usize, rows: usize },
    #[error("query {query} has {len} candidates, {needed} required")]
    ShortCandidates { query: usize, len: usize, needed: usize },
    #[error("labels contain a single class; prior entropy is zero")]
    SingleClass,
    #[error("label {value} at index {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("prediction {value} at index {index} is not a finite number")]
    BadPrediction { index: usize, value: f64 },
    #[error("empty input")]
    Empty,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Per-row `1 − cos(x_i, x̂_i)`.
pub fn cosine_losses(x: &Tensor2, x_hat: &Tensor2) -> Result<Vec<f64>, EvalError> {
    if x.shape() != x_hat.shape() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    (0..x.rows())
        .map(|r| {
            let (a, b) = (x.row(r), x_hat.row(r));
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 {
                return Err(EvalError::ZeroNorm { row: r, which: "x" });
            }
            if nb == 0.0 {
                return Err(EvalError::ZeroNorm { row: r, which: "reconstruction" });
            }
            Ok(1.0 - dot64(a, b) / (na * nb))
        })
        .collect()
}

/// Mean over rows of `1 − cos(x_i, x̂_i)`.
pub fn cosine_recon_loss(x: &Tensor2, x_hat: &Tensor2) -> Result<f64, EvalError> {
    if x.rows() == 0 {
        return Err(EvalError::Empty);
    }
    let losses = cosine_losses(x, x_hat)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Exhaustive cosine top-`depth` neighbours of corpus rows `queries` within
/// the same corpus, excluding the query itself. Ties go to the lower index;
/// zero-norm rows have similarity 0 to everything.
pub fn knn_search(space: &Tensor2, queries: &[usize], depth: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    let rows = space.rows();
    if depth == 0 || depth + 1 > rows {
        return Err(EvalError::Depth { depth, rows });
    }
    if let Some(&index) = queries.iter().find(|&&q| q >= rows) {
        return Err(EvalError::QueryIndex { index, rows });
    }
    let inv: Vec<f64> = space
        .iter_rows()
        .map(|r| {
            let n = norm(r);
            if n > 0.0 {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(queries
        .par_iter()
        .map(|&q| {
            let qv = space.row(q);
            let mut scored: Vec<(f64, usize)> = (0..rows)
                .filter(|&i| i != q)
                .map(|i| (dot64(qv, space.row(i)) * inv[i] * inv[q], i))
                .collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
            if depth < scored.len() {
                scored.select_nth_unstable_by(depth - 1, order);
                scored.truncate(depth);
            }
            scored.sort_by(order);
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect())
}

/// Exact nearest neighbours on the raw embeddings.
pub fn knn_ground_truth(corpus: &Tensor2, queries: &[usize], depth: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    knn_search(corpus, queries, depth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub queries: usize,
    pub gt_depth: usize,
}

impl RecallReport {
    pub fn is_monotone(&self) -> bool {
        self.recall.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }
}

/// `|gt ∩ candidates[..k]| / |gt|`, averaged over queries.
pub fn recall_at_k(gt: &[Vec<usize>], candidates: &[Vec<usize>], ks: &[usize]) -> Result<RecallReport, EvalError> {
    if gt.len() != candidates.len() {
        return Err(EvalError::Shape(format!(
            "{} ground-truth lists vs {} candidate lists",
            gt.len(),
            candidates.len()
        )));
    }
    if gt.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    let needed = ks.last().copied().unwrap_or(0);
    if let Some((query, c)) = candidates.iter().enumerate().find(|(_, c)| c.len() < needed) {
        return Err(EvalError::ShortCandidates {
            query,
            len: c.len(),
            needed,
        });
    }
    let gt_depth = gt[0].len();
    let mut recall = vec![0.0f64; ks.len()];
    for (truth, cand) in gt.iter().zip(candidates) {
        if truth.is_empty() {
            return Err(EvalError::Empty);
        }
        let truth: std::collections::HashSet<usize> = truth.iter().copied().collect();
        for (slot, &k) in recall.iter_mut().zip(&ks) {
            let hits = cand[..k].iter().filter(|i| truth.contains(i)).count();
            *slot += hits as f64 / truth.len() as f64;
        }
    }
    for r in &mut recall {
        *r /= gt.len() as f64;
    }
    let report = RecallReport {
        ks,
        recall,
        queries: gt.len(),
        gt_depth,
    };
    debug_assert!(report.is_monotone(), "prefix candidate sets must give monotone recall");
    Ok(report)
}

/// Expected Recall@k of `k` uniformly random candidates from a corpus of
/// `rows` (self excluded).
pub fn random_recall(k: usize, rows: usize) -> f64 {
    k as f64 / (rows - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeReport {
    pub ne: f64,
    pub samples: usize,
    pub prior: f64,
    pub mean_log_loss: f64,
}

/// Mean log-loss divided by the entropy of the empirical positive rate.
pub fn normalized_entropy(labels: &[f64], predictions: &[f64]) -> Result<NeReport, EvalError> {
    if labels.len() != predictions.len() {
        return Err(EvalError::Shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut positives = 0usize;
    let mut loss = 0.0f64;
    for (index, (&y, &p)) in labels.iter().zip(predictions).enumerate() {
        if y != 0.0 && y != 1.0 {
            return Err(EvalError::NonBinaryLabel { index, value: y });
        }
        if !p.is_finite() {
            return Err(EvalError::BadPrediction { index, value: p });
        }
        let p = p.clamp(NE_CLIP, 1.0 - NE_CLIP);
        if y == 1.0 {
            positives += 1;
            loss -= p.ln();
        } else {
            loss -= (1.0 - p).ln();
        }
    }
    let n = labels.len();
    if positives == 0 || positives == n {
        return Err(EvalError::SingleClass);
    }
    let prior = positives as f64 / n as f64;
    let mean_log_loss = loss / n as f64;
    let prior_entropy = -(prior * prior.ln() + (1.0 - prior) * (1.0 - prior).ln());
    Ok(NeReport {
        ne: mean_log_loss / prior_entropy,
        samples: n,
        prior,
        mean_log_loss,
    })
}

/// Relative change in percent, `100 · (value − reference) / reference`.
pub fn delta_percent(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// One row of a reconstruction comparison: a task's loss with its own
/// (1:1) quantizer and with the shared fused quantizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconRow {
    pub quantizer: String,
    pub task: String,
    pub isolated: f64,
    pub fused: f64,
}

impl ReconRow {
    pub fn delta_percent(&self) -> f64 {
        delta_percent(self.fused, self.isolated)
    }
}

pub fn recon_table(rows: &[ReconRow]) -> String {
    let mut out = String::from("| Quantizer | Task | 1:1 | Fusion | Δ% |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:+.2} |",
            r.quantizer,
            r.task,
            r.isolated,
            r.fused,
            r.delta_percent()
        );
    }
    out
}

pub fn recall_table(rows: &[(String, RecallReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let mut out = String::from("| Method |");
    for k in &first.ks {
        let _ = write!(out, " R@{k} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(first.ks.len()));
    out.push('\n');
    for (name, rep) in rows {
        let _ = write!(out, "| {name} |");
        for r in &rep.recall {
            let _ = write!(out, " {r:.4} |");
        }
        out.push('\n');
    }
    out
}
