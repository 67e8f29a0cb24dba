use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{FusionError, FusionModel, LossWeights, QuantizerSpec};
use crate::io::{write_atomic, FormatError};
use crate::nn::{AdamState, Graph, NnError, Tensor2};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Commitment weight β.
    pub commitment: f32,
    pub codebook_weight: f32,
    /// Probability that a batch decodes from a random prefix depth
    /// `d' ~ U{1..D}` instead of the full DPCA stack.
    pub dropout: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            commitment: 0.25,
            codebook_weight: 1.0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.commitment >= 0.0) || !(self.codebook_weight >= 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(format!("dropout probability must be in [0, 1], got {}", self.dropout));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            commitment: self.commitment,
            codebook: self.codebook_weight,
        }
    }
}

/// Per-epoch losses. Epoch 0 is the untrained model evaluated on all data;
/// later epochs average the training batches, weighted by batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub tasks: Vec<f64>,
    pub commitment: f64,
    pub codebook: f64,
}

impl LossRecord {
    fn zero(epoch: usize, tasks: usize) -> Self {
        Self {
            epoch,
            total: 0.0,
            tasks: vec![0.0; tasks],
            commitment: 0.0,
            codebook: 0.0,
        }
    }

    fn accumulate(&mut self, g: &Graph, h: &super::Handles, weight: f64) {
        let v = |id| g.value(id).expect("evaluated").get(0, 0) as f64 * weight;
        self.total += v(h.total);
        for (t, &id) in self.tasks.iter_mut().zip(&h.task_losses) {
            *t += v(id);
        }
        if let Some(c) = h.commitment {
            self.commitment += v(c);
        }
        if let Some(c) = h.codebook {
            self.codebook += v(c);
        }
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.tasks.iter_mut().for_each(|t| *t *= s);
        self.commitment *= s;
        self.codebook *= s;
    }
}

/// Loss of the model on all samples at a prefix depth, without updating.
pub fn evaluate(model: &FusionModel, data: &[&Tensor2], depth: usize, cfg: &TrainConfig) -> Result<LossRecord, FusionError> {
    let rows = model.check_inputs(data)?;
    let mut rec = LossRecord::zero(0, model.spec.tasks.len());
    if rows == 0 {
        return Ok(rec);
    }
    for chunk in super::chunks(rows) {
        let mut g = Graph::new();
        let h = model.build(&mut g, depth, cfg.weights())?;
        g.forward(FusionModel::bind(data, &chunk))?;
        rec.accumulate(&g, &h, chunk.len() as f64);
    }
    rec.scale(1.0 / rows as f64);
    Ok(rec)
}

/// Trains end to end with Adam and straight-through gradients.
///
/// On a non-finite loss or gradient the parameters are restored to the end
/// of the last completed epoch and [`FusionError::Diverged`] is returned.
pub fn train(model: &mut FusionModel, data: &[&Tensor2], cfg: &TrainConfig) -> Result<Vec<LossRecord>, FusionError> {
    cfg.validate().map_err(FusionError::Spec)?;
    let rows = model.check_inputs(data)?;
    if rows == 0 {
        return Err(FusionError::Spec("training needs at least one sample".into()));
    }
    let full_depth = model.spec.depth();
    let dpca = matches!(model.spec.quantizer, QuantizerSpec::Dpca { .. });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_F0_5105);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut history = vec![evaluate(model, data, full_depth, cfg)?];
    let mut order: Vec<usize> = (0..rows).collect();
    for epoch in 1..=cfg.epochs {
        let last_good = model.params.clone();
        order.shuffle(&mut rng);
        let mut rec = LossRecord::zero(epoch, model.spec.tasks.len());
        for batch in order.chunks(cfg.batch_size) {
            let depth = if dpca && cfg.dropout > 0.0 && rng.random::<f32>() < cfg.dropout {
                rng.random_range(1..=full_depth)
            } else {
                full_depth
            };
            let mut g = Graph::new();
            let h = model.build(&mut g, depth, cfg.weights())?;
            let step = g
                .forward(FusionModel::bind(data, batch))
                .and_then(|_| g.backward(h.total))
                .and_then(|grads| adam.step(&mut model.params, &grads));
            match step {
                Ok(()) => {}
                Err(NnError::NonFinite { .. } | NnError::NonFiniteGradient(_)) => {
                    model.params = last_good;
                    return Err(FusionError::Diverged { epoch });
                }
                Err(e) => return Err(e.into()),
            }
            rec.accumulate(&g, &h, batch.len() as f64);
        }
        rec.scale(1.0 / rows as f64);
        if !rec.total.is_finite() {
            model.params = last_good;
            return Err(FusionError::Diverged { epoch });
        }
        debug!("epoch {epoch}: loss {:.5}", rec.total);
        history.push(rec);
    }
    if let Some(last) = history.last() {
        info!("trained {} epochs, final loss {:.5}", cfg.epochs, last.total);
    }
    Ok(history)
}

/// `epoch,total,<task names>,commitment,codebook`.
pub fn history_csv(task_names: &[&str], history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,total");
    for n in task_names {
        let _ = write!(out, ",{n}");
    }
    out.push_str(",commitment,codebook\n");
    for r in history {
        let _ = write!(out, "{},{}", r.epoch, r.total);
        for t in &r.tasks {
            let _ = write!(out, ",{t}");
        }
        let _ = writeln!(out, ",{},{}", r.commitment, r.codebook);
    }
    out
}

pub fn write_history_csv(path: &Path, task_names: &[&str], history: &[LossRecord]) -> Result<(), FormatError> {
    write_atomic(path, history_csv(task_names, history).as_bytes())
}
