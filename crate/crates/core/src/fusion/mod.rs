//! VQ-fusion: a multi-input, multi-output autoencoder with a quantized
//! bottleneck.
//!
//! Each signal `x_k` passes through its own encoder `e_k`; the fusion layer
//! `f` maps the concatenated encodings to the latent `h`. The quantizer
//! produces `ĥ`, and the straight-through surrogate `s = h − sg(h − ĥ)` feeds
//! a shared trunk `r` followed by per-task heads `g_k`, so `x̂_k = g_k(r(s))`.
//!
//! Parameter names: `enc{k}.0`, `enc{k}.1`, `fuse`, `trunk`, `head{k}.0`,
//! `head{k}.1` (each with `.w` / `.b`), and `dpca.g{g}.d{d}.{u,b}`.

pub(crate) mod train;

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::nn::{CustomOp, Graph, NnError, NodeId, ParamStore, Reduction, Tensor2};
use crate::quant::dpca::{decode_prefix, param_name, DPCA_BASE, DPCA_OFFSET};
use crate::quant::{dpca_encode, CodewordVector, DpcaStack, FsqConfig, QuantError};
use crate::sid::{pack_code, SidError, SidFile, SidScheme};

pub use train::{evaluate, train, write_history_csv, LossRecord, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("expected {expected} input signals, got {actual}")]
    SignalCount { expected: usize, actual: usize },
    #[error("signal {signal}: {detail}")]
    Input { signal: usize, detail: String },
    #[error("task {task}: sample {row} has a zero-norm target in the cosine loss")]
    ZeroNorm { task: usize, row: usize },
    #[error("training diverged at epoch {epoch}; parameters restored to the last good epoch")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sid(#[from] SidError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TaskLoss {
    /// `1 − cos(x, x̂)`.
    Cosine,
    Mse,
    /// `x` is a one-hot (or soft) target, `x̂` are logits.
    CrossEntropy,
}

impl TaskLoss {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::Mse => "mse",
            Self::CrossEntropy => "ce",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub dim: usize,
    pub loss: TaskLoss,
    pub weight: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizerSpec {
    /// No quantization: `ĥ = h`.
    Identity,
    /// `tanh`-bounded latent snapped to `levels` per dimension.
    Fsq { levels: u32 },
    /// Discrete-PCA with `groups` product groups of `depth` ternary layers.
    Dpca { depth: usize, groups: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    pub tasks: Vec<TaskSpec>,
    /// Hidden width of encoders, trunk and heads.
    pub hidden: usize,
    /// Latent width `m`.
    pub latent: usize,
    pub quantizer: QuantizerSpec,
}

impl FusionSpec {
    /// Cosine tasks with equal weights `1/n`.
    pub fn cosine(dims: &[usize], hidden: usize, latent: usize, quantizer: QuantizerSpec) -> Self {
        let w = 1.0 / dims.len().max(1) as f32;
        Self {
            tasks: dims
                .iter()
                .enumerate()
                .map(|(k, &dim)| TaskSpec {
                    name: format!("signal{k}"),
                    dim,
                    loss: TaskLoss::Cosine,
                    weight: w,
                })
                .collect(),
            hidden,
            latent,
            quantizer,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::Spec(m));
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if self.tasks.iter().any(|t| t.dim == 0) {
            return bad("task dimensions must be positive".into());
        }
        if self.tasks.iter().any(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return bad("task weights must be finite and non-negative".into());
        }
        if self.tasks.iter().map(|t| t.weight).sum::<f32>() <= 0.0 {
            return bad("task weights must not all be zero".into());
        }
        if self.hidden == 0 || self.latent == 0 {
            return bad("hidden and latent widths must be positive".into());
        }
        match self.quantizer {
            QuantizerSpec::Fsq { levels } if levels < 2 => bad(format!("FSQ needs at least 2 levels, got {levels}")),
            QuantizerSpec::Dpca { depth, groups } if depth == 0 || groups == 0 => {
                bad("DPCA depth and groups must be positive".into())
            }
            QuantizerSpec::Dpca { groups, .. } if self.latent % groups != 0 => {
                bad(format!("latent {} is not divisible by {groups} groups", self.latent))
            }
            _ => Ok(()),
        }
    }

    /// Digits per code.
    pub fn code_len(&self) -> usize {
        match self.quantizer {
            QuantizerSpec::Identity => 0,
            QuantizerSpec::Fsq { .. } => self.latent,
            QuantizerSpec::Dpca { depth, groups } => depth * groups,
        }
    }

    /// Digit base of the codes.
    pub fn code_base(&self) -> u32 {
        match self.quantizer {
            QuantizerSpec::Fsq { levels } => levels,
            _ => DPCA_BASE,
        }
    }

    pub fn bits(&self) -> f64 {
        self.code_len() as f64 * (self.code_base() as f64).log2()
    }

    /// Residual depth; 1 for quantizers without one.
    pub fn depth(&self) -> usize {
        match self.quantizer {
            QuantizerSpec::Dpca { depth, .. } => depth,
            _ => 1,
        }
    }
}

/// Snaps an already-bounded latent to the FSQ grid values.
#[derive(Debug)]
struct FsqSnap(FsqConfig);

impl CustomOp for FsqSnap {
    fn name(&self) -> &str {
        "fsq-snap"
    }
    fn forward(&self, inputs: &[&Tensor2]) -> Result<Tensor2, String> {
        Ok(inputs[0].map(|u| self.0.level_value(self.0.snap(u))))
    }
}

/// Ternary DPCA weights `{-1, 0, 1}` for each row of `h`, group-major.
/// Inputs: `h`, then `u`, `b` for every `(group, depth)`.
#[derive(Debug)]
struct DpcaCodes {
    groups: usize,
    depth: usize,
}

impl CustomOp for DpcaCodes {
    fn name(&self) -> &str {
        "dpca-codes"
    }
    fn forward(&self, inputs: &[&Tensor2]) -> Result<Tensor2, String> {
        let h = inputs[0];
        let n = self.groups * self.depth;
        if inputs.len() != 1 + 2 * n {
            return Err(format!("expected {} inputs, got {}", 1 + 2 * n, inputs.len()));
        }
        let comps = (0..n).map(|i| inputs[1 + 2 * i].data().to_vec()).collect();
        let offs = (0..n).map(|i| inputs[2 + 2 * i].data().to_vec()).collect();
        let stack = DpcaStack::new(self.groups, self.depth, comps, offs).map_err(|e| e.to_string())?;
        let rows: Result<Vec<Vec<f32>>, String> = (0..h.rows())
            .into_par_iter()
            .map(|r| {
                let enc = dpca_encode(&stack, h.row(r)).map_err(|e| e.to_string())?;
                Ok(enc.codes.centered(DPCA_OFFSET).into_iter().map(|c| c as f32).collect())
            })
            .collect();
        let data: Vec<f32> = rows?.into_iter().flatten().collect();
        Tensor2::new(h.rows(), n, data).map_err(|e| e.to_string())
    }
}

/// Node handles of one forward graph.
#[derive(Debug, Clone)]
pub(crate) struct Handles {
    pub h: NodeId,
    #[cfg_attr(not(test), allow(dead_code))]
    pub h_hat: NodeId,
    #[cfg_attr(not(test), allow(dead_code))]
    pub s: NodeId,
    /// Centered DPCA weights, `B × (groups·depth)`.
    pub codes: Option<NodeId>,
    pub recon: Vec<NodeId>,
    pub task_losses: Vec<NodeId>,
    pub commitment: Option<NodeId>,
    pub codebook: Option<NodeId>,
    pub total: NodeId,
}

/// Loss weights that are not part of the model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LossWeights {
    pub commitment: f32,
    pub codebook: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    spec: FusionSpec,
    params: ParamStore,
}

impl FusionModel {
    /// Glorot-initialized MLPs; DPCA components start as random directions
    /// with norms halving per depth, offsets at zero.
    pub fn new(spec: FusionSpec, seed: u64) -> Result<Self, FusionError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let hd = spec.hidden;
        for (k, t) in spec.tasks.iter().enumerate() {
            p.init_linear(&format!("enc{k}.0"), t.dim, hd, &mut rng);
            p.init_linear(&format!("enc{k}.1"), hd, hd, &mut rng);
        }
        p.init_linear("fuse", hd * spec.tasks.len(), spec.latent, &mut rng);
        p.init_linear("trunk", spec.latent, hd, &mut rng);
        for (k, t) in spec.tasks.iter().enumerate() {
            p.init_linear(&format!("head{k}.0"), hd, hd, &mut rng);
            p.init_linear(&format!("head{k}.1"), hd, t.dim, &mut rng);
        }
        // A small positive bias keeps the relu layers live when the quantized
        // latent starts at exactly zero (every FSQ digit in its centre bin).
        for (name, t) in p.clone().iter() {
            let relu_layer = name.starts_with("enc") || name.starts_with("trunk") || name.ends_with(".0.b");
            if relu_layer && name.ends_with(".b") {
                p.insert(name.clone(), Tensor2::full(1, t.cols(), RELU_BIAS));
            }
        }
        if let QuantizerSpec::Dpca { depth, groups } = spec.quantizer {
            let width = spec.latent / groups;
            for g in 0..groups {
                for d in 0..depth {
                    let mut u: Vec<f32> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = u.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-6);
                    let target = 0.5f32.powi(d as i32);
                    u.iter_mut().for_each(|x| *x *= target / norm);
                    p.insert(param_name(g, d, 'u'), Tensor2::row_vector(&u));
                    p.insert(param_name(g, d, 'b'), Tensor2::zeros(1, width));
                }
            }
        }
        Ok(Self { spec, params: p })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(spec: FusionSpec, params: ParamStore) -> Result<Self, FusionError> {
        let reference = Self::new(spec.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(FusionError::Spec(format!(
                    "parameter '{name}' is {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(FusionError::Spec(format!(
                "checkpoint has {} tensors, model expects {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn dpca_stack(&self) -> Option<DpcaStack> {
        match self.spec.quantizer {
            QuantizerSpec::Dpca { depth, groups } => DpcaStack::from_params(&self.params, groups, depth).ok(),
            _ => None,
        }
    }

    fn fsq(&self) -> Option<FsqConfig> {
        match self.spec.quantizer {
            QuantizerSpec::Fsq { levels } => FsqConfig::new(self.spec.latent, levels).ok(),
            _ => None,
        }
    }

    pub(crate) fn check_inputs(&self, data: &[&Tensor2]) -> Result<usize, FusionError> {
        if data.len() != self.spec.tasks.len() {
            return Err(FusionError::SignalCount {
                expected: self.spec.tasks.len(),
                actual: data.len(),
            });
        }
        let rows = data[0].rows();
        for (k, (x, t)) in data.iter().zip(&self.spec.tasks).enumerate() {
            if x.cols() != t.dim {
                return Err(FusionError::Input {
                    signal: k,
                    detail: format!("dimension {} does not match the model's {}", x.cols(), t.dim),
                });
            }
            if x.rows() != rows {
                return Err(FusionError::Input {
                    signal: k,
                    detail: format!("{} rows, signal 0 has {rows}", x.rows()),
                });
            }
            if t.loss == TaskLoss::Cosine {
                if let Some(row) = x.iter_rows().position(|r| r.iter().all(|&v| v == 0.0)) {
                    return Err(FusionError::ZeroNorm { task: k, row });
                }
            }
        }
        Ok(rows)
    }

    fn mlp_layer(&self, g: &mut Graph, x: NodeId, prefix: &str, relu: bool) -> Result<NodeId, FusionError> {
        let w = g.param(&format!("{prefix}.w"), self.params.get(&format!("{prefix}.w"))?);
        let b = g.param(&format!("{prefix}.b"), self.params.get(&format!("{prefix}.b"))?);
        let y = g.linear(x, w, b);
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Trunk and heads applied to a latent node.
    fn decoder(&self, g: &mut Graph, s: NodeId) -> Result<Vec<NodeId>, FusionError> {
        let trunk = self.mlp_layer(g, s, "trunk", true)?;
        (0..self.spec.tasks.len())
            .map(|k| {
                let hidden = self.mlp_layer(g, trunk, &format!("head{k}.0"), true)?;
                self.mlp_layer(g, hidden, &format!("head{k}.1"), false)
            })
            .collect()
    }

    /// Builds the full graph. `depth` truncates the DPCA reconstruction to a
    /// prefix of residual layers.
    pub(crate) fn build(&self, g: &mut Graph, depth: usize, weights: LossWeights) -> Result<Handles, FusionError> {
        let n = self.spec.tasks.len();
        let inputs: Vec<NodeId> = (0..n).map(|k| g.input(&format!("x{k}"))).collect();
        let mut encoded = Vec::with_capacity(n);
        for (k, &x) in inputs.iter().enumerate() {
            let a = self.mlp_layer(g, x, &format!("enc{k}.0"), true)?;
            encoded.push(self.mlp_layer(g, a, &format!("enc{k}.1"), true)?);
        }
        let joined = if n == 1 { encoded[0] } else { g.concat(&encoded) };
        let pre = self.mlp_layer(g, joined, "fuse", false)?;
        let mut codes = None;
        let (h, h_hat) = match self.spec.quantizer {
            QuantizerSpec::Identity => (pre, pre),
            QuantizerSpec::Fsq { .. } => {
                let h = g.tanh(pre);
                let snapped = g.custom(Arc::new(FsqSnap(self.fsq().expect("fsq spec"))), &[h]);
                (h, snapped)
            }
            QuantizerSpec::Dpca { depth: full, groups } => {
                let width = self.spec.latent / groups;
                let mut args = vec![pre];
                let mut ub = Vec::with_capacity(groups * full);
                for gi in 0..groups {
                    for d in 0..full {
                        let un = param_name(gi, d, 'u');
                        let bn = param_name(gi, d, 'b');
                        let u = g.param(&un, self.params.get(&un)?);
                        let b = g.param(&bn, self.params.get(&bn)?);
                        args.extend([u, b]);
                        ub.push((u, b));
                    }
                }
                let c = g.custom(Arc::new(DpcaCodes { groups, depth: full }), &args);
                codes = Some(c);
                let active = depth.clamp(1, full);
                let mut parts = Vec::with_capacity(groups);
                for gi in 0..groups {
                    let mut acc: Option<NodeId> = None;
                    for d in 0..active {
                        let col = gi * full + d;
                        let s = g.slice(c, col, col + 1);
                        let (u, b) = ub[gi * full + d];
                        let su = g.mul(s, u);
                        let term = g.add(su, b);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => g.add(a, term),
                        });
                    }
                    let part = acc.expect("active depth ≥ 1");
                    debug_assert_eq!(width, self.params.get(&param_name(gi, 0, 'u'))?.cols());
                    parts.push(part);
                }
                let h_hat = if groups == 1 { parts[0] } else { g.concat(&parts) };
                (pre, h_hat)
            }
        };
        let s = if h == h_hat { h } else { g.straight_through(h, h_hat) };
        let recon = self.decoder(g, s)?;

        let mut task_losses = Vec::with_capacity(n);
        let mut total: Option<NodeId> = None;
        for (k, t) in self.spec.tasks.iter().enumerate() {
            let (x, y) = (inputs[k], recon[k]);
            let loss = match t.loss {
                TaskLoss::Cosine => {
                    let yn = g.normalize_rows_eps(y, COSINE_EPS);
                    let xn = g.normalize_rows(x);
                    let prod = g.mul(yn, xn);
                    let cos = g.reduce(prod, Reduction::RowSums);
                    let mean = g.mean(cos);
                    let one = g.constant(Tensor2::scalar(1.0));
                    g.sub(one, mean)
                }
                TaskLoss::Mse => {
                    let d = g.sub(y, x);
                    let sq = g.mul(d, d);
                    g.mean(sq)
                }
                TaskLoss::CrossEntropy => {
                    let ls = g.log_softmax_rows(y);
                    let prod = g.mul(x, ls);
                    let rows = g.reduce(prod, Reduction::RowSums);
                    let mean = g.mean(rows);
                    g.scale(mean, -1.0)
                }
            };
            g.label(loss, &format!("task {k} loss"));
            task_losses.push(loss);
            let weighted = g.scale(loss, t.weight);
            total = Some(match total {
                None => weighted,
                Some(a) => g.add(a, weighted),
            });
        }
        let mut total = total.expect("at least one task");
        let (mut commitment, mut codebook) = (None, None);
        if matches!(self.spec.quantizer, QuantizerSpec::Dpca { .. }) {
            let frozen_hat = g.stop_gradient(h_hat);
            let d = g.sub(h, frozen_hat);
            let sq = g.mul(d, d);
            let c = g.mean(sq);
            let frozen_h = g.stop_gradient(h);
            let d = g.sub(frozen_h, h_hat);
            let sq = g.mul(d, d);
            let cb = g.mean(sq);
            let wc = g.scale(c, weights.commitment);
            let wb = g.scale(cb, weights.codebook);
            total = g.add(total, wc);
            total = g.add(total, wb);
            commitment = Some(c);
            codebook = Some(cb);
        }
        Ok(Handles {
            h,
            h_hat,
            s,
            codes,
            recon,
            task_losses,
            commitment,
            codebook,
            total,
        })
    }

    pub(crate) fn bind(data: &[&Tensor2], rows: &[usize]) -> HashMap<String, Tensor2> {
        data.iter()
            .enumerate()
            .map(|(k, x)| (format!("x{k}"), x.select_rows(rows)))
            .collect()
    }

    /// Quantizer codes for every sample, in input order.
    pub fn encode_codes(&self, data: &[&Tensor2]) -> Result<Vec<CodewordVector>, FusionError> {
        let rows = self.check_inputs(data)?;
        let mut out = Vec::with_capacity(rows);
        for chunk in chunks(rows) {
            let mut g = Graph::new();
            let hd = self.build(&mut g, usize::MAX, LossWeights { commitment: 0.0, codebook: 0.0 })?;
            g.forward(Self::bind(data, &chunk))?;
            match self.spec.quantizer {
                QuantizerSpec::Identity => {
                    return Err(FusionError::Spec("an identity quantizer has no codes".into()));
                }
                QuantizerSpec::Fsq { .. } => {
                    let cfg = self.fsq().expect("fsq");
                    let v = g.value(hd.h).expect("evaluated");
                    for r in v.iter_rows() {
                        let levels = r.iter().map(|&u| cfg.snap(u)).collect();
                        out.push(CodewordVector::new(levels, cfg.levels())?);
                    }
                }
                QuantizerSpec::Dpca { .. } => {
                    let c = g.value(hd.codes.expect("dpca codes")).expect("evaluated");
                    for r in c.iter_rows() {
                        let centered: Vec<i32> = r.iter().map(|&v| v as i32).collect();
                        out.push(CodewordVector::from_centered(&centered, DPCA_BASE, DPCA_OFFSET)?);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Pre-quantization latents `h`, `B × m`.
    pub fn latents(&self, data: &[&Tensor2]) -> Result<Tensor2, FusionError> {
        let rows = self.check_inputs(data)?;
        let mut out = Vec::with_capacity(rows * self.spec.latent);
        for chunk in chunks(rows) {
            let mut g = Graph::new();
            let hd = self.build(&mut g, usize::MAX, LossWeights { commitment: 0.0, codebook: 0.0 })?;
            g.forward(Self::bind(data, &chunk))?;
            out.extend_from_slice(g.value(hd.h).expect("evaluated").data());
        }
        Ok(Tensor2::new(rows, self.spec.latent, out)?)
    }

    /// One SID record per sample: codes split into `ngram`-digit grams.
    pub fn encode_corpus(&self, data: &[&Tensor2], ngram: usize) -> Result<SidFile, FusionError> {
        let scheme = SidScheme::new(self.spec.code_base(), ngram)?;
        let codes = self.encode_codes(data)?;
        let records = codes.iter().map(|c| pack_code(&scheme, c)).collect::<Result<Vec<_>, _>>()?;
        Ok(SidFile {
            scheme,
            grams: scheme.grams_for(self.spec.code_len()),
            records,
        })
    }

    /// Quantized latents `ĥ` from codes, optionally truncated to a DPCA
    /// prefix depth.
    pub fn code_latents(&self, codes: &[CodewordVector], depth: usize) -> Result<Tensor2, FusionError> {
        let m = self.spec.latent;
        let mut data = Vec::with_capacity(codes.len() * m);
        match self.spec.quantizer {
            QuantizerSpec::Identity => return Err(FusionError::Spec("an identity quantizer has no codes".into())),
            QuantizerSpec::Fsq { .. } => {
                let cfg = self.fsq().expect("fsq");
                for c in codes {
                    if c.len() != m || c.base() != cfg.levels() {
                        return Err(QuantError::CodeLength { expected: m, actual: c.len() }.into());
                    }
                    data.extend(c.levels().iter().map(|&l| cfg.level_value(l)));
                }
            }
            QuantizerSpec::Dpca { depth: full, .. } => {
                let stack = self.dpca_stack().ok_or_else(|| FusionError::Spec("missing DPCA parameters".into()))?;
                for c in codes {
                    data.extend(decode_prefix(&stack, c, depth.clamp(1, full))?);
                }
            }
        }
        Ok(Tensor2::new(codes.len(), m, data)?)
    }

    /// Runs trunk and heads on latents `B × m`.
    pub fn decode_latents(&self, latents: &Tensor2) -> Result<Vec<Tensor2>, FusionError> {
        if latents.cols() != self.spec.latent {
            return Err(FusionError::Spec(format!(
                "latent width {} does not match the model's {}",
                latents.cols(),
                self.spec.latent
            )));
        }
        let n = self.spec.tasks.len();
        let mut outs: Vec<Vec<f32>> = vec![Vec::new(); n];
        for chunk in chunks(latents.rows()) {
            let mut g = Graph::new();
            let z = g.input("z");
            let heads = self.decoder(&mut g, z)?;
            for (k, &h) in heads.iter().enumerate() {
                g.output(&format!("y{k}"), h);
            }
            let mut res = g.forward(HashMap::from([("z".to_string(), latents.select_rows(&chunk))]))?;
            for (k, out) in outs.iter_mut().enumerate() {
                out.extend(res.remove(&format!("y{k}")).expect("output").into_data());
            }
        }
        outs.into_iter()
            .zip(&self.spec.tasks)
            .map(|(d, t)| Ok(Tensor2::new(latents.rows(), t.dim, d)?))
            .collect()
    }

    /// Decodes codes to per-task reconstructions.
    pub fn decode_codes(&self, codes: &[CodewordVector], depth: usize) -> Result<Vec<Tensor2>, FusionError> {
        self.decode_latents(&self.code_latents(codes, depth)?)
    }

    /// Full forward pass: per-task reconstructions at a DPCA prefix depth
    /// (`usize::MAX` for the full stack).
    pub fn reconstruct(&self, data: &[&Tensor2], depth: usize) -> Result<Vec<Tensor2>, FusionError> {
        let rows = self.check_inputs(data)?;
        let n = self.spec.tasks.len();
        let mut outs: Vec<Vec<f32>> = vec![Vec::new(); n];
        for chunk in chunks(rows) {
            let mut g = Graph::new();
            let hd = self.build(&mut g, depth, LossWeights { commitment: 0.0, codebook: 0.0 })?;
            g.forward(Self::bind(data, &chunk))?;
            for (k, out) in outs.iter_mut().enumerate() {
                out.extend_from_slice(g.value(hd.recon[k]).expect("evaluated").data());
            }
        }
        outs.into_iter()
            .zip(&self.spec.tasks)
            .map(|(d, t)| Ok(Tensor2::new(rows, t.dim, d)?))
            .collect()
    }
}

const EVAL_CHUNK: usize = 1024;
const RELU_BIAS: f32 = 0.01;
/// Keeps the cosine loss differentiable at an all-zero reconstruction.
const COSINE_EPS: f32 = 1e-8;

fn chunks(rows: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..rows.div_ceil(EVAL_CHUNK)).map(move |c| (c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(rows)).collect())
}

#[cfg(test)]
mod tests;
