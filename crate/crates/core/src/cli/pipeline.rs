//! Quantizer pipelines shared by the subcommands: fit, persist, encode,
//! decode and reconstruct, for both the learned (fusion) quantizers and the
//! k-means family.

use std::path::{Path, PathBuf};

use super::CliError;
use crate::fusion::{self, FusionModel, FusionSpec, LossRecord, QuantizerSpec, TaskLoss, TaskSpec};
use crate::io::config::{PipelineConfig, QuantizerKind};
use crate::io::{read_file, write_atomic, EmbeddingCorpus};
use crate::nn::{load_checkpoint, save_checkpoint, ParamStore, Tensor2};
use crate::quant::{CodewordVector, KMeansCodebook, ResidualProductKMeans};
use crate::sid::{pack_code, unpack_code, SidFile, SidScheme};

/// The config travels next to the checkpoint as `<checkpoint>.cfg`.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub enum Quantizer {
    Learned(FusionModel),
    /// Fitted on the column-wise concatenation of the inputs.
    KMeans {
        model: ResidualProductKMeans,
        dims: Vec<usize>,
    },
}

pub fn fusion_spec(cfg: &PipelineConfig, dims: &[usize]) -> Result<FusionSpec, CliError> {
    let n = dims.len();
    let quantizer = match cfg.kind {
        QuantizerKind::Fsq => QuantizerSpec::Fsq { levels: cfg.levels },
        QuantizerKind::Dpca => QuantizerSpec::Dpca {
            depth: cfg.depth,
            groups: cfg.groups,
        },
        other => return Err(CliError::Pipeline(format!("{other} is not a learned quantizer"))),
    };
    let pick = |v: &[TaskLoss], k: usize| -> Result<TaskLoss, CliError> {
        match v.len() {
            0 => Ok(TaskLoss::Cosine),
            1 => Ok(v[0]),
            len if len == n => Ok(v[k]),
            len => Err(CliError::Pipeline(format!("{len} losses given for {n} inputs"))),
        }
    };
    if !cfg.weights.is_empty() && cfg.weights.len() != n {
        return Err(CliError::Pipeline(format!("{} weights given for {n} inputs", cfg.weights.len())));
    }
    let tasks = dims
        .iter()
        .enumerate()
        .map(|(k, &dim)| {
            Ok(TaskSpec {
                name: format!("signal{k}"),
                dim,
                loss: pick(&cfg.losses, k)?,
                weight: cfg.weights.get(k).copied().unwrap_or(1.0 / n as f32),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let spec = FusionSpec {
        tasks,
        hidden: cfg.hidden,
        latent: cfg.latent,
        quantizer,
    };
    spec.validate()?;
    Ok(spec)
}

fn concat_columns(data: &[&Tensor2]) -> Result<Tensor2, CliError> {
    let rows = data.first().map_or(0, |t| t.rows());
    if data.iter().any(|t| t.rows() != rows) {
        return Err(CliError::Pipeline("inputs have different row counts".into()));
    }
    let cols: usize = data.iter().map(|t| t.cols()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for t in data {
            out.extend_from_slice(t.row(r));
        }
    }
    Ok(Tensor2::new(rows, cols, out)?)
}

fn split_columns(x: &Tensor2, dims: &[usize]) -> Vec<Tensor2> {
    let mut start = 0;
    dims.iter()
        .map(|&d| {
            let part = x.slice_cols(start, start + d);
            start += d;
            part
        })
        .collect()
}

impl Quantizer {
    /// Trains (learned kinds) or fits (k-means family) on the inputs.
    /// Returns the training history for learned kinds.
    pub fn fit(cfg: &PipelineConfig, data: &[&Tensor2]) -> Result<(Self, Vec<LossRecord>), CliError> {
        if data.is_empty() {
            return Err(CliError::Pipeline("at least one input corpus is required".into()));
        }
        let dims: Vec<usize> = data.iter().map(|t| t.cols()).collect();
        if cfg.kind.is_learned() {
            let spec = fusion_spec(cfg, &dims)?;
            let mut model = FusionModel::new(spec, cfg.seed)?;
            let history = fusion::train(&mut model, data, &cfg.train)?;
            Ok((Quantizer::Learned(model), history))
        } else {
            let x = concat_columns(data)?;
            let model = ResidualProductKMeans::fit(
                &x,
                cfg.levels as usize,
                cfg.depth,
                cfg.groups,
                cfg.kmeans_iters,
                cfg.seed,
            )?;
            Ok((Quantizer::KMeans { model, dims }, Vec::new()))
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Quantizer::Learned(m) => m.spec().tasks.iter().map(|t| t.dim).collect(),
            Quantizer::KMeans { dims, .. } => dims.clone(),
        }
    }

    pub fn code_len(&self) -> usize {
        match self {
            Quantizer::Learned(m) => m.spec().code_len(),
            Quantizer::KMeans { model, .. } => model.code_len(),
        }
    }

    pub fn code_base(&self) -> u32 {
        match self {
            Quantizer::Learned(m) => m.spec().code_base(),
            Quantizer::KMeans { model, .. } => model.k() as u32,
        }
    }

    fn params(&self) -> ParamStore {
        match self {
            Quantizer::Learned(m) => m.params().clone(),
            Quantizer::KMeans { model, dims } => {
                let mut p = ParamStore::new();
                for g in 0..model.groups() {
                    for d in 0..model.depth() {
                        p.insert(format!("kmeans.{g}.{d}"), model.codebook(g, d).centroids().clone());
                    }
                }
                let dims: Vec<f32> = dims.iter().map(|&d| d as f32).collect();
                p.insert("kmeans.dims", Tensor2::row_vector(&dims));
                p
            }
        }
    }

    /// Writes the checkpoint and its config (`<path>.cfg`).
    pub fn save(&self, cfg: &PipelineConfig, path: &Path) -> Result<(), CliError> {
        save_checkpoint(&self.params(), path)?;
        write_atomic(&config_path(path), cfg.to_kv_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(PipelineConfig, Self), CliError> {
        let cfg = PipelineConfig::read(&config_path(path))?;
        let params = load_checkpoint(path)?;
        let q = if cfg.kind.is_learned() {
            let mut dims = Vec::new();
            while let Ok(w) = params.get(&format!("enc{}.0.w", dims.len())) {
                dims.push(w.rows());
            }
            let spec = fusion_spec(&cfg, &dims)?;
            Quantizer::Learned(FusionModel::from_params(spec, params)?)
        } else {
            let mut codebooks = Vec::with_capacity(cfg.groups);
            for g in 0..cfg.groups {
                let mut stack = Vec::with_capacity(cfg.depth);
                for d in 0..cfg.depth {
                    stack.push(KMeansCodebook::new(params.get(&format!("kmeans.{g}.{d}"))?.clone())?);
                }
                codebooks.push(stack);
            }
            let dims = params.get("kmeans.dims")?.data().iter().map(|&d| d as usize).collect();
            Quantizer::KMeans {
                model: ResidualProductKMeans::from_codebooks(codebooks)?,
                dims,
            }
        };
        Ok((cfg, q))
    }

    pub fn check_inputs(&self, data: &[&Tensor2]) -> Result<(), CliError> {
        let dims = self.dims();
        let got: Vec<usize> = data.iter().map(|t| t.cols()).collect();
        if got != dims {
            return Err(CliError::Pipeline(format!(
                "inputs have dimensions {got:?}, the checkpoint expects {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn encode_codes(&self, data: &[&Tensor2]) -> Result<Vec<CodewordVector>, CliError> {
        self.check_inputs(data)?;
        match self {
            Quantizer::Learned(m) => Ok(m.encode_codes(data)?),
            Quantizer::KMeans { model, .. } => {
                let x = concat_columns(data)?;
                Ok(x.iter_rows().map(|r| model.encode(r)).collect::<Result<Vec<_>, _>>()?)
            }
        }
    }

    pub fn encode(&self, data: &[&Tensor2], ngram: usize) -> Result<SidFile, CliError> {
        let scheme = SidScheme::new(self.code_base(), ngram)?;
        let records = self
            .encode_codes(data)?
            .iter()
            .map(|c| pack_code(&scheme, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SidFile {
            scheme,
            grams: scheme.grams_for(self.code_len()),
            records,
        })
    }

    pub fn codes_from_sids(&self, file: &SidFile) -> Result<Vec<CodewordVector>, CliError> {
        if file.scheme.base() != self.code_base() {
            return Err(CliError::Pipeline(format!(
                "SID file has base {}, the checkpoint uses {}",
                file.scheme.base(),
                self.code_base()
            )));
        }
        Ok(file
            .records
            .iter()
            .map(|r| unpack_code(&file.scheme, r, self.code_len()))
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// SIDE vectors: the quantized latents recovered from SIDs alone. For
    /// the k-means family these are the concatenated decoded centroids.
    pub fn side_vectors(&self, file: &SidFile) -> Result<Tensor2, CliError> {
        let codes = self.codes_from_sids(file)?;
        match self {
            Quantizer::Learned(m) => Ok(m.code_latents(&codes, usize::MAX)?),
            Quantizer::KMeans { model, .. } => decode_kmeans(model, &codes),
        }
    }

    /// Per-signal reconstructions decoded from SIDs.
    pub fn decode(&self, file: &SidFile, depth: usize) -> Result<Vec<Tensor2>, CliError> {
        let codes = self.codes_from_sids(file)?;
        match self {
            Quantizer::Learned(m) => Ok(m.decode_codes(&codes, depth)?),
            Quantizer::KMeans { model, dims } => Ok(split_columns(&decode_kmeans(model, &codes)?, dims)),
        }
    }

    pub fn reconstruct(&self, data: &[&Tensor2], depth: usize) -> Result<Vec<Tensor2>, CliError> {
        self.check_inputs(data)?;
        match self {
            Quantizer::Learned(m) => Ok(m.reconstruct(data, depth)?),
            Quantizer::KMeans { model, dims } => {
                let codes = self.encode_codes(data)?;
                Ok(split_columns(&decode_kmeans(model, &codes)?, dims))
            }
        }
    }
}

fn decode_kmeans(model: &ResidualProductKMeans, codes: &[CodewordVector]) -> Result<Tensor2, CliError> {
    let mut out = Vec::with_capacity(codes.len() * model.dim());
    for c in codes {
        out.extend(model.decode(c)?);
    }
    Ok(Tensor2::new(codes.len(), model.dim(), out)?)
}

pub fn read_corpora(paths: &[PathBuf]) -> Result<Vec<EmbeddingCorpus>, CliError> {
    paths.iter().map(|p| Ok(crate::io::corpus_read(p)?)).collect()
}

/// Whitespace-separated numbers.
pub fn read_numbers(path: &Path) -> Result<Vec<f64>, CliError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    text.split_whitespace()
        .enumerate()
        .map(|(i, t)| {
            t.parse::<f64>()
                .map_err(|_| CliError::Pipeline(format!("{}: value {} ({t:?}) is not a number", path.display(), i + 1)))
        })
        .collect()
}
