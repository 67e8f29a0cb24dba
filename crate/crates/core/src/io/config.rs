//! Flat `key = value` configuration files and the pipeline configuration
//! built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_file, FormatError};
use crate::fusion::{TaskLoss, TrainConfig};

/// Parsed `key = value` lines. Blank lines and `#` comments are skipped.
/// Keys are tracked as they are read so leftovers can be reported.
#[derive(Debug, Clone, Default)]
pub struct KvMap {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FormatError::Line {
                line: i + 1,
                detail: format!("expected key=value, found {line:?}"),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(FormatError::Line {
                    line: i + 1,
                    detail: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(FormatError::Line {
                    line: i + 1,
                    detail: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| FormatError::Malformed {
            offset: e.utf8_error().valid_up_to(),
            detail: "config is not UTF-8".into(),
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, FormatError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e: T::Err| FormatError::Line {
                line,
                detail: format!("{key}: cannot parse {v:?}: {e}"),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, FormatError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, FormatError>
    where
        T::Err: fmt::Display,
    {
        let Some((line, v)) = self.entries.remove(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| FormatError::Line {
                    line,
                    detail: format!("{key}: cannot parse {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<(), FormatError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(FormatError::Line {
                line,
                detail: format!("unknown key {key:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuantizerKind {
    KMeans,
    Rq,
    Pq,
    Fsq,
    Dpca,
}

impl QuantizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::KMeans => "kmeans",
            Self::Rq => "rq",
            Self::Pq => "pq",
            Self::Fsq => "fsq",
            Self::Dpca => "dpca",
        }
    }

    /// Quantizers trained through the fusion autoencoder.
    pub fn is_learned(&self) -> bool {
        matches!(self, Self::Fsq | Self::Dpca)
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "kmeans" => Self::KMeans,
            "rq" => Self::Rq,
            "pq" => Self::Pq,
            "fsq" => Self::Fsq,
            "dpca" => Self::Dpca,
            other => return Err(format!("unknown quantizer kind {other:?}")),
        })
    }
}

impl FromStr for TaskLoss {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cosine" => Self::Cosine,
            "mse" => Self::Mse,
            "ce" | "cross-entropy" | "xent" => Self::CrossEntropy,
            other => return Err(format!("unknown loss {other:?}")),
        })
    }
}

/// Everything a CLI pipeline needs: the quantizer, the code layout, the
/// training hyperparameters and the data paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: QuantizerKind,
    /// Levels per digit (`L`); codebook size for the k-means family.
    pub levels: u32,
    /// Residual depth `D`.
    pub depth: usize,
    /// Product groups `P`.
    pub groups: usize,
    /// Latent width `m` of the learned quantizers.
    pub latent: usize,
    /// Digits per SID.
    pub ngram: usize,
    pub hidden: usize,
    pub kmeans_iters: usize,
    pub losses: Vec<TaskLoss>,
    pub weights: Vec<f32>,
    pub train: TrainConfig,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kind: QuantizerKind::Dpca,
            levels: 3,
            depth: 5,
            groups: 3,
            latent: 24,
            ngram: 5,
            hidden: 256,
            kmeans_iters: 25,
            losses: Vec::new(),
            weights: Vec::new(),
            train: TrainConfig::default(),
            seed: 0,
            inputs: Vec::new(),
            output: None,
        }
    }
}

impl PipelineConfig {
    /// Defaults for a kind: ternary 15-digit codes (≈24 bits) for the
    /// learned quantizers, 256-way codebooks for the k-means family.
    pub fn for_kind(kind: QuantizerKind) -> Self {
        let base = Self::default();
        match kind {
            QuantizerKind::Dpca => base,
            QuantizerKind::Fsq => Self {
                kind,
                depth: 1,
                groups: 1,
                latent: 15,
                ..base
            },
            QuantizerKind::KMeans => Self {
                kind,
                levels: 256,
                depth: 1,
                groups: 1,
                ngram: 1,
                ..base
            },
            QuantizerKind::Rq => Self {
                kind,
                levels: 256,
                depth: 3,
                groups: 1,
                ngram: 3,
                ..base
            },
            QuantizerKind::Pq => Self {
                kind,
                levels: 256,
                depth: 1,
                groups: 3,
                ngram: 3,
                ..base
            },
        }
    }

    pub fn from_kv(mut kv: KvMap) -> Result<Self, FormatError> {
        let kind: QuantizerKind = kv.take_or("kind", QuantizerKind::Dpca)?;
        let d = Self::for_kind(kind);
        let train_defaults = TrainConfig::default();
        let seed = kv.take_or("seed", d.seed)?;
        let cfg = Self {
            kind,
            levels: kv.take_or("levels", d.levels)?,
            depth: kv.take_or("depth", d.depth)?,
            groups: kv.take_or("groups", d.groups)?,
            latent: kv.take_or("latent", d.latent)?,
            ngram: kv.take_or("ngram", d.ngram)?,
            hidden: kv.take_or("hidden", d.hidden)?,
            kmeans_iters: kv.take_or("kmeans_iters", d.kmeans_iters)?,
            losses: kv.take_list("losses")?.unwrap_or_default(),
            weights: kv.take_list("weights")?.unwrap_or_default(),
            train: TrainConfig {
                epochs: kv.take_or("epochs", train_defaults.epochs)?,
                batch_size: kv.take_or("batch_size", train_defaults.batch_size)?,
                learning_rate: kv.take_or("lr", train_defaults.learning_rate)?,
                commitment: kv.take_or("beta", train_defaults.commitment)?,
                codebook_weight: kv.take_or("codebook_weight", train_defaults.codebook_weight)?,
                dropout: kv.take_or("dropout", train_defaults.dropout)?,
                seed,
            },
            seed,
            inputs: kv.take_list::<String>("inputs")?.unwrap_or_default().into_iter().map(PathBuf::from).collect(),
            output: kv.take::<String>("output")?.map(PathBuf::from),
        };
        kv.finish()?;
        cfg.validate().map_err(FormatError::Invalid)?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_kv(KvMap::read(path)?)
    }

    pub fn validate(&self) -> Result<(), String> {
        let err = |m: String| Err(m);
        if self.levels < 2 {
            return err(format!("levels must be at least 2, got {}", self.levels));
        }
        if self.depth == 0 || self.groups == 0 || self.ngram == 0 {
            return err("depth, groups and ngram must be positive".into());
        }
        match self.kind {
            QuantizerKind::KMeans if self.depth != 1 || self.groups != 1 => {
                return err("kmeans takes depth = 1 and groups = 1".into())
            }
            QuantizerKind::Rq if self.groups != 1 => return err("rq takes groups = 1".into()),
            QuantizerKind::Pq if self.depth != 1 => return err("pq takes depth = 1".into()),
            QuantizerKind::Fsq if self.depth != 1 || self.groups != 1 => {
                return err("fsq takes depth = 1 and groups = 1; use latent for the digit count".into())
            }
            QuantizerKind::Dpca => {
                if self.levels != 3 {
                    return err(format!("dpca digits are ternary; levels must be 3, got {}", self.levels));
                }
                if self.latent % self.groups != 0 {
                    return err(format!("latent {} is not divisible by {} groups", self.latent, self.groups));
                }
            }
            _ => {}
        }
        if self.kind.is_learned() && self.latent == 0 {
            return err("latent must be positive".into());
        }
        if !self.weights.is_empty() && self.weights.iter().any(|w| !(*w >= 0.0)) {
            return err("task weights must be non-negative".into());
        }
        if !self.weights.is_empty() && self.weights.iter().sum::<f32>() <= 0.0 {
            return err("task weights must not all be zero".into());
        }
        self.train.validate()
    }

    /// Digits per code.
    pub fn code_len(&self) -> usize {
        match self.kind {
            QuantizerKind::Fsq => self.latent,
            _ => self.depth * self.groups,
        }
    }

    /// Bits per code, `code_len · log2(L)`.
    pub fn bits(&self) -> f64 {
        self.code_len() as f64 * (self.levels as f64).log2()
    }

    pub fn to_kv_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        line("kind", self.kind.to_string());
        line("levels", self.levels.to_string());
        line("depth", self.depth.to_string());
        line("groups", self.groups.to_string());
        line("latent", self.latent.to_string());
        line("ngram", self.ngram.to_string());
        line("hidden", self.hidden.to_string());
        line("kmeans_iters", self.kmeans_iters.to_string());
        if !self.losses.is_empty() {
            line("losses", join(self.losses.iter().map(|l| l.as_str().to_string()).collect()));
        }
        if !self.weights.is_empty() {
            line("weights", join(self.weights.iter().map(|w| w.to_string()).collect()));
        }
        line("epochs", self.train.epochs.to_string());
        line("batch_size", self.train.batch_size.to_string());
        line("lr", self.train.learning_rate.to_string());
        line("beta", self.train.commitment.to_string());
        line("codebook_weight", self.train.codebook_weight.to_string());
        line("dropout", self.train.dropout.to_string());
        line("seed", self.seed.to_string());
        if !self.inputs.is_empty() {
            line("inputs", join(self.inputs.iter().map(|p| p.display().to_string()).collect()));
        }
        if let Some(o) = &self.output {
            line("output", o.display().to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut kv = KvMap::parse("# header\n a = 1 \n\nb=x # trailing\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take::<String>("b").unwrap().as_deref(), Some("x"));
        kv.finish().unwrap();
    }

    #[test]
    fn reports_bad_lines() {
        assert!(matches!(KvMap::parse("a = 1\nnonsense\n"), Err(FormatError::Line { line: 2, .. })));
        assert!(matches!(KvMap::parse("a = 1\na = 2\n"), Err(FormatError::Line { line: 2, .. })));
        let mut kv = KvMap::parse("a = x\n").unwrap();
        assert!(kv.take::<u32>("a").is_err());
        let kv = KvMap::parse("zzz = 1\n").unwrap();
        assert!(kv.finish().is_err());
    }

    #[test]
    fn pipeline_roundtrip() {
        let text = "kind = dpca\ndepth = 4\ngroups = 2\nlatent = 16\nngram = 4\nlosses = cosine, mse\nweights = 0.5,0.5\nepochs = 3\nseed = 9\ninputs = a.side,b.side\n";
        let cfg = PipelineConfig::from_kv(KvMap::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.code_len(), 8);
        assert_eq!(cfg.losses, vec![TaskLoss::Cosine, TaskLoss::Mse]);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.inputs.len(), 2);
        let again = PipelineConfig::from_kv(KvMap::parse(&cfg.to_kv_text()).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn validates_kind_specific_parameters() {
        let bad = |t: &str| PipelineConfig::from_kv(KvMap::parse(t).unwrap()).is_err();
        assert!(bad("kind = kmeans\ndepth = 2\n"));
        assert!(bad("kind = pq\ndepth = 2\n"));
        assert!(bad("kind = rq\ngroups = 2\n"));
        assert!(bad("kind = dpca\nlevels = 5\n"));
        assert!(bad("kind = dpca\nlatent = 10\ngroups = 3\n"));
        assert!(bad("kind = fsq\ndropout = 1.5\n"));
        assert!(bad("kind = lsh\n"));
        assert!(!bad("kind = rq\ndepth = 4\n"));
    }

    #[test]
    fn default_learned_codes_are_about_24_bits() {
        for kind in [QuantizerKind::Fsq, QuantizerKind::Dpca] {
            let bits = PipelineConfig::for_kind(kind).bits();
            assert!((bits - 23.77).abs() < 0.01, "{kind}: {bits}");
        }
    }
}
