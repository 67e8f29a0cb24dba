//! Codebook and scalar quantizers.
//!
//! - [`kmeans`]: Lloyd's k-means with nearest / top-k assignment.
//! - [`residual`]: greedy residual assignment over stacked codebooks, plus
//!   a residual-product k-means quantizer (plain k-means, RQ and PQ are
//!   special cases).
//! - [`fsq`]: finite scalar quantization onto a uniform grid in `[-1, 1]`.
//! - [`structured`]: codebooks made of co-linear codeword groups.
//! - [`dpca`]: Discrete-PCA, a residual (and optionally product) stack of
//!   learned components with ternary projection weights.

pub mod dpca;
pub mod fsq;
pub mod kmeans;
pub mod residual;
pub mod structured;

pub use dpca::{dpca_decode, dpca_encode, DpcaEncoding, DpcaStack};
pub use fsq::{fsq_quantize, Bound, FsqConfig};
pub use kmeans::{kmeans_assign, kmeans_fit, kmeans_top_k, KMeansCodebook, KMeansFit};
pub use residual::{residual_quantize, ResidualCode, ResidualProductKMeans};
pub use structured::{structured_assign, LineCodebook, StructuredCode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k = {k} exceeds the {rows} corpus rows")]
    TooFewRows { k: usize, rows: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("component vector for group {group}, depth {depth} has zero norm")]
    ZeroNormComponent { group: usize, depth: usize },
    #[error("code length {actual} does not match expected {expected}")]
    CodeLength { expected: usize, actual: usize },
    #[error("digit {digit} at position {position} is outside base {base}")]
    InvalidDigit { position: usize, digit: u32, base: u32 },
    #[error("centered digit {value} at position {position} is outside base {base} with offset {offset}")]
    CenteredDigit {
        position: usize,
        value: i32,
        offset: u32,
        base: u32,
    },
}

/// Per-dimension level indices in `[0, base)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CodewordVector {
    levels: Vec<u32>,
    base: u32,
}

impl CodewordVector {
    pub fn new(levels: Vec<u32>, base: u32) -> Result<Self, QuantError> {
        if base < 2 {
            return Err(QuantError::InvalidConfig(format!("base {base} < 2")));
        }
        if let Some((position, &digit)) = levels.iter().enumerate().find(|(_, &l)| l >= base) {
            return Err(QuantError::InvalidDigit { position, digit, base });
        }
        Ok(Self { levels, base })
    }

    /// Builds from centered digits `c`, storing `c + offset`.
    pub fn from_centered(centered: &[i32], base: u32, offset: u32) -> Result<Self, QuantError> {
        let levels = centered
            .iter()
            .enumerate()
            .map(|(position, &c)| {
                let l = c as i64 + offset as i64;
                if l < 0 || l >= base as i64 {
                    Err(QuantError::CenteredDigit {
                        position,
                        value: c,
                        offset,
                        base,
                    })
                } else {
                    Ok(l as u32)
                }
            })
            .collect::<Result<_, _>>()?;
        Self::new(levels, base)
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Levels minus `offset`.
    pub fn centered(&self, offset: u32) -> Vec<i32> {
        self.levels.iter().map(|&l| l as i32 - offset as i32).collect()
    }
}

/// Splits `x` into `parts` contiguous equal-width slices.
pub fn product_split(x: &[f32], parts: usize) -> Result<Vec<&[f32]>, QuantError> {
    if parts == 0 || x.len() % parts != 0 {
        return Err(QuantError::InvalidConfig(format!(
            "{parts} product groups do not divide dimension {}",
            x.len()
        )));
    }
    Ok(x.chunks(x.len() / parts).collect())
}

/// Concatenates sub-vectors; inverse of [`product_split`].
pub fn product_join<S: AsRef<[f32]>>(parts: &[S]) -> Vec<f32> {
    parts.iter().flat_map(|p| p.as_ref().iter().copied()).collect()
}

pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<(), QuantError> {
    if expected != actual {
        return Err(QuantError::DimensionMismatch { expected, actual });
    }
    Ok(())
}
