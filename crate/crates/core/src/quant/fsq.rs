//! Finite scalar quantization.
//!
//! Each latent coordinate is bounded into `[-1, 1]` and snapped to one of
//! `L` uniformly spaced levels: `level = round((u + 1) / 2 · (L − 1))`,
//! value `= 2 · level / (L − 1) − 1`. Rounding is half away from zero.

use super::{CodewordVector, QuantError};

/// How a raw coordinate is mapped into `[-1, 1]` before snapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Bound {
    /// `tanh(z)`; used for unbounded encoder latents.
    #[default]
    Tanh,
    /// `clamp(z, -1, 1)`; nearest-level snapping for values that are
    /// already signed distances (structured and Discrete-PCA projections).
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FsqConfig {
    dims: usize,
    levels: u32,
    bound: Bound,
}

impl FsqConfig {
    pub fn new(dims: usize, levels: u32) -> Result<Self, QuantError> {
        if levels < 2 {
            return Err(QuantError::InvalidConfig(format!("FSQ needs at least 2 levels, got {levels}")));
        }
        Ok(Self {
            dims,
            levels,
            bound: Bound::Tanh,
        })
    }

    /// Ternary grid `{-1, 0, 1}` with nearest-level snapping.
    pub fn ternary() -> Self {
        Self {
            dims: 1,
            levels: 3,
            bound: Bound::Clamp,
        }
    }

    pub fn with_bound(mut self, bound: Bound) -> Self {
        self.bound = bound;
        self
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn bound(&self) -> Bound {
        self.bound
    }

    /// Bits carried by a full code, `dims · log2(L)`.
    pub fn bits(&self) -> f64 {
        self.dims as f64 * (self.levels as f64).log2()
    }

    #[inline]
    pub fn bound_value(&self, z: f32) -> f32 {
        match self.bound {
            Bound::Tanh => z.tanh(),
            Bound::Clamp => z.clamp(-1.0, 1.0),
        }
    }

    /// Level index of an already-bounded value `u ∈ [-1, 1]`.
    #[inline]
    pub fn snap(&self, u: f32) -> u32 {
        let top = (self.levels - 1) as f32;
        let scaled = ((u.clamp(-1.0, 1.0) + 1.0) * 0.5 * top).round();
        (scaled as u32).min(self.levels - 1)
    }

    #[inline]
    pub fn level_value(&self, level: u32) -> f32 {
        2.0 * level as f32 / (self.levels - 1) as f32 - 1.0
    }

    /// Bound, snap and map back: `(level, value)` for one coordinate.
    #[inline]
    pub fn quantize_scalar(&self, z: f32) -> (u32, f32) {
        let level = self.snap(self.bound_value(z));
        (level, self.level_value(level))
    }

    /// Level that represents zero, when the grid has one (odd `L`).
    pub fn zero_level(&self) -> Option<u32> {
        (self.levels % 2 == 1).then_some((self.levels - 1) / 2)
    }
}

/// Quantizes a latent vector coordinate-wise. Returns the level indices and
/// the quantized latent.
pub fn fsq_quantize(cfg: &FsqConfig, z: &[f32]) -> (CodewordVector, Vec<f32>) {
    let (levels, values): (Vec<u32>, Vec<f32>) = z.iter().map(|&v| cfg.quantize_scalar(v)).unzip();
    (
        CodewordVector::new(levels, cfg.levels).expect("snap stays below L"),
        values,
    )
}
