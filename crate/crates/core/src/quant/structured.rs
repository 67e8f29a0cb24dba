//! Structured quantization: codewords come in co-linear groups
//! `{ s_l · u_k + b_k }`, one line per group `k` and `L` scalar levels
//! `s_l` shared by all lines.
//!
//! Assignment picks the line with the smallest point-to-line distance,
//! projects onto it, and snaps the signed distance to the scalar grid.

use super::fsq::{Bound, FsqConfig};
use super::{check_dim, dot, QuantError};
use crate::nn::Tensor2;

const UNIT_TOLERANCE: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LineCodebook {
    directions: Tensor2,
    references: Tensor2,
    scalar: FsqConfig,
    scale: f32,
}

impl LineCodebook {
    /// `directions` and `references` are `K × d`; every direction must be a
    /// unit vector. Scalar levels are `scale · {-1, …, 1}` with `levels` points.
    pub fn new(directions: Tensor2, references: Tensor2, levels: u32, scale: f32) -> Result<Self, QuantError> {
        if directions.shape() != references.shape() {
            return Err(QuantError::InvalidConfig(format!(
                "directions {:?} and references {:?} differ in shape",
                directions.shape(),
                references.shape()
            )));
        }
        if directions.rows() == 0 {
            return Err(QuantError::InvalidConfig("at least one line is required".into()));
        }
        for (k, u) in directions.iter_rows().enumerate() {
            let norm = dot(u, u).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(QuantError::InvalidConfig(format!("direction {k} has norm {norm}")));
            }
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(QuantError::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            directions,
            references,
            scalar: FsqConfig::new(1, levels)?.with_bound(Bound::Clamp),
            scale,
        })
    }

    pub fn groups(&self) -> usize {
        self.directions.rows()
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn levels(&self) -> u32 {
        self.scalar.levels()
    }

    pub fn direction(&self, k: usize) -> &[f32] {
        self.directions.row(k)
    }

    pub fn reference(&self, k: usize) -> &[f32] {
        self.references.row(k)
    }

    /// Signed distance `s_l` of scalar level `l`.
    pub fn level_value(&self, level: u32) -> f32 {
        self.scale * self.scalar.level_value(level)
    }

    /// Codeword `s_l · u_k + b_k`.
    pub fn codeword(&self, group: usize, level: u32) -> Vec<f32> {
        let s = self.level_value(level);
        self.direction(group)
            .iter()
            .zip(self.reference(group))
            .map(|(u, b)| s * u + b)
            .collect()
    }

    /// Squared distance from `x` to the line of group `k`.
    pub fn line_distance(&self, k: usize, x: &[f32]) -> f32 {
        let diff: Vec<f32> = x.iter().zip(self.reference(k)).map(|(a, b)| a - b).collect();
        let along = dot(&diff, self.direction(k));
        dot(&diff, &diff) - along * along
    }

    /// Whether `s` lies inside the span of the scalar levels.
    pub fn covers(&self, s: f32) -> bool {
        s.abs() <= self.scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredCode {
    pub group: usize,
    pub level: u32,
    pub signed_distance: f32,
    pub reconstruction: Vec<f32>,
}

pub fn structured_assign(cb: &LineCodebook, x: &[f32]) -> Result<StructuredCode, QuantError> {
    check_dim(cb.dim(), x.len())?;
    let mut group = 0;
    let mut best = f32::INFINITY;
    for k in 0..cb.groups() {
        let d = cb.line_distance(k, x);
        if d < best {
            best = d;
            group = k;
        }
    }
    let diff: Vec<f32> = x.iter().zip(cb.reference(group)).map(|(a, b)| a - b).collect();
    let signed_distance = dot(&diff, cb.direction(group));
    let level = cb.scalar.snap(signed_distance / cb.scale);
    Ok(StructuredCode {
        group,
        level,
        signed_distance,
        reconstruction: cb.codeword(group, level),
    })
}
