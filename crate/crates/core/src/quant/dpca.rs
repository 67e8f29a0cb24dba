//! Discrete-PCA: a residual stack of learned component vectors whose
//! projection weights are restricted to `{-1, 0, +1}`, optionally run in
//! parallel over product groups.
//!
//! Per group the reconstruction is `Σ_d (s_d · u_d + b_d)`. Encoding is
//! greedy in depth: the residual left by depths `< d` is projected onto
//! `u_d` (after removing `b_d`) and the projection weight is snapped to the
//! nearest ternary value.

use super::fsq::FsqConfig;
use super::{check_dim, dot, product_join, CodewordVector, QuantError};
use crate::nn::{NnError, ParamStore, Tensor2};

/// Ternary digits are stored as level indices `s + 1`.
pub const DPCA_BASE: u32 = 3;
pub const DPCA_OFFSET: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DpcaStack {
    groups: usize,
    depth: usize,
    width: usize,
    /// `components[g * depth + d]`, length `width` each.
    components: Vec<Vec<f32>>,
    offsets: Vec<Vec<f32>>,
}

/// Result of [`dpca_encode`]: the code, the reconstruction it decodes to and
/// the final residual `x - reconstruction`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpcaEncoding {
    pub codes: CodewordVector,
    pub reconstruction: Vec<f32>,
    pub residual: Vec<f32>,
}

pub fn param_name(group: usize, depth: usize, part: char) -> String {
    format!("dpca.g{group}.d{depth}.{part}")
}

impl DpcaStack {
    pub fn new(
        groups: usize,
        depth: usize,
        components: Vec<Vec<f32>>,
        offsets: Vec<Vec<f32>>,
    ) -> Result<Self, QuantError> {
        if groups == 0 || depth == 0 {
            return Err(QuantError::InvalidConfig("DPCA needs at least one group and one depth".into()));
        }
        if components.len() != groups * depth || offsets.len() != groups * depth {
            return Err(QuantError::InvalidConfig(format!(
                "expected {} components and offsets, got {} and {}",
                groups * depth,
                components.len(),
                offsets.len()
            )));
        }
        let width = components[0].len();
        if width == 0 {
            return Err(QuantError::InvalidConfig("zero-width components".into()));
        }
        for v in components.iter().chain(&offsets) {
            check_dim(width, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(QuantError::InvalidConfig("non-finite component or offset".into()));
            }
        }
        Ok(Self {
            groups,
            depth,
            width,
            components,
            offsets,
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Input dimension `groups × width`.
    pub fn dim(&self) -> usize {
        self.groups * self.width
    }

    pub fn group_width(&self) -> usize {
        self.width
    }

    /// Code length `groups × depth`.
    pub fn code_len(&self) -> usize {
        self.groups * self.depth
    }

    pub fn component(&self, group: usize, depth: usize) -> &[f32] {
        &self.components[group * self.depth + depth]
    }

    pub fn offset(&self, group: usize, depth: usize) -> &[f32] {
        &self.offsets[group * self.depth + depth]
    }

    /// Writes every component and offset as a `1 × width` parameter.
    pub fn to_params(&self, store: &mut ParamStore) {
        for g in 0..self.groups {
            for d in 0..self.depth {
                store.insert(param_name(g, d, 'u'), Tensor2::row_vector(self.component(g, d)));
                store.insert(param_name(g, d, 'b'), Tensor2::row_vector(self.offset(g, d)));
            }
        }
    }

    pub fn from_params(store: &ParamStore, groups: usize, depth: usize) -> Result<Self, NnError> {
        let mut components = Vec::with_capacity(groups * depth);
        let mut offsets = Vec::with_capacity(groups * depth);
        for g in 0..groups {
            for d in 0..depth {
                components.push(store.get(&param_name(g, d, 'u'))?.data().to_vec());
                offsets.push(store.get(&param_name(g, d, 'b'))?.data().to_vec());
            }
        }
        Self::new(groups, depth, components, offsets).map_err(|e| NnError::Shape(e.to_string()))
    }

    /// Ternary codes of one group, as `{-1, 0, 1}` weights, and the group
    /// reconstruction accumulated in depth order.
    fn encode_group(&self, group: usize, x: &[f32]) -> Result<(Vec<i32>, Vec<f32>), QuantError> {
        let ternary = FsqConfig::ternary();
        let mut partial = vec![0.0f32; self.width];
        let mut weights = Vec::with_capacity(self.depth);
        let mut shifted = vec![0.0f32; self.width];
        for d in 0..self.depth {
            let u = self.component(group, d);
            let b = self.offset(group, d);
            let norm_sq = dot(u, u);
            if norm_sq == 0.0 {
                return Err(QuantError::ZeroNormComponent { group, depth: d });
            }
            for i in 0..self.width {
                shifted[i] = (x[i] - partial[i]) - b[i];
            }
            let weight = dot(&shifted, u) / norm_sq;
            let s = ternary.snap(weight) as i32 - DPCA_OFFSET as i32;
            accumulate(&mut partial, s, u, b);
            weights.push(s);
        }
        Ok((weights, partial))
    }
}

#[inline]
fn accumulate(acc: &mut [f32], s: i32, u: &[f32], b: &[f32]) {
    let s = s as f32;
    for ((a, &uv), &bv) in acc.iter_mut().zip(u).zip(b) {
        *a += s * uv + bv;
    }
}

pub fn dpca_encode(stack: &DpcaStack, x: &[f32]) -> Result<DpcaEncoding, QuantError> {
    check_dim(stack.dim(), x.len())?;
    let mut weights = Vec::with_capacity(stack.code_len());
    let mut parts = Vec::with_capacity(stack.groups);
    for (g, xg) in x.chunks(stack.width).enumerate() {
        let (w, rec) = stack.encode_group(g, xg)?;
        weights.extend(w);
        parts.push(rec);
    }
    let reconstruction = product_join(&parts);
    let residual = x.iter().zip(&reconstruction).map(|(a, b)| a - b).collect();
    Ok(DpcaEncoding {
        codes: CodewordVector::from_centered(&weights, DPCA_BASE, DPCA_OFFSET)?,
        reconstruction,
        residual,
    })
}

pub fn dpca_decode(stack: &DpcaStack, codes: &CodewordVector) -> Result<Vec<f32>, QuantError> {
    decode_prefix(stack, codes, stack.depth)
}

/// Reconstruction using only the first `depth` residual layers of each group.
pub fn decode_prefix(stack: &DpcaStack, codes: &CodewordVector, depth: usize) -> Result<Vec<f32>, QuantError> {
    if codes.len() != stack.code_len() {
        return Err(QuantError::CodeLength {
            expected: stack.code_len(),
            actual: codes.len(),
        });
    }
    if codes.base() != DPCA_BASE {
        return Err(QuantError::InvalidConfig(format!("DPCA codes must be ternary, got base {}", codes.base())));
    }
    if depth == 0 || depth > stack.depth {
        return Err(QuantError::InvalidConfig(format!("prefix depth {depth} outside 1..={}", stack.depth)));
    }
    let weights = codes.centered(DPCA_OFFSET);
    let mut out = vec![0.0f32; stack.dim()];
    for (g, acc) in out.chunks_mut(stack.width).enumerate() {
        for d in 0..depth {
            accumulate(acc, weights[g * stack.depth + d], stack.component(g, d), stack.offset(g, d));
        }
    }
    Ok(out)
}
