//! Residual and product compositions of k-means codebooks.

use super::kmeans::{kmeans_fit, KMeansCodebook};
use super::{check_dim, product_join, product_split, CodewordVector, QuantError};
use crate::nn::Tensor2;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualCode {
    pub indices: Vec<usize>,
    pub reconstruction: Vec<f32>,
    /// `x` minus the reconstruction.
    pub residual: Vec<f32>,
}

/// Greedy layer-by-layer assignment: each layer quantizes what the previous
/// layers left over. The reconstruction is the sum of the selected codewords.
pub fn residual_quantize(stack: &[KMeansCodebook], x: &[f32]) -> Result<ResidualCode, QuantError> {
    for cb in stack {
        check_dim(cb.dim(), x.len())?;
    }
    let mut reconstruction = vec![0.0f32; x.len()];
    let mut residual = x.to_vec();
    let mut indices = Vec::with_capacity(stack.len());
    for cb in stack {
        let (i, _) = cb.nearest(&residual);
        indices.push(i);
        for ((r, rec), (&xv, &c)) in residual
            .iter_mut()
            .zip(reconstruction.iter_mut())
            .zip(x.iter().zip(cb.centroid(i)))
        {
            *rec += c;
            *r = xv - *rec;
        }
    }
    Ok(ResidualCode {
        indices,
        reconstruction,
        residual,
    })
}

/// `groups` independent residual stacks of `depth` k-means layers, one per
/// contiguous slice of the input. Plain k-means is `groups = depth = 1`,
/// residual quantization is `groups = 1`, product quantization `depth = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualProductKMeans {
    dim: usize,
    groups: usize,
    depth: usize,
    k: usize,
    /// `codebooks[g][d]`.
    codebooks: Vec<Vec<KMeansCodebook>>,
}

impl ResidualProductKMeans {
    pub fn fit(
        data: &Tensor2,
        k: usize,
        depth: usize,
        groups: usize,
        iters: usize,
        seed: u64,
    ) -> Result<Self, QuantError> {
        let dim = data.cols();
        if groups == 0 || dim % groups != 0 {
            return Err(QuantError::InvalidConfig(format!(
                "{groups} product groups do not divide dimension {dim}"
            )));
        }
        if depth == 0 {
            return Err(QuantError::InvalidConfig("depth must be at least 1".into()));
        }
        let width = dim / groups;
        let mut codebooks = Vec::with_capacity(groups);
        for g in 0..groups {
            let mut residual = data.slice_cols(g * width, (g + 1) * width);
            let mut stack = Vec::with_capacity(depth);
            for d in 0..depth {
                let layer_seed = seed ^ ((g as u64) << 32 | d as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let fit = kmeans_fit(&residual, k, iters, layer_seed)?;
                for r in 0..residual.rows() {
                    let (i, _) = fit.codebook.nearest(residual.row(r));
                    let c = fit.codebook.centroid(i).to_vec();
                    for (v, cv) in residual.row_mut(r).iter_mut().zip(c) {
                        *v -= cv;
                    }
                }
                stack.push(fit.codebook);
            }
            codebooks.push(stack);
        }
        Ok(Self {
            dim,
            groups,
            depth,
            k,
            codebooks,
        })
    }

    /// Reassembles a quantizer from explicit codebooks (`codebooks[g][d]`).
    pub fn from_codebooks(codebooks: Vec<Vec<KMeansCodebook>>) -> Result<Self, QuantError> {
        let groups = codebooks.len();
        let depth = codebooks.first().map_or(0, Vec::len);
        if groups == 0 || depth == 0 {
            return Err(QuantError::InvalidConfig("empty codebook stack".into()));
        }
        let k = codebooks[0][0].k();
        let width = codebooks[0][0].dim();
        for stack in &codebooks {
            if stack.len() != depth || stack.iter().any(|c| c.k() != k || c.dim() != width) {
                return Err(QuantError::InvalidConfig("ragged codebook stack".into()));
            }
        }
        Ok(Self {
            dim: width * groups,
            groups,
            depth,
            k,
            codebooks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn groups(&self) -> usize {
        self.groups
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn codebook(&self, group: usize, depth: usize) -> &KMeansCodebook {
        &self.codebooks[group][depth]
    }

    /// Code length `groups × depth`, group-major.
    pub fn code_len(&self) -> usize {
        self.groups * self.depth
    }

    pub fn encode(&self, x: &[f32]) -> Result<CodewordVector, QuantError> {
        check_dim(self.dim, x.len())?;
        let mut levels = Vec::with_capacity(self.code_len());
        for (part, stack) in product_split(x, self.groups)?.into_iter().zip(&self.codebooks) {
            let code = residual_quantize(stack, part)?;
            levels.extend(code.indices.into_iter().map(|i| i as u32));
        }
        CodewordVector::new(levels, self.k as u32)
    }

    pub fn decode(&self, code: &CodewordVector) -> Result<Vec<f32>, QuantError> {
        if code.len() != self.code_len() {
            return Err(QuantError::CodeLength {
                expected: self.code_len(),
                actual: code.len(),
            });
        }
        let width = self.dim / self.groups;
        let parts: Vec<Vec<f32>> = self
            .codebooks
            .iter()
            .zip(code.levels().chunks(self.depth))
            .map(|(stack, idx)| {
                let mut acc = vec![0.0f32; width];
                for (cb, &i) in stack.iter().zip(idx) {
                    for (a, c) in acc.iter_mut().zip(cb.centroid(i as usize)) {
                        *a += c;
                    }
                }
                acc
            })
            .collect();
        Ok(product_join(&parts))
    }
}
