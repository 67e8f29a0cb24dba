//! Seeded synthetic corpora: planted clusters for retrieval checks and
//! correlated signal pairs for fusion experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::corpus::EmbeddingCorpus;
use crate::nn::Tensor2;

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit vectors scattered around `clusters` random centres. `spread` is the
/// noise norm relative to the unit centre. Row `i` belongs to cluster
/// `i % clusters`.
pub fn planted_clusters(rows: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> EmbeddingCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f32>> = (0..clusters.max(1))
        .map(|_| {
            let mut c = gaussian(&mut rng, dim);
            normalize(&mut c);
            c
        })
        .collect();
    let scale = spread / (dim as f32).sqrt();
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        let centre = &centres[i % centres.len()];
        let mut v: Vec<f32> = centre.iter().map(|c| c + scale * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng)).collect();
        normalize(&mut v);
        data.extend(v);
    }
    EmbeddingCorpus::new(Tensor2::new(rows, dim, data).expect("rows·dim values"))
}

/// Two aligned corpora generated from a shared latent factor plus a
/// private factor per signal: `x_k = normalize(A_k [z; p_k] + noise)`.
pub fn correlated_pair(
    rows: usize,
    dim: usize,
    shared: usize,
    private: usize,
    noise: f32,
    seed: u64,
) -> (EmbeddingCorpus, EmbeddingCorpus) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = shared + private;
    let mix: Vec<Vec<f32>> = (0..2).map(|_| gaussian(&mut rng, k * dim)).collect();
    let mut out = [Vec::with_capacity(rows * dim), Vec::with_capacity(rows * dim)];
    for _ in 0..rows {
        let z = gaussian(&mut rng, shared);
        for (s, a) in mix.iter().enumerate() {
            let p = gaussian(&mut rng, private);
            let latent: Vec<f32> = z.iter().chain(&p).copied().collect();
            let mut x: Vec<f32> = (0..dim)
                .map(|j| {
                    let mixed: f32 = latent.iter().enumerate().map(|(i, l)| l * a[i * dim + j]).sum();
                    mixed + noise * <StandardNormal as Distribution<f32>>::sample(&StandardNormal, &mut rng)
                })
                .collect();
            normalize(&mut x);
            out[s].extend(x);
        }
    }
    let [a, b] = out;
    (
        EmbeddingCorpus::new(Tensor2::new(rows, dim, a).expect("shape")),
        EmbeddingCorpus::new(Tensor2::new(rows, dim, b).expect("shape")),
    )
}

/// Unit vectors `±u` for one random direction `u` (a 1-D latent line).
pub fn line_samples(rows: usize, dim: usize, seed: u64) -> EmbeddingCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = gaussian(&mut rng, dim);
    normalize(&mut u);
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        data.extend(u.iter().map(|x| s * x));
    }
    EmbeddingCorpus::new(Tensor2::new(rows, dim, data).expect("shape"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_rows(c: &EmbeddingCorpus) -> bool {
        c.iter().all(|r| (r.iter().map(|x| x * x).sum::<f32>() - 1.0).abs() < 1e-5)
    }

    #[test]
    fn clusters_are_seeded_and_unit_norm() {
        let a = planted_clusters(50, 8, 5, 0.3, 1);
        assert_eq!(a, planted_clusters(50, 8, 5, 0.3, 1));
        assert_ne!(a, planted_clusters(50, 8, 5, 0.3, 2));
        assert!(unit_rows(&a));
        // Members of one cluster are closer to each other than to others.
        let dot = |i: usize, j: usize| a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum::<f32>();
        let same: f32 = (1..10).map(|k| dot(0, 5 * k)).sum::<f32>() / 9.0;
        let other: f32 = (1..5).map(|k| dot(0, k)).sum::<f32>() / 4.0;
        assert!(same > other);
    }

    #[test]
    fn pair_signals_are_correlated() {
        let (a, b) = correlated_pair(200, 16, 4, 2, 0.05, 3);
        assert!(unit_rows(&a) && unit_rows(&b));
        assert_eq!((a.rows(), b.rows()), (200, 200));
        assert_ne!(a, b);
    }

    #[test]
    fn line_is_two_antipodal_points() {
        let c = line_samples(4, 3, 0);
        let s: f32 = c.row(0).iter().zip(c.row(1)).map(|(x, y)| x * y).sum();
        assert!((s + 1.0).abs() < 1e-6);
        assert_eq!(c.row(0), c.row(2));
    }
}
