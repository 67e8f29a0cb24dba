//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_dim, squared_distance, QuantError};
use crate::nn::Tensor2;

/// `k × d` centroid matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansCodebook {
    centroids: Tensor2,
}

impl KMeansCodebook {
    pub fn new(centroids: Tensor2) -> Result<Self, QuantError> {
        if centroids.rows() == 0 {
            return Err(QuantError::InvalidConfig("codebook needs at least one centroid".into()));
        }
        if !centroids.is_finite() {
            return Err(QuantError::InvalidConfig("non-finite centroid".into()));
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        self.centroids.row(i)
    }

    pub fn centroids(&self) -> &Tensor2 {
        &self.centroids
    }

    /// Nearest centroid and its squared distance; ties go to the lower index.
    pub(crate) fn nearest(&self, x: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for (i, c) in self.centroids.iter_rows().enumerate() {
            let d = squared_distance(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: KMeansCodebook,
    /// Within-cluster sum of squares after each assignment step.
    pub objective_history: Vec<f64>,
    /// Set when the corpus has fewer distinct points than `k`.
    pub degenerate: bool,
}

impl KMeansFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("at least one assignment")
    }
}

pub fn kmeans_fit(data: &Tensor2, k: usize, iters: usize, seed: u64) -> Result<KMeansFit, QuantError> {
    if k == 0 {
        return Err(QuantError::InvalidConfig("k must be at least 1".into()));
    }
    if iters == 0 {
        return Err(QuantError::InvalidConfig("iters must be at least 1".into()));
    }
    if k > data.rows() {
        return Err(QuantError::TooFewRows { k, rows: data.rows() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut centroids, degenerate) = kmeans_plus_plus(data, k, &mut rng);
    if degenerate {
        log::warn!("k-means: corpus has fewer than {k} distinct points; duplicate centroids returned");
    }
    let mut history = Vec::with_capacity(iters + 1);
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..iters {
        let (assignment, objective) = assign_all(data, &centroids);
        history.push(objective);
        if previous.as_ref() == Some(&assignment) {
            break;
        }
        update_centroids(data, &assignment, &mut centroids);
        previous = Some(assignment);
    }
    let (_, objective) = assign_all(data, &centroids);
    history.push(objective);
    Ok(KMeansFit {
        codebook: KMeansCodebook::new(centroids)?,
        objective_history: history,
        degenerate,
    })
}

fn kmeans_plus_plus(data: &Tensor2, k: usize, rng: &mut ChaCha8Rng) -> (Tensor2, bool) {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|x| squared_distance(x, data.row(chosen[0])) as f64)
        .collect();
    let mut degenerate = false;
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            degenerate = true;
            let last = *chosen.last().expect("non-empty");
            chosen.resize(k, last);
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] <= 0.0 {
            // Rounding left the target past the last positive weight.
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        chosen.push(pick);
        let c = data.row(pick);
        for (w, x) in d2.iter_mut().zip(data.iter_rows()) {
            *w = w.min(squared_distance(x, c) as f64);
        }
    }
    (data.select_rows(&chosen), degenerate)
}

fn assign_all(data: &Tensor2, centroids: &Tensor2) -> (Vec<usize>, f64) {
    let cb = KMeansCodebook {
        centroids: centroids.clone(),
    };
    let rows: Vec<(usize, f32)> = (0..data.rows())
        .into_par_iter()
        .map(|i| cb.nearest(data.row(i)))
        .collect();
    let objective = rows.iter().map(|&(_, d)| d as f64).sum();
    (rows.into_iter().map(|(i, _)| i).collect(), objective)
}

fn update_centroids(data: &Tensor2, assignment: &[usize], centroids: &mut Tensor2) {
    let (k, d) = centroids.shape();
    let mut sums = vec![0f64; k * d];
    let mut counts = vec![0usize; k];
    for (x, &c) in data.iter_rows().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(x) {
            *s += *v as f64;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let n = counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *dst = (s / n) as f32;
            }
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if empty.is_empty() {
        return;
    }
    // Reseed each empty cluster at a distinct point, farthest from its centroid first.
    let mut far: Vec<(f32, usize)> = data
        .iter_rows()
        .zip(assignment)
        .enumerate()
        .map(|(i, (x, &c))| (squared_distance(x, centroids.row(c)), i))
        .collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (c, (_, i)) in empty.into_iter().zip(far) {
        let src = data.row(i).to_vec();
        centroids.row_mut(c).copy_from_slice(&src);
    }
}

pub fn kmeans_assign(codebook: &KMeansCodebook, x: &[f32]) -> Result<usize, QuantError> {
    check_dim(codebook.dim(), x.len())?;
    Ok(codebook.nearest(x).0)
}

/// The `top` nearest centroids, ascending by distance, ties by index.
pub fn kmeans_top_k(codebook: &KMeansCodebook, x: &[f32], top: usize) -> Result<Vec<usize>, QuantError> {
    check_dim(codebook.dim(), x.len())?;
    let mut all: Vec<(f32, usize)> = codebook
        .centroids
        .iter_rows()
        .enumerate()
        .map(|(i, c)| (squared_distance(x, c), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(all.into_iter().take(top).map(|(_, i)| i).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn rows(v: &[&[f32]]) -> Tensor2 {
        Tensor2::from_rows(v).unwrap()
    }

    #[test]
    fn k_distinct_points_are_a_fixed_point() {
        let data = rows(&[&[0., 0.], &[5., 1.], &[-3., 2.], &[1., -4.]]);
        let fit = kmeans_fit(&data, 4, 10, 7).unwrap();
        assert_eq!(fit.final_objective(), 0.0);
        let mut got: Vec<Vec<f32>> = fit.codebook.centroids().iter_rows().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = data.iter_rows().map(|r| r.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert!(!fit.degenerate);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let data = rows(&[&[1., 2.], &[3., 6.], &[5., -2.]]);
        let fit = kmeans_fit(&data, 1, 5, 1).unwrap();
        let c = fit.codebook.centroid(0);
        assert!((c[0] - 3.0).abs() < 1e-6 && (c[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn two_modes_are_recovered() {
        let d = 8;
        let mode = 1.0 / (d as f32).sqrt();
        let noise = Normal::new(0.0f32, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data = Vec::new();
        for sign in [1.0f32, -1.0] {
            for _ in 0..50 {
                data.push((0..d).map(|_| sign * mode + noise.sample(&mut rng)).collect::<Vec<f32>>());
            }
        }
        let fit = kmeans_fit(&Tensor2::from_rows(&data).unwrap(), 2, 20, 3).unwrap();
        let tol = 0.01 * (d as f32).sqrt();
        for sign in [1.0f32, -1.0] {
            let target = vec![sign * mode; d];
            let best = (0..2)
                .map(|i| squared_distance(fit.codebook.centroid(i), &target).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(best < tol, "mode {sign}: {best}");
        }
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0f32, 1.0).unwrap();
        let data: Vec<Vec<f32>> = (0..300).map(|_| (0..4).map(|_| n.sample(&mut rng)).collect()).collect();
        let fit = kmeans_fit(&Tensor2::from_rows(&data).unwrap(), 12, 30, 9).unwrap();
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{:?}", fit.objective_history);
        }
    }

    #[test]
    fn identical_rows_flag_degenerate() {
        let data = rows(&[&[1., 1.], &[1., 1.], &[1., 1.]]);
        let fit = kmeans_fit(&data, 3, 4, 0).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.codebook.k(), 3);
        assert!(fit.codebook.centroids().iter_rows().all(|r| r == [1., 1.]));
    }

    #[test]
    fn errors() {
        let data = rows(&[&[1., 1.]]);
        assert_eq!(
            kmeans_fit(&data, 2, 3, 0).unwrap_err(),
            QuantError::TooFewRows { k: 2, rows: 1 }
        );
        assert!(kmeans_fit(&data, 1, 0, 0).is_err());
        let cb = KMeansCodebook::new(data).unwrap();
        assert!(matches!(kmeans_assign(&cb, &[1.0]), Err(QuantError::DimensionMismatch { .. })));
    }

    #[test]
    fn assignment_exact_match_and_ties() {
        let cb = KMeansCodebook::new(rows(&[&[9., 9.], &[1., 0.], &[5., 5.], &[0., 3.], &[-1., 0.]])).unwrap();
        assert_eq!(kmeans_assign(&cb, &[0., 3.]).unwrap(), 3);
        // Equidistant to centroids 1 and 4.
        assert_eq!(kmeans_assign(&cb, &[0., 0.]).unwrap(), 1);
        assert_eq!(kmeans_top_k(&cb, &[0., 0.], 3).unwrap(), vec![1, 4, 3]);
    }

    #[test]
    fn top_k_matches_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = Normal::new(0.0f32, 1.0).unwrap();
        for _ in 0..50 {
            let cents: Vec<Vec<f32>> = (0..5).map(|_| (0..3).map(|_| n.sample(&mut rng)).collect()).collect();
            let cb = KMeansCodebook::new(Tensor2::from_rows(&cents).unwrap()).unwrap();
            let x: Vec<f32> = (0..3).map(|_| n.sample(&mut rng)).collect();
            // Oracle: selection sort over explicit distances.
            let mut remaining: Vec<usize> = (0..5).collect();
            let mut oracle = Vec::new();
            while !remaining.is_empty() {
                let mut best = 0;
                for j in 1..remaining.len() {
                    let dj: f32 = cents[remaining[j]].iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                    let db: f32 = cents[remaining[best]].iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
                    if dj < db {
                        best = j;
                    }
                }
                oracle.push(remaining.remove(best));
            }
            assert_eq!(kmeans_top_k(&cb, &x, 5).unwrap(), oracle);
            assert_eq!(kmeans_assign(&cb, &x).unwrap(), oracle[0]);
        }
    }
}
