//! Parameter storage, initialization and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;

use super::graph::Gradients;
use super::tensor::Tensor2;
use super::NnError;

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor2>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2, NnError> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2, NnError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor2::len).sum()
    }

    /// Scalar count of tensors whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Glorot-uniform weight `fan_in × fan_out` at `{prefix}.w` and a zero
    /// bias `1 × fan_out` at `{prefix}.b`.
    pub fn init_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.insert(format!("{prefix}.w"), glorot_uniform(fan_in, fan_out, rng));
        self.insert(format!("{prefix}.b"), Tensor2::zeros(1, fan_out));
    }
}

pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor2 {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor2::new(fan_in, fan_out, data).expect("length matches")
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    moments: BTreeMap<String, (Tensor2, Tensor2)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl AdamState {
    pub fn new(learning_rate: f32) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: BTreeMap::new(),
        }
    }

    /// First and second moment estimates for `name`, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&Tensor2, &Tensor2)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Applies one update to every parameter that has a gradient. Gradients
    /// are validated before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<(), NnError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidLearningRate(self.learning_rate));
        }
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(NnError::Shape(format!(
                    "gradient for '{name}' is {}x{}, parameter is {}x{}",
                    g.rows(),
                    g.cols(),
                    p.rows(),
                    p.cols()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor2::zeros(g.rows(), g.cols()), Tensor2::zeros(g.rows(), g.cols())));
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(pairs: &[(&str, Tensor2)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, v) in pairs {
            s.insert(*k, v.clone());
        }
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut params = store(&[("w", Tensor2::row_vector(&[0.5, -1.5]))]);
        let before = params.clone();
        let mut adam = AdamState::default();
        let grads: Gradients = [("w".to_string(), Tensor2::zeros(1, 2))].into();
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², update = lr · g / (|g| + ε) ≈ lr.
        let mut params = store(&[("p", Tensor2::scalar(2.0))]);
        let mut adam = AdamState::new(0.1);
        let grads: Gradients = [("p".to_string(), Tensor2::scalar(1.0))].into();
        adam.step(&mut params, &grads).unwrap();
        let moved = params.get("p").unwrap().get(0, 0) - 2.0;
        assert!((moved + 0.1).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn identical_params_stay_identical() {
        let v = Tensor2::row_vector(&[0.3, 0.7]);
        let mut params = store(&[("a", v.clone()), ("b", v)]);
        let mut adam = AdamState::new(0.01);
        for i in 0..10 {
            let g = Tensor2::row_vector(&[i as f32 * 0.1 - 0.3, 1.0]);
            let grads: Gradients = [("a".to_string(), g.clone()), ("b".to_string(), g)].into();
            adam.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params.get("a").unwrap(), params.get("b").unwrap());
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_name() {
        let mut params = store(&[("w", Tensor2::scalar(1.0))]);
        let mut adam = AdamState::default();
        let grads: Gradients = [("w".to_string(), Tensor2::scalar(f32::NAN))].into();
        match adam.step(&mut params, &grads) {
            Err(NnError::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.step, 0);
        assert_eq!(params.get("w").unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = glorot_uniform(10, 6, &mut rng);
        let limit = (6.0f32 / 16.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert_eq!(w.shape(), (10, 6));
    }
}
