//! Synthetic engagement data with a known user–item affinity rule.
//!
//! Every item has a distinct random ternary code of `digits` digits; its
//! latent is the code scaled to roughly unit norm and its SID packs the code
//! as a single gram. A user has an anchor item; history items are drawn with
//! probability `∝ exp(κ·⟨e_anchor, e_i⟩)`. The user's preference is the mean
//! history latent `p_u`, and a shown item `t` is clicked with probability
//! `sigmoid(a·⟨p_u, e_t⟩ + b)`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::io::FormatError;
use crate::quant::CodewordVector;
use crate::sid::{pack, unpack, SidScheme};

#[derive(Debug, Clone, PartialEq)]
pub struct EngagementConfig {
    pub users: usize,
    pub items: usize,
    /// Ternary digits per item code (SIDE length `t`).
    pub digits: usize,
    /// History length `l`.
    pub history: usize,
    /// Shown items per user.
    pub targets_per_user: usize,
    /// Concentration of histories around the anchor.
    pub kappa: f64,
    /// Fraction of shown items drawn from the user's taste distribution;
    /// the rest are uniform.
    pub taste_fraction: f64,
    pub slope: f64,
    pub intercept: f64,
    pub seed: u64,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        Self {
            users: 10_000,
            items: 2_000,
            digits: 8,
            history: 32,
            targets_per_user: 4,
            kappa: 4.0,
            taste_fraction: 0.2,
            slope: 4.0,
            intercept: -1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user: usize,
    pub target: usize,
    pub label: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEngagementSet {
    pub scheme: SidScheme,
    /// One SID per item.
    pub item_sids: Vec<u64>,
    /// Item latents, `digits` floats each.
    pub item_latents: Vec<Vec<f32>>,
    /// `history` item ids per user.
    pub histories: Vec<Vec<usize>>,
    pub samples: Vec<Sample>,
    pub seed: u64,
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn latent_scale(digits: usize) -> f32 {
    // A random ternary digit is non-zero with probability 2/3.
    (1.5 / digits as f32).sqrt()
}

impl SyntheticEngagementSet {
    pub fn generate(cfg: &EngagementConfig) -> Result<Self, String> {
        if cfg.users == 0 || cfg.items < 2 || cfg.history == 0 || cfg.targets_per_user == 0 {
            return Err("users, items (≥ 2), history and targets_per_user must be positive".into());
        }
        let scheme = SidScheme::ternary(cfg.digits).map_err(|e| e.to_string())?;
        if (cfg.items as u64) > scheme.cardinality() {
            return Err(format!(
                "{} items do not fit {} distinct {}-digit ternary codes",
                cfg.items,
                scheme.cardinality(),
                cfg.digits
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut seen = HashSet::new();
        let mut item_sids = Vec::with_capacity(cfg.items);
        let mut item_latents = Vec::with_capacity(cfg.items);
        let scale = latent_scale(cfg.digits);
        while item_sids.len() < cfg.items {
            let code: Vec<i32> = (0..cfg.digits).map(|_| rng.random_range(-1..=1)).collect();
            let sid = pack(&scheme, &code).map_err(|e| e.to_string())?;
            if seen.insert(sid) {
                item_sids.push(sid);
                item_latents.push(code.iter().map(|&c| c as f32 * scale).collect::<Vec<f32>>());
            }
        }
        let mut histories = Vec::with_capacity(cfg.users);
        let mut samples = Vec::with_capacity(cfg.users * cfg.targets_per_user);
        for user in 0..cfg.users {
            let anchor = rng.random_range(0..cfg.items);
            let weights: Vec<f64> = item_latents
                .iter()
                .map(|e| (cfg.kappa * dot(&item_latents[anchor], e)).exp())
                .collect();
            let taste = WeightedIndex::new(&weights).map_err(|e| e.to_string())?;
            let hist: Vec<usize> = (0..cfg.history).map(|_| taste.sample(&mut rng)).collect();
            let mut pref = vec![0.0f32; cfg.digits];
            for &i in &hist {
                for (p, e) in pref.iter_mut().zip(&item_latents[i]) {
                    *p += e / cfg.history as f32;
                }
            }
            for _ in 0..cfg.targets_per_user {
                let target = if rng.random::<f64>() < cfg.taste_fraction {
                    taste.sample(&mut rng)
                } else {
                    rng.random_range(0..cfg.items)
                };
                let p = sigmoid(cfg.slope * dot(&pref, &item_latents[target]) + cfg.intercept);
                let label = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                samples.push(Sample { user, target, label });
            }
            histories.push(hist);
        }
        Ok(Self {
            scheme,
            item_sids,
            item_latents,
            histories,
            samples,
            seed: cfg.seed,
        })
    }

    pub fn items(&self) -> usize {
        self.item_sids.len()
    }

    pub fn users(&self) -> usize {
        self.histories.len()
    }

    pub fn history_len(&self) -> usize {
        self.histories.first().map_or(0, Vec::len)
    }

    pub fn digits(&self) -> usize {
        self.scheme.ngram()
    }

    pub fn positive_rate(&self) -> f64 {
        self.samples.iter().map(|s| s.label as f64).sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Samples of users with `user % folds != fold` (train) and `== fold`
    /// (test).
    pub fn split(&self, folds: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.samples.len()).partition(|&i| self.samples[i].user % folds != fold)
    }

    pub fn item_code(&self, item: usize) -> CodewordVector {
        let centered = unpack(&self.scheme, self.item_sids[item]).expect("generated SIDs are valid");
        CodewordVector::from_centered(&centered, 3, 1).expect("ternary digits")
    }

    /// Text form: a header, one `i <sid>` line per item, one `u <items…>`
    /// line per user and one `s <user> <target> <label>` line per sample.
    /// Item latents are recomputed from the SIDs on parsing.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#ENGv1 items={} users={} digits={} history={} samples={} seed={}\n",
            self.items(),
            self.users(),
            self.digits(),
            self.history_len(),
            self.samples.len(),
            self.seed
        );
        for s in &self.item_sids {
            let _ = writeln!(out, "i {s}");
        }
        for h in &self.histories {
            out.push('u');
            for i in h {
                let _ = write!(out, " {i}");
            }
            out.push('\n');
        }
        for s in &self.samples {
            let _ = writeln!(out, "s {} {} {}", s.user, s.target, s.label as u8);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let bad = |line: usize, detail: String| FormatError::Line { line, detail };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let rest = header
            .strip_prefix("#ENGv1")
            .ok_or_else(|| bad(1, "expected '#ENGv1' header".into()))?;
        let mut fields = std::collections::HashMap::new();
        for f in rest.split_whitespace() {
            let (k, v) = f.split_once('=').ok_or_else(|| bad(1, format!("bad header field {f:?}")))?;
            let v: u64 = v.parse().map_err(|_| bad(1, format!("bad header value {f:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(1, format!("header lacks {k}")));
        let (items, users, digits, history, n_samples, seed) = (
            get("items")? as usize,
            get("users")? as usize,
            get("digits")? as usize,
            get("history")? as usize,
            get("samples")? as usize,
            get("seed")?,
        );
        let scheme = SidScheme::ternary(digits).map_err(|e| bad(1, e.to_string()))?;
        let scale = latent_scale(digits);
        let mut set = Self {
            scheme,
            item_sids: Vec::with_capacity(items),
            item_latents: Vec::with_capacity(items),
            histories: Vec::with_capacity(users),
            samples: Vec::with_capacity(n_samples),
            seed,
        };
        let num = |line: usize, t: &str| t.parse::<usize>().map_err(|_| bad(line, format!("invalid number {t:?}")));
        for (i, line) in lines {
            let ln = i + 1;
            let mut toks = line.split_whitespace();
            match toks.next() {
                None => continue,
                Some("i") => {
                    let t = toks.next().ok_or_else(|| bad(ln, "missing SID".into()))?;
                    let sid: u64 = t.parse().map_err(|_| bad(ln, format!("invalid SID {t:?}")))?;
                    let code = unpack(&scheme, sid).map_err(|e| bad(ln, e.to_string()))?;
                    set.item_sids.push(sid);
                    set.item_latents.push(code.iter().map(|&c| c as f32 * scale).collect());
                }
                Some("u") => {
                    let h = toks.map(|t| num(ln, t)).collect::<Result<Vec<_>, _>>()?;
                    if h.len() != history || h.iter().any(|&i| i >= items) {
                        return Err(bad(ln, "history has the wrong length or an unknown item".into()));
                    }
                    set.histories.push(h);
                }
                Some("s") => {
                    let v = toks.map(|t| num(ln, t)).collect::<Result<Vec<_>, _>>()?;
                    if v.len() != 3 || v[0] >= users || v[1] >= items || v[2] > 1 {
                        return Err(bad(ln, "sample needs <user> <target> <0|1> within range".into()));
                    }
                    set.samples.push(Sample {
                        user: v[0],
                        target: v[1],
                        label: v[2] as f32,
                    });
                }
                Some(other) => return Err(bad(ln, format!("unknown record type {other:?}"))),
            }
        }
        if set.items() != items || set.users() != users || set.samples.len() != n_samples {
            return Err(FormatError::Malformed {
                offset: text.len(),
                detail: "record counts do not match the header".into(),
            });
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EngagementConfig {
        EngagementConfig {
            users: 200,
            items: 100,
            digits: 6,
            history: 8,
            targets_per_user: 3,
            seed: 4,
            ..EngagementConfig::default()
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = SyntheticEngagementSet::generate(&small()).unwrap();
        assert_eq!(a, SyntheticEngagementSet::generate(&small()).unwrap());
        let other = SyntheticEngagementSet::generate(&EngagementConfig { seed: 5, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn items_have_distinct_sids_and_binary_labels() {
        let a = SyntheticEngagementSet::generate(&small()).unwrap();
        let distinct: HashSet<u64> = a.item_sids.iter().copied().collect();
        assert_eq!(distinct.len(), 100);
        assert!(a.samples.iter().all(|s| s.label == 0.0 || s.label == 1.0));
        assert!(a.histories.iter().all(|h| h.len() == 8));
        let rate = a.positive_rate();
        assert!(rate > 0.05 && rate < 0.6, "{rate}");
    }

    #[test]
    fn too_many_items_for_the_code_space() {
        let cfg = EngagementConfig {
            items: 10,
            digits: 2,
            ..small()
        };
        assert!(SyntheticEngagementSet::generate(&cfg).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let a = SyntheticEngagementSet::generate(&small()).unwrap();
        let b = SyntheticEngagementSet::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert!(SyntheticEngagementSet::parse("#ENGv1 items=1\n").is_err());
        let mut t = a.to_text();
        t.push_str("s 0 0 2\n");
        assert!(SyntheticEngagementSet::parse(&t).is_err());
    }

    #[test]
    fn split_is_by_user() {
        let a = SyntheticEngagementSet::generate(&small()).unwrap();
        let (train, test) = a.split(5, 0);
        assert_eq!(train.len() + test.len(), a.samples.len());
        assert!(test.iter().all(|&i| a.samples[i].user % 5 == 0));
    }
}
