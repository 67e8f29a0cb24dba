use super::*;
use crate::io::synth::{correlated_pair, line_samples, planted_clusters};
use crate::sid::pack_code;

fn spec(dims: &[usize], latent: usize, q: QuantizerSpec) -> FusionSpec {
    FusionSpec::cosine(dims, 32, latent, q)
}

fn no_aux() -> LossWeights {
    LossWeights {
        commitment: 0.0,
        codebook: 0.0,
    }
}

fn forward(model: &FusionModel, data: &[&Tensor2], w: LossWeights) -> (Graph, Handles) {
    let mut g = Graph::new();
    let h = model.build(&mut g, usize::MAX, w).unwrap();
    let rows: Vec<usize> = (0..data[0].rows()).collect();
    g.forward(FusionModel::bind(data, &rows)).unwrap();
    (g, h)
}

fn small_corpus(rows: usize, seed: u64) -> Tensor2 {
    planted_clusters(rows, 12, 6, 0.4, seed).into_tensor()
}

#[test]
fn spec_validation() {
    let mut s = spec(&[4, 4], 6, QuantizerSpec::Dpca { depth: 2, groups: 4 });
    assert!(s.validate().is_err());
    s.quantizer = QuantizerSpec::Dpca { depth: 2, groups: 3 };
    assert!(s.validate().is_ok());
    s.tasks[0].weight = 0.0;
    s.tasks[1].weight = 0.0;
    assert!(s.validate().is_err());
    assert!(spec(&[], 4, QuantizerSpec::Identity).validate().is_err());
    assert!(spec(&[3], 4, QuantizerSpec::Fsq { levels: 1 }).validate().is_err());
}

#[test]
fn identity_quantizer_is_plain_autoencoder() {
    let x = small_corpus(8, 1);
    let m = FusionModel::new(spec(&[12], 4, QuantizerSpec::Identity), 3).unwrap();
    let (g, h) = forward(&m, &[&x], no_aux());
    assert_eq!(h.s, h.h);
    assert!(h.commitment.is_none());
    assert_eq!(g.value(h.s), g.value(h.h));
}

#[test]
fn surrogate_forward_equals_quantized_latent() {
    let x = small_corpus(16, 2);
    for q in [QuantizerSpec::Fsq { levels: 3 }, QuantizerSpec::Dpca { depth: 3, groups: 2 }] {
        let m = FusionModel::new(spec(&[12], 6, q), 5).unwrap();
        let (g, h) = forward(&m, &[&x], no_aux());
        let s = g.value(h.s).unwrap();
        let hat = g.value(h.h_hat).unwrap();
        assert!(s.max_abs_diff(hat) < 1e-6, "{q:?}");
    }
}

#[test]
fn straight_through_gradient_reaches_h_unchanged() {
    let x = small_corpus(16, 3);
    for q in [QuantizerSpec::Fsq { levels: 5 }, QuantizerSpec::Dpca { depth: 2, groups: 1 }] {
        let m = FusionModel::new(spec(&[12], 4, q), 7).unwrap();
        let (mut g, h) = forward(&m, &[&x], no_aux());
        g.backward(h.total).unwrap();
        let gs = g.grad(h.s).unwrap().clone();
        let gh = g.grad(h.h).unwrap();
        assert!(gs.max_abs_diff(gh) < 1e-7, "{q:?}");
        assert!(gs.data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn zero_weight_task_does_not_affect_gradients() {
    let x = small_corpus(10, 4);
    let mut s = spec(&[12, 12], 4, QuantizerSpec::Fsq { levels: 3 });
    s.tasks[0].weight = 1.0;
    s.tasks[1].weight = 0.0;
    let m = FusionModel::new(s, 1).unwrap();
    let (mut g, h) = forward(&m, &[&x, &x], no_aux());
    let grads = g.backward(h.total).unwrap();
    for name in ["head1.0.w", "head1.1.w", "head1.1.b"] {
        assert!(grads[name].data().iter().all(|&v| v == 0.0), "{name}");
    }
    assert!(grads["head0.1.w"].data().iter().any(|&v| v != 0.0));
}

#[test]
fn aux_losses_vanish_on_the_grid() {
    let x = small_corpus(6, 5);
    let mut m = FusionModel::new(spec(&[12], 4, QuantizerSpec::Dpca { depth: 3, groups: 1 }), 2).unwrap();
    // Constant latent equal to the first component: codes (+1, 0, 0).
    let u0 = m.params().get("dpca.g0.d0.u").unwrap().clone();
    *m.params_mut().get_mut("fuse.w").unwrap() = Tensor2::zeros(32, 4);
    *m.params_mut().get_mut("fuse.b").unwrap() = u0;
    let w = LossWeights {
        commitment: 0.25,
        codebook: 1.0,
    };
    let (g, h) = forward(&m, &[&x], w);
    assert_eq!(g.value(h.commitment.unwrap()).unwrap().get(0, 0), 0.0);
    assert_eq!(g.value(h.codebook.unwrap()).unwrap().get(0, 0), 0.0);
    // Off the grid both are positive.
    *m.params_mut().get_mut("fuse.b").unwrap() = Tensor2::row_vector(&[0.3, -0.2, 0.1, 0.05]);
    let (g, h) = forward(&m, &[&x], w);
    assert!(g.value(h.commitment.unwrap()).unwrap().get(0, 0) > 0.0);
    assert!(g.value(h.codebook.unwrap()).unwrap().get(0, 0) > 0.0);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let x = small_corpus(40, 6);
    let mut m = FusionModel::new(spec(&[12], 6, QuantizerSpec::Dpca { depth: 2, groups: 2 }), 4).unwrap();
    let before = m.params().clone();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 0.0,
        dropout: 0.5,
        ..TrainConfig::default()
    };
    train(&mut m, &[&x], &cfg).unwrap();
    assert_eq!(m.params(), &before);
}

#[test]
fn line_data_is_learned_with_one_ternary_dimension() {
    let x = line_samples(64, 16, 8).into_tensor();
    let mut m = FusionModel::new(spec(&[16], 1, QuantizerSpec::Fsq { levels: 3 }), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 64,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    train(&mut m, &[&x], &cfg).unwrap();
    let rec = m.reconstruct(&[&x], usize::MAX).unwrap();
    let loss = crate::eval::cosine_recon_loss(&x, &rec[0]).unwrap();
    assert!(loss < 0.05, "cosine loss {loss}");
}

#[test]
fn loss_drops_within_ten_epochs() {
    for seed in 0..5 {
        let x = planted_clusters(256, 16, 8, 0.3, seed).into_tensor();
        let mut m = FusionModel::new(spec(&[16], 6, QuantizerSpec::Dpca { depth: 3, groups: 2 }), seed).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        };
        let hist = train(&mut m, &[&x], &cfg).unwrap();
        assert_eq!(hist.len(), 11);
        assert!(hist[10].total < hist[0].total, "seed {seed}: {} vs {}", hist[10].total, hist[0].total);
    }
}

#[test]
fn duplicate_signals_converge_to_equal_losses() {
    let x = planted_clusters(512, 16, 8, 0.3, 11).into_tensor();
    let mut m = FusionModel::new(spec(&[16, 16], 8, QuantizerSpec::Fsq { levels: 3 }), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 64,
        ..TrainConfig::default()
    };
    train(&mut m, &[&x, &x], &cfg).unwrap();
    let rec = m.reconstruct(&[&x, &x], usize::MAX).unwrap();
    let a = crate::eval::cosine_recon_loss(&x, &rec[0]).unwrap();
    let b = crate::eval::cosine_recon_loss(&x, &rec[1]).unwrap();
    assert!((a - b).abs() <= 0.05 * a.max(b), "{a} vs {b}");
}

#[test]
fn divergence_restores_last_good_parameters() {
    let x = small_corpus(32, 9);
    let mut m = FusionModel::new(spec(&[12], 4, QuantizerSpec::Fsq { levels: 3 }), 1).unwrap();
    let before = m.params().clone();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 1e30,
        ..TrainConfig::default()
    };
    let err = train(&mut m, &[&x], &cfg).unwrap_err();
    assert!(matches!(err, FusionError::Diverged { epoch: 1 }), "{err}");
    assert_eq!(m.params(), &before);
}

#[test]
fn encoding_is_deterministic_and_ordered() {
    let x = small_corpus(100, 12);
    let m = FusionModel::new(spec(&[12], 6, QuantizerSpec::Dpca { depth: 2, groups: 3 }), 6).unwrap();
    let a = m.encode_corpus(&[&x], 3).unwrap();
    assert_eq!(a.records.len(), 100);
    assert_eq!(a.grams, 2);
    assert_eq!(a, m.encode_corpus(&[&x], 3).unwrap());
    // Row order follows the input.
    let rev: Vec<usize> = (0..100).rev().collect();
    let b = m.encode_corpus(&[&x.select_rows(&rev)], 3).unwrap();
    assert_eq!(b.records[0], a.records[99]);
}

#[test]
fn single_signal_sids_compose_encoder_dpca_and_pack() {
    let x = small_corpus(30, 13);
    let m = FusionModel::new(spec(&[12], 4, QuantizerSpec::Dpca { depth: 3, groups: 2 }), 8).unwrap();
    let h = m.latents(&[&x]).unwrap();
    let stack = m.dpca_stack().unwrap();
    let scheme = SidScheme::ternary(3).unwrap();
    let file = m.encode_corpus(&[&x], 3).unwrap();
    for r in 0..30 {
        let enc = dpca_encode(&stack, h.row(r)).unwrap();
        assert_eq!(file.records[r], pack_code(&scheme, &enc.codes).unwrap());
    }
}

#[test]
fn decoding_codes_matches_the_forward_pass() {
    let x = small_corpus(20, 14);
    for q in [QuantizerSpec::Fsq { levels: 3 }, QuantizerSpec::Dpca { depth: 3, groups: 2 }] {
        let m = FusionModel::new(spec(&[12], 6, q), 9).unwrap();
        let codes = m.encode_codes(&[&x]).unwrap();
        let via_codes = m.decode_codes(&codes, usize::MAX).unwrap();
        let direct = m.reconstruct(&[&x], usize::MAX).unwrap();
        assert!(via_codes[0].max_abs_diff(&direct[0]) < 1e-4, "{q:?}");
    }
}

#[test]
fn prefix_decoding_uses_fewer_layers() {
    let x = small_corpus(20, 15);
    let m = FusionModel::new(spec(&[12], 4, QuantizerSpec::Dpca { depth: 3, groups: 1 }), 10).unwrap();
    let codes = m.encode_codes(&[&x]).unwrap();
    let stack = m.dpca_stack().unwrap();
    let lat = m.code_latents(&codes, 1).unwrap();
    for (r, c) in codes.iter().enumerate() {
        assert_eq!(lat.row(r), &decode_prefix(&stack, c, 1).unwrap()[..]);
    }
}

#[test]
fn input_errors() {
    let x = small_corpus(5, 16);
    let m = FusionModel::new(spec(&[12, 12], 4, QuantizerSpec::Fsq { levels: 3 }), 0).unwrap();
    assert!(matches!(m.encode_codes(&[&x]), Err(FusionError::SignalCount { .. })));
    let mut z = x.clone();
    z.row_mut(3).iter_mut().for_each(|v| *v = 0.0);
    assert!(matches!(m.reconstruct(&[&x, &z], 1), Err(FusionError::ZeroNorm { task: 1, row: 3 })));
    let narrow = Tensor2::ones(5, 3);
    assert!(matches!(m.reconstruct(&[&x, &narrow], 1), Err(FusionError::Input { signal: 1, .. })));
}

#[test]
fn checkpoint_params_rebuild_the_model() {
    let s = spec(&[12], 6, QuantizerSpec::Dpca { depth: 2, groups: 3 });
    let m = FusionModel::new(s.clone(), 1).unwrap();
    let again = FusionModel::from_params(s.clone(), m.params().clone()).unwrap();
    assert_eq!(again, m);
    let other = FusionModel::new(spec(&[12], 6, QuantizerSpec::Fsq { levels: 3 }), 1).unwrap();
    assert!(FusionModel::from_params(s, other.into_params()).is_err());
}

#[test]
fn history_csv_layout() {
    let x = correlated_pair(32, 8, 2, 2, 0.1, 0).0.into_tensor();
    let mut m = FusionModel::new(spec(&[8], 4, QuantizerSpec::Dpca { depth: 2, groups: 1 }), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let hist = train(&mut m, &[&x], &cfg).unwrap();
    let csv = train::history_csv(&["text"], &hist);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,total,text,commitment,codebook");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
}
