mod common;

use common::*;
use proptest::prelude::*;
use vit_hgr::segment::WindowTensor;
use vit_hgr::train::{
    adam_step, check_partition, epoch_order, make_folds, mean, permute_labels, run_cv_detailed,
    sample_std, train_model, AdamState, DecayMode, FoldReport, TrainConfig,
};
use vit_hgr::vit::VitConfig;
use vit_hgr::Error;

/// Plain per-scalar Adam with decoupled decay, written independently of the
/// library's tensor bookkeeping.
struct ScalarAdam {
    m: f64,
    v: f64,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, t: i32, lr: f64, wd: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(t));
        let v_hat = self.v / (1.0 - b2.powi(t));
        let decayed = theta - lr * wd * theta;
        decayed - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

#[test]
fn adam_matches_scalar_reference_on_a_quadratic() {
    // f(θ) = Σ aᵢ(θᵢ − cᵢ)², first two entries decayed, the last one not
    let a = [1.0, 3.0, 0.5];
    let c = [0.7, -1.2, 2.5];
    let config = TrainConfig {
        learning_rate: 0.05,
        weight_decay: 0.01,
        ..TrainConfig::default()
    };
    let mut weights = vec![0.1, 0.2];
    let mut bias = vec![-0.3];
    let mut state = AdamState::new([2, 1]);
    let mut reference = [0.1, 0.2, -0.3];
    let mut scalar: Vec<ScalarAdam> = (0..3).map(|_| ScalarAdam { m: 0.0, v: 0.0 }).collect();
    for t in 1..=10 {
        let grad = |th: f64, i: usize| 2.0 * a[i] * (th - c[i]);
        let grads = vec![
            vec![grad(weights[0], 0), grad(weights[1], 1)],
            vec![grad(bias[0], 2)],
        ];
        for i in 0..3 {
            let wd = if i < 2 { config.weight_decay } else { 0.0 };
            reference[i] = scalar[i].step(reference[i], grad(reference[i], i), t, config.learning_rate, wd);
        }
        let mut params: Vec<&mut [f64]> = vec![&mut weights, &mut bias];
        adam_step(&mut params, &grads, &[true, false], &mut state, &config, t as u64).unwrap();
        let got = [weights[0], weights[1], bias[0]];
        for i in 0..3 {
            assert!((got[i] - reference[i]).abs() <= 1e-12, "step {t} entry {i}");
        }
    }
}

#[test]
fn adam_fixed_point_and_steady_state() {
    let config = TrainConfig {
        weight_decay: 0.0,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut p = vec![0.5, -2.0];
    let mut state = AdamState::new([2]);
    for t in 1..=5 {
        adam_step(&mut [&mut p[..]], &[vec![0.0, 0.0]], &[true], &mut state, &config, t).unwrap();
    }
    assert_eq!(p, vec![0.5, -2.0]);

    let mut p = vec![0.0, 0.0];
    let mut state = AdamState::new([2]);
    let mut last = p.clone();
    for t in 1..=2000 {
        last.copy_from_slice(&p);
        adam_step(&mut [&mut p[..]], &[vec![3.0, -0.2]], &[true], &mut state, &config, t).unwrap();
    }
    assert!((p[0] - last[0] + 1e-3).abs() < 1e-9);
    assert!((p[1] - last[1] - 1e-3).abs() < 1e-9);
}

#[test]
fn adam_rejects_bad_calls() {
    let config = TrainConfig::default();
    let mut p = [0.0; 2];
    let mut state = AdamState::new([2]);
    assert!(matches!(
        adam_step(&mut [&mut p[..]], &[vec![0.0; 2]], &[true], &mut state, &config, 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        adam_step(&mut [&mut p[..]], &[vec![0.0; 3]], &[true], &mut state, &config, 1),
        Err(Error::Contract(_))
    ));
    let mut other = AdamState::new([3]);
    assert!(adam_step(&mut [&mut p[..]], &[vec![0.0; 2]], &[true], &mut other, &config, 1).is_err());
}

#[test]
fn weight_decay_reaches_weight_matrices_only() {
    let cfg = micro_config(2, 3, 4, 2, 8, 3);
    let params = random_params(&cfg, 1, 0.5);
    let patches = from_mat(&random_mat(&mut rng(2), 2, 3, 1.0));
    let grads = model_gradients(&params, &patches, 1);
    let decay: Vec<bool> = params.entries().iter().map(|e| e.2).collect();
    for mode in [DecayMode::Decoupled, DecayMode::Coupled] {
        let step = |wd: f64| {
            let mut p = params.clone();
            let mut state = AdamState::for_params(&p);
            let config = TrainConfig {
                weight_decay: wd,
                weight_decay_mode: mode,
                ..TrainConfig::default()
            };
            let mut tensors: Vec<&mut [f64]> = p.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
            adam_step(&mut tensors, &grads, &decay, &mut state, &config, 1).unwrap();
            p
        };
        let (with, without) = (step(0.1), step(0.0));
        let names: Vec<String> = params.entries().into_iter().map(|e| e.0).collect();
        for (i, name) in names.iter().enumerate() {
            let a = with.entries()[i].1.data().to_vec();
            let b = without.entries()[i].1.data().to_vec();
            let excluded = name.contains("ln")
                || name.contains("norm")
                || name.ends_with(".bias")
                || name == "class_token"
                || name == "positional_embedding";
            if excluded {
                assert_eq!(a, b, "{name} received decay under {mode:?}");
            } else {
                assert!(name.ends_with(".weight"));
                assert!(a.iter().zip(&b).any(|(x, y)| x != y), "{name} missed decay under {mode:?}");
            }
        }
    }
}

#[test]
fn epoch_order_covers_every_window_once() {
    for (n, batch) in [(13usize, 5usize), (8, 8), (7, 3), (1, 4), (40, 128)] {
        for epoch in 0..4 {
            let order = epoch_order(n, 3, 1, epoch);
            let mut seen: Vec<usize> = order.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = order.chunks(batch).map(<[usize]>::len).collect();
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert_eq!(sizes.len(), n.div_ceil(batch));
            if n % batch != 0 {
                assert_eq!(*sizes.last().unwrap(), n % batch);
            }
        }
    }
    assert_eq!(epoch_order(50, 9, 2, 3), epoch_order(50, 9, 2, 3));
    assert_ne!(epoch_order(50, 9, 2, 3), epoch_order(50, 9, 2, 4));
    assert_ne!(epoch_order(50, 9, 2, 3), epoch_order(50, 9, 3, 3));
}

fn labelled(rep: u32, gesture: u32) -> WindowTensor {
    WindowTensor::new(vec![f64::from(gesture); 4], 1, 2, 2, gesture, 0, rep).unwrap()
}

#[test]
fn five_repetitions_of_ten_windows() {
    let windows: Vec<_> = (0..5).flat_map(|r| (0..10).map(move |g| labelled(r, g % 3))).collect();
    let folds = make_folds(&windows, 5).unwrap();
    for (k, f) in folds.iter().enumerate() {
        assert_eq!(f.test_repetition, k as u32);
        assert_eq!((f.train.len(), f.test.len()), (40, 10));
    }
    let missing: Vec<_> = windows.iter().filter(|w| w.repetition_id != 2).cloned().collect();
    assert!(matches!(make_folds(&missing, 5), Err(Error::Protocol(_))));
    let mut stray = windows.clone();
    stray.push(labelled(5, 0));
    assert!(matches!(make_folds(&stray, 5), Err(Error::Protocol(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_by_repetition(
        reps in 2u32..8,
        counts in proptest::collection::vec(1usize..9, 8),
        seed in any::<u64>(),
    ) {
        let mut windows = Vec::new();
        for r in 0..reps {
            for i in 0..counts[r as usize] {
                windows.push(labelled(r, (i as u32 + r) % 4));
            }
        }
        // interleave so folds cannot rely on input order
        let order = epoch_order(windows.len(), seed, 0, 0);
        let windows: Vec<WindowTensor> = order.iter().map(|&i| windows[i].clone()).collect();
        let folds = make_folds(&windows, reps).unwrap();
        prop_assert_eq!(folds.len(), reps as usize);
        check_partition(&folds, &windows).unwrap();
        let mut tested = vec![0usize; windows.len()];
        for f in &folds {
            for &i in &f.test {
                tested[i] += 1;
                prop_assert_eq!(windows[i].repetition_id, f.test_repetition);
            }
            for &i in &f.train {
                prop_assert_ne!(windows[i].repetition_id, f.test_repetition);
            }
            prop_assert_eq!(f.train.len() + f.test.len(), windows.len());
        }
        prop_assert!(tested.iter().all(|&c| c == 1));
    }

    #[test]
    fn fold_report_statistics(accs in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
        let r = FoldReport::from_accuracies(accs.clone());
        let m = accs.iter().sum::<f64>() / accs.len() as f64;
        prop_assert!((r.mean_accuracy - m).abs() <= 1e-12);
        let want = if accs.len() < 2 {
            0.0
        } else {
            (accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
        };
        prop_assert!((r.std - want).abs() <= 1e-12);
        prop_assert_eq!(r.mean_accuracy.to_bits(), mean(&accs).to_bits());
        prop_assert_eq!(r.std.to_bits(), sample_std(&accs).to_bits());
    }
}

#[test]
fn label_permutation_keeps_class_counts() {
    let windows: Vec<_> = (0..5).flat_map(|r| (0..12).map(move |g| labelled(r, g % 4))).collect();
    let shuffled = permute_labels(&windows, 4);
    let count = |ws: &[WindowTensor], g: u32| ws.iter().filter(|w| w.gesture_id == g).count();
    for g in 0..4 {
        assert_eq!(count(&windows, g), count(&shuffled, g));
    }
    assert!(windows.iter().zip(&shuffled).any(|(a, b)| a.gesture_id != b.gesture_id));
    assert_eq!(shuffled, permute_labels(&windows, 4));
    assert!(windows.iter().zip(&shuffled).all(|(a, b)| a.repetition_id == b.repetition_id && a.data() == b.data()));
}

/// Small separable problem: 2×2 grid, 8-sample windows, the active
/// electrode encodes the class.
fn tiny_task() -> (Vec<WindowTensor>, VitConfig) {
    let mut r = rng(11);
    let mut windows = Vec::new();
    for rep in 0..3u32 {
        for g in 0..3u32 {
            for _ in 0..4 {
                let noise = normal_vec(&mut r, 32, 0.05);
                windows.push(window_from((8, 2, 2), (g, 0, rep), |t, row, col| {
                    let level = if (row * 2 + col) as u32 == g { 1.0 } else { 0.1 };
                    level + noise[t * 4 + row * 2 + col]
                }));
            }
        }
    }
    let mut cfg = micro_config(8, 4, 8, 2, 16, 3);
    cfg.patch_side = 2;
    (windows, cfg)
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        epochs: 30,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn cross_validation_is_deterministic_and_learns() {
    let (windows, cfg) = tiny_task();
    let tc = tiny_train();
    let a = run_cv_detailed(&windows, 3, &cfg, &tc, 1).unwrap();
    let b = run_cv_detailed(&windows, 3, &cfg, &tc, 1).unwrap();
    let c = run_cv_detailed(&windows, 3, &cfg, &tc, 3).unwrap();
    assert!(a.report.same_outcome(&b.report));
    assert!(a.report.same_outcome(&c.report));
    assert_eq!(a.models, c.models);
    assert_eq!(a.report.fold_accuracies.len(), 3);
    for losses in &a.report.epoch_losses {
        assert_eq!(losses.len(), 30);
        assert!(losses[29] < losses[0]);
    }
    assert!(a.report.mean_accuracy >= 0.9, "{:?}", a.report.fold_accuracies);
    let other = run_cv_detailed(&windows, 3, &cfg, &TrainConfig { seed: 6, ..tc }, 1).unwrap();
    assert!(!a.report.same_outcome(&other.report));
}

#[test]
fn training_rejects_labels_beyond_the_head() {
    let (mut windows, cfg) = tiny_task();
    windows[0] = windows[0].relabeled(7);
    let refs: Vec<&WindowTensor> = windows.iter().collect();
    assert!(matches!(train_model(&refs, &cfg, &tiny_train(), 0), Err(Error::Contract(_))));
    assert!(train_model(&[], &cfg, &tiny_train(), 0).is_err());
}
