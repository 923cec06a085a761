use std::collections::HashSet;

use gwork::diffmath::Tensor;
use gwork::gw::*;
use gwork::manifest::sha256_hex;
use gwork::seeds::rng_for;
use gwork::shapes::{Dataset, DatasetConfig, ShapeConfig};
use gwork::specialists::{Domain, Specialists};
use gwork::trainer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: Architecture = Architecture { hidden_width: 16, hidden_layers: 3 };

#[test]
fn split_sizes() {
    let s = split_dataset(100, 10, Unpaired::Count(90), 0).unwrap();
    assert_eq!(s.paired().len(), 10);
    assert_eq!(s.unpaired(Side::Vision).len(), 100);
    assert_eq!(s.unpaired(Side::Language).len(), 100);
    let all = split_dataset(100, 10, Unpaired::ALL, 0).unwrap();
    assert_eq!(all, s);
    assert!(matches!(split_dataset(100, 60, Unpaired::Count(41), 0), Err(TrainError::Config(_))));
}

#[test]
fn unpaired_pools_nest() {
    let a = split_dataset(1000, 10, Unpaired::Count(40), 3).unwrap();
    let b = split_dataset(1000, 10, Unpaired::Count(60), 3).unwrap();
    let small: HashSet<_> = a.unpaired(Side::Vision).iter().collect();
    let large: HashSet<_> = b.unpaired(Side::Vision).iter().collect();
    assert!(small.is_subset(&large));
    assert_eq!(a.paired(), b.paired());
}

#[test]
fn paired_fraction_is_one_half() {
    let s = split_dataset(1000, 100, Unpaired::Count(200), 1).unwrap();
    let mut rng = rng_for(1, "test-batches", 0);
    let (mut paired, mut slots) = (0usize, 0usize);
    let (sset, uset): (HashSet<_>, HashSet<_>) =
        (s.paired().iter().copied().collect(), s.unpaired(Side::Vision).iter().copied().collect());
    while slots < 100_000 {
        let b = make_batch(&s, 64, &mut rng).unwrap();
        assert_eq!(b.paired.len() + b.unpaired_v.len() + b.unpaired_t.len(), 64);
        assert!(b.paired.iter().all(|i| sset.contains(i)));
        assert!(b.unpaired_v.iter().chain(&b.unpaired_t).all(|i| uset.contains(i)));
        paired += b.paired.len();
        slots += 64;
    }
    let frac = paired as f64 / slots as f64;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
}

#[test]
fn batch_preconditions() {
    let s = split_dataset(100, 10, Unpaired::Count(0), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(make_batch(&s, 3, &mut rng).is_err());
    let empty = split_dataset(100, 0, Unpaired::Count(50), 0).unwrap();
    assert!(make_batch(&empty, 8, &mut rng).is_err());
}

#[test]
fn full_pairing_still_redraws_batches() {
    let s = split_dataset(50, 50, Unpaired::Count(0), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = make_batch(&s, 64, &mut rng).unwrap();
    let b = make_batch(&s, 64, &mut rng).unwrap();
    assert_ne!(a, b);
    let distinct: HashSet<_> = a.paired.iter().collect();
    assert!(distinct.len() < a.paired.len(), "draws are with replacement");
}

/// Vision rows uniform in [-1, 1]; the language side is a fixed linear map
/// of them, so translation is exactly learnable.
fn linear_data(k: usize, seed: u64) -> TrainData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = Tensor::from_vec(12, 12, (0..144).map(|_| rng.random_range(-0.3..0.3)).collect());
    let mut make = |rows: usize| {
        let v = Tensor::from_vec(rows, 12, (0..rows * 12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let t = gwork::diffmath::matmul_t(&v, &map);
        [v, t]
    };
    TrainData { language: Domain::Text, train: make(k), test: make(200) }
}

fn config(variant: Variant, n: usize, steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        eval_every: steps.div_ceil(4),
        arch: TINY,
        language: Domain::Text,
        ..TrainConfig::new(variant, n, RunSeeds::uniform(7))
    }
}

#[test]
fn translation_only_solves_a_linear_task() {
    let data = linear_data(8192, 1);
    let mut cfg = config(Variant::TranslationOnly, 8192, 8000);
    cfg.arch = Architecture { hidden_width: 64, hidden_layers: 3 };
    let split = split_dataset(8192, 8192, Unpaired::ALL, 0).unwrap();
    let out = train(&cfg, &split, &data).unwrap();
    let last_train = out.history.iter().rev().find(|r| r.split == EvalSplit::Train).unwrap();
    assert!(last_train.loss_tr < 1e-3, "{}", last_train.loss_tr);
    assert!(out.final_test.tr.unwrap() < 1e-3, "{:?}", out.final_test);
}

#[test]
fn training_is_reproducible() {
    let data = linear_data(300, 2);
    let cfg = config(Variant::AllSupAllCycles, 50, 200);
    let split = split_dataset(300, 50, Unpaired::Count(100), 4).unwrap();
    let a = train(&cfg, &split, &data).unwrap();
    let b = train(&cfg, &split, &data).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.checkpoint(&cfg), b.checkpoint(&cfg));
    let other =
        train(&TrainConfig { seeds: RunSeeds { batch: 8, ..cfg.seeds }, ..cfg.clone() }, &split, &data).unwrap();
    assert_ne!(a.checkpoint(&cfg), other.checkpoint(&cfg));
}

#[test]
fn history_is_complete_finite_and_ordered() {
    let data = linear_data(300, 3);
    let cfg = TrainConfig { eval_every: 30, ..config(Variant::AllSupAllCycles, 100, 200) };
    let split = split_dataset(300, 100, Unpaired::ALL, 0).unwrap();
    let out = train(&cfg, &split, &data).unwrap();
    let steps: Vec<u64> = out.history.iter().map(|r| r.step).collect();
    let expected: Vec<u64> = [0, 30, 60, 90, 120, 150, 180, 200].iter().flat_map(|&s| [s, s]).collect();
    assert_eq!(steps, expected);
    assert!(out.history.chunks(2).all(|c| c[0].split == EvalSplit::Train && c[1].split == EvalSplit::Test));
    for r in &out.history {
        for v in [r.loss_tr, r.loss_cont, r.loss_cy, r.loss_dcy, r.loss_total] {
            assert!(v.is_finite());
        }
    }
    let csv = String::from_utf8(out.metrics_csv()).unwrap();
    assert!(csv.starts_with("step,split,loss_tr,loss_cont,loss_cy,loss_dcy,loss_total\n0,train,"));
    assert_eq!(csv.lines().count(), 1 + out.history.len());
    assert!(!csv.contains('\r'));
}

#[test]
fn logging_does_not_perturb_the_trajectory() {
    let data = linear_data(200, 4);
    let split = split_dataset(200, 60, Unpaired::ALL, 1).unwrap();
    let quiet = config(Variant::TranslationOnly, 60, 120);
    let chatty = TrainConfig { eval_every: 1, ..quiet.clone() };
    let a = train(&quiet, &split, &data).unwrap();
    let b = train(&chatty, &split, &data).unwrap();
    assert_eq!(a.model.store, b.model.store);
    assert_eq!(b.history.len(), 2 * 121);
}

#[test]
fn diverging_run_reports_the_step() {
    let data = linear_data(100, 5);
    let split = split_dataset(100, 100, Unpaired::ALL, 0).unwrap();
    let cfg = TrainConfig { learning_rate: 1e300, ..config(Variant::TranslationOnly, 100, 50) };
    match train(&cfg, &split, &data) {
        Err(TrainError::NonFinite { step, .. }) => assert!((1..=50).contains(&step)),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.final_test)),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let data = linear_data(100, 6);
    let split = split_dataset(100, 10, Unpaired::ALL, 0).unwrap();
    let bad_weights = TrainConfig {
        weights: Some(LossWeights { tr: 1.0, cont: 1.0, cy: 0.0, dcy: 0.0 }),
        ..config(Variant::TranslationOnly, 10, 10)
    };
    assert!(train(&bad_weights, &split, &data).is_err());
    let too_many = config(Variant::TranslationOnly, 200, 10);
    assert!(matches!(too_many.validate(100), Err(TrainError::Config(_))));
    let mismatched = config(Variant::TranslationOnly, 20, 10);
    assert!(train(&mismatched, &split, &data).is_err());
}

#[test]
fn specialists_are_untouched_by_training() {
    let sp = Specialists::new(0, ShapeConfig::default()).unwrap();
    let before = [sha256_hex(&sp.vision.snapshot()), sha256_hex(&sp.text.snapshot())];
    let ds = Dataset::generate(&DatasetConfig { k: 200, n_test: 64, ..DatasetConfig::default() }).unwrap();
    let data = TrainData::from_dataset(&ds, &sp, Domain::Text).unwrap();
    let split = split_dataset(200, 50, Unpaired::ALL, 0).unwrap();
    train(&config(Variant::AllSupAllCycles, 50, 30), &split, &data).unwrap();
    assert_eq!(before, [sha256_hex(&sp.vision.snapshot()), sha256_hex(&sp.text.snapshot())]);
}

#[test]
fn calibration_examples() {
    let ((a, b), note) = calibrate_score_weights(0.2, 0.05);
    assert!((a - 0.2).abs() < 1e-15 && (b - 0.8).abs() < 1e-15);
    assert!(note.is_none());
    assert_eq!(calibrate_score_weights(0.3, 0.3).0, (0.5, 0.5));
    let (w, note) = calibrate_score_weights(0.0, 0.4);
    assert_eq!(w, (0.5, 0.5));
    assert!(note.is_some());
}

#[test]
fn grid_enumeration() {
    let values = [0.1, 1.0, 10.0];
    assert_eq!(coefficient_grid(Variant::AllSupAllCycles, &values).len(), 27);
    assert_eq!(coefficient_grid(Variant::TransCont, &values).len(), 3);
    assert_eq!(coefficient_grid(Variant::TranslationOnly, &values), vec![Variant::TranslationOnly.default_weights()]);
    let g = coefficient_grid(Variant::AllSupAllCycles, &values);
    assert!(g.windows(2).all(|w| w[0].as_array() < w[1].as_array()));
    assert!(g.iter().all(|w| w.tr == 1.0 && w.validate_for(Variant::AllSupAllCycles).is_ok()));
}

#[test]
fn selection_returns_the_grid_minimum() {
    let data = linear_data(200, 8);
    let split = split_dataset(200, 40, Unpaired::ALL, 0).unwrap();
    let cfg = config(Variant::TransCont, 40, 60);
    let sel = select_coefficients(&cfg, &split, &data, &[0.1, 10.0], (0.5, 0.5)).unwrap();
    assert_eq!(sel.grid.len(), 2);
    let min = sel.grid.iter().map(|r| r.score).fold(f64::INFINITY, f64::min);
    assert_eq!(sel.best_score, min);
    assert!(sel.grid.iter().any(|r| r.weights == sel.best && r.score == min));

    let one = select_coefficients(&cfg, &split, &data, &[1.0], (0.5, 0.5)).unwrap();
    assert_eq!(one.best, Variant::TransCont.default_weights());
}

proptest! {
    #[test]
    fn calibration_equalizes_and_is_scale_free(tr in 1e-6..10.0f64, cont in 1e-6..10.0f64, s in 1e-3..1e3f64) {
        let ((a, b), _) = calibrate_score_weights(tr, cont);
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((a * tr - b * cont).abs() <= 1e-12 * (a * tr).max(1e-300));
        let ((a2, b2), _) = calibrate_score_weights(tr * s, cont * s);
        prop_assert!((a - a2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
    }

    #[test]
    fn splits_nest_for_any_seed(seed in any::<u64>(), n in 1usize..50, m1 in 0usize..100, extra in 0usize..100) {
        let a = split_dataset(300, n, Unpaired::Count(m1), seed).unwrap();
        let b = split_dataset(300, n, Unpaired::Count(m1 + extra), seed).unwrap();
        prop_assert_eq!(a.unpaired(Side::Vision), &b.unpaired(Side::Vision)[..n + m1]);
        prop_assert!(a.paired().iter().all(|i| a.unpaired(Side::Language).contains(i)));
    }
}
