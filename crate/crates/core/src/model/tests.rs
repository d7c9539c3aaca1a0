use proptest::prelude::*;

use super::*;
use crate::data::TripletBatch;
use crate::error::Error;
use crate::numerics::{leaky_relu_scalar, Matrix, Mode};
use crate::rng::rng_from_seed;

fn tiny_config(input_len: usize, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(input_len, classes);
    cfg.window_len = 10;
    cfg.window_step = 5;
    cfg.block_units = 3;
    cfg.summary_units = 6;
    cfg.embed_units = 4;
    cfg
}

fn ramp_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

#[test]
fn single_full_window() {
    let x: Vec<f64> = (0..50).map(f64::from).collect();
    let w = split_windows(&x, 50, 25).unwrap();
    assert_eq!((w.rows(), w.cols()), (1, 50));
    assert_eq!(w.row(0), &x[..]);
}

#[test]
fn windows_start_at_multiples_of_the_step() {
    let x: Vec<f64> = (0..100).map(f64::from).collect();
    let w = split_windows(&x, 50, 25).unwrap();
    assert_eq!(w.rows(), 3);
    for (i, start) in [0.0, 25.0, 50.0].into_iter().enumerate() {
        assert_eq!(w.row(i)[0], start);
        assert_eq!(w.row(i)[49], start + 49.0);
    }
}

#[test]
fn nine_hundred_samples_give_thirty_five_windows() {
    let cfg = ModelConfig::new(900, 2);
    assert_eq!(cfg.num_windows(), 35);
    assert_eq!(cfg.concat_width(), 875);
    assert_eq!(cfg.dropped_tail(), 0);
    assert_eq!(ModelConfig::new(910, 2).dropped_tail(), 10);
}

#[test]
fn short_input_is_rejected() {
    assert_eq!(
        split_windows(&[0.0; 49], 50, 25).unwrap_err(),
        Error::InputTooShort { len: 49, window: 50 }
    );
    assert!(ModelConfig::new(49, 2).validate().is_err());
    let mut cfg = ModelConfig::new(100, 2);
    cfg.window_step = 51;
    assert!(cfg.validate().is_err());
    assert!(ModelConfig::new(100, 1).validate().is_err());
}

#[test]
fn degenerate_parameter_count() {
    let mut cfg = ModelConfig::new(50, 2);
    cfg.block_units = 1;
    cfg.summary_units = 1;
    cfg.embed_units = 1;
    // block: 50 + 1 + 2; summary: 1 + 1 + 2; embedding: 1 + 1 + 2; head: 2 + 2
    assert_eq!(count_parameters(&cfg), 65);
    assert_eq!(RamanNet::zeros(cfg).unwrap().parameter_count(), 65);
}

#[test]
fn doubling_summary_width_roughly_doubles_the_dominant_term() {
    let cfg = ModelConfig::new(2300, 20);
    let mut wide = cfg;
    wide.summary_units *= 2;
    let dominant = cfg.num_windows() * cfg.block_units * cfg.summary_units;
    let delta = count_parameters(&wide) - count_parameters(&cfg);
    // the dominant term doubles; the embedding layer's n2·nf term also doubles
    let expected = dominant + cfg.summary_units * (3 + cfg.embed_units);
    assert_eq!(delta, expected);
}

#[test]
fn zero_model_emits_head_bias() {
    let cfg = tiny_config(30, 3);
    let mut model = RamanNet::zeros(cfg).unwrap();
    model.head.bias = vec![0.5, -1.0, 2.0];
    model.embedding.norm.beta = vec![1.0, -2.0, 0.0, 3.0];
    let x = Matrix::zeros(2, 30);
    let (logits, emb) = model.infer(&x).unwrap();
    for r in 0..2 {
        assert_eq!(logits.row(r), &[0.5, -1.0, 2.0]);
        let expected: Vec<f64> = [1.0, -2.0, 0.0, 3.0]
            .iter()
            .map(|&b| leaky_relu_scalar(b, cfg.leaky_slope))
            .collect();
        assert_eq!(emb.row(r), &expected[..]);
    }
}

#[test]
fn inference_is_repeatable_and_pure() {
    let cfg = tiny_config(40, 2);
    let model = RamanNet::new(cfg, &mut rng_from_seed(1)).unwrap();
    let x = ramp_batch(5, 40, 2);
    let a = model.infer(&x).unwrap();
    let b = model.infer(&x).unwrap();
    assert_eq!(a, b);
    let mut m2 = model.clone();
    let pass = m2.forward(&x, Mode::Infer, &mut rng_from_seed(99)).unwrap();
    assert_eq!(pass.logits, a.0);
    assert_eq!(m2, model);
}

#[test]
fn train_forward_is_deterministic_given_seed() {
    let cfg = tiny_config(40, 2);
    let x = ramp_batch(6, 40, 3);
    let run = || {
        let mut model = RamanNet::new(cfg, &mut rng_from_seed(4)).unwrap();
        let pass = model.forward(&x, Mode::Train, &mut rng_from_seed(5)).unwrap();
        (pass.logits, model)
    };
    assert_eq!(run(), run());
}

#[test]
fn input_length_mismatch() {
    let model = RamanNet::new(tiny_config(40, 2), &mut rng_from_seed(1)).unwrap();
    assert_eq!(
        model.infer(&Matrix::zeros(2, 41)).unwrap_err(),
        Error::Shape {
            what: "input length",
            expected: 40,
            actual: 41
        }
    );
}

#[test]
fn perturbing_one_block_changes_only_its_slot() {
    let cfg = tiny_config(40, 2);
    let model = RamanNet::new(cfg, &mut rng_from_seed(8)).unwrap();
    let x = ramp_batch(4, 40, 9);
    let mut rng = rng_from_seed(0);
    let before = model.clone().forward(&x, Mode::Infer, &mut rng).unwrap().block_features;
    let n1 = cfg.block_units;
    for j in 0..cfg.num_windows() {
        let mut perturbed = model.clone();
        perturbed.blocks[j]
            .dense
            .weights
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w += 0.5);
        let after = perturbed.forward(&x, Mode::Infer, &mut rng).unwrap().block_features;
        for r in 0..x.rows() {
            for c in 0..cfg.concat_width() {
                let changed = before[(r, c)] != after[(r, c)];
                let in_slot = c / n1 == j;
                assert!(!changed || in_slot, "window {j} changed column {c}");
            }
        }
        assert_ne!(before.column_block(j * n1, n1), after.column_block(j * n1, n1));
    }
}

#[test]
fn blocks_share_no_storage() {
    let model = RamanNet::new(tiny_config(40, 2), &mut rng_from_seed(1)).unwrap();
    let ptrs: Vec<*const f64> = model.parameters().iter().map(|p| p.as_ptr()).collect();
    let mut sorted = ptrs.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), ptrs.len());
    assert_eq!(model.parameter_names().len(), ptrs.len());
}

#[test]
fn zero_triplet_weight_gives_pure_cross_entropy_gradients() {
    let cfg = tiny_config(30, 3);
    let mut model = RamanNet::new(cfg, &mut rng_from_seed(2)).unwrap();
    let x = ramp_batch(6, 30, 3);
    let labels = [0, 1, 2, 0, 1, 2];
    let pass = model.forward(&x, Mode::Train, &mut rng_from_seed(4)).unwrap();
    let triplets = crate::data::mine_batch_hard(&labels, &pass.embeddings).unwrap();
    assert!(!triplets.is_empty());
    let objective = Objective {
        triplet_weight: 0.0,
        ..Objective::default()
    };
    let (_, with) = model.backward(&pass, &labels, &triplets, objective).unwrap();
    let (_, without) = model
        .backward(&pass, &labels, &TripletBatch::default(), objective)
        .unwrap();
    assert_eq!(with, without);
}

#[test]
fn inactive_triplets_without_cross_entropy_give_zero_gradients() {
    let cfg = tiny_config(30, 2);
    let mut model = RamanNet::new(cfg, &mut rng_from_seed(2)).unwrap();
    let x = ramp_batch(4, 30, 3);
    let labels = [0, 0, 1, 1];
    let pass = model.forward(&x, Mode::Train, &mut rng_from_seed(4)).unwrap();
    // positive == anchor and margin 0: max(0 − ‖a − n‖², 0) = 0 for every triplet
    let objective = Objective {
        ce_weight: 0.0,
        triplet_weight: 1.0,
        margin: 0.0,
    };
    let explicit = TripletBatch {
        anchor: vec![0, 2],
        positive: vec![0, 2],
        negative: vec![2, 0],
    };
    let (losses, grads) = model.backward(&pass, &labels, &explicit, objective).unwrap();
    assert_eq!(losses.total, 0.0);
    assert!(grads.arrays().iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn triplet_indices_must_be_in_the_batch() {
    let mut model = RamanNet::new(tiny_config(30, 2), &mut rng_from_seed(2)).unwrap();
    let x = ramp_batch(3, 30, 3);
    let pass = model.forward(&x, Mode::Train, &mut rng_from_seed(4)).unwrap();
    let bad = TripletBatch {
        anchor: vec![0],
        positive: vec![1],
        negative: vec![3],
    };
    assert_eq!(
        model
            .backward(&pass, &[0, 0, 1], &bad, Objective::default())
            .unwrap_err(),
        Error::IndexOutOfRange { index: 3, len: 3 }
    );
}

proptest! {
    #[test]
    fn window_count_formula(window in 1usize..60, extra in 0usize..200, step_frac in 0.0f64..1.0) {
        let len = window + extra;
        let step = 1 + ((window - 1) as f64 * step_frac) as usize;
        let spectrum: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let w = split_windows(&spectrum, window, step).unwrap();
        prop_assert_eq!(w.rows(), (len - window) / step + 1);
        prop_assert_eq!(w.rows(), num_windows(len, window, step));
        for i in 0..w.rows() {
            prop_assert_eq!(w.row(i)[0], (i * step) as f64);
        }
        // the last window ends within the input and another would not fit
        let last_end = (w.rows() - 1) * step + window;
        prop_assert!(last_end <= len && last_end + step > len);
    }
}
