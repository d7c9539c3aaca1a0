//! Analytic gradients against central finite differences.

use ramannet_core::data::{mine_batch_hard, TripletBatch};
use ramannet_core::model::{ModelConfig, Objective, RamanNet};
use ramannet_core::numerics::{
    leaky_relu, leaky_relu_backward, softmax_cross_entropy, triplet_loss, BatchNormLayer, DenseLayer, DropoutSpec,
    Matrix, Mode,
};
use ramannet_core::rng::{rng_from_seed, ModelRng};
use rand::Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central difference of `f` along coordinate `i` of `x`, or `None` when the
/// one-sided slopes disagree (a kink lies within `H`).
fn central(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> Option<f64> {
    let mut p = x.to_vec();
    p[i] = x[i] + H;
    let up = f(&p);
    p[i] = x[i] - H;
    let down = f(&p);
    let mid = f(x);
    let (fwd, bwd) = ((up - mid) / H, (mid - down) / H);
    if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
        return None;
    }
    Some((up - down) / (2.0 * H))
}

#[derive(Default)]
struct Check {
    worst: f64,
    checked: usize,
    kinks: usize,
}

impl Check {
    fn compare(&mut self, f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
        assert_eq!(x.len(), analytic.len());
        for i in 0..x.len() {
            match central(f, x, i) {
                Some(n) => {
                    self.worst = self.worst.max(rel_err(analytic[i], n));
                    self.checked += 1;
                }
                None => self.kinks += 1,
            }
        }
    }
}

fn random(rows: usize, cols: usize, rng: &mut ModelRng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted_sum(out: &Matrix, upstream: &Matrix) -> f64 {
    out.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
}

fn reshape(like: &Matrix, data: &[f64]) -> Matrix {
    Matrix::from_vec(like.rows(), like.cols(), data.to_vec()).unwrap()
}

#[test]
fn dense_layer() {
    let mut c = Check::default();
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let layer = DenseLayer::glorot(5, 4, &mut rng);
        let x = random(3, 5, &mut rng);
        let u = random(3, 4, &mut rng);
        let g = layer.backward(&x, &u).unwrap();

        c.compare(&mut |v| weighted_sum(&layer.forward(&reshape(&x, v)).unwrap(), &u), x.as_slice(), g.input.as_slice());
        c.compare(
            &mut |v| {
                let l = DenseLayer::new(reshape(&layer.weights, v), layer.bias.clone()).unwrap();
                weighted_sum(&l.forward(&x).unwrap(), &u)
            },
            layer.weights.as_slice(),
            g.weights.as_slice(),
        );
        c.compare(
            &mut |v| {
                let l = DenseLayer::new(layer.weights.clone(), v.to_vec()).unwrap();
                weighted_sum(&l.forward(&x).unwrap(), &u)
            },
            &layer.bias,
            &g.bias,
        );
    }
    assert!(c.worst < 1e-4, "worst relative error {}", c.worst);
    assert_eq!(c.kinks, 0);
}

#[test]
fn batchnorm_in_every_mode() {
    for mode in [Mode::Train, Mode::FrozenStatistics, Mode::Infer] {
        let mut c = Check::default();
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let mut bn = BatchNormLayer::new(4, 0.99, 1e-3).unwrap();
            for j in 0..4 {
                bn.gamma[j] = rng.gen_range(0.5..1.5);
                bn.beta[j] = rng.gen_range(-0.5..0.5);
                bn.running_mean[j] = rng.gen_range(-0.5..0.5);
                bn.running_var[j] = rng.gen_range(0.5..2.0);
            }
            let x = random(6, 4, &mut rng);
            let u = random(6, 4, &mut rng);
            let (_, cache, _) = bn.normalize(&x, mode).unwrap();
            let g = bn.backward(&cache, &u).unwrap();
            let eval = |layer: &BatchNormLayer, input: &Matrix| weighted_sum(&layer.normalize(input, mode).unwrap().0, &u);

            c.compare(&mut |v| eval(&bn, &reshape(&x, v)), x.as_slice(), g.input.as_slice());
            c.compare(
                &mut |v| {
                    let mut l = bn.clone();
                    l.gamma = v.to_vec();
                    eval(&l, &x)
                },
                &bn.gamma,
                &g.gamma,
            );
            c.compare(
                &mut |v| {
                    let mut l = bn.clone();
                    l.beta = v.to_vec();
                    eval(&l, &x)
                },
                &bn.beta,
                &g.beta,
            );
        }
        assert!(c.worst < 1e-4, "{mode:?}: worst relative error {}", c.worst);
    }
}

#[test]
fn leaky_relu_away_from_zero() {
    let mut c = Check::default();
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let x = random(4, 6, &mut rng);
        let u = random(4, 6, &mut rng);
        let g = leaky_relu_backward(&x, &u, 0.3).unwrap();
        c.compare(&mut |v| weighted_sum(&leaky_relu(&reshape(&x, v), 0.3), &u), x.as_slice(), g.as_slice());
    }
    assert!(c.worst < 1e-4, "worst relative error {}", c.worst);
}

#[test]
fn dropout_with_a_fixed_mask() {
    let mut c = Check::default();
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let spec = DropoutSpec::new(0.4).unwrap();
        let x = random(5, 6, &mut rng);
        let u = random(5, 6, &mut rng);
        let (_, mask) = spec.apply(&x, Mode::Train, &mut rng_from_seed(seed + 1000));
        let g = mask.backward(&u).unwrap();
        c.compare(
            &mut |v| {
                let (out, _) = spec.apply(&reshape(&x, v), Mode::Train, &mut rng_from_seed(seed + 1000));
                weighted_sum(&out, &u)
            },
            x.as_slice(),
            g.as_slice(),
        );
    }
    assert!(c.worst < 1e-4, "worst relative error {}", c.worst);
}

#[test]
fn softmax_cross_entropy_logits() {
    let mut c = Check::default();
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let z = random(5, 4, &mut rng).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..4)).collect();
        let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
        c.compare(&mut |v| softmax_cross_entropy(&reshape(&z, v), &labels).unwrap().0, z.as_slice(), g.as_slice());
    }
    assert!(c.worst < 1e-4, "worst relative error {}", c.worst);
}

#[test]
fn triplet_loss_all_roles() {
    let mut c = Check::default();
    for seed in 0..20 {
        let mut rng = rng_from_seed(seed);
        let (a, p, n) = (random(6, 3, &mut rng), random(6, 3, &mut rng), random(6, 3, &mut rng));
        let out = triplet_loss(&a, &p, &n, 0.8).unwrap();
        c.compare(&mut |v| triplet_loss(&reshape(&a, v), &p, &n, 0.8).unwrap().loss, a.as_slice(), out.grad_anchor.as_slice());
        c.compare(&mut |v| triplet_loss(&a, &reshape(&p, v), &n, 0.8).unwrap().loss, p.as_slice(), out.grad_positive.as_slice());
        c.compare(&mut |v| triplet_loss(&a, &p, &reshape(&n, v), 0.8).unwrap().loss, n.as_slice(), out.grad_negative.as_slice());
    }
    assert!(c.worst < 1e-4, "worst relative error {}", c.worst);
}

fn small_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(150, 3);
    cfg.block_units = 4;
    cfg.summary_units = 12;
    cfg.embed_units = 6;
    cfg
}

/// Full network in train mode (batch statistics and dropout), with the
/// dropout masks replayed from a fixed seed and triplets mined once.
#[test]
fn full_network_end_to_end() {
    let mut c = Check::default();
    let labels = [0, 0, 0, 1, 1, 1, 2, 2];
    let objective = Objective {
        ce_weight: 1.0,
        triplet_weight: 0.7,
        margin: 2.0,
    };
    for seed in 0..10 {
        let mut rng = rng_from_seed(seed);
        let base = RamanNet::new(small_config(), &mut rng).unwrap();
        let x = random(8, 150, &mut rng).map(|v| 0.5 + 0.5 * v);
        let dropout_seed = seed + 77;
        let pass = base.clone().forward(&x, Mode::Train, &mut rng_from_seed(dropout_seed)).unwrap();
        let triplets: TripletBatch = mine_batch_hard(&labels, &pass.embeddings).unwrap();
        assert!(!triplets.is_empty());
        let (_, grads) = base.backward(&pass, &labels, &triplets, objective).unwrap();

        let params: Vec<Vec<f64>> = base.parameters().iter().map(|p| p.to_vec()).collect();
        for (k, param) in params.iter().enumerate() {
            let coords: Vec<usize> = (0..4).map(|_| rng.gen_range(0..param.len())).collect();
            for &i in &coords {
                let mut loss_at = |v: &[f64]| {
                    let mut m = base.clone();
                    m.parameters_mut()[k][i] = v[0];
                    let pass = m.forward(&x, Mode::Train, &mut rng_from_seed(dropout_seed)).unwrap();
                    m.backward(&pass, &labels, &triplets, objective).unwrap().0.total
                };
                c.compare(&mut loss_at, &[param[i]], &[grads.arrays()[k][i]]);
            }
        }
    }
    println!("end-to-end: {} coordinates, {} skipped at kinks, worst {:.3e}", c.checked, c.kinks, c.worst);
    assert!(c.worst < 1e-3, "worst relative error {}", c.worst);
    assert!(c.kinks * 20 < c.checked, "too many kinks: {}", c.kinks);
}
