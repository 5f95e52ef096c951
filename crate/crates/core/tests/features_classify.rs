use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use prrbc::classify::{
    partition_errors, train_classifier, tt_learning, FeatureSource, Mlp, TrainConfig, TtConfig,
};
use prrbc::features::{add_noise, correlation, feature_vector, ipvx_from_ipv, FeatureKind, SensorSignals};

fn random_signals(seed: u64, n_t: usize) -> SensorSignals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..2)
        .map(|_| {
            (0..4)
                .map(|_| {
                    let (a, f, p): (f64, f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(0.5..6.0), rng.random_range(0.0..6.0));
                    (0..n_t).map(|j| a * (f * j as f64 / n_t as f64 + p).sin() + 0.1 * rng.random::<f64>()).collect()
                })
                .collect()
        })
        .collect();
    SensorSignals { t_final: 3.0, data }
}

#[test]
fn feature_lengths_and_slice() {
    let s = random_signals(1, 200);
    let ipv = feature_vector(&s, FeatureKind::Ipv).unwrap();
    let ipvx = feature_vector(&s, FeatureKind::Ipvx).unwrap();
    assert_eq!(ipv.len(), 32);
    assert_eq!(ipvx.len(), 16);
    assert_eq!(ipvx_from_ipv(&ipv, 4), &ipvx[..]);
}

#[test]
fn features_match_correlations() {
    let s = random_signals(2, 300);
    let ipv = feature_vector(&s, FeatureKind::Ipv).unwrap();
    for k in 0..2 {
        for i in 0..4 {
            for j in 0..4 {
                let c = correlation(&s, i, j, k, k, 0).unwrap();
                assert!((ipv[k * 16 + i * 4 + j] - c).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn zero_noise_is_bitwise_identity() {
    let s = random_signals(3, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(add_noise(&s, 0.0, &mut rng).unwrap(), s);
}

#[test]
fn noise_std_scales_with_signal_max() {
    let n = 100_000;
    let sig: Vec<f64> = (0..n).map(|j| 3.0 * (j as f64 * 1e-3).sin()).collect();
    let s = SensorSignals { t_final: 1.0, data: vec![vec![sig.clone()]] };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noisy = add_noise(&s, 0.02, &mut rng).unwrap();
    let max = sig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let d: Vec<f64> = noisy.data[0][0].iter().zip(&sig).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let std = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((std / max - 0.02).abs() <= 0.002, "{}", std / max);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlations_are_bounded_and_symmetric(seed in 0u64..10_000, n_t in 3usize..120) {
        let s = random_signals(seed, n_t);
        for k in 0..2 {
            for l in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        let c = correlation(&s, i, j, k, l, 0).unwrap();
                        prop_assert!(c.abs() <= 1.0 + 1e-12);
                    }
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    let a = correlation(&s, i, j, k, k, 0).unwrap();
                    let b = correlation(&s, j, i, k, k, 0).unwrap();
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn features_are_scale_invariant(seed in 0u64..10_000, scale in prop_oneof![Just(10.0), 1e-6f64..1e6]) {
        let s = random_signals(seed, 64);
        let mut t = s.clone();
        t.data.iter_mut().flatten().flatten().for_each(|x| *x *= scale);
        for kind in [FeatureKind::Ipv, FeatureKind::Ipvx] {
            let a = feature_vector(&s, kind).unwrap();
            let b = feature_vector(&t, kind).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::new(5, 10, &mut rng);
        m.w2 *= 20.0;
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let p = m.probabilities(&x);
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
    }
}

fn blobs(n: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let lab = (i % 2) as u8 + 1;
        let c = if lab == 1 { -0.5 * sep } else { 0.5 * sep };
        x.push(vec![c + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]);
        y.push(lab);
    }
    (x, y)
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = Mlp::new(6, 10, &mut rng);
    let x: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<u8> = (0..20).map(|i| (i % 3 == 0) as u8 + 1).collect();
    let (_, g) = m.loss_and_gradient(&x, &y);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut Mlp, f64)| {
        let (mut a, mut b) = (m.clone(), m.clone());
        perturb(&mut a, h);
        perturb(&mut b, -h);
        let fd = (a.loss(&x, &y) - b.loss(&x, &y)) / (2.0 * h);
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-2));
    };
    for i in 0..10 {
        for j in 0..6 {
            check(g.w1[(i, j)], &|m: &mut Mlp, d| m.w1[(i, j)] += d);
        }
        check(g.b1[i], &|m: &mut Mlp, d| m.b1[i] += d);
        for k in 0..2 {
            check(g.w2[(k, i)], &|m: &mut Mlp, d| m.w2[(k, i)] += d);
        }
    }
    for k in 0..2 {
        check(g.b2[k], &|m: &mut Mlp, d| m.b2[k] += d);
    }
    assert!(worst <= 1e-5, "gradient check {worst:e}");
}

#[test]
fn separable_blobs_are_learned_exactly() {
    let (x, y) = blobs(200, 10.0, 5);
    let clf = train_classifier(&x, &y, &TrainConfig::default()).unwrap();
    let wrong = x.iter().zip(&y).filter(|(xi, &yi)| clf.predict(xi) != yi).count();
    assert_eq!(wrong, 0);
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let (x, _) = blobs(400, 0.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y: Vec<u8> = (0..400).map(|_| rng.random_range(1..=2u8)).collect();
    let (xt, xv) = x.split_at(300);
    let (yt, yv) = y.split_at(300);
    let clf = train_classifier(xt, yt, &TrainConfig::default()).unwrap();
    let acc = xv.iter().zip(yv).filter(|(xi, &yi)| clf.predict(xi) == yi).count() as f64 / xv.len() as f64;
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn single_class_training_is_rejected() {
    let (x, _) = blobs(10, 1.0, 1);
    assert!(train_classifier(&x, &[1; 10], &TrainConfig::default()).is_err());
}

#[test]
fn error_composition() {
    let combos: Vec<Vec<u8>> = vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]];
    let perfect = partition_errors(&combos, &combos).unwrap();
    assert_eq!((perfect.structure, perfect.full_state), (0.0, 0.0));
    // First component always flipped: the any-damage flag changes only for
    // (1,1) <-> (2,1), i.e. in 2 of the 4 equally likely combinations.
    let pred: Vec<Vec<u8>> = combos.iter().map(|t| vec![3 - t[0], t[1]]).collect();
    let mut flips = 0;
    for (t, p) in combos.iter().zip(&pred) {
        if t.contains(&2) != p.contains(&2) {
            flips += 1;
        }
    }
    let e = partition_errors(&combos, &pred).unwrap();
    assert_eq!(e.full_state, 1.0);
    assert_eq!(e.structure, flips as f64 / 4.0);
}

struct Synthetic {
    x: Vec<[Vec<f64>; 2]>,
    noisy: Vec<[Vec<f64>; 2]>,
    y: Vec<[u8; 2]>,
}

impl Synthetic {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Synthetic { x: Vec::new(), noisy: Vec::new(), y: Vec::new() };
        for _ in 0..n {
            let y = [rng.random_range(1..=2u8), rng.random_range(1..=2u8)];
            let f = |lab: u8, rng: &mut ChaCha8Rng| -> Vec<f64> {
                let c = if lab == 2 { 1.5 } else { -1.5 };
                vec![c + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]
            };
            let x = [f(y[0], &mut rng), f(y[1], &mut rng)];
            let noisy = [x[0].iter().map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect(), x[1].clone()];
            s.x.push(x);
            s.noisy.push(noisy);
            s.y.push(y);
        }
        s
    }
}

impl FeatureSource for Synthetic {
    fn n_samples(&self) -> usize {
        self.x.len()
    }
    fn n_components(&self) -> usize {
        2
    }
    fn labels(&self, s: usize) -> Vec<u8> {
        self.y[s].to_vec()
    }
    fn clean(&self, s: usize, c: usize) -> &[f64] {
        &self.x[s][c]
    }
    fn noisy(&self, s: usize, c: usize, _noise: usize, _p: usize) -> &[f64] {
        &self.noisy[s][c]
    }
}

#[test]
fn tt_learning_reports_consistent_errors() {
    let src = Synthetic::new(300, 3);
    let cfg = TtConfig { n_tt: 300, phi: 0.7, n_part: 5, noise: Some(0), noise_factor: 0.5, train: TrainConfig::default(), seed: 1 };
    let r = tt_learning(&src, &cfg).unwrap();
    assert_eq!(r.partitions.len(), 5);
    for p in &r.partitions {
        assert!(p.per_component.iter().all(|e| (0.0..=1.0).contains(e)));
        assert!(p.structure <= p.full_state + 1e-15);
    }
    assert!(r.mean_component[0] >= r.mean_component[1] - 2.0 * r.std_component[1]);
    assert!((r.reference_error - 1.0 / 90.0).abs() < 1e-15);
    let clean = tt_learning(&src, &TtConfig { noise: None, ..cfg.clone() }).unwrap();
    assert!(r.mean_error() >= clean.mean_error() - 2.0 * clean.std_error());
    assert_eq!(tt_learning(&src, &cfg).unwrap(), r);
    assert!(tt_learning(&src, &TtConfig { n_tt: 301, ..cfg }).is_err());
}
