use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prrbc::bridge::{
    activation_window, component_offsets, load_sites, topology, GlobalParameter, LoadSampling, SensorLayout, VehicleSchedule, LOADED,
    N_COMP,
};
use prrbc::library::{LibraryConfig, Variant};
use prrbc::params::ParameterBounds;

#[test]
fn mean_example_is_all_midpoints() {
    let b = ParameterBounds::default();
    let mu = GlobalParameter::example(&b, 1).unwrap();
    assert_eq!(mu.damage, [1, 1]);
    assert!(mu.young.iter().all(|&e| e == 33e9));
    assert_eq!(mu.axle_distance, 3.0);
    assert!((mu.speed * 3.6 - 32.5).abs() < 1e-12);
    assert!(GlobalParameter::example(&b, 5).is_err());
}

#[test]
fn draws_respect_bounds_and_mean() {
    let b = ParameterBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        let mu = GlobalParameter::sample(&b, &mut rng);
        mu.validate(&b).unwrap();
        sum += mu.young.iter().sum::<f64>();
        n += mu.young.len();
        counts[((mu.damage[0] - 1) * 2 + mu.damage[1] - 1) as usize] += 1;
    }
    let mean = sum / n as f64;
    assert!((32.9e9..=33.1e9).contains(&mean), "mean E {mean:e}");
    // Chi-square with 3 degrees of freedom; 16.27 is the 0.1% quantile.
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
    assert!(chi2 < 16.27, "{counts:?}");
}

#[test]
fn final_time_scales_inversely_with_speed() {
    let lib = LibraryConfig::default();
    let (_, len) = component_offsets(&lib, &topology([1, 1]));
    let b = ParameterBounds::default();
    let mut mu = GlobalParameter::example(&b, 1).unwrap();
    mu.speed = 30.0 / 3.6;
    let s = VehicleSchedule::new(&mu, len).unwrap();
    assert!((s.t_final() - 14.8).abs() < 0.05, "{}", s.t_final());
    mu.speed *= 2.0;
    let s2 = VehicleSchedule::new(&mu, len).unwrap();
    assert!((s2.t_final() - 0.5 * s.t_final()).abs() < 1e-12);
    mu.speed = 0.0;
    assert!(VehicleSchedule::new(&mu, len).is_err());
}

#[test]
fn each_axle_loads_at_most_one_component() {
    let lib = LibraryConfig::default();
    let variants = topology([1, 1]);
    let (x0, len) = component_offsets(&lib, &variants);
    let mid: Vec<f64> = LOADED.iter().map(|&c| x0[c] + 0.5 * lib.geometry(variants[c]).deck_length()).collect();
    let b = ParameterBounds::default();
    for seed in 0..20 {
        let mu = GlobalParameter::sample_seeded(&b, seed);
        let s = VehicleSchedule::new(&mu, len).unwrap();
        let n = 4000;
        let dt = s.t_final() / n as f64;
        let mut seen = [false; 5];
        for j in 0..=n {
            let t = j as f64 * dt;
            for sampling in [LoadSampling::Point, LoadSampling::CellAverage] {
                let sites = load_sites(&mu, &s, &mid, t, dt, sampling);
                for a in 0..2 {
                    let here: Vec<_> = sites.iter().filter(|(site, _)| site.axle == a).collect();
                    assert!(here.len() <= 1);
                    for (site, w) in &here {
                        let (lo, hi) = activation_window(&mu, site.slot, a);
                        assert!(site.l >= lo && site.l <= hi);
                        assert!(*w > 0.0 && *w <= 1.0 + 1e-12);
                        seen[site.slot] = true;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&s| s), "every loaded component is crossed");
    }
}

#[test]
fn cell_average_weights_integrate_the_window() {
    let lib = LibraryConfig::default();
    let variants = topology([1, 1]);
    let (x0, len) = component_offsets(&lib, &variants);
    let mid: Vec<f64> = LOADED.iter().map(|&c| x0[c] + 2.5).collect();
    let mu = GlobalParameter::example(&ParameterBounds::default(), 1).unwrap();
    let s = VehicleSchedule::new(&mu, len).unwrap();
    let n = 20_000;
    let dt = s.t_final() / n as f64;
    let mut total = [0.0; 5];
    for j in 0..=n {
        for (site, w) in load_sites(&mu, &s, &mid, j as f64 * dt, dt, LoadSampling::CellAverage) {
            if site.axle == 0 {
                total[site.slot] += w * dt;
            }
        }
    }
    for slot in 0..5 {
        let (lo, hi) = activation_window(&mu, slot, 0);
        let exact = (hi - lo) / mu.speed;
        assert!((total[slot] - exact).abs() < 1e-9, "slot {slot}");
    }
}

#[test]
fn damage_selects_cracked_variants() {
    let t = topology([2, 2]);
    assert_eq!(t.iter().filter(|v| **v == Variant::Cracked).count(), 2);
    let t = topology([1, 2]);
    assert_eq!(t[7], Variant::Loaded);
    assert_eq!(t[15], Variant::Cracked);
    assert_eq!(t.len(), N_COMP);
}

#[test]
fn examples_are_valid() {
    let b = ParameterBounds::default();
    let damage = [[1, 1], [2, 1], [1, 2], [2, 2]];
    for c in 1..=4 {
        let mu = GlobalParameter::example(&b, c).unwrap();
        mu.validate(&b).unwrap();
        assert_eq!(mu.damage, damage[c - 1]);
    }
    let lo = GlobalParameter::example(&b, 3).unwrap();
    assert_eq!(lo.axle_distance, 1.0);
    assert_eq!(lo.young[0], 29e9);
}

#[test]
fn sensor_points() {
    let p = SensorLayout::NEAR.points(5.0, 1.0);
    assert_eq!(p, [[2.3, 1.0], [2.7, 1.0], [2.0, 0.0], [3.0, 0.0]]);
    let f = SensorLayout::FAR.points(5.0, 1.0);
    assert_eq!(f[0], [2.0, 1.0]);
}
