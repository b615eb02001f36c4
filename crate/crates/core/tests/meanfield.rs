use wgrad_core::meanfield::*;
use wgrad_core::Error;

fn polygon(n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [a.cos(), a.sin(), 0.0]
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn velocities_are_tangent() {
    for seed in 0..10 {
        for variant in [Variant::Sa, Variant::Usa] {
            let s = ParticleSystem::random(6, 3, 2.0, variant, 0.0, seed).unwrap();
            let v = s.velocity();
            for i in 0..6 {
                assert!(dot(&v[3 * i..3 * i + 3], s.particle(i)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn trivial_velocity_cases() {
    let one = ParticleSystem::new(3, vec![0.2, -0.4, 0.9], 5.0, Variant::Sa, 0.0).unwrap();
    assert!(one.velocity().iter().all(|v| v.abs() < 1e-15));
    for beta in [0.0, 1.0, 9.0] {
        for variant in [Variant::Sa, Variant::Usa] {
            let pair = ParticleSystem::new(3, vec![0.6, 0.0, 0.8, -0.6, 0.0, -0.8], beta, variant, 0.0).unwrap();
            let v = pair.velocity();
            for k in 0..3 {
                assert!((v[k] + v[3 + k]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn stationary_systems_stay_put() {
    let same = ParticleSystem::new(3, [0.0, 1.0, 0.0].repeat(4), 3.0, Variant::Usa, 0.0).unwrap();
    let after = same.run(0.1, 50).unwrap();
    for (a, b) in after.positions().iter().zip(same.positions()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn norms_survive_a_thousand_steps() {
    for (variant, kappa) in [(Variant::Sa, 0.0), (Variant::Usa, 0.0), (Variant::Sa, 1.0)] {
        let mut s = ParticleSystem::random(10, 4, 2.0, variant, kappa, 3).unwrap();
        for _ in 0..1000 {
            s = s.step(0.01).unwrap();
            assert!(s.max_norm_error() < 1e-6);
        }
        assert_eq!(s.steps(), 1000);
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    let s = ParticleSystem::random(6, 3, 1.0, Variant::Sa, 0.0, 11).unwrap();
    let end = |dt: f64| s.run(dt, (1.0 / dt).round() as usize).unwrap();
    let (a, b, c) = (end(0.1), end(0.05), end(0.025));
    let ratio = a.distance(&b).unwrap() / b.distance(&c).unwrap();
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn energy_examples() {
    for beta in [0.5, 1.0, 9.0] {
        let same = ParticleSystem::new(3, [1.0, 2.0, 2.0].repeat(5), beta, Variant::Sa, 0.0).unwrap();
        let e = same.interaction_energy().unwrap();
        let want = beta.exp() / (2.0 * beta);
        assert!((e - want).abs() < 1e-12 * want);
    }
    let zero = ParticleSystem::random(4, 3, 0.0, Variant::Usa, 0.0, 1).unwrap();
    assert!(matches!(zero.interaction_energy(), Err(Error::Domain(_))));
}

#[test]
fn usa_flow_increases_the_energy() {
    for (beta, seed) in [(1.0, 1), (2.0, 4), (4.0, 2)] {
        let mut s = ParticleSystem::random(8, 3, beta, Variant::Usa, 0.0, seed).unwrap();
        let mut e = s.interaction_energy().unwrap();
        let first = e;
        for _ in 0..500 {
            s = s.step(1e-3).unwrap();
            let next = s.interaction_energy().unwrap();
            assert!(next - e >= -1e-8, "beta {beta}: {e} -> {next}");
            e = next;
        }
        assert!(e > first);
    }
}

#[test]
fn usa_energy_at_large_beta_needs_a_smaller_step() {
    // USA speeds grow like e^beta, so at beta = 9 a step of 1e-3 moves
    // particles by radians and overshoots; 1e-5 keeps the ascent stable.
    let mut s = ParticleSystem::random(8, 3, 9.0, Variant::Usa, 0.0, 3).unwrap();
    let mut e = s.interaction_energy().unwrap();
    let first = e;
    for _ in 0..500 {
        s = s.step(1e-5).unwrap();
        let next = s.interaction_energy().unwrap();
        assert!(next - e >= -1e-8, "{e} -> {next}");
        e = next;
    }
    assert!(e > first);
}

#[test]
fn more_noise_spreads_particles_further() {
    let spread = |kappa: f64| {
        (0..4)
            .map(|seed| {
                let s = ParticleSystem::random(16, 3, 1.0, Variant::Sa, kappa, 100 + seed).unwrap();
                s.run(0.01, 1500).unwrap().mean_pairwise_angle()
            })
            .sum::<f64>()
            / 4.0
    };
    let (a, b, c) = (spread(10.0), spread(1.0), spread(0.1));
    assert!(a <= b && b <= c, "{a} {b} {c}");
}

#[test]
fn noise_is_reproducible() {
    let s = ParticleSystem::random(5, 3, 1.0, Variant::Sa, 0.5, 8).unwrap();
    assert_eq!(s.run(0.01, 20).unwrap(), s.run(0.01, 20).unwrap());
    let mut quiet = s.clone();
    quiet.kappa = 0.0;
    assert_ne!(s.run(0.01, 20).unwrap(), quiet.run(0.01, 20).unwrap());
}

#[test]
fn unperturbed_trials_agree() {
    let s = ParticleSystem::new(3, polygon(6), 9.0, Variant::Sa, 0.0).unwrap();
    let cfg = BasinConfig {
        sigma_init: 0.0,
        trials: 4,
        dt: 0.01,
        steps: 200,
        seed: 1,
    };
    let r = basin_experiment(&s, &cfg).unwrap();
    assert_eq!(r.max_distance, 0.0);
    assert!(!r.divergent);
    assert_eq!(r.pair_distances.len(), 6);
}

#[test]
fn large_beta_reaches_different_basins() {
    // Six particles on a great circle: a symmetric saddle. Small kicks send
    // the trials into configurations with three or four clusters.
    let s = ParticleSystem::new(3, polygon(6), 9.0, Variant::Sa, 0.0).unwrap();
    let cfg = BasinConfig {
        sigma_init: 0.05,
        trials: 20,
        dt: 0.01,
        steps: 8000,
        seed: 42,
    };
    let r = basin_experiment(&s, &cfg).unwrap();
    assert!(r.divergent, "{:?}", r.cluster_counts);
}

#[test]
fn zero_beta_baseline() {
    let s = ParticleSystem::new(3, polygon(6), 0.0, Variant::Usa, 0.0).unwrap();
    let cfg = BasinConfig {
        sigma_init: 0.05,
        trials: 6,
        dt: 0.01,
        steps: 500,
        seed: 42,
    };
    let r = basin_experiment(&s, &cfg).unwrap();
    eprintln!("beta = 0 baseline: counts {:?}, max distance {}", r.cluster_counts, r.max_distance);
    assert!(r.max_distance.is_finite());
}

#[test]
fn basin_config_validation() {
    let s = ParticleSystem::random(3, 3, 1.0, Variant::Sa, 0.0, 0).unwrap();
    let cfg = BasinConfig {
        sigma_init: 0.1,
        trials: 1,
        dt: 0.01,
        steps: 1,
        seed: 0,
    };
    assert_eq!(
        basin_experiment(&s, &cfg).unwrap_err(),
        Error::InsufficientSamples { needed: 2, got: 1 }
    );
    assert!(s.step(0.0).is_err());
    assert!(ParticleSystem::new(3, vec![0.0; 3], 1.0, Variant::Sa, 0.0).is_err());
}
