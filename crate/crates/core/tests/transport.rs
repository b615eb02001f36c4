mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use wgrad_core::fields::{GridSpec, SpatialMeasure};
use wgrad_core::transport::*;
use wgrad_core::Error;

fn random_measure(r: &mut rand_chacha::ChaCha8Rng, spec: GridSpec) -> SpatialMeasure {
    SpatialMeasure::from_weights(spec, uniform(r, spec.cells(), 0.0, 1.0)).unwrap()
}

fn blob(spec: GridSpec, centre: (f64, f64), width: f64, periodic: bool) -> SpatialMeasure {
    let (h, w) = (spec.height() as f64, spec.width() as f64);
    let wrap = |d: f64, len: f64| if periodic { d.abs().min(len - d.abs()) } else { d };
    let weights = (0..spec.cells())
        .map(|k| {
            let (r, c) = spec.row_col(k);
            let dr = wrap(r as f64 - centre.0, h);
            let dc = wrap(c as f64 - centre.1, w);
            (-(dr * dr + dc * dc) / (2.0 * width * width)).exp()
        })
        .collect();
    SpatialMeasure::from_weights(spec, weights).unwrap()
}

/// Brute-force optimal assignment between two k-point uniform measures.
fn brute_force_assignment(spec: GridSpec, src: &[usize], dst: &[usize]) -> f64 {
    fn permute(idx: &mut Vec<usize>, k: usize, best: &mut f64, eval: &dyn Fn(&[usize]) -> f64) {
        if k == idx.len() {
            *best = best.min(eval(idx));
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(idx, k + 1, best, eval);
            idx.swap(k, i);
        }
    }
    let eval = |p: &[usize]| {
        p.iter().enumerate().map(|(i, &j)| spec.sq_dist(src[i], dst[j])).sum::<f64>() / src.len() as f64
    };
    let mut best = f64::INFINITY;
    permute(&mut (0..src.len()).collect(), 0, &mut best, &eval);
    best
}

fn point_cloud(spec: GridSpec, cells: &[usize]) -> SpatialMeasure {
    let mut w = vec![0.0; spec.cells()];
    for &c in cells {
        w[c] = 1.0;
    }
    SpatialMeasure::from_weights(spec, w).unwrap()
}

#[test]
fn cost_matrix_is_a_squared_metric_on_the_unit_square() {
    let spec = GridSpec::new(5, 7).unwrap();
    let c = cost_matrix(spec);
    let n = spec.cells();
    for i in 0..n {
        assert_eq!(c[i * n + i], 0.0);
        for j in 0..n {
            assert_eq!(c[i * n + j], c[j * n + i]);
            assert!(c[i * n + j] <= 2.0);
        }
    }
}

#[test]
fn exact_oracle_trivial_cases() {
    let spec = GridSpec::new(4, 4).unwrap();
    let mut r = rng(30);
    let mu = random_measure(&mut r, spec);
    assert!(exact_w2_small(&mu, &mu).unwrap().cost().abs() < 1e-15);
    let a = SpatialMeasure::dirac(spec, 0, 1);
    let b = SpatialMeasure::dirac(spec, 3, 2);
    let plan = exact_w2_small(&a, &b).unwrap();
    assert!((plan.cost() - spec.sq_dist(1, 14)).abs() < 1e-15);
    assert_eq!(plan.lambda(), 0.0);
}

#[test]
fn exact_oracle_matches_brute_force_assignment() {
    let spec = GridSpec::new(4, 4).unwrap();
    let mut r = rng(31);
    for _ in 0..20 {
        let mut cells: Vec<usize> = (0..16).collect();
        for i in 0..12 {
            let j = r.random_range(i..16);
            cells.swap(i, j);
        }
        let (src, dst) = (&cells[..6], &cells[6..12]);
        let plan = exact_w2_small(&point_cloud(spec, src), &point_cloud(spec, dst)).unwrap();
        let brute = brute_force_assignment(spec, src, dst);
        assert!((plan.cost() - brute).abs() < 1e-12, "{} vs {brute}", plan.cost());
        assert!(plan.violation() < 1e-12);
    }
}

#[test]
fn exact_oracle_is_symmetric() {
    let spec = GridSpec::new(5, 5).unwrap();
    let mut r = rng(32);
    for _ in 0..10 {
        let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
        let ab = exact_w2_small(&a, &b).unwrap().cost();
        let ba = exact_w2_small(&b, &a).unwrap().cost();
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn exact_oracle_rejects_large_grids() {
    let spec = GridSpec::new(9, 8).unwrap();
    let u = SpatialMeasure::uniform(spec);
    assert_eq!(
        exact_w2_small(&u, &u).unwrap_err(),
        Error::Size { cells: 72, cap: 64 }
    );
}

#[test]
fn sinkhorn_dirac_pair_recovers_squared_distance() {
    let spec = GridSpec::new(8, 8).unwrap();
    let a = SpatialMeasure::dirac(spec, 3, 0);
    let b = SpatialMeasure::dirac(spec, 3, 4);
    let plan = sinkhorn_plan(&a, &b, &SinkhornConfig::with_lambda(1e-3)).unwrap();
    assert!((plan.cost() - 0.25).abs() / 0.25 < 0.02);
}

#[test]
fn sinkhorn_matches_exact_oracle_on_random_six_by_six() {
    let spec = GridSpec::new(6, 6).unwrap();
    let mut r = rng(33);
    for _ in 0..30 {
        let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
        let exact = exact_w2_small(&a, &b).unwrap().cost();
        let plan = sinkhorn_plan(&a, &b, &SinkhornConfig::with_lambda(1e-3)).unwrap();
        assert!((plan.cost() - exact).abs() / exact < 0.03, "{} vs {exact}", plan.cost());
        assert!(plan.violation() < 1e-6);
        assert!(plan.coupling().unwrap().iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn sinkhorn_converges_on_a_slow_instance() {
    // Plain Sinkhorn plateaus near 1.6e-5 here and needs about 341k
    // iterations to reach tol.
    let spec = GridSpec::new(6, 6).unwrap();
    let mut r = rng(3035);
    let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
    let plan = sinkhorn_plan(&a, &b, &SinkhornConfig::with_lambda(1e-3)).unwrap();
    assert!(plan.violation() < 1e-9);
    assert!(plan.iterations() < 10_000, "{}", plan.iterations());
    let exact = exact_w2_small(&a, &b).unwrap().cost();
    assert!((plan.cost() - exact).abs() < 1e-9 * exact);
}

#[test]
fn entropic_gap_shrinks_with_lambda() {
    let spec = GridSpec::new(6, 6).unwrap();
    let mut r = rng(34);
    for _ in 0..5 {
        let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
        let exact = exact_w2_small(&a, &b).unwrap().cost();
        let gaps: Vec<f64> = [0.1, 0.01, 0.001]
            .iter()
            .map(|&l| sinkhorn_plan(&a, &b, &SinkhornConfig::with_lambda(l)).unwrap().cost() - exact)
            .collect();
        assert!(gaps.iter().all(|&g| g >= -1e-9), "{gaps:?}");
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{gaps:?}");
    }
}

#[test]
fn self_coupling_off_diagonal_mass_vanishes_as_lambda_shrinks() {
    let spec = GridSpec::new(6, 6).unwrap();
    let mu = random_measure(&mut rng(35), spec);
    let displaced: Vec<f64> = [0.1, 0.01, 0.001]
        .iter()
        .map(|&l| mass_flux(&sinkhorn_plan(&mu, &mu, &SinkhornConfig::with_lambda(l)).unwrap()).displaced_fraction)
        .collect();
    assert!(displaced.windows(2).all(|w| w[1] < w[0]), "{displaced:?}");
    assert!(displaced[2] < 0.01, "{displaced:?}");
}

#[test]
fn dense_and_log_paths_agree() {
    let spec = GridSpec::new(5, 6).unwrap();
    let mut r = rng(36);
    let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
    let run = |mode| {
        sinkhorn_plan(&a, &b, &SinkhornConfig { lambda: 0.05, mode, ..SinkhornConfig::default() }).unwrap()
    };
    let (d, l) = (run(SinkhornMode::Dense), run(SinkhornMode::Log));
    let diff = d
        .coupling()
        .unwrap()
        .iter()
        .zip(l.coupling().unwrap())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-8, "{diff}");
    assert!((d.entropic_cost() - l.entropic_cost()).abs() < 1e-8);
}

#[test]
fn dense_kernel_underflow_is_reported() {
    let spec = GridSpec::new(8, 8).unwrap();
    let a = SpatialMeasure::dirac(spec, 0, 0);
    let b = SpatialMeasure::dirac(spec, 7, 7);
    let cfg = SinkhornConfig { lambda: 1e-4, mode: SinkhornMode::Dense, ..SinkhornConfig::default() };
    assert!(matches!(sinkhorn_plan(&a, &b, &cfg), Err(Error::NumericalUnderflow(_))));
    let cfg = SinkhornConfig { mode: SinkhornMode::Log, ..cfg };
    assert!((sinkhorn_plan(&a, &b, &cfg).unwrap().cost() - spec.sq_dist(0, 63)).abs() < 1e-9);
}

#[test]
fn sinkhorn_reports_non_convergence() {
    let spec = GridSpec::new(6, 6).unwrap();
    let mut r = rng(37);
    let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
    let cfg = SinkhornConfig { max_iter: 3, ..SinkhornConfig::default() };
    assert!(matches!(sinkhorn_plan(&a, &b, &cfg), Err(Error::NonConvergence { iterations: 3, .. })));
}

#[test]
fn potentials_only_plan_gives_the_same_flux() {
    let spec = GridSpec::new(8, 8).unwrap();
    let mut r = rng(38);
    let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
    let dense = sinkhorn_plan(&a, &b, &SinkhornConfig::default()).unwrap();
    let lean = sinkhorn_plan(&a, &b, &SinkhornConfig { dense_cap: 0, ..SinkhornConfig::default() }).unwrap();
    assert!(lean.coupling().is_none());
    let (fd, fl) = (mass_flux(&dense), mass_flux(&lean));
    assert!((fd.displaced_fraction - fl.displaced_fraction).abs() < 1e-10);
    for (x, y) in fd.outflow.iter().zip(&fl.outflow).chain(fd.inflow.iter().zip(&fl.inflow)) {
        assert!((x - y).abs() < 1e-10);
    }
    assert!((dense.cost() - lean.cost()).abs() < 1e-10);
    assert!((dense.entropic_cost() - lean.entropic_cost()).abs() < 1e-10);
}

#[test]
fn flux_of_identity_and_shift() {
    let spec = GridSpec::new(4, 4).unwrap();
    let mu = random_measure(&mut rng(39), spec);
    assert!(mass_flux(&exact_w2_small(&mu, &mu).unwrap()).displaced_fraction.abs() < 1e-15);

    let a = SpatialMeasure::dirac(spec, 1, 1);
    let b = SpatialMeasure::dirac(spec, 1, 3);
    let flux = mass_flux(&exact_w2_small(&a, &b).unwrap());
    assert_eq!(flux.displaced_fraction, 1.0);
    assert_eq!(flux.outflow, a.density());
    assert_eq!(flux.inflow, b.density());
}

#[test]
fn translated_map_dipole_recovers_the_shift() {
    let spec = GridSpec::new(16, 16).unwrap();
    let clean = blob(spec, (7.0, 6.0), 1.5, false);
    let moved = blob(spec, (7.0, 8.0), 1.5, false);
    let flux = mass_flux(&sinkhorn_plan(&clean, &moved, &SinkhornConfig::default()).unwrap());
    let out = SpatialMeasure::from_weights(spec, flux.outflow.clone()).unwrap().centroid();
    let inn = SpatialMeasure::from_weights(spec, flux.inflow.clone()).unwrap().centroid();
    assert!((inn.0 - out.0).abs() < 0.5 && (inn.1 - out.1 - 2.0).abs() < 0.5, "{out:?} -> {inn:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_are_nonnegative_with_matching_marginals(seed in 0u64..10_000, h in 2usize..6, w in 2usize..6) {
        let spec = GridSpec::new(h, w).unwrap();
        let mut r = rng(seed);
        let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
        let plan = sinkhorn_plan(&a, &b, &SinkhornConfig::default()).unwrap();
        prop_assert!(plan.coupling().unwrap().iter().all(|&p| p >= 0.0));
        prop_assert!(plan.violation() < 1e-6);
        // Costs are at most 2, so an inexact marginal can lower <C, pi> by at
        // most twice the violation.
        prop_assert!(plan.cost() >= exact_w2_small(&a, &b).unwrap().cost() - 2.0 * plan.violation());
    }

    #[test]
    fn flux_is_conserved(seed in 0u64..10_000, lambda in prop::sample::select(vec![0.1, 0.01, 0.001])) {
        let spec = GridSpec::new(6, 6).unwrap();
        let mut r = rng(seed);
        let (a, b) = (random_measure(&mut r, spec), random_measure(&mut r, spec));
        for plan in [
            sinkhorn_plan(&a, &b, &SinkhornConfig::with_lambda(lambda)).unwrap(),
            exact_w2_small(&a, &b).unwrap(),
        ] {
            let flux = mass_flux(&plan);
            let trace: f64 = (0..36).map(|i| plan.coupling().unwrap()[i * 36 + i]).sum();
            let out: f64 = flux.outflow.iter().sum();
            let inn: f64 = flux.inflow.iter().sum();
            prop_assert!((out - inn).abs() < 1e-9);
            prop_assert!((out - flux.displaced_fraction).abs() < 1e-9);
            prop_assert!((flux.displaced_fraction - (1.0 - trace)).abs() < 1e-9);
        }
    }
}

#[test]
fn separable_kernel_matches_dense_exponential_kernel() {
    let spec = GridSpec::new(5, 7).unwrap();
    let lambda = 0.5;
    let k = GridKernel::new(spec, lambda, Boundary::Zero);
    let x = uniform(&mut rng(40), 35, 0.0, 1.0);
    let got = k.apply_vec(&x);
    let c = cost_matrix(spec);
    for i in 0..35 {
        let want: f64 = (0..35).map(|j| (-c[i * 35 + j] / lambda).exp() * x[j]).sum();
        assert!((got[i] - want).abs() < 1e-12);
    }
}

#[test]
fn truncation_only_drops_negligible_taps() {
    let spec = GridSpec::new(128, 128).unwrap();
    let lambda = 1e-4;
    let k = GridKernel::new(spec, lambda, Boundary::Periodic);
    let (r, _) = k.radius();
    let sigma_cells = (lambda / 2.0).sqrt() * 128.0;
    assert_eq!(r, (TRUNCATION_SIGMAS * sigma_cells).ceil() as usize);
    assert!(r < 64);
    let w = |d: i32| (-(d as f64 / 128.0).powi(2) / lambda).exp();
    assert!(w(r as i32 + 1) < 1e-290);
    let full: f64 = (-64i32..64).map(w).sum();
    let kept: f64 = (-(r as i32)..=r as i32).map(w).sum();
    assert_eq!(kept, full);
}

#[test]
fn separable_kernel_matches_dense_kernel_at_small_lambda() {
    let spec = GridSpec::new(6, 6).unwrap();
    let lambda = 1e-3;
    let k = GridKernel::new(spec, lambda, Boundary::Zero);
    let x = uniform(&mut rng(41), 36, 0.0, 1.0);
    let got = k.apply_vec(&x);
    let c = cost_matrix(spec);
    for i in 0..36 {
        let want: f64 = (0..36).map(|j| (-c[i * 36 + j] / lambda).exp() * x[j]).sum();
        assert!((got[i] - want).abs() <= 1e-12 * want);
    }
}

fn bary(measures: &[SpatialMeasure], cfg: &BarycenterConfig) -> Barycenter {
    conv_barycenter(measures, cfg).unwrap()
}

#[test]
fn identical_inputs_give_the_blurred_input() {
    let spec = GridSpec::new(24, 24).unwrap();
    let mu = blob(spec, (10.0, 12.0), 2.0, false);
    let cfg = BarycenterConfig::default();
    let b = bary(&vec![mu.clone(); 5], &cfg);
    assert!(b.converged);
    let blurred = entropic_blur(&mu, cfg.lambda, cfg.boundary).unwrap();
    assert!(b.measure.total_variation(&blurred) < 1e-3);
}

#[test]
fn mirrored_blobs_meet_in_the_middle() {
    let spec = GridSpec::new(16, 16).unwrap();
    let a = blob(spec, (7.5, 3.0), 1.2, false);
    let b = blob(spec, (7.5, 12.0), 1.2, false);
    let out = bary(&[a.clone(), b.clone()], &BarycenterConfig::default());
    let (r, c) = out.measure.centroid();
    assert!((r - 7.5).abs() < 0.5 && (c - 7.5).abs() < 0.5, "({r}, {c})");
    // A displacement interpolant, not a mixture: most mass sits between the inputs.
    let middle: f64 = (0..spec.cells())
        .filter(|&k| (5..=10).contains(&spec.row_col(k).1))
        .map(|k| out.measure.density()[k])
        .sum();
    assert!(middle > 0.5, "middle mass {middle}");
}

#[test]
fn barycenter_of_translated_blobs_on_a_coarse_grid_beats_the_mixture() {
    // Cross-check against the exact oracle on 8x8: the barycenter's weighted
    // W2^2 to the inputs is near the displacement-interpolation optimum
    // (a quarter of the squared separation) and well below the mixture's,
    // which is twice that.
    let spec = GridSpec::new(8, 8).unwrap();
    let a = blob(spec, (3.5, 1.5), 0.8, false);
    let b = blob(spec, (3.5, 5.5), 0.8, false);
    let out = bary(&[a.clone(), b.clone()], &BarycenterConfig::with_lambda(5e-3));
    let objective = |m: &SpatialMeasure| {
        0.5 * exact_w2_small(m, &a).unwrap().cost() + 0.5 * exact_w2_small(m, &b).unwrap().cost()
    };
    let mix = SpatialMeasure::from_weights(
        spec,
        a.density().iter().zip(b.density()).map(|(x, y)| x + y).collect(),
    )
    .unwrap();
    let ideal = (4.0f64 / 8.0 / 2.0).powi(2);
    assert!(objective(&out.measure) < 0.75 * objective(&mix));
    assert!((objective(&out.measure) - ideal).abs() < 0.05 * ideal);
}

#[test]
fn degenerate_weights_recover_the_first_input() {
    let spec = GridSpec::new(20, 20).unwrap();
    let a = blob(spec, (6.0, 5.0), 1.5, false);
    let b = blob(spec, (14.0, 15.0), 1.5, false);
    let cfg = BarycenterConfig { weights: Some(vec![1.0, 0.0]), ..BarycenterConfig::default() };
    let out = bary(&[a.clone(), b], &cfg);
    let blurred = entropic_blur(&a, cfg.lambda, cfg.boundary).unwrap();
    let (p, q) = (out.measure.centroid(), blurred.centroid());
    assert!((p.0 - q.0).abs() < 0.25 && (p.1 - q.1).abs() < 0.25);
    assert!(out.measure.total_variation(&blurred) < 1e-9);
}

#[test]
fn barycenter_is_permutation_invariant() {
    let spec = GridSpec::new(12, 12).unwrap();
    let mut r = rng(41);
    let inputs: Vec<SpatialMeasure> = (0..5).map(|_| random_measure(&mut r, spec)).collect();
    let cfg = BarycenterConfig { max_iter: 50, ..BarycenterConfig::default() };
    let forward = bary(&inputs, &cfg);
    let mut reversed = inputs.clone();
    reversed.reverse();
    reversed.swap(0, 2);
    let backward = bary(&reversed, &cfg);
    assert_eq!(forward.measure, backward.measure);
    assert_eq!(forward.trace, backward.trace);
}

#[test]
fn barycenter_is_translation_equivariant_on_the_torus() {
    let spec = GridSpec::new(16, 16).unwrap();
    let cfg = BarycenterConfig { boundary: Boundary::Periodic, max_iter: 200, ..BarycenterConfig::default() };
    let centres = [(5.0, 4.0), (7.0, 8.0), (4.0, 9.0)];
    let (dr, dc) = (3usize, 5usize);
    let base: Vec<_> = centres.iter().map(|&c| blob(spec, c, 1.3, true)).collect();
    let moved: Vec<_> = centres
        .iter()
        .map(|&(r, c)| blob(spec, (r + dr as f64, c + dc as f64), 1.3, true))
        .collect();
    let (b0, b1) = (bary(&base, &cfg).measure, bary(&moved, &cfg).measure);
    // Shifting the barycenter by (dr, dc) reproduces the barycenter of the shifted inputs.
    let mut shifted = vec![0.0; spec.cells()];
    for k in 0..spec.cells() {
        let (r, c) = spec.row_col(k);
        shifted[spec.index((r + dr) % 16, (c + dc) % 16)] = b0.density()[k];
    }
    let shifted = SpatialMeasure::new(spec, shifted).unwrap();
    assert!(shifted.total_variation(&b1) < 1e-6);
}

#[test]
fn barycenter_output_has_unit_mass_and_reports_progress() {
    let spec = GridSpec::new(10, 10).unwrap();
    let mut r = rng(42);
    let inputs: Vec<SpatialMeasure> = (0..4).map(|_| random_measure(&mut r, spec)).collect();
    let out = bary(&inputs, &BarycenterConfig::default());
    assert!((out.measure.density().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(out.trace.len(), out.iterations);
    assert_eq!(*out.trace.last().unwrap(), out.violation);
    let capped = bary(&inputs, &BarycenterConfig { max_iter: 1, tol: 0.0, ..BarycenterConfig::default() });
    assert!(!capped.converged);
    assert!(matches!(capped.require_converged(), Err(Error::NonConvergence { iterations: 1, .. })));
}

#[test]
fn barycenter_input_validation() {
    let spec = GridSpec::new(4, 4).unwrap();
    let u = SpatialMeasure::uniform(spec);
    let cfg = BarycenterConfig::default();
    assert!(matches!(conv_barycenter(&[], &cfg), Err(Error::InsufficientSamples { .. })));
    let other = SpatialMeasure::uniform(GridSpec::new(4, 5).unwrap());
    assert!(matches!(conv_barycenter(&[u.clone(), other], &cfg), Err(Error::Shape(_))));
    let bad = BarycenterConfig { weights: Some(vec![0.7, 0.7]), ..cfg.clone() };
    assert!(matches!(conv_barycenter(&[u.clone(), u.clone()], &bad), Err(Error::Domain(_))));
    let bad = BarycenterConfig { lambda: 0.0, ..cfg };
    assert!(matches!(conv_barycenter(&[u], &bad), Err(Error::Domain(_))));
}
