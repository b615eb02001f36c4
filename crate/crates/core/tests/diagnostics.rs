mod common;

use common::*;
use rand::Rng;
use wgrad_core::attribution::{AttributionRequest, Method};
use wgrad_core::diagnostics::*;
use wgrad_core::fields::{GridSpec, RoiBox};
use wgrad_core::toymodel::{SynthConfig, Target, ToyForecaster};
use wgrad_core::transport::SinkhornConfig;
use wgrad_core::Error;

fn blob(spec: GridSpec, r0: f64, c0: f64, w: f64) -> Vec<f64> {
    (0..spec.cells())
        .map(|k| {
            let (r, c) = spec.row_col(k);
            let (dr, dc) = (r as f64 - r0, c as f64 - c0);
            (-(dr * dr + dc * dc) / (2.0 * w * w)).exp()
        })
        .collect()
}

/// `map` moved by `(dr, dc)` cells, zero-filled.
fn translate(map: &[f64], spec: GridSpec, dr: usize, dc: usize) -> Vec<f64> {
    let mut out = vec![0.0; map.len()];
    for r in 0..spec.height() - dr {
        for c in 0..spec.width() - dc {
            out[spec.index(r + dr, c + dc)] = map[spec.index(r, c)];
        }
    }
    out
}

#[test]
fn centroid_examples() {
    let spec = GridSpec::new(10, 12).unwrap();
    let mut dirac = vec![0.0; 120];
    dirac[spec.index(3, 7)] = -2.0;
    assert_eq!(centroid(&dirac, spec).unwrap(), (3.0, 7.0));
    let sym = blob(spec, 4.5, 5.5, 1.7);
    let (r, c) = centroid(&sym, spec).unwrap();
    assert!((r - 4.5).abs() < 1e-12 && (c - 5.5).abs() < 1e-12);
    assert_eq!(centroid(&vec![0.0; 120], spec), Err(Error::ZeroMass));
}

#[test]
fn centroid_and_peak_follow_translations() {
    let spec = GridSpec::new(16, 16).unwrap();
    let mut r = rng(4);
    let mut map = vec![0.0; 256];
    for rr in 3..9 {
        for cc in 2..10 {
            map[spec.index(rr, cc)] = r.random_range(-1.0..1.0);
        }
    }
    let moved = translate(&map, spec, 0, 2);
    let (a, b) = (centroid(&map, spec).unwrap(), centroid(&moved, spec).unwrap());
    assert!((b.0 - a.0).abs() < 1e-12 && (b.1 - a.1 - 2.0).abs() < 1e-12);
    let moved = translate(&map, spec, 3, 1);
    let (p, q) = (peak(&map, spec).unwrap(), peak(&moved, spec).unwrap());
    assert_eq!((q.0, q.1), (p.0 + 3, p.1 + 1));
}

#[test]
fn peak_examples() {
    let spec = GridSpec::new(5, 5).unwrap();
    let mut m = vec![0.0; 25];
    m[13] = 0.5;
    assert_eq!(peak(&m, spec).unwrap(), (2, 3));
    assert_eq!(peak(&[0.7; 25], spec).unwrap(), (0, 0));
}

fn small_sweep() -> (SweepConfig, Vec<SweepEvent>, ToyForecaster, AttributionRequest) {
    let cfg = SweepConfig {
        levels: vec![0.0, 0.1, 0.3],
        repetitions: 2,
        horizons: vec![1, 2],
        seed: 9,
        ..SweepConfig::default()
    };
    let synth = SynthConfig {
        height: 16,
        width: 16,
        ..SynthConfig::default()
    };
    let events = synth_events(&synth, 2, 2, 5).unwrap();
    let model = ToyForecaster::new(3, 77).unwrap();
    let req = AttributionRequest::new(
        Target {
            c_in: 0,
            c_out: 2,
            roi: RoiBox::new(5, 10, 5, 10).unwrap(),
            steps: 1,
        },
        Method::BaseGrad,
    );
    (cfg, events, model, req)
}

#[test]
fn sweep_rows_are_sorted_and_zero_noise_rows_are_trivial() {
    let (cfg, events, model, req) = small_sweep();
    let rows = displacement_sweep(&cfg, &events, &model, &req).unwrap();
    assert_eq!(rows.len(), 2 * 3 * 2 * 2);
    for w in rows.windows(2) {
        assert!((w[0].horizon, w[0].sigma) <= (w[1].horizon, w[1].sigma));
    }
    for row in &rows {
        assert!(row.e_rel.is_finite() && row.d_centroid >= 0.0 && row.d_peak >= 0.0);
        if row.sigma == 0.0 {
            assert_eq!((row.d_centroid, row.d_peak, row.e_rel), (0.0, 0.0, 1.0));
        }
    }
    assert!(rows.iter().any(|r| r.d_centroid > 0.0));
    assert_eq!(rows, displacement_sweep(&cfg, &events, &model, &req).unwrap());

    let summary = summarize(&rows);
    assert_eq!(summary.len(), 6);
    assert!(summary.iter().all(|s| s.count == 4));
    assert_eq!(summary[0].mean_centroid, 0.0);
}

#[test]
fn sweep_noise_does_not_depend_on_the_horizon() {
    let (cfg, events, _, _) = small_sweep();
    let a = sweep_input(&cfg, &events[0], 0, 2, 1).unwrap();
    let b = sweep_input(&cfg, &events[0], 0, 2, 1).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sweep_input(&cfg, &events[0], 0, 2, 0).unwrap());
    assert_ne!(a, sweep_input(&cfg, &events[1], 0, 2, 1).unwrap());
}

#[test]
fn sweep_config_validation() {
    let base = SweepConfig::default();
    assert!(base.check().is_ok());
    assert!(SweepConfig { levels: vec![0.2, 0.1], ..base.clone() }.check().is_err());
    assert!(SweepConfig { repetitions: 0, ..base.clone() }.check().is_err());
    assert!(SweepConfig { horizons: vec![0], ..base.clone() }.check().is_err());
    let (cfg, events, model, req) = small_sweep();
    let too_far = SweepConfig { horizons: vec![3], ..cfg };
    assert!(matches!(
        displacement_sweep(&too_far, &events, &model, &req),
        Err(Error::Domain(_))
    ));
}

#[test]
fn dipole_recovers_a_translation() {
    let spec = GridSpec::new(16, 16).unwrap();
    let clean = blob(spec, 7.0, 5.0, 1.5);
    let pert = blob(spec, 7.0, 7.0, 1.5);
    let cfg = SinkhornConfig { tol: 1e-7, ..SinkhornConfig::with_lambda(1e-3) };
    let d = dipole_from_maps(&clean, &pert, spec, &cfg).unwrap();
    let out: f64 = d.flux.outflow.iter().sum();
    let inn: f64 = d.flux.inflow.iter().sum();
    assert!((out - inn).abs() < 1e-9);
    let (o, i) = (centroid(&d.flux.outflow, spec).unwrap(), centroid(&d.flux.inflow, spec).unwrap());
    assert!((i.0 - o.0).abs() < 0.5 && (i.1 - o.1 - 2.0).abs() < 0.5, "{o:?} -> {i:?}");
}

#[test]
fn zero_noise_dipole_only_shows_the_entropic_floor() {
    let spec = GridSpec::new(32, 32).unwrap();
    let model = ToyForecaster::new(3, 3).unwrap();
    let x = wgrad_core::toymodel::synth_sequence(&SynthConfig::default(), 0).unwrap();
    let req = AttributionRequest::new(
        Target {
            c_in: 0,
            c_out: 2,
            roi: RoiBox::new(10, 21, 10, 21).unwrap(),
            steps: 1,
        },
        Method::BaseGrad,
    );
    // At lambda = 1e-3 a neighbouring cell of a 32x32 grid costs only
    // exp(-0.98) in kernel weight, so the self-coupling spreads over
    // neighbours and the floor is large; on an 8x8 grid (exp(-15.6)) it
    // nearly vanishes.
    let cfg = SinkhornConfig { tol: 1e-6, ..SinkhornConfig::with_lambda(1e-3) };
    let d = dipole_maps(&x, &model, &req, 0.0, 0, &cfg).unwrap();
    assert_eq!(d.clean, d.perturbed);
    assert_eq!(d.flux.spec(), spec);
    let noisy = dipole_maps(&x, &model, &req, 0.3, 0, &cfg).unwrap();
    let out: f64 = noisy.flux.outflow.iter().sum();
    let inn: f64 = noisy.flux.inflow.iter().sum();
    assert!((out - inn).abs() < 1e-9);
    assert!(noisy.flux.displaced_fraction > d.flux.displaced_fraction);
    eprintln!("self-coupling displaced fraction, 32x32: {}", d.flux.displaced_fraction);

    let coarse = GridSpec::new(8, 8).unwrap();
    let map = blob(coarse, 3.2, 4.1, 1.0);
    let c = dipole_from_maps(&map, &map, coarse, &cfg).unwrap();
    assert!(c.flux.displaced_fraction < 0.05, "{}", c.flux.displaced_fraction);
    assert!(c.flux.displaced_fraction < d.flux.displaced_fraction);
}
