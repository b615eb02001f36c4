use rayon::prelude::*;
use serde_json::json;
use wgrad_core::meanfield::{basin_report, basin_trial, BasinConfig, ParticleSystem, Variant, CLUSTER_ANGLE};

use super::common::*;
use crate::cli::ParticlesArgs;
use crate::config::Settings;
use crate::error::{CliError, CoreResultExt, Result};
use crate::output::{csv_bytes, Outputs, RunManifest};

/// Largest energy decrease per step tolerated by `--assert-energy`.
pub const ENERGY_TOL: f64 = 1e-8;

/// `n` points evenly spaced on the great circle of the first two axes.
pub fn circle(n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        out[i * d] = a.cos();
        out[i * d + 1] = a.sin();
    }
    out
}

pub fn run(args: &ParticlesArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let n = s.get("n", args.n, 16usize)?;
    let d = s.get("d", args.d, 3usize)?;
    let beta = s.get("beta", args.beta, 1.0f64)?;
    let variant = s.get("variant", args.variant, Variant::Sa)?;
    let kappa = s.get("kappa", args.kappa, 0.0f64)?;
    let dt = s.get("dt", args.dt, 0.01f64)?;
    let steps = s.get("steps", args.steps, 1000usize)?;
    let record_every = s.get("record-every", args.record_every, 100usize)?;
    let init = s.get("init", args.init.clone(), "random".to_string())?;
    let trials = s.get("trials", args.trials, 0usize)?;
    let sigma_init = s.get("sigma-init", args.sigma_init, 0.05f64)?;
    let config = s.finish()?;
    if n == 0 || d < 2 {
        return Err(CliError::Config("need n >= 1 and d >= 2".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::Config("beta must be > 0".into()));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) || !(dt > 0.0 && dt.is_finite()) || record_every == 0 {
        return Err(CliError::Config("need kappa >= 0, dt > 0 and record-every >= 1".into()));
    }
    if !(sigma_init >= 0.0 && sigma_init.is_finite()) {
        return Err(CliError::Config("sigma-init must be >= 0".into()));
    }
    if args.assert_energy && (variant != Variant::Usa || kappa != 0.0) {
        return Err(CliError::Config(
            "--assert-energy applies to deterministic USA runs (variant usa, kappa 0)".into(),
        ));
    }
    let mut sys = match init.as_str() {
        "random" => ParticleSystem::random(n, d, beta, variant, kappa, seed).config()?,
        "circle" => ParticleSystem::new(d, circle(n, d), beta, variant, kappa).config()?,
        other => return Err(CliError::Config(format!("unknown init {other:?}; use random or circle"))),
    };
    sys.noise_seed = seed;
    let initial = sys.clone();

    let mut traj = Vec::new();
    let mut energy_rows = Vec::new();
    let mut energies = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        if step > 0 {
            sys = sys.step(dt).numeric("meanfield")?;
        }
        let e = sys.interaction_energy().numeric("meanfield")?;
        energies.push(e);
        if step % record_every == 0 || step == steps {
            for i in 0..n {
                let mut row = vec![step.to_string(), i.to_string()];
                row.extend(sys.particle(i).iter().map(|v| fmt_f64(*v)));
                traj.push(row);
            }
            energy_rows.push(vec![
                step.to_string(),
                fmt_f64(e),
                fmt_f64(sys.max_norm_error()),
                sys.cluster_count(CLUSTER_ANGLE).to_string(),
                fmt_f64(sys.mean_pairwise_angle()),
            ]);
        }
    }
    if args.assert_energy {
        if let Some(k) = energies.windows(2).position(|w| w[1] - w[0] < -ENERGY_TOL) {
            return Err(CliError::Numeric {
                module: "meanfield",
                source: wgrad_core::Error::Domain(format!(
                    "energy decreased at step {}: {} -> {}",
                    k + 1,
                    energies[k],
                    energies[k + 1]
                )),
            });
        }
    }

    let mut header = vec!["step".to_string(), "particle".to_string()];
    header.extend((0..d).map(|k| format!("x{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = Outputs::new(&args.common.out);
    out.add("trajectory.csv", csv_bytes(&header, &traj));
    out.add(
        "energy.csv",
        csv_bytes(&["step", "energy", "max_norm_error", "clusters", "mean_angle"], &energy_rows),
    );

    let mut details = json!({ "final_clusters": sys.cluster_count(CLUSTER_ANGLE) });
    if trials > 0 {
        let cfg = BasinConfig {
            sigma_init,
            trials,
            dt,
            steps,
            seed,
        };
        let finals = with_threads(args.common.threads, || {
            (0..trials)
                .into_par_iter()
                .map(|t| basin_trial(&initial, &cfg, t))
                .collect::<wgrad_core::Result<Vec<_>>>()
                .numeric("meanfield")
        })?;
        let report = basin_report(&finals).numeric("meanfield")?;
        let divergence = json!({
            "trials": trials,
            "sigma_init": sigma_init,
            "cluster_counts": report.cluster_counts,
            "pair_distances": report.pair_distances,
            "max_distance": report.max_distance,
            "divergent": report.divergent,
        });
        let mut bytes = serde_json::to_vec_pretty(&divergence).expect("report serializes");
        bytes.push(b'\n');
        out.add("basin.json", bytes);
        details["divergent"] = json!(report.divergent);
        details["max_distance"] = json!(report.max_distance);
    }
    out.commit("particles", seed, config, details)
}
