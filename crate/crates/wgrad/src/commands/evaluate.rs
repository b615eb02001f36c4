use rayon::prelude::*;
use serde_json::json;
use wgrad_core::attribution::{attribute, AttributionRequest, Method};
use wgrad_core::fields::GridSpec;
use wgrad_core::metrics::{gini, lle_request, road, LleConfig, RoadConfig};

use super::common::*;
use crate::cli::EvaluateArgs;
use crate::config::Settings;
use crate::error::{CliError, CoreResultExt, Result};
use crate::output::{csv_bytes, Outputs, RunManifest};

pub const METRICS: [&str; 4] = ["gini", "road", "lle_l2", "lle_cos"];

/// Mean and standard error of the mean; a single value has SEM 0.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn scores(
    req: &AttributionRequest,
    x: &wgrad_core::fields::StateTensor,
    model: &wgrad_core::toymodel::ToyForecaster,
    road_cfg: &RoadConfig,
    lle_cfg: &LleConfig,
) -> wgrad_core::Result<[f64; 4]> {
    let map = attribute(req, x, model)?.map;
    let lle = lle_request(req, x, model, lle_cfg)?;
    Ok([
        gini(&map)?,
        road(&map, x, model, &req.target, road_cfg)?.score,
        lle.l2,
        lle.cos,
    ])
}

pub fn run(args: &EvaluateArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let methods: Vec<Method> = s.get_list("methods", args.methods.as_deref(), "base,smooth,wg-bary,wg-baryxgrad")?;
    if methods.is_empty() {
        return Err(CliError::Config("methods list is empty".into()));
    }
    let count = s.get("events", args.events, 5usize)?;
    if count == 0 {
        return Err(CliError::Config("need at least one event".into()));
    }
    let rd = RoadConfig::default();
    let road_cfg = RoadConfig {
        p_max: s.get("p-max", args.p_max, rd.p_max)?,
        k_rand: s.get("k-rand", args.k_rand, rd.k_rand)?,
        seed,
        ..rd
    };
    road_cfg.check().config()?;
    let ld = LleConfig::default();
    let lle_cfg = LleConfig {
        k: s.get("k-lle", args.k_lle, ld.k)?,
        sigma_frac: s.get("lle-sigma", args.lle_sigma, ld.sigma_frac)?,
        seed,
    };
    if lle_cfg.k == 0 || !(lle_cfg.sigma_frac > 0.0) {
        return Err(CliError::Config("LLE needs k >= 1 and sigma > 0".into()));
    }
    let grid = resolve_grid(&mut s, &args.grid)?;
    let model = resolve_model(&mut s, &args.attr)?;
    let spec = GridSpec::new(grid.height, grid.width).config()?;
    let base = resolve_request(&mut s, &args.attr, methods[0], seed, spec)?;
    let config = s.finish()?;

    let cells: Vec<(u64, Method)> = (0..count as u64)
        .flat_map(|e| methods.iter().map(move |m| (e, *m)))
        .collect();
    let results = with_threads(args.common.threads, || {
        cells
            .par_iter()
            .map(|&(e, m)| {
                let x = synth_event_state(&grid, seed, e, 0)?;
                let req = AttributionRequest { method: m, ..base.clone() };
                req.check(&x, x.channels()).config()?;
                scores(&req, &x, &model, &road_cfg, &lle_cfg).numeric("metrics")
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::new();
    for (&(e, m), vals) in cells.iter().zip(&results) {
        for (name, v) in METRICS.iter().zip(vals) {
            rows.push(vec![e.to_string(), m.name().to_string(), name.to_string(), fmt_f64(*v)]);
        }
    }
    let mut summary = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        for (k, name) in METRICS.iter().enumerate() {
            let vals: Vec<f64> = results.iter().skip(mi).step_by(methods.len()).map(|r| r[k]).collect();
            let (mean, sem) = mean_sem(&vals);
            let flag = if vals.len() == 1 { "single_event" } else { "" };
            summary.push(vec![
                m.name().to_string(),
                name.to_string(),
                vals.len().to_string(),
                fmt_f64(mean),
                fmt_f64(sem),
                flag.to_string(),
            ]);
        }
    }
    let mut out = Outputs::new(&args.common.out);
    out.add("metrics.csv", csv_bytes(&["event", "method", "metric", "value"], &rows));
    out.add(
        "metrics_summary.csv",
        csv_bytes(&["method", "metric", "n", "mean", "sem", "flag"], &summary),
    );
    // Every method reads its ROAD masks and LLE draws from streams keyed by
    // the one root seed, never by the method.
    let details = json!({
        "shared_perturbation_streams": true,
        "road_seed": road_cfg.seed,
        "lle_seed": lle_cfg.seed,
    });
    out.commit("evaluate", seed, config, details)
}
