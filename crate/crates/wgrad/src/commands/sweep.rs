use rayon::prelude::*;
use serde_json::json;
use wgrad_core::attribution::Method;
use wgrad_core::diagnostics::{sort_rows, summarize, sweep_event, synth_events, SweepConfig};
use wgrad_core::fields::GridSpec;

use super::common::*;
use crate::cli::SweepArgs;
use crate::config::Settings;
use crate::error::{CoreResultExt, Result};
use crate::output::{csv_bytes, Outputs, RunManifest};

pub fn run(args: &SweepArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let method = s.get("method", args.method, Method::BaseGrad)?;
    let count = s.get("events", args.events, 20usize)?;
    let d = SweepConfig::default();
    let default_levels: Vec<String> = d.levels.iter().map(|v| v.to_string()).collect();
    let default_horizons: Vec<String> = d.horizons.iter().map(|v| v.to_string()).collect();
    let cfg = SweepConfig {
        levels: s.get_list("levels", args.levels.as_deref(), &default_levels.join(","))?,
        repetitions: s.get("reps", args.reps, d.repetitions)?,
        horizons: s.get_list("horizons", args.horizons.as_deref(), &default_horizons.join(","))?,
        seed,
        cell_km: s.get("cell-km", args.cell_km, d.cell_km)?,
    };
    cfg.check().config()?;
    let grid = resolve_grid(&mut s, &args.grid)?;
    let model = resolve_model(&mut s, &args.attr)?;
    let spec = GridSpec::new(grid.height, grid.width).config()?;
    let req = resolve_request(&mut s, &args.attr, method, seed, spec)?;
    let config = s.finish()?;

    let max_h = *cfg.horizons.iter().max().expect("checked non-empty");
    let events = synth_events(&grid, count, max_h, seed).numeric("toymodel")?;
    let mut rows = with_threads(args.common.threads, || {
        let per_event = events
            .par_iter()
            .map(|e| sweep_event(&cfg, e, &model, &req))
            .collect::<wgrad_core::Result<Vec<_>>>()
            .numeric("diagnostics")?;
        Ok(per_event.into_iter().flatten().collect::<Vec<_>>())
    })?;
    sort_rows(&mut rows);

    let km = cfg.cell_km;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.event_id.to_string(),
                r.horizon.to_string(),
                fmt_f64(r.sigma),
                r.rep.to_string(),
                fmt_f64(r.d_centroid),
                fmt_f64(r.d_peak),
                fmt_f64(r.d_centroid * km),
                fmt_f64(r.d_peak * km),
                fmt_f64(r.e_rel),
            ]
        })
        .collect();
    let summary: Vec<Vec<String>> = summarize(&rows)
        .iter()
        .map(|m| {
            vec![
                m.horizon.to_string(),
                fmt_f64(m.sigma),
                m.count.to_string(),
                fmt_f64(m.mean_centroid),
                fmt_f64(m.std_centroid),
                fmt_f64(m.mean_peak),
                fmt_f64(m.std_peak),
                fmt_f64(m.mean_e_rel),
            ]
        })
        .collect();
    let mut out = Outputs::new(&args.common.out);
    out.add(
        "sweep.csv",
        csv_bytes(
            &["event", "T", "sigma", "rep", "d_centroid", "d_peak", "d_centroid_km", "d_peak_km", "e_rel"],
            &body,
        ),
    );
    out.add(
        "sweep_summary.csv",
        csv_bytes(
            &["T", "sigma", "count", "mean_centroid", "std_centroid", "mean_peak", "std_peak", "mean_e_rel"],
            &summary,
        ),
    );
    out.commit("sweep", seed, config, json!({ "rows": rows.len() }))
}
