use serde_json::json;
use wgrad_core::fields::SpatialMeasure;
use wgrad_core::transport::{conv_barycenter, BarycenterConfig};

use super::common::*;
use crate::cli::BarycenterArgs;
use crate::config::Settings;
use crate::error::{CliError, CoreResultExt, Result};
use crate::output::{Outputs, RunManifest};
use crate::raster::{field_bytes, read_raster};

pub fn run(args: &BarycenterArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let channel = s.get("channel", args.channel, 0usize)?;
    let d = BarycenterConfig::default();
    let lambda = s.get("lambda", args.lambda, d.lambda)?;
    let max_iter = s.get("max-iter", args.max_iter, d.max_iter)?;
    let tol = s.get("tol", args.tol, d.tol)?;
    let weights: Vec<f64> = s.get_list("weights", args.weights.as_deref(), "")?;
    let inputs: Vec<String> = args.inputs.iter().map(|p| p.display().to_string()).collect();
    s.record("inputs", inputs.join(","));
    let config = s.finish()?;

    let mut measures = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let t = read_raster(path)?;
        let field = t.channel(channel).config()?;
        let m = SpatialMeasure::from_abs(field.spec(), &field.to_f64())
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        measures.push(m);
    }
    if !weights.is_empty() && weights.len() != measures.len() {
        return Err(CliError::Config(format!(
            "{} weights for {} inputs",
            weights.len(),
            measures.len()
        )));
    }
    let cfg = BarycenterConfig {
        lambda,
        max_iter,
        tol,
        weights: (!weights.is_empty()).then_some(weights),
        ..d
    };
    let bary = with_threads(args.common.threads, || conv_barycenter(&measures, &cfg).numeric("transport"))?;
    let details = json!({
        "iterations": bary.iterations,
        "violation": bary.violation,
        "converged": bary.converged,
    });
    if args.require_converged {
        bary.clone().require_converged().numeric("transport")?;
    }
    let mut out = Outputs::new(&args.common.out);
    out.add("barycenter.wgrd", field_bytes(&bary.measure.to_field())?);
    out.commit("barycenter", seed, config, details)
}
