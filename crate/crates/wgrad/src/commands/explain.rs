use serde_json::json;
use wgrad_core::attribution::Method;
use wgrad_core::toymodel::SYNTH_CHANNELS;

use super::common::*;
use crate::cli::ExplainArgs;
use crate::config::Settings;
use crate::error::{CliError, CoreResultExt, Result};
use crate::output::{Outputs, RunManifest};
use crate::raster::{field_bytes, read_raster};

pub fn run(args: &ExplainArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let method = s.get("method", args.method, Method::BaseGrad)?;
    let grid = resolve_grid(&mut s, &args.grid)?;
    let event = s.get("event", args.event, 0u64)?;
    let x = match &args.input {
        Some(path) => {
            s.record("input", path.display());
            let x = read_raster(path)?;
            if x.channels() != SYNTH_CHANNELS {
                return Err(CliError::Config(format!(
                    "input has {} channels, the model expects {SYNTH_CHANNELS}",
                    x.channels()
                )));
            }
            x
        }
        None => synth_event_state(&grid, seed, event, 0)?,
    };
    let model = resolve_model(&mut s, &args.attr)?;
    let req = resolve_request(&mut s, &args.attr, method, seed, x.spec())?;
    req.check(&x, SYNTH_CHANNELS).config()?;
    let config = s.finish()?;

    let result = with_threads(args.common.threads, || attribute_par(&req, &x, &model).numeric("attribution"))?;
    let mut out = Outputs::new(&args.common.out);
    out.add("map.wgrd", field_bytes(&result.field().numeric("fields")?)?);
    if let Some(m) = &result.measure {
        out.add("measure.wgrd", field_bytes(&m.to_field())?);
    }
    let details = json!({
        "method": method.name(),
        "target_value": result.target_value,
        "barycenter": result.barycenter.map(|b| json!({
            "iterations": b.iterations,
            "violation": b.violation,
            "converged": b.converged,
        })),
    });
    out.commit("explain", seed, config, details)
}
