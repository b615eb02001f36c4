use serde_json::json;
use wgrad_core::fields::encode_raster;
use wgrad_core::toymodel::{synth_centres, synth_sequence, SynthConfig};

use super::common::*;
use crate::cli::SynthArgs;
use crate::config::Settings;
use crate::error::{CoreResultExt, Result};
use crate::output::{Outputs, RunManifest};

pub fn run(args: &SynthArgs) -> Result<RunManifest> {
    let mut s = Settings::load(args.common.config.as_deref())?;
    let seed = s.get("seed", args.common.seed, DEFAULT_SEED)?;
    let steps = s.get("steps", args.steps, 3u64)?;
    let grid = resolve_grid(&mut s, &args.grid)?;
    let config = s.finish()?;
    let cfg = SynthConfig { seed, ..grid };

    let mut out = Outputs::new(&args.common.out);
    for t in 0..=steps {
        let x = synth_sequence(&cfg, t).numeric("toymodel")?;
        out.add(&format!("state_t{t:03}.wgrd"), encode_raster(&x));
    }
    let centres: Vec<_> = (0..=steps).map(|t| synth_centres(&cfg, t)).collect();
    out.commit("synth", seed, config, json!({ "blob_centres": centres }))
}
