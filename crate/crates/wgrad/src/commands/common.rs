use rayon::prelude::*;
use wgrad_core::attribution::{self, AttributionRequest, AttributionResult, Method};
use wgrad_core::fields::{GridSpec, RoiBox, StateTensor};
use wgrad_core::rng::{self, Stream};
use wgrad_core::toymodel::{synth_sequence, SynthConfig, Target, ToyForecaster, SYNTH_CHANNELS};

use crate::cli::{AttrArgs, GridArgs};
use crate::config::{parse_list, Settings};
use crate::error::{CliError, CoreResultExt, Result};

pub const DEFAULT_SEED: u64 = 42;

pub fn resolve_grid(s: &mut Settings, g: &GridArgs) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    let velocity = s.get_list::<f64>(
        "velocity",
        g.velocity.as_deref(),
        &format!("{},{}", d.velocity.0, d.velocity.1),
    )?;
    let [vr, vc] = velocity[..] else {
        return Err(CliError::Config("velocity needs two values: rows,cols".into()));
    };
    let cfg = SynthConfig {
        height: s.get("height", g.height, d.height)?,
        width: s.get("width", g.width, d.width)?,
        blobs: s.get("blobs", g.blobs, d.blobs)?,
        blob_width: s.get("blob-width", g.blob_width, d.blob_width)?,
        amplitude: s.get("amplitude", g.amplitude, d.amplitude)?,
        velocity: (vr, vc),
        seed: d.seed,
    };
    cfg.check().config()?;
    Ok(cfg)
}

/// The middle half of the grid in each direction.
pub fn default_roi(spec: GridSpec) -> RoiBox {
    let (h, w) = (spec.height(), spec.width());
    RoiBox::new(h / 4, (3 * h / 4).max(h / 4 + 1) - 1, w / 4, (3 * w / 4).max(w / 4 + 1) - 1)
        .expect("central box is valid")
}

pub fn parse_roi(text: &str) -> Result<RoiBox> {
    let v: Vec<usize> = parse_list("roi", text)?;
    let [r0, r1, c0, c1] = v[..] else {
        return Err(CliError::Config("roi needs four values: row_min,row_max,col_min,col_max".into()));
    };
    RoiBox::new(r0, r1, c0, c1).config()
}

/// The synthetic state of event `id` at time `t`.
pub fn synth_event_state(base: &SynthConfig, seed: u64, id: u64, t: u64) -> Result<StateTensor> {
    let cfg = SynthConfig {
        seed: rng::child_seed(seed, Stream::Synth, id),
        ..*base
    };
    synth_sequence(&cfg, t).numeric("toymodel")
}

pub fn resolve_model(s: &mut Settings, a: &AttrArgs) -> Result<ToyForecaster> {
    let seed = s.get("model-seed", a.model_seed, DEFAULT_SEED)?;
    ToyForecaster::new(SYNTH_CHANNELS, seed).numeric("toymodel")
}

/// Builds and validates a request against `x`.
pub fn resolve_request(
    s: &mut Settings,
    a: &AttrArgs,
    method: Method,
    seed: u64,
    spec: GridSpec,
) -> Result<AttributionRequest> {
    let roi = match s.get::<String>("roi", a.roi.clone(), String::new())? {
        r if r.is_empty() => default_roi(spec),
        r => parse_roi(&r)?,
    };
    s.record(
        "roi",
        format!("{},{},{},{}", roi.row_min, roi.row_max, roi.col_min, roi.col_max),
    );
    let d = AttributionRequest::new(
        Target {
            c_in: 0,
            c_out: 2,
            roi,
            steps: 1,
        },
        method,
    );
    let req = AttributionRequest {
        target: Target {
            c_in: s.get("c-in", a.c_in, d.target.c_in)?,
            c_out: s.get("c-out", a.c_out, d.target.c_out)?,
            roi,
            steps: s.get("T", a.horizon, d.target.steps)?,
        },
        samples: s.get("samples", a.samples, d.samples)?,
        sigma_frac: s.get("sigma", a.sigma, d.sigma_frac)?,
        lambda: s.get("lambda", a.lambda, d.lambda)?,
        ig_steps: s.get("ig-steps", a.ig_steps, d.ig_steps)?,
        barycenter_max_iter: s.get("max-iter", a.max_iter, d.barycenter_max_iter)?,
        seed,
        ..d
    };
    req.target.check(spec, SYNTH_CHANNELS).config()?;
    if req.target.steps == 0 {
        return Err(CliError::Config("T must be >= 1".into()));
    }
    Ok(req)
}

/// [`attribution::attribute`] with the perturbed gradients computed in
/// parallel. Each sample owns its random stream, so the result is identical
/// to the sequential one.
pub fn attribute_par(req: &AttributionRequest, x: &StateTensor, model: &ToyForecaster) -> wgrad_core::Result<AttributionResult> {
    if !req.method.is_stochastic() {
        return attribution::attribute(req, x, model);
    }
    req.check(x, SYNTH_CHANNELS)?;
    let sigma = attribution::noise_sigma(req, x)?;
    let samples = (0..req.samples)
        .into_par_iter()
        .map(|i| attribution::sample_gradient(req, x, model, sigma, i))
        .collect::<wgrad_core::Result<Vec<_>>>()?;
    attribution::attribute_from_samples(req, x, model, samples)
}

/// Runs `f` on a pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Shortest round-trip decimal; scientific notation for very small or large
/// magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_attribution_matches_sequential() {
        let grid = SynthConfig {
            height: 16,
            width: 16,
            ..SynthConfig::default()
        };
        let x = synth_event_state(&grid, 3, 0, 0).unwrap();
        let model = ToyForecaster::new(SYNTH_CHANNELS, 5).unwrap();
        for method in [Method::SmoothGrad, Method::VarGrad, Method::WgBaryGrad] {
            let mut req = AttributionRequest::new(
                Target {
                    c_in: 0,
                    c_out: 2,
                    roi: default_roi(x.spec()),
                    steps: 1,
                },
                method,
            );
            req.samples = 4;
            let par = with_threads(2, || Ok(attribute_par(&req, &x, &model).unwrap())).unwrap();
            assert_eq!(par, attribution::attribute(&req, &x, &model).unwrap());
        }
    }

    #[test]
    fn roi_parsing() {
        assert_eq!(parse_roi("1, 2,3,4").unwrap(), RoiBox::new(1, 2, 3, 4).unwrap());
        assert!(parse_roi("1,2,3").is_err());
        assert!(parse_roi("2,1,3,4").is_err());
        let spec = GridSpec::new(32, 32).unwrap();
        assert_eq!(default_roi(spec), RoiBox::new(8, 23, 8, 23).unwrap());
        assert_eq!(default_roi(GridSpec::new(2, 2).unwrap()), RoiBox::new(0, 0, 0, 0).unwrap());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.0, 0.1, 1.1102230246251565e-16, 3e20, -2.5e-7] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.1102230246251565e-16), "1.1102230246251565e-16");
    }
}
