//! Gradient attribution methods: BaseGrad, IntegratedGrad, SmoothGrad,
//! VarGrad and the two WassersteinGrad variants.
//!
//! Every stochastic method draws sample `i` from the stream `(seed, i)`, so
//! methods run with the same seed see identical perturbations and growing `N`
//! never reshuffles earlier draws.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::fields::{Field2D, GridSpec, SpatialMeasure, StateTensor};
use crate::rng::{self, Stream, StreamRng};
use crate::toymodel::{Forecaster, Target};
use crate::transport::{conv_barycenter, BarycenterConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    BaseGrad,
    IntegratedGrad,
    SmoothGrad,
    VarGrad,
    WgBary,
    WgBaryGrad,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::BaseGrad,
        Method::IntegratedGrad,
        Method::SmoothGrad,
        Method::VarGrad,
        Method::WgBary,
        Method::WgBaryGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaseGrad => "base",
            Method::IntegratedGrad => "ig",
            Method::SmoothGrad => "smooth",
            Method::VarGrad => "var",
            Method::WgBary => "wg-bary",
            Method::WgBaryGrad => "wg-baryxgrad",
        }
    }

    /// Whether the method aggregates perturbed samples.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Method::BaseGrad | Method::IntegratedGrad)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Domain(alloc::format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRequest {
    pub target: Target,
    pub method: Method,
    /// Number of perturbed samples `N`.
    pub samples: usize,
    /// Noise standard deviation as a fraction of the input channel's range.
    pub sigma_frac: f64,
    pub seed: u64,
    /// Entropic regularization of the barycenter.
    pub lambda: f64,
    pub ig_steps: usize,
    /// Keep the per-sample gradient maps in the result.
    pub keep_samples: bool,
    pub barycenter_max_iter: usize,
}

impl AttributionRequest {
    pub fn new(target: Target, method: Method) -> Self {
        Self {
            target,
            method,
            samples: 20,
            sigma_frac: 0.2,
            seed: 42,
            lambda: 1e-3,
            ig_steps: 64,
            keep_samples: false,
            barycenter_max_iter: BarycenterConfig::default().max_iter,
        }
    }

    pub fn check(&self, x: &StateTensor, channels: usize) -> Result<()> {
        if x.channels() != channels {
            return Err(Error::Shape(alloc::format!(
                "input has {} channels, model expects {channels}",
                x.channels()
            )));
        }
        self.target.check(x.spec(), channels)?;
        if !(self.sigma_frac.is_finite() && self.sigma_frac >= 0.0) {
            return Err(Error::Domain("sigma_frac must be finite and >= 0".into()));
        }
        if self.method.is_stochastic() && self.samples == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if self.method == Method::VarGrad && self.samples < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.samples,
            });
        }
        if self.method == Method::IntegratedGrad && self.ig_steps < 2 {
            return Err(Error::Domain("integrated gradients need at least 2 steps".into()));
        }
        if matches!(self.method, Method::WgBary | Method::WgBaryGrad)
            && !(self.lambda.is_finite() && self.lambda > 0.0)
        {
            return Err(Error::Domain("lambda must be > 0".into()));
        }
        Ok(())
    }

    pub fn barycenter_config(&self) -> BarycenterConfig {
        BarycenterConfig {
            lambda: self.lambda,
            max_iter: self.barycenter_max_iter,
            ..BarycenterConfig::default()
        }
    }
}

/// Convergence report of the barycenter stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycenterReport {
    pub iterations: usize,
    pub violation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult {
    pub spec: GridSpec,
    pub method: Method,
    /// Signed attribution map, row-major.
    pub map: Vec<f64>,
    /// The barycenter, for the WassersteinGrad variants.
    pub measure: Option<SpatialMeasure>,
    /// Per-sample gradient maps, when requested.
    pub samples: Option<Vec<Vec<f64>>>,
    /// Target value at the clean input.
    pub target_value: f64,
    pub barycenter: Option<BarycenterReport>,
}

impl AttributionResult {
    /// The map as a 32-bit raster field.
    pub fn field(&self) -> Result<Field2D> {
        Field2D::from_f64(self.spec, &self.map)
    }
}

/// `max - min` of one channel.
pub fn channel_range(x: &StateTensor, channel: usize) -> Result<f64> {
    let (lo, hi) = x.channel(channel)?.min_max();
    Ok(hi as f64 - lo as f64)
}

/// Replaces channel `c_in` by itself plus i.i.d. `N(0, sigma^2)` noise; every
/// other channel is copied bit for bit.
pub fn perturb_channel(x: &StateTensor, c_in: usize, sigma: f64, rng: &mut StreamRng) -> Result<StateTensor> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain("sigma must be finite and >= 0".into()));
    }
    let slice = x.channel(c_in)?;
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let noisy: Vec<f64> = slice
        .values()
        .iter()
        .map(|&v| v as f64 + sigma * rng::normal(rng))
        .collect();
    x.with_channel(c_in, &Field2D::from_f64(x.spec(), &noisy)?)
}

/// Absolute noise level for a request: `sigma_frac * range(x[c_in])`.
pub fn noise_sigma(req: &AttributionRequest, x: &StateTensor) -> Result<f64> {
    Ok(req.sigma_frac * channel_range(x, req.target.c_in)?)
}

/// Gradient of the target at the `i`-th perturbed input.
pub fn sample_gradient(
    req: &AttributionRequest,
    x: &StateTensor,
    model: &dyn Forecaster,
    sigma: f64,
    i: usize,
) -> Result<Vec<f64>> {
    let mut r = rng::stream(req.seed, Stream::Sample, i as u64);
    let xi = perturb_channel(x, req.target.c_in, sigma, &mut r)?;
    Ok(model.target_gradient(&xi, &req.target)?.1)
}

/// All `N` perturbed gradients, sequentially.
pub fn sample_gradients(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<Vec<Vec<f64>>> {
    let sigma = noise_sigma(req, x)?;
    (0..req.samples)
        .map(|i| sample_gradient(req, x, model, sigma, i))
        .collect()
}

/// Runs the requested method end to end.
pub fn attribute(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<AttributionResult> {
    req.check(x, model.channels())?;
    if req.method.is_stochastic() {
        let samples = sample_gradients(req, x, model)?;
        attribute_from_samples(req, x, model, samples)
    } else {
        match req.method {
            Method::BaseGrad => base_grad(req, x, model),
            _ => integrated_grad(req, x, model),
        }
    }
}

pub fn base_grad(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<AttributionResult> {
    req.target.check(x.spec(), model.channels())?;
    let (value, grad) = model.target_gradient(x, &req.target)?;
    Ok(AttributionResult {
        spec: x.spec(),
        method: Method::BaseGrad,
        map: grad,
        measure: None,
        samples: None,
        target_value: value,
        barycenter: None,
    })
}

/// Midpoint-rule integrated gradients from the zero baseline on channel
/// `c_in`; other channels stay at `x`.
pub fn integrated_grad(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<AttributionResult> {
    req.target.check(x.spec(), model.channels())?;
    if req.ig_steps < 2 {
        return Err(Error::Domain("integrated gradients need at least 2 steps".into()));
    }
    let c_in = req.target.c_in;
    let slice = x.channel(c_in)?.to_f64();
    let m = req.ig_steps;
    let mut acc = vec![0.0; slice.len()];
    for k in 0..m {
        let alpha = (k as f64 + 0.5) / m as f64;
        let scaled: Vec<f64> = slice.iter().map(|v| alpha * v).collect();
        let xk = x.with_channel(c_in, &Field2D::from_f64(x.spec(), &scaled)?)?;
        let (_, g) = model.target_gradient(&xk, &req.target)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi;
        }
    }
    let map = acc
        .iter()
        .zip(&slice)
        .map(|(a, v)| v * a / m as f64)
        .collect();
    Ok(AttributionResult {
        spec: x.spec(),
        method: Method::IntegratedGrad,
        map,
        measure: None,
        samples: None,
        target_value: model.target_value(x, &req.target)?,
        barycenter: None,
    })
}

/// Running mean and population variance; identical samples leave the mean
/// bit-exact and the variance exactly zero.
fn welford(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples[0].len();
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for (k, s) in samples.iter().enumerate() {
        let count = (k + 1) as f64;
        for u in 0..n {
            let delta = s[u] - mean[u];
            mean[u] += delta / count;
            m2[u] += delta * (s[u] - mean[u]);
        }
    }
    let var = m2.iter().map(|v| v / samples.len() as f64).collect();
    (mean, var)
}

/// Aggregates precomputed perturbed gradients (see [`sample_gradients`]).
pub fn attribute_from_samples(
    req: &AttributionRequest,
    x: &StateTensor,
    model: &dyn Forecaster,
    samples: Vec<Vec<f64>>,
) -> Result<AttributionResult> {
    req.check(x, model.channels())?;
    if samples.len() != req.samples {
        return Err(Error::InsufficientSamples {
            needed: req.samples,
            got: samples.len(),
        });
    }
    let spec = x.spec();
    let (value, base) = model.target_gradient(x, &req.target)?;
    let mut result = AttributionResult {
        spec,
        method: req.method,
        map: Vec::new(),
        measure: None,
        samples: None,
        target_value: value,
        barycenter: None,
    };
    match req.method {
        Method::SmoothGrad => result.map = welford(&samples).0,
        Method::VarGrad => result.map = welford(&samples).1,
        Method::WgBary | Method::WgBaryGrad => {
            let measures = samples
                .iter()
                .map(|g| SpatialMeasure::from_abs(spec, g))
                .collect::<Result<Vec<_>>>()?;
            let bary = conv_barycenter(&measures, &req.barycenter_config())?;
            result.barycenter = Some(BarycenterReport {
                iterations: bary.iterations,
                violation: bary.violation,
                converged: bary.converged,
            });
            result.map = if req.method == Method::WgBary {
                bary.measure.density().to_vec()
            } else {
                bary.measure.density().iter().zip(&base).map(|(m, g)| m * g).collect()
            };
            result.measure = Some(bary.measure);
        }
        Method::BaseGrad | Method::IntegratedGrad => {
            return Err(Error::Domain(alloc::format!(
                "{} does not aggregate samples",
                req.method
            )))
        }
    }
    if req.keep_samples {
        result.samples = Some(samples);
    }
    Ok(result)
}

/// Convenience wrappers with the method fixed.
pub fn smooth_grad(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<AttributionResult> {
    attribute(&with_method(req, Method::SmoothGrad), x, model)
}

pub fn var_grad(req: &AttributionRequest, x: &StateTensor, model: &dyn Forecaster) -> Result<AttributionResult> {
    attribute(&with_method(req, Method::VarGrad), x, model)
}

/// WassersteinGrad; `times_grad` selects the Bary×Grad variant.
pub fn wasserstein_grad(
    req: &AttributionRequest,
    x: &StateTensor,
    model: &dyn Forecaster,
    times_grad: bool,
) -> Result<AttributionResult> {
    let method = if times_grad { Method::WgBaryGrad } else { Method::WgBary };
    attribute(&with_method(req, method), x, model)
}

fn with_method(req: &AttributionRequest, method: Method) -> AttributionRequest {
    AttributionRequest {
        method,
        ..req.clone()
    }
}
