//! Geometric displacement of attributions under input noise.
//!
//! A sweep perturbs the input channel at increasing noise levels, recomputes
//! the attribution and tracks how far its centre of mass and its peak move,
//! next to the forecast error the same noise causes. [`dipole_maps`] shows
//! where the attribution mass went.

use alloc::vec::Vec;

use crate::attribution::{self, AttributionRequest};
use crate::fields::{GridSpec, SpatialMeasure, StateTensor};
use crate::math;
use crate::rng::{self, Stream};
use crate::toymodel::{synth_sequence, Forecaster, SynthConfig};
use crate::transport::{mass_flux, sinkhorn_plan, MassFlux, SinkhornConfig};
use crate::{Error, Result};

/// Cell size of the reference radar grid, in km.
pub const DEFAULT_CELL_KM: f64 = 2.5;

fn check_map(map: &[f64], spec: GridSpec) -> Result<()> {
    if map.len() != spec.cells() {
        return Err(Error::Shape(alloc::format!(
            "map has {} cells, grid has {}",
            map.len(),
            spec.cells()
        )));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attribution map"));
    }
    Ok(())
}

/// `|G|`-weighted mean `(row, col)`.
pub fn centroid(map: &[f64], spec: GridSpec) -> Result<(f64, f64)> {
    check_map(map, spec)?;
    let w = spec.width();
    let (mut total, mut r, mut c) = (0.0, 0.0, 0.0);
    for (k, v) in map.iter().enumerate() {
        let a = math::abs(*v);
        total += a;
        r += a * (k / w) as f64;
        c += a * (k % w) as f64;
    }
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok((r / total, c / total))
}

/// Location of the largest `|G|`; ties go to the first cell in row-major order.
pub fn peak(map: &[f64], spec: GridSpec) -> Result<(usize, usize)> {
    check_map(map, spec)?;
    let mut best = 0;
    for (k, v) in map.iter().enumerate() {
        if math::abs(*v) > math::abs(map[best]) {
            best = k;
        }
    }
    Ok(spec.row_col(best))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dr, dc) = (a.0 - b.0, a.1 - b.1);
    math::sqrt(dr * dr + dc * dc)
}

/// One evaluation case: a clean input and the true future states
/// `truth[T - 1] = x_{t+T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEvent {
    pub id: u64,
    pub input: StateTensor,
    pub truth: Vec<StateTensor>,
}

/// `count` synthetic events: event `e` is the sequence of `base` reseeded
/// from `(seed, e)`, with input at `t = 0` and truth up to `max_horizon`.
pub fn synth_events(base: &SynthConfig, count: usize, max_horizon: usize, seed: u64) -> Result<Vec<SweepEvent>> {
    (0..count as u64)
        .map(|id| {
            let cfg = SynthConfig {
                seed: rng::child_seed(seed, Stream::Synth, id),
                ..*base
            };
            Ok(SweepEvent {
                id,
                input: synth_sequence(&cfg, 0)?,
                truth: (1..=max_horizon as u64)
                    .map(|t| synth_sequence(&cfg, t))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Noise levels as fractions of the input channel's range, ascending.
    pub levels: Vec<f64>,
    pub repetitions: usize,
    pub horizons: Vec<usize>,
    pub seed: u64,
    pub cell_km: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: alloc::vec![0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            repetitions: 5,
            horizons: alloc::vec![1, 3],
            seed: 42,
            cell_km: DEFAULT_CELL_KM,
        }
    }
}

impl SweepConfig {
    pub fn check(&self) -> Result<()> {
        if self.levels.is_empty() || self.horizons.is_empty() {
            return Err(Error::Domain("sweep needs at least one level and one horizon".into()));
        }
        if self.levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Domain("noise levels must be finite and >= 0".into()));
        }
        if self.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("noise levels must be strictly ascending".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if self.horizons.iter().any(|t| *t == 0) {
            return Err(Error::Domain("horizons must be >= 1".into()));
        }
        if !(self.cell_km.is_finite() && self.cell_km > 0.0) {
            return Err(Error::Domain("cell size must be > 0".into()));
        }
        Ok(())
    }
}

/// One perturbed attribution compared with the clean one. Displacements are
/// in cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub event_id: u64,
    pub horizon: usize,
    pub sigma: f64,
    pub rep: usize,
    pub d_centroid: f64,
    pub d_peak: f64,
    pub e_rel: f64,
}

fn rmse(a: &StateTensor, b: &StateTensor) -> Result<f64> {
    if a.spec() != b.spec() || a.channels() != b.channels() {
        return Err(Error::Shape("forecast and truth differ in shape".into()));
    }
    let n = a.values().len() as f64;
    let s: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(u, v)| {
            let d = *u as f64 - *v as f64;
            d * d
        })
        .sum();
    Ok(math::sqrt(s / n))
}

/// The perturbed input for `(event, level, rep)`. The draw does not depend
/// on the horizon, so horizons are compared on identical inputs.
pub fn sweep_input(
    cfg: &SweepConfig,
    event: &SweepEvent,
    c_in: usize,
    level: usize,
    rep: usize,
) -> Result<StateTensor> {
    let sigma = cfg.levels[level] * attribution::channel_range(&event.input, c_in)?;
    let es = rng::child_seed(cfg.seed, Stream::Event, event.id);
    let mut r = rng::stream(es, Stream::Sweep, (level * cfg.repetitions + rep) as u64);
    attribution::perturb_channel(&event.input, c_in, sigma, &mut r)
}

/// All rows of one event. `req.target.steps` is replaced by each horizon.
pub fn sweep_event(
    cfg: &SweepConfig,
    event: &SweepEvent,
    model: &dyn Forecaster,
    req: &AttributionRequest,
) -> Result<Vec<SweepRow>> {
    cfg.check()?;
    let c_in = req.target.c_in;
    let mut rows = Vec::new();
    for &horizon in &cfg.horizons {
        let truth = event
            .truth
            .get(horizon - 1)
            .ok_or_else(|| Error::Domain(alloc::format!("event {} has no truth at T = {horizon}", event.id)))?;
        let mut r = req.clone();
        r.target.steps = horizon;
        let clean = attribution::attribute(&r, &event.input, model)?.map;
        let spec = event.input.spec();
        let c0 = centroid(&clean, spec)?;
        let p0 = peak(&clean, spec)?;
        let rmse0 = rmse(&model.rollout(&event.input, horizon)?, truth)?;
        if !(rmse0 > 0.0) {
            return Err(Error::Domain("clean forecast matches the truth exactly; E_rel undefined".into()));
        }
        for (level, &sigma) in cfg.levels.iter().enumerate() {
            for rep in 0..cfg.repetitions {
                let xp = sweep_input(cfg, event, c_in, level, rep)?;
                let g = attribution::attribute(&r, &xp, model)?.map;
                let p = peak(&g, spec)?;
                rows.push(SweepRow {
                    event_id: event.id,
                    horizon,
                    sigma,
                    rep,
                    d_centroid: dist(centroid(&g, spec)?, c0),
                    d_peak: dist((p.0 as f64, p.1 as f64), (p0.0 as f64, p0.1 as f64)),
                    e_rel: rmse(&model.rollout(&xp, horizon)?, truth)? / rmse0,
                });
            }
        }
    }
    Ok(rows)
}

/// Orders rows by `(T, sigma, event, rep)`.
pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.horizon
            .cmp(&b.horizon)
            .then(a.sigma.total_cmp(&b.sigma))
            .then(a.event_id.cmp(&b.event_id))
            .then(a.rep.cmp(&b.rep))
    });
}

/// Runs every event sequentially and returns sorted rows.
pub fn displacement_sweep(
    cfg: &SweepConfig,
    events: &[SweepEvent],
    model: &dyn Forecaster,
    req: &AttributionRequest,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for e in events {
        rows.extend(sweep_event(cfg, e, model, req)?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Aggregate of all rows at one `(T, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub horizon: usize,
    pub sigma: f64,
    pub mean_centroid: f64,
    /// Population standard deviation over events and repetitions.
    pub std_centroid: f64,
    pub mean_peak: f64,
    pub std_peak: f64,
    pub mean_e_rel: f64,
    pub count: usize,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

/// Groups sorted rows by `(T, sigma)`.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let key = (rows[start].horizon, rows[start].sigma);
        let end = start
            + rows[start..]
                .iter()
                .take_while(|r| (r.horizon, r.sigma) == key)
                .count();
        let group = &rows[start..end];
        let (mean_centroid, std_centroid) = mean_std(group.iter().map(|r| r.d_centroid));
        let (mean_peak, std_peak) = mean_std(group.iter().map(|r| r.d_peak));
        let (mean_e_rel, _) = mean_std(group.iter().map(|r| r.e_rel));
        out.push(SweepSummary {
            horizon: key.0,
            sigma: key.1,
            mean_centroid,
            std_centroid,
            mean_peak,
            std_peak,
            mean_e_rel,
            count: group.len(),
        });
        start = end;
    }
    out
}

/// Mass flux between a clean and a perturbed attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Dipole {
    pub clean: SpatialMeasure,
    pub perturbed: SpatialMeasure,
    pub flux: MassFlux,
    pub cost: f64,
    pub iterations: usize,
}

/// Transport-plan flux from `clean` to `perturbed` maps.
pub fn dipole_from_maps(clean: &[f64], perturbed: &[f64], spec: GridSpec, cfg: &SinkhornConfig) -> Result<Dipole> {
    let mu = SpatialMeasure::from_abs(spec, clean)?;
    let nu = SpatialMeasure::from_abs(spec, perturbed)?;
    let plan = sinkhorn_plan(&mu, &nu, cfg)?;
    Ok(Dipole {
        flux: mass_flux(&plan),
        cost: plan.cost(),
        iterations: plan.iterations(),
        clean: mu,
        perturbed: nu,
    })
}

/// Dipole of the request's attribution at `x` against the attribution at
/// one noisy copy of `x` (noise `sigma_frac * range`, stream `rep`).
pub fn dipole_maps(
    x: &StateTensor,
    model: &dyn Forecaster,
    req: &AttributionRequest,
    sigma_frac: f64,
    rep: u64,
    cfg: &SinkhornConfig,
) -> Result<Dipole> {
    let clean = attribution::attribute(req, x, model)?.map;
    let sigma = sigma_frac * attribution::channel_range(x, req.target.c_in)?;
    let mut r = rng::stream(req.seed, Stream::Sweep, rep);
    let xp = attribution::perturb_channel(x, req.target.c_in, sigma, &mut r)?;
    let pert = attribution::attribute(req, &xp, model)?.map;
    dipole_from_maps(&clean, &pert, x.spec(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tie_goes_first() {
        let spec = GridSpec::new(2, 3).unwrap();
        assert_eq!(peak(&[1.0; 6], spec).unwrap(), (0, 0));
        assert_eq!(peak(&[0.0, -2.0, 1.0, 2.0, 0.0, 0.0], spec).unwrap(), (0, 1));
    }

    #[test]
    fn centroid_zero_mass() {
        let spec = GridSpec::new(2, 2).unwrap();
        assert_eq!(centroid(&[0.0; 4], spec), Err(Error::ZeroMass));
    }

    #[test]
    fn summary_population_std() {
        let row = |d: f64| SweepRow {
            event_id: 0,
            horizon: 1,
            sigma: 0.1,
            rep: 0,
            d_centroid: d,
            d_peak: 0.0,
            e_rel: 1.0,
        };
        let s = summarize(&[row(1.0), row(3.0)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_centroid, 2.0);
        assert_eq!(s[0].std_centroid, 1.0);
    }
}
