//! Evaluation metrics for attribution maps: Gini sparsity, ROAD faithfulness
//! and local Lipschitz estimates.
//!
//! All metrics take maps as row-major `f64` slices and draw their randomness
//! from named streams, so two methods evaluated with the same seed see the
//! same perturbations and the same random masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::attribution::{self, AttributionRequest};
use crate::fields::{Field2D, StateTensor};
use crate::math;
use crate::rng::{self, Stream, StreamRng};
use crate::toymodel::{Forecaster, Target};
use crate::{Error, Result};

/// Gini coefficient of `|map|`. Higher means sparser.
pub fn gini(map: &[f64]) -> Result<f64> {
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gini input"));
    }
    let mut a: Vec<f64> = map.iter().map(|v| math::abs(*v)).collect();
    let total: f64 = a.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    a.sort_by(f64::total_cmp);
    // sum_i (2i - d - 1) a_(i), with the terms for i and d + 1 - i paired
    // so equal values cancel exactly.
    let d = a.len();
    let num: f64 = (0..d / 2)
        .map(|i| (d - 1 - 2 * i) as f64 * (a[d - 1 - i] - a[i]))
        .sum();
    Ok(num / (d as f64 * total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LleConfig {
    /// Number of perturbation draws.
    pub k: usize,
    /// Perturbation standard deviation as a fraction of the channel range.
    pub sigma_frac: f64,
    pub seed: u64,
}

impl Default for LleConfig {
    fn default() -> Self {
        Self {
            k: 7,
            sigma_frac: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LleScores {
    pub l2: f64,
    pub cos: f64,
}

fn l2_norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|a| a * a).sum())
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if !(n > 0.0) {
        return Err(Error::ZeroMass);
    }
    Ok(v.iter().map(|a| a / n).collect())
}

/// The `k`-th LLE perturbation of `x` on channel `c_in`, with the realised
/// `||eps||_2` (measured after rounding to the stored precision).
pub fn lle_perturbation(x: &StateTensor, c_in: usize, cfg: &LleConfig, k: usize) -> Result<(StateTensor, f64)> {
    let sigma = cfg.sigma_frac * attribution::channel_range(x, c_in)?;
    let mut r = rng::stream(cfg.seed, Stream::Lle, k as u64);
    let xp = attribution::perturb_channel(x, c_in, sigma, &mut r)?;
    let a = x.channel_slice(c_in)?;
    let b = xp.channel_slice(c_in)?;
    let norm = math::sqrt(
        a.iter()
            .zip(b)
            .map(|(u, v)| {
                let d = *v as f64 - *u as f64;
                d * d
            })
            .sum(),
    );
    Ok((xp, norm))
}

/// Both LLE variants for an attribution function `attr`, which must be
/// deterministic in its input.
///
/// The score is the maximum over `cfg.k` draws of
/// `||G(x) - G(x + eps)||_2 / ||eps||_2`, on raw maps for `l2` and on
/// unit-normalized maps for `cos`.
pub fn lle(
    attr: &dyn Fn(&StateTensor) -> Result<Vec<f64>>,
    x: &StateTensor,
    c_in: usize,
    cfg: &LleConfig,
) -> Result<LleScores> {
    if cfg.k == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let g0 = attr(x)?;
    let g0_hat = unit(&g0)?;
    let mut out = LleScores { l2: 0.0, cos: 0.0 };
    for k in 0..cfg.k {
        let (xp, eps) = lle_perturbation(x, c_in, cfg, k)?;
        if !(eps > 0.0) {
            return Err(Error::Domain("LLE perturbation has zero norm".into()));
        }
        let g = attr(&xp)?;
        if g.len() != g0.len() {
            return Err(Error::Shape("attribution size changed under perturbation".into()));
        }
        out.l2 = out.l2.max(l2_dist(&g0, &g) / eps);
        out.cos = out.cos.max(l2_dist(&g0_hat, &unit(&g)?) / eps);
    }
    Ok(out)
}

pub fn lle_l2(
    attr: &dyn Fn(&StateTensor) -> Result<Vec<f64>>,
    x: &StateTensor,
    c_in: usize,
    cfg: &LleConfig,
) -> Result<f64> {
    Ok(lle(attr, x, c_in, cfg)?.l2)
}

pub fn lle_cos(
    attr: &dyn Fn(&StateTensor) -> Result<Vec<f64>>,
    x: &StateTensor,
    c_in: usize,
    cfg: &LleConfig,
) -> Result<f64> {
    Ok(lle(attr, x, c_in, cfg)?.cos)
}

/// LLE of an attribution request against a model.
pub fn lle_request(
    req: &AttributionRequest,
    x: &StateTensor,
    model: &dyn Forecaster,
    cfg: &LleConfig,
) -> Result<LleScores> {
    let attr = |xi: &StateTensor| attribution::attribute(req, xi, model).map(|r| r.map);
    lle(&attr, x, req.target.c_in, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadConfig {
    /// Largest masking percentage; the grid is `1..=p_max` percent.
    pub p_max: usize,
    /// Random masks per percentage.
    pub k_rand: usize,
    /// Imputation noise as a fraction of the channel range.
    pub sigma_imp_frac: f64,
    pub seed: u64,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            p_max: 15,
            k_rand: 5,
            sigma_imp_frac: 0.1,
            seed: 42,
        }
    }
}

impl RoadConfig {
    pub fn check(&self) -> Result<()> {
        if self.p_max == 0 || self.p_max >= 100 {
            return Err(Error::Domain("p_max must be in 1..100 percent".into()));
        }
        if self.k_rand == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if !(self.sigma_imp_frac.is_finite() && self.sigma_imp_frac >= 0.0) {
            return Err(Error::Domain("sigma_imp_frac must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of masked cells at `p` percent of `cells`.
    pub fn mask_size(p: usize, cells: usize) -> usize {
        (p * cells / 100).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadScore {
    /// Mean of the binary curve over the percentage grid.
    pub score: f64,
    pub binary: Vec<bool>,
    /// `|delta target|` under the salient mask, per percentage.
    pub salient_delta: Vec<f64>,
    /// Mean `|delta target|` over the random masks, per percentage.
    pub random_delta: Vec<f64>,
}

/// Indices of the `n` largest `|map|` entries; ties go to the earlier cell.
pub fn top_cells(map: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.len()).collect();
    idx.sort_by(|&a, &b| math::abs(map[b]).total_cmp(&math::abs(map[a])));
    idx.truncate(n);
    idx
}

fn masked_delta(
    x: &StateTensor,
    model: &dyn Forecaster,
    target: &Target,
    base: f64,
    cells: &[usize],
    sigma_imp: f64,
    rng: &mut StreamRng,
) -> Result<f64> {
    let spec = x.spec();
    let mut mask = vec![false; spec.cells()];
    for &c in cells {
        mask[c] = true;
    }
    let filled = impute(&x.channel(target.c_in)?, &mask, sigma_imp, rng)?;
    let xm = x.with_channel(target.c_in, &filled)?;
    Ok(math::abs(model.target_value(&xm, target)? - base))
}

/// ROAD score of `map` for `target`: the fraction of masking percentages at
/// which removing the most salient cells of `x[c_in]` moves the target more
/// than removing random cells.
///
/// Random masks depend only on `(cfg.seed, p, k)`, so every method evaluated
/// with the same seed is compared against the same random baseline.
pub fn road(
    map: &[f64],
    x: &StateTensor,
    model: &dyn Forecaster,
    target: &Target,
    cfg: &RoadConfig,
) -> Result<RoadScore> {
    cfg.check()?;
    let spec = x.spec();
    let d = spec.cells();
    if map.len() != d {
        return Err(Error::Shape(alloc::format!("map has {} cells, grid has {d}", map.len())));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("road map"));
    }
    target.check(spec, model.channels())?;
    let sigma_imp = cfg.sigma_imp_frac * attribution::channel_range(x, target.c_in)?;
    let base = model.target_value(x, target)?;
    let order = top_cells(map, d);
    let stride = (cfg.k_rand + 1) as u64;

    let mut out = RoadScore {
        score: 0.0,
        binary: Vec::with_capacity(cfg.p_max),
        salient_delta: Vec::with_capacity(cfg.p_max),
        random_delta: Vec::with_capacity(cfg.p_max),
    };
    for p in 1..=cfg.p_max {
        let n = RoadConfig::mask_size(p, d);
        let mut r = rng::stream(cfg.seed, Stream::Imputation, p as u64 * stride);
        let salient = masked_delta(x, model, target, base, &order[..n], sigma_imp, &mut r)?;
        let mut random = 0.0;
        for k in 0..cfg.k_rand {
            let mut rm = rng::stream(cfg.seed, Stream::Road, (p * cfg.k_rand + k) as u64);
            let cells = rand::seq::index::sample(&mut rm, d, n).into_vec();
            let mut r = rng::stream(cfg.seed, Stream::Imputation, p as u64 * stride + 1 + k as u64);
            random += masked_delta(x, model, target, base, &cells, sigma_imp, &mut r)?;
        }
        random /= cfg.k_rand as f64;
        out.binary.push(salient > random);
        out.salient_delta.push(salient);
        out.random_delta.push(random);
    }
    out.score = out.binary.iter().filter(|b| **b).count() as f64 / cfg.p_max as f64;
    Ok(out)
}

/// Convergence tolerance of the harmonic fill (max change per sweep).
pub const IMPUTE_TOL: f64 = 1e-6;
pub const IMPUTE_MAX_SWEEPS: usize = 10_000;

/// Fills masked cells with the discrete harmonic interpolant of the unmasked
/// ones (Gauss-Seidel on 4-neighbour means), then adds `N(0, sigma_imp^2)`
/// noise to the masked cells. Unmasked cells are copied unchanged.
pub fn impute(field: &Field2D, mask: &[bool], sigma_imp: f64, rng: &mut StreamRng) -> Result<Field2D> {
    let spec = field.spec();
    let (h, w) = (spec.height(), spec.width());
    if mask.len() != spec.cells() {
        return Err(Error::Shape(alloc::format!(
            "mask has {} cells, grid has {}",
            mask.len(),
            spec.cells()
        )));
    }
    if !(sigma_imp.is_finite() && sigma_imp >= 0.0) {
        return Err(Error::Domain("sigma_imp must be finite and >= 0".into()));
    }
    let known = mask.iter().filter(|m| !**m).count();
    if known == 0 {
        return Err(Error::AllMasked);
    }
    if known == mask.len() {
        return Ok(field.clone());
    }
    let mut v = field.to_f64();
    let mean = v.iter().zip(mask).filter(|(_, m)| !**m).map(|(a, _)| a).sum::<f64>() / known as f64;
    let holes: Vec<usize> = (0..v.len()).filter(|&k| mask[k]).collect();
    for &k in &holes {
        v[k] = mean;
    }
    for _ in 0..IMPUTE_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for &k in &holes {
            let (r, c) = (k / w, k % w);
            let mut sum = 0.0;
            let mut n = 0usize;
            if r > 0 {
                sum += v[k - w];
                n += 1;
            }
            if r + 1 < h {
                sum += v[k + w];
                n += 1;
            }
            if c > 0 {
                sum += v[k - 1];
                n += 1;
            }
            if c + 1 < w {
                sum += v[k + 1];
                n += 1;
            }
            if n == 0 {
                continue;
            }
            let next = sum / n as f64;
            change = change.max(math::abs(next - v[k]));
            v[k] = next;
        }
        if change < IMPUTE_TOL {
            break;
        }
    }
    let mut values = field.values().to_vec();
    for &k in &holes {
        let noise = if sigma_imp > 0.0 { sigma_imp * rng::normal(rng) } else { 0.0 };
        values[k] = (v[k] + noise) as f32;
    }
    Field2D::new(spec, values)
}
