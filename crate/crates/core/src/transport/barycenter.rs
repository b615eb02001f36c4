use alloc::vec;
use alloc::vec::Vec;

use super::check_lambda;
use super::kernel::{Boundary, GridKernel};
use crate::fields::{GridSpec, SpatialMeasure};
use crate::{math, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterConfig {
    pub lambda: f64,
    /// Per-measure weights on the simplex; `None` means uniform.
    pub weights: Option<Vec<f64>>,
    pub max_iter: usize,
    /// Stop when `max_i ||d_i - mu||_1` falls below this.
    pub tol: f64,
    /// Floor on every scaling.
    pub floor: f64,
    pub boundary: Boundary,
}

impl Default for BarycenterConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            weights: None,
            max_iter: 1000,
            tol: 1e-6,
            floor: 1e-300,
            boundary: Boundary::Zero,
        }
    }
}

impl BarycenterConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

/// Output of [`conv_barycenter`].
#[derive(Debug, Clone)]
pub struct Barycenter {
    pub measure: SpatialMeasure,
    pub iterations: usize,
    /// Final `max_i ||d_i - mu||_1`.
    pub violation: f64,
    pub converged: bool,
    /// Violation after every outer iteration.
    pub trace: Vec<f64>,
}

impl Barycenter {
    /// Turns an exhausted iteration budget into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                violation: self.violation,
            })
        }
    }
}

fn resolve_weights(count: usize, weights: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / count as f64; count]),
        Some(w) => {
            if w.len() != count {
                return Err(Error::Shape(alloc::format!(
                    "{} weights for {count} measures",
                    w.len()
                )));
            }
            let total: f64 = w.iter().sum();
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || math::abs(total - 1.0) > 1e-9 {
                return Err(Error::Domain("barycenter weights must lie on the simplex".into()));
            }
            Ok(w.clone())
        }
    }
}

fn common_spec(measures: &[SpatialMeasure]) -> Result<GridSpec> {
    let first = measures.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    if measures.iter().any(|m| m.spec() != first.spec()) {
        return Err(Error::Shape("barycenter inputs live on different grids".into()));
    }
    Ok(first.spec())
}

/// Entropic Wasserstein barycenter by iterative Bregman projections, with
/// every kernel application a separable Gaussian convolution:
///
/// ```text
/// w_i = mu_i / K v_i,   d_i = v_i * K w_i,   mu = prod_i d_i^alpha_i,   v_i <- v_i * mu / d_i
/// ```
///
/// The log-sum forming `mu` is accumulated in sorted order, so the result
/// does not depend on the order of the inputs.
pub fn conv_barycenter(measures: &[SpatialMeasure], cfg: &BarycenterConfig) -> Result<Barycenter> {
    let spec = common_spec(measures)?;
    check_lambda(cfg.lambda)?;
    let weights = resolve_weights(measures.len(), &cfg.weights)?;
    let active: Vec<(usize, f64)> = weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, w)| (i, *w))
        .collect();
    let kernel = GridKernel::new(spec, cfg.lambda, cfg.boundary);
    let n = spec.cells();
    let m = active.len();
    let mut v = vec![vec![1.0; n]; m];
    let mut d = vec![vec![0.0; n]; m];
    let mut w = vec![0.0; n];
    let mut kv = vec![0.0; n];
    let mut kw = vec![0.0; n];
    let mut bary = vec![0.0; n];
    let mut terms = vec![0.0; m];
    let mut trace = Vec::new();
    let mut violation = f64::INFINITY;

    while trace.len() < cfg.max_iter {
        for (s, &(idx, _)) in active.iter().enumerate() {
            let mu = measures[idx].density();
            kernel.apply(&v[s], &mut kv);
            for k in 0..n {
                w[k] = mu[k] / kv[k].max(cfg.floor);
            }
            kernel.apply(&w, &mut kw);
            for k in 0..n {
                d[s][k] = (v[s][k] * kw[k]).max(cfg.floor);
            }
        }
        for k in 0..n {
            for (s, &(_, alpha)) in active.iter().enumerate() {
                terms[s] = alpha * math::ln(d[s][k]);
            }
            terms.sort_unstable_by(f64::total_cmp);
            bary[k] = math::exp(terms.iter().sum::<f64>());
        }
        let mut worst = 0.0f64;
        for ds in &d {
            let gap: f64 = ds.iter().zip(&bary).map(|(a, b)| math::abs(a - b)).sum();
            worst = worst.max(gap);
        }
        violation = worst;
        trace.push(violation);
        if violation < cfg.tol {
            break;
        }
        for s in 0..m {
            for k in 0..n {
                v[s][k] = (v[s][k] * bary[k] / d[s][k]).max(cfg.floor);
            }
        }
    }
    let measure = SpatialMeasure::from_weights(spec, bary)?;
    Ok(Barycenter {
        measure,
        iterations: trace.len(),
        violation,
        converged: violation < cfg.tol,
        trace,
    })
}

/// `K (mu / K 1)`: the barycenter of copies of `mu`, the reference against
/// which entropic blurring is judged.
pub fn entropic_blur(mu: &SpatialMeasure, lambda: f64, boundary: Boundary) -> Result<SpatialMeasure> {
    check_lambda(lambda)?;
    let kernel = GridKernel::new(mu.spec(), lambda, boundary);
    let ones = vec![1.0; mu.spec().cells()];
    let k1 = kernel.apply_vec(&ones);
    let ratio: Vec<f64> = mu.density().iter().zip(&k1).map(|(m, k)| m / k).collect();
    SpatialMeasure::from_weights(mu.spec(), kernel.apply_vec(&ratio))
}
