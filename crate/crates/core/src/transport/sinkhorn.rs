use alloc::vec;
use alloc::vec::Vec;

use super::kernel::LogKernel;
use super::{check_lambda, check_pair, cost_matrix, l1_gap, Repr, TransportPlan, DENSE_PLAN_CAP};
use crate::fields::SpatialMeasure;
use crate::{math, Error, Result};

/// Which Sinkhorn implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SinkhornMode {
    /// Log domain for `lambda <= 0.01`, dense kernel otherwise (falling back
    /// to the log domain if the kernel underflows).
    #[default]
    Auto,
    /// Scaling vectors against the materialized kernel `exp(-C / lambda)`.
    Dense,
    /// Stabilized potentials with temperature annealing.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop when both L1 marginal violations drop below this.
    pub tol: f64,
    pub mode: SinkhornMode,
    /// Floor on scaling vectors in the dense path.
    pub floor: f64,
    /// Largest grid whose coupling is materialized; larger plans keep only
    /// the potentials.
    pub dense_cap: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iter: 100_000,
            tol: 1e-9,
            mode: SinkhornMode::Auto,
            floor: 1e-300,
            dense_cap: DENSE_PLAN_CAP,
        }
    }
}

impl SinkhornConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

const LOG_DOMAIN_THRESHOLD: f64 = 0.01;

/// Marginal tolerance at intermediate temperatures.
const STAGE_TOL: f64 = 1e-4;

/// Temperature ratio between annealing stages.
const ANNEAL: f64 = 0.5;

/// Grids up to this many cells switch to Newton steps when the final stage
/// stalls; the Hessian needs the dense plan.
const NEWTON_CAP: usize = 1024;

/// Final-stage Sinkhorn iterations before switching to Newton.
const NEWTON_AFTER: usize = 2000;

const NEWTON_MAX_STEPS: usize = 50;

/// Largest potential change per Newton step, in units of `eps`. Nearly
/// disconnected plans give the Hessian tiny eigenvalues, and the full step
/// along them overshoots by orders of magnitude.
const NEWTON_MAX_MOVE: f64 = 2.0;

#[inline]
pub(crate) fn exp_or_zero(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else {
        math::exp(x)
    }
}

#[inline]
fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        math::ln(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// Entropic optimal transport between `mu` and `nu` with cost `C`, the
/// squared normalized distance: `pi = diag(a) K diag(b)`, `K = exp(-C / lambda)`.
pub fn sinkhorn_plan(
    mu: &SpatialMeasure,
    nu: &SpatialMeasure,
    cfg: &SinkhornConfig,
) -> Result<TransportPlan> {
    let spec = check_pair(mu, nu)?;
    check_lambda(cfg.lambda)?;
    let log_first = match cfg.mode {
        SinkhornMode::Log => true,
        SinkhornMode::Dense => false,
        SinkhornMode::Auto => cfg.lambda <= LOG_DOMAIN_THRESHOLD,
    };
    if !log_first {
        if spec.cells() > DENSE_PLAN_CAP {
            return Err(Error::Size {
                cells: spec.cells(),
                cap: DENSE_PLAN_CAP,
            });
        }
        match dense(mu, nu, cfg) {
            Err(Error::NumericalUnderflow(_)) if cfg.mode == SinkhornMode::Auto => {}
            other => return other,
        }
    }
    log_domain(mu, nu, cfg)
}

fn dense(mu: &SpatialMeasure, nu: &SpatialMeasure, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let spec = mu.spec();
    let n = spec.cells();
    let (a, b) = (mu.density(), nu.density());
    let cost = cost_matrix(spec);
    let k: Vec<f64> = cost.iter().map(|c| math::exp(-c / cfg.lambda)).collect();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut kv = vec![0.0; n];
    let mut violation;
    let mut iterations = 0;
    loop {
        for i in 0..n {
            kv[i] = (0..n).map(|j| k[i * n + j] * v[j]).sum();
        }
        if iterations > 0 {
            let rows: Vec<f64> = (0..n).map(|i| u[i] * kv[i]).collect();
            violation = l1_gap(&rows, a);
            if violation < cfg.tol || iterations >= cfg.max_iter {
                break;
            }
        }
        for i in 0..n {
            if a[i] > 0.0 && kv[i] <= 0.0 {
                return Err(Error::NumericalUnderflow(alloc::format!(
                    "kernel row {i} vanished at lambda = {}",
                    cfg.lambda
                )));
            }
            u[i] = if a[i] > 0.0 { (a[i] / kv[i]).max(cfg.floor) } else { 0.0 };
        }
        for j in 0..n {
            let ktu: f64 = (0..n).map(|i| k[i * n + j] * u[i]).sum();
            if b[j] > 0.0 && ktu <= 0.0 {
                return Err(Error::NumericalUnderflow(alloc::format!(
                    "kernel column {j} vanished at lambda = {}",
                    cfg.lambda
                )));
            }
            v[j] = if b[j] > 0.0 { (b[j] / ktu).max(cfg.floor) } else { 0.0 };
        }
        iterations += 1;
    }
    if !(violation < cfg.tol) {
        return Err(Error::NonConvergence {
            iterations,
            violation,
        });
    }
    let plan: Vec<f64> = (0..n * n).map(|ij| u[ij / n] * k[ij] * v[ij % n]).collect();
    Ok(finish_dense(mu, nu, plan, &cost, cfg.lambda, iterations))
}

pub(super) fn finish_dense(
    mu: &SpatialMeasure,
    nu: &SpatialMeasure,
    plan: Vec<f64>,
    cost: &[f64],
    lambda: f64,
    iterations: usize,
) -> TransportPlan {
    let n = mu.spec().cells();
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; n];
    let (mut transport, mut neg_entropy) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = plan[i * n + j];
            rows[i] += p;
            cols[j] += p;
            transport += cost[i * n + j] * p;
            if p > 0.0 {
                neg_entropy += p * math::ln(p);
            }
        }
    }
    let violation = l1_gap(&rows, mu.density()).max(l1_gap(&cols, nu.density()));
    TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        repr: Repr::Dense(plan),
        lambda,
        cost: transport,
        entropic_cost: transport + lambda * neg_entropy,
        iterations,
        violation,
    }
}

fn log_domain(mu: &SpatialMeasure, nu: &SpatialMeasure, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let spec = mu.spec();
    let n = spec.cells();
    let (a, b) = (mu.density(), nu.density());
    let ln_a: Vec<f64> = a.iter().map(|&x| ln_or_neg_inf(x)).collect();
    let ln_b: Vec<f64> = b.iter().map(|&x| ln_or_neg_inf(x)).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut lse = vec![0.0; n];
    let mut col_lse = vec![0.0; n];
    let mut iterations = 0;
    let mut violation;

    // Anneal the temperature from the scale of the cost down to lambda;
    // potentials carry over between stages.
    let newton = n <= NEWTON_CAP;
    let mut eps = 1.0f64.max(cfg.lambda);
    loop {
        let last = eps <= cfg.lambda;
        let target = if last { cfg.tol } else { cfg.tol.max(STAGE_TOL) };
        let lk = LogKernel::new(spec, eps);
        let mut stage_iters = 0;
        loop {
            for j in 0..n {
                h[j] = g[j] / eps;
            }
            lk.apply(&h, &mut lse);
            let rows: f64 = (0..n)
                .map(|i| math::abs(exp_or_zero(f[i] / eps + lse[i]) - a[i]))
                .sum();
            violation = rows;
            if rows < target {
                // Columns are exact after the g-update only up to rounding;
                // confirm before stopping.
                for i in 0..n {
                    h[i] = f[i] / eps;
                }
                lk.apply(&h, &mut col_lse);
                let cols: f64 = (0..n)
                    .map(|j| math::abs(exp_or_zero(g[j] / eps + col_lse[j]) - b[j]))
                    .sum();
                violation = rows.max(cols);
                if violation < target {
                    break;
                }
            }
            if iterations >= cfg.max_iter {
                break;
            }
            if newton && last && stage_iters > 0 && stage_iters % NEWTON_AFTER == 0 {
                // Newton only moves the potentials on accepted steps, so a
                // stalled attempt leaves Sinkhorn a valid state to resume from.
                let budget = NEWTON_MAX_STEPS.min(cfg.max_iter - iterations);
                let (v, steps) = newton_polish(mu, nu, &mut f, &mut g, eps, target, budget);
                iterations += steps;
                if v < target {
                    violation = v;
                    break;
                }
            }
            for i in 0..n {
                f[i] = eps * (ln_a[i] - lse[i]);
            }
            for i in 0..n {
                h[i] = f[i] / eps;
            }
            lk.apply(&h, &mut lse);
            for j in 0..n {
                g[j] = eps * (ln_b[j] - lse[j]);
            }
            iterations += 1;
            stage_iters += 1;
        }
        if last || iterations >= cfg.max_iter {
            break;
        }
        eps = (eps * ANNEAL).max(cfg.lambda);
    }
    if !(violation < cfg.tol) {
        return Err(Error::NonConvergence {
            iterations,
            violation,
        });
    }
    if f.iter().chain(&g).any(|v| v.is_nan()) {
        return Err(Error::NumericalUnderflow("log-domain potentials became NaN".into()));
    }

    if n <= cfg.dense_cap {
        let cost = cost_matrix(spec);
        let plan: Vec<f64> = (0..n * n)
            .map(|ij| exp_or_zero((f[ij / n] + g[ij % n] - cost[ij]) / cfg.lambda))
            .collect();
        return Ok(finish_dense(mu, nu, plan, &cost, cfg.lambda, iterations));
    }
    let (mut transport, mut neg_entropy) = (0.0, 0.0);
    for i in 0..n {
        if f[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..n {
            let c = spec.sq_dist(i, j);
            let lp = (f[i] + g[j] - c) / cfg.lambda;
            let p = exp_or_zero(lp);
            if p > 0.0 {
                transport += c * p;
                neg_entropy += p * lp;
            }
        }
    }
    Ok(TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        repr: Repr::Potentials { f, g },
        lambda: cfg.lambda,
        cost: transport,
        entropic_cost: transport + cfg.lambda * neg_entropy,
        iterations,
        violation,
    })
}

/// Dense plan on the supports of `a` and `b` with its row and column sums.
struct SupportPlan {
    p: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

/// Newton steps on the entropic dual, started from Sinkhorn potentials.
///
/// Sinkhorn is coordinate ascent and can crawl for hundreds of thousands of
/// iterations at small `eps`; Newton converges quadratically from a nearby
/// start. The system `[diag(r) P; P^T diag(c)] d = eps (a - r, b - c)` is
/// solved by Jacobi-preconditioned conjugate gradients with a
/// Levenberg-Marquardt shift on the diagonal, and each step is
/// backtracked until either the dual objective rises enough or the squared
/// marginal residual drops. Returns the final
/// violation and the number of steps taken.
fn newton_polish(
    mu: &SpatialMeasure,
    nu: &SpatialMeasure,
    f: &mut [f64],
    g: &mut [f64],
    eps: f64,
    tol: f64,
    max_steps: usize,
) -> (f64, usize) {
    let spec = mu.spec();
    let (a, b) = (mu.density(), nu.density());
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let (m, k) = (rows.len(), cols.len());
    let cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| spec.sq_dist(i, j)))
        .collect();
    let eval = |f: &[f64], g: &[f64]| {
        let mut sp = SupportPlan {
            p: vec![0.0; m * k],
            r: vec![0.0; m],
            c: vec![0.0; k],
        };
        for (x, &i) in rows.iter().enumerate() {
            for (y, &j) in cols.iter().enumerate() {
                let v = exp_or_zero((f[i] + g[j] - cost[x * k + y]) / eps);
                sp.p[x * k + y] = v;
                sp.r[x] += v;
                sp.c[y] += v;
            }
        }
        sp
    };
    let residual = |sp: &SupportPlan| -> Vec<f64> {
        let ra = rows.iter().zip(&sp.r).map(|(&i, r)| a[i] - r);
        let cb = cols.iter().zip(&sp.c).map(|(&j, c)| b[j] - c);
        ra.chain(cb).collect()
    };
    let violation = |res: &[f64]| {
        let (ra, cb) = res.split_at(m);
        let l1 = |v: &[f64]| v.iter().map(|x| math::abs(*x)).sum::<f64>();
        l1(ra).max(l1(cb))
    };
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let dual = |f: &[f64], g: &[f64], sp: &SupportPlan| {
        let fa: f64 = rows.iter().map(|&i| f[i] * a[i]).sum();
        let gb: f64 = cols.iter().map(|&j| g[j] * b[j]).sum();
        fa + gb - eps * sp.r.iter().sum::<f64>()
    };

    let mut sp = eval(f, g);
    let mut res = residual(&sp);
    let mut viol = violation(&res);
    let mut steps = 0;
    let mut damping = 1.0;
    while viol >= tol && steps < max_steps {
        let rhs: Vec<f64> = res.iter().map(|v| eps * v).collect();
        let mut d = pcg(&sp, m, k, &rhs, damping * viol);
        // Shifting f up and g down leaves the plan unchanged; drop that part.
        let shift = (d[..m].iter().sum::<f64>() - d[m..].iter().sum::<f64>()) / (m + k) as f64;
        d[..m].iter_mut().for_each(|x| *x -= shift);
        d[m..].iter_mut().for_each(|x| *x += shift);
        let merit = sq(&res);
        let phi = dual(f, g, &sp);
        let slope: f64 = d.iter().zip(&res).map(|(x, y)| x * y).sum();
        let longest = d.iter().fold(0.0f64, |m, x| m.max(math::abs(*x)));
        let mut t = if longest > NEWTON_MAX_MOVE * eps { NEWTON_MAX_MOVE * eps / longest } else { 1.0 };
        let first = t;
        let accepted = loop {
            let (mut f2, mut g2) = (f.to_vec(), g.to_vec());
            for (x, &i) in rows.iter().enumerate() {
                f2[i] += t * d[x];
            }
            for (y, &j) in cols.iter().enumerate() {
                g2[j] += t * d[m + y];
            }
            let sp2 = eval(&f2, &g2);
            let res2 = residual(&sp2);
            if sq(&res2) < merit || dual(&f2, &g2, &sp2) > phi + 1e-4 * t * slope {
                f.copy_from_slice(&f2);
                g.copy_from_slice(&g2);
                break Some((sp2, res2));
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        steps += 1;
        let Some((sp2, res2)) = accepted else { break };
        damping = if t == first { (damping * 0.1).max(1e-12) } else { (damping * 10.0).min(1.0) };
        sp = sp2;
        res = res2;
        viol = violation(&res);
    }
    (viol, steps)
}

/// Preconditioned CG for `([diag(r) P; P^T diag(c)] + mu I) x = rhs`. At
/// `mu = 0` the matrix is positive semidefinite with null vector `(1, -1)`,
/// to which `rhs` is orthogonal.
fn pcg(sp: &SupportPlan, m: usize, k: usize, rhs: &[f64], mu: f64) -> Vec<f64> {
    let apply = |v: &[f64], out: &mut [f64]| {
        let (u, w) = v.split_at(m);
        let (top, bottom) = out.split_at_mut(m);
        for x in 0..m {
            let row = &sp.p[x * k..(x + 1) * k];
            top[x] = (sp.r[x] + mu) * u[x] + row.iter().zip(w).map(|(p, wy)| p * wy).sum::<f64>();
        }
        for y in 0..k {
            bottom[y] = (sp.c[y] + mu) * w[y];
        }
        for x in 0..m {
            let row = &sp.p[x * k..(x + 1) * k];
            for y in 0..k {
                bottom[y] += row[y] * u[x];
            }
        }
    };
    let inv_diag: Vec<f64> = sp
        .r
        .iter()
        .chain(&sp.c)
        .map(|&d| if d + mu > 0.0 { 1.0 / (d + mu) } else { 1.0 })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let len = m + k;
    let mut x = vec![0.0; len];
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let stop = 1e-24 * dot(rhs, rhs);
    for _ in 0..(10 * len).min(1000) {
        if dot(&r, &r) <= stop {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..len {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}
