//! Interacting particles on the unit sphere: the continuous-time picture of
//! self-attention with identity query, key and value weights.
//!
//! Each token `x_i` moves along the tangent projection of an attention-weighted
//! average of all tokens. [`Variant::Sa`] normalizes the weights with a
//! softmax; [`Variant::Usa`] uses `1/n` instead, which makes the flow a
//! gradient ascent of the interaction energy.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Norm tolerance of the unit-sphere invariant.
pub const UNIT_TOL: f64 = 1e-9;

/// Single-linkage threshold for counting clusters, in radians.
pub const CLUSTER_ANGLE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Sa,
    Usa,
}

impl core::fmt::Display for Variant {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Variant::Sa => "sa",
            Variant::Usa => "usa",
        })
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" | "SA" => Ok(Variant::Sa),
            "usa" | "USA" => Ok(Variant::Usa),
            _ => Err(Error::Domain(alloc::format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    n: usize,
    d: usize,
    positions: Vec<f64>,
    pub beta: f64,
    pub variant: Variant,
    /// Noise scale; `0` disables the diffusion term.
    pub kappa: f64,
    /// Root seed of the per-step noise streams.
    pub noise_seed: u64,
    steps: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = math::sqrt(dot(v, v));
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Domain("particle with zero or non-finite norm".into()));
    }
    v.iter_mut().for_each(|a| *a /= n);
    Ok(())
}

/// `y - <x, y> x / |x|^2`.
fn project(x: &[f64], y: &mut [f64]) {
    let s = dot(x, y) / dot(x, x);
    y.iter_mut().zip(x).for_each(|(a, b)| *a -= s * b);
}

impl ParticleSystem {
    /// Particles at `positions` (`n * d` values, row per particle), each
    /// rescaled to unit norm.
    pub fn new(d: usize, mut positions: Vec<f64>, beta: f64, variant: Variant, kappa: f64) -> Result<Self> {
        if d == 0 || positions.is_empty() || positions.len() % d != 0 {
            return Err(Error::Shape(alloc::format!(
                "{} coordinates do not form particles of dimension {d}",
                positions.len()
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Domain("beta must be finite and >= 0".into()));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::Domain("kappa must be finite and >= 0".into()));
        }
        for p in positions.chunks_mut(d) {
            normalize(p)?;
        }
        Ok(Self {
            n: positions.len() / d,
            d,
            positions,
            beta,
            variant,
            kappa,
            noise_seed: 0,
            steps: 0,
        })
    }

    /// `n` particles drawn uniformly on the sphere from stream `seed`.
    pub fn random(n: usize, d: usize, beta: f64, variant: Variant, kappa: f64, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, Stream::Particles, 0);
        let positions = (0..n * d).map(|_| rng::normal(&mut r)).collect();
        let mut sys = Self::new(d, positions, beta, variant, kappa)?;
        sys.noise_seed = seed;
        Ok(sys)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Largest `| |x_i| - 1 |`.
    pub fn max_norm_error(&self) -> f64 {
        self.positions
            .chunks(self.d)
            .map(|p| math::abs(math::sqrt(dot(p, p)) - 1.0))
            .fold(0.0, f64::max)
    }

    fn field(&self, x: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let mut v = vec![0.0; n * d];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            let logits: Vec<f64> = (0..n).map(|j| self.beta * dot(xi, &x[j * d..(j + 1) * d])).collect();
            match self.variant {
                Variant::Usa => {
                    for (wj, l) in w.iter_mut().zip(&logits) {
                        *wj = math::exp(*l) / n as f64;
                    }
                }
                Variant::Sa => {
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for (wj, l) in w.iter_mut().zip(&logits) {
                        *wj = math::exp(l - m);
                        z += *wj;
                    }
                    w.iter_mut().for_each(|a| *a /= z);
                }
            }
            let vi = &mut v[i * d..(i + 1) * d];
            for (j, wj) in w.iter().enumerate() {
                for (a, b) in vi.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                    *a += wj * b;
                }
            }
            project(xi, vi);
        }
        v
    }

    /// Tangent velocity of every particle, row per particle.
    pub fn velocity(&self) -> Vec<f64> {
        self.field(&self.positions)
    }

    /// One RK4 step of length `dt`, plus the tangent Brownian increment when
    /// `kappa > 0`, followed by projection back onto the sphere.
    pub fn step(&self, dt: f64) -> Result<ParticleSystem> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain("dt must be > 0".into()));
        }
        let x = &self.positions;
        let shifted = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
        let k1 = self.field(x);
        let k2 = self.field(&shifted(&k1, dt / 2.0));
        let k3 = self.field(&shifted(&k2, dt / 2.0));
        let k4 = self.field(&shifted(&k3, dt));
        let mut next: Vec<f64> = (0..x.len())
            .map(|k| x[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]))
            .collect();
        if self.kappa > 0.0 {
            let scale = math::sqrt(2.0 / self.kappa) * math::sqrt(dt);
            let mut r = rng::stream(self.noise_seed, Stream::Particles, self.steps + 1);
            for (xi, pi) in x.chunks(self.d).zip(next.chunks_mut(self.d)) {
                let mut xi_noise: Vec<f64> = (0..self.d).map(|_| scale * rng::normal(&mut r)).collect();
                project(xi, &mut xi_noise);
                pi.iter_mut().zip(&xi_noise).for_each(|(a, b)| *a += b);
            }
        }
        for p in next.chunks_mut(self.d) {
            normalize(p)?;
        }
        Ok(Self {
            positions: next,
            steps: self.steps + 1,
            ..self.clone()
        })
    }

    /// `steps` consecutive steps.
    pub fn run(&self, dt: f64, steps: usize) -> Result<ParticleSystem> {
        let mut s = self.clone();
        for _ in 0..steps {
            s = s.step(dt)?;
        }
        Ok(s)
    }

    /// `(1 / (2 beta n^2)) sum_ij exp(beta <x_i, x_j>)`.
    pub fn interaction_energy(&self) -> Result<f64> {
        if !(self.beta > 0.0) {
            return Err(Error::Domain("interaction energy needs beta > 0".into()));
        }
        let n = self.n;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += math::exp(self.beta * dot(self.particle(i), self.particle(j)));
            }
        }
        Ok(total / (2.0 * self.beta * (n * n) as f64))
    }

    /// Mean angle over distinct pairs, in radians.
    pub fn mean_pairwise_angle(&self) -> f64 {
        let n = self.n;
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                total += angle(self.particle(i), self.particle(j));
            }
        }
        total / (n * (n - 1) / 2) as f64
    }

    /// Number of single-linkage clusters at angular threshold `threshold`.
    pub fn cluster_count(&self, threshold: f64) -> usize {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..self.n {
            for j in i + 1..self.n {
                if angle(self.particle(i), self.particle(j)) < threshold {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..self.n).filter(|&i| find(&mut parent, i) == i).count()
    }

    /// RMS distance between corresponding particles of two systems.
    pub fn distance(&self, other: &ParticleSystem) -> Result<f64> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::Shape("systems differ in size".into()));
        }
        let s: f64 = self
            .positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(math::sqrt(s / self.n as f64))
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    math::acos(dot(a, b).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinConfig {
    /// Standard deviation of the tangent perturbation of the initial state.
    pub sigma_init: f64,
    pub trials: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl BasinConfig {
    pub fn check(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.trials,
            });
        }
        if !(self.sigma_init.is_finite() && self.sigma_init >= 0.0) {
            return Err(Error::Domain("sigma_init must be finite and >= 0".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Domain("dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Initial state of trial `t`: every particle moved by a tangent Gaussian
/// of scale `sigma_init`, then renormalized.
pub fn perturb_initial(sys: &ParticleSystem, cfg: &BasinConfig, trial: usize) -> Result<ParticleSystem> {
    let mut out = sys.clone();
    if cfg.sigma_init == 0.0 {
        return Ok(out);
    }
    let mut r = rng::stream(cfg.seed, Stream::Trial, trial as u64);
    let d = sys.d;
    for (x, p) in sys.positions.chunks(d).zip(out.positions.chunks_mut(d)) {
        let mut e: Vec<f64> = (0..d).map(|_| cfg.sigma_init * rng::normal(&mut r)).collect();
        project(x, &mut e);
        p.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
        normalize(p)?;
    }
    Ok(out)
}

/// Final state of one deterministic trial (noise is switched off).
pub fn basin_trial(sys: &ParticleSystem, cfg: &BasinConfig, trial: usize) -> Result<ParticleSystem> {
    let mut s = perturb_initial(sys, cfg, trial)?;
    s.kappa = 0.0;
    s.run(cfg.dt, cfg.steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinReport {
    pub cluster_counts: Vec<usize>,
    /// `(a, b, distance)` for every trial pair `a < b`.
    pub pair_distances: Vec<(usize, usize, f64)>,
    pub max_distance: f64,
    /// Some pair of trials ends with different cluster counts.
    pub divergent: bool,
}

/// Compares trial end states.
pub fn basin_report(finals: &[ParticleSystem]) -> Result<BasinReport> {
    let cluster_counts: Vec<usize> = finals.iter().map(|s| s.cluster_count(CLUSTER_ANGLE)).collect();
    let mut pair_distances = Vec::new();
    let mut max_distance: f64 = 0.0;
    for a in 0..finals.len() {
        for b in a + 1..finals.len() {
            let dist = finals[a].distance(&finals[b])?;
            max_distance = max_distance.max(dist);
            pair_distances.push((a, b, dist));
        }
    }
    let divergent = cluster_counts.windows(2).any(|w| w[0] != w[1]);
    Ok(BasinReport {
        cluster_counts,
        pair_distances,
        max_distance,
        divergent,
    })
}

/// Runs every trial sequentially.
pub fn basin_experiment(sys: &ParticleSystem, cfg: &BasinConfig) -> Result<BasinReport> {
    cfg.check()?;
    let finals = (0..cfg.trials)
        .map(|t| basin_trial(sys, cfg, t))
        .collect::<Result<Vec<_>>>()?;
    basin_report(&finals)
}
