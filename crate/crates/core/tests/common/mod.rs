//! Test-only oracles: central finite differences, Monte Carlo helpers.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wgrad_core::autodiff::ActivationPattern;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform draws kept at least `gap` away from zero.
pub fn uniform_away_from_zero(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if v.abs() >= gap {
                break v;
            }
        })
        .collect()
}

/// Central difference of `f` at `x` along each listed coordinate.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&k| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// Like [`central_diff`] but returns `None` for coordinates whose `±h`
/// evaluations change the activation pattern (a kink lies inside the stencil).
pub fn central_diff_smooth(
    f: &dyn Fn(&[f64]) -> (f64, ActivationPattern),
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Vec<Option<f64>> {
    let (_, base) = f(x);
    coords
        .iter()
        .map(|&k| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (fp, pp) = f(&xp);
            let (fm, pm) = f(&xm);
            (pp == base && pm == base).then(|| (fp - fm) / (2.0 * h))
        })
        .collect()
}

/// Max over entries of `|a - f| / max(|a|, |f|, floor)`, where the floor is
/// 1e-3 of the largest finite-difference magnitude so that entries many
/// orders below the gradient scale are judged on absolute error.
pub fn max_rel_err(ad: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    ad.iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Evenly spread subset of `0..n` with at most `count` entries.
pub fn spread(n: usize, count: usize) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    (0..count).map(|i| i * n / count).collect()
}
