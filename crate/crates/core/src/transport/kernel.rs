use alloc::vec;
use alloc::vec::Vec;

use crate::fields::GridSpec;
use crate::math;

/// Boundary handling for grid kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Mass beyond the edge is dropped.
    #[default]
    Zero,
    /// Toroidal wrap.
    Periodic,
}

/// Truncation radius in standard deviations. Taps beyond it weigh less
/// than `1e-297`; a shorter radius makes barycenters of inputs further
/// apart than the kernel support infeasible.
pub const TRUNCATION_SIGMAS: f64 = 37.0;

/// `exp(-(dr^2 + dc^2) / lambda)` applied as two 1-D passes in normalized
/// coordinates, truncated at [`TRUNCATION_SIGMAS`] standard deviations of
/// the Gaussian `sigma = sqrt(lambda / 2)`.
#[derive(Debug, Clone)]
pub struct GridKernel {
    spec: GridSpec,
    boundary: Boundary,
    row_taps: Vec<(isize, f64)>,
    col_taps: Vec<(isize, f64)>,
}

fn taps(len: usize, lambda: f64, boundary: Boundary) -> Vec<(isize, f64)> {
    let sigma_cells = math::sqrt(lambda / 2.0) * len as f64;
    let radius = math::ceil(TRUNCATION_SIGMAS * sigma_cells) as usize;
    let weight = |d: usize| {
        let x = d as f64 / len as f64;
        math::exp(-x * x / lambda)
    };
    match boundary {
        Boundary::Periodic if 2 * radius + 1 >= len => (0..len)
            .map(|o| (o as isize, weight(o.min(len - o))))
            .collect(),
        _ => {
            let r = radius.min(len - 1) as isize;
            (-r..=r).map(|o| (o, weight(o.unsigned_abs()))).collect()
        }
    }
}

impl GridKernel {
    pub fn new(spec: GridSpec, lambda: f64, boundary: Boundary) -> Self {
        Self {
            spec,
            boundary,
            row_taps: taps(spec.height(), lambda, boundary),
            col_taps: taps(spec.width(), lambda, boundary),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    /// Radius of the truncated stencil along rows and columns, in cells.
    pub fn radius(&self) -> (usize, usize) {
        let r = |t: &[(isize, f64)]| t.iter().map(|(o, _)| o.unsigned_abs()).max().unwrap_or(0);
        (r(&self.row_taps), r(&self.col_taps))
    }

    /// `out = K x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.spec.height(), self.spec.width());
        let mut tmp = vec![0.0; h * w];
        for r in 0..h {
            let row = &x[r * w..(r + 1) * w];
            let dst = &mut tmp[r * w..(r + 1) * w];
            for &(o, k) in &self.col_taps {
                shifted_axpy(dst, row, o, k, self.boundary);
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(o, k) in &self.row_taps {
            for r in 0..h {
                if let Some(rr) = shift(r, o, h, self.boundary) {
                    let src = &tmp[rr * w..(rr + 1) * w];
                    for (d, s) in out[r * w..(r + 1) * w].iter_mut().zip(src) {
                        *d += k * s;
                    }
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply(x, &mut out);
        out
    }
}

#[inline]
fn shift(i: usize, o: isize, len: usize, boundary: Boundary) -> Option<usize> {
    let j = i as isize + o;
    match boundary {
        Boundary::Periodic => Some(j.rem_euclid(len as isize) as usize),
        Boundary::Zero => (0..len as isize).contains(&j).then_some(j as usize),
    }
}

/// `dst[i] += k * src[i + o]` wherever `i + o` is a valid index.
fn shifted_axpy(dst: &mut [f64], src: &[f64], o: isize, k: f64, boundary: Boundary) {
    let len = src.len() as isize;
    let segment = |dst: &mut [f64], lo: isize, hi: isize, off: isize| {
        for i in lo..hi {
            dst[i as usize] += k * src[(i + off) as usize];
        }
    };
    match boundary {
        Boundary::Zero => segment(dst, (-o).max(0), (len - o).min(len), o),
        Boundary::Periodic => {
            let o = o.rem_euclid(len);
            segment(dst, 0, len - o, o);
            segment(dst, len - o, len, o - len);
        }
    }
}

/// Exact separable log-sum-exp against the grid cost:
/// `out_i = log sum_j exp(h_j - C_ij / eps)` with `C` the squared normalized
/// distance. Entries of `h` may be `-inf`.
pub(crate) struct LogKernel {
    spec: GridSpec,
    row_cost: Vec<f64>,
    col_cost: Vec<f64>,
}

impl LogKernel {
    pub(crate) fn new(spec: GridSpec, eps: f64) -> Self {
        let line = |len: usize| {
            (0..len)
                .map(|d| {
                    let x = d as f64 / len as f64;
                    x * x / eps
                })
                .collect()
        };
        Self {
            spec,
            row_cost: line(spec.height()),
            col_cost: line(spec.width()),
        }
    }

    pub(crate) fn apply(&self, h: &[f64], out: &mut [f64]) {
        let (nr, nc) = (self.spec.height(), self.spec.width());
        let mut tmp = vec![0.0; nr * nc];
        let mut line = vec![0.0; nr.max(nc)];
        for r in 0..nr {
            for c in 0..nc {
                tmp[r * nc + c] = line_lse(&h[r * nc..(r + 1) * nc], c, &self.col_cost);
            }
        }
        for c in 0..nc {
            for r in 0..nr {
                line[r] = tmp[r * nc + c];
            }
            for r in 0..nr {
                out[r * nc + c] = line_lse(&line[..nr], r, &self.row_cost);
            }
        }
    }
}

fn line_lse(v: &[f64], i: usize, cost: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (j, &x) in v.iter().enumerate() {
        let t = x - cost[i.abs_diff(j)];
        if t > m {
            m = t;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = v
        .iter()
        .enumerate()
        .map(|(j, &x)| math::exp(x - cost[i.abs_diff(j)] - m))
        .sum();
    m + math::ln(s)
}
