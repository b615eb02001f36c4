//! Entropic optimal transport on regular grids: Sinkhorn plans, an exact
//! oracle for small instances, convolutional barycenters and mass flux.

mod barycenter;
mod exact;
mod kernel;
mod sinkhorn;

use alloc::vec;
use alloc::vec::Vec;

pub use barycenter::{conv_barycenter, entropic_blur, Barycenter, BarycenterConfig};
pub use exact::{exact_w2_small, EXACT_CAP};
pub use kernel::{Boundary, GridKernel, TRUNCATION_SIGMAS};
pub use sinkhorn::{sinkhorn_plan, SinkhornConfig, SinkhornMode};

use crate::fields::{Field2D, GridSpec, SpatialMeasure};
use crate::{math, Error, Result};

/// Largest grid (in cells) for which couplings are stored densely.
pub const DENSE_PLAN_CAP: usize = 4096;

/// Dense `|Ω| x |Ω|` squared-distance cost in normalized coordinates.
pub fn cost_matrix(spec: GridSpec) -> Vec<f64> {
    let n = spec.cells();
    let mut c = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            c[a * n + b] = spec.sq_dist(a, b);
        }
    }
    c
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(Vec<f64>),
    /// `pi_ij = exp((f_i + g_j - C_ij) / lambda)`.
    Potentials { f: Vec<f64>, g: Vec<f64> },
}

/// A coupling between two measures on the same grid.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    source: SpatialMeasure,
    target: SpatialMeasure,
    repr: Repr,
    lambda: f64,
    cost: f64,
    entropic_cost: f64,
    iterations: usize,
    violation: f64,
}

impl TransportPlan {
    pub fn spec(&self) -> GridSpec {
        self.source.spec()
    }

    pub fn source(&self) -> &SpatialMeasure {
        &self.source
    }

    pub fn target(&self) -> &SpatialMeasure {
        &self.target
    }

    /// Regularization used; 0 for the exact oracle.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Transport cost `<C, pi>`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// `<C, pi> - lambda H(pi)` with `H(pi) = -sum pi ln pi`.
    pub fn entropic_cost(&self) -> f64 {
        self.entropic_cost
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Largest L1 marginal violation (rows or columns).
    pub fn violation(&self) -> f64 {
        self.violation
    }

    /// Row-major coupling, when stored.
    pub fn coupling(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Dense(p) => Some(p),
            Repr::Potentials { .. } => None,
        }
    }

    /// `(row sums, column sums, diagonal)`.
    pub fn marginals_and_diagonal(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.spec().cells();
        let (mut rows, mut cols, mut diag) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        match &self.repr {
            Repr::Dense(p) => {
                for i in 0..n {
                    for j in 0..n {
                        let v = p[i * n + j];
                        rows[i] += v;
                        cols[j] += v;
                    }
                    diag[i] = p[i * n + i];
                }
            }
            Repr::Potentials { f, g } => {
                let lk = kernel::LogKernel::new(self.spec(), self.lambda);
                let scaled = |v: &[f64]| v.iter().map(|x| x / self.lambda).collect::<Vec<_>>();
                let mut lse = vec![0.0; n];
                lk.apply(&scaled(g), &mut lse);
                for i in 0..n {
                    rows[i] = sinkhorn::exp_or_zero(f[i] / self.lambda + lse[i]);
                }
                lk.apply(&scaled(f), &mut lse);
                for j in 0..n {
                    cols[j] = sinkhorn::exp_or_zero(g[j] / self.lambda + lse[j]);
                    diag[j] = sinkhorn::exp_or_zero((f[j] + g[j]) / self.lambda);
                }
            }
        }
        (rows, cols, diag)
    }
}

/// Off-diagonal mass movement of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFlux {
    spec: GridSpec,
    /// `sum_{v != u} pi(u, v)`: mass leaving each cell.
    pub outflow: Vec<f64>,
    /// `sum_{u != v} pi(u, v)`: mass arriving at each cell.
    pub inflow: Vec<f64>,
    /// Off-diagonal mass, `1 - trace(pi)` for a unit-mass plan.
    pub displaced_fraction: f64,
}

impl MassFlux {
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn outflow_field(&self) -> Result<Field2D> {
        Field2D::from_f64(self.spec, &self.outflow)
    }

    pub fn inflow_field(&self) -> Result<Field2D> {
        Field2D::from_f64(self.spec, &self.inflow)
    }
}

/// Masks the diagonal of the plan and splits the rest into outflow and
/// inflow maps.
pub fn mass_flux(plan: &TransportPlan) -> MassFlux {
    let (rows, cols, diag) = plan.marginals_and_diagonal();
    let outflow: Vec<f64> = rows.iter().zip(&diag).map(|(r, d)| (r - d).max(0.0)).collect();
    let inflow: Vec<f64> = cols.iter().zip(&diag).map(|(c, d)| (c - d).max(0.0)).collect();
    let displaced_fraction = outflow.iter().sum();
    MassFlux {
        spec: plan.spec(),
        outflow,
        inflow,
        displaced_fraction,
    }
}

fn check_pair(mu: &SpatialMeasure, nu: &SpatialMeasure) -> Result<GridSpec> {
    if mu.spec() != nu.spec() {
        return Err(Error::Shape("measures live on different grids".into()));
    }
    Ok(mu.spec())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(alloc::format!("lambda must be > 0, got {lambda}")));
    }
    Ok(())
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| math::abs(x - y)).sum()
}
