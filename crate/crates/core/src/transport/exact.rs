use alloc::vec;
use alloc::vec::Vec;

use super::sinkhorn::finish_dense;
use super::{check_pair, cost_matrix, TransportPlan};
use crate::fields::SpatialMeasure;
use crate::{Error, Result};

/// Largest grid solved exactly.
pub const EXACT_CAP: usize = 64;

const MASS_EPS: f64 = 1e-15;

/// Exact squared 2-Wasserstein distance and an optimal plan, by successive
/// shortest paths on the bipartite transportation network.
pub fn exact_w2_small(mu: &SpatialMeasure, nu: &SpatialMeasure) -> Result<TransportPlan> {
    let spec = check_pair(mu, nu)?;
    let n = spec.cells();
    if n > EXACT_CAP {
        return Err(Error::Size {
            cells: n,
            cap: EXACT_CAP,
        });
    }
    let cost = cost_matrix(spec);
    let mut supply = mu.density().to_vec();
    let mut demand = nu.density().to_vec();
    let mut flow = vec![0.0; n * n];
    // Nodes 0..n are sources, n..2n sinks.
    let mut potential = vec![0.0; 2 * n];
    let mut augmentations = 0;

    loop {
        let remaining: f64 = demand.iter().sum();
        if remaining <= n as f64 * MASS_EPS || supply.iter().all(|&s| s <= MASS_EPS) {
            break;
        }
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut prev = vec![usize::MAX; 2 * n];
        let mut done = vec![false; 2 * n];
        for i in 0..n {
            if supply[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        let mut sink = None;
        loop {
            let mut best = None;
            for v in 0..2 * n {
                if !done[v] && dist[v].is_finite() && best.is_none_or(|b: usize| dist[v] < dist[b]) {
                    best = Some(v);
                }
            }
            let Some(u) = best else { break };
            done[u] = true;
            if u >= n && demand[u - n] > MASS_EPS {
                sink = Some(u);
                break;
            }
            if u < n {
                for j in 0..n {
                    let v = n + j;
                    let rc = (cost[u * n + j] + potential[u] - potential[v]).max(0.0);
                    if !done[v] && dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * n + j] > MASS_EPS {
                        let rc = (-cost[i * n + j] + potential[u] - potential[i]).max(0.0);
                        if !done[i] && dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let Some(t) = sink else {
            return Err(Error::Domain("transportation network became disconnected".into()));
        };
        let dt = dist[t];
        for v in 0..2 * n {
            potential[v] += dist[v].min(dt);
        }

        let mut path: Vec<usize> = vec![t];
        while prev[*path.last().unwrap()] != usize::MAX {
            path.push(prev[*path.last().unwrap()]);
        }
        let s = *path.last().unwrap();
        let mut amount = supply[s].min(demand[t - n]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= n {
                amount = amount.min(flow[to * n + (from - n)]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < n {
                flow[from * n + (to - n)] += amount;
            } else {
                let cell = &mut flow[to * n + (from - n)];
                *cell = (*cell - amount).max(0.0);
            }
        }
        supply[s] -= amount;
        demand[t - n] -= amount;
        augmentations += 1;
    }
    Ok(finish_dense(mu, nu, flow, &cost, 0.0, augmentations))
}
