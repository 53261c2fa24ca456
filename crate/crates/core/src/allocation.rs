//! Cheapest channel means that still meet a control-cost budget.
//!
//! The expected cost falls as any channel mean rises, so the feasible set
//! is upward closed. For every grid prefix over the first `m − 1` channels
//! the smallest feasible value of the last channel is found by binary
//! search; that boundary point is the cheapest feasible point with that
//! prefix.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{expected_cost, ControllerError, Protocol};
use crate::prediction::{PredictionError, PredictionOperators};
use crate::scenario::ChannelMeans;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("budget infeasible: cost {best} at perfect channels exceeds alpha {alpha}")]
    BudgetInfeasible { alpha: f64, best: f64 },
    #[error("grid resolution must lie in (0, 0.5], got {0}")]
    Resolution(f64),
    #[error("beta must be nonnegative with one entry per channel")]
    Beta,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub mu: Vec<f64>,
    pub control_cost: f64,
    pub comm_cost: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocationReport {
    pub m_star: Vec<f64>,
    pub comm_cost: f64,
    pub control_cost: f64,
    pub alpha: f64,
    pub protocol: Protocol,
    pub grid_resolution: f64,
    /// Grid minimizer before refinement.
    pub grid_m_star: Vec<f64>,
    /// Cheapest point per prefix of the first `m − 1` channels.
    pub frontier: Vec<FrontierPoint>,
}

pub const DEFAULT_RESOLUTION: f64 = 0.01;
const REFINE_TOL: f64 = 1e-6;

/// `Σ β_i μ_i`
pub fn communication_cost(mu: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    mu.dot(beta)
}

/// Expected cost with stationary means `mu`.
pub fn control_cost(
    ops: &PredictionOperators<f64>,
    mu: &DVector<f64>,
    p: Protocol,
    x: &DVector<f64>,
) -> Result<f64, AllocationError> {
    let o = ops.with_means(&ChannelMeans::Stationary(mu.clone()))?;
    Ok(expected_cost(&o, p, x)?.total)
}

pub fn is_feasible(
    ops: &PredictionOperators<f64>,
    mu: &DVector<f64>,
    p: Protocol,
    alpha: f64,
    x: &DVector<f64>,
) -> Result<bool, AllocationError> {
    Ok(control_cost(ops, mu, p, x)? <= alpha)
}

/// Per-axis grid `r, 2r, …` below one, then exactly one.
pub fn axis_grid(resolution: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (1..)
        .map(|k| k as f64 * resolution)
        .take_while(|v| *v < 1.0 - 1e-12)
        .collect();
    out.push(1.0);
    out
}

struct Search<'a> {
    ops: &'a PredictionOperators<f64>,
    p: Protocol,
    alpha: f64,
    x: &'a DVector<f64>,
}

impl Search<'_> {
    fn cost(&self, mu: &DVector<f64>) -> Result<f64, AllocationError> {
        control_cost(self.ops, mu, self.p, self.x)
    }

    /// Index of the smallest feasible last-coordinate grid value for the
    /// given prefix, with its control cost.
    fn boundary(
        &self,
        prefix: &[f64],
        axis: &[f64],
    ) -> Result<Option<(usize, f64)>, AllocationError> {
        let point = |i: usize| {
            let mut v = prefix.to_vec();
            v.push(axis[i]);
            DVector::from_vec(v)
        };
        let top = self.cost(&point(axis.len() - 1))?;
        if top > self.alpha {
            return Ok(None);
        }
        let (mut lo, mut hi, mut hi_cost) = (0, axis.len() - 1, top);
        while lo < hi {
            let mid = (lo + hi) / 2;
            let c = self.cost(&point(mid))?;
            if c <= self.alpha {
                hi = mid;
                hi_cost = c;
            } else {
                lo = mid + 1;
            }
        }
        Ok(Some((hi, hi_cost)))
    }
}

/// Grid search for the cheapest feasible means followed by per-coordinate
/// bisection on the active constraint. Ties on the grid go to the
/// lexicographically smallest point.
pub fn optimize_allocation(
    ops: &PredictionOperators<f64>,
    p: Protocol,
    alpha: f64,
    beta: &DVector<f64>,
    x: &DVector<f64>,
    resolution: f64,
) -> Result<AllocationReport, AllocationError> {
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(AllocationError::Resolution(resolution));
    }
    let m = ops.input_dim;
    if beta.len() != m || beta.iter().any(|b| !(*b >= 0.0)) {
        return Err(AllocationError::Beta);
    }
    let search = Search { ops, p, alpha, x };
    let best = search.cost(&DVector::from_element(m, 1.0))?;
    if best > alpha {
        return Err(AllocationError::BudgetInfeasible { alpha, best });
    }

    let axis = axis_grid(resolution);
    let g = axis.len();
    let prefixes = g.pow((m - 1) as u32);
    let mut frontier = Vec::with_capacity(prefixes);
    let mut winner: Option<(Vec<f64>, f64, f64)> = None;
    for idx in 0..prefixes {
        // lexicographic order: first coordinate varies slowest
        let mut rem = idx;
        let mut prefix = vec![0.0; m - 1];
        for slot in prefix.iter_mut().rev() {
            *slot = axis[rem % g];
            rem /= g;
        }
        match search.boundary(&prefix, &axis)? {
            Some((i, cc)) => {
                let mut mu = prefix.clone();
                mu.push(axis[i]);
                let comm = communication_cost(&DVector::from_column_slice(&mu), beta);
                let better = winner
                    .as_ref()
                    .is_none_or(|(_, wc, _)| comm < wc - 1e-12 * wc.abs().max(1.0));
                if better {
                    winner = Some((mu.clone(), comm, cc));
                }
                frontier.push(FrontierPoint {
                    mu,
                    control_cost: cc,
                    comm_cost: comm,
                    feasible: true,
                });
            }
            None => {
                let mut mu = prefix.clone();
                mu.push(1.0);
                let v = DVector::from_column_slice(&mu);
                frontier.push(FrontierPoint {
                    control_cost: search.cost(&v)?,
                    comm_cost: communication_cost(&v, beta),
                    mu,
                    feasible: false,
                });
            }
        }
    }
    let (grid_m_star, _, _) = winner.expect("all-ones point is feasible");

    let mut mu = DVector::from_column_slice(&grid_m_star);
    for i in 0..m {
        if beta[i] == 0.0 {
            continue;
        }
        let mut hi = mu[i];
        let mut lo = (hi - resolution).max(0.0);
        let mut trial = mu.clone();
        if lo > 0.0 {
            trial[i] = lo;
            if search.cost(&trial)? <= alpha {
                hi = lo;
                lo = 0.0;
            }
        }
        while hi - lo > REFINE_TOL {
            let mid = 0.5 * (lo + hi);
            trial[i] = mid;
            if search.cost(&trial)? <= alpha {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        mu[i] = hi;
    }
    let control_cost = search.cost(&mu)?;
    Ok(AllocationReport {
        comm_cost: communication_cost(&mu, beta),
        m_star: mu.iter().copied().collect(),
        control_cost,
        alpha,
        protocol: p,
        grid_resolution: resolution,
        grid_m_star,
        frontier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::iso_cost_transmission;
    use crate::controller::tests::{random_ops, toy_ops};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn communication_cost_examples() {
        let mu = DVector::from_vec(vec![0.9, 0.5]);
        assert!((communication_cost(&mu, &DVector::from_vec(vec![1.0, 1.0])) - 1.4).abs() < 1e-15);
        assert_eq!(communication_cost(&mu, &DVector::zeros(2)), 0.0);
        let c = communication_cost(&mu, &DVector::from_vec(vec![0.05, 1.0]));
        assert!((c - 0.545).abs() < 1e-15);
    }

    #[test]
    fn axis_grid_ends_at_one() {
        let a = axis_grid(0.01);
        assert_eq!(a.len(), 100);
        assert_eq!(*a.last().unwrap(), 1.0);
        assert!((a[0] - 0.01).abs() < 1e-15);
        assert_eq!(axis_grid(0.3), vec![0.3, 0.6, 0.8999999999999999, 1.0]);
    }

    #[test]
    fn feasibility_extremes_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops = random_ops(&mut rng, 2, 2, 3, (0.5, 0.6));
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let mu = DVector::from_vec(vec![0.3, 0.6]);
        assert!(is_feasible(&ops, &mu, Protocol::UdpLike, 1e18, &x).unwrap());
        let ones = DVector::from_element(2, 1.0);
        let floor = control_cost(&ops, &ones, Protocol::UdpLike, &x).unwrap() - 1e-9;
        for v in axis_grid(0.1) {
            let mu = DVector::from_vec(vec![v, v]);
            assert!(!is_feasible(&ops, &mu, Protocol::UdpLike, floor, &x).unwrap());
        }
        let alpha = control_cost(&ops, &mu, Protocol::UdpLike, &x).unwrap();
        for up in [
            DVector::from_vec(vec![0.4, 0.6]),
            DVector::from_vec(vec![0.3, 0.9]),
        ] {
            assert!(is_feasible(&ops, &up, Protocol::UdpLike, alpha, &x).unwrap());
        }
    }

    #[test]
    fn infeasible_budget_and_bad_resolution() {
        let ops = toy_ops(0.5);
        let x = DVector::from_element(1, 1.0);
        let beta = DVector::from_element(1, 1.0);
        assert!(matches!(
            optimize_allocation(&ops, Protocol::TcpLike, 1.0, &beta, &x, 0.01),
            Err(AllocationError::BudgetInfeasible { .. })
        ));
        assert!(matches!(
            optimize_allocation(&ops, Protocol::TcpLike, 10.0, &beta, &x, 0.6),
            Err(AllocationError::Resolution(_))
        ));
    }

    #[test]
    fn scalar_channel_matches_iso_cost() {
        let ops = toy_ops(0.5);
        let x = DVector::from_element(1, 1.0);
        let beta = DVector::from_element(1, 1.0);
        let r = optimize_allocation(&ops, Protocol::TcpLike, 1.75, &beta, &x, 0.01).unwrap();
        let t = iso_cost_transmission(&ops, 0.5, &x).unwrap();
        assert!((r.m_star[0] - t).abs() <= 1e-6);
        assert!(r.control_cost <= 1.75);
        assert!(
            r.comm_cost <= communication_cost(&DVector::from_vec(r.grid_m_star.clone()), &beta)
        );
    }

    /// Exhaustive grid evaluation, no monotone shortcuts.
    fn brute_force(
        ops: &PredictionOperators<f64>,
        p: Protocol,
        alpha: f64,
        beta: &DVector<f64>,
        x: &DVector<f64>,
        r: f64,
    ) -> Vec<f64> {
        let axis = axis_grid(r);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for &a in &axis {
            for &b in &axis {
                let mu = DVector::from_vec(vec![a, b]);
                if control_cost(ops, &mu, p, x).unwrap() <= alpha {
                    let c = communication_cost(&mu, beta);
                    if best
                        .as_ref()
                        .is_none_or(|(_, bc)| c < bc - 1e-12 * bc.max(1.0))
                    {
                        best = Some((vec![a, b], c));
                    }
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn grid_minimizer_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..4 {
            let ops = random_ops(&mut rng, 2, 2, 3, (0.5, 0.6));
            let x = DVector::from_vec(vec![1.0, -0.5]);
            let beta = DVector::from_vec(vec![1.0, 0.3 + trial as f64 * 0.4]);
            let mid = control_cost(
                &ops,
                &DVector::from_vec(vec![0.6, 0.6]),
                Protocol::UdpLike,
                &x,
            )
            .unwrap();
            let r = optimize_allocation(&ops, Protocol::UdpLike, mid, &beta, &x, 0.05).unwrap();
            let oracle = brute_force(&ops, Protocol::UdpLike, mid, &beta, &x, 0.05);
            assert_eq!(r.grid_m_star, oracle);
            assert!(r.control_cost <= mid * (1.0 + 1e-9));
            let grid_cost = communication_cost(&DVector::from_vec(r.grid_m_star.clone()), &beta);
            assert!(r.comm_cost <= grid_cost);
        }
    }
}
