//! Protocol cost gap: its value, monotonicity in the channel means,
//! iso-cost matching, and the shared-channel probability that maximizes it.
//!
//! For a single shared channel `Ῡ = υ I` the gap is
//! `υ(1−υ) bᵀ G_G(υ) Ω_d G_F(υ) b` with `b = Ω_gp x`,
//! `G_F(υ) = (υΩ_g + Ψ)⁻¹` and `G_G(υ) = (υΩ_h + Ω_d + Ψ)⁻¹`.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{constant_cost, reduction_term, ControllerError, Protocol};
use crate::linalg::{scale_cols, scale_rows, spectral_radius};
use crate::prediction::{PredictionError, PredictionOperators};
use crate::scenario::ChannelMeans;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("upsilon must lie in (0,1), got {0}")]
    UpsilonOutOfRange(f64),
    #[error("grid is not strictly ordered at position {index}")]
    UnorderedGrid { index: usize },
    #[error("no iso-cost root bracketed in (0, {0}]")]
    NoRootBracketed(f64),
    #[error("matrix expected positive definite is not")]
    NotPositiveDefinite,
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapReport<T: Scalar> {
    pub j_tcp: T,
    pub j_udp: T,
    /// `j_udp − j_tcp`, computed from the reduction terms alone.
    pub gap: T,
}

/// One root of the stationarity determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct RootCandidate<T: Scalar> {
    /// Eigenvalue of the root-generating matrix that produced this root.
    pub lambda: T,
    pub value: Complex<T>,
    pub is_real: bool,
    pub in_unit_interval: bool,
    /// Spectral radius of `f(υ)` relative to `‖f(0.5)‖₂`; only evaluated
    /// for real roots in (0,1).
    pub eig_residual: Option<T>,
    /// `σ_min(f(υ)) / ‖f(0.5)‖₂`, a scale-free stand-in for `|det f(υ)|`.
    pub det_residual: Option<T>,
    pub eig_condition: bool,
}

impl<T: Scalar> RootCandidate<T> {
    pub fn is_valid(&self) -> bool {
        self.is_real && self.in_unit_interval && self.eig_condition
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxDiffMethod {
    AnalyticRoots,
    GridFallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxDiffReport<T: Scalar> {
    pub lambdas: Vec<T>,
    pub candidates: Vec<RootCandidate<T>>,
    pub maximizer: T,
    pub gap_at_max: T,
    pub method: MaxDiffMethod,
    /// Result of the grid search, always computed as a cross-check.
    pub grid_maximizer: T,
    pub grid_gap: T,
    /// Real root in (0,1) with the largest gap, ignoring the eigenvalue
    /// condition.
    pub best_root_candidate: Option<T>,
}

/// Relative tolerance of the stationarity tests, widened for `f32`.
pub fn root_tolerance<T: Scalar>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(1e3))
}

pub fn cost_gap<T: Scalar>(
    ops: &PredictionOperators<T>,
    x: &DVector<T>,
) -> Result<GapReport<T>, ControllerError> {
    let rt = reduction_term(ops, Protocol::TcpLike, x)?;
    let ru = reduction_term(ops, Protocol::UdpLike, x)?;
    let c = constant_cost(ops, x);
    Ok(GapReport {
        j_tcp: c - rt,
        j_udp: c - ru,
        gap: rt - ru,
    })
}

fn check_upsilon<T: Scalar>(u: T) -> Result<(), AnalysisError> {
    if u > T::zero() && u < T::one() {
        Ok(())
    } else {
        Err(AnalysisError::UpsilonOutOfRange(u.to_f64_lossy()))
    }
}

/// Cholesky factors of `G_F⁻¹ = υΩ_g + Ψ` and `G_G⁻¹ = υΩ_h + Ω_d + Ψ`.
struct SharedChannel<T: Scalar> {
    f: Cholesky<T, Dyn>,
    g: Cholesky<T, Dyn>,
}

impl<T: Scalar> SharedChannel<T> {
    fn new(ops: &PredictionOperators<T>, u: T) -> Result<Self, AnalysisError> {
        let f_inv = &ops.omega_g * u + &ops.psi;
        let g_inv = &ops.omega_h * u + DMatrix::from_diagonal(&ops.omega_d) + &ops.psi;
        Ok(SharedChannel {
            f: Cholesky::new(f_inv).ok_or(AnalysisError::NotPositiveDefinite)?,
            g: Cholesky::new(g_inv).ok_or(AnalysisError::NotPositiveDefinite)?,
        })
    }
}

/// Gap for a single channel shared by every input, `Ῡ = υ I`.
pub fn scalar_cost_gap<T: Scalar>(
    ops: &PredictionOperators<T>,
    upsilon: T,
    x: &DVector<T>,
) -> Result<T, AnalysisError> {
    check_upsilon(upsilon)?;
    let b = &ops.omega_gp * x;
    let sc = SharedChannel::new(ops, upsilon)?;
    let yf = sc.f.solve(&b);
    let yg = sc.g.solve(&b);
    Ok(upsilon * (T::one() - upsilon) * yg.component_mul(&ops.omega_d).dot(&yf))
}

/// `d/dυ` of [`scalar_cost_gap`].
pub fn gap_derivative<T: Scalar>(
    ops: &PredictionOperators<T>,
    upsilon: T,
    x: &DVector<T>,
) -> Result<T, AnalysisError> {
    check_upsilon(upsilon)?;
    let b = &ops.omega_gp * x;
    let sc = SharedChannel::new(ops, upsilon)?;
    let yf = sc.f.solve(&b);
    let yg = sc.g.solve(&b);
    let d = &ops.omega_d;
    let one = T::one();
    let lead = (one - upsilon - upsilon) * yg.component_mul(d).dot(&yf);
    // yGᵀ Ω_h G_G Ω_d yF + yGᵀ Ω_d G_F Ω_g yF
    let h_term = (&ops.omega_h * &yg).dot(&sc.g.solve(&yf.component_mul(d)));
    let g_term = yg.component_mul(d).dot(&sc.f.solve(&(&ops.omega_g * &yf)));
    Ok(lead - upsilon * (one - upsilon) * (h_term + g_term))
}

/// The matrix `f(υ)` with `gap'(υ) = bᵀ f(υ) b`.
pub fn gap_derivative_matrix<T: Scalar>(
    ops: &PredictionOperators<T>,
    upsilon: T,
) -> Result<DMatrix<T>, AnalysisError> {
    let sc = SharedChannel::new(ops, upsilon)?;
    let gf = sc.f.inverse();
    let gg = sc.g.inverse();
    let d = &ops.omega_d;
    let one = T::one();
    let mut inner = scale_cols(&(&ops.omega_h * &gg), d) + scale_rows(d, &(&gf * &ops.omega_g));
    inner *= -(upsilon * (one - upsilon));
    for i in 0..inner.nrows() {
        inner[(i, i)] += (one - upsilon - upsilon) * d[i];
    }
    Ok(gg * inner * gf)
}

/// Eigenvalues `λ` of `T H⁻¹` with `T = Ω_gΩ_d⁻¹(Ω_g+Ψ) + ΨΩ_d⁻¹Ω_h` and
/// `H = ΨΩ_d⁻¹(Ω_d+Ψ)`, ascending. `T` is symmetric and `H` diagonal
/// positive, so they are the eigenvalues of `H^{-1/2} T H^{-1/2}`.
pub fn root_generating_eigenvalues<T: Scalar>(ops: &PredictionOperators<T>) -> Vec<T> {
    let d = &ops.omega_d;
    let psi = ops.psi.diagonal();
    let d_inv = d.map(|v| T::one() / v);
    let og_dinv = scale_cols(&ops.omega_g, &d_inv);
    let t =
        &og_dinv * (&ops.omega_g + &ops.psi) + scale_rows(&psi.component_mul(&d_inv), &ops.omega_h);
    let h_isqrt = DVector::from_fn(d.len(), |i, _| {
        (T::one() / (psi[i] * (d[i] + psi[i]) / d[i])).sqrt()
    });
    let sym = scale_cols(&scale_rows(&h_isqrt, &t), &h_isqrt);
    let sym = (&sym + sym.transpose()) * T::lit(0.5);
    let mut lambdas: Vec<T> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    lambdas
}

fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s))
}

fn smallest_singular_value<T: Scalar>(m: &DMatrix<T>) -> T {
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .fold(T::max_value().unwrap_or(T::one()), |acc, &s| acc.min(s))
}

/// Both roots `1/(1 ± √(1+λ))` for every eigenvalue, in eigenvalue order.
/// Real roots in (0,1) are checked against the stationarity conditions.
pub fn determinant_root_candidates<T: Scalar>(
    ops: &PredictionOperators<T>,
) -> Result<(Vec<T>, Vec<RootCandidate<T>>), AnalysisError> {
    let lambdas = root_generating_eigenvalues(ops);
    let scale = spectral_norm(&gap_derivative_matrix(ops, T::lit(0.5))?);
    let tol = root_tolerance::<T>();
    let one = T::one();
    let mut out = Vec::with_capacity(2 * lambdas.len());
    for &lambda in &lambdas {
        let disc = one + lambda;
        let roots: [Complex<T>; 2] = if disc >= T::zero() {
            let s = disc.sqrt();
            [
                Complex::new(one / (one + s), T::zero()),
                Complex::new(one / (one - s), T::zero()),
            ]
        } else {
            let s = Complex::new(one, (-disc).sqrt());
            [s.inv(), s.conj().inv()]
        };
        for value in roots {
            let is_real = disc >= T::zero() && value.re.is_finite();
            let in_unit_interval = is_real && value.re > T::zero() && value.re < one;
            let mut cand = RootCandidate {
                lambda,
                value,
                is_real,
                in_unit_interval,
                eig_residual: None,
                det_residual: None,
                eig_condition: false,
            };
            if in_unit_interval {
                let f = gap_derivative_matrix(ops, value.re)?;
                cand.det_residual = Some(smallest_singular_value(&f) / scale);
                cand.eig_residual = spectral_radius(&f).map(|r| r / scale);
                cand.eig_condition = cand.eig_residual.is_some_and(|r| r <= tol);
            }
            out.push(cand);
        }
    }
    Ok((lambdas, out))
}

/// Logit-spaced grid over `[1e-6, 1 − 1e-6]`.
pub fn logit_grid<T: Scalar>(points: usize) -> Vec<T> {
    let edge = (1e6f64).ln();
    (0..points)
        .map(|i| {
            let s = -edge + 2.0 * edge * i as f64 / (points - 1).max(1) as f64;
            T::lit(1.0 / (1.0 + (-s).exp()))
        })
        .collect()
}

/// Grid search for the gap maximizer followed by golden-section refinement
/// of the bracketing grid cell. Returns `(maximizer, gap)`.
pub fn grid_maximize<T: Scalar>(
    ops: &PredictionOperators<T>,
    x: &DVector<T>,
    points: usize,
) -> Result<(T, T), AnalysisError> {
    let grid = logit_grid::<T>(points.max(3));
    let values = grid
        .par_iter()
        .map(|&u| scalar_cost_gap(ops, u, x))
        .collect::<Result<Vec<T>, _>>()?;
    let best = (0..values.len()).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(grid.len() - 1)];
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let tol = T::lit(1e-8);
    let gap = |u: T| scalar_cost_gap(ops, u, x);
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (gap(c)?, gap(d)?);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = gap(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = gap(d)?;
        }
    }
    let mid = (lo + hi) * T::lit(0.5);
    let (mut arg, mut val) = (mid, gap(mid)?);
    if values[best] > val {
        arg = grid[best];
        val = values[best];
    }
    Ok((arg, val))
}

/// Number of grid points used by the maximizer search.
pub const GRID_POINTS: usize = 1000;

/// Shared-channel transmission probability with the largest protocol gap.
/// Determinant roots passing the stationarity test are preferred; otherwise
/// the grid result is reported.
pub fn maximal_gap<T: Scalar>(
    ops: &PredictionOperators<T>,
    x: &DVector<T>,
) -> Result<MaxDiffReport<T>, AnalysisError> {
    let (lambdas, candidates) = determinant_root_candidates(ops)?;
    let (grid_maximizer, grid_gap) = grid_maximize(ops, x, GRID_POINTS)?;

    let best_of =
        |pred: &dyn Fn(&RootCandidate<T>) -> bool| -> Result<Option<(T, T)>, AnalysisError> {
            let mut best: Option<(T, T)> = None;
            for c in candidates.iter().filter(|c| pred(c)) {
                let g = scalar_cost_gap(ops, c.value.re, x)?;
                if best.is_none_or(|(_, bg)| g > bg) {
                    best = Some((c.value.re, g));
                }
            }
            Ok(best)
        };
    let analytic = best_of(&|c| c.is_valid())?;
    let best_root_candidate = best_of(&|c| c.in_unit_interval)?.map(|(u, _)| u);

    let (maximizer, gap_at_max, method) = match analytic {
        Some((u, g)) => (u, g, MaxDiffMethod::AnalyticRoots),
        None => (grid_maximizer, grid_gap, MaxDiffMethod::GridFallback),
    };
    Ok(MaxDiffReport {
        lambdas,
        candidates,
        maximizer,
        gap_at_max,
        method,
        grid_maximizer,
        grid_gap,
        best_root_candidate,
    })
}

/// `a ⪯ b` entrywise with at least one strict entry.
fn strictly_below<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x <= y) && a != b
}

/// Expected costs along a chain of stationary channel means. Each grid
/// point must dominate its predecessor.
pub fn monotonic_sweep<T: Scalar>(
    ops: &PredictionOperators<T>,
    grid: &[DVector<T>],
    p: Protocol,
    x: &DVector<T>,
) -> Result<Vec<T>, AnalysisError> {
    if let Some(index) = (1..grid.len()).find(|&i| !strictly_below(&grid[i - 1], &grid[i])) {
        return Err(AnalysisError::UnorderedGrid { index });
    }
    grid.par_iter()
        .map(|mu| {
            let o = ops.with_means(&ChannelMeans::Stationary(mu.clone()))?;
            Ok(crate::controller::expected_cost(&o, p, x)?.total)
        })
        .collect()
}

/// One row of a cost sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow<T: Scalar> {
    pub mu: DVector<T>,
    pub report: GapReport<T>,
}

/// Both protocol costs at every stationary mean vector of `grid`, in order.
pub fn cost_sweep<T: Scalar>(
    ops: &PredictionOperators<T>,
    grid: &[DVector<T>],
    x: &DVector<T>,
) -> Result<Vec<SweepRow<T>>, AnalysisError> {
    grid.par_iter()
        .map(|mu| {
            let o = ops.with_means(&ChannelMeans::Stationary(mu.clone()))?;
            Ok(SweepRow {
                mu: mu.clone(),
                report: cost_gap(&o, x)?,
            })
        })
        .collect()
}

/// Shared acknowledged-channel probability `t*` whose cost equals the
/// unacknowledged cost at shared probability `m1`.
pub fn iso_cost_transmission<T: Scalar>(
    ops: &PredictionOperators<T>,
    m1: T,
    x: &DVector<T>,
) -> Result<T, AnalysisError> {
    if !(m1 > T::zero() && m1 <= T::one()) {
        return Err(AnalysisError::UpsilonOutOfRange(m1.to_f64_lossy()));
    }
    if m1 == T::one() {
        return Ok(T::one());
    }
    let target =
        crate::controller::expected_cost(&ops.with_uniform_upsilon(m1)?, Protocol::UdpLike, x)?
            .total;
    let excess = |t: T| -> Result<T, AnalysisError> {
        let o = ops.with_uniform_upsilon(t)?;
        Ok(crate::controller::expected_cost(&o, Protocol::TcpLike, x)?.total - target)
    };
    let mut lo = m1 * T::lit(1e-12);
    let mut hi = m1;
    if !(excess(lo)? > T::zero() && excess(hi)? <= T::zero()) {
        return Err(AnalysisError::NoRootBracketed(m1.to_f64_lossy()));
    }
    let tol = T::lit(1e-12).max(T::default_epsilon() * T::lit(4.0));
    for _ in 0..300 {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = (lo + hi) * T::lit(0.5);
        if excess(mid)? > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}
