//! Optimal batch laws for the acknowledged and unacknowledged protocols and
//! their exact expected costs.
//!
//! With perfect state feedback the acknowledgement never changes what the
//! controller applies at run time; the two protocols differ only through the
//! Gram matrix `G` that enters the gain.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{quad_form, scale_cols, scale_rows, sorted_eigenvalues};
use crate::prediction::PredictionOperators;
use crate::scenario::PlantModel;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Acknowledged delivery: the controller learns every packet outcome.
    #[serde(rename = "tcp")]
    TcpLike,
    /// No acknowledgements: only the delivery probabilities are known.
    #[serde(rename = "udp")]
    UdpLike,
}

impl Protocol {
    pub const ALL: [Protocol; 2] = [Protocol::TcpLike, Protocol::UdpLike];
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::TcpLike => "tcp",
            Protocol::UdpLike => "udp",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" | "tcp-like" | "tcp_like" => Ok(Protocol::TcpLike),
            "udp" | "udp-like" | "udp_like" => Ok(Protocol::UdpLike),
            other => Err(format!("unknown protocol `{other}` (expected tcp or udp)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("{0} Gram system is not positive definite")]
    SingularGram(Protocol),
    #[error("closed-loop eigenvalue iteration did not converge")]
    EigenNonConvergence,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Stacked optimal law `U* = −K x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLaw<T: Scalar> {
    pub protocol: Protocol,
    /// The protocol's (generally asymmetric) Gram matrix.
    pub g: DMatrix<T>,
    pub k: DMatrix<T>,
    /// First `m` rows of `K`, the gain applied in receding-horizon use.
    pub k_first: DMatrix<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostReport<T: Scalar> {
    pub total: T,
    /// `xᵀ(Q + Ω_p)x + tr(Σ_𝒲 Ω_l)`
    pub constant_term: T,
    pub reduction_term: T,
}

/// `G = Ω_g Ῡ + Ψ`, plus `Ω_d (I − Ῡ)` without acknowledgements.
pub fn gram_matrix<T: Scalar>(ops: &PredictionOperators<T>, p: Protocol) -> DMatrix<T> {
    let mut g = scale_cols(&ops.omega_g, &ops.upsilon_bar) + &ops.psi;
    if p == Protocol::UdpLike {
        for i in 0..g.nrows() {
            g[(i, i)] += ops.omega_d[i] * (T::one() - ops.upsilon_bar[i]);
        }
    }
    g
}

/// `Ῡ G`, symmetric positive definite whenever Ῡ ≻ 0. Half the Hessian of
/// the expected cost in `U`.
pub fn symmetric_gram<T: Scalar>(ops: &PredictionOperators<T>, p: Protocol) -> DMatrix<T> {
    let u = &ops.upsilon_bar;
    let mut s = scale_cols(&scale_rows(u, &ops.omega_g), u);
    for i in 0..s.nrows() {
        s[(i, i)] += u[i] * ops.psi[(i, i)];
        if p == Protocol::UdpLike {
            s[(i, i)] += u[i] * ops.omega_d[i] * (T::one() - u[i]);
        }
    }
    (&s + s.transpose()) * T::lit(0.5)
}

fn factor<T: Scalar>(
    ops: &PredictionOperators<T>,
    p: Protocol,
) -> Result<Cholesky<T, Dyn>, ControllerError> {
    Cholesky::new(symmetric_gram(ops, p)).ok_or(ControllerError::SingularGram(p))
}

pub fn synthesize<T: Scalar>(
    ops: &PredictionOperators<T>,
    p: Protocol,
) -> Result<ControlLaw<T>, ControllerError> {
    let chol = factor(ops, p)?;
    let k = chol.solve(&scale_rows(&ops.upsilon_bar, &ops.omega_gp));
    let k_first = k.rows(0, ops.input_dim).into_owned();
    Ok(ControlLaw {
        protocol: p,
        g: gram_matrix(ops, p),
        k,
        k_first,
    })
}

/// `xᵀ(Q + Ω_p)x + tr(Σ_𝒲 Ω_l)`, shared by both protocols.
pub fn constant_cost<T: Scalar>(ops: &PredictionOperators<T>, x: &DVector<T>) -> T {
    quad_form(&ops.q, x) + quad_form(&ops.omega_p, x) + ops.noise_cost
}

fn check_state<T: Scalar>(
    ops: &PredictionOperators<T>,
    x: &DVector<T>,
) -> Result<(), ControllerError> {
    if x.len() != ops.state_dim {
        return Err(ControllerError::DimensionMismatch(format!(
            "state has length {}, expected {}",
            x.len(),
            ops.state_dim
        )));
    }
    Ok(())
}

/// The cost removed by the optimal input, `cᵀ(ῩG)⁻¹c` with `c = ῩΩ_gp x`.
pub fn reduction_term<T: Scalar>(
    ops: &PredictionOperators<T>,
    p: Protocol,
    x: &DVector<T>,
) -> Result<T, ControllerError> {
    check_state(ops, x)?;
    let chol = factor(ops, p)?;
    let c = (&ops.omega_gp * x).component_mul(&ops.upsilon_bar);
    let y = chol.solve(&c);
    Ok(c.dot(&y).max(T::zero()))
}

pub fn expected_cost<T: Scalar>(
    ops: &PredictionOperators<T>,
    p: Protocol,
    x: &DVector<T>,
) -> Result<CostReport<T>, ControllerError> {
    let reduction_term = reduction_term(ops, p, x)?;
    let constant_term = constant_cost(ops, x);
    Ok(CostReport {
        total: constant_term - reduction_term,
        constant_term,
        reduction_term,
    })
}

/// Expected weighted norm of the prediction error for input sequence `u`.
/// Without acknowledgements the unobserved losses add a `u`-dependent term.
pub fn error_quadratic_expectation<T: Scalar>(
    ops: &PredictionOperators<T>,
    p: Protocol,
    u: &DVector<T>,
) -> T {
    match p {
        Protocol::TcpLike => ops.noise_cost,
        Protocol::UdpLike => ops.noise_cost + loss_variance_term(&ops.omega_d, &ops.upsilon_bar, u),
    }
}

fn loss_variance_term<T: Scalar>(d: &DVector<T>, upsilon: &DVector<T>, u: &DVector<T>) -> T {
    (0..u.len()).fold(T::zero(), |acc, i| {
        acc + upsilon[i] * (T::one() - upsilon[i]) * d[i] * u[i] * u[i]
    })
}

/// `E[Uᵀ Υ Ω_g Υ U]` for independent Bernoulli diagonal entries of `Υ`
/// with means `upsilon`.
pub fn bernoulli_quadratic_expectation<T: Scalar>(
    omega_g: &DMatrix<T>,
    upsilon: &DVector<T>,
    u: &DVector<T>,
) -> T {
    let c = upsilon.component_mul(u);
    quad_form(omega_g, &c) + loss_variance_term(&omega_g.diagonal(), upsilon, u)
}

pub fn optimal_sequence<T: Scalar>(law: &ControlLaw<T>, x: &DVector<T>) -> DVector<T> {
    -(&law.k * x)
}

/// Eigenvalues of `A − B K_first`, descending by real then imaginary part.
pub fn closed_loop_eigenvalues<T: Scalar>(
    law: &ControlLaw<T>,
    plant: &PlantModel<T>,
) -> Result<Vec<Complex<T>>, ControllerError> {
    closed_loop_eigenvalues_of(law, &plant.a, &plant.b)
}

pub fn closed_loop_eigenvalues_of<T: Scalar>(
    law: &ControlLaw<T>,
    a: &DMatrix<T>,
    b: &DMatrix<T>,
) -> Result<Vec<Complex<T>>, ControllerError> {
    if b.ncols() != law.k_first.nrows() || a.ncols() != law.k_first.ncols() {
        return Err(ControllerError::DimensionMismatch(format!(
            "gain is {}×{}, B is {}×{}",
            law.k_first.nrows(),
            law.k_first.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let closed = a - b * &law.k_first;
    sorted_eigenvalues(&closed).ok_or(ControllerError::EigenNonConvergence)
}
