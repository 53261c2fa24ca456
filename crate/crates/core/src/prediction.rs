//! Horizon-stacked prediction operators and the weight products built from
//! them.
//!
//! Over a horizon of `N` steps the stacked future state obeys
//! `𝒳 = Φ x + Γ Υ 𝒰 + Λ 𝒲`, where block row `i` holds `x_{k+i+1}`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{block_diagonal, is_diagonal};
use crate::scenario::{ChannelMeans, ChannelModel, PlantModel, WeightSpec};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("channel schedule length ≠ N (got {found}, N = {horizon})")]
    ScheduleLength { found: usize, horizon: usize },
    #[error("input weight at step {step} is not diagonal")]
    NonDiagonalInputWeight { step: usize },
    #[error("channel mean must lie in (0,1] (entry {index} = {value})")]
    MeanOutOfRange { index: usize, value: f64 },
    #[error("horizon must be ≥ 1")]
    EmptyHorizon,
}

#[derive(Clone, Debug)]
pub struct PredictionOperators<T: Scalar> {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// `Nn × n`, block `i` is `A^{i+1}`.
    pub phi: DMatrix<T>,
    /// `Nn × Nm`, block `(i, j)` is `A^{i-j} B` on and below the diagonal.
    pub gamma: DMatrix<T>,
    /// `Nn × Nn`, block `(i, j)` is `A^{i-j}` on and below the diagonal.
    pub lambda: DMatrix<T>,
    /// Diagonal of the stacked channel-mean matrix Ῡ.
    pub upsilon_bar: DVector<T>,
    pub sigma_w_stacked: DMatrix<T>,
    pub q: DMatrix<T>,
    pub omega: DMatrix<T>,
    pub psi: DMatrix<T>,
    /// `ΦᵀΩΦ`
    pub omega_p: DMatrix<T>,
    /// `ΓᵀΩΓ`
    pub omega_g: DMatrix<T>,
    /// `ΓᵀΩΦ`
    pub omega_gp: DMatrix<T>,
    /// `ΛᵀΩΛ`
    pub omega_l: DMatrix<T>,
    /// Diagonal of `Ω_g`.
    pub omega_d: DVector<T>,
    /// `Ω_g` with its diagonal zeroed.
    pub omega_h: DMatrix<T>,
    /// `tr(Ω_l Σ_𝒲)`, the part of the cost no input can remove.
    pub noise_cost: T,
}

/// Diagonal of Ῡ: `I_N ⊗ M` for stationary means, `M_0 … M_{N-1}` for a
/// schedule.
pub fn build_upsilon_bar<T: Scalar>(
    channel: &ChannelModel<T>,
    horizon: usize,
) -> Result<DVector<T>, PredictionError> {
    stacked_means(&channel.means, horizon)
}

fn stacked_means<T: Scalar>(
    means: &ChannelMeans<T>,
    horizon: usize,
) -> Result<DVector<T>, PredictionError> {
    if let ChannelMeans::Schedule(s) = means {
        if s.len() != horizon {
            return Err(PredictionError::ScheduleLength {
                found: s.len(),
                horizon,
            });
        }
    }
    let m = means.channels();
    let mut out = DVector::zeros(horizon * m);
    for k in 0..horizon {
        let mu = means.at_step(k);
        if mu.len() != m {
            return Err(PredictionError::DimensionMismatch(format!(
                "channel means at step {k} have length {}, expected {m}",
                mu.len()
            )));
        }
        out.rows_mut(k * m, m).copy_from(mu);
    }
    Ok(out)
}

pub fn build_prediction_operators<T: Scalar>(
    plant: &PlantModel<T>,
    weights: &WeightSpec<T>,
    channel: &ChannelModel<T>,
) -> Result<PredictionOperators<T>, PredictionError> {
    let upsilon = build_upsilon_bar(channel, weights.horizon)?;
    PredictionOperators::from_parts(
        &plant.a,
        &plant.b,
        &weights.q,
        &weights.omega_steps,
        &weights.psi_steps,
        &plant.sigma_w,
        upsilon,
    )
}

impl<T: Scalar> PredictionOperators<T> {
    /// Builds every operator from raw model matrices. The horizon is the
    /// number of per-step weights.
    pub fn from_parts(
        a: &DMatrix<T>,
        b: &DMatrix<T>,
        q: &DMatrix<T>,
        omega_steps: &[DMatrix<T>],
        psi_steps: &[DMatrix<T>],
        sigma_w: &DMatrix<T>,
        upsilon_bar: DVector<T>,
    ) -> Result<Self, PredictionError> {
        let n = a.nrows();
        let m = b.ncols();
        let horizon = omega_steps.len();
        if horizon == 0 {
            return Err(PredictionError::EmptyHorizon);
        }
        let mismatch = |what: String| Err(PredictionError::DimensionMismatch(what));
        if a.ncols() != n || b.nrows() != n {
            return mismatch(format!(
                "A is {}×{}, B is {}×{}",
                n,
                a.ncols(),
                b.nrows(),
                m
            ));
        }
        if q.shape() != (n, n) || sigma_w.shape() != (n, n) {
            return mismatch(format!("Q and Σ_W must be {n}×{n}"));
        }
        if psi_steps.len() != horizon {
            return mismatch(format!(
                "{} input weights for horizon {horizon}",
                psi_steps.len()
            ));
        }
        if omega_steps.iter().any(|o| o.shape() != (n, n)) {
            return mismatch(format!("state weights must be {n}×{n}"));
        }
        if psi_steps.iter().any(|p| p.shape() != (m, m)) {
            return mismatch(format!("input weights must be {m}×{m}"));
        }
        if let Some(step) = psi_steps.iter().position(|p| !is_diagonal(p)) {
            return Err(PredictionError::NonDiagonalInputWeight { step });
        }
        if upsilon_bar.len() != horizon * m {
            return mismatch(format!(
                "Ῡ has {} entries, expected {}",
                upsilon_bar.len(),
                horizon * m
            ));
        }
        check_means(&upsilon_bar)?;

        let nn = horizon * n;
        let nm = horizon * m;

        // powers[d] = A^d, built by repeated left multiplication
        let mut powers = Vec::with_capacity(horizon + 1);
        powers.push(DMatrix::<T>::identity(n, n));
        for d in 1..=horizon {
            let next = a * &powers[d - 1];
            powers.push(next);
        }
        let ab: Vec<DMatrix<T>> = powers.iter().take(horizon).map(|p| p * b).collect();

        let mut phi = DMatrix::zeros(nn, n);
        let mut gamma = DMatrix::zeros(nn, nm);
        let mut lambda = DMatrix::zeros(nn, nn);
        for i in 0..horizon {
            phi.view_mut((i * n, 0), (n, n)).copy_from(&powers[i + 1]);
            for j in 0..=i {
                gamma.view_mut((i * n, j * m), (n, m)).copy_from(&ab[i - j]);
                lambda
                    .view_mut((i * n, j * n), (n, n))
                    .copy_from(&powers[i - j]);
            }
        }

        let omega = block_diagonal(omega_steps);
        let psi = block_diagonal(psi_steps);
        let sigma_w_stacked = block_diagonal(&vec![sigma_w.clone(); horizon]);

        let omega_phi = &omega * &phi;
        let omega_gamma = &omega * &gamma;
        let omega_p = phi.transpose() * &omega_phi;
        let omega_g = symmetrize(gamma.transpose() * &omega_gamma);
        let omega_gp = gamma.transpose() * &omega_phi;
        let omega_l = symmetrize(lambda.transpose() * (&omega * &lambda));
        let omega_d = omega_g.diagonal();
        let mut omega_h = omega_g.clone();
        omega_h.fill_diagonal(T::zero());
        let noise_cost = omega_l.component_mul(&sigma_w_stacked).sum();

        Ok(PredictionOperators {
            horizon,
            state_dim: n,
            input_dim: m,
            phi,
            gamma,
            lambda,
            upsilon_bar,
            sigma_w_stacked,
            q: q.clone(),
            omega,
            psi,
            omega_p,
            omega_g,
            omega_gp,
            omega_l,
            omega_d,
            omega_h,
            noise_cost,
        })
    }

    /// Same operators with a different Ῡ diagonal.
    pub fn with_upsilon_bar(&self, upsilon_bar: DVector<T>) -> Result<Self, PredictionError> {
        if upsilon_bar.len() != self.horizon * self.input_dim {
            return Err(PredictionError::DimensionMismatch(format!(
                "Ῡ has {} entries, expected {}",
                upsilon_bar.len(),
                self.horizon * self.input_dim
            )));
        }
        check_means(&upsilon_bar)?;
        let mut out = self.clone();
        out.upsilon_bar = upsilon_bar;
        Ok(out)
    }

    pub fn with_means(&self, means: &ChannelMeans<T>) -> Result<Self, PredictionError> {
        if means.channels() != self.input_dim {
            return Err(PredictionError::DimensionMismatch(format!(
                "{} channel means for {} inputs",
                means.channels(),
                self.input_dim
            )));
        }
        self.with_upsilon_bar(stacked_means(means, self.horizon)?)
    }

    /// Ῡ = t·I.
    pub fn with_uniform_upsilon(&self, t: T) -> Result<Self, PredictionError> {
        self.with_upsilon_bar(DVector::from_element(self.horizon * self.input_dim, t))
    }

    pub fn upsilon_bar_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.upsilon_bar)
    }

    pub fn omega_d_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.omega_d)
    }

    /// Stacked future states for a realized transmission pattern `v`
    /// (diagonal of Υ), stacked inputs and stacked noise.
    pub fn predict(
        &self,
        x: &DVector<T>,
        v: &DVector<T>,
        inputs: &DVector<T>,
        noise: &DVector<T>,
    ) -> DVector<T> {
        &self.phi * x + &self.gamma * v.component_mul(inputs) + &self.lambda * noise
    }
}

fn check_means<T: Scalar>(upsilon: &DVector<T>) -> Result<(), PredictionError> {
    match upsilon
        .iter()
        .position(|&u| !(u > T::zero() && u <= T::one()))
    {
        Some(index) => Err(PredictionError::MeanOutOfRange {
            index,
            value: upsilon[index].to_f64_lossy(),
        }),
        None => Ok(()),
    }
}

fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}
