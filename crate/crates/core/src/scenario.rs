//! Experiment descriptions: typed model, JSON file format and validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, is_diagonal, is_positive_definite, is_symmetric};
use crate::Scalar;

/// Linear plant `x⁺ = A x + B V u + w` with Gaussian noise and initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantModel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub sigma_w: DMatrix<T>,
    pub x0_mean: DVector<T>,
    pub x0_cov: DMatrix<T>,
}

impl<T: Scalar> PlantModel<T> {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Per-channel delivery probabilities, fixed or varying over the horizon.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelMeans<T: Scalar> {
    Stationary(DVector<T>),
    Schedule(Vec<DVector<T>>),
}

impl<T: Scalar> ChannelMeans<T> {
    /// Same probability `t` on each of `m` channels.
    pub fn uniform(m: usize, t: T) -> Self {
        ChannelMeans::Stationary(DVector::from_element(m, t))
    }

    pub fn channels(&self) -> usize {
        match self {
            ChannelMeans::Stationary(mu) => mu.len(),
            ChannelMeans::Schedule(s) => s.first().map_or(0, |mu| mu.len()),
        }
    }

    /// Means in force at step `k`. Past the end of a schedule the last
    /// entry is held.
    pub fn at_step(&self, k: usize) -> &DVector<T> {
        match self {
            ChannelMeans::Stationary(mu) => mu,
            ChannelMeans::Schedule(s) => &s[k.min(s.len() - 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelModel<T: Scalar> {
    pub means: ChannelMeans<T>,
    /// Per-channel communication price.
    pub beta: Option<DVector<T>>,
}

/// Cost weights over a horizon of `horizon` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec<T: Scalar> {
    pub q: DMatrix<T>,
    pub omega_steps: Vec<DMatrix<T>>,
    pub psi_steps: Vec<DMatrix<T>>,
    pub horizon: usize,
}

impl<T: Scalar> WeightSpec<T> {
    /// Replicates one state and one input weight over the horizon.
    pub fn constant(q: DMatrix<T>, omega: DMatrix<T>, psi: DMatrix<T>, horizon: usize) -> Self {
        WeightSpec {
            q,
            omega_steps: vec![omega; horizon],
            psi_steps: vec![psi; horizon],
            horizon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub steps: usize,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T: Scalar> {
    pub plant: PlantModel<T>,
    pub channel: ChannelModel<T>,
    pub weights: WeightSpec<T>,
    pub eval_state: DVector<T>,
    pub sim: SimOptions,
}

impl<T: Scalar> Scenario<T> {
    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.plant.input_dim()
    }

    /// Copy with every channel set to delivery probability `t`.
    pub fn with_uniform_channel(&self, t: T) -> Self {
        self.with_means(ChannelMeans::uniform(self.input_dim(), t))
    }

    pub fn with_means(&self, means: ChannelMeans<T>) -> Self {
        let mut s = self.clone();
        s.channel.means = means;
        s
    }

    /// Converts every numeric field to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Scenario<U> {
        let m = |x: &DMatrix<T>| x.map(|v| U::lit(v.to_f64_lossy()));
        let v = |x: &DVector<T>| x.map(|v| U::lit(v.to_f64_lossy()));
        Scenario {
            plant: PlantModel {
                a: m(&self.plant.a),
                b: m(&self.plant.b),
                sigma_w: m(&self.plant.sigma_w),
                x0_mean: v(&self.plant.x0_mean),
                x0_cov: m(&self.plant.x0_cov),
            },
            channel: ChannelModel {
                means: match &self.channel.means {
                    ChannelMeans::Stationary(mu) => ChannelMeans::Stationary(v(mu)),
                    ChannelMeans::Schedule(s) => ChannelMeans::Schedule(s.iter().map(v).collect()),
                },
                beta: self.channel.beta.as_ref().map(v),
            },
            weights: WeightSpec {
                q: m(&self.weights.q),
                omega_steps: self.weights.omega_steps.iter().map(m).collect(),
                psi_steps: self.weights.psi_steps.iter().map(m).collect(),
                horizon: self.weights.horizon,
            },
            eval_state: v(&self.eval_state),
            sim: self.sim,
        }
    }
}

/// One violated scenario invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyDimension {
        field: String,
    },
    NonFinite {
        field: String,
    },
    Asymmetric {
        field: String,
    },
    NotPositiveDefinite {
        field: String,
    },
    NotDiagonal {
        field: String,
    },
    DimensionMismatch {
        field: String,
        found: String,
        reference: String,
        expected: String,
    },
    ChannelMeanOutOfRange {
        index: String,
        value: f64,
    },
    ScheduleLength {
        found: usize,
        horizon: usize,
    },
    WeightStepCount {
        field: String,
        found: usize,
        horizon: usize,
    },
    NegativeBeta {
        index: usize,
        value: f64,
    },
    ZeroHorizon,
    SimSteps,
    SimReplicates {
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyDimension { field } => write!(f, "{field} has an empty dimension"),
            NonFinite { field } => write!(f, "{field} has non-finite entries"),
            Asymmetric { field } => write!(f, "{field} asymmetric"),
            NotPositiveDefinite { field } => write!(f, "{field} not positive definite"),
            NotDiagonal { field } => write!(f, "{field} not diagonal"),
            DimensionMismatch {
                field,
                found,
                reference,
                expected,
            } => write!(
                f,
                "dimension mismatch: {field} is {found} but {reference} requires {expected}"
            ),
            ChannelMeanOutOfRange { index, value } => {
                write!(f, "channel mean must lie in (0,1] ({index} = {value})")
            }
            ScheduleLength { found, horizon } => {
                write!(
                    f,
                    "channel schedule length ≠ N (got {found}, N = {horizon})"
                )
            }
            WeightStepCount {
                field,
                found,
                horizon,
            } => {
                write!(f, "{field} step count ≠ N (got {found}, N = {horizon})")
            }
            NegativeBeta { index, value } => {
                write!(f, "beta must be nonnegative (beta[{index}] = {value})")
            }
            ZeroHorizon => write!(f, "horizon must be ≥ 1"),
            SimSteps => write!(f, "sim.steps must be ≥ 1"),
            SimReplicates { found } => write!(f, "sim.replicates must be ≥ 2 (got {found})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("malformed scenario: {0}")]
    Schema(String),
    #[error("invalid scenario: {0}")]
    Invalid(Violation),
}

fn dims<T: Scalar>(m: &DMatrix<T>) -> String {
    format!("{}×{}", m.nrows(), m.ncols())
}

/// Checks a square SPD matrix of side `n`; pushes at most one violation
/// per failed property and skips definiteness when shape is already wrong.
fn check_spd<T: Scalar>(
    out: &mut Vec<Violation>,
    field: &str,
    m: &DMatrix<T>,
    n: usize,
    reference: &str,
) {
    if m.nrows() != n || m.ncols() != n {
        out.push(Violation::DimensionMismatch {
            field: field.to_string(),
            found: dims(m),
            reference: reference.to_string(),
            expected: format!("{n}×{n}"),
        });
        return;
    }
    if !all_finite(m) {
        out.push(Violation::NonFinite {
            field: field.to_string(),
        });
        return;
    }
    if !is_symmetric(m) {
        out.push(Violation::Asymmetric {
            field: field.to_string(),
        });
        return;
    }
    if !is_positive_definite(m) {
        out.push(Violation::NotPositiveDefinite {
            field: field.to_string(),
        });
    }
}

fn check_means<T: Scalar>(out: &mut Vec<Violation>, label: &str, mu: &DVector<T>, m: usize) {
    if mu.len() != m {
        out.push(Violation::DimensionMismatch {
            field: label.to_string(),
            found: format!("length {}", mu.len()),
            reference: "plant.b".to_string(),
            expected: format!("length {m}"),
        });
        return;
    }
    for (i, &v) in mu.iter().enumerate() {
        if !(v > T::zero() && v <= T::one()) {
            out.push(Violation::ChannelMeanOutOfRange {
                index: format!("{label}[{i}]"),
                value: v.to_f64_lossy(),
            });
        }
    }
}

/// Every violated invariant, in a stable order. Empty when the scenario is
/// usable by all downstream modules.
pub fn validate_scenario<T: Scalar>(s: &Scenario<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = &s.plant;
    let n = p.a.nrows();
    let m = p.b.ncols();

    if n == 0 || p.a.ncols() == 0 {
        out.push(Violation::EmptyDimension {
            field: "plant.a".into(),
        });
        return out;
    }
    if m == 0 {
        out.push(Violation::EmptyDimension {
            field: "plant.b".into(),
        });
        return out;
    }
    if p.a.ncols() != n {
        out.push(Violation::DimensionMismatch {
            field: "plant.a".into(),
            found: dims(&p.a),
            reference: "plant.a".into(),
            expected: "a square matrix".into(),
        });
        return out;
    }
    if !all_finite(&p.a) {
        out.push(Violation::NonFinite {
            field: "plant.a".into(),
        });
    }
    if p.b.nrows() != n {
        out.push(Violation::DimensionMismatch {
            field: "plant.b".into(),
            found: dims(&p.b),
            reference: "plant.a".into(),
            expected: format!("{n} rows"),
        });
    } else if !all_finite(&p.b) {
        out.push(Violation::NonFinite {
            field: "plant.b".into(),
        });
    }

    check_spd(&mut out, "sigma_w", &p.sigma_w, n, "plant.a");
    check_spd(&mut out, "x0_cov", &p.x0_cov, n, "plant.a");
    for (field, v) in [("x0_mean", &p.x0_mean), ("eval_state", &s.eval_state)] {
        if v.len() != n {
            out.push(Violation::DimensionMismatch {
                field: field.into(),
                found: format!("length {}", v.len()),
                reference: "plant.a".into(),
                expected: format!("length {n}"),
            });
        } else if !v.iter().all(|x| x.is_finite()) {
            out.push(Violation::NonFinite {
                field: field.into(),
            });
        }
    }

    let w = &s.weights;
    let horizon = w.horizon;
    if horizon == 0 {
        out.push(Violation::ZeroHorizon);
    }

    match &s.channel.means {
        ChannelMeans::Stationary(mu) => check_means(&mut out, "mu", mu, m),
        ChannelMeans::Schedule(sched) => {
            if sched.len() != horizon {
                out.push(Violation::ScheduleLength {
                    found: sched.len(),
                    horizon,
                });
            }
            for (k, mu) in sched.iter().enumerate() {
                check_means(&mut out, &format!("mu_schedule[{k}]"), mu, m);
            }
        }
    }
    if let Some(beta) = &s.channel.beta {
        if beta.len() != m {
            out.push(Violation::DimensionMismatch {
                field: "beta".into(),
                found: format!("length {}", beta.len()),
                reference: "plant.b".into(),
                expected: format!("length {m}"),
            });
        }
        for (i, &v) in beta.iter().enumerate() {
            if !(v >= T::zero()) || !v.is_finite() {
                out.push(Violation::NegativeBeta {
                    index: i,
                    value: v.to_f64_lossy(),
                });
            }
        }
    }

    check_spd(&mut out, "q", &w.q, n, "plant.a");
    if w.omega_steps.len() != horizon {
        out.push(Violation::WeightStepCount {
            field: "omega_steps".into(),
            found: w.omega_steps.len(),
            horizon,
        });
    }
    for (k, om) in w.omega_steps.iter().enumerate() {
        check_spd(&mut out, &format!("omega_steps[{k}]"), om, n, "plant.a");
    }
    if w.psi_steps.len() != horizon {
        out.push(Violation::WeightStepCount {
            field: "psi_steps".into(),
            found: w.psi_steps.len(),
            horizon,
        });
    }
    for (k, ps) in w.psi_steps.iter().enumerate() {
        let field = format!("psi_steps[{k}]");
        let before = out.len();
        check_spd(&mut out, &field, ps, m, "plant.b");
        if out.len() == before && !is_diagonal(ps) {
            out.push(Violation::NotDiagonal { field });
        }
    }

    if s.sim.steps == 0 {
        out.push(Violation::SimSteps);
    }
    if s.sim.replicates < 2 {
        out.push(Violation::SimReplicates {
            found: s.sim.replicates,
        });
    }
    out
}

// ---- file format -------------------------------------------------------

type RawMatrix = Vec<Vec<f64>>;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    plant: RawPlant,
    channel: RawChannel,
    weights: RawWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sim: Option<RawSim>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    a: RawMatrix,
    b: RawMatrix,
    sigma_w: RawMatrix,
    x0_mean: Vec<f64>,
    x0_cov: RawMatrix,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mu_schedule: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    q: RawMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega: Option<RawMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_steps: Option<Vec<RawMatrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi: Option<RawMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psi_steps: Option<Vec<RawMatrix>>,
    horizon: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Replicate count used when the file does not specify one.
pub const DEFAULT_REPLICATES: usize = 1000;

fn matrix(field: &str, rows: &RawMatrix) -> Result<DMatrix<f64>, ScenarioError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(ScenarioError::Schema(format!(
            "{field} has rows of unequal length"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

fn raw_matrix(m: &DMatrix<f64>) -> RawMatrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn steps(
    field: &str,
    single: Option<&RawMatrix>,
    many: Option<&Vec<RawMatrix>>,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>, ScenarioError> {
    match (single, many) {
        (Some(m), None) => Ok(vec![matrix(field, m)?; horizon]),
        (None, Some(ms)) => ms
            .iter()
            .enumerate()
            .map(|(k, m)| matrix(&format!("{field}_steps[{k}]"), m))
            .collect(),
        (Some(_), Some(_)) => Err(ScenarioError::Schema(format!(
            "weights.{field} and weights.{field}_steps are mutually exclusive"
        ))),
        (None, None) => Err(ScenarioError::Schema(format!(
            "weights.{field} or weights.{field}_steps is required"
        ))),
    }
}

fn from_raw(raw: RawScenario) -> Result<Scenario<f64>, ScenarioError> {
    let plant = PlantModel {
        a: matrix("plant.a", &raw.plant.a)?,
        b: matrix("plant.b", &raw.plant.b)?,
        sigma_w: matrix("plant.sigma_w", &raw.plant.sigma_w)?,
        x0_mean: DVector::from_vec(raw.plant.x0_mean),
        x0_cov: matrix("plant.x0_cov", &raw.plant.x0_cov)?,
    };
    let means = match (raw.channel.mu, raw.channel.mu_schedule) {
        (Some(mu), None) => ChannelMeans::Stationary(DVector::from_vec(mu)),
        (None, Some(s)) => ChannelMeans::Schedule(s.into_iter().map(DVector::from_vec).collect()),
        (Some(_), Some(_)) => {
            return Err(ScenarioError::Schema(
                "channel.mu and channel.mu_schedule are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(ScenarioError::Schema(
                "channel.mu or channel.mu_schedule is required".into(),
            ))
        }
    };
    let horizon = raw.weights.horizon;
    let weights = WeightSpec {
        q: matrix("weights.q", &raw.weights.q)?,
        omega_steps: steps(
            "omega",
            raw.weights.omega.as_ref(),
            raw.weights.omega_steps.as_ref(),
            horizon,
        )?,
        psi_steps: steps(
            "psi",
            raw.weights.psi.as_ref(),
            raw.weights.psi_steps.as_ref(),
            horizon,
        )?,
        horizon,
    };
    let sim = raw.sim.unwrap_or(RawSim {
        steps: None,
        replicates: None,
        seed: None,
    });
    let eval_state = raw
        .eval_state
        .map(DVector::from_vec)
        .unwrap_or_else(|| plant.x0_mean.clone());
    Ok(Scenario {
        plant,
        channel: ChannelModel {
            means,
            beta: raw.channel.beta.map(DVector::from_vec),
        },
        weights,
        eval_state,
        sim: SimOptions {
            steps: sim.steps.unwrap_or(horizon),
            replicates: sim.replicates.unwrap_or(DEFAULT_REPLICATES),
            seed: sim.seed.unwrap_or(0),
        },
    })
}

fn to_raw(s: &Scenario<f64>) -> RawScenario {
    let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<_>>();
    let (mu, mu_schedule) = match &s.channel.means {
        ChannelMeans::Stationary(mu) => (Some(vec(mu)), None),
        ChannelMeans::Schedule(sched) => (None, Some(sched.iter().map(vec).collect())),
    };
    RawScenario {
        plant: RawPlant {
            a: raw_matrix(&s.plant.a),
            b: raw_matrix(&s.plant.b),
            sigma_w: raw_matrix(&s.plant.sigma_w),
            x0_mean: vec(&s.plant.x0_mean),
            x0_cov: raw_matrix(&s.plant.x0_cov),
        },
        channel: RawChannel {
            mu,
            mu_schedule,
            beta: s.channel.beta.as_ref().map(vec),
        },
        weights: RawWeights {
            q: raw_matrix(&s.weights.q),
            omega: None,
            omega_steps: Some(s.weights.omega_steps.iter().map(raw_matrix).collect()),
            psi: None,
            psi_steps: Some(s.weights.psi_steps.iter().map(raw_matrix).collect()),
            horizon: s.weights.horizon,
        },
        eval_state: Some(vec(&s.eval_state)),
        sim: Some(RawSim {
            steps: Some(s.sim.steps),
            replicates: Some(s.sim.replicates),
            seed: Some(s.sim.seed),
        }),
    }
}

/// Parses and validates a scenario document. Fails on the first violated
/// invariant; use [`validate_scenario`] for the full list.
pub fn parse_scenario(text: &str) -> Result<Scenario<f64>, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let s = from_raw(raw)?;
    match validate_scenario(&s).into_iter().next() {
        Some(v) => Err(ScenarioError::Invalid(v)),
        None => Ok(s),
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario<f64>, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

/// Serializes with explicit per-step weights and an explicit evaluation
/// state, so that loading the result reproduces `s` exactly.
pub fn scenario_to_json(s: &Scenario<f64>) -> String {
    serde_json::to_string_pretty(&to_raw(s)).expect("scenario serialization cannot fail")
}

pub fn save_scenario(s: &Scenario<f64>, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    fs::write(path, scenario_to_json(s)).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}
