//! Optimal finite-horizon control of linear plants whose actuators are fed
//! over independent Bernoulli packet-loss channels.
//!
//! Two protocols are modelled. Under the acknowledged (TCP-like) protocol
//! the controller learns which packets arrived; under the unacknowledged
//! (UDP-like) protocol it only knows the per-channel delivery probabilities.
//! The crate builds the condensed horizon operators, synthesizes both
//! optimal batch laws, evaluates their exact expected costs, analyses the
//! gap between them, simulates the closed loop with loss injection, and
//! allocates per-channel delivery probabilities under a cost budget.
//!
//! The numerical core is generic over the scalar type (see [`Scalar`]);
//! aliases for `f64` and `f32` live at the crate root. Scenario files, the
//! simulator and the allocation reports are `f64`.

// `!(x >= 0.0)` style checks deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod analysis;
pub mod controller;
pub mod export;
pub mod linalg;
pub mod prediction;
pub mod scenario;
pub mod simulator;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the numerical core.
///
/// Implemented for every `Copy` real field that converts to and from
/// primitive numbers, which covers `f32` and `f64`.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal. Panics only for types that cannot
    /// represent finite `f64` values at all.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("scalar type cannot represent f64 literal")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: RealField + Copy + FromPrimitive + ToPrimitive {}

pub use allocation::{AllocationReport, FrontierPoint};
pub use analysis::{GapReport, MaxDiffMethod, MaxDiffReport, RootCandidate};
pub use controller::{ControlLaw, CostReport, Protocol};
pub use prediction::PredictionOperators;
pub use scenario::{ChannelMeans, ChannelModel, PlantModel, Scenario, SimOptions, WeightSpec};
pub use simulator::{MonteCarloStats, PairedStats, TrajectoryRecord};

pub type ScenarioF64 = Scenario<f64>;
pub type PlantModelF64 = PlantModel<f64>;
pub type ChannelModelF64 = ChannelModel<f64>;
pub type WeightSpecF64 = WeightSpec<f64>;

pub type PredictionOperatorsF64 = PredictionOperators<f64>;
pub type PredictionOperatorsF32 = PredictionOperators<f32>;

pub type ControlLawF64 = ControlLaw<f64>;
pub type ControlLawF32 = ControlLaw<f32>;
pub type CostReportF64 = CostReport<f64>;
pub type CostReportF32 = CostReport<f32>;

pub type GapReportF64 = GapReport<f64>;
pub type GapReportF32 = GapReport<f32>;
pub type MaxDiffReportF64 = MaxDiffReport<f64>;
