//! Seeded rollouts of the plant with Bernoulli actuator losses.
//!
//! Every rollout owns two ChaCha8 streams derived from its seed: stream 0
//! feeds the packet outcomes and stream 1 the process noise. Neither depends
//! on the protocol, so the two protocols see identical losses and noise for
//! the same seed. Replicate `r` of a Monte Carlo run uses
//! [`split_seed`]`(base, r)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{optimal_sequence, synthesize, ControlLaw, ControllerError, Protocol};
use crate::linalg::{quad_form, CompensatedSum};
use crate::prediction::{build_prediction_operators, PredictionError, PredictionOperators};
use crate::scenario::{validate_scenario, ChannelMeans, Scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("steps must be ≥ 1")]
    ZeroSteps,
    #[error("replicates must be ≥ 2 (got {0})")]
    TooFewReplicates(usize),
    #[error("noise covariance has no Cholesky factor")]
    NoiseFactor,
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Rule used to derive replicate seeds, reported alongside statistics.
pub const SEED_RULE: &str =
    "seed_r = splitmix64(base + (r + 1) * 0x9E3779B97F4A7C15); stream 0 = packets, stream 1 = noise";

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `r` under base seed `base`.
pub fn split_seed(base: u64, r: u64) -> u64 {
    splitmix64(base.wrapping_add(r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Packet outcomes for one step: entry `i` is 1 with probability `means[i]`.
/// Always consumes exactly one uniform draw per channel.
pub fn sample_transmission<R: Rng + ?Sized>(means: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    means.map(|mu| if rng.gen::<f64>() < mu { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub transmissions: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    /// Cost attributed to each step; sums to `realized_cost`. Step 0 also
    /// carries the initial-state term.
    pub stage_costs: Vec<f64>,
    pub realized_cost: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonteCarloStats {
    pub mean_cost: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub seed_rule: &'static str,
}

/// Two protocols evaluated on common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedStats {
    pub tcp: MonteCarloStats,
    pub udp: MonteCarloStats,
    /// Mean of per-replicate `udp − tcp`.
    pub diff_mean: f64,
    pub diff_stderr: f64,
}

struct Streams {
    packets: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut packets = ChaCha8Rng::seed_from_u64(seed);
        packets.set_stream(0);
        let mut noise = ChaCha8Rng::seed_from_u64(seed);
        noise.set_stream(1);
        Streams { packets, noise }
    }

    fn noise(&mut self, factor: &DMatrix<f64>) -> DVector<f64> {
        let z = DVector::from_fn(factor.ncols(), |_, _| {
            self.noise.sample::<f64, _>(StandardNormal)
        });
        factor * z
    }
}

/// Everything a rollout needs that does not depend on the seed.
struct Plan {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    omega_steps: Vec<DMatrix<f64>>,
    psi_steps: Vec<DMatrix<f64>>,
    noise_factor: DMatrix<f64>,
    means: ChannelMeans<f64>,
    x0: DVector<f64>,
}

impl Plan {
    fn new(scn: &Scenario<f64>) -> Result<Self, SimError> {
        if let Some(v) = validate_scenario(scn).into_iter().next() {
            return Err(SimError::Invalid(v.to_string()));
        }
        let noise_factor = scn
            .plant
            .sigma_w
            .clone()
            .cholesky()
            .ok_or(SimError::NoiseFactor)?
            .l();
        Ok(Plan {
            a: scn.plant.a.clone(),
            b: scn.plant.b.clone(),
            q: scn.weights.q.clone(),
            omega_steps: scn.weights.omega_steps.clone(),
            psi_steps: scn.weights.psi_steps.clone(),
            noise_factor,
            means: scn.channel.means.clone(),
            x0: scn.eval_state.clone(),
        })
    }

    fn weight_index(&self, k: usize) -> usize {
        k.min(self.omega_steps.len() - 1)
    }

    /// Runs `steps` steps, asking `input(k, x_k)` for the commanded input.
    fn run(
        &self,
        steps: usize,
        seed: u64,
        mut input: impl FnMut(usize, &DVector<f64>) -> DVector<f64>,
    ) -> TrajectoryRecord {
        let mut streams = Streams::new(seed);
        let mut x = self.x0.clone();
        let mut rec = TrajectoryRecord {
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps),
            transmissions: Vec::with_capacity(steps),
            noise: Vec::with_capacity(steps),
            stage_costs: Vec::with_capacity(steps),
            realized_cost: 0.0,
            seed,
        };
        let mut initial = quad_form(&self.q, &x);
        rec.states.push(x.clone());
        for k in 0..steps {
            let v = sample_transmission(self.means.at_step(k), &mut streams.packets);
            let w = streams.noise(&self.noise_factor);
            let u = input(k, &x);
            let applied = v.component_mul(&u);
            x = &self.a * &x + &self.b * &applied + &w;
            let idx = self.weight_index(k);
            let stage = initial
                + quad_form(&self.psi_steps[idx], &applied)
                + quad_form(&self.omega_steps[idx], &x);
            initial = 0.0;
            rec.stage_costs.push(stage);
            rec.states.push(x.clone());
            rec.inputs.push(u);
            rec.transmissions.push(v);
            rec.noise.push(w);
        }
        rec.realized_cost = rec
            .stage_costs
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .total();
        rec
    }
}

/// Precomputed open-loop experiment: one optimal sequence applied blindly.
pub struct OpenLoop {
    plan: Plan,
    sequence: DVector<f64>,
    horizon: usize,
    input_dim: usize,
}

impl OpenLoop {
    pub fn new(scn: &Scenario<f64>, p: Protocol) -> Result<Self, SimError> {
        let plan = Plan::new(scn)?;
        let ops = build_prediction_operators(&scn.plant, &scn.weights, &scn.channel)?;
        let law = synthesize(&ops, p)?;
        Ok(OpenLoop {
            sequence: optimal_sequence(&law, &scn.eval_state),
            plan,
            horizon: ops.horizon,
            input_dim: ops.input_dim,
        })
    }

    pub fn rollout(&self, seed: u64) -> TrajectoryRecord {
        let m = self.input_dim;
        self.plan.run(self.horizon, seed, |k, _| {
            self.sequence.rows(k * m, m).into_owned()
        })
    }
}

/// Applies the optimal sequence computed at `eval_state` over the whole
/// horizon without re-planning.
pub fn open_loop_rollout(
    scn: &Scenario<f64>,
    p: Protocol,
    seed: u64,
) -> Result<TrajectoryRecord, SimError> {
    Ok(OpenLoop::new(scn, p)?.rollout(seed))
}

/// Re-plans at every measured state and applies the first input block.
/// With a channel schedule the planning window slides along it, holding the
/// last entry past its end.
pub fn receding_horizon_sim(
    scn: &Scenario<f64>,
    p: Protocol,
    steps: usize,
    seed: u64,
) -> Result<TrajectoryRecord, SimError> {
    if steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    let plan = Plan::new(scn)?;
    let ops = build_prediction_operators(&scn.plant, &scn.weights, &scn.channel)?;
    let laws = receding_laws(&ops, &scn.channel.means, p, steps)?;
    Ok(plan.run(steps, seed, |k, x| {
        -(&laws[k.min(laws.len() - 1)].k_first * x)
    }))
}

fn receding_laws(
    ops: &PredictionOperators<f64>,
    means: &ChannelMeans<f64>,
    p: Protocol,
    steps: usize,
) -> Result<Vec<ControlLaw<f64>>, SimError> {
    match means {
        ChannelMeans::Stationary(_) => Ok(vec![synthesize(ops, p)?]),
        ChannelMeans::Schedule(_) => (0..steps)
            .map(|k| {
                let window = ChannelMeans::Schedule(
                    (0..ops.horizon)
                        .map(|i| means.at_step(k + i).clone())
                        .collect(),
                );
                Ok(synthesize(&ops.with_means(&window)?, p)?)
            })
            .collect(),
    }
}

fn stats(costs: &[f64], base_seed: u64) -> MonteCarloStats {
    let r = costs.len() as f64;
    let mean = costs.iter().copied().collect::<CompensatedSum>().total() / r;
    let ss = costs
        .iter()
        .map(|c| (c - mean) * (c - mean))
        .collect::<CompensatedSum>()
        .total();
    MonteCarloStats {
        mean_cost: mean,
        stderr: (ss / (r - 1.0)).sqrt() / r.sqrt(),
        replicates: costs.len(),
        base_seed,
        seed_rule: SEED_RULE,
    }
}

fn replicate_costs(exp: &OpenLoop, replicates: usize, base_seed: u64) -> Vec<f64> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| exp.rollout(split_seed(base_seed, r)).realized_cost)
        .collect()
}

/// Mean and standard error of the open-loop realized cost. Replicates run in
/// parallel; the result does not depend on the thread count.
pub fn monte_carlo_cost(
    scn: &Scenario<f64>,
    p: Protocol,
    replicates: usize,
    base_seed: u64,
) -> Result<MonteCarloStats, SimError> {
    if replicates < 2 {
        return Err(SimError::TooFewReplicates(replicates));
    }
    let exp = OpenLoop::new(scn, p)?;
    Ok(stats(
        &replicate_costs(&exp, replicates, base_seed),
        base_seed,
    ))
}

/// Both protocols on the same replicate seeds, with the paired difference.
pub fn paired_monte_carlo(
    scn: &Scenario<f64>,
    replicates: usize,
    base_seed: u64,
) -> Result<PairedStats, SimError> {
    if replicates < 2 {
        return Err(SimError::TooFewReplicates(replicates));
    }
    let tcp = replicate_costs(
        &OpenLoop::new(scn, Protocol::TcpLike)?,
        replicates,
        base_seed,
    );
    let udp = replicate_costs(
        &OpenLoop::new(scn, Protocol::UdpLike)?,
        replicates,
        base_seed,
    );
    let diff: Vec<f64> = udp.iter().zip(&tcp).map(|(u, t)| u - t).collect();
    let d = stats(&diff, base_seed);
    Ok(PairedStats {
        tcp: stats(&tcp, base_seed),
        udp: stats(&udp, base_seed),
        diff_mean: d.mean_cost,
        diff_stderr: d.stderr,
    })
}
