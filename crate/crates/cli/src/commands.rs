use std::path::Path;

use nalgebra::DVector;
use nclab_core::allocation::optimize_allocation;
use nclab_core::analysis::{cost_gap, cost_sweep, maximal_gap};
use nclab_core::controller::{closed_loop_eigenvalues, expected_cost, synthesize};
use nclab_core::export::{write_frontier_csv, write_sweep_csv, write_trajectory_csv};
use nclab_core::prediction::build_prediction_operators;
use nclab_core::scenario::{load_scenario, validate_scenario};
use nclab_core::simulator::{
    monte_carlo_cost, open_loop_rollout, paired_monte_carlo, receding_horizon_sim, split_seed,
};
use nclab_core::{PredictionOperators, Protocol, Scenario};
use serde::Serialize;

use crate::output::{matrix_rows, print_json, with_sink, ComplexOut};
use crate::{Command, Common, Failure, SimMode};

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

/// Loads the scenario and applies the shared overrides.
fn prepare(common: &Common) -> Result<Scenario<f64>, Failure> {
    if let Some(k) = common.threads {
        if k == 0 {
            return Err(Failure::Usage("--threads must be ≥ 1".into()));
        }
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
    let mut scn = load_scenario(&common.scenario).map_err(invalid)?;
    if let Some(t) = common.upsilon {
        scn = scn.with_uniform_channel(t);
        if let Some(v) = validate_scenario(&scn).into_iter().next() {
            return Err(Failure::Invalid(format!("--upsilon {t}: {v}")));
        }
    }
    if let Some(seed) = common.seed {
        scn.sim.seed = seed;
    }
    Ok(scn)
}

fn operators(scn: &Scenario<f64>) -> Result<PredictionOperators<f64>, Failure> {
    build_prediction_operators(&scn.plant, &scn.weights, &scn.channel).map_err(invalid)
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synthesize { common, protocol } => synthesize_cmd(&common, protocol),
        Command::Cost { common, protocol } => cost_cmd(&common, protocol),
        Command::Gap { common } => gap_cmd(&common),
        Command::Sweep {
            common,
            points,
            from,
            to,
            scalar,
            output,
        } => sweep_cmd(&common, points, from, to, scalar, output.as_deref()),
        Command::Maxdiff { common, scalar } => maxdiff_cmd(&common, scalar),
        Command::Simulate {
            common,
            protocol,
            mode,
            steps,
            replicate,
            output,
        } => simulate_cmd(&common, protocol, mode, steps, replicate, output.as_deref()),
        Command::Montecarlo {
            common,
            protocol,
            replicates,
        } => montecarlo_cmd(&common, protocol, replicates),
        Command::Eigs { common, protocol } => eigs_cmd(&common, protocol),
        Command::Allocate {
            common,
            protocol,
            alpha,
            resolution,
            output,
        } => allocate_cmd(&common, protocol, alpha, resolution, output.as_deref()),
    }
}

#[derive(Serialize)]
struct LawOut {
    protocol: Protocol,
    horizon: usize,
    k_first: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
}

fn synthesize_cmd(common: &Common, protocol: Protocol) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let ops = operators(&scn)?;
    let law = synthesize(&ops, protocol).map_err(invalid)?;
    print_json(&LawOut {
        protocol,
        horizon: ops.horizon,
        k_first: matrix_rows(&law.k_first),
        k: matrix_rows(&law.k),
    })
}

#[derive(Serialize)]
struct CostOut {
    protocol: Protocol,
    total: f64,
    constant: f64,
    reduction: f64,
}

fn cost_cmd(common: &Common, protocol: Protocol) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let c = expected_cost(&operators(&scn)?, protocol, &scn.eval_state).map_err(invalid)?;
    print_json(&CostOut {
        protocol,
        total: c.total,
        constant: c.constant_term,
        reduction: c.reduction_term,
    })
}

fn gap_cmd(common: &Common) -> Result<(), Failure> {
    let scn = prepare(common)?;
    print_json(&cost_gap(&operators(&scn)?, &scn.eval_state).map_err(invalid)?)
}

/// `points` evenly spaced values from `from` to `to` inclusive.
fn axis(points: usize, from: f64, to: f64) -> Vec<f64> {
    if points == 1 {
        return vec![to];
    }
    let step = (to - from) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                to
            } else {
                from + step * i as f64
            }
        })
        .collect()
}

/// Cartesian product with the first channel varying slowest.
fn product_grid(axis: &[f64], m: usize) -> Vec<DVector<f64>> {
    let total = axis.len().pow(m as u32);
    (0..total)
        .map(|mut idx| {
            let mut mu = DVector::zeros(m);
            for i in (0..m).rev() {
                mu[i] = axis[idx % axis.len()];
                idx /= axis.len();
            }
            mu
        })
        .collect()
}

fn sweep_cmd(
    common: &Common,
    points: usize,
    from: f64,
    to: f64,
    scalar: bool,
    output: Option<&Path>,
) -> Result<(), Failure> {
    if points == 0 {
        return Err(Failure::Usage("--points must be ≥ 1".into()));
    }
    if !(from > 0.0 && from <= to && to <= 1.0) {
        return Err(Failure::Usage(format!(
            "sweep range must satisfy 0 < from ≤ to ≤ 1 (got {from}..{to})"
        )));
    }
    let scn = prepare(common)?;
    let ops = operators(&scn)?;
    let m = ops.input_dim;
    let values = axis(points, from, to);
    let grid: Vec<DVector<f64>> = if scalar || m == 1 {
        values
            .iter()
            .map(|&t| DVector::from_element(m, t))
            .collect()
    } else {
        product_grid(&values, m)
    };
    let rows = cost_sweep(&ops, &grid, &scn.eval_state).map_err(invalid)?;
    with_sink(output, |w| write_sweep_csv(&rows, w))
}

#[derive(Serialize)]
struct CandidateOut {
    lambda: f64,
    value: ComplexOut,
    valid: bool,
    eig_residual: Option<f64>,
    det_residual: Option<f64>,
}

#[derive(Serialize)]
struct MaxDiffOut {
    maximizer: f64,
    gap_at_max: f64,
    method: nclab_core::MaxDiffMethod,
    grid_maximizer: f64,
    grid_gap: f64,
    best_root_candidate: Option<f64>,
    candidates: Vec<CandidateOut>,
}

fn maxdiff_cmd(common: &Common, scalar: bool) -> Result<(), Failure> {
    let scn = prepare(common)?;
    if scn.input_dim() > 1 && !scalar {
        return Err(Failure::Usage(format!(
            "maxdiff analyses a single shared channel but the scenario has {} channels; \
             pass --scalar to treat them as one",
            scn.input_dim()
        )));
    }
    let r = maximal_gap(&operators(&scn)?, &scn.eval_state).map_err(invalid)?;
    print_json(&MaxDiffOut {
        maximizer: r.maximizer,
        gap_at_max: r.gap_at_max,
        method: r.method,
        grid_maximizer: r.grid_maximizer,
        grid_gap: r.grid_gap,
        best_root_candidate: r.best_root_candidate,
        candidates: r
            .candidates
            .iter()
            .map(|c| CandidateOut {
                lambda: c.lambda,
                value: (&c.value).into(),
                valid: c.is_valid(),
                eig_residual: c.eig_residual,
                det_residual: c.det_residual,
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct RunOut {
    protocol: Protocol,
    steps: usize,
    seed: u64,
    realized_cost: f64,
}

fn simulate_cmd(
    common: &Common,
    protocol: Protocol,
    mode: SimMode,
    steps: Option<usize>,
    replicate: u64,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let seed = split_seed(scn.sim.seed, replicate);
    let rec = match mode {
        SimMode::Receding => {
            receding_horizon_sim(&scn, protocol, steps.unwrap_or(scn.sim.steps), seed)
        }
        SimMode::OpenLoop => {
            if steps.is_some() {
                return Err(Failure::Usage(
                    "--steps applies only to receding-horizon runs".into(),
                ));
            }
            open_loop_rollout(&scn, protocol, seed)
        }
    }
    .map_err(invalid)?;
    with_sink(output, |w| write_trajectory_csv(&rec, w))?;
    if output.is_some() {
        print_json(&RunOut {
            protocol,
            steps: rec.inputs.len(),
            seed: rec.seed,
            realized_cost: rec.realized_cost,
        })?;
    }
    Ok(())
}

fn montecarlo_cmd(
    common: &Common,
    protocol: Option<Protocol>,
    replicates: Option<usize>,
) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let r = replicates.unwrap_or(scn.sim.replicates);
    match protocol {
        Some(p) => print_json(&monte_carlo_cost(&scn, p, r, scn.sim.seed).map_err(invalid)?),
        None => print_json(&paired_monte_carlo(&scn, r, scn.sim.seed).map_err(invalid)?),
    }
}

#[derive(Serialize)]
struct EigsOut {
    protocol: Protocol,
    eigenvalues: Vec<ComplexOut>,
    spectral_radius: f64,
}

fn eigs_cmd(common: &Common, protocol: Protocol) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let law = synthesize(&operators(&scn)?, protocol).map_err(invalid)?;
    let eig = closed_loop_eigenvalues(&law, &scn.plant).map_err(invalid)?;
    print_json(&EigsOut {
        protocol,
        spectral_radius: eig.iter().map(|z| z.norm()).fold(0.0, f64::max),
        eigenvalues: eig.iter().map(ComplexOut::from).collect(),
    })
}

#[derive(Serialize)]
struct AllocationOut {
    protocol: Protocol,
    alpha: f64,
    m_star: Vec<f64>,
    comm_cost: f64,
    control_cost: f64,
    grid_resolution: f64,
    grid_m_star: Vec<f64>,
}

fn allocate_cmd(
    common: &Common,
    protocol: Protocol,
    alpha: f64,
    resolution: f64,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let scn = prepare(common)?;
    let ops = operators(&scn)?;
    let beta = scn
        .channel
        .beta
        .clone()
        .unwrap_or_else(|| DVector::from_element(ops.input_dim, 1.0));
    let r = optimize_allocation(&ops, protocol, alpha, &beta, &scn.eval_state, resolution)
        .map_err(invalid)?;
    if let Some(path) = output {
        with_sink(Some(path), |w| write_frontier_csv(&r.frontier, w))?;
    }
    print_json(&AllocationOut {
        protocol: r.protocol,
        alpha: r.alpha,
        m_star: r.m_star,
        comm_cost: r.comm_cost,
        control_cost: r.control_cost,
        grid_resolution: r.grid_resolution,
        grid_m_star: r.grid_m_star,
    })
}
