#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use nclab_core::prediction::build_prediction_operators;
use nclab_core::scenario::load_scenario;
use nclab_core::{
    ChannelMeans, ChannelModel, PlantModel, PredictionOperators, Scenario, WeightSpec,
};
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> Scenario<f64> {
    load_scenario(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn operators(scn: &Scenario<f64>) -> PredictionOperators<f64> {
    build_prediction_operators(&scn.plant, &scn.weights, &scn.channel).expect("valid scenario")
}

fn uniform_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// `M Mᵀ + δ I` with a random `M`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let m = uniform_matrix(rng, n, n);
    &m * m.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.05..0.5)
}

/// A randomized system together with its evaluation state.
pub struct RandomSystem {
    pub scenario: Scenario<f64>,
    pub ops: PredictionOperators<f64>,
    pub x: DVector<f64>,
}

/// Random plant with `n ≤ 4`, `m ≤ 3`, `N ≤ 10`, SPD weights, diagonal
/// input weights and channel means in `(0.05, 0.95)`.
pub fn random_system<R: Rng>(rng: &mut R) -> RandomSystem {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=3);
    let horizon = rng.gen_range(1..=10);
    let a = uniform_matrix(rng, n, n);
    let b = uniform_matrix(rng, n, m);
    let q = random_spd(rng, n);
    let omega = random_spd(rng, n);
    let psi = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.gen_range(0.1..2.0)));
    let sigma_w = random_spd(rng, n) * 0.01;
    let mu = DVector::from_fn(m, |_, _| rng.gen_range(0.05..0.95));
    let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let scenario = Scenario {
        plant: PlantModel {
            a,
            b,
            sigma_w,
            x0_mean: x.clone(),
            x0_cov: DMatrix::identity(n, n),
        },
        channel: ChannelModel {
            means: ChannelMeans::Stationary(mu),
            beta: None,
        },
        weights: WeightSpec::constant(q, omega, psi, horizon),
        eval_state: x.clone(),
        sim: nclab_core::SimOptions {
            steps: horizon,
            replicates: 2,
            seed: 0,
        },
    };
    let ops = operators(&scenario);
    RandomSystem { scenario, ops, x }
}
