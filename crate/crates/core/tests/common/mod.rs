//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::sync::Arc;

use afr_core::a3c::{compute_update, n_step_returns, worker_rollout, SamplingMode};
use afr_core::env::Env;
use afr_core::features::compute_norm_stats;
use afr_core::nn::{
    actor_output_grad, backward, critic_output_grad, entropy, forward, Head, NetInput,
    NetworkParams, Topology,
};
use afr_core::reward::{episode_reward, QoEProfile};
use afr_core::trace::{generate_synthetic, MotionProfile, VideoTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;
/// Largest network used in gradient checks.
pub const MAX_CHECK_PARAMS: usize = 500;

/// One-sided slopes differing by more than this (relative) mark a kink.
pub const KINK_REL: f64 = 1e-3;

/// Mixed static/dynamic/hybrid synthetic traces with consecutive seeds.
pub fn mixed_dataset(count: usize, first_seed: u64, chunks: usize) -> Vec<VideoTrace> {
    let profiles = [
        MotionProfile::Static,
        MotionProfile::Dynamic,
        MotionProfile::Hybrid { switch_period: 3 },
    ];
    (0..count)
        .map(|i| generate_synthetic(profiles[i % 3], chunks, first_seed + i as u64).unwrap())
        .collect()
}

/// A random small topology (well under the parameter cap).
pub fn small_topology(head: Head, rng: &mut ChaCha8Rng) -> Topology {
    let n_vectors = rng.random_range(1..=3);
    Topology {
        head,
        vector_lens: (0..n_vectors).map(|_| rng.random_range(1..=7)).collect(),
        filters: rng.random_range(1..=3),
        kernel: rng.random_range(1..=4),
        scalar_inputs: rng.random_range(1..=2),
        scalar_units: rng.random_range(1..=3),
        hidden_layers: rng.random_range(1..=2),
        hidden_units: rng.random_range(2..=5),
    }
}

/// He-initialised weights plus random biases: with zero biases a layer fed
/// only by dead units sits exactly on the ReLU kink, where central
/// differences are meaningless.
pub fn random_params(topo: Topology, rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut params = NetworkParams::init(topo, rng.random()).unwrap();
    for block in params.blocks_mut() {
        block.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    params
}

pub struct Batch {
    pub vectors: Vec<Vec<Vec<f64>>>,
    pub scalars: Vec<Vec<f64>>,
}

impl Batch {
    pub fn random(topo: &Topology, batch: usize, rng: &mut ChaCha8Rng) -> Self {
        Batch {
            vectors: (0..batch)
                .map(|_| {
                    topo.vector_lens
                        .iter()
                        .map(|&l| (0..l).map(|_| rng.random::<f64>()).collect())
                        .collect()
                })
                .collect(),
            scalars: (0..batch)
                .map(|_| {
                    (0..topo.scalar_inputs)
                        .map(|_| rng.random::<f64>())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn inputs(&self) -> Vec<NetInput<'_>> {
        self.vectors
            .iter()
            .zip(&self.scalars)
            .map(|(v, s)| NetInput {
                vectors: v.iter().map(Vec::as_slice).collect(),
                scalars: s.clone(),
            })
            .collect()
    }
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdCheck {
    pub params: usize,
    /// Largest relative error over the smoothly-differentiable parameters.
    pub max_rel_err: f64,
    /// Parameters whose ±h interval straddles a ReLU kink (left and right
    /// slopes disagree), where a central difference is meaningless.
    pub kinks: usize,
}

impl FdCheck {
    pub fn kink_fraction(&self) -> f64 {
        self.kinks as f64 / self.params.max(1) as f64
    }
}

/// Compares `analytic` with central differences of `objective` at step
/// [`FD_STEP`]. The disagreement explainable by rounding in the objective
/// (a few ulps of `f`, divided by `h`) is not counted as error.
pub fn compare_with_fd(
    params: &NetworkParams,
    analytic: &[f64],
    objective: impl Fn(&NetworkParams) -> f64,
) -> FdCheck {
    let h = FD_STEP;
    let flat = params.to_flat();
    assert_eq!(flat.len(), analytic.len());
    let topo = params.topology().clone();
    let f0 = objective(params);
    let noise = 8.0 * f64::EPSILON * f0.abs().max(1.0) / h;
    let mut check = FdCheck {
        params: flat.len(),
        max_rel_err: 0.0,
        kinks: 0,
    };
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let fp = objective(&NetworkParams::from_flat(topo.clone(), &plus).unwrap());
        let fm = objective(&NetworkParams::from_flat(topo.clone(), &minus).unwrap());
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        if (right - left).abs() > KINK_REL * right.abs().max(left.abs()) + 4.0 * noise {
            check.kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let excess = ((analytic[i] - numeric).abs() - noise).max(0.0);
        let err = excess / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
        check.max_rel_err = check.max_rel_err.max(err);
    }
    check
}

fn actor_objective(
    params: &NetworkParams,
    batch: &Batch,
    actions: &[usize],
    adv: &[f64],
    beta: f64,
) -> f64 {
    let trace = forward(params, &batch.inputs()).unwrap();
    let probs = trace.probs().unwrap();
    probs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(b, row)| {
            let p = row.as_slice().unwrap();
            adv[b] * p[actions[b] - 1].ln() + beta * entropy(p)
        })
        .sum()
}

/// Actor gradient check on one random small network; returns the max relative error.
pub fn actor_gradient_error(seed: u64) -> FdCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions_n = rng.random_range(2..=5);
    let topo = small_topology(Head::Actor { actions: actions_n }, &mut rng);
    let params = random_params(topo.clone(), &mut rng);
    let batch_n = rng.random_range(1..=3);
    let batch = Batch::random(&topo, batch_n, &mut rng);
    let actions: Vec<usize> = (0..batch_n)
        .map(|_| rng.random_range(1..=actions_n))
        .collect();
    let adv: Vec<f64> = (0..batch_n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let beta = rng.random_range(0.0..1.0);

    let trace = forward(&params, &batch.inputs()).unwrap();
    let d = actor_output_grad(&trace, &actions, &adv, beta).unwrap();
    let analytic: Vec<f64> = backward(&params, &trace, &d)
        .unwrap()
        .values()
        .copied()
        .collect();
    compare_with_fd(&params, &analytic, |p| {
        actor_objective(p, &batch, &actions, &adv, beta)
    })
}

/// Critic gradient check (squared error to random targets).
pub fn critic_gradient_error(seed: u64) -> FdCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = small_topology(Head::Critic, &mut rng);
    let params = random_params(topo.clone(), &mut rng);
    let batch_n = rng.random_range(1..=3);
    let batch = Batch::random(&topo, batch_n, &mut rng);
    let targets: Vec<f64> = (0..batch_n).map(|_| rng.random_range(-2.0..2.0)).collect();

    let trace = forward(&params, &batch.inputs()).unwrap();
    let d = critic_output_grad(&trace, &targets).unwrap();
    let analytic: Vec<f64> = backward(&params, &trace, &d)
        .unwrap()
        .values()
        .copied()
        .collect();
    compare_with_fd(&params, &analytic, |p| {
        forward(p, &batch.inputs())
            .unwrap()
            .values()
            .iter()
            .zip(&targets)
            .map(|(v, t)| (t - v).powi(2))
            .sum()
    })
}

/// The smallest topology that accepts real observations.
pub fn tiny_state_topology(head: Head) -> Topology {
    Topology {
        filters: 1,
        scalar_units: 2,
        hidden_layers: 1,
        hidden_units: 2,
        ..Topology::for_state(head, 5, 1, 2)
    }
}

/// Full update pipeline (rollout → n-step advantages → summed gradients)
/// against finite differences, with advantages and the bootstrap value held
/// fixed as in the update itself. Returns the (actor, critic) checks.
pub fn pipeline_gradient_error(seed: u64) -> (FdCheck, FdCheck) {
    let trace = generate_synthetic(MotionProfile::Hybrid { switch_period: 2 }, 6, seed).unwrap();
    let norm = compute_norm_stats(std::slice::from_ref(&trace)).unwrap();
    let (mut env, obs) = Env::reset(Arc::new(trace), Arc::new(QoEProfile::qoe_b()), norm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actor = random_params(tiny_state_topology(Head::Actor { actions: 5 }), &mut rng);
    let critic = random_params(tiny_state_topology(Head::Critic), &mut rng);
    let rollout =
        worker_rollout(&mut env, obs, &actor, 4, &mut rng, SamplingMode::Stochastic).unwrap();
    let (gamma, beta) = (0.9, 0.4);
    let update = compute_update(&rollout, &actor, &critic, gamma, beta).unwrap();

    let inputs: Vec<NetInput<'_>> = rollout
        .samples
        .iter()
        .map(|s| NetInput::from(&s.obs))
        .collect();
    let values = forward(&critic, &inputs).unwrap().values();
    let bootstrap = match &rollout.bootstrap {
        Some(b) => forward(&critic, &[NetInput::from(b)]).unwrap().values()[0],
        None => 0.0,
    };
    let returns = n_step_returns(&rollout.samples, bootstrap, gamma);
    let adv: Vec<f64> = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    let actions: Vec<usize> = rollout.samples.iter().map(|s| s.action).collect();

    let actor_analytic: Vec<f64> = update.actor.values().copied().collect();
    let actor_err = compare_with_fd(&actor, &actor_analytic, |p| {
        let t = forward(p, &inputs).unwrap();
        t.probs()
            .unwrap()
            .rows()
            .into_iter()
            .enumerate()
            .map(|(b, row)| {
                let pr = row.as_slice().unwrap();
                adv[b] * pr[actions[b] - 1].ln() + beta * entropy(pr)
            })
            .sum()
    });
    let critic_analytic: Vec<f64> = update.critic.values().copied().collect();
    let critic_err = compare_with_fd(&critic, &critic_analytic, |p| {
        forward(p, &inputs)
            .unwrap()
            .values()
            .iter()
            .zip(&returns)
            .map(|(v, r)| (r - v).powi(2))
            .sum()
    });
    (actor_err, critic_err)
}

/// Best episode reward over every level schedule (`m^N` of them).
pub fn exhaustive_best(trace: &VideoTrace, profile: &QoEProfile) -> f64 {
    let m = trace.levels();
    let n = trace.n_chunks();
    let mut levels = vec![1usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        best = best.max(episode_reward(trace, &levels, profile).unwrap());
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            if levels[i] < m {
                levels[i] += 1;
                break;
            }
            levels[i] = 1;
            i += 1;
        }
    }
}
