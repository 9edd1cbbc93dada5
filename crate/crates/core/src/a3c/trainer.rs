use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::a3c::worker::{Snapshot, Update, UpdateStats, Worker};
use crate::error::{Error, Result};
use crate::features::{compute_norm_stats, NormalizationStats};
use crate::nn::{
    apply_gradients, build_network, save_checkpoint, Checkpoint, Direction, Head, NetworkParams,
};
use crate::reward::QoEProfile;
use crate::trace::VideoTrace;

/// Entropy weight, decayed linearly from `start` to `end` over `decay_iters`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_iters: u64,
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self {
            start: beta,
            end: beta,
            decay_iters: 0,
        }
    }

    pub fn at(&self, iteration: u64) -> f64 {
        if iteration >= self.decay_iters {
            return self.end;
        }
        let frac = iteration as f64 / self.decay_iters as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Actor learning rate.
    pub alpha: f64,
    /// Critic learning rate.
    pub alpha_prime: f64,
    pub beta: BetaSchedule,
    pub n_workers: usize,
    pub rollout_len: usize,
    pub max_iterations: u64,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: u64,
    /// Iterations at which to keep an in-memory checkpoint in the outcome.
    pub snapshot_at: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            // rewards are per-chunk; a short horizon keeps the critic's
            // bootstrapped targets small enough for asynchronous SGD
            gamma: 0.5,
            alpha: 1e-4,
            alpha_prime: 3e-5,
            beta: BetaSchedule {
                start: 1.0,
                end: 0.1,
                decay_iters: 50_000,
            },
            n_workers: 16,
            rollout_len: 32,
            max_iterations: 85_000,
            seed: 0,
            hidden_layers: crate::nn::DEFAULT_HIDDEN_LAYERS,
            hidden_units: crate::nn::DEFAULT_HIDDEN_UNITS,
            checkpoint_every: 0,
            snapshot_at: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.alpha > 0.0 && self.alpha_prime > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.n_workers == 0 || self.rollout_len == 0 {
            return bad("n_workers and rollout_len must be >= 1");
        }
        if !(self.beta.start.is_finite() && self.beta.end.is_finite()) {
            return bad("beta must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub wall_ms: u64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub value_loss: f64,
    pub beta: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "iteration,wall_ms,mean_reward,mean_entropy,value_loss,beta";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.wall_ms,
            self.mean_reward,
            self.mean_entropy,
            self.value_loss,
            self.beta
        )
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub snapshots: Vec<(u64, Checkpoint)>,
}

/// The only mutator of parameters. Applies actor gradients by ascent at
/// `alpha`, critic gradients by descent at `alpha_prime`.
struct CentralStore<'a> {
    actor: Arc<NetworkParams>,
    critic: Arc<NetworkParams>,
    iteration: u64,
    config: &'a TrainConfig,
    profile_name: String,
    norm: NormalizationStats,
    metrics: Vec<MetricsRow>,
    snapshots: Vec<(u64, Checkpoint)>,
    started: Instant,
    checkpoint_dir: Option<&'a Path>,
}

impl CentralStore<'_> {
    fn snapshot(&self) -> Snapshot {
        Snapshot {
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            version: self.iteration,
            beta: self.config.beta.at(self.iteration),
        }
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            actor: (*self.actor).clone(),
            critic: (*self.critic).clone(),
            norm: self.norm,
            profile_name: self.profile_name.clone(),
        }
    }

    fn apply(&mut self, update: Result<Update>, beta: f64) -> Result<()> {
        let next = self.iteration + 1;
        let update = update.map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient {
                iteration: Some(next),
            },
            other => other,
        })?;
        let result = apply_gradients(
            Arc::make_mut(&mut self.actor),
            &update.actor,
            self.config.alpha,
            Direction::Ascent,
        )
        .and_then(|_| {
            apply_gradients(
                Arc::make_mut(&mut self.critic),
                &update.critic,
                self.config.alpha_prime,
                Direction::Descent,
            )
        });
        if let Err(e) = result {
            log::error!("update at iteration {next} rejected: {e}");
            return Err(match e {
                Error::NonFiniteGradient { .. } => Error::NonFiniteGradient {
                    iteration: Some(next),
                },
                other => other,
            });
        }
        if !(self.actor.is_finite() && self.critic.is_finite()) {
            log::error!("parameters diverged at iteration {next}");
            return Err(Error::NonFiniteGradient {
                iteration: Some(next),
            });
        }
        self.iteration = next;
        self.record(update.stats, beta)?;
        Ok(())
    }

    fn record(&mut self, stats: UpdateStats, beta: f64) -> Result<()> {
        let it = self.iteration;
        self.metrics.push(MetricsRow {
            iteration: it,
            wall_ms: self.started.elapsed().as_millis() as u64,
            mean_reward: stats.mean_reward,
            mean_entropy: stats.mean_entropy,
            value_loss: stats.value_loss,
            beta,
        });
        if it.is_multiple_of(1000) {
            log::info!(
                "iter {it}: reward {:.3} entropy {:.3} value_loss {:.3} beta {:.3}",
                stats.mean_reward,
                stats.mean_entropy,
                stats.value_loss,
                beta
            );
        }
        if self.config.snapshot_at.contains(&it) {
            self.snapshots.push((it, self.checkpoint()));
        }
        if let Some(dir) = self.checkpoint_dir {
            if self.config.checkpoint_every > 0 && it.is_multiple_of(self.config.checkpoint_every) {
                save_checkpoint(&self.checkpoint(), dir.join(format!("ckpt_{it:06}.afr")))?;
            }
        }
        Ok(())
    }
}

/// Trains an actor-critic pair with `n_workers` learning agents feeding one
/// central store. With one worker everything runs on the calling thread and
/// the run is bit-reproducible from the seed (apart from `wall_ms`).
pub fn train(
    dataset: &[VideoTrace],
    profile: &QoEProfile,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    profile.validate()?;
    let norm = compute_norm_stats(dataset)?;
    let levels = dataset[0].levels();
    if let Some(t) = dataset.iter().find(|t| t.levels() != levels) {
        return Err(Error::invalid(
            "sizes_by_level",
            None,
            format!(
                "trace {} has {} levels, expected {levels}",
                t.video_id,
                t.levels()
            ),
        ));
    }
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let actor = build_network(
        Head::Actor { actions: levels },
        levels,
        config.hidden_layers,
        config.hidden_units,
        config.seed,
    )?;
    let critic = build_network(
        Head::Critic,
        levels,
        config.hidden_layers,
        config.hidden_units,
        config.seed.wrapping_add(0x9e37_79b9),
    )?;

    let traces: Arc<Vec<Arc<VideoTrace>>> =
        Arc::new(dataset.iter().cloned().map(Arc::new).collect());
    let profile_arc = Arc::new(profile.clone());
    let mut workers: Vec<Worker> = (0..config.n_workers)
        .map(|id| {
            Worker::new(
                id,
                traces.clone(),
                profile_arc.clone(),
                norm,
                config.seed,
                config.rollout_len,
                config.gamma,
            )
        })
        .collect();

    let mut store = CentralStore {
        actor: Arc::new(actor),
        critic: Arc::new(critic),
        iteration: 0,
        config,
        profile_name: profile.name.clone(),
        norm,
        metrics: Vec::with_capacity(config.max_iterations as usize),
        snapshots: Vec::new(),
        started: Instant::now(),
        checkpoint_dir,
    };

    if config.n_workers == 1 {
        let worker = &mut workers[0];
        while store.iteration < config.max_iterations {
            let snap = store.snapshot();
            let update = worker.work(&snap);
            store.apply(update, snap.beta)?;
        }
    } else {
        run_parallel(&mut store, workers)?;
    }

    let checkpoint = store.checkpoint();
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&checkpoint, dir.join("final.afr"))?;
        write_metrics_csv(&store.metrics, dir.join("metrics.csv"))?;
        let mut cfg =
            fs::File::create(dir.join("train_config.json")).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(config).expect("config serializes");
        cfg.write_all(text.as_bytes())
            .map_err(|e| Error::io(dir, e))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics: store.metrics,
        snapshots: store.snapshots,
    })
}

/// Workers pull a snapshot, roll out, and push gradients; the store applies
/// whichever update arrives next and hands that worker the newest snapshot.
fn run_parallel(store: &mut CentralStore<'_>, workers: Vec<Worker>) -> Result<()> {
    type Message = (usize, f64, Result<Update>);
    let (grad_tx, grad_rx) = mpsc::channel::<Message>();
    let mut snap_txs = Vec::with_capacity(workers.len());

    std::thread::scope(|scope| {
        for mut worker in workers {
            let (snap_tx, snap_rx) = mpsc::channel::<Snapshot>();
            snap_txs.push(snap_tx);
            let grad_tx = grad_tx.clone();
            scope.spawn(move || {
                while let Ok(snap) = snap_rx.recv() {
                    let update = worker.work(&snap);
                    if grad_tx.send((worker.id, snap.beta, update)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(grad_tx);

        let initial = store.snapshot();
        for tx in &snap_txs {
            let _ = tx.send(initial.clone());
        }
        let mut outcome = Ok(());
        while store.iteration < store.config.max_iterations {
            let Ok((id, beta, update)) = grad_rx.recv() else {
                outcome = Err(Error::Worker("all workers exited".into()));
                break;
            };
            if let Err(e) = store.apply(update, beta) {
                outcome = Err(e);
                break;
            }
            let _ = snap_txs[id].send(store.snapshot());
        }
        // closing the snapshot channels stops every worker after its current rollout
        snap_txs.clear();
        outcome
    })
}
