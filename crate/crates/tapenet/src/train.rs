//! The training loop. Two execution modes share the learner: a synchronous
//! single-actor mode that is bit-reproducible under a fixed seed, and an
//! asynchronous mode where data-collector threads roll episodes against
//! parameter snapshots and feed a bounded queue that never blocks them
//! (oldest traces are dropped on overflow).

use std::collections::VecDeque;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use tapenet_core::curriculum::{curriculum_level, sample_difficulty, CurriculumSchedule};
use tapenet_core::dataset::{build_eval_set, EvalDataset};
use tapenet_core::task::{generate, TaskKind};
use tapenet_nn::{
    save_checkpoint, AblationFlags, AdamConfig, AdamState, ContextSpec, NnError, ParamStore,
    PolicyNet, Scalar,
};

use crate::config::{checkpoint_header, Dtype, RewardScheme, TrainConfig};
use crate::eval::{dataset_seed, evaluate_policy, BestTracker};
use crate::learner::{policy_gradient_update, LossWeights, UpdateStats};
use crate::rollout::{run_episode, EpisodeTrace, PolicyController};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Task(#[from] tapenet_core::task::TaskError),
    #[error(transparent)]
    Machine(#[from] tapenet_core::machine::MachineError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub skipped_updates: u64,
    pub queue_dropped: u64,
    pub stale_dropped: u64,
    pub final_checkpoint: PathBuf,
    /// Best observed success rate per evaluation length.
    pub best_rates: Vec<(usize, Option<f64>)>,
}

#[derive(Serialize)]
struct TrainRecord {
    r#type: &'static str,
    step: u64,
    level: usize,
    updates: u64,
    episodes: u64,
    mean_return: f64,
    success_rate: f64,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    loss: f64,
    grad_norm: f64,
    staleness_max: u64,
    version_lag_max: u64,
    queue_dropped: u64,
    stale_dropped: u64,
    skipped_updates: u64,
}

#[derive(Serialize)]
struct EvalLogRecord {
    r#type: &'static str,
    step: u64,
    length: usize,
    rate: f64,
    best: f64,
    version: u64,
}

/// Rolling success/return window over recent episodes.
struct RecentWindow {
    successes: VecDeque<bool>,
    cap: usize,
}

impl RecentWindow {
    fn new(cap: usize) -> Self {
        RecentWindow {
            successes: VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, success: bool) {
        if self.successes.len() == self.cap {
            self.successes.pop_front();
        }
        self.successes.push_back(success);
    }

    fn rate(&self) -> f64 {
        if self.successes.is_empty() {
            return 0.0;
        }
        self.successes.iter().filter(|&&s| s).count() as f64 / self.successes.len() as f64
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn eval_rng(eval_seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(eval_seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Entry point: dispatches on the configured scalar type.
pub fn train(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    match config.dtype_kind()? {
        Dtype::F64 => train_with::<f64>(config, out_dir),
        Dtype::F32 => train_with::<f32>(config, out_dir),
    }
}

struct Setup {
    kind: TaskKind,
    spec: ContextSpec,
    net: PolicyNet,
    flags: AblationFlags,
    scheme: RewardScheme,
    schedule: CurriculumSchedule,
    weights: LossWeights,
    eval_sets: Vec<EvalDataset>,
}

fn setup(config: &TrainConfig) -> Result<Setup, TrainError> {
    let kind = config.task_kind()?;
    let spec = config.context_spec()?;
    let net = config.policy_net()?;
    let eval_sets = config
        .eval_lengths
        .iter()
        .map(|&len| build_eval_set(kind, len, dataset_seed(config.eval_seed, len)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Setup {
        kind,
        spec,
        net,
        flags: config.ablation.flags(),
        scheme: config.reward_scheme()?,
        schedule: config.curriculum.schedule(),
        weights: LossWeights {
            gamma: config.gamma,
            value_weight: config.value_weight,
            entropy_weight: config.entropy_weight,
            max_grad_norm: config.max_grad_norm,
        },
        eval_sets,
    })
}

fn train_with<S: Scalar>(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome, TrainError> {
    fs::create_dir_all(out_dir)?;
    if config.actors == 0 {
        train_sync::<S>(config, out_dir)
    } else {
        train_async::<S>(config, out_dir)
    }
}

fn write_record(log: &mut impl std::io::Write, record: &impl Serialize) -> Result<(), TrainError> {
    let line = serde_json::to_string(record).expect("log record serializes");
    writeln!(log, "{line}")?;
    Ok(())
}

fn save_ckpt<S: Scalar>(
    out_dir: &Path,
    name: &str,
    config: &TrainConfig,
    net: &PolicyNet,
    store: &ParamStore<S>,
    version: u64,
    env_steps: u64,
) -> Result<PathBuf, TrainError> {
    let path = out_dir.join(name);
    let header = checkpoint_header(config, net, version, env_steps);
    save_checkpoint(&path, store, &header)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Synchronous mode: one actor, one learner, one thread, fully reproducible.
// ---------------------------------------------------------------------------

fn train_sync<S: Scalar>(config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome, TrainError> {
    let s = setup(config)?;
    let mut store: ParamStore<S> = s.net.init_params(&mut stream_rng(config.seed, 0));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &store);
    let mut task_rng = stream_rng(config.seed, 1);
    let mut sample_rng = stream_rng(config.seed, 2);
    let mut log = fs::File::create(out_dir.join("train.jsonl"))?;

    let mut best: Vec<BestTracker> = s.eval_sets.iter().map(|_| BestTracker::new()).collect();
    let mut window = RecentWindow::new(100);
    let mut env_steps: u64 = 0;
    let mut updates: u64 = 0;
    let mut episodes: u64 = 0;
    let mut skipped_updates: u64 = 0;
    let mut version: u64 = 0;
    let mut next_eval = config.eval_interval;
    let mut next_ckpt = config.checkpoint_interval;
    let early_stop = |best: &[BestTracker]| {
        config.early_stop_rate > 0.0
            && best.first().and_then(|b| b.best()).unwrap_or(0.0) >= config.early_stop_rate
    };

    while env_steps < config.steps && !early_stop(&best) {
        let level = curriculum_level(env_steps, &s.schedule);
        let mut batch: Vec<EpisodeTrace<S>> = Vec::with_capacity(config.batch_episodes);
        for _ in 0..config.batch_episodes {
            let n = sample_difficulty(level, &mut task_rng);
            let instance = generate(s.kind, n, &mut task_rng)?;
            let mut ctrl = PolicyController::new(&s.net, &store, &mut sample_rng, false);
            let mut trace = run_episode(
                &mut ctrl,
                &instance,
                &s.spec,
                s.flags,
                config.t_max_multiplier,
            )?;
            trace.assign_rewards(&instance, s.scheme);
            env_steps += trace.len() as u64;
            episodes += 1;
            window.push(trace.success);
            batch.push(trace);
        }

        let stats = match policy_gradient_update(&s.net, &mut store, &mut adam, &batch, s.weights) {
            Ok(stats) => {
                updates += 1;
                version += 1;
                stats
            }
            Err(NnError::NonFinite { .. }) => {
                skipped_updates += 1;
                UpdateStats {
                    episodes: batch.len(),
                    ..Default::default()
                }
            }
            Err(err) => return Err(err.into()),
        };

        write_record(
            &mut log,
            &TrainRecord {
                r#type: "train",
                step: env_steps,
                level,
                updates,
                episodes,
                mean_return: stats.mean_return,
                success_rate: window.rate(),
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                loss: stats.loss,
                grad_norm: stats.grad_norm,
                staleness_max: 0,
                version_lag_max: 0,
                queue_dropped: 0,
                stale_dropped: 0,
                skipped_updates,
            },
        )?;

        while env_steps >= next_eval {
            for (i, dataset) in s.eval_sets.iter().enumerate() {
                let mut rng = eval_rng(config.eval_seed, next_eval ^ dataset.length as u64);
                let report = evaluate_policy(
                    &s.net,
                    &store,
                    dataset,
                    s.flags,
                    config.t_max_multiplier,
                    config.greedy_eval,
                    &mut rng,
                    version,
                );
                let best_now = best[i].observe(report.rate);
                write_record(
                    &mut log,
                    &EvalLogRecord {
                        r#type: "eval",
                        step: env_steps,
                        length: dataset.length,
                        rate: report.rate,
                        best: best_now,
                        version,
                    },
                )?;
            }
            next_eval += config.eval_interval;
        }
        while env_steps >= next_ckpt {
            save_ckpt(
                out_dir,
                &format!("checkpoint_{next_ckpt}.ckpt"),
                config,
                &s.net,
                &store,
                version,
                env_steps,
            )?;
            next_ckpt += config.checkpoint_interval;
        }
    }

    let final_checkpoint = save_ckpt(
        out_dir,
        "final.ckpt",
        config,
        &s.net,
        &store,
        version,
        env_steps,
    )?;
    log.flush()?;
    Ok(TrainOutcome {
        env_steps,
        updates,
        episodes,
        skipped_updates,
        queue_dropped: 0,
        stale_dropped: 0,
        final_checkpoint,
        best_rates: config
            .eval_lengths
            .iter()
            .zip(&best)
            .map(|(&l, b)| (l, b.best()))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Asynchronous mode: actor threads -> bounded queue -> learner, plus a
// separate evaluator thread fed with parameter snapshots.
// ---------------------------------------------------------------------------

struct Snapshot<S: Scalar> {
    version: u64,
    store: ParamStore<S>,
    /// Learner's consumed-episode counter at publish time; the staleness of
    /// a trace is measured against it.
    published_at_consumed: u64,
}

struct Tagged<S: Scalar> {
    trace: EpisodeTrace<S>,
    version: u64,
    published_at_consumed: u64,
}

struct QueueInner<S: Scalar> {
    items: VecDeque<Tagged<S>>,
    dropped: u64,
    closed: bool,
}

/// Multi-producer single-consumer bounded queue. Producers never block: on
/// overflow the oldest trace is dropped and counted.
struct TraceQueue<S: Scalar> {
    inner: Mutex<QueueInner<S>>,
    available: Condvar,
    capacity: usize,
}

impl<S: Scalar> TraceQueue<S> {
    fn new(capacity: usize) -> Self {
        TraceQueue {
            inner: Mutex::new(QueueInner {
                items: VecDeque::new(),
                dropped: 0,
                closed: false,
            }),
            available: Condvar::new(),
            capacity,
        }
    }

    fn push(&self, item: Tagged<S>) {
        let mut inner = self.inner.lock().unwrap();
        if inner.items.len() == self.capacity {
            inner.items.pop_front();
            inner.dropped += 1;
        }
        inner.items.push_back(item);
        drop(inner);
        self.available.notify_one();
    }

    /// Block for the first item, then drain up to `max` without waiting.
    fn pop_batch(&self, max: usize) -> Vec<Tagged<S>> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if !inner.items.is_empty() {
                let take = inner.items.len().min(max);
                return inner.items.drain(..take).collect();
            }
            if inner.closed {
                return Vec::new();
            }
            inner = self.available.wait(inner).unwrap();
        }
    }

    fn dropped(&self) -> u64 {
        self.inner.lock().unwrap().dropped
    }

    fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.available.notify_all();
    }
}

struct EvalJob<S: Scalar> {
    step: u64,
    version: u64,
    store: ParamStore<S>,
}

struct EvalDone {
    step: u64,
    length: usize,
    rate: f64,
    version: u64,
}

fn train_async<S: Scalar>(
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome, TrainError> {
    let s = setup(config)?;
    let mut store: ParamStore<S> = s.net.init_params(&mut stream_rng(config.seed, 0));
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), &store);
    let mut log = fs::File::create(out_dir.join("train.jsonl"))?;

    let stop = Arc::new(AtomicBool::new(false));
    let env_steps = Arc::new(AtomicU64::new(0));
    let queue: Arc<TraceQueue<S>> = Arc::new(TraceQueue::new(config.queue_capacity));
    let snapshot = Arc::new(RwLock::new(Arc::new(Snapshot {
        version: 0,
        store: store.clone(),
        published_at_consumed: 0,
    })));

    // Evaluator thread: consumes snapshots, returns rates.
    let (job_tx, job_rx) = mpsc::channel::<EvalJob<S>>();
    let (done_tx, done_rx) = mpsc::channel::<EvalDone>();
    let eval_thread = {
        let net = s.net.clone();
        let eval_sets = s.eval_sets.clone();
        let flags = s.flags;
        let t_max = config.t_max_multiplier;
        let greedy = config.greedy_eval;
        let eval_seed = config.eval_seed;
        std::thread::spawn(move || {
            for job in job_rx {
                for dataset in &eval_sets {
                    let mut rng = eval_rng(eval_seed, job.step ^ dataset.length as u64);
                    let report = evaluate_policy(
                        &net,
                        &job.store,
                        dataset,
                        flags,
                        t_max,
                        greedy,
                        &mut rng,
                        job.version,
                    );
                    let done = EvalDone {
                        step: job.step,
                        length: dataset.length,
                        rate: report.rate,
                        version: job.version,
                    };
                    if done_tx.send(done).is_err() {
                        return;
                    }
                }
            }
        })
    };

    // Actor threads.
    let mut actors = Vec::new();
    for actor_id in 0..config.actors {
        let stop = Arc::clone(&stop);
        let env_steps = Arc::clone(&env_steps);
        let queue = Arc::clone(&queue);
        let snapshot = Arc::clone(&snapshot);
        let kind = s.kind;
        let spec = s.spec.clone();
        let net = s.net.clone();
        let flags = s.flags;
        let scheme = s.scheme;
        let schedule = s.schedule;
        let t_max = config.t_max_multiplier;
        let seed = config.seed;
        actors.push(std::thread::spawn(move || {
            let mut rng = stream_rng(seed, 100 + actor_id as u64);
            while !stop.load(Ordering::Relaxed) {
                let snap = Arc::clone(&*snapshot.read().unwrap());
                let level = curriculum_level(env_steps.load(Ordering::Relaxed), &schedule);
                let n = sample_difficulty(level, &mut rng);
                let instance = generate(kind, n, &mut rng).expect("n >= 1");
                let mut ctrl = PolicyController::new(&net, &snap.store, &mut rng, false);
                let mut trace = match run_episode(&mut ctrl, &instance, &spec, flags, t_max) {
                    Ok(trace) => trace,
                    Err(_) => continue,
                };
                trace.assign_rewards(&instance, scheme);
                queue.push(Tagged {
                    trace,
                    version: snap.version,
                    published_at_consumed: snap.published_at_consumed,
                });
            }
        }));
    }

    // Learner.
    let mut best: Vec<BestTracker> = s.eval_sets.iter().map(|_| BestTracker::new()).collect();
    let mut window = RecentWindow::new(100);
    let mut consumed: u64 = 0;
    let mut stale_dropped: u64 = 0;
    let mut updates: u64 = 0;
    let mut episodes: u64 = 0;
    let mut skipped_updates: u64 = 0;
    let mut version: u64 = 0;
    let mut next_eval = config.eval_interval;
    let mut next_ckpt = config.checkpoint_interval;
    let staleness_bound = (config.queue_capacity + config.batch_episodes) as u64;
    let early_stop = |best: &[BestTracker]| {
        config.early_stop_rate > 0.0
            && best.first().and_then(|b| b.best()).unwrap_or(0.0) >= config.early_stop_rate
    };

    while env_steps.load(Ordering::Relaxed) < config.steps && !early_stop(&best) {
        let tagged = queue.pop_batch(config.batch_episodes);
        if tagged.is_empty() {
            break; // queue closed
        }
        let mut batch = Vec::with_capacity(tagged.len());
        let mut staleness_max = 0u64;
        let mut version_lag_max = 0u64;
        for t in tagged {
            consumed += 1;
            let staleness = consumed.saturating_sub(t.published_at_consumed);
            // A trace more than (queue capacity + batch) episodes old is off
            // policy beyond the contract; discard it.
            if staleness > staleness_bound {
                stale_dropped += 1;
                continue;
            }
            staleness_max = staleness_max.max(staleness);
            version_lag_max = version_lag_max.max(version.saturating_sub(t.version));
            batch.push(t.trace);
        }
        if batch.is_empty() {
            continue;
        }
        let steps_in_batch: u64 = batch.iter().map(|t| t.len() as u64).sum();
        episodes += batch.len() as u64;
        for trace in &batch {
            window.push(trace.success);
        }
        let step_now = env_steps.fetch_add(steps_in_batch, Ordering::Relaxed) + steps_in_batch;
        let level = curriculum_level(step_now, &s.schedule);

        let stats = match policy_gradient_update(&s.net, &mut store, &mut adam, &batch, s.weights) {
            Ok(stats) => {
                updates += 1;
                version += 1;
                *snapshot.write().unwrap() = Arc::new(Snapshot {
                    version,
                    store: store.clone(),
                    published_at_consumed: consumed,
                });
                stats
            }
            Err(NnError::NonFinite { .. }) => {
                skipped_updates += 1;
                UpdateStats {
                    episodes: batch.len(),
                    ..Default::default()
                }
            }
            Err(err) => {
                stop.store(true, Ordering::Relaxed);
                queue.close();
                for a in actors {
                    let _ = a.join();
                }
                return Err(err.into());
            }
        };

        write_record(
            &mut log,
            &TrainRecord {
                r#type: "train",
                step: step_now,
                level,
                updates,
                episodes,
                mean_return: stats.mean_return,
                success_rate: window.rate(),
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                loss: stats.loss,
                grad_norm: stats.grad_norm,
                staleness_max,
                version_lag_max,
                queue_dropped: queue.dropped(),
                stale_dropped,
                skipped_updates,
            },
        )?;

        while step_now >= next_eval {
            let _ = job_tx.send(EvalJob {
                step: step_now,
                version,
                store: store.clone(),
            });
            next_eval += config.eval_interval;
        }
        for done in done_rx.try_iter() {
            let idx = config
                .eval_lengths
                .iter()
                .position(|&l| l == done.length)
                .unwrap_or(0);
            let best_now = best[idx].observe(done.rate);
            write_record(
                &mut log,
                &EvalLogRecord {
                    r#type: "eval",
                    step: done.step,
                    length: done.length,
                    rate: done.rate,
                    best: best_now,
                    version: done.version,
                },
            )?;
        }
        while step_now >= next_ckpt {
            save_ckpt(
                out_dir,
                &format!("checkpoint_{next_ckpt}.ckpt"),
                config,
                &s.net,
                &store,
                version,
                step_now,
            )?;
            next_ckpt += config.checkpoint_interval;
        }
    }

    stop.store(true, Ordering::Relaxed);
    queue.close();
    for a in actors {
        let _ = a.join();
    }
    drop(job_tx);
    // Drain outstanding evaluation results before finishing.
    for done in done_rx.iter() {
        let idx = config
            .eval_lengths
            .iter()
            .position(|&l| l == done.length)
            .unwrap_or(0);
        let best_now = best[idx].observe(done.rate);
        write_record(
            &mut log,
            &EvalLogRecord {
                r#type: "eval",
                step: done.step,
                length: done.length,
                rate: done.rate,
                best: best_now,
                version: done.version,
            },
        )?;
    }
    let _ = eval_thread.join();

    let final_steps = env_steps.load(Ordering::Relaxed);
    let final_checkpoint = save_ckpt(
        out_dir,
        "final.ckpt",
        config,
        &s.net,
        &store,
        version,
        final_steps,
    )?;
    log.flush()?;
    Ok(TrainOutcome {
        env_steps: final_steps,
        updates,
        episodes,
        skipped_updates,
        queue_dropped: queue.dropped(),
        stale_dropped,
        final_checkpoint,
        best_rates: config
            .eval_lengths
            .iter()
            .zip(&best)
            .map(|(&l, b)| (l, b.best()))
            .collect(),
    })
}
