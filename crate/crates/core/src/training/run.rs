//! Training driver: workers, budgets, metrics and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Checkpoint, ParamSet, ParamStore, RmsProp};

use super::config::TrainConfig;
use super::curriculum::CurriculumState;
use super::model::Model;
use super::worker::{learning_rates, EpisodeSummary, IterationStats, Worker};
use super::TrainError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "worker,size,episode,steps,success,intrinsic_mean";
pub const LOSSES_FILE: &str = "losses.csv";
pub const LOSSES_HEADER: &str = "iteration,env_steps,agent,entropy,vlm,loc_xent,loc_dist,loc_local_map,reward_map";
/// Iterations averaged into one row of the loss log.
const LOSS_WINDOW: u64 = 200;

/// Run metadata stored as the checkpoint's TOML header.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunMeta {
    pub converged: bool,
    pub iterations: u64,
    pub episodes: u64,
    pub env_steps: u64,
    /// Number of times the run was resumed; salts the worker RNG streams.
    pub epoch: u64,
    pub workers: Vec<CurriculumState>,
    pub config: TrainConfig,
}

impl RunMeta {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run metadata serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::Config(format!("checkpoint metadata: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub meta: RunMeta,
    pub checkpoint: PathBuf,
}

/// Loads a checkpoint into a freshly built model.
pub fn load_run(path: &Path) -> Result<(RunMeta, Model, ParamSet, RmsProp), TrainError> {
    let ckpt = Checkpoint::load(path)?;
    let meta = RunMeta::from_toml(&ckpt.meta)?;
    let cfg = &meta.config;
    let (model, mut set) = Model::init(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    ckpt.load_into(&mut set)?;
    let opt = ckpt
        .optimizer(&set, cfg.optim.decay, cfg.optim.eps)
        .unwrap_or_else(|| RmsProp::new(cfg.optim.decay, cfg.optim.eps, &set));
    Ok((meta, model, set, opt))
}

fn save(path: &Path, meta: &RunMeta, set: &ParamSet, opt: &RmsProp) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    Checkpoint::from_params(meta.to_toml(), set, Some(opt)).save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn open_csv(path: &Path, header: &str) -> Result<BufWriter<File>, TrainError> {
    let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(w, "{header}")?;
    }
    Ok(w)
}

pub fn metrics_line(s: &EpisodeSummary) -> String {
    format!("{},{},{},{},{},{:.6}", s.worker, s.size, s.episode, s.steps, u8::from(s.success), s.intrinsic_mean)
}

/// Mutable run totals shared by the worker threads.
struct Shared {
    meta: RunMeta,
    metrics: BufWriter<File>,
    losses: BufWriter<File>,
    loss_sum: [f64; 7],
    error: Option<TrainError>,
}

impl Shared {
    fn budget_left(&self) -> bool {
        let b = &self.meta.config.budget;
        self.meta.env_steps < b.env_steps && self.meta.episodes < b.episodes
    }

    fn record(&mut self, worker: usize, steps: usize, finished: Option<&EpisodeSummary>, curriculum: &CurriculumState, stats: &IterationStats) {
        self.meta.iterations += 1;
        let row = [stats.agent, stats.entropy, stats.vlm, stats.loc_xent, stats.loc_dist, stats.loc_local_map, stats.reward_map];
        self.loss_sum.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        if self.meta.iterations % LOSS_WINDOW == 0 {
            let n = LOSS_WINDOW as f64;
            let cols: Vec<String> = self.loss_sum.iter().map(|v| format!("{:.5}", v / n)).collect();
            if let Err(e) = writeln!(self.losses, "{},{},{}", self.meta.iterations, self.meta.env_steps, cols.join(",")) {
                self.error.get_or_insert(e.into());
            }
            self.loss_sum = [0.0; 7];
        }
        self.meta.env_steps += steps as u64;
        self.meta.workers[worker] = curriculum.clone();
        if let Some(s) = finished {
            self.meta.episodes += 1;
            if let Err(e) = writeln!(self.metrics, "{}", metrics_line(s)) {
                self.error.get_or_insert(e.into());
            }
        }
    }
}

/// Trains from scratch (`resume = None`) or continues a checkpoint. Stops
/// when every worker has passed its last curriculum stage or the budget is
/// spent; the final checkpoint records which.
pub fn train(cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<TrainReport, TrainError> {
    fs::create_dir_all(out)?;
    let (meta, model, set, opt) = match resume {
        Some(path) => {
            let (mut meta, model, set, opt) = load_run(path)?;
            meta.epoch += 1;
            meta.config.budget = cfg.budget;
            (meta, model, set, opt)
        }
        None => {
            cfg.validate()?;
            let (model, set) = Model::init(&cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            let opt = RmsProp::new(cfg.optim.decay, cfg.optim.eps, &set);
            let workers = cfg
                .workers
                .iter()
                .map(|&size| CurriculumState::new(cfg.curriculum.clone(), size).expect("validated start size"))
                .collect();
            let meta = RunMeta { converged: false, iterations: 0, episodes: 0, env_steps: 0, epoch: 0, workers, config: cfg.clone() };
            (meta, model, set, opt)
        }
    };
    fs::write(out.join("config.toml"), meta.config.to_toml())?;
    let cfg = meta.config.clone();
    let lr = learning_rates(&set, &cfg);
    let store = ParamStore::new(set, opt);
    let workers: Vec<Worker> =
        meta.workers.iter().enumerate().map(|(i, c)| Worker::new(i, &cfg, c.clone(), meta.epoch)).collect();
    let checkpoint = out.join(CHECKPOINT_FILE);
    let shared = Mutex::new(Shared {
        meta,
        metrics: open_csv(&out.join(METRICS_FILE), METRICS_HEADER)?,
        losses: open_csv(&out.join(LOSSES_FILE), LOSSES_HEADER)?,
        loss_sum: [0.0; 7],
        error: None,
    });

    let step = |w: &mut Worker, shared: &Mutex<Shared>| -> Result<bool, TrainError> {
        {
            let s = shared.lock().expect("run state poisoned");
            if !s.budget_left() {
                return Ok(false);
            }
        }
        let (rollout, stats, _) = w.train_iteration(&model, &store, &cfg, &lr);
        let mut s = shared.lock().expect("run state poisoned");
        s.record(w.id, rollout.steps.len(), rollout.finished.as_ref(), &w.curriculum, &stats);
        if let Some(e) = s.error.take() {
            return Err(e);
        }
        if cfg.checkpoint_every > 0 && s.meta.iterations % cfg.checkpoint_every == 0 {
            s.metrics.flush()?;
            s.losses.flush()?;
            let (params, _) = store.snapshot();
            save(&checkpoint, &s.meta, &params, &store.optimizer_state())?;
        }
        Ok(true)
    };

    let mut workers = workers;
    if cfg.deterministic {
        'outer: loop {
            let mut active = false;
            for w in workers.iter_mut().filter(|w| !w.done()) {
                active = true;
                if !step(w, &shared)? {
                    break 'outer;
                }
            }
            if !active {
                break;
            }
        }
    } else {
        let stop = AtomicBool::new(false);
        let results: Vec<Result<(), TrainError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| {
                    let (stop, shared, step) = (&stop, &shared, &step);
                    scope.spawn(move || {
                        while !w.done() && !stop.load(Ordering::Relaxed) {
                            match step(w, shared) {
                                Ok(true) => {}
                                Ok(false) => break,
                                Err(e) => {
                                    stop.store(true, Ordering::Relaxed);
                                    return Err(e);
                                }
                            }
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>, _>>()?;
    }

    let mut s = shared.into_inner().expect("run state poisoned");
    s.meta.converged = s.meta.workers.iter().all(|c| c.done);
    s.metrics.flush()?;
    s.losses.flush()?;
    let (params, _) = store.snapshot();
    save(&checkpoint, &s.meta, &params, &store.optimizer_state())?;
    Ok(TrainReport { meta: s.meta, checkpoint })
}
