//! The outer loop: self-play, then optimization, once per iteration, with a
//! checkpoint, a game log, restart-store snapshots and a metrics row each time.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml
//! metrics.csv
//! ckpt_{i}.json            i = 0 is the initial network
//! games/games_{i}.jsonl
//! archives/store_{i}_w{w}.json
//! freeze_report.json       only for runs continued from an AlphaZero checkpoint
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archives::{ArchiveError, RestartConfig, RestartStore, Snapshot};
use crate::config::{ConfigError, Method, RunConfig};
use crate::net::{model_hash, Checkpoint, Head, LossWeights, Losses, NetError, Network};
use crate::regret::Opening;
use crate::selfplay::{self, GameRecord, ReplayBuffer, SelfPlayError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    SelfPlay(#[from] SelfPlayError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Resume(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const METRICS_FILE: &str = "metrics.csv";

pub fn checkpoint_path(dir: &Path, iteration: u32) -> PathBuf {
    dir.join(format!("ckpt_{iteration}.json"))
}

pub fn games_path(dir: &Path, iteration: u32) -> PathBuf {
    dir.join("games").join(format!("games_{iteration}.jsonl"))
}

pub fn store_path(dir: &Path, iteration: u32, worker: usize) -> PathBuf {
    dir.join("archives").join(format!("store_{iteration}_w{worker}.json"))
}

/// Highest-numbered checkpoint in a run directory.
pub fn latest_checkpoint(dir: &Path) -> Option<(u32, PathBuf)> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            let i = name.strip_prefix("ckpt_")?.strip_suffix(".json")?.parse().ok()?;
            Some((i, dir.join(name)))
        })
        .max_by_key(|(i, _)| *i)
}

pub fn load_games(dir: &Path, iteration: u32) -> Result<Vec<GameRecord>, TrainError> {
    let file = fs::File::open(games_path(dir, iteration))?;
    Ok(selfplay::read_games(BufReader::new(file))?)
}

pub fn load_store(dir: &Path, iteration: u32, worker: usize) -> Result<RestartStore, TrainError> {
    let text = fs::read_to_string(store_path(dir, iteration, worker))?;
    let snap: Snapshot = serde_json::from_str(&text).map_err(|e| TrainError::Resume(e.to_string()))?;
    Ok(RestartStore::restore(snap)?)
}

/// One row of the metrics CSV. Buffer columns are empty when the method has
/// no restart store (and regret columns when the store holds no regrets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: u32,
    pub games: usize,
    pub states: usize,
    pub mean_game_length: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub loss_regret: f64,
    pub loss_rank: f64,
    pub loss_total: f64,
    pub buffer_size: Option<usize>,
    pub buffer_mean_regret: Option<f64>,
    pub buffer_evictions: Option<usize>,
    pub buffer_open_fraction: Option<f64>,
}

pub fn read_metrics(dir: &Path) -> Result<Vec<Metrics>, TrainError> {
    let mut reader = csv::Reader::from_path(dir.join(METRICS_FILE))?;
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}

fn write_metrics(dir: &Path, rows: &[Metrics]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "games",
            "states",
            "mean_game_length",
            "loss_policy",
            "loss_value",
            "loss_regret",
            "loss_rank",
            "loss_total",
            "buffer_size",
            "buffer_mean_regret",
            "buffer_evictions",
            "buffer_open_fraction",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Init,
    SelfPlay { iteration: u32, worker: usize },
    Train { iteration: u32 },
    Warmup { worker: usize },
    Freeze,
}

fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(match stream {
        Stream::Init => 0,
        Stream::SelfPlay { iteration, worker } => (1 << 60) | ((iteration as u64) << 20) | worker as u64,
        Stream::Train { iteration } => (2 << 60) | iteration as u64,
        Stream::Warmup { worker } => (3 << 60) | worker as u64,
        Stream::Freeze => 4 << 60,
    });
    r
}

fn quota(total: usize, workers: usize, worker: usize) -> usize {
    total / workers + usize::from(worker < total % workers)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FreezeReport {
    pub games: usize,
    pub steps: usize,
    pub heldout_groups: usize,
    /// Mean ranking loss per held-out game before and after training.
    pub heldout_rank_before: Option<f64>,
    pub heldout_rank_after: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub iteration: u32,
    pub checkpoint: PathBuf,
}

struct Trainer {
    cfg: RunConfig,
    dir: PathBuf,
    net: Network<f32>,
    velocity: Vec<f32>,
    replay: ReplayBuffer,
    stores: Vec<RestartStore>,
    iteration: u32,
    metrics: Vec<Metrics>,
    pool: rayon::ThreadPool,
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, TrainError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| TrainError::Resume(format!("cannot start worker threads: {e}")))
}

fn fresh_stores(cfg: &RunConfig) -> Result<Vec<RestartStore>, TrainError> {
    (0..cfg.workers).map(|_| Ok(cfg.restart().build()?)).collect()
}

impl Trainer {
    fn method_has_store(&self) -> bool {
        !matches!(self.cfg.restart(), RestartConfig::InitialOnly)
    }

    fn prepare_dir(dir: &Path) -> Result<(), TrainError> {
        if dir.join(METRICS_FILE).exists() {
            return Err(TrainError::Resume(format!(
                "{} already holds a run; resume from one of its checkpoints instead",
                dir.display()
            )));
        }
        fs::create_dir_all(dir.join("games"))?;
        fs::create_dir_all(dir.join("archives"))?;
        Ok(())
    }

    /// New run starting from `net` (ckpt_0 is written immediately).
    fn start(cfg: &RunConfig, dir: &Path, net: Network<f32>, threads: usize) -> Result<Self, TrainError> {
        Self::prepare_dir(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let velocity = vec![0.0; net.param_count()];
        let mut t = Trainer {
            cfg: cfg.clone(),
            dir: dir.to_path_buf(),
            net,
            velocity,
            replay: ReplayBuffer::new(cfg.replay_window),
            stores: fresh_stores(cfg)?,
            iteration: 0,
            metrics: Vec::new(),
            pool: pool(threads)?,
        };
        t.warmup()?;
        t.save()?;
        write_metrics(&t.dir, &t.metrics)?;
        Ok(t)
    }

    fn warmup(&mut self) -> Result<(), TrainError> {
        if self.cfg.warmup_games == 0 || !self.method_has_store() {
            return Ok(());
        }
        let (cfg, net) = (&self.cfg, &self.net);
        let sp = cfg.selfplay();
        self.pool.install(|| {
            self.stores.par_iter_mut().enumerate().try_for_each(|(w, store)| {
                let mut r = rng(cfg.seed, Stream::Warmup { worker: w });
                for _ in 0..quota(cfg.warmup_games, cfg.workers, w) {
                    selfplay::play_game(net, store, &sp, &mut r)?;
                }
                Ok::<_, SelfPlayError>(())
            })
        })?;
        info!("warm-up: {} games fed the restart stores", self.cfg.warmup_games);
        Ok(())
    }

    fn save(&self) -> Result<(), TrainError> {
        let ckpt = Checkpoint::new(&self.net, &self.velocity, &self.cfg.hash(), self.cfg.method.name(), self.iteration);
        if self.method_has_store() {
            for (w, store) in self.stores.iter().enumerate() {
                let text = serde_json::to_string(&store.snapshot()).expect("snapshot serializes");
                let path = store_path(&self.dir, self.iteration, w);
                let tmp = path.with_extension("json.tmp");
                fs::write(&tmp, text)?;
                fs::rename(&tmp, &path)?;
            }
        }
        // the checkpoint goes last: its presence marks the iteration complete
        ckpt.save(&checkpoint_path(&self.dir, self.iteration))?;
        Ok(())
    }

    fn restore(cfg: &RunConfig, ckpt_path: &Path, threads: usize) -> Result<Self, TrainError> {
        let ckpt = Checkpoint::load_matching(ckpt_path, &cfg.hash())?;
        let dir = ckpt_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let k = ckpt.iteration;
        let mut replay = ReplayBuffer::new(cfg.replay_window);
        let first = (k as usize + 1).saturating_sub(cfg.replay_window).max(1) as u32;
        for i in first..=k {
            replay.push_iteration(i, load_games(&dir, i)?);
        }
        let stores = if matches!(cfg.restart(), RestartConfig::InitialOnly) {
            fresh_stores(cfg)?
        } else {
            (0..cfg.workers).map(|w| load_store(&dir, k, w)).collect::<Result<_, _>>()?
        };
        let mut metrics = read_metrics(&dir)?;
        metrics.retain(|m| m.iteration <= k);
        if metrics.len() != k as usize {
            return Err(TrainError::Resume(format!(
                "{} has {} metrics rows up to iteration {k}",
                dir.display(),
                metrics.len()
            )));
        }
        write_metrics(&dir, &metrics)?;
        Ok(Trainer {
            cfg: cfg.clone(),
            net: ckpt.network()?,
            velocity: ckpt.velocity,
            replay,
            stores,
            iteration: k,
            metrics,
            pool: pool(threads)?,
            dir,
        })
    }

    fn step(&mut self) -> Result<(), TrainError> {
        let iteration = self.iteration + 1;
        let (cfg, net) = (&self.cfg, &self.net);
        let sp = cfg.selfplay();
        let per_worker: Vec<Vec<GameRecord>> = self.pool.install(|| {
            self.stores
                .par_iter_mut()
                .enumerate()
                .map(|(w, store)| {
                    let mut r = rng(cfg.seed, Stream::SelfPlay { iteration, worker: w });
                    selfplay::play_until(net, store, &sp, quota(cfg.states_per_iteration, cfg.workers, w), iteration, w as u32, &mut r)
                })
                .collect::<Result<_, _>>()
        })?;
        let games: Vec<GameRecord> = per_worker.into_iter().flatten().collect();

        let mut file = fs::File::create(games_path(&self.dir, iteration))?;
        selfplay::write_games(&mut file, &games)?;

        let n_games = games.len();
        let states: usize = games.iter().map(|g| g.samples).sum();
        let mean_len = games.iter().map(|g| g.trajectory.len()).sum::<usize>() as f64 / n_games as f64;
        let opened = games.iter().filter(|g| g.trajectory.opening != Opening::InitialState).count();
        self.replay.push_iteration(iteration, games);

        let weights = cfg.effective_loss();
        let mut r = rng(cfg.seed, Stream::Train { iteration });
        let batches = self.replay.make_batches(cfg.batch_size, cfg.optimization_steps, &mut r)?;
        let mut sum = Losses::default();
        for batch in &batches {
            let (losses, grad) = self.net.loss_and_grads(batch, &weights)?;
            cfg.optimizer.step(self.net.params_mut(), &mut self.velocity, &grad)?;
            sum.policy += losses.policy;
            sum.value += losses.value;
            sum.regret += losses.regret;
            sum.rank += losses.rank;
            sum.total += losses.total;
        }
        let n = batches.len().max(1) as f64;

        let (size, mean_regret, evictions) = match self.cfg.method {
            Method::AlphaZero => (None, None, None),
            Method::Gevc | Method::Gesc => {
                let size = self
                    .stores
                    .iter()
                    .map(|s| match s {
                        RestartStore::Gevc(f) | RestartStore::Gesc(f) => f.len(),
                        _ => 0,
                    })
                    .sum();
                (Some(size), None, None)
            }
            Method::Rgsc => {
                let prbs: Vec<_> = self.stores.iter().filter_map(RestartStore::prb).collect();
                let size: usize = prbs.iter().map(|p| p.len()).sum();
                let total: f64 = prbs.iter().flat_map(|p| p.entries()).map(|e| e.regret).sum();
                let evictions = prbs.iter().map(|p| p.evictions().len()).sum();
                (Some(size), (size > 0).then(|| total / size as f64), Some(evictions))
            }
        };
        self.iteration = iteration;
        self.metrics.push(Metrics {
            iteration,
            games: n_games,
            states,
            mean_game_length: mean_len,
            loss_policy: sum.policy / n,
            loss_value: sum.value / n,
            loss_regret: sum.regret / n,
            loss_rank: sum.rank / n,
            loss_total: sum.total / n,
            buffer_size: size,
            buffer_mean_regret: mean_regret,
            buffer_evictions: evictions,
            buffer_open_fraction: (self.cfg.method != Method::AlphaZero).then(|| opened as f64 / n_games as f64),
        });
        self.save()?;
        write_metrics(&self.dir, &self.metrics)?;
        info!(
            "iteration {iteration}: {n_games} games, mean length {mean_len:.2}, loss {:.4}",
            sum.total / n
        );
        Ok(())
    }

    fn run_to(mut self, iterations: u32) -> Result<RunSummary, TrainError> {
        while self.iteration < iterations {
            self.step()?;
        }
        Ok(RunSummary {
            checkpoint: checkpoint_path(&self.dir, self.iteration),
            dir: self.dir,
            iteration: self.iteration,
        })
    }
}

/// Trains from a fresh random network.
pub fn run(cfg: &RunConfig, dir: &Path, threads: usize) -> Result<RunSummary, TrainError> {
    cfg.validate()?;
    for w in cfg.warnings() {
        warn!("{w}");
    }
    let net = Network::random(cfg.net, cfg.game, &mut rng(cfg.seed, Stream::Init));
    Trainer::start(cfg, dir, net, threads)?.run_to(cfg.iterations)
}

/// Continues from a checkpoint. A checkpoint of the same configuration
/// continues its own run directory up to `cfg.iterations`. An AlphaZero
/// checkpoint continued with `method = "rgsc"` first trains the regret heads
/// with everything else frozen, then starts a new run in `new_dir`.
pub fn resume(cfg: &RunConfig, ckpt_path: &Path, new_dir: &Path, threads: usize) -> Result<RunSummary, TrainError> {
    cfg.validate()?;
    for w in cfg.warnings() {
        warn!("{w}");
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    if ckpt.method == Method::AlphaZero.name() && cfg.method == Method::Rgsc {
        if ckpt.model_hash != model_hash(&cfg.net, cfg.game) {
            return Err(TrainError::Resume(format!(
                "{} holds a different game or network topology than the config",
                ckpt_path.display()
            )));
        }
        let (net, report) = freeze_heads_phase(cfg, &ckpt.network()?, threads)?;
        info!("regret heads trained: {report:?}");
        let trainer = Trainer::start(cfg, new_dir, net, threads)?;
        fs::write(
            new_dir.join("freeze_report.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        return trainer.run_to(cfg.iterations);
    }
    if ckpt.method != cfg.method.name() {
        return Err(TrainError::Resume(format!(
            "checkpoint was trained with {} and cannot be continued as {}",
            ckpt.method, cfg.method
        )));
    }
    Trainer::restore(cfg, ckpt_path, threads)?.run_to(cfg.iterations)
}

/// Trains only the regret-value and ranking heads of `base` on fresh
/// self-play games; every other parameter is left bit-identical.
pub fn freeze_heads_phase(cfg: &RunConfig, base: &Network<f32>, threads: usize) -> Result<(Network<f32>, FreezeReport), TrainError> {
    let fz = cfg.freeze;
    let mut net = base.clone();
    let mut report = FreezeReport {
        games: fz.games,
        steps: fz.steps,
        heldout_groups: 0,
        heldout_rank_before: None,
        heldout_rank_after: None,
    };
    if fz.steps == 0 || fz.games == 0 {
        return Ok((net, report));
    }
    let sp = cfg.selfplay();
    let per_worker: Vec<Vec<GameRecord>> = pool(threads)?.install(|| {
        (0..cfg.workers)
            .into_par_iter()
            .map(|w| {
                let mut r = rng(cfg.seed, Stream::Warmup { worker: w + (1 << 16) });
                let mut store = RestartStore::InitialOnly;
                (0..quota(fz.games, cfg.workers, w))
                    .map(|_| selfplay::play_game(base, &mut store, &sp, &mut r).map(|(g, _)| g))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()
    })?;
    let games: Vec<GameRecord> = per_worker.into_iter().flatten().collect();
    let held = ((games.len() as f64) * fz.holdout).round() as usize;
    let (train_games, held_games) = games.split_at(games.len() - held);

    let mut train = ReplayBuffer::new(1);
    train.push_iteration(0, train_games.to_vec());
    let mut heldout = ReplayBuffer::new(1);
    heldout.push_iteration(0, held_games.to_vec());
    let held_batch = heldout.full_batch()?;
    report.heldout_groups = held_batch.groups.len();
    let weights = LossWeights {
        policy: 0.0,
        value: 0.0,
        regret: cfg.loss.regret,
        rank: cfg.loss.rank,
    };
    let held_rank = |net: &Network<f32>| -> Result<Option<f64>, TrainError> {
        if held_batch.groups.is_empty() {
            return Ok(None);
        }
        Ok(Some(net.losses(&held_batch, &weights)?.rank))
    };
    report.heldout_rank_before = held_rank(&net)?;

    let ranges = [net.head_range(Head::RegretValue), net.head_range(Head::Ranking)];
    let mut velocity = vec![0.0f32; net.param_count()];
    let mut r = rng(cfg.seed, Stream::Freeze);
    for batch in train.make_batches(cfg.batch_size, fz.steps, &mut r)? {
        let (_, grad) = net.loss_and_grads(&batch, &weights)?;
        for range in ranges.iter().cloned() {
            cfg.optimizer
                .step(&mut net.params_mut()[range.clone()], &mut velocity[range.clone()], &grad[range])?;
        }
    }
    report.heldout_rank_after = held_rank(&net)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archives::PrbConfig;
    use crate::games::Variant;
    use crate::mcts::MctsConfig;
    use crate::net::{NetConfig, Torso};

    pub(crate) fn tiny(method: Method) -> RunConfig {
        RunConfig {
            game: Variant::Hex(3),
            method,
            seed: 5,
            iterations: 2,
            states_per_iteration: 40,
            optimization_steps: 3,
            batch_size: 16,
            replay_window: 2,
            workers: 2,
            net: NetConfig {
                torso: Torso::Conv { filters: 4, blocks: 1 },
                head_hidden: 4,
            },
            mcts: MctsConfig {
                simulations: 6,
                ..Default::default()
            },
            prb: (method == Method::Rgsc).then(|| PrbConfig {
                capacity: 4,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_writes_only_the_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { iterations: 0, ..tiny(Method::AlphaZero) };
        let s = run(&cfg, dir.path(), 1).unwrap();
        assert_eq!(s.iteration, 0);
        assert_eq!(latest_checkpoint(dir.path()).unwrap().0, 0);
        assert!(read_metrics(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn budget_and_buffer_columns() {
        for method in Method::ALL {
            let dir = tempfile::tempdir().unwrap();
            run(&tiny(method), dir.path(), 1).unwrap();
            let rows = read_metrics(dir.path()).unwrap();
            assert_eq!(rows.len(), 2);
            for r in &rows {
                assert_eq!(r.states, 40);
                assert_eq!(r.buffer_size.is_none(), method == Method::AlphaZero);
                assert_eq!(r.buffer_evictions.is_some(), method == Method::Rgsc);
            }
            if method == Method::AlphaZero {
                let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
                assert!(text.lines().nth(1).unwrap().ends_with(",,,,"));
            }
        }
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let full = tempfile::tempdir().unwrap();
        let cfg = RunConfig { iterations: 3, ..tiny(Method::Rgsc) };
        run(&cfg, full.path(), 1).unwrap();

        let part = tempfile::tempdir().unwrap();
        run(&RunConfig { iterations: 1, ..cfg.clone() }, part.path(), 1).unwrap();
        resume(&cfg, &checkpoint_path(part.path(), 1), Path::new("/nonexistent"), 1).unwrap();
        let a = fs::read(full.path().join(METRICS_FILE)).unwrap();
        let b = fs::read(part.path().join(METRICS_FILE)).unwrap();
        assert_eq!(a, b);
        let ca = Checkpoint::load(&checkpoint_path(full.path(), 3)).unwrap();
        let cb = Checkpoint::load(&checkpoint_path(part.path(), 3)).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn mismatched_config_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Method::Gevc);
        run(&RunConfig { iterations: 1, ..cfg.clone() }, dir.path(), 1).unwrap();
        let other = RunConfig { seed: 99, ..cfg };
        let err = resume(&other, &checkpoint_path(dir.path(), 1), Path::new("/nonexistent"), 1).unwrap_err();
        assert!(matches!(err, TrainError::Net(NetError::Checkpoint(_))), "{err}");
    }

    #[test]
    fn existing_run_directory_is_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { iterations: 0, ..tiny(Method::AlphaZero) };
        run(&cfg, dir.path(), 1).unwrap();
        assert!(matches!(run(&cfg, dir.path(), 1), Err(TrainError::Resume(_))));
    }

    #[test]
    fn freezing_leaves_policy_and_value_untouched() {
        let cfg = RunConfig {
            freeze: crate::config::FreezeConfig { games: 12, steps: 10, holdout: 0.25 },
            ..tiny(Method::Rgsc)
        };
        let base = Network::random(cfg.net, cfg.game, &mut rng(1, Stream::Init));
        let (net, report) = freeze_heads_phase(&cfg, &base, 1).unwrap();
        let trained = [net.head_range(Head::RegretValue), net.head_range(Head::Ranking)];
        let mut changed = 0;
        for (i, (a, b)) in base.params().iter().zip(net.params()).enumerate() {
            if trained.iter().any(|r| r.contains(&i)) {
                changed += usize::from(a != b);
            } else {
                assert_eq!(a.to_bits(), b.to_bits(), "parameter {i} moved");
            }
        }
        assert!(changed > 0);
        assert_eq!(report.steps, 10);

        let none = RunConfig {
            freeze: crate::config::FreezeConfig { steps: 0, ..cfg.freeze },
            ..cfg
        };
        let (same, _) = freeze_heads_phase(&none, &base, 1).unwrap();
        assert_eq!(same.params(), base.params());
    }

    #[test]
    fn alphazero_checkpoint_continues_as_rgsc_after_freezing() {
        let az = tempfile::tempdir().unwrap();
        run(&RunConfig { iterations: 1, ..tiny(Method::AlphaZero) }, az.path(), 1).unwrap();
        let out = tempfile::tempdir().unwrap();
        let dir = out.path().join("continued");
        let cfg = RunConfig {
            iterations: 1,
            warmup_games: 4,
            freeze: crate::config::FreezeConfig { games: 6, steps: 4, holdout: 0.3 },
            ..tiny(Method::Rgsc)
        };
        let s = resume(&cfg, &checkpoint_path(az.path(), 1), &dir, 1).unwrap();
        assert_eq!(s.iteration, 1);
        assert!(dir.join("freeze_report.json").exists());
        let ckpt0 = Checkpoint::load(&checkpoint_path(&dir, 0)).unwrap();
        let base = Checkpoint::load(&checkpoint_path(az.path(), 1)).unwrap();
        let net = base.network().unwrap();
        let policy = net.head_range(Head::Policy);
        assert_eq!(ckpt0.params[policy.clone()], base.params[policy]);
        assert_eq!(ckpt0.method, "rgsc");
        // warm-up filled the buffers before the first iteration
        let store = load_store(&dir, 0, 0).unwrap();
        assert!(!store.prb().unwrap().is_empty());
    }

    #[test]
    fn quotas_sum_to_the_budget() {
        for (total, workers) in [(4000, 4), (37, 4), (5, 5), (7, 3)] {
            let q: Vec<usize> = (0..workers).map(|w| quota(total, workers, w)).collect();
            assert_eq!(q.iter().sum::<usize>(), total);
            assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
        }
    }
}
