//! Self-play games under a restart policy, the iteration-windowed replay
//! buffer and training batch assembly.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archives::{ArchiveError, RestartStore};
use crate::games::{GameError, GameState, Variant};
use crate::mcts::{self, CachedEvaluator, ExpandedNode, MctsConfig, NetEvaluator};
use crate::net::{Network, TrainBatch};
use crate::regret::{select_candidate, Candidate, MoveRecord, Opening, RegretError, Trajectory};

#[derive(Debug, Error)]
pub enum SelfPlayError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Regret(#[from] RegretError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("game from {opening} exceeded {limit} moves")]
    Runaway { opening: String, limit: usize },
    #[error("game log line {line}: {reason}")]
    Log { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfPlayConfig {
    pub mcts: MctsConfig,
    pub temperature: f64,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            mcts: MctsConfig::default(),
            temperature: 1.0,
        }
    }
}

/// What a finished game did to its worker's restart store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchiveAction {
    None,
    Offered { inserted: bool },
    EmaUpdate { entry: u64, new_regret: f64, updated: f64 },
    Pushed { states: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub iteration: u32,
    pub worker: u32,
    pub trajectory: Trajectory,
    /// Leading decision states used as training samples; smaller than the
    /// trajectory only for the game that closes a worker's state budget.
    pub samples: usize,
    pub candidate: Option<Candidate>,
    pub archive_action: ArchiveAction,
}

impl GameRecord {
    pub fn policy_targets(&self) -> Vec<Vec<f32>> {
        self.trajectory
            .records
            .iter()
            .map(|r| {
                let total: u32 = r.visits.iter().sum();
                r.visits.iter().map(|v| *v as f32 / total.max(1) as f32).collect()
            })
            .collect()
    }

    pub fn actions(&self) -> Vec<usize> {
        self.trajectory.records.iter().map(|r| r.action).collect()
    }
}

/// Plays one game from an opening drawn from `store` and performs the game's
/// single archive action.
pub fn play_game(
    net: &Network<f32>,
    store: &mut RestartStore,
    cfg: &SelfPlayConfig,
    rng: &mut impl Rng,
) -> Result<(GameRecord, Vec<ExpandedNode>), SelfPlayError> {
    let variant = net.variant();
    let (opening_state, opening) = store.draw_opening(&variant.initial_state(), rng);
    let limit = variant.cells() * 2;
    let mut evaluator = CachedEvaluator::new(NetEvaluator::new(net));
    let mut records = Vec::new();
    let mut tree = Vec::new();
    let mut state = opening_state.clone();
    while !state.is_terminal() {
        if records.len() >= limit {
            return Err(SelfPlayError::Runaway {
                opening: opening_state.to_string(),
                limit,
            });
        }
        let result = mcts::search(&state, &mut evaluator, &cfg.mcts, rng)?;
        let action = mcts::select_action(&result, cfg.temperature, rng).expect("at least one simulation");
        records.push(MoveRecord {
            state: state.clone(),
            action,
            v_selected: result.v_selected(action),
            visits: result.visits.clone(),
            gamma: result.root_gamma,
            regret_value: result.root_regret_value,
        });
        let harvest = result.expanded;
        match store {
            RestartStore::Gesc(_) => tree.push(harvest.choose(rng).expect("root is harvested").clone()),
            RestartStore::Prb(_) => tree.extend(harvest),
            _ => {}
        }
        state = state.apply(action)?;
    }
    let trajectory = Trajectory {
        records,
        outcome: state.terminal_value(),
        opening,
        opening_move_count: opening_state.move_count(),
    };

    let mut candidate = None;
    let archive_action = match store {
        RestartStore::InitialOnly => ArchiveAction::None,
        RestartStore::Gevc(f) => {
            f.push(trajectory.records.iter().map(|r| r.state.clone()));
            ArchiveAction::Pushed {
                states: trajectory.len(),
            }
        }
        RestartStore::Gesc(f) => {
            let n = tree.len();
            f.push(tree.iter().map(|n| n.state.clone()));
            ArchiveAction::Pushed { states: n }
        }
        RestartStore::Prb(p) => match opening {
            Opening::Buffer { entry } => {
                let new_regret = trajectory.compute_regret(0)?;
                let updated = p.ema_update(entry, new_regret)?;
                ArchiveAction::EmaUpdate {
                    entry,
                    new_regret,
                    updated,
                }
            }
            _ => {
                candidate = select_candidate(&trajectory, &tree)?;
                let inserted = candidate
                    .as_ref()
                    .is_some_and(|c| p.offer(c.state.clone(), c.regret));
                ArchiveAction::Offered { inserted }
            }
        },
    };
    let samples = trajectory.len();
    Ok((
        GameRecord {
            iteration: 0,
            worker: 0,
            trajectory,
            samples,
            candidate,
            archive_action,
        },
        tree,
    ))
}

/// Plays games until `budget` training states are collected. The last game's
/// samples are truncated so the count is exact.
pub fn play_until(
    net: &Network<f32>,
    store: &mut RestartStore,
    cfg: &SelfPlayConfig,
    budget: usize,
    iteration: u32,
    worker: u32,
    rng: &mut impl Rng,
) -> Result<Vec<GameRecord>, SelfPlayError> {
    let mut games = Vec::new();
    let mut collected = 0;
    while collected < budget {
        let (mut record, _) = play_game(net, store, cfg, rng)?;
        record.iteration = iteration;
        record.worker = worker;
        record.samples = record.samples.min(budget - collected);
        collected += record.samples;
        games.push(record);
    }
    Ok(games)
}

pub fn write_games(out: &mut impl Write, games: &[GameRecord]) -> Result<(), SelfPlayError> {
    for g in games {
        serde_json::to_writer(&mut *out, g).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_games(input: impl BufRead) -> Result<Vec<GameRecord>, SelfPlayError> {
    let mut games = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        games.push(serde_json::from_str(&line).map_err(|e| SelfPlayError::Log {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(games)
}

/// Games from the most recent `window` iterations.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    window: usize,
    iterations: VecDeque<(u32, Vec<GameRecord>)>,
}

struct Sample<'a> {
    game: usize,
    record: &'a MoveRecord,
    z: f32,
    regret: f64,
    policy: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(window: usize) -> Self {
        ReplayBuffer {
            window: window.max(1),
            iterations: VecDeque::new(),
        }
    }

    pub fn push_iteration(&mut self, iteration: u32, games: Vec<GameRecord>) {
        self.iterations.push_back((iteration, games));
        while self.iterations.len() > self.window {
            self.iterations.pop_front();
        }
    }

    pub fn iterations(&self) -> impl Iterator<Item = u32> + '_ {
        self.iterations.iter().map(|(i, _)| *i)
    }

    pub fn games(&self) -> impl Iterator<Item = &GameRecord> {
        self.iterations.iter().flat_map(|(_, g)| g)
    }

    pub fn states(&self) -> usize {
        self.games().map(|g| g.samples).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.states() == 0
    }

    fn samples(&self) -> Result<Vec<Sample<'_>>, SelfPlayError> {
        let mut out = Vec::new();
        for (gi, game) in self.games().enumerate() {
            let t = &game.trajectory;
            let outcome = t.outcome.ok_or(RegretError::Unfinished)?;
            let regrets = t.all_regrets()?;
            let policies = game.policy_targets();
            for (i, (record, policy)) in t.records.iter().zip(policies).take(game.samples).enumerate() {
                out.push(Sample {
                    game: gi,
                    record,
                    z: outcome.for_player(record.state.to_move()),
                    regret: regrets[i],
                    policy,
                });
            }
        }
        Ok(out)
    }

    /// Every retained sample in log order, one ranking group per game.
    pub fn full_batch(&self) -> Result<TrainBatch, SelfPlayError> {
        let mut batch = TrainBatch::default();
        let mut by_game: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in self.samples()? {
            by_game.entry(s.game).or_default().push(batch.len());
            batch.inputs.push(s.record.state.encode());
            batch.policy_targets.push(s.policy);
            batch.value_targets.push(s.z);
            batch.regret_targets.push(s.regret as f32);
        }
        batch.groups = by_game.into_values().filter(|g| g.len() >= 2).collect();
        Ok(batch)
    }

    /// `count` batches drawn by shuffling every retained state and reading it
    /// in order, reshuffling once exhausted. Ranking groups collect the
    /// batch members that came from the same game, if there are at least two.
    pub fn make_batches(&self, batch_size: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<TrainBatch>, SelfPlayError> {
        let samples = self.samples()?;
        if samples.is_empty() || batch_size == 0 {
            return Ok(Vec::new());
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut cursor = order.len();
        let mut batches = Vec::with_capacity(count);
        for _ in 0..count {
            let mut batch = TrainBatch::default();
            let mut by_game: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for _ in 0..batch_size.min(samples.len()) {
                if cursor == order.len() {
                    order.shuffle(rng);
                    cursor = 0;
                }
                let s = &samples[order[cursor]];
                cursor += 1;
                by_game.entry(s.game).or_default().push(batch.len());
                batch.inputs.push(s.record.state.encode());
                batch.policy_targets.push(s.policy.clone());
                batch.value_targets.push(s.z);
                batch.regret_targets.push(s.regret as f32);
            }
            batch.groups = by_game.into_values().filter(|g| g.len() >= 2).collect();
            batches.push(batch);
        }
        Ok(batches)
    }
}

/// Replays a game's moves from its opening to check that the log is coherent.
pub fn replay(record: &GameRecord) -> Result<GameState, GameError> {
    let t = &record.trajectory;
    let start = t.records.first().map(|r| r.state.clone()).ok_or(GameError::Terminal)?;
    start.play_all(&record.actions())
}

pub fn variant_of(record: &GameRecord) -> Option<Variant> {
    record.trajectory.records.first().map(|r| r.state.variant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archives::{ArchiveConfig, PrbConfig, RestartConfig};
    use crate::net::NetConfig;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn cfg(simulations: usize) -> SelfPlayConfig {
        SelfPlayConfig {
            mcts: MctsConfig {
                simulations,
                ..Default::default()
            },
            temperature: 1.0,
        }
    }

    fn net(seed: u64) -> Network<f32> {
        let mut rng = StdRng::seed_from_u64(seed);
        Network::random(
            NetConfig {
                torso: crate::net::Torso::Conv { filters: 8, blocks: 1 },
                head_hidden: 8,
            },
            Variant::Hex(4),
            &mut rng,
        )
    }

    #[test]
    fn initial_only_games_start_at_the_initial_state() {
        let net = net(0);
        let mut store = RestartStore::InitialOnly;
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..3 {
            let (g, _) = play_game(&net, &mut store, &cfg(8), &mut rng).unwrap();
            assert_eq!(g.trajectory.opening, Opening::InitialState);
            assert_eq!(g.trajectory.records[0].state, Variant::Hex(4).initial_state());
            assert_eq!(g.policy_targets().len(), g.trajectory.len());
            assert_eq!(g.samples, g.trajectory.len());
            assert_eq!(g.archive_action, ArchiveAction::None);
            assert!(replay(&g).unwrap().is_terminal());
        }
    }

    #[test]
    fn buffer_openings_are_ema_updated() {
        let net = net(2);
        let mut store = RestartConfig::Prb(PrbConfig {
            lambda: 1.0,
            alpha: 0.5,
            ..Default::default()
        })
        .build()
        .unwrap();
        let opening = Variant::Hex(4).initial_state().play_all(&[5, 6]).unwrap();
        if let RestartStore::Prb(p) = &mut store {
            p.offer(opening.clone(), 0.8);
        }
        let mut rng = StdRng::seed_from_u64(3);
        let (g, _) = play_game(&net, &mut store, &cfg(8), &mut rng).unwrap();
        assert_eq!(g.trajectory.opening, Opening::Buffer { entry: 0 });
        assert_eq!(g.trajectory.records[0].state, opening);
        assert_eq!(g.trajectory.opening_move_count, 2);
        let r = g.trajectory.compute_regret(0).unwrap();
        match g.archive_action {
            ArchiveAction::EmaUpdate { entry, new_regret, updated } => {
                assert_eq!(entry, 0);
                assert_eq!(new_regret, r);
                assert!((updated - (0.5 * 0.8 + 0.5 * r)).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(g.candidate.is_none());
        assert_eq!(store.prb().unwrap().entry(0).unwrap().updates, 1);
    }

    #[test]
    fn initial_games_offer_their_candidate() {
        let net = net(4);
        let mut store = RestartConfig::Prb(PrbConfig::default()).build().unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let mut rgsc = RestartConfig::Prb(PrbConfig { lambda: 0.0, ..Default::default() }).build().unwrap();
        let (g, tree) = play_game(&net, &mut rgsc, &cfg(8), &mut rng).unwrap();
        let c = g.candidate.clone().expect("a candidate is always found");
        assert_eq!(g.archive_action, ArchiveAction::Offered { inserted: true });
        assert_eq!(select_candidate(&g.trajectory, &tree).unwrap(), Some(c.clone()));
        assert_eq!(rgsc.prb().unwrap().entries()[0].state, c.state);
        // and the store actually drives later openings
        let _ = play_game(&net, &mut store, &cfg(8), &mut rng).unwrap();
    }

    #[test]
    fn gesc_grows_by_game_length() {
        let net = net(6);
        let mut store = RestartConfig::Gesc(ArchiveConfig { capacity: 1000, lambda: 0.0 }).build().unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let (g, _) = play_game(&net, &mut store, &cfg(8), &mut rng).unwrap();
        match &store {
            RestartStore::Gesc(f) => assert_eq!(f.len(), g.trajectory.len()),
            _ => unreachable!(),
        }
        let mut gevc = RestartConfig::Gevc(ArchiveConfig { capacity: 1000, lambda: 0.0 }).build().unwrap();
        let (g, _) = play_game(&net, &mut gevc, &cfg(8), &mut rng).unwrap();
        match &gevc {
            RestartStore::Gevc(f) => {
                let states: Vec<_> = f.states().cloned().collect();
                let expected: Vec<_> = g.trajectory.records.iter().map(|r| r.state.clone()).collect();
                assert_eq!(states, expected);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn budget_is_exact() {
        let net = net(8);
        let mut store = RestartStore::InitialOnly;
        let mut rng = StdRng::seed_from_u64(9);
        let games = play_until(&net, &mut store, &cfg(4), 37, 3, 1, &mut rng).unwrap();
        assert_eq!(games.iter().map(|g| g.samples).sum::<usize>(), 37);
        assert!(games.iter().all(|g| g.iteration == 3 && g.worker == 1));
        let mut replay = ReplayBuffer::new(2);
        replay.push_iteration(3, games);
        assert_eq!(replay.states(), 37);
    }

    #[test]
    fn restart_fraction_matches_lambda() {
        // opening draws alone, no games: 10^4 draws with lambda 0.5
        let mut store = RestartConfig::Prb(PrbConfig::default()).build().unwrap();
        if let RestartStore::Prb(p) = &mut store {
            p.offer(Variant::Hex(4).initial_state().apply(0).unwrap(), 1.0);
        }
        let init = Variant::Hex(4).initial_state();
        let mut rng = StdRng::seed_from_u64(10);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| store.draw_opening(&init, &mut rng).1 != Opening::InitialState)
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits - 0.5 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn log_round_trip() {
        let net = net(11);
        let mut store = RestartStore::InitialOnly;
        let mut rng = StdRng::seed_from_u64(12);
        let games = play_until(&net, &mut store, &cfg(4), 20, 0, 0, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_games(&mut buf, &games).unwrap();
        let back = read_games(&buf[..]).unwrap();
        assert_eq!(back, games);
        assert!(matches!(read_games(&b"{oops\n"[..]), Err(SelfPlayError::Log { line: 1, .. })));
    }

    #[test]
    fn batches_from_one_game() {
        let net = net(13);
        let mut store = RestartStore::InitialOnly;
        let mut rng = StdRng::seed_from_u64(14);
        let (g, _) = play_game(&net, &mut store, &cfg(4), &mut rng).unwrap();
        let n = g.trajectory.len();
        let z = g.trajectory.outcome.unwrap();
        let regrets = g.trajectory.all_regrets().unwrap();
        let mut replay = ReplayBuffer::new(1);
        replay.push_iteration(0, vec![g.clone()]);
        let batch = &replay.make_batches(n, 1, &mut rng).unwrap()[0];
        assert_eq!(batch.len(), n);
        // every state exactly once
        let mut seen: Vec<usize> = batch
            .inputs
            .iter()
            .map(|x| g.trajectory.records.iter().position(|r| &r.state.encode() == x).unwrap())
            .collect();
        seen.sort();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for (k, x) in batch.inputs.iter().enumerate() {
            let t = g.trajectory.records.iter().position(|r| &r.state.encode() == x).unwrap();
            let mover = g.trajectory.records[t].state.to_move();
            assert_eq!(batch.value_targets[k], z.for_player(mover));
            assert_eq!(batch.regret_targets[k], regrets[t] as f32);
        }
        assert_eq!(batch.groups, vec![(0..n).collect::<Vec<_>>()]);
    }

    #[test]
    fn window_drops_old_iterations() {
        let mut r = ReplayBuffer::new(2);
        for i in 0..5 {
            r.push_iteration(i, Vec::new());
        }
        assert_eq!(r.iterations().collect::<Vec<_>>(), vec![3, 4]);
        assert!(r.is_empty());
    }
}
