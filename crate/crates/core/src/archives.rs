//! Restart-state stores: the prioritized regret buffer, the Go-Exploit FIFO
//! archives and the trivial always-initial policy.
//!
//! `lambda` is uniformly the probability of drawing an opening from the store.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::games::GameState;
use crate::regret::Opening;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ArchiveError {
    #[error("no buffer entry with id {0}")]
    UnknownEntry(u64),
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    Version { found: u32 },
    #[error("invalid restart parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrbConfig {
    pub capacity: usize,
    pub lambda: f64,
    /// Sampling temperature of the power law `R^(1/tau)`.
    pub tau: f64,
    /// EMA rate for regret updates.
    pub alpha: f64,
}

impl Default for PrbConfig {
    fn default() -> Self {
        PrbConfig {
            capacity: 100,
            lambda: 0.5,
            tau: 0.1,
            alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchiveConfig {
    pub capacity: usize,
    pub lambda: f64,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        ArchiveConfig {
            capacity: 1000,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RestartConfig {
    InitialOnly,
    Gevc(ArchiveConfig),
    Gesc(ArchiveConfig),
    Prb(PrbConfig),
}

fn check_lambda(lambda: f64) -> Result<(), ArchiveError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ArchiveError::Invalid {
            field: "lambda",
            reason: format!("{lambda} is outside [0, 1]"),
        });
    }
    Ok(())
}

fn check_capacity(capacity: usize) -> Result<(), ArchiveError> {
    if capacity == 0 {
        return Err(ArchiveError::Invalid {
            field: "capacity",
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

impl RestartConfig {
    pub fn validate(&self) -> Result<(), ArchiveError> {
        match self {
            RestartConfig::InitialOnly => Ok(()),
            RestartConfig::Gevc(c) | RestartConfig::Gesc(c) => {
                check_capacity(c.capacity)?;
                check_lambda(c.lambda)
            }
            RestartConfig::Prb(c) => {
                check_capacity(c.capacity)?;
                check_lambda(c.lambda)?;
                if !(c.tau > 0.0 && c.tau.is_finite()) {
                    return Err(ArchiveError::Invalid {
                        field: "tau",
                        reason: format!("{} is not positive", c.tau),
                    });
                }
                if !(c.alpha > 0.0 && c.alpha <= 1.0) {
                    return Err(ArchiveError::Invalid {
                        field: "alpha",
                        reason: format!("{} is outside (0, 1]", c.alpha),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> Result<RestartStore, ArchiveError> {
        self.validate()?;
        Ok(match *self {
            RestartConfig::InitialOnly => RestartStore::InitialOnly,
            RestartConfig::Gevc(c) => RestartStore::Gevc(Fifo::new(c)),
            RestartConfig::Gesc(c) => RestartStore::Gesc(Fifo::new(c)),
            RestartConfig::Prb(c) => RestartStore::Prb(Prb::new(c)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub id: u64,
    pub state: GameState,
    pub regret: f64,
    /// Regret at insertion; never modified afterwards.
    pub first_regret: f64,
    pub updates: u32,
    pub opening_move_count: u32,
    /// Stored regret after insertion and after each update.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eviction {
    pub id: u64,
    pub first_regret: f64,
    pub final_regret: f64,
    pub updates: u32,
    pub opening_move_count: u32,
}

/// Fixed-capacity store of high-regret states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prb {
    pub config: PrbConfig,
    entries: Vec<BufferEntry>,
    next_id: u64,
    evictions: Vec<Eviction>,
}

impl Prb {
    pub fn new(config: PrbConfig) -> Self {
        Prb {
            config,
            entries: Vec::new(),
            next_id: 0,
            evictions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn evictions(&self) -> &[Eviction] {
        &self.evictions
    }

    pub fn entry(&self, id: u64) -> Option<&BufferEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn min_regret(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.regret).min_by(f64::total_cmp)
    }

    pub fn mean_regret(&self) -> Option<f64> {
        (!self.entries.is_empty()).then(|| self.entries.iter().map(|e| e.regret).sum::<f64>() / self.entries.len() as f64)
    }

    /// Inserts while there is room; once full, replaces the lowest-regret
    /// entry only if `regret` is strictly greater.
    pub fn offer(&mut self, state: GameState, regret: f64) -> bool {
        let regret = regret.max(0.0);
        if self.entries.len() >= self.config.capacity {
            let (idx, min) = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.regret.total_cmp(&b.1.regret))
                .map(|(i, e)| (i, e.regret))
                .expect("capacity is at least 1");
            if regret <= min {
                return false;
            }
            let old = self.entries.remove(idx);
            self.evictions.push(Eviction {
                id: old.id,
                first_regret: old.first_regret,
                final_regret: old.regret,
                updates: old.updates,
                opening_move_count: old.opening_move_count,
            });
        }
        self.entries.push(BufferEntry {
            id: self.next_id,
            opening_move_count: state.move_count(),
            state,
            regret,
            first_regret: regret,
            updates: 0,
            history: vec![regret],
        });
        self.next_id += 1;
        true
    }

    /// `R <- (1 - alpha) R + alpha * new_regret`; never evicts.
    pub fn ema_update(&mut self, id: u64, new_regret: f64) -> Result<f64, ArchiveError> {
        let alpha = self.config.alpha;
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or(ArchiveError::UnknownEntry(id))?;
        e.regret = ((1.0 - alpha) * e.regret + alpha * new_regret).max(0.0);
        e.updates += 1;
        e.history.push(e.regret);
        Ok(e.regret)
    }

    /// Sampling probabilities proportional to `R^(1/tau)`, uniform when every
    /// regret is zero.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.entries.len();
        let max = self.entries.iter().map(|e| e.regret).fold(0.0, f64::max);
        match max {
            _ if n == 0 => Vec::new(),
            m if m <= 0.0 => vec![1.0 / n as f64; n],
            m => {
                // (R / max)^(1/tau) avoids overflow and underflow of the raw power
                let w: Vec<f64> = self
                    .entries
                    .iter()
                    .map(|e| if e.regret > 0.0 { (e.regret / m).powf(1.0 / self.config.tau) } else { 0.0 })
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Option<&BufferEntry> {
        let p = self.probabilities();
        let dist = WeightedIndex::new(&p).ok()?;
        Some(&self.entries[dist.sample(rng)])
    }
}

/// Circular archive of states sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fifo {
    pub config: ArchiveConfig,
    states: VecDeque<GameState>,
}

impl Fifo {
    pub fn new(config: ArchiveConfig) -> Self {
        Fifo {
            config,
            states: VecDeque::with_capacity(config.capacity),
        }
    }

    pub fn push(&mut self, states: impl IntoIterator<Item = GameState>) {
        for s in states {
            if self.states.len() == self.config.capacity {
                self.states.pop_front();
            }
            self.states.push_back(s);
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &GameState> {
        self.states.iter()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Option<&GameState> {
        (!self.states.is_empty()).then(|| &self.states[rng.random_range(0..self.states.len())])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RestartStore {
    InitialOnly,
    Gevc(Fifo),
    Gesc(Fifo),
    Prb(Prb),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub store: RestartStore,
}

impl RestartStore {
    fn lambda(&self) -> f64 {
        match self {
            RestartStore::InitialOnly => 0.0,
            RestartStore::Gevc(f) | RestartStore::Gesc(f) => f.config.lambda,
            RestartStore::Prb(p) => p.config.lambda,
        }
    }

    /// Picks the state the next game starts from.
    pub fn draw_opening(&self, initial: &GameState, rng: &mut impl Rng) -> (GameState, Opening) {
        let fallback = (initial.clone(), Opening::InitialState);
        if matches!(self, RestartStore::InitialOnly) || !rng.random_bool(self.lambda()) {
            return fallback;
        }
        match self {
            RestartStore::InitialOnly => fallback,
            RestartStore::Gevc(f) | RestartStore::Gesc(f) => f
                .sample(rng)
                .map_or(fallback, |s| (s.clone(), Opening::Archive)),
            RestartStore::Prb(p) => p
                .sample(rng)
                .map_or(fallback, |e| (e.state.clone(), Opening::Buffer { entry: e.id })),
        }
    }

    pub fn prb(&self) -> Option<&Prb> {
        match self {
            RestartStore::Prb(p) => Some(p),
            _ => None,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            store: self.clone(),
        }
    }

    pub fn restore(snapshot: Snapshot) -> Result<Self, ArchiveError> {
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(ArchiveError::Version { found: snapshot.version });
        }
        Ok(snapshot.store)
    }
}
