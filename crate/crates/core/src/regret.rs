//! Regret of trajectory states, the ranking distribution over candidate
//! states, the ranking loss, and end-of-game candidate selection.
//!
//! Regret of the decision state `s_t` is the mean squared gap between the
//! post-search value of each selected action from `s_t` onwards and the final
//! outcome, both expressed from the first player's perspective. The terminal
//! position carries no search value, so the mean runs over decision states.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::games::{Action, GameState, Outcome};
use crate::mcts::ExpandedNode;

/// Stored regrets are clipped into this range before entering the ranking loss.
pub const REGRET_CLIP: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum RegretError {
    #[error("trajectory has no final outcome yet")]
    Unfinished,
    #[error("index {index} outside trajectory of {len} decision states")]
    OutOfRange { index: usize, len: usize },
}

/// Where a self-play game started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Opening {
    InitialState,
    Buffer { entry: u64 },
    Archive,
}

/// One decision of a self-play game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub state: GameState,
    pub action: Action,
    /// Post-search Q of the selected action, from the mover's perspective.
    pub v_selected: f32,
    /// Root visit counts over the full action space.
    pub visits: Vec<u32>,
    /// Ranking score of the root from its expansion-time evaluation.
    pub gamma: f32,
    /// Regret-value head output for the root.
    pub regret_value: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<MoveRecord>,
    pub outcome: Option<Outcome>,
    pub opening: Opening,
    pub opening_move_count: u32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn squared_error(&self, i: usize, z: f64) -> f64 {
        let r = &self.records[i];
        let v = r.v_selected as f64 * r.state.to_move().sign() as f64;
        (v - z) * (v - z)
    }

    /// Regret of the decision state at index `t`.
    pub fn compute_regret(&self, t: usize) -> Result<f64, RegretError> {
        let z = self.outcome.ok_or(RegretError::Unfinished)?.z() as f64;
        if t >= self.records.len() {
            return Err(RegretError::OutOfRange {
                index: t,
                len: self.records.len(),
            });
        }
        let n = self.records.len() - t;
        let sum: f64 = (t..self.records.len()).map(|i| self.squared_error(i, z)).sum();
        Ok(sum / n as f64)
    }

    /// Regrets of every decision state, via suffix sums.
    pub fn all_regrets(&self) -> Result<Vec<f64>, RegretError> {
        let z = self.outcome.ok_or(RegretError::Unfinished)?.z() as f64;
        let len = self.records.len();
        let mut out = vec![0.0; len];
        let mut suffix = 0.0;
        for t in (0..len).rev() {
            suffix += self.squared_error(t, z);
            out[t] = suffix / (len - t) as f64;
        }
        Ok(out)
    }
}

/// Softmax of the ranking scores.
pub fn ranking_distribution(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn clip(r: f64) -> f64 {
    r.clamp(0.0, REGRET_CLIP)
}

/// `-log sum_s softmax(gamma)_s * exp(R(s))` with regrets clipped to `[0, 4]`.
pub fn ranking_loss(scores: &[f64], regrets: &[f64]) -> f64 {
    assert_eq!(scores.len(), regrets.len(), "scores and regrets differ in length");
    // -LSE(log_softmax(gamma) + R) rearranged so that R = 0 gives exactly 0
    let biased = scores.iter().zip(regrets).map(|(g, r)| g + clip(*r));
    log_sum_exp(scores.iter().copied()) - log_sum_exp(biased)
}

/// Gradient of [`ranking_loss`] with respect to each score:
/// `softmax(gamma) - softmax(gamma + R)`.
pub fn ranking_loss_grad(scores: &[f64], regrets: &[f64]) -> Vec<f64> {
    assert_eq!(scores.len(), regrets.len(), "scores and regrets differ in length");
    let plain = ranking_distribution(scores);
    let biased: Vec<f64> = scores.iter().zip(regrets).map(|(g, r)| g + clip(*r)).collect();
    let biased = ranking_distribution(&biased);
    plain.iter().zip(&biased).map(|(p, q)| p - q).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    TrajectoryState,
    TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub state: GameState,
    pub gamma: f32,
    pub regret: f64,
    pub source: CandidateSource,
    /// Index into the trajectory when the candidate is a trajectory state.
    pub trajectory_index: Option<usize>,
}

/// Picks the restart candidate with the highest ranking score across every
/// tree node expanded during the game, then every trajectory state, replacing
/// only on a strictly higher score.
///
/// Tree nodes that are themselves trajectory states are left to the
/// trajectory pass, so a trajectory winner always carries its computed regret
/// and tree-only winners carry the regret-value head's estimate.
pub fn select_candidate(
    traj: &Trajectory,
    tree_nodes: &[ExpandedNode],
) -> Result<Option<Candidate>, RegretError> {
    let regrets = traj.all_regrets()?;
    let on_path: HashSet<&GameState> = traj.records.iter().map(|r| &r.state).collect();
    let mut best: Option<Candidate> = None;
    let mut best_gamma = f32::NEG_INFINITY;
    for node in tree_nodes {
        if node.gamma > best_gamma && !on_path.contains(&node.state) {
            best_gamma = node.gamma;
            best = Some(Candidate {
                state: node.state.clone(),
                gamma: node.gamma,
                regret: node.regret_value as f64,
                source: CandidateSource::TreeNode,
                trajectory_index: None,
            });
        }
    }
    for (t, record) in traj.records.iter().enumerate() {
        if record.gamma > best_gamma {
            best_gamma = record.gamma;
            best = Some(Candidate {
                state: record.state.clone(),
                gamma: record.gamma,
                regret: regrets[t],
                source: CandidateSource::TrajectoryState,
                trajectory_index: Some(t),
            });
        }
    }
    Ok(best)
}
