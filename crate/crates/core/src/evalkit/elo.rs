use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EvalError, MatchResult};

pub const ANCHOR_RATING: f64 = 1000.0;
const K: f64 = std::f64::consts::LN_10 / 400.0;

/// Head-to-head totals between two players; draws count as half a win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub a: String,
    pub b: String,
    pub score_a: f64,
    pub games: f64,
}

impl From<&MatchResult> for Pairing {
    fn from(m: &MatchResult) -> Self {
        Pairing {
            a: m.a.clone(),
            b: m.b.clone(),
            score_a: m.a_wins as f64 + 0.5 * m.draws as f64,
            games: m.games as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub anchor: String,
    pub ratings: BTreeMap<String, f64>,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient at the solution.
    pub gradient_norm: f64,
}

impl EloTable {
    pub fn expected_score(&self, a: &str, b: &str) -> Option<f64> {
        Some(expected(self.ratings.get(a)? - self.ratings.get(b)?))
    }
}

pub fn expected(diff: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf(-diff / 400.0))
}

fn log_likelihood(pairs: &[(usize, usize, f64, f64)], r: &[f64]) -> f64 {
    pairs
        .iter()
        .map(|&(a, b, s, n)| {
            let d = K * (r[a] - r[b]);
            // log sigmoid(d) and log sigmoid(-d), stable for large |d|
            let lp = if d >= 0.0 { -(-d).exp().ln_1p() } else { d - d.exp().ln_1p() };
            let lq = lp - d;
            s * lp + (n - s) * lq
        })
        .sum()
}

/// Maximum-likelihood logistic ratings with `anchor` pinned at 1000.
pub fn compute_elo(results: &[Pairing], anchor: &str) -> Result<EloTable, EvalError> {
    let names: Vec<String> = results
        .iter()
        .flat_map(|p| [p.a.clone(), p.b.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |s: &str| names.iter().position(|n| n == s).expect("collected above");
    let anchor_idx = names
        .iter()
        .position(|n| n == anchor)
        .ok_or_else(|| EvalError::Invalid(format!("anchor `{anchor}` played no games")))?;
    let pairs: Vec<(usize, usize, f64, f64)> = results
        .iter()
        .filter(|p| p.games > 0.0 && p.a != p.b)
        .map(|p| (index(&p.a), index(&p.b), p.score_a, p.games))
        .collect();

    let mut reached = vec![false; names.len()];
    reached[anchor_idx] = true;
    let mut queue = VecDeque::from([anchor_idx]);
    while let Some(i) = queue.pop_front() {
        for &(a, b, _, _) in &pairs {
            for (from, to) in [(a, b), (b, a)] {
                if from == i && !reached[to] {
                    reached[to] = true;
                    queue.push_back(to);
                }
            }
        }
    }
    if let Some(orphan) = reached.iter().position(|r| !r) {
        return Err(EvalError::Disconnected(names[orphan].clone()));
    }

    // a player who won or lost every game has no finite maximum-likelihood rating
    for (i, name) in names.iter().enumerate() {
        let (mut score, mut games) = (0.0, 0.0);
        for &(a, b, s, n) in &pairs {
            if a == i {
                score += s;
                games += n;
            } else if b == i {
                score += n - s;
                games += n;
            }
        }
        if score == 0.0 || score == games {
            return Err(EvalError::Diverged(name.clone()));
        }
    }

    let free: Vec<usize> = (0..names.len()).filter(|i| *i != anchor_idx).collect();
    let mut r = vec![ANCHOR_RATING; names.len()];
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let gradient = |r: &[f64]| -> (Vec<f64>, DMatrix<f64>) {
        let mut g = vec![0.0; names.len()];
        let mut h = DMatrix::zeros(names.len(), names.len());
        for &(a, b, s, n) in &pairs {
            let p = expected(r[a] - r[b]);
            let d = K * (s - n * p);
            g[a] += d;
            g[b] -= d;
            let w = K * K * n * p * (1.0 - p);
            h[(a, a)] -= w;
            h[(b, b)] -= w;
            h[(a, b)] += w;
            h[(b, a)] += w;
        }
        (g, h)
    };
    loop {
        let (g, h) = gradient(&r);
        let norm = free.iter().map(|i| g[*i].abs()).fold(0.0, f64::max);
        if norm < 1e-12 || (norm < 1e-9 && last_step < 1e-9) {
            let ratings = names.iter().cloned().zip(r).collect();
            return Ok(EloTable {
                anchor: anchor.to_string(),
                ratings,
                iterations,
                gradient_norm: norm,
            });
        }
        if iterations == 500 {
            let worst = free
                .iter()
                .max_by(|a, b| (r[**a] - ANCHOR_RATING).abs().total_cmp(&(r[**b] - ANCHOR_RATING).abs()))
                .expect("gradient is nonzero only with free players");
            return Err(EvalError::Diverged(names[*worst].clone()));
        }
        iterations += 1;
        let hf = DMatrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|i| g[*i]));
        let step = match hf.lu().solve(&gf) {
            Some(s) => -s,
            None => gf * 400.0,
        };
        // damped Newton: halve until the likelihood does not drop
        let base = log_likelihood(&pairs, &r);
        let mut scale = 1.0;
        loop {
            let mut next = r.clone();
            for (k, i) in free.iter().enumerate() {
                next[*i] += scale * step[k];
            }
            if log_likelihood(&pairs, &next) >= base - 1e-12 || scale < 1e-6 {
                last_step = scale * step.amax();
                r = next;
                break;
            }
            scale /= 2.0;
        }
    }
}
