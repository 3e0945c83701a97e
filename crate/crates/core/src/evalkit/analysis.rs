use rand::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::archives::{Eviction, Prb};
use crate::net::Network;
use crate::selfplay::GameRecord;

/// Average true regret of the states each selector picks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRegret {
    pub checkpoint: String,
    pub states: usize,
    /// Selection size actually used (smaller than requested when the logs are short).
    pub top_n: usize,
    pub truncated: bool,
    pub global_mean: f64,
    pub ranking_top: f64,
    pub value_top: f64,
    pub uniform: f64,
    /// Percentile bootstrap interval of the uniform sample's mean.
    pub uniform_ci_low: f64,
    pub uniform_ci_high: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn top_mean(scores: &[f32], regrets: &[f64], n: usize) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep log order
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    mean(order[..n].iter().map(|i| regrets[*i]))
}

/// Scores every trajectory state in `games` with `net`, then compares the
/// true regret of the ranking head's top `top_n`, the regret-value head's
/// top `top_n` and a uniform sample of `top_n`.
pub fn analyze_selected_regret(
    checkpoint: &str,
    games: &[GameRecord],
    net: &Network<f32>,
    top_n: usize,
    bootstrap: usize,
    rng: &mut impl Rng,
) -> Result<SelectedRegret, EvalError> {
    let mut regrets = Vec::new();
    let mut inputs = Vec::new();
    for g in games {
        regrets.extend(g.trajectory.all_regrets()?);
        inputs.extend(g.trajectory.records.iter().map(|r| r.state.encode()));
    }
    if regrets.is_empty() {
        return Err(EvalError::Invalid("the game logs hold no states".into()));
    }
    let outputs = net.forward_batch(&inputs)?;
    let gamma: Vec<f32> = outputs.iter().map(|o| o.gamma).collect();
    let value: Vec<f32> = outputs.iter().map(|o| o.regret_value).collect();
    let n = top_n.min(regrets.len()).max(1);

    let sample: Vec<f64> = regrets.choose_multiple(rng, n).cloned().collect();
    let mut boot: Vec<f64> = (0..bootstrap)
        .map(|_| mean((0..n).map(|_| sample[rng.random_range(0..n)])))
        .collect();
    boot.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        if boot.is_empty() {
            f64::NAN
        } else {
            boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)]
        }
    };
    Ok(SelectedRegret {
        checkpoint: checkpoint.to_string(),
        states: regrets.len(),
        top_n: n,
        truncated: n < top_n,
        global_mean: mean(regrets.iter().cloned()),
        ranking_top: top_mean(&gamma, &regrets, n),
        value_top: top_mean(&value, &regrets, n),
        uniform: mean(sample.iter().cloned()),
        uniform_ci_low: pct(0.025),
        uniform_ci_high: pct(0.975),
    })
}

/// First-entry against final regret of evicted buffer entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbShift {
    pub evictions: usize,
    pub mean_first: f64,
    pub mean_final: f64,
    pub bin_edges: Vec<f64>,
    pub first_counts: Vec<usize>,
    pub final_counts: Vec<usize>,
    /// `mean_final < mean_first`.
    pub decreased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub first_count: usize,
    pub final_count: usize,
}

impl PrbShift {
    pub fn rows(&self) -> Vec<HistogramRow> {
        self.bin_edges
            .windows(2)
            .zip(self.first_counts.iter().zip(&self.final_counts))
            .map(|(w, (f, l))| HistogramRow {
                bin_low: w[0],
                bin_high: w[1],
                first_count: *f,
                final_count: *l,
            })
            .collect()
    }
}

/// Histograms over `[0, upper]` with `bins` equal bins; values above
/// `upper` land in the last bin.
pub fn analyze_prb_shift(evictions: &[Eviction], bins: usize, upper: f64) -> Result<PrbShift, EvalError> {
    if evictions.is_empty() {
        return Err(EvalError::Invalid("no buffer entry was ever evicted".into()));
    }
    if bins == 0 || upper <= 0.0 {
        return Err(EvalError::Invalid("histograms need at least one bin over a positive range".into()));
    }
    let width = upper / bins as f64;
    let bin = |x: f64| ((x / width) as usize).min(bins - 1);
    let mut first_counts = vec![0; bins];
    let mut final_counts = vec![0; bins];
    for e in evictions {
        first_counts[bin(e.first_regret)] += 1;
        final_counts[bin(e.final_regret)] += 1;
    }
    let mean_first = mean(evictions.iter().map(|e| e.first_regret));
    let mean_final = mean(evictions.iter().map(|e| e.final_regret));
    Ok(PrbShift {
        evictions: evictions.len(),
        mean_first,
        mean_final,
        bin_edges: (0..=bins).map(|i| i as f64 * width).collect(),
        first_counts,
        final_counts,
        decreased: mean_final < mean_first,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeningLengthRow {
    pub iteration: u32,
    pub opening_length: u32,
    pub count: usize,
    pub proportion: f64,
}

/// Share of buffer entries per opening length, one bucket per move count
/// in `0..=max_len`. `snapshots` holds `(iteration, opening lengths)`.
pub fn analyze_opening_lengths(snapshots: &[(u32, Vec<u32>)], max_len: u32) -> Result<Vec<OpeningLengthRow>, EvalError> {
    if snapshots.len() < 2 {
        return Err(EvalError::Invalid(format!("need at least 2 snapshots, got {}", snapshots.len())));
    }
    let mut rows = Vec::new();
    for (iteration, lengths) in snapshots {
        if let Some(l) = lengths.iter().find(|l| **l > max_len) {
            return Err(EvalError::Invalid(format!("opening length {l} exceeds the game's maximum {max_len}")));
        }
        for len in 0..=max_len {
            let count = lengths.iter().filter(|l| **l == len).count();
            rows.push(OpeningLengthRow {
                iteration: *iteration,
                opening_length: len,
                count,
                proportion: if lengths.is_empty() { 0.0 } else { count as f64 / lengths.len() as f64 },
            });
        }
    }
    Ok(rows)
}

/// `(update index, regret)` for one buffer entry, taken from the latest
/// snapshot that still holds it.
pub fn track_opening_regret(snapshots: &[&Prb], id: u64) -> Result<Vec<(usize, f64)>, EvalError> {
    let entry = snapshots
        .iter()
        .rev()
        .find_map(|p| p.entry(id))
        .ok_or(EvalError::UnknownEntry(id))?;
    Ok(entry.history.iter().cloned().enumerate().collect())
}
