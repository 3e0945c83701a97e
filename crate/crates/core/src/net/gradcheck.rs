//! Central finite-difference check of the analytic gradients on small random
//! networks and batches, in double precision.

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use super::{LossWeights, NetConfig, Network, Torso, TrainBatch};
use crate::games::Variant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub draws: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error, so coordinates
    /// whose true gradient is essentially zero are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            draws: 100,
            seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

pub const CHECKED_LOSSES: [&str; 5] = ["policy", "value", "regret", "rank", "total"];

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub draw: usize,
    pub loss: &'static str,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub draws: usize,
    pub coordinates_checked: usize,
    /// Largest relative error seen for each entry of [`CHECKED_LOSSES`].
    pub max_relative_error: [f64; 5],
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn weights_for(loss: &str, combined: LossWeights) -> LossWeights {
    let zero = LossWeights {
        policy: 0.0,
        value: 0.0,
        regret: 0.0,
        rank: 0.0,
    };
    match loss {
        "policy" => LossWeights { policy: 1.0, ..zero },
        "value" => LossWeights { value: 1.0, ..zero },
        "regret" => LossWeights { regret: 1.0, ..zero },
        "rank" => LossWeights { rank: 1.0, ..zero },
        _ => combined,
    }
}

/// A small random network and batch. Even draws use an MLP torso, odd draws a
/// convolutional one.
pub fn random_draw(draw: usize, rng: &mut StdRng) -> (Network<f64>, TrainBatch) {
    let variant = *[Variant::Hex(3), Variant::Othello(4)].choose(rng).unwrap();
    let torso = if draw.is_multiple_of(2) {
        Torso::Mlp {
            hidden: rng.random_range(3..7),
            layers: rng.random_range(1..3),
        }
    } else {
        Torso::Conv {
            filters: rng.random_range(2..4),
            blocks: rng.random_range(0..2),
        }
    };
    let cfg = NetConfig {
        torso,
        head_hidden: rng.random_range(2..5),
    };
    let mut net = Network::<f64>::random(cfg, variant, rng);
    for p in net.params_mut() {
        // nonzero biases and a spread of weight scales
        *p = *p * rng.random_range(0.5..2.0) + rng.random_range(-0.1..0.1);
    }

    let size = rng.random_range(2..7);
    let mut batch = TrainBatch::default();
    let mut state = variant.initial_state();
    while batch.len() < size {
        if state.is_terminal() {
            state = variant.initial_state();
        }
        batch.inputs.push(state.encode());
        let raw: Vec<f64> = (0..variant.action_space())
            .map(|_| if rng.random_bool(0.6) { rng.random::<f64>() } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum::<f64>().max(1e-12);
        batch.policy_targets.push(raw.iter().map(|r| (r / total) as f32).collect());
        batch.value_targets.push(*[-1.0f32, 0.0, 1.0].choose(rng).unwrap());
        batch.regret_targets.push(rng.random_range(0.0..4.5));
        let legal = state.legal_actions().expect("state is not terminal");
        state = state.apply(*legal.choose(rng).unwrap()).expect("legal action");
    }
    let mut order: Vec<usize> = (0..size).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], rng);
    let split = rng.random_range(1..=size);
    batch.groups.push(order[..split].to_vec());
    if size - split >= 2 {
        batch.groups.push(order[split..].to_vec());
    }
    (net, batch)
}

pub fn run(cfg: &GradCheckConfig) -> GradCheckReport {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        draws: cfg.draws,
        coordinates_checked: 0,
        max_relative_error: [0.0; 5],
        failures: Vec::new(),
    };
    for draw in 0..cfg.draws {
        let (mut net, batch) = random_draw(draw, &mut rng);
        let combined = LossWeights {
            policy: rng.random_range(0.2..2.0),
            value: rng.random_range(0.2..2.0),
            regret: rng.random_range(0.2..2.0),
            rank: rng.random_range(0.2..2.0),
        };
        let analytic: Vec<Vec<f64>> = CHECKED_LOSSES
            .iter()
            .map(|loss| {
                net.loss_and_grads(&batch, &weights_for(loss, combined))
                    .expect("finite losses on a random draw")
                    .1
            })
            .collect();
        for coord in 0..net.param_count() {
            let original = net.params()[coord];
            net.params_mut()[coord] = original + cfg.step;
            let plus = net.losses(&batch, &combined).expect("finite losses");
            net.params_mut()[coord] = original - cfg.step;
            let minus = net.losses(&batch, &combined).expect("finite losses");
            net.params_mut()[coord] = original;
            for (k, loss) in CHECKED_LOSSES.iter().enumerate() {
                let numeric = (plus.head(loss).unwrap() - minus.head(loss).unwrap()) / (2.0 * cfg.step);
                let a = analytic[k][coord];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
                report.max_relative_error[k] = report.max_relative_error[k].max(rel);
                if rel > cfg.tolerance {
                    report.failures.push(Mismatch {
                        draw,
                        loss,
                        coordinate: coord,
                        analytic: a,
                        numeric,
                        relative_error: rel,
                    });
                }
            }
            report.coordinates_checked += 1;
        }
    }
    report
}
