use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::games::{Action, GameState, Player, Variant};
use crate::mcts::{self, CachedEvaluator, MctsConfig, NetEvaluator};
use crate::net::Network;

/// One side of a match.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Contender {
    Net(Network<f32>),
    /// Uniform over legal moves.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub game: Variant,
    /// Total games; half are played with each colour assignment.
    pub games: usize,
    pub simulations: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl MatchConfig {
    pub fn new(game: Variant, games: usize, seed: u64) -> Self {
        MatchConfig {
            game,
            games,
            simulations: 50,
            temperature: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGame {
    /// Whether `a` moved first.
    pub a_first: bool,
    pub moves: Vec<Action>,
    /// Result from the first player's perspective.
    pub z: f32,
}

impl MatchGame {
    /// Score for `a`: 1 win, 0.5 draw, 0 loss.
    pub fn a_score(&self) -> f64 {
        let z = if self.a_first { self.z } else { -self.z };
        (1.0 + z as f64) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorSplit {
    pub games: usize,
    pub a_wins: usize,
    pub draws: usize,
    pub b_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub a: String,
    pub b: String,
    pub games: usize,
    pub a_wins: usize,
    pub draws: usize,
    pub b_wins: usize,
    pub a_first: ColorSplit,
    pub a_second: ColorSplit,
    pub records: Vec<MatchGame>,
}

impl MatchResult {
    fn from_games(a: &str, b: &str, records: Vec<MatchGame>) -> Self {
        let mut split = [ColorSplit::default(); 2];
        for g in &records {
            let s = &mut split[usize::from(!g.a_first)];
            s.games += 1;
            let score = g.a_score();
            if score == 1.0 {
                s.a_wins += 1;
            } else if score == 0.0 {
                s.b_wins += 1;
            } else {
                s.draws += 1;
            }
        }
        let [first, second] = split;
        MatchResult {
            a: a.to_string(),
            b: b.to_string(),
            games: records.len(),
            a_wins: first.a_wins + second.a_wins,
            draws: first.draws + second.draws,
            b_wins: first.b_wins + second.b_wins,
            a_first: first,
            a_second: second,
            records,
        }
    }

    /// `(wins + draws / 2) / games` for `a`.
    pub fn win_rate(&self) -> f64 {
        (self.a_wins as f64 + 0.5 * self.draws as f64) / self.games as f64
    }

    /// Wilson score interval for the win rate at 95%.
    pub fn ci95(&self) -> (f64, f64) {
        wilson(self.win_rate(), self.games as f64, 1.959_963_984_540_054)
    }

    /// The same games seen from `b`'s side.
    pub fn swapped(&self) -> MatchResult {
        let records = self
            .records
            .iter()
            .map(|g| MatchGame {
                a_first: !g.a_first,
                ..g.clone()
            })
            .collect();
        MatchResult::from_games(&self.b, &self.a, records)
    }
}

pub fn wilson(p: f64, n: f64, z: f64) -> (f64, f64) {
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn choose(
    who: &Contender,
    evaluator: &mut Option<CachedEvaluator<NetEvaluator<'_>>>,
    state: &GameState,
    mcts_cfg: &MctsConfig,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Action, EvalError> {
    match (who, evaluator) {
        (Contender::Net(_), Some(ev)) => {
            let result = mcts::search(state, ev, mcts_cfg, rng)?;
            Ok(mcts::select_action(&result, temperature, rng).expect("at least one simulation"))
        }
        _ => Ok(*state.legal_actions()?.choose(rng).expect("non-terminal state has a move")),
    }
}

fn play_one(a: &Contender, b: &Contender, a_first: bool, cfg: &MatchConfig, rng: &mut impl Rng) -> Result<MatchGame, EvalError> {
    let mcts_cfg = MctsConfig {
        simulations: cfg.simulations.max(1),
        noise: false,
        ..Default::default()
    };
    fn evaluator(c: &Contender) -> Option<CachedEvaluator<NetEvaluator<'_>>> {
        match c {
            Contender::Net(net) => Some(CachedEvaluator::new(NetEvaluator::new(net))),
            Contender::Random => None,
        }
    }
    let (mut ev_a, mut ev_b) = (evaluator(a), evaluator(b));
    let mut state = cfg.game.initial_state();
    let mut moves = Vec::new();
    while !state.is_terminal() {
        let a_to_move = (state.to_move() == Player::First) == a_first;
        let action = if a_to_move {
            choose(a, &mut ev_a, &state, &mcts_cfg, cfg.temperature, rng)?
        } else {
            choose(b, &mut ev_b, &state, &mcts_cfg, cfg.temperature, rng)?
        };
        moves.push(action);
        state = state.apply(action)?;
    }
    Ok(MatchGame {
        a_first,
        moves,
        z: state.terminal_value().expect("terminal").z(),
    })
}

/// Plays `cfg.games` games, alternating colours, with Dirichlet noise off.
/// Game `k` uses its own RNG stream, so results do not depend on threading.
pub fn play_match(a: (&str, &Contender), b: (&str, &Contender), cfg: &MatchConfig) -> Result<MatchResult, EvalError> {
    if cfg.games == 0 || !cfg.games.is_multiple_of(2) {
        return Err(EvalError::Invalid(format!("games must be a positive even number, got {}", cfg.games)));
    }
    for (name, c) in [a, b] {
        if let Contender::Net(net) = c {
            if net.variant() != cfg.game {
                return Err(EvalError::Mismatch(format!(
                    "{name} was trained on {} but the match is {}",
                    net.variant(),
                    cfg.game
                )));
            }
        }
    }
    let records = (0..cfg.games)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            play_one(a.1, b.1, k % 2 == 0, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MatchResult::from_games(a.0, b.0, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn cfg(games: usize) -> MatchConfig {
        MatchConfig {
            simulations: 8,
            ..MatchConfig::new(Variant::Hex(3), games, 11)
        }
    }

    #[test]
    fn colours_are_balanced_and_counts_add_up() {
        let r = play_match(("r1", &Contender::Random), ("r2", &Contender::Random), &cfg(40)).unwrap();
        assert_eq!(r.a_wins + r.draws + r.b_wins, 40);
        assert_eq!(r.a_first.games, 20);
        assert_eq!(r.a_second.games, 20);
        assert_eq!(r.draws, 0);
        let expected = (r.a_wins as f64 + r.draws as f64 / 2.0) / 40.0;
        assert_eq!(r.win_rate(), expected);
        for g in &r.records {
            let end = Variant::Hex(3).initial_state().play_all(&g.moves).unwrap();
            assert_eq!(end.terminal_value().unwrap().z(), g.z);
        }
    }

    #[test]
    fn swapping_colours_swaps_wins_and_losses() {
        let r = play_match(("a", &Contender::Random), ("b", &Contender::Random), &cfg(20)).unwrap();
        let s = r.swapped();
        assert_eq!((s.a_wins, s.draws, s.b_wins), (r.b_wins, r.draws, r.a_wins));
        assert_eq!(s.a_first, ColorSplit {
            games: r.a_second.games,
            a_wins: r.a_second.b_wins,
            draws: r.a_second.draws,
            b_wins: r.a_second.a_wins,
        });
        assert_eq!(s.swapped(), r);
    }

    #[test]
    fn self_play_is_symmetric() {
        let net = Network::random(NetConfig::default(), Variant::Hex(3), &mut ChaCha8Rng::seed_from_u64(2));
        let c = Contender::Net(net);
        let r = play_match(("x", &c), ("x", &c), &cfg(400)).unwrap();
        let sigma = (0.25f64 / 400.0).sqrt();
        assert!((r.win_rate() - 0.5).abs() < 3.0 * sigma, "{}", r.win_rate());
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let a = play_match(("a", &Contender::Random), ("b", &Contender::Random), &cfg(16)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| play_match(("a", &Contender::Random), ("b", &Contender::Random), &cfg(16)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn refuses_other_games_and_odd_counts() {
        let net = Network::<f32>::zeros(NetConfig::default(), Variant::Hex(4));
        let err = play_match(("a", &Contender::Net(net)), ("b", &Contender::Random), &cfg(10)).unwrap_err();
        assert!(matches!(err, EvalError::Mismatch(_)));
        assert!(play_match(("a", &Contender::Random), ("b", &Contender::Random), &cfg(7)).is_err());
    }

    #[test]
    fn wilson_interval() {
        let (lo, hi) = wilson(0.5, 400.0, 1.959_963_984_540_054);
        assert!((lo - 0.451_234_5).abs() < 1e-6 && (hi - 0.548_765_5).abs() < 1e-6, "{lo} {hi}");
        let (lo, hi) = wilson(1.0, 10.0, 1.96);
        assert!(hi == 1.0 && (lo - 0.722_459_8).abs() < 1e-6, "{lo}");
    }
}
