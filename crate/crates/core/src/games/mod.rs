//! Two-player zero-sum board games used for self-play.
//!
//! Both games share one immutable [`GameState`] type; the rules live in the
//! [`hex`] and [`othello`] submodules. Actions are plain cell indices
//! (`row * size + col`); Othello adds an explicit pass action at index
//! `size * size`.

mod hex;
mod othello;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a game's action space.
pub type Action = usize;

/// Number of input planes produced by [`GameState::encode`].
pub const INPUT_PLANES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game is already over")]
    Terminal,
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: Action, reason: &'static str },
    #[error("cannot parse position {input:?}: {reason}")]
    Parse { input: String, reason: String },
    #[error("unsupported board size {size} for {game}")]
    BadSize { game: &'static str, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Player {
    First,
    Second,
}

impl Player {
    pub fn opponent(self) -> Player {
        match self {
            Player::First => Player::Second,
            Player::Second => Player::First,
        }
    }

    /// +1 for the first player, -1 for the second.
    pub fn sign(self) -> f32 {
        match self {
            Player::First => 1.0,
            Player::Second => -1.0,
        }
    }

    fn symbol(self) -> char {
        match self {
            Player::First => 'X',
            Player::Second => 'O',
        }
    }
}

/// Final result of a game, always stored from the first player's perspective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    z: i8,
}

impl Outcome {
    pub const FIRST_WINS: Outcome = Outcome { z: 1 };
    pub const SECOND_WINS: Outcome = Outcome { z: -1 };
    pub const DRAW: Outcome = Outcome { z: 0 };

    pub fn win_for(player: Player) -> Outcome {
        match player {
            Player::First => Outcome::FIRST_WINS,
            Player::Second => Outcome::SECOND_WINS,
        }
    }

    /// z from the reference (first) player's perspective.
    pub fn z(self) -> f32 {
        self.z as f32
    }

    /// z from `player`'s perspective.
    pub fn for_player(self, player: Player) -> f32 {
        self.z() * player.sign()
    }

    pub fn winner(self) -> Option<Player> {
        match self.z {
            1 => Some(Player::First),
            -1 => Some(Player::Second),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "game", content = "size", rename_all = "lowercase")]
pub enum Variant {
    Hex(usize),
    Othello(usize),
}

impl Variant {
    pub fn hex(size: usize) -> Result<Variant, GameError> {
        if !(2..=19).contains(&size) {
            return Err(GameError::BadSize { game: "hex", size });
        }
        Ok(Variant::Hex(size))
    }

    pub fn othello(size: usize) -> Result<Variant, GameError> {
        if !(4..=16).contains(&size) || !size.is_multiple_of(2) {
            return Err(GameError::BadSize { game: "othello", size });
        }
        Ok(Variant::Othello(size))
    }

    pub fn size(self) -> usize {
        match self {
            Variant::Hex(n) | Variant::Othello(n) => n,
        }
    }

    pub fn cells(self) -> usize {
        self.size() * self.size()
    }

    /// Size of the full action space, including Othello's pass action.
    pub fn action_space(self) -> usize {
        match self {
            Variant::Hex(n) => n * n,
            Variant::Othello(n) => n * n + 1,
        }
    }

    /// Upper bound on the number of moves in any game.
    pub fn max_game_length(self) -> usize {
        match self {
            Variant::Hex(n) => n * n,
            // every placement fills a cell; passes can never occur twice in a row
            Variant::Othello(n) => 2 * (n * n - 4) + 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Variant::Hex(_) => "hex",
            Variant::Othello(_) => "othello",
        }
    }

    pub fn initial_state(self) -> GameState {
        match self {
            Variant::Hex(n) => GameState {
                variant: self,
                cells: vec![None; n * n],
                to_move: Player::First,
                move_count: 0,
                outcome: None,
            },
            Variant::Othello(n) => {
                let mut cells = vec![None; n * n];
                let d = n / 2;
                cells[(d - 1) * n + (d - 1)] = Some(Player::Second);
                cells[d * n + d] = Some(Player::Second);
                cells[(d - 1) * n + d] = Some(Player::First);
                cells[d * n + (d - 1)] = Some(Player::First);
                GameState {
                    variant: self,
                    cells,
                    to_move: Player::First,
                    move_count: 0,
                    outcome: None,
                }
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.name(), self.size())
    }
}

impl FromStr for Variant {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| GameError::Parse {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| err("missing board size"))?;
        let size: usize = s[split..].parse().map_err(|_| err("bad board size"))?;
        match &s[..split] {
            "hex" => Variant::hex(size),
            "othello" => Variant::othello(size),
            _ => Err(err("unknown game")),
        }
    }
}

/// Immutable game position.
///
/// `move_count` counts every action applied since the game's true initial
/// state, so a position restored from a restart buffer keeps its age.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GameState {
    variant: Variant,
    cells: Vec<Option<Player>>,
    to_move: Player,
    move_count: u32,
    outcome: Option<Outcome>,
}

impl GameState {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn to_move(&self) -> Player {
        self.to_move
    }

    pub fn move_count(&self) -> u32 {
        self.move_count
    }

    pub fn cell(&self, index: usize) -> Option<Player> {
        self.cells[index]
    }

    pub fn cells(&self) -> &[Option<Player>] {
        &self.cells
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    /// `None` while the game is running, otherwise the final result.
    pub fn terminal_value(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn legal_actions(&self) -> Result<Vec<Action>, GameError> {
        if self.is_terminal() {
            return Err(GameError::Terminal);
        }
        Ok(match self.variant {
            Variant::Hex(_) => hex::legal_actions(self),
            Variant::Othello(_) => othello::legal_actions(self),
        })
    }

    pub fn apply(&self, action: Action) -> Result<GameState, GameError> {
        if self.is_terminal() {
            return Err(GameError::Terminal);
        }
        if action >= self.variant.action_space() {
            return Err(GameError::IllegalAction {
                action,
                reason: "outside the action space",
            });
        }
        match self.variant {
            Variant::Hex(_) => hex::apply(self, action),
            Variant::Othello(_) => othello::apply(self, action),
        }
    }

    /// Network input planes in channel-major order (`INPUT_PLANES x cells`):
    /// mover's stones, opponent's stones, a constant plane set when the first
    /// player is to move, and an all-ones plane marking the board extent.
    pub fn encode(&self) -> Vec<f32> {
        let cells = self.variant.cells();
        let mut planes = vec![0.0; INPUT_PLANES * cells];
        let first_to_move = if self.to_move == Player::First { 1.0 } else { 0.0 };
        for (i, cell) in self.cells.iter().enumerate() {
            match cell {
                Some(p) if *p == self.to_move => planes[i] = 1.0,
                Some(_) => planes[cells + i] = 1.0,
                None => {}
            }
            planes[2 * cells + i] = first_to_move;
            planes[3 * cells + i] = 1.0;
        }
        planes
    }

    /// Replays `actions` from this state.
    pub fn play_all(&self, actions: &[Action]) -> Result<GameState, GameError> {
        let mut state = self.clone();
        for &a in actions {
            state = state.apply(a)?;
        }
        Ok(state)
    }

    fn placed(&self, cells: Vec<Option<Player>>, outcome: Option<Outcome>) -> GameState {
        GameState {
            variant: self.variant,
            cells,
            to_move: self.to_move.opponent(),
            move_count: self.move_count + 1,
            outcome,
        }
    }
}

/// One-line text form: `<game><size> <rows separated by '/'> <mover> <move count>`,
/// with `X` for the first player, `O` for the second and `.` for empty cells.
impl fmt::Display for GameState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.variant.size();
        write!(f, "{} ", self.variant)?;
        for r in 0..n {
            if r > 0 {
                f.write_str("/")?;
            }
            for c in 0..n {
                let ch = self.cells[r * n + c].map_or('.', Player::symbol);
                write!(f, "{ch}")?;
            }
        }
        write!(f, " {} {}", self.to_move.symbol(), self.move_count)
    }
}

impl FromStr for GameState {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| GameError::Parse {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = s.split_whitespace().collect();
        let [variant, board, mover, count] = fields[..] else {
            return Err(err("expected 4 fields"));
        };
        let variant: Variant = variant.parse()?;
        let n = variant.size();
        let rows: Vec<&str> = board.split('/').collect();
        if rows.len() != n || rows.iter().any(|r| r.chars().count() != n) {
            return Err(err("board shape does not match size"));
        }
        let mut cells = Vec::with_capacity(n * n);
        for ch in rows.iter().flat_map(|r| r.chars()) {
            cells.push(match ch {
                '.' => None,
                'X' => Some(Player::First),
                'O' => Some(Player::Second),
                _ => return Err(err("unknown cell symbol")),
            });
        }
        let to_move = match mover {
            "X" => Player::First,
            "O" => Player::Second,
            _ => return Err(err("unknown mover")),
        };
        let move_count: u32 = count.parse().map_err(|_| err("bad move count"))?;
        let mut state = GameState {
            variant,
            cells,
            to_move,
            move_count,
            outcome: None,
        };
        match variant {
            Variant::Hex(_) => hex::validate_and_settle(&mut state).map_err(&err)?,
            Variant::Othello(_) => othello::validate_and_settle(&mut state).map_err(err)?,
        }
        Ok(state)
    }
}

impl Serialize for GameState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GameState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
