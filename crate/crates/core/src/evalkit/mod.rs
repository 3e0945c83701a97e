//! Match play, anchored Elo, and the buffer and regret diagnostics.

pub mod analysis;
pub mod elo;
pub mod matches;
pub mod plot;

use thiserror::Error;

pub use analysis::{
    analyze_opening_lengths, analyze_prb_shift, analyze_selected_regret, track_opening_regret, OpeningLengthRow, PrbShift,
    SelectedRegret,
};
pub use elo::{compute_elo, EloTable, Pairing};
pub use matches::{play_match, Contender, MatchConfig, MatchResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("`{0}` has no chain of games to the anchor")]
    Disconnected(String),
    #[error("rating of `{0}` diverges: it won or lost every game")]
    Diverged(String),
    #[error("no buffer entry with id {0}")]
    UnknownEntry(u64),
    #[error("plotting failed: {0}")]
    Plot(String),
    #[error(transparent)]
    Game(#[from] crate::games::GameError),
    #[error(transparent)]
    Regret(#[from] crate::regret::RegretError),
    #[error(transparent)]
    Net(#[from] crate::net::NetError),
}
