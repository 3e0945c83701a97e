//! Desk-scale AlphaZero laboratory with regret-guided search control.

pub mod games;
pub mod mcts;
pub mod net;
pub mod regret;
pub mod archives;
pub mod selfplay;
pub mod config;
pub mod trainer;
pub mod toyexp;
pub mod evalkit;
