//! Othello rules on an even `n x n` board. Passing is an explicit action and is
//! the only legal move when the mover has no flipping placement.

use super::{Action, GameError, GameState, Outcome, Player};

const DIRECTIONS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn pass_action(n: usize) -> Action {
    n * n
}

/// Discs flipped by `player` placing at `at`; empty when the placement is illegal.
fn flips(cells: &[Option<Player>], n: usize, player: Player, at: usize) -> Vec<usize> {
    let mut flipped = Vec::new();
    if cells[at].is_some() {
        return flipped;
    }
    let (r0, c0) = ((at / n) as isize, (at % n) as isize);
    for (dr, dc) in DIRECTIONS {
        let mut run = Vec::new();
        let (mut r, mut c) = (r0 + dr, c0 + dc);
        while r >= 0 && c >= 0 && r < n as isize && c < n as isize {
            let i = r as usize * n + c as usize;
            match cells[i] {
                Some(p) if p == player => {
                    flipped.extend_from_slice(&run);
                    break;
                }
                Some(_) => run.push(i),
                None => break,
            }
            r += dr;
            c += dc;
        }
    }
    flipped
}

fn placements(cells: &[Option<Player>], n: usize, player: Player) -> Vec<Action> {
    (0..n * n)
        .filter(|&i| !flips(cells, n, player, i).is_empty())
        .collect()
}

fn has_placement(cells: &[Option<Player>], n: usize, player: Player) -> bool {
    (0..n * n).any(|i| !flips(cells, n, player, i).is_empty())
}

fn settle(cells: &[Option<Player>], n: usize, to_move: Player) -> Option<Outcome> {
    if has_placement(cells, n, to_move) || has_placement(cells, n, to_move.opponent()) {
        return None;
    }
    let first = cells.iter().filter(|c| **c == Some(Player::First)).count();
    let second = cells.iter().filter(|c| **c == Some(Player::Second)).count();
    Some(match first.cmp(&second) {
        std::cmp::Ordering::Greater => Outcome::FIRST_WINS,
        std::cmp::Ordering::Less => Outcome::SECOND_WINS,
        std::cmp::Ordering::Equal => Outcome::DRAW,
    })
}

pub(super) fn legal_actions(state: &GameState) -> Vec<Action> {
    let n = state.variant.size();
    let moves = placements(&state.cells, n, state.to_move);
    if moves.is_empty() {
        vec![pass_action(n)]
    } else {
        moves
    }
}

pub(super) fn apply(state: &GameState, action: Action) -> Result<GameState, GameError> {
    let n = state.variant.size();
    let mover = state.to_move;
    let cells = if action == pass_action(n) {
        if has_placement(&state.cells, n, mover) {
            return Err(GameError::IllegalAction {
                action,
                reason: "pass while a placement is available",
            });
        }
        state.cells.clone()
    } else {
        let flipped = flips(&state.cells, n, mover, action);
        if flipped.is_empty() {
            return Err(GameError::IllegalAction {
                action,
                reason: "placement flips no discs",
            });
        }
        let mut cells = state.cells.clone();
        cells[action] = Some(mover);
        for i in flipped {
            cells[i] = Some(mover);
        }
        cells
    };
    let outcome = settle(&cells, n, mover.opponent());
    Ok(state.placed(cells, outcome))
}

pub(super) fn validate_and_settle(state: &mut GameState) -> Result<(), &'static str> {
    let discs = state.cells.iter().filter(|c| c.is_some()).count();
    if discs < 4 || discs - 4 > state.move_count as usize {
        return Err("disc count inconsistent with move count");
    }
    state.outcome = settle(&state.cells, state.variant.size(), state.to_move);
    Ok(())
}
