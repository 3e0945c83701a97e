//! Hex rules. The first player connects the top and bottom rows, the second
//! player the left and right columns. Hex cannot end in a draw.

use super::{Action, GameError, GameState, Outcome, Player};

const NEIGHBOURS: [(isize, isize); 6] = [(-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0)];

pub(super) fn legal_actions(state: &GameState) -> Vec<Action> {
    (0..state.cells.len())
        .filter(|&i| state.cells[i].is_none())
        .collect()
}

pub(super) fn apply(state: &GameState, action: Action) -> Result<GameState, GameError> {
    if state.cells[action].is_some() {
        return Err(GameError::IllegalAction {
            action,
            reason: "cell is occupied",
        });
    }
    let mut cells = state.cells.clone();
    let mover = state.to_move;
    cells[action] = Some(mover);
    let n = state.variant.size();
    // only the group containing the new stone can have completed a chain
    let outcome = connects(&cells, n, mover, action).then(|| Outcome::win_for(mover));
    Ok(state.placed(cells, outcome))
}

/// Whether the group containing `from` touches both of `player`'s edges.
fn connects(cells: &[Option<Player>], n: usize, player: Player, from: usize) -> bool {
    let mut seen = vec![false; cells.len()];
    let mut stack = vec![from];
    seen[from] = true;
    let (mut low, mut high) = (false, false);
    while let Some(i) = stack.pop() {
        let (r, c) = (i / n, i % n);
        let along = if player == Player::First { r } else { c };
        low |= along == 0;
        high |= along == n - 1;
        if low && high {
            return true;
        }
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
                continue;
            }
            let j = nr as usize * n + nc as usize;
            if !seen[j] && cells[j] == Some(player) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    false
}

fn has_chain(cells: &[Option<Player>], n: usize, player: Player) -> bool {
    (0..n)
        .map(|k| if player == Player::First { k } else { k * n })
        .any(|start| cells[start] == Some(player) && connects(cells, n, player, start))
}

pub(super) fn validate_and_settle(state: &mut GameState) -> Result<(), &'static str> {
    let firsts = state.cells.iter().filter(|c| **c == Some(Player::First)).count();
    let seconds = state.cells.iter().filter(|c| **c == Some(Player::Second)).count();
    let expected_mover = match firsts.checked_sub(seconds) {
        Some(0) => Player::First,
        Some(1) => Player::Second,
        _ => return Err("stone counts are not alternating"),
    };
    if state.to_move != expected_mover {
        return Err("mover does not match stone counts");
    }
    if state.move_count as usize != firsts + seconds {
        return Err("move count does not match stone count");
    }
    let n = state.variant.size();
    let first = has_chain(&state.cells, n, Player::First);
    let second = has_chain(&state.cells, n, Player::Second);
    state.outcome = match (first, second) {
        (true, true) => return Err("both players are connected"),
        (true, false) => Some(Outcome::FIRST_WINS),
        (false, true) => Some(Outcome::SECOND_WINS),
        (false, false) => None,
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use crate::games::{GameState, Outcome, Player, Variant};

    #[test]
    fn first_stone_is_owned_by_first_player() {
        let s = Variant::Hex(5).initial_state().apply(0).unwrap();
        assert_eq!(s.cell(0), Some(Player::First));
        assert_eq!(s.to_move(), Player::Second);
        assert_eq!(s.move_count(), 1);
        assert!(s.apply(0).is_err());
    }

    #[test]
    fn completing_a_column_wins_for_first() {
        // X holds column 0 rows 0..=3 of a 5x5 board; O stones elsewhere
        let s: GameState = "hex5 X.O../X.O../X.O../X.O../..... X 8".parse().unwrap();
        assert_eq!(s.terminal_value(), None);
        let done = s.apply(20).unwrap();
        assert!(done.is_terminal());
        assert_eq!(done.terminal_value(), Some(Outcome::FIRST_WINS));
        assert_eq!(done.terminal_value().unwrap().for_player(Player::First), 1.0);
    }

    #[test]
    fn second_player_connects_left_to_right() {
        let s: GameState = "hex3 X.X/OOO/X.. X 6".parse().unwrap();
        assert_eq!(s.terminal_value(), Some(Outcome::SECOND_WINS));
    }

    #[test]
    fn diagonal_adjacency_follows_hex_geometry() {
        // (0,1)-(1,0) are neighbours, (0,0)-(1,1) are not
        let joined: GameState = "hex2 OX/X. O 3".parse().unwrap();
        assert_eq!(joined.terminal_value(), Some(Outcome::FIRST_WINS));
        let apart: GameState = "hex2 X./OX O 3".parse().unwrap();
        assert_eq!(apart.terminal_value(), None);
    }

    #[test]
    fn filled_boards_are_terminal_and_never_drawn() {
        for seed in 0..50u64 {
            let mut s = Variant::Hex(4).initial_state();
            let mut k = seed;
            while !s.is_terminal() {
                let actions = s.legal_actions().unwrap();
                k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                s = s.apply(actions[(k >> 33) as usize % actions.len()]).unwrap();
            }
            assert_ne!(s.terminal_value().unwrap(), Outcome::DRAW);
        }
        // a full board with no empty cell always has exactly one chain
        let full: GameState = "hex3 XOX/OXO/XOX O 9".parse().unwrap();
        assert!(full.is_terminal());
    }
}
