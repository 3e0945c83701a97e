//! PUCT tree search with negamax backup.
//!
//! Every node that receives a network evaluation keeps the ranking score and
//! regret estimate from that evaluation, so the whole tree can be scanned for
//! restart candidates after the game without further inference.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::games::{Action, GameError, GameState};
use crate::net::{NetOutput, Network, Trace};

/// Anything that can score a position.
pub trait Evaluator {
    fn evaluate(&mut self, state: &GameState) -> NetOutput;
}

/// Evaluates with an `f32` network, reusing scratch space between calls.
pub struct NetEvaluator<'a> {
    net: &'a Network<f32>,
    trace: Trace<f32>,
}

impl<'a> NetEvaluator<'a> {
    pub fn new(net: &'a Network<f32>) -> Self {
        NetEvaluator {
            net,
            trace: Trace::default(),
        }
    }
}

impl Evaluator for NetEvaluator<'_> {
    fn evaluate(&mut self, state: &GameState) -> NetOutput {
        self.net
            .forward_with(&state.encode(), &mut self.trace)
            .expect("state encoding matches the network's variant")
    }
}

/// Memoizes another evaluator. Searches at successive moves of one game
/// revisit many positions, and the network does not change within a game.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: HashMap<GameState, NetOutput>,
    pub hits: u64,
    pub misses: u64,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        CachedEvaluator {
            inner,
            cache: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn clear(&mut self) {
        self.cache.clear();
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&mut self, state: &GameState) -> NetOutput {
        if let Some(out) = self.cache.get(state) {
            self.hits += 1;
            return out.clone();
        }
        self.misses += 1;
        let out = self.inner.evaluate(state);
        self.cache.insert(state.clone(), out.clone());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub simulations: usize,
    pub c_puct: f32,
    /// Mix Dirichlet noise into the root priors.
    pub noise: bool,
    pub dirichlet_ratio: f32,
    /// Concentration; `None` means 10 / board cells.
    pub dirichlet_alpha: Option<f32>,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            simulations: 50,
            c_puct: 1.5,
            noise: true,
            dirichlet_ratio: 0.25,
            dirichlet_alpha: None,
        }
    }
}

/// A node that was evaluated by the network during a search.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedNode {
    pub state: GameState,
    pub gamma: f32,
    pub regret_value: f32,
}

#[derive(Debug, Clone)]
struct Edge {
    action: Action,
    prior: f32,
    visits: u32,
    /// Summed value from the perspective of the player choosing this edge.
    total: f32,
    child: Option<usize>,
}

impl Edge {
    fn q(&self) -> f32 {
        if self.visits == 0 {
            0.0
        } else {
            self.total / self.visits as f32
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    state: GameState,
    /// Exact value for the player to move, set on terminal nodes.
    terminal: Option<f32>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Visit counts over the full action space.
    pub visits: Vec<u32>,
    /// Root child Q values from the root mover's perspective (0 if unvisited).
    pub q: Vec<f32>,
    /// Root priors after masking, renormalization and noise.
    pub priors: Vec<f32>,
    pub root_value: f32,
    pub root_gamma: f32,
    pub root_regret_value: f32,
    pub simulations: usize,
    /// The root followed by every network-evaluated node, in expansion order.
    pub expanded: Vec<ExpandedNode>,
}

/// Root statistics for inspection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SearchDebug {
    pub root: String,
    pub visits: Vec<u32>,
    pub q: Vec<f32>,
    pub priors: Vec<f32>,
    pub selected: Option<Action>,
    pub v_selected: Option<f32>,
}

impl SearchResult {
    /// Visits divided by their total.
    pub fn distribution(&self) -> Vec<f32> {
        let total: u32 = self.visits.iter().sum();
        if total == 0 {
            return vec![0.0; self.visits.len()];
        }
        self.visits.iter().map(|v| *v as f32 / total as f32).collect()
    }

    /// Q of the chosen root edge from the root mover's perspective.
    pub fn v_selected(&self, action: Action) -> f32 {
        self.q[action]
    }

    /// Every network-evaluated node of this search; terminal nodes are never
    /// evaluated and so never appear.
    pub fn harvest(&self) -> &[ExpandedNode] {
        &self.expanded
    }

    pub fn debug(&self, root: &GameState, selected: Option<Action>) -> SearchDebug {
        SearchDebug {
            root: root.to_string(),
            visits: self.visits.clone(),
            q: self.q.clone(),
            priors: self.priors.clone(),
            selected,
            v_selected: selected.map(|a| self.v_selected(a)),
        }
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut impl Rng) -> Vec<f32> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| (d / total) as f32).collect()
    } else {
        vec![1.0 / n as f32; n]
    }
}

fn expand(state: GameState, out: &NetOutput) -> Node {
    let legal = state.legal_actions().expect("expanded nodes are not terminal");
    let mass: f32 = legal.iter().map(|a| out.policy[*a]).sum();
    let edges = legal
        .iter()
        .map(|&a| Edge {
            action: a,
            prior: if mass > 0.0 {
                out.policy[a] / mass
            } else {
                1.0 / legal.len() as f32
            },
            visits: 0,
            total: 0.0,
            child: None,
        })
        .collect();
    Node {
        state,
        terminal: None,
        edges,
    }
}

fn select_edge(node: &Node, c_puct: f32) -> usize {
    let parent: u32 = node.edges.iter().map(|e| e.visits).sum();
    let sqrt = (parent as f32).sqrt();
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    for (i, e) in node.edges.iter().enumerate() {
        let score = e.q() + c_puct * e.prior * sqrt / (1.0 + e.visits as f32);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

/// Runs `cfg.simulations` simulations from `root`. The root evaluation is not
/// counted as a simulation, so root visits always sum to `cfg.simulations`.
pub fn search(
    root: &GameState,
    evaluator: &mut impl Evaluator,
    cfg: &MctsConfig,
    rng: &mut impl Rng,
) -> Result<SearchResult, GameError> {
    if root.is_terminal() {
        return Err(GameError::Terminal);
    }
    let variant = root.variant();
    let out = evaluator.evaluate(root);
    let mut expanded = vec![ExpandedNode {
        state: root.clone(),
        gamma: out.gamma,
        regret_value: out.regret_value,
    }];
    let mut root_node = expand(root.clone(), &out);
    if cfg.noise {
        let alpha = cfg.dirichlet_alpha.unwrap_or(10.0 / variant.cells() as f32);
        let noise = dirichlet(alpha as f64, root_node.edges.len(), rng);
        for (e, n) in root_node.edges.iter_mut().zip(noise) {
            e.prior = (1.0 - cfg.dirichlet_ratio) * e.prior + cfg.dirichlet_ratio * n;
        }
    }
    let mut priors = vec![0.0; variant.action_space()];
    for e in &root_node.edges {
        priors[e.action] = e.prior;
    }
    let mut tree = vec![root_node];

    let mut path: Vec<(usize, usize)> = Vec::new();
    for _ in 0..cfg.simulations {
        path.clear();
        let mut node = 0;
        // value of the leaf from the perspective of its player to move
        let leaf_value = loop {
            let e = select_edge(&tree[node], cfg.c_puct);
            path.push((node, e));
            match tree[node].edges[e].child {
                Some(child) => {
                    if let Some(v) = tree[child].terminal {
                        break v;
                    }
                    node = child;
                }
                None => {
                    let action = tree[node].edges[e].action;
                    let state = tree[node].state.apply(action).expect("edges are legal");
                    let id = tree.len();
                    tree[node].edges[e].child = Some(id);
                    if let Some(outcome) = state.terminal_value() {
                        let v = outcome.for_player(state.to_move());
                        tree.push(Node {
                            state,
                            terminal: Some(v),
                            edges: Vec::new(),
                        });
                        break v;
                    }
                    let out = evaluator.evaluate(&state);
                    expanded.push(ExpandedNode {
                        state: state.clone(),
                        gamma: out.gamma,
                        regret_value: out.regret_value,
                    });
                    tree.push(expand(state, &out));
                    break out.value;
                }
            }
        };
        let mut value = leaf_value;
        for &(n, e) in path.iter().rev() {
            value = -value;
            let edge = &mut tree[n].edges[e];
            edge.visits += 1;
            edge.total += value;
        }
    }

    let mut visits = vec![0; variant.action_space()];
    let mut q = vec![0.0; variant.action_space()];
    for e in &tree[0].edges {
        visits[e.action] = e.visits;
        q[e.action] = e.q();
    }
    Ok(SearchResult {
        visits,
        q,
        priors,
        root_value: out.value,
        root_gamma: out.gamma,
        root_regret_value: out.regret_value,
        simulations: cfg.simulations,
        expanded,
    })
}

/// Move probabilities proportional to `visits^(1/temperature)`. Temperature 0
/// puts all mass on the most visited action, lowest index first.
pub fn action_probabilities(visits: &[u32], temperature: f64) -> Vec<f64> {
    let mut probs = vec![0.0; visits.len()];
    let max = visits.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return probs;
    }
    if temperature <= 0.0 {
        let best = visits.iter().position(|v| *v == max).unwrap();
        probs[best] = 1.0;
        return probs;
    }
    // scale by the maximum first so large exponents cannot overflow
    let mut total = 0.0;
    for (p, v) in probs.iter_mut().zip(visits) {
        if *v > 0 {
            *p = (*v as f64 / max as f64).powf(1.0 / temperature);
            total += *p;
        }
    }
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Samples a move from the root visit counts; `None` only if nothing was visited.
pub fn select_action(result: &SearchResult, temperature: f64, rng: &mut impl Rng) -> Option<Action> {
    let probs = action_probabilities(&result.visits, temperature);
    if temperature <= 0.0 {
        return probs.iter().position(|p| *p == 1.0);
    }
    WeightedIndex::new(&probs).ok().map(|w| w.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{Player, Variant};
    use crate::net::{NetConfig, Torso};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn quiet(simulations: usize) -> MctsConfig {
        MctsConfig {
            simulations,
            noise: false,
            ..Default::default()
        }
    }

    fn zero_net(v: Variant) -> Network<f32> {
        Network::zeros(NetConfig::default(), v)
    }

    /// Exact negamax value for the player to move.
    fn solve(s: &GameState, memo: &mut HashMap<GameState, i8>) -> i8 {
        if let Some(o) = s.terminal_value() {
            return o.for_player(s.to_move()) as i8;
        }
        if let Some(v) = memo.get(s) {
            return *v;
        }
        let best = s
            .legal_actions()
            .unwrap()
            .into_iter()
            .map(|a| -solve(&s.apply(a).unwrap(), memo))
            .max()
            .unwrap();
        memo.insert(s.clone(), best);
        best
    }

    #[test]
    fn finds_the_one_move_win() {
        // X owns the top two rows of column 1; (2,1) completes the chain
        let s: GameState = "hex3 .X./.X./O.O X 4".parse().unwrap();
        let mut memo = HashMap::new();
        let winning: Vec<Action> = s
            .legal_actions()
            .unwrap()
            .into_iter()
            .filter(|a| s.apply(*a).unwrap().terminal_value().and_then(|o| o.winner()) == Some(Player::First))
            .collect();
        assert_eq!(winning, vec![7]);
        assert_eq!(solve(&s, &mut memo), 1);

        let net = zero_net(Variant::Hex(3));
        let mut rng = StdRng::seed_from_u64(0);
        let r = search(&s, &mut NetEvaluator::new(&net), &quiet(50), &mut rng).unwrap();
        let best = select_action(&r, 0.0, &mut rng).unwrap();
        assert_eq!(best, 7);
        assert!(r.v_selected(best) >= 0.9);
    }

    #[test]
    fn first_simulation_follows_lowest_index_on_uniform_priors() {
        let net = zero_net(Variant::Hex(4));
        let mut rng = StdRng::seed_from_u64(0);
        let r = search(&Variant::Hex(4).initial_state(), &mut NetEvaluator::new(&net), &quiet(1), &mut rng).unwrap();
        let mut expected = vec![0; 16];
        expected[0] = 1;
        assert_eq!(r.visits, expected);
        assert!(r.priors.iter().all(|p| (p - 1.0 / 16.0).abs() < 1e-7));
    }

    #[test]
    fn visits_account_for_every_simulation() {
        let mut rng = StdRng::seed_from_u64(9);
        let net = Network::<f32>::random(NetConfig::default(), Variant::Hex(3), &mut rng);
        // near the end of the game so terminal short-circuits occur
        let s: GameState = "hex3 XO./OX./... X 4".parse().unwrap();
        for sims in [1, 7, 64] {
            let r = search(&s, &mut NetEvaluator::new(&net), &MctsConfig { simulations: sims, ..Default::default() }, &mut rng).unwrap();
            assert_eq!(r.visits.iter().sum::<u32>() as usize, sims);
            let d = r.distribution();
            for (p, v) in d.iter().zip(&r.visits) {
                assert_eq!(*p, *v as f32 / sims as f32);
            }
            assert!(r.expanded.len() <= sims + 1);
            assert_eq!(r.expanded[0].state, s);
            assert!(r.expanded.iter().all(|n| !n.state.is_terminal()));
        }
    }

    #[test]
    fn harvested_scores_match_a_fresh_forward_pass() {
        let mut rng = StdRng::seed_from_u64(3);
        let net = Network::<f32>::random(NetConfig::default(), Variant::Othello(6), &mut rng);
        let r = search(&Variant::Othello(6).initial_state(), &mut NetEvaluator::new(&net), &quiet(30), &mut rng).unwrap();
        for node in r.harvest() {
            let fresh = net.forward(&node.state.encode()).unwrap();
            assert!((fresh.gamma - node.gamma).abs() < 1e-6);
            assert!((fresh.regret_value - node.regret_value).abs() < 1e-6);
        }
    }

    #[test]
    fn search_without_noise_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(4);
        let net = Network::<f32>::random(NetConfig { torso: Torso::Mlp { hidden: 8, layers: 1 }, head_hidden: 4 }, Variant::Hex(4), &mut rng);
        let s = Variant::Hex(4).initial_state();
        let a = search(&s, &mut NetEvaluator::new(&net), &quiet(40), &mut StdRng::seed_from_u64(1)).unwrap();
        let b = search(&s, &mut NetEvaluator::new(&net), &quiet(40), &mut StdRng::seed_from_u64(2)).unwrap();
        assert_eq!(a.visits, b.visits);
        assert_eq!(a.q, b.q);
    }

    #[test]
    fn cache_does_not_change_results() {
        let mut rng = StdRng::seed_from_u64(6);
        let net = Network::<f32>::random(NetConfig::default(), Variant::Hex(4), &mut rng);
        let mut cached = CachedEvaluator::new(NetEvaluator::new(&net));
        let mut s = Variant::Hex(4).initial_state();
        for _ in 0..4 {
            let a = search(&s, &mut NetEvaluator::new(&net), &quiet(30), &mut rng).unwrap();
            let b = search(&s, &mut cached, &quiet(30), &mut rng).unwrap();
            assert_eq!(a.visits, b.visits);
            assert_eq!(a.q, b.q);
            assert_eq!(a.expanded, b.expanded);
            s = s.apply(select_action(&a, 0.0, &mut rng).unwrap()).unwrap();
        }
        assert!(cached.hits > 0);
    }

    #[test]
    fn noise_keeps_priors_normalized_over_legal_moves() {
        let net = zero_net(Variant::Othello(6));
        let mut rng = StdRng::seed_from_u64(5);
        let s = Variant::Othello(6).initial_state();
        let r = search(&s, &mut NetEvaluator::new(&net), &MctsConfig::default(), &mut rng).unwrap();
        assert!((r.priors.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        let legal = s.legal_actions().unwrap();
        for (a, p) in r.priors.iter().enumerate() {
            if !legal.contains(&a) {
                assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn terminal_root_is_rejected() {
        let s: GameState = "hex2 OX/X. O 3".parse().unwrap();
        let net = zero_net(Variant::Hex(2));
        let mut rng = StdRng::seed_from_u64(0);
        assert!(search(&s, &mut NetEvaluator::new(&net), &quiet(5), &mut rng).is_err());
    }

    #[test]
    fn temperature_rules() {
        assert_eq!(action_probabilities(&[10, 5, 10], 0.0), vec![1.0, 0.0, 0.0]);
        let p = action_probabilities(&[3, 1, 0, 4], 1.0);
        assert_eq!(p, vec![0.375, 0.125, 0.0, 0.5]);
        let p = action_probabilities(&[9, 1], 0.5);
        assert!((p[0] - 81.0 / 82.0).abs() < 1e-12);
    }

    #[test]
    fn debug_dump_round_trips() {
        let net = zero_net(Variant::Hex(3));
        let mut rng = StdRng::seed_from_u64(0);
        let s = Variant::Hex(3).initial_state();
        let r = search(&s, &mut NetEvaluator::new(&net), &quiet(10), &mut rng).unwrap();
        let d = r.debug(&s, Some(4));
        let back: SearchDebug = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.v_selected, Some(r.q[4]));
    }
}
