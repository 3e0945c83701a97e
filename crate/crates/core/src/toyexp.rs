//! Q-learning on an n-level sparse-reward binary tree under three
//! search-control strategies: always start at the root, restart uniformly from
//! a FIFO buffer of visited nodes, or restart in proportion to node regret.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    Random,
    Regret,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::None, Strategy::Random, Strategy::Regret];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Random => "random",
            Strategy::Regret => "regret",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected none, random or regret)"))
    }
}

/// Complete binary tree in heap order: node `i` has children `2i+1` and
/// `2i+2`; nodes `0..2^n - 1` are internal, the remaining `2^n` are leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTreeEnv {
    levels: u32,
    leaf_p: Vec<f64>,
}

impl BinaryTreeEnv {
    /// Random tree: one leaf at p = 1, the others uniform in `[0, 0.5]`.
    pub fn random(levels: u32, rng: &mut impl Rng) -> Self {
        assert!(levels >= 1, "a tree needs at least one level");
        let leaves = 1usize << levels;
        let mut leaf_p: Vec<f64> = (0..leaves).map(|_| rng.random_range(0.0..=0.5)).collect();
        leaf_p[rng.random_range(0..leaves)] = 1.0;
        BinaryTreeEnv { levels, leaf_p }
    }

    /// Tree with the given leaf probabilities (length must be `2^levels`).
    pub fn with_leaves(levels: u32, leaf_p: Vec<f64>) -> Self {
        assert_eq!(leaf_p.len(), 1usize << levels, "need 2^levels leaves");
        assert!(leaf_p.iter().all(|p| (0.0..=1.0).contains(p)));
        BinaryTreeEnv { levels, leaf_p }
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn internal_nodes(&self) -> usize {
        (1usize << self.levels) - 1
    }

    pub fn leaf_probabilities(&self) -> &[f64] {
        &self.leaf_p
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.internal_nodes()
    }

    pub fn child(&self, node: usize, action: usize) -> usize {
        2 * node + 1 + action
    }

    pub fn leaf_p(&self, node: usize) -> f64 {
        self.leaf_p[node - self.internal_nodes()]
    }

    pub fn reward(&self, leaf: usize, rng: &mut impl Rng) -> f64 {
        if rng.random_bool(self.leaf_p(leaf)) { 1.0 } else { 0.0 }
    }

    /// Optimal action values by backward induction.
    pub fn optimal_q(&self, discount: f64) -> QTable {
        let mut q = QTable::new(self.internal_nodes());
        for node in (0..self.internal_nodes()).rev() {
            for a in 0..2 {
                let c = self.child(node, a);
                q.q[node][a] = if self.is_leaf(c) {
                    self.leaf_p(c)
                } else {
                    discount * q.max(c)
                };
            }
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<[f64; 2]>,
}

impl QTable {
    pub fn new(internal_nodes: usize) -> Self {
        QTable { q: vec![[0.0; 2]; internal_nodes] }
    }

    pub fn max(&self, node: usize) -> f64 {
        self.q[node][0].max(self.q[node][1])
    }

    fn greedy(&self, node: usize, rng: &mut impl Rng) -> usize {
        let [a, b] = self.q[node];
        if a == b {
            rng.random_range(0..2)
        } else {
            usize::from(b > a)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_games: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub discount: f64,
    /// Probability of starting from a buffered node instead of the root.
    pub buffer_rate: f64,
    pub buffer_capacity: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            iterations: 6000,
            eval_every: 100,
            eval_games: 6000,
            learning_rate: 0.1,
            epsilon: 0.1,
            discount: 0.1,
            buffer_rate: 0.5,
            buffer_capacity: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub q_distance: f64,
}

/// Learner state for one run.
struct Agent<'a> {
    env: &'a BinaryTreeEnv,
    cfg: &'a ToyConfig,
    q: QTable,
    /// Running sum and count of observed discounted returns per edge.
    returns: Vec<[(f64, u32); 2]>,
    buffer: VecDeque<usize>,
}

impl<'a> Agent<'a> {
    fn new(env: &'a BinaryTreeEnv, cfg: &'a ToyConfig) -> Self {
        let n = env.internal_nodes();
        Agent {
            env,
            cfg,
            q: QTable::new(n),
            returns: vec![[(0.0, 0); 2]; n],
            buffer: VecDeque::with_capacity(cfg.buffer_capacity),
        }
    }

    /// `|Q_hat(s) - Q(s, a_hat)|` where `Q_hat(s)` is the best running-mean
    /// return over the children and `a_hat` the child achieving it.
    fn regret(&self, node: usize) -> f64 {
        let mut best: Option<(f64, usize)> = None;
        for (a, (sum, n)) in self.returns[node].iter().enumerate() {
            if *n > 0 {
                let mean = sum / *n as f64;
                if best.is_none_or(|(m, _)| mean > m) {
                    best = Some((mean, a));
                }
            }
        }
        best.map_or(0.0, |(m, a)| (m - self.q.q[node][a]).abs())
    }

    fn start(&self, strategy: Strategy, rng: &mut impl Rng) -> usize {
        if strategy == Strategy::None || self.buffer.is_empty() || !rng.random_bool(self.cfg.buffer_rate) {
            return 0;
        }
        match strategy {
            Strategy::Regret => {
                let weights: Vec<f64> = self.buffer.iter().map(|n| self.regret(*n)).collect();
                match WeightedIndex::new(&weights) {
                    Ok(dist) => self.buffer[dist.sample(rng)],
                    // every regret is 0
                    Err(_) => self.buffer[rng.random_range(0..self.buffer.len())],
                }
            }
            _ => self.buffer[rng.random_range(0..self.buffer.len())],
        }
    }

    fn episode(&mut self, strategy: Strategy, rng: &mut impl Rng) {
        let env = self.env;
        let mut node = self.start(strategy, rng);
        let mut path = Vec::new();
        loop {
            let a = if rng.random_bool(self.cfg.epsilon) {
                rng.random_range(0..2)
            } else {
                self.q.greedy(node, rng)
            };
            let next = env.child(node, a);
            let (target, done) = if env.is_leaf(next) {
                (env.reward(next, rng), true)
            } else {
                (self.cfg.discount * self.q.max(next), false)
            };
            let q = &mut self.q.q[node][a];
            *q += self.cfg.learning_rate * (target - *q);
            path.push((node, a));
            if done {
                let reward = target;
                let mut g = reward;
                for (s, a) in path.iter().rev() {
                    let e = &mut self.returns[*s][*a];
                    e.0 += g;
                    e.1 += 1;
                    g *= self.cfg.discount;
                }
                break;
            }
            node = next;
        }
        if strategy != Strategy::None {
            for (s, _) in path {
                if self.buffer.len() == self.cfg.buffer_capacity {
                    self.buffer.pop_front();
                }
                self.buffer.push_back(s);
            }
        }
    }

    /// Mean expected leaf value of greedy play from the root.
    fn evaluate(&self, rng: &mut impl Rng) -> f64 {
        let mut total = 0.0;
        for _ in 0..self.cfg.eval_games {
            let mut node = 0;
            while !self.env.is_leaf(node) {
                node = self.env.child(node, self.q.greedy(node, rng));
            }
            total += self.env.leaf_p(node);
        }
        total / self.cfg.eval_games as f64
    }
}

/// Full learning curve of one (strategy, tree) pair.
pub fn toy_run(env: &BinaryTreeEnv, strategy: Strategy, cfg: &ToyConfig, seed: u64) -> Vec<CurvePoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + strategy as u64);
    let q_star = env.optimal_q(cfg.discount).max(0);
    let mut agent = Agent::new(env, cfg);
    let mut curve = Vec::new();
    for it in 1..=cfg.iterations {
        agent.episode(strategy, &mut rng);
        if cfg.eval_every > 0 && it % cfg.eval_every == 0 {
            curve.push(CurvePoint {
                iteration: it,
                mean_reward: agent.evaluate(&mut rng),
                q_distance: (agent.q.max(0) - q_star).abs(),
            });
        }
    }
    curve
}

/// The tree used for `seed`; shared by every strategy so seeds pair up.
pub fn seeded_tree(levels: u32, seed: u64) -> BinaryTreeEnv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryTreeEnv::random(levels, &mut rng)
}

/// `|Q_root - Q*_root|` at every evaluation point.
pub fn toy_q_distance(strategy: Strategy, levels: u32, seed: u64, cfg: &ToyConfig) -> Vec<f64> {
    toy_run(&seeded_tree(levels, seed), strategy, cfg, seed)
        .into_iter()
        .map(|p| p.q_distance)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub strategy: Strategy,
    pub levels: u32,
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
}

impl ToyRun {
    /// Mean reward over the last `points` evaluation points.
    pub fn final_reward(&self, points: usize) -> f64 {
        let tail = &self.curve[self.curve.len().saturating_sub(points)..];
        tail.iter().map(|p| p.mean_reward).sum::<f64>() / tail.len() as f64
    }
}

/// Every (levels, strategy, seed) combination, in parallel over runs.
pub fn toy_experiment(levels: &[u32], seeds: &[u64], cfg: &ToyConfig) -> Vec<ToyRun> {
    let jobs: Vec<(u32, Strategy, u64)> = levels
        .iter()
        .flat_map(|l| Strategy::ALL.into_iter().flat_map(move |s| seeds.iter().map(move |seed| (*l, s, *seed))))
        .collect();
    jobs.into_par_iter()
        .map(|(levels, strategy, seed)| ToyRun {
            strategy,
            levels,
            seed,
            curve: toy_run(&seeded_tree(levels, seed), strategy, cfg, seed),
        })
        .collect()
}

/// Sample mean and 95% Student-t half-width.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2").inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub levels: u32,
    pub strategy: Strategy,
    pub iteration: usize,
    pub mean_reward: f64,
    pub reward_ci95: f64,
    pub mean_q_distance: f64,
    pub q_distance_ci95: f64,
}

/// Per-strategy mean and 95% CI across seeds at every evaluation point.
pub fn aggregate(runs: &[ToyRun]) -> Vec<AggregateRow> {
    let mut keys: Vec<(u32, Strategy)> = runs.iter().map(|r| (r.levels, r.strategy)).collect();
    keys.sort_by_key(|(l, s)| (*l, *s as u8));
    keys.dedup();
    let mut rows = Vec::new();
    for (levels, strategy) in keys {
        let group: Vec<&ToyRun> = runs.iter().filter(|r| r.levels == levels && r.strategy == strategy).collect();
        for (i, point) in group[0].curve.iter().enumerate() {
            let rewards: Vec<f64> = group.iter().map(|r| r.curve[i].mean_reward).collect();
            let dists: Vec<f64> = group.iter().map(|r| r.curve[i].q_distance).collect();
            let (mean_reward, reward_ci95) = mean_ci95(&rewards);
            let (mean_q_distance, q_distance_ci95) = mean_ci95(&dists);
            rows.push(AggregateRow {
                levels,
                strategy,
                iteration: point.iteration,
                mean_reward,
                reward_ci95,
                mean_q_distance,
                q_distance_ci95,
            });
        }
    }
    rows
}

/// Final-reward ordering on one tree size, paired by seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub levels: u32,
    pub seeds: usize,
    pub none: f64,
    pub random: f64,
    pub regret: f64,
    /// Mean of the per-seed `regret - none` differences and its 95% half-width.
    pub regret_minus_none: f64,
    pub paired_ci95: f64,
}

impl OrderingSummary {
    pub fn passed(&self) -> bool {
        self.regret > self.random && self.random > self.none && self.regret_minus_none > self.paired_ci95
    }
}

pub fn ordering(runs: &[ToyRun], levels: u32, final_points: usize) -> OrderingSummary {
    let finals = |s: Strategy| -> Vec<(u64, f64)> {
        let mut v: Vec<(u64, f64)> = runs
            .iter()
            .filter(|r| r.levels == levels && r.strategy == s)
            .map(|r| (r.seed, r.final_reward(final_points)))
            .collect();
        v.sort_by_key(|(seed, _)| *seed);
        v
    };
    let (none, random, regret) = (finals(Strategy::None), finals(Strategy::Random), finals(Strategy::Regret));
    let mean = |v: &[(u64, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
    let diffs: Vec<f64> = regret
        .iter()
        .zip(&none)
        .map(|(a, b)| {
            assert_eq!(a.0, b.0, "seeds must pair up");
            a.1 - b.1
        })
        .collect();
    let (d, ci) = mean_ci95(&diffs);
    OrderingSummary {
        levels,
        seeds: diffs.len(),
        none: mean(&none),
        random: mean(&random),
        regret: mean(&regret),
        regret_minus_none: d,
        paired_ci95: ci,
    }
}

/// Writes `toy_{levels}_{strategy}_s{seed}.csv` per run and `aggregate.csv`.
pub fn write_csvs(runs: &[ToyRun], dir: &std::path::Path) -> Result<(), csv::Error> {
    std::fs::create_dir_all(dir)?;
    for run in runs {
        let path = dir.join(format!("toy_{}_{}_s{}.csv", run.levels, run.strategy, run.seed));
        let mut w = csv::Writer::from_path(path)?;
        for p in &run.curve {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    for row in aggregate(runs) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_values() {
        let one = BinaryTreeEnv::with_leaves(1, vec![0.2, 1.0]);
        assert_eq!(one.optimal_q(0.1).max(0), 1.0);
        let two = BinaryTreeEnv::with_leaves(2, vec![0.0, 0.3, 1.0, 0.4]);
        let q = two.optimal_q(0.1);
        assert!((q.max(0) - 0.1).abs() < 1e-15);
        assert!((q.q[0][0] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn random_tree_has_one_certain_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for levels in 1..=6 {
            let t = BinaryTreeEnv::random(levels, &mut rng);
            assert_eq!(t.leaf_probabilities().len(), 1 << levels);
            assert_eq!(t.leaf_probabilities().iter().filter(|p| **p == 1.0).count(), 1);
            assert!(t.leaf_probabilities().iter().all(|p| *p == 1.0 || *p <= 0.5));
        }
    }

    #[test]
    fn no_search_control_always_starts_at_the_root() {
        let env = seeded_tree(5, 0);
        let cfg = ToyConfig::default();
        let mut agent = Agent::new(&env, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            agent.episode(Strategy::Random, &mut rng);
        }
        assert!(agent.buffer.iter().any(|n| *n != 0));
        assert!((0..1000).all(|_| agent.start(Strategy::None, &mut rng) == 0));
    }

    #[test]
    fn regret_is_zero_when_q_matches_the_empirical_maximum() {
        let env = seeded_tree(3, 1);
        let cfg = ToyConfig::default();
        let mut agent = Agent::new(&env, &cfg);
        agent.returns[2] = [(1.5, 3), (0.2, 1)];
        agent.q.q[2] = [0.5, 0.9];
        assert_eq!(agent.regret(2), 0.0);
        agent.q.q[2][0] = 0.2;
        assert!((agent.regret(2) - 0.3).abs() < 1e-15);
        // unvisited nodes carry no regret
        assert_eq!(agent.regret(0), 0.0);
    }

    #[test]
    fn all_zero_regrets_fall_back_to_uniform() {
        let env = seeded_tree(3, 1);
        let cfg = ToyConfig::default();
        let mut agent = Agent::new(&env, &cfg);
        agent.buffer.extend([1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = [0usize; 7];
        for _ in 0..3000 {
            seen[agent.start(Strategy::Regret, &mut rng)] += 1;
        }
        for n in [1, 2, 3] {
            assert!(seen[n] > 350, "{seen:?}");
        }
    }

    #[test]
    fn q_learning_converges_on_a_deterministic_tree() {
        let env = BinaryTreeEnv::with_leaves(3, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let cfg = ToyConfig {
            epsilon: 1.0,
            ..Default::default()
        };
        let mut agent = Agent::new(&env, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5000 {
            agent.episode(Strategy::None, &mut rng);
        }
        let star = env.optimal_q(cfg.discount);
        for (q, s) in agent.q.q.iter().zip(&star.q) {
            for a in 0..2 {
                assert!((q[a] - s[a]).abs() < 1e-3, "{q:?} vs {s:?}");
            }
        }
    }

    #[test]
    fn runs_are_deterministic_and_distances_nonnegative() {
        let cfg = ToyConfig {
            iterations: 300,
            eval_games: 200,
            ..Default::default()
        };
        let a = toy_run(&seeded_tree(4, 2), Strategy::Regret, &cfg, 2);
        let b = toy_run(&seeded_tree(4, 2), Strategy::Regret, &cfg, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|p| p.q_distance >= 0.0 && (0.0..=1.0).contains(&p.mean_reward)));
        assert_eq!(toy_q_distance(Strategy::Regret, 4, 2, &cfg), a.iter().map(|p| p.q_distance).collect::<Vec<_>>());
    }

    #[test]
    fn ci_matches_a_known_t_quantile() {
        // n = 4, sd = 1: t_{0.975, 3} = 3.182446...
        let (m, h) = mean_ci95(&[-1.5, -0.5, 0.5, 1.5].map(|x| x * (3.0f64 / 5.0).sqrt()));
        assert!(m.abs() < 1e-12);
        assert!((h - 3.182_446_305_284_263 / 2.0).abs() < 1e-9, "{h}");
    }

    #[test]
    fn csv_outputs() {
        let cfg = ToyConfig {
            iterations: 200,
            eval_games: 50,
            ..Default::default()
        };
        let runs = toy_experiment(&[3], &[0, 1], &cfg);
        assert_eq!(runs.len(), 6);
        let dir = tempfile::tempdir().unwrap();
        write_csvs(&runs, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("toy_3_regret_s1.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "iteration,mean_reward,q_distance");
        assert_eq!(text.lines().count(), 3);
        let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(agg.lines().count(), 1 + 3 * 2);
        assert!(agg.lines().nth(1).unwrap().starts_with("3,none,100,"));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
