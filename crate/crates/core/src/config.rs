//! Run configuration: TOML schema, defaults (the desk profile), validation and
//! the configuration hash stored in checkpoints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archives::{ArchiveConfig, PrbConfig, RestartConfig};
use crate::games::Variant;
use crate::mcts::MctsConfig;
use crate::net::{hex_digest, LossWeights, NetConfig, Sgd, Torso};
use crate::selfplay::SelfPlayConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    AlphaZero,
    Gevc,
    Gesc,
    Rgsc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::AlphaZero, Method::Gevc, Method::Gesc, Method::Rgsc];

    pub fn name(self) -> &'static str {
        match self {
            Method::AlphaZero => "alphazero",
            Method::Gevc => "gevc",
            Method::Gesc => "gesc",
            Method::Rgsc => "rgsc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid("method", format!("unknown method {s:?} (expected alphazero, gevc, gesc or rgsc)")))
    }
}

mod variant_str {
    use super::*;
    use serde::{de::Error, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Variant, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Variant, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Steps of the regret-head training phase used when an AlphaZero checkpoint
/// is continued with regret-guided search control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreezeConfig {
    /// Self-play games generated with the frozen network.
    pub games: usize,
    /// SGD steps on the regret-value and ranking heads.
    pub steps: usize,
    /// Fraction of games held out to monitor the ranking loss.
    pub holdout: f64,
}

impl Default for FreezeConfig {
    fn default() -> Self {
        FreezeConfig {
            games: 200,
            steps: 200,
            holdout: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(with = "variant_str")]
    pub game: Variant,
    pub method: Method,
    pub seed: u64,
    pub iterations: u32,
    pub states_per_iteration: usize,
    pub optimization_steps: usize,
    pub batch_size: usize,
    /// Replay window in iterations.
    pub replay_window: usize,
    /// Self-play workers, each with its own rng stream and restart store.
    pub workers: usize,
    /// Games played before the first iteration that only feed restart stores.
    #[serde(default)]
    pub warmup_games: usize,
    pub temperature: f64,
    pub net: NetConfig,
    pub mcts: MctsConfig,
    pub optimizer: Sgd,
    pub loss: LossWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prb: Option<PrbConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<ArchiveConfig>,
    #[serde(default)]
    pub freeze: FreezeConfig,
    /// Run directory, relative to the output root unless absolute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl Default for RunConfig {
    /// The desk profile.
    fn default() -> Self {
        RunConfig {
            game: Variant::Hex(5),
            method: Method::Rgsc,
            seed: 0,
            iterations: 40,
            states_per_iteration: 4000,
            optimization_steps: 50,
            batch_size: 256,
            replay_window: 20,
            workers: 4,
            warmup_games: 0,
            temperature: 1.0,
            net: NetConfig {
                torso: Torso::Conv { filters: 32, blocks: 1 },
                head_hidden: 32,
            },
            mcts: MctsConfig::default(),
            optimizer: Sgd::default(),
            loss: LossWeights::default(),
            prb: None,
            archive: None,
            freeze: FreezeConfig::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    // `!(x > 0.0)` also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("states_per_iteration", self.states_per_iteration),
            ("optimization_steps", self.optimization_steps),
            ("batch_size", self.batch_size),
            ("replay_window", self.replay_window),
            ("workers", self.workers),
            ("mcts.simulations", self.mcts.simulations),
            ("net.head_hidden", self.net.head_hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.workers > self.states_per_iteration {
            return Err(invalid("workers", "exceeds states_per_iteration"));
        }
        match self.net.torso {
            Torso::Mlp { hidden, layers } if hidden == 0 || layers == 0 => {
                return Err(invalid("net.torso", "hidden and layers must be positive"))
            }
            Torso::Conv { filters, blocks } if filters == 0 || blocks > 3 => {
                return Err(invalid("net.torso", "filters must be positive and blocks at most 3"))
            }
            _ => {}
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be a finite non-negative number"));
        }
        if !(self.mcts.c_puct > 0.0) {
            return Err(invalid("mcts.c_puct", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mcts.dirichlet_ratio) {
            return Err(invalid("mcts.dirichlet_ratio", "must lie in [0, 1]"));
        }
        if self.mcts.dirichlet_alpha.is_some_and(|a| !(a > 0.0)) {
            return Err(invalid("mcts.dirichlet_alpha", "must be positive"));
        }
        let o = &self.optimizer;
        for (field, v) in [("optimizer.lr", o.lr), ("optimizer.momentum", o.momentum), ("optimizer.weight_decay", o.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be a finite non-negative number"));
            }
        }
        let l = &self.loss;
        for (field, v) in [("loss.policy", l.policy), ("loss.value", l.value), ("loss.regret", l.regret), ("loss.rank", l.rank)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(field, "must be a finite non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.freeze.holdout) {
            return Err(invalid("freeze.holdout", "must lie in [0, 1)"));
        }
        let section = match self.method {
            Method::Rgsc => "prb",
            Method::Gevc | Method::Gesc => "archive",
            Method::AlphaZero => "",
        };
        self.restart().validate().map_err(|e| match e {
            crate::archives::ArchiveError::Invalid { field, reason } => invalid(&format!("{section}.{field}"), reason),
            other => invalid(section, other.to_string()),
        })
    }

    /// Settings that do not apply to the configured method.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.prb.is_some() && self.method != Method::Rgsc {
            out.push(format!("[prb] is ignored for method {}", self.method));
        }
        if self.archive.is_some() && !matches!(self.method, Method::Gevc | Method::Gesc) {
            out.push(format!("[archive] is ignored for method {}", self.method));
        }
        if self.method != Method::Rgsc && (self.loss.regret != 0.0 || self.loss.rank != 0.0) {
            out.push(format!("loss.regret and loss.rank are treated as 0 for method {}", self.method));
        }
        if self.warmup_games > 0 && self.method == Method::AlphaZero {
            out.push("warmup_games has no effect without a restart store".into());
        }
        out
    }

    pub fn restart(&self) -> RestartConfig {
        match self.method {
            Method::AlphaZero => RestartConfig::InitialOnly,
            Method::Gevc => RestartConfig::Gevc(self.archive.unwrap_or_default()),
            Method::Gesc => RestartConfig::Gesc(self.archive.unwrap_or_default()),
            Method::Rgsc => RestartConfig::Prb(self.prb.unwrap_or_default()),
        }
    }

    /// Loss weights actually used: the regret heads are trained only by
    /// regret-guided runs.
    pub fn effective_loss(&self) -> LossWeights {
        match self.method {
            Method::Rgsc => self.loss,
            _ => LossWeights {
                regret: 0.0,
                rank: 0.0,
                ..self.loss
            },
        }
    }

    pub fn selfplay(&self) -> SelfPlayConfig {
        SelfPlayConfig {
            mcts: self.mcts,
            temperature: self.temperature,
        }
    }

    /// Hash of everything that determines the trajectory of a run except its
    /// length and location, so a finished run can be extended.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.iterations = 0;
        canonical.output_dir = None;
        canonical.prb = match self.method {
            Method::Rgsc => Some(self.prb.unwrap_or_default()),
            _ => None,
        };
        canonical.archive = match self.method {
            Method::Gevc | Method::Gesc => Some(self.archive.unwrap_or_default()),
            _ => None,
        };
        hex_digest(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
game = "hex5"
method = "rgsc"
seed = 3
iterations = 2
states_per_iteration = 100
optimization_steps = 5
batch_size = 32
replay_window = 20
workers = 2
temperature = 1.0

[net]
head_hidden = 16
torso = { kind = "conv", filters = 8, blocks = 1 }

[mcts]
simulations = 16
c_puct = 1.5
noise = true
dirichlet_ratio = 0.25

[optimizer]
lr = 0.02
momentum = 0.9
weight_decay = 0.0001

[loss]
policy = 1.0
value = 1.0
regret = 1.0
rank = 1.0

[prb]
capacity = 100
lambda = 0.5
tau = 0.1
alpha = 0.5
"#;

    #[test]
    fn example_parses_and_round_trips() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.game, Variant::Hex(5));
        assert_eq!(cfg.method, Method::Rgsc);
        assert_eq!(cfg.prb, Some(PrbConfig::default()));
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.warnings().is_empty());
    }

    #[test]
    fn default_is_valid() {
        RunConfig::default().validate().unwrap();
        let text = RunConfig::default().to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_lambda_names_the_field() {
        let text = EXAMPLE.replace("lambda = 0.5", "lambda = 1.5");
        match RunConfig::from_toml(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "prb.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn omitted_keys_take_desk_defaults() {
        let cfg = RunConfig::from_toml("method = \"gevc\"\nseed = 7\n[mcts]\nsimulations = 20\n").unwrap();
        assert_eq!(cfg.method, Method::Gevc);
        assert_eq!(cfg.mcts.simulations, 20);
        assert_eq!(cfg.mcts.c_puct, 1.5);
        assert_eq!(cfg.states_per_iteration, RunConfig::default().states_per_iteration);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = EXAMPLE.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn irrelevant_sections_warn() {
        let text = EXAMPLE.replace("method = \"rgsc\"", "method = \"alphazero\"");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let w = cfg.warnings();
        assert!(w.iter().any(|m| m.contains("[prb]")));
        assert_eq!(cfg.effective_loss().rank, 0.0);
        assert_eq!(cfg.restart(), RestartConfig::InitialOnly);
    }

    #[test]
    fn hash_ignores_length_and_location_only() {
        let a = RunConfig::from_toml(EXAMPLE).unwrap();
        let mut b = a.clone();
        b.iterations = 99;
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        // an explicit default section hashes like an omitted one
        let mut c = a.clone();
        c.prb = None;
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("muzero".parse::<Method>().is_err());
    }
}
