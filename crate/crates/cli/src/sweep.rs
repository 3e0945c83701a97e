use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use log::info;
use serde::Serialize;

use rgsc_core::config::{Method, RunConfig};
use rgsc_core::trainer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Param {
    /// Probability of restarting from the buffer.
    Lambda,
    /// Sampling temperature.
    Tau,
    /// Buffer capacity.
    Kappa,
    /// EMA rate.
    Alpha,
}

impl Param {
    fn name(self) -> &'static str {
        match self {
            Param::Lambda => "lambda",
            Param::Tau => "tau",
            Param::Kappa => "kappa",
            Param::Alpha => "alpha",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: f64) -> Result<()> {
        let mut prb = cfg.prb.unwrap_or_default();
        match self {
            Param::Lambda => prb.lambda = value,
            Param::Tau => prb.tau = value,
            Param::Alpha => prb.alpha = value,
            Param::Kappa => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(crate::config_error("prb.capacity", format!("{value} is not a positive whole number")));
                }
                prb.capacity = value as usize;
            }
        }
        cfg.prb = Some(prb);
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Row {
    param: &'static str,
    value: f64,
    seed: u64,
    run_dir: String,
    iterations: u32,
    loss_total: f64,
    buffer_mean_regret: Option<f64>,
    buffer_evictions: Option<usize>,
    win_rate_vs_random: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    root: &Path,
    param: Param,
    values: &[f64],
    seeds: u64,
    config: Option<&Path>,
    eval_games: usize,
    out: Option<PathBuf>,
    threads: usize,
) -> Result<()> {
    if seeds == 0 {
        return Err(crate::config_error("seeds", "must be positive"));
    }
    if !eval_games.is_multiple_of(2) {
        return Err(crate::config_error("eval_games", "must be even"));
    }
    let mut base = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.method = Method::Rgsc;
    let dir = out.unwrap_or_else(|| root.join(format!("sweep-{}", param.name())));

    // every configuration is checked before anything runs
    let mut plan = Vec::new();
    for v in values {
        for k in 0..seeds {
            let mut cfg = base.clone();
            cfg.seed = base.seed + k;
            cfg.output_dir = None;
            param.apply(&mut cfg, *v)?;
            cfg.validate()?;
            let run_dir = dir.join(format!("{}-{v}-seed{}", param.name(), cfg.seed));
            plan.push((*v, cfg, run_dir));
        }
    }

    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for (value, cfg, run_dir) in plan {
        info!("{} = {value}, seed {}", param.name(), cfg.seed);
        let summary = match trainer::latest_checkpoint(&run_dir) {
            Some((_, ckpt)) => trainer::resume(&cfg, &ckpt, &run_dir, threads)?,
            None => trainer::run(&cfg, &run_dir, threads)?,
        };
        let last = trainer::read_metrics(&run_dir)?.pop();
        let win_rate_vs_random = if eval_games > 0 {
            let ckpt = summary.checkpoint.display().to_string();
            Some(crate::play(&ckpt, "random", eval_games, cfg.mcts.simulations, cfg.temperature, cfg.seed, None)?.win_rate())
        } else {
            None
        };
        rows.push(Row {
            param: param.name(),
            value,
            seed: cfg.seed,
            run_dir: run_dir.display().to_string(),
            iterations: summary.iteration,
            loss_total: last.as_ref().map_or(f64::NAN, |m| m.loss_total),
            buffer_mean_regret: last.as_ref().and_then(|m| m.buffer_mean_regret),
            buffer_evictions: last.as_ref().and_then(|m| m.buffer_evictions),
            win_rate_vs_random,
        });
    }
    let path = dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    println!("{} runs; comparison in {}", rows.len(), path.display());
    Ok(())
}
