mod analyze;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use rgsc_core::config::{ConfigError, Method, RunConfig};
use rgsc_core::evalkit::{self, Contender, MatchConfig, MatchResult, Pairing};
use rgsc_core::games::Variant;
use rgsc_core::net::gradcheck::{self, GradCheckConfig, CHECKED_LOSSES};
use rgsc_core::net::Checkpoint;
use rgsc_core::toyexp::{self, ToyConfig};
use rgsc_core::trainer::{self, TrainError};

#[derive(Parser)]
#[command(name = "rgsc", version, about = "Regret-guided search control for self-play training")]
struct Cli {
    /// Directory that relative run directories are placed under.
    #[arg(long, global = true, env = "RGSC_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration; omitted keys take desk-profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network with self-play.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory (default: <output-root>/<method>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabular Q-learning on random binary trees.
    Toy {
        #[arg(long, value_delimiter = ',', default_value = "5,6")]
        levels: Vec<u32>,
        #[arg(long, default_value_t = 25)]
        seeds: u64,
        #[arg(long, default_value_t = 6000)]
        iterations: usize,
        /// Evaluation points averaged for the final reward.
        #[arg(long, default_value_t = 10)]
        final_points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play one checkpoint against another (or `random`).
    Match {
        a: String,
        b: String,
        #[arg(long, default_value_t = 100)]
        games: usize,
        #[arg(long, default_value_t = 50)]
        simulations: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Needed only when both sides are `random`.
        #[arg(long)]
        game: Option<String>,
        /// Write the full result, game records included, as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Anchored Elo ratings from match results written by `match --out`.
    Elo {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        anchor: String,
        /// Ratings CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diagnostics over a finished run.
    Analyze {
        #[command(subcommand)]
        what: analyze::Analysis,
    },
    /// One run per (value, seed) of a restart-buffer parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: sweep::Param,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Games against a uniform-random player per finished run; 0 skips.
        #[arg(long, default_value_t = 0)]
        eval_games: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration errors, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<ConfigError>() || matches!(c.downcast_ref::<TrainError>(), Some(TrainError::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> anyhow::Error {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
    .into()
}

fn threads(cli_workers: Option<usize>) -> usize {
    cli_workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run(cli: Cli) -> Result<()> {
    let threads = threads(cli.workers);
    if cli.workers == Some(0) {
        return Err(config_error("workers", "must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot start worker threads")?;
    let root = cli.output_root;
    match cli.command {
        Command::Train { run, resume, out } => train(&root, &run, resume.as_deref(), out, threads),
        Command::Toy {
            levels,
            seeds,
            iterations,
            final_points,
            out,
        } => toy(&root, &levels, seeds, iterations, final_points, out),
        Command::Match {
            a,
            b,
            games,
            simulations,
            temperature,
            seed,
            game,
            out,
        } => {
            let result = play(&a, &b, games, simulations, temperature, seed, game.as_deref())?;
            let (lo, hi) = result.ci95();
            println!(
                "{} vs {}: {} wins, {} draws, {} losses over {} games; win rate {:.4} (95% CI {:.4}..{:.4})",
                result.a, result.b, result.a_wins, result.draws, result.b_wins, result.games, result.win_rate(), lo, hi
            );
            if let Some(path) = out {
                write_json(&path, &result)?;
            }
            Ok(())
        }
        Command::Elo { results, anchor, out } => elo(&results, &anchor, out.as_deref()),
        Command::Analyze { what } => analyze::run(what),
        Command::Sweep {
            param,
            values,
            seeds,
            config,
            eval_games,
            out,
        } => sweep::run(&root, param, &values, seeds, config.as_deref(), eval_games, out, threads),
        Command::Gradcheck { trials, seed } => gradcheck_cmd(trials, seed),
    }
}

pub(crate) fn resolve(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

pub(crate) fn load_config(args: &RunArgs, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match args.config.as_deref().or(fallback) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &args.method {
        cfg.method = m.parse::<Method>()?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    match &cfg.output_dir {
        Some(d) => resolve(root, Path::new(d)),
        None => root.join(format!("{}-seed{}", cfg.method, cfg.seed)),
    }
}

fn train(root: &Path, args: &RunArgs, resume: Option<&Path>, out: Option<PathBuf>, threads: usize) -> Result<()> {
    let summary = match resume {
        None => {
            let cfg = load_config(args, None)?;
            let dir = out.unwrap_or_else(|| default_dir(root, &cfg));
            info!("training {} (seed {}) into {}", cfg.method, cfg.seed, dir.display());
            trainer::run(&cfg, &dir, threads)?
        }
        Some(ckpt) => {
            // without --config the run's own saved configuration is reused
            let saved = ckpt.parent().map(|d| d.join("config.toml")).filter(|p| p.exists());
            let cfg = load_config(args, saved.as_deref())?;
            let dir = out.unwrap_or_else(|| {
                let from = ckpt
                    .parent()
                    .and_then(|d| d.file_name())
                    .map_or("checkpoint".into(), |n| n.to_string_lossy().into_owned());
                root.join(format!("{}-from-{}-seed{}", cfg.method, from, cfg.seed))
            });
            info!("continuing {} as {}", ckpt.display(), cfg.method);
            trainer::resume(&cfg, ckpt, &dir, threads)?
        }
    };
    println!("{} iterations in {}; final checkpoint {}", summary.iteration, summary.dir.display(), summary.checkpoint.display());
    Ok(())
}

fn toy(root: &Path, levels: &[u32], seeds: u64, iterations: usize, final_points: usize, out: Option<PathBuf>) -> Result<()> {
    if levels.iter().any(|l| *l < 2) {
        return Err(config_error("levels", "trees need at least 2 levels"));
    }
    if seeds == 0 {
        return Err(config_error("seeds", "must be positive"));
    }
    let cfg = ToyConfig {
        iterations,
        ..Default::default()
    };
    if iterations < cfg.eval_every * final_points {
        return Err(config_error("iterations", format!("too few for {final_points} evaluation points")));
    }
    let dir = out.unwrap_or_else(|| root.join("toy"));
    let seeds: Vec<u64> = (0..seeds).collect();
    let runs = toyexp::toy_experiment(levels, &seeds, &cfg);
    toyexp::write_csvs(&runs, &dir)?;
    let mut w = csv::Writer::from_path(dir.join("ordering.csv"))?;
    for l in levels {
        let s = toyexp::ordering(&runs, *l, final_points);
        println!(
            "{} levels: none {:.4}, random {:.4}, regret {:.4}; regret - none {:+.4} (paired 95% CI half-width {:.4}); ordering {}",
            l,
            s.none,
            s.random,
            s.regret,
            s.regret_minus_none,
            s.paired_ci95,
            if s.passed() { "holds" } else { "does not hold" }
        );
        w.serialize(s)?;
    }
    w.flush()?;
    println!("curves in {}", dir.display());
    Ok(())
}

pub(crate) fn contender(which: &str) -> Result<(String, Contender)> {
    if which == "random" {
        return Ok(("random".into(), Contender::Random));
    }
    let net = Checkpoint::load(Path::new(which))
        .and_then(|c| c.network())
        .with_context(|| format!("cannot load checkpoint {which}"))?;
    Ok((which.to_string(), Contender::Net(net)))
}

pub(crate) fn play(a: &str, b: &str, games: usize, simulations: usize, temperature: f64, seed: u64, game: Option<&str>) -> Result<MatchResult> {
    if games == 0 || !games.is_multiple_of(2) {
        return Err(config_error("games", "must be a positive even number"));
    }
    let (name_a, ca) = contender(a)?;
    let (name_b, cb) = contender(b)?;
    let variant = match (game, &ca, &cb) {
        (Some(g), _, _) => g.parse::<Variant>().map_err(|e| config_error("game", e.to_string()))?,
        (None, Contender::Net(n), _) | (None, _, Contender::Net(n)) => n.variant(),
        (None, Contender::Random, Contender::Random) => bail!(config_error("game", "required when both sides are random")),
    };
    let cfg = MatchConfig {
        simulations,
        temperature,
        ..MatchConfig::new(variant, games, seed)
    };
    Ok(evalkit::play_match((&name_a, &ca), (&name_b, &cb), &cfg)?)
}

fn elo(results: &[PathBuf], anchor: &str, out: Option<&Path>) -> Result<()> {
    let mut pairings = Vec::new();
    for path in results {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let m: MatchResult = serde_json::from_str(&text).with_context(|| format!("{} is not a match result", path.display()))?;
        pairings.push(Pairing::from(&m));
    }
    let table = evalkit::compute_elo(&pairings, anchor)?;
    let mut rows: Vec<(&String, &f64)> = table.ratings.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["player", "rating"])?;
    for (name, r) in rows {
        w.write_record([name.as_str(), &format!("{r:.2}")])?;
    }
    w.flush()?;
    Ok(())
}

fn gradcheck_cmd(trials: usize, seed: u64) -> Result<()> {
    if trials == 0 {
        warn!("--trials 0 checks nothing; passing vacuously");
        println!("gradcheck: 0 trials, vacuous pass");
        return Ok(());
    }
    let report = gradcheck::run(&GradCheckConfig {
        draws: trials,
        seed,
        ..Default::default()
    });
    let tol = GradCheckConfig::default().tolerance;
    for (name, err) in CHECKED_LOSSES.iter().zip(report.max_relative_error) {
        let ok = !report.failures.iter().any(|f| f.loss == *name);
        println!("{name:<7} max relative error {err:.3e} {}", if ok { "pass" } else { "FAIL" });
    }
    println!("{} draws, {} coordinates, tolerance {tol:e}", report.draws, report.coordinates_checked);
    if !report.passed() {
        for f in report.failures.iter().take(10) {
            eprintln!(
                "draw {} {} coordinate {}: analytic {:e} numeric {:e}",
                f.draw, f.loss, f.coordinate, f.analytic, f.numeric
            );
        }
        bail!("{} gradient coordinates out of tolerance", report.failures.len());
    }
    Ok(())
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("cannot write {}", path.display()))
}
