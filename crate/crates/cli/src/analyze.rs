use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rgsc_core::archives::{Prb, RestartStore};
use rgsc_core::config::RunConfig;
use rgsc_core::evalkit::{self, plot};
use rgsc_core::net::Checkpoint;
use rgsc_core::trainer::{self, read_metrics};

#[derive(Subcommand)]
pub enum Analysis {
    /// True regret of the states picked by each head against a uniform sample.
    SelectedRegret {
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint iteration (default: the latest).
        #[arg(long)]
        iteration: Option<u32>,
        /// Game logs of this many iterations, ending at `iteration`, are scored.
        #[arg(long, default_value_t = 1)]
        logs: u32,
        #[arg(long, default_value_t = 200)]
        top: usize,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// First-entry against final regret of evicted buffer entries.
    PrbShift {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        iteration: Option<u32>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Upper edge of the histogram; larger regrets land in the last bin.
        #[arg(long, default_value_t = 4.0)]
        upper: f64,
        #[arg(long)]
        plot: bool,
    },
    /// Share of restart-store entries per opening length over training.
    OpeningLengths {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        plot: bool,
    },
    /// Regret of one buffer entry after each update.
    Track {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0)]
        worker: usize,
        /// Entry id (default: the most-updated entry of the latest snapshot).
        #[arg(long)]
        id: Option<u64>,
        #[arg(long)]
        plot: bool,
    },
    /// Loss and buffer curves from the metrics CSV.
    Metrics {
        #[arg(long)]
        run: PathBuf,
    },
}

fn out_dir(run: &Path) -> Result<PathBuf> {
    let dir = run.join("analysis");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn latest(run: &Path, iteration: Option<u32>) -> Result<u32> {
    match iteration {
        Some(i) => Ok(i),
        None => trainer::latest_checkpoint(run)
            .map(|(i, _)| i)
            .with_context(|| format!("{} holds no checkpoint", run.display())),
    }
}

fn run_config(run: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(&run.join("config.toml"))?)
}

/// Every worker's store at `iteration`.
fn stores(run: &Path, cfg: &RunConfig, iteration: u32) -> Result<Vec<RestartStore>> {
    (0..cfg.workers)
        .map(|w| Ok(trainer::load_store(run, iteration, w)?))
        .collect()
}

fn prbs(stores: &[RestartStore]) -> Result<Vec<&Prb>> {
    let out: Vec<&Prb> = stores.iter().filter_map(|s| s.prb()).collect();
    if out.is_empty() {
        bail!("the run has no prioritized regret buffer");
    }
    Ok(out)
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(what: Analysis) -> Result<()> {
    match what {
        Analysis::SelectedRegret {
            run,
            iteration,
            logs,
            top,
            bootstrap,
            seed,
        } => {
            let it = latest(&run, iteration)?;
            let ckpt_path = trainer::checkpoint_path(&run, it);
            let net = Checkpoint::load(&ckpt_path)?.network()?;
            let mut games = Vec::new();
            for i in it.saturating_sub(logs.max(1) - 1).max(1)..=it {
                games.extend(trainer::load_games(&run, i)?);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let name = ckpt_path.display().to_string();
            let r = evalkit::analyze_selected_regret(&name, &games, &net, top, bootstrap, &mut rng)?;
            if r.truncated {
                log::warn!("only {} states in the logs; selecting {} instead of {top}", r.states, r.top_n);
            }
            println!(
                "{} states; mean regret: all {:.4}, ranking top-{n} {:.4}, value top-{n} {:.4}, uniform {:.4} (95% CI {:.4}..{:.4})",
                r.states,
                r.global_mean,
                r.ranking_top,
                r.value_top,
                r.uniform,
                r.uniform_ci_low,
                r.uniform_ci_high,
                n = r.top_n
            );
            write_rows(&out_dir(&run)?.join("selected_regret.csv"), &[r])
        }
        Analysis::PrbShift {
            run,
            iteration,
            bins,
            upper,
            plot,
        } => {
            let cfg = run_config(&run)?;
            let it = latest(&run, iteration)?;
            let stores = stores(&run, &cfg, it)?;
            let evictions: Vec<_> = prbs(&stores)?.iter().flat_map(|p| p.evictions().iter().cloned()).collect();
            let s = evalkit::analyze_prb_shift(&evictions, bins, upper)?;
            println!(
                "{} evictions; mean regret at entry {:.4}, at eviction {:.4}; {}",
                s.evictions,
                s.mean_first,
                s.mean_final,
                if s.decreased { "decreased" } else { "did not decrease" }
            );
            let dir = out_dir(&run)?;
            write_rows(&dir.join("prb_shift.csv"), &s.rows())?;
            if plot {
                plot::histogram(
                    &dir.join("prb_shift.svg"),
                    "Regret of evicted buffer entries",
                    "regret",
                    &s.bin_edges,
                    &[("at entry".into(), s.first_counts.clone()), ("at eviction".into(), s.final_counts.clone())],
                )?;
            }
            Ok(())
        }
        Analysis::OpeningLengths { run, plot } => {
            let cfg = run_config(&run)?;
            let last = latest(&run, None)?;
            let mut snapshots = Vec::new();
            for it in 0..=last {
                if !trainer::store_path(&run, it, 0).exists() {
                    continue;
                }
                let mut lengths = Vec::new();
                for store in stores(&run, &cfg, it)? {
                    match store {
                        RestartStore::Prb(p) => lengths.extend(p.entries().iter().map(|e| e.opening_move_count)),
                        RestartStore::Gevc(f) | RestartStore::Gesc(f) => lengths.extend(f.states().map(|s| s.move_count())),
                        RestartStore::InitialOnly => bail!("the run has no restart store"),
                    }
                }
                snapshots.push((it, lengths));
            }
            let max = cfg.game.max_game_length() as u32;
            let rows = evalkit::analyze_opening_lengths(&snapshots, max)?;
            let dir = out_dir(&run)?;
            write_rows(&dir.join("opening_lengths.csv"), &rows)?;
            println!("{} snapshots, {} rows", snapshots.len(), rows.len());
            if plot {
                let (first, final_) = (snapshots[0].0, snapshots[snapshots.len() - 1].0);
                let series = [first, final_]
                    .iter()
                    .map(|it| plot::Series {
                        label: format!("iteration {it}"),
                        points: rows
                            .iter()
                            .filter(|r| r.iteration == *it)
                            .map(|r| (r.opening_length as f64, r.proportion))
                            .collect(),
                    })
                    .collect::<Vec<_>>();
                plot::line_chart(&dir.join("opening_lengths.svg"), "Opening lengths in the restart store", "moves played", "share", &series)?;
            }
            Ok(())
        }
        Analysis::Track { run, worker, id, plot } => {
            let last = latest(&run, None)?;
            let mut snaps = Vec::new();
            for it in 0..=last {
                if trainer::store_path(&run, it, worker).exists() {
                    snaps.push(trainer::load_store(&run, it, worker)?);
                }
            }
            let prbs = prbs(&snaps)?;
            let id = match id {
                Some(id) => id,
                None => prbs[prbs.len() - 1]
                    .entries()
                    .iter()
                    .max_by_key(|e| (e.updates, std::cmp::Reverse(e.id)))
                    .map(|e| e.id)
                    .context("the latest buffer is empty")?,
            };
            let series = evalkit::track_opening_regret(&prbs, id)?;
            let dir = out_dir(&run)?;
            let mut w = csv::Writer::from_path(dir.join(format!("track_w{worker}_{id}.csv")))?;
            w.write_record(["update", "regret"])?;
            for (u, r) in &series {
                w.write_record([u.to_string(), r.to_string()])?;
            }
            w.flush()?;
            println!("entry {id}: {} values, {:.4} -> {:.4}", series.len(), series[0].1, series[series.len() - 1].1);
            if plot {
                plot::line_chart(
                    &dir.join(format!("track_w{worker}_{id}.svg")),
                    &format!("Regret of buffer entry {id}"),
                    "update",
                    "regret",
                    &[plot::Series {
                        label: format!("entry {id}"),
                        points: series.iter().map(|(u, r)| (*u as f64, *r)).collect(),
                    }],
                )?;
            }
            Ok(())
        }
        Analysis::Metrics { run } => {
            let rows = read_metrics(&run)?;
            if rows.is_empty() {
                bail!("{} has no completed iterations", run.display());
            }
            let dir = out_dir(&run)?;
            let series = |label: &str, f: &dyn Fn(&trainer::Metrics) -> Option<f64>| plot::Series {
                label: label.into(),
                points: rows.iter().filter_map(|m| Some((m.iteration as f64, f(m)?))).collect(),
            };
            plot::line_chart(
                &dir.join("losses.svg"),
                "Training losses",
                "iteration",
                "loss",
                &[
                    series("policy", &|m| Some(m.loss_policy)),
                    series("value", &|m| Some(m.loss_value)),
                    series("regret", &|m| Some(m.loss_regret)),
                    series("rank", &|m| Some(m.loss_rank)),
                ],
            )?;
            let buffer = series("mean buffer regret", &|m| m.buffer_mean_regret);
            if !buffer.points.is_empty() {
                plot::line_chart(&dir.join("buffer_regret.svg"), "Restart buffer", "iteration", "regret", &[buffer])?;
            }
            println!("plots in {}", dir.display());
            Ok(())
        }
    }
}
