use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rgsc_core::archives::{PrbConfig, RestartStore};
use rgsc_core::config::{Method, RunConfig};
use rgsc_core::evalkit::{self, Contender, MatchConfig};
use rgsc_core::games::Variant;
use rgsc_core::net::{Checkpoint, NetConfig, Torso};
use rgsc_core::trainer;

fn small(method: Method) -> RunConfig {
    RunConfig {
        game: Variant::Hex(3),
        method,
        seed: 4,
        iterations: 3,
        states_per_iteration: 80,
        optimization_steps: 3,
        batch_size: 16,
        workers: 2,
        net: NetConfig {
            torso: Torso::Mlp { hidden: 16, layers: 1 },
            head_hidden: 8,
        },
        prb: Some(PrbConfig {
            capacity: 6,
            ..Default::default()
        }),
        mcts: rgsc_core::mcts::MctsConfig {
            simulations: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn metrics_agree_with_the_stored_buffers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(Method::Rgsc);
    let summary = trainer::run(&cfg, tmp.path(), 1).unwrap();
    assert_eq!(summary.iteration, 3);
    let rows = trainer::read_metrics(tmp.path()).unwrap();
    for row in &rows {
        let stores: Vec<RestartStore> = (0..cfg.workers)
            .map(|w| trainer::load_store(tmp.path(), row.iteration, w).unwrap())
            .collect();
        let prbs: Vec<_> = stores.iter().map(|s| s.prb().unwrap()).collect();
        let size: usize = prbs.iter().map(|p| p.len()).sum();
        let evictions: usize = prbs.iter().map(|p| p.evictions().len()).sum();
        assert_eq!(row.buffer_size, Some(size));
        assert_eq!(row.buffer_evictions, Some(evictions));
        assert!(prbs.iter().all(|p| p.len() <= 6));
        let games = trainer::load_games(tmp.path(), row.iteration).unwrap();
        assert_eq!(games.len(), row.games);
        assert_eq!(games.iter().map(|g| g.samples).sum::<usize>(), row.states);
    }
}

#[test]
fn a_trained_checkpoint_feeds_the_evaluation_kit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(Method::Gesc);
    let summary = trainer::run(&cfg, tmp.path(), 2).unwrap();
    let net = Checkpoint::load(&summary.checkpoint).unwrap().network().unwrap();
    let c = Contender::Net(net.clone());
    let m = evalkit::play_match(("net", &c), ("random", &Contender::Random), &MatchConfig::new(Variant::Hex(3), 20, 1)).unwrap();
    assert_eq!(m.games, 20);
    assert_eq!(m.a_first.games, m.a_second.games);

    let games = trainer::load_games(tmp.path(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = evalkit::analyze_selected_regret("ckpt_3", &games, &net, 10, 100, &mut rng).unwrap();
    assert!(r.uniform_ci_low <= r.uniform && r.uniform <= r.uniform_ci_high);
    assert!(r.ranking_top >= 0.0 && r.value_top >= 0.0);
}
