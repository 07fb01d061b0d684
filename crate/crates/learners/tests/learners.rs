use aoi_core::kernel::AoiModel;
use aoi_core::model::{ModelConfig, ProtocolSpec};
use aoi_core::sim::rng_from_seed;
use aoi_learners::checkpoint::{Checkpoint, LearnerSnapshot};
use aoi_learners::dqn::{dqn_train, DqnConfig};
use aoi_learners::mlp::MlpParams;
use aoi_learners::sarsa::{sarsa_lfa_run, SarsaConfig};
use aoi_learners::ucrl2::{ucrl2_whittle_run, Ucrl2Config};
use aoi_learners::LearnerError;
use rand::Rng;

fn arq(p: &[f64], n: u32) -> AoiModel {
    let cfg = ModelConfig::uniform(p.len(), n, 0, 1.0).unwrap();
    AoiModel::new(cfg, ProtocolSpec::StandardArq { error: p.to_vec() }).unwrap()
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = rng_from_seed(seed, 9);
        let mut net = MlpParams::glorot(4, 2, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dout: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act = net.forward_full(&x).unwrap();
        let mut grad = vec![0.0; net.w.len()];
        net.backward(&x, &act, &dout, &mut grad).unwrap();
        let loss = |n: &MlpParams| -> f64 { n.forward(&x).unwrap().iter().zip(&dout).map(|(a, b)| a * b).sum() };
        for k in 0..net.w.len() {
            let w0 = net.w[k];
            net.w[k] = w0 + 1e-6;
            let up = loss(&net);
            net.w[k] = w0 - 1e-6;
            let down = loss(&net);
            net.w[k] = w0;
            let fd = (up - down) / 2e-6;
            let scale = grad[k].abs().max(fd.abs());
            assert!(scale < 1e-9 || (grad[k] - fd).abs() / scale < 1e-4, "seed {seed} param {k}: {} vs {fd}", grad[k]);
        }
    }
}

#[test]
fn ucrl2_on_perfect_channels_keeps_estimates_at_zero() {
    let m = arq(&[0.0, 0.0], 20);
    let cfg = Ucrl2Config {
        horizon: 5_000,
        keep_records: true,
        ..Ucrl2Config::default()
    };
    let run = ucrl2_whittle_run(&m, &cfg, 1).unwrap();
    assert!(run.state.failures.iter().flatten().all(|&f| f == 0));
    assert!(run.episodes.iter().all(|e| e.optimistic.iter().flatten().all(|&g| g == 0.0)));
    // Alternating transmissions keep the receiver ages at (1, 2).
    let (j, c) = run.trace.window_averages(1000);
    assert_eq!((j, c), (3.0, 1.0));
}

#[test]
fn ucrl2_optimism_holds_with_high_probability() {
    let p = [0.5, 0.2, 0.1];
    let m = arq(&p, 20);
    let cfg = Ucrl2Config {
        horizon: 2_000,
        ..Ucrl2Config::default()
    };
    let (mut episodes, mut violated) = (0usize, 0usize);
    for seed in 0..30 {
        let run = ucrl2_whittle_run(&m, &cfg, seed).unwrap();
        for e in &run.episodes {
            episodes += 1;
            if e.optimistic.iter().zip(&p).any(|(g, &pj)| g[0] > pj) {
                violated += 1;
            }
        }
    }
    let rate = violated as f64 / episodes as f64;
    assert!(rate <= cfg.rho, "optimism violated in {violated} of {episodes} episodes");
}

#[test]
fn sarsa_transmits_on_a_perfect_channel() {
    let m = arq(&[0.0], 50);
    let cfg = SarsaConfig {
        horizon: 10_000,
        keep_records: true,
        ..SarsaConfig::default()
    };
    let run = sarsa_lfa_run(&m, &cfg, 0).unwrap();
    let tail = &run.trace.records[9_000..];
    let share = tail.iter().filter(|r| r.action.is_transmission()).count();
    assert!(share >= 990, "{share}");
}

#[test]
fn sarsa_divergence_returns_the_partial_trace() {
    let m = arq(&[0.5, 0.2], 20);
    let cfg = SarsaConfig {
        theta_bound: 1e-3,
        ..SarsaConfig::default()
    };
    match sarsa_lfa_run(&m, &cfg, 0) {
        Err(LearnerError::LfaDiverged { step, trace, .. }) => {
            assert!(step >= 1);
            assert_eq!(trace.records.len(), 0);
            assert!(trace.total_slots >= 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn checkpoints_round_trip() {
    let m = arq(&[0.3, 0.1], 10);
    let cfg = DqnConfig {
        episode_len: 100,
        ..DqnConfig::default()
    };
    let run = dqn_train(&m, &cfg, 2, 3).unwrap();
    let ucrl = ucrl2_whittle_run(&m, &Ucrl2Config::default(), 3).unwrap();
    let sarsa = sarsa_lfa_run(&m, &SarsaConfig::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (i, snap) in [
        LearnerSnapshot::Dqn(Box::new(run.state)),
        LearnerSnapshot::Ucrl2(ucrl.state),
        LearnerSnapshot::SarsaLfa(sarsa.state),
    ]
    .into_iter()
    .enumerate()
    {
        let ck = Checkpoint::new(3, snap);
        let path = dir.path().join(format!("ck{i}.json"));
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
    let text = Checkpoint::load(&dir.path().join("ck1.json")).unwrap().to_json().unwrap();
    let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
    assert!(matches!(Checkpoint::from_json(&bumped), Err(LearnerError::Checkpoint(_))));
}
