use aoi_core::evaluate::evaluate_exact;
use aoi_core::index::*;
use aoi_core::kernel::AoiModel;
use aoi_core::mdp::CompiledMdp;
use aoi_core::model::{Action, ModelConfig, ProtocolSpec};
use aoi_core::rvi::{rvi_solve, DeterministicPolicy, RviOptions};

fn threshold_mdp(gamma: u32, p: f64) -> (CompiledMdp, DeterministicPolicy) {
    // Clamp bias decays like p^N; 50 * gamma alone leaves ~1e-5 at gamma = 1, p = 0.8.
    let n = (50 * gamma).max(oracle_max_age(gamma, p, 1));
    let cfg = ModelConfig::uniform(1, n, 0, 1.0).unwrap();
    let m = AoiModel::new_relaxed(cfg, ProtocolSpec::StandardArq { error: vec![p] }).unwrap();
    let mdp = CompiledMdp::compile(&m).unwrap();
    let pol = DeterministicPolicy::from_fn(mdp.shared_space(), |s| {
        if s.users[0].rx >= gamma {
            Action::New(0)
        } else {
            Action::Idle
        }
    });
    (mdp, pol)
}

#[test]
fn threshold_policies_match_closed_forms() {
    for gamma in 1..=10 {
        for p in [0.0, 0.1, 0.5, 0.8] {
            let (mdp, pol) = threshold_mdp(gamma, p);
            let e = evaluate_exact(&mdp, &pol).unwrap();
            let arm = ArqArm::new(1.0, p).unwrap();
            let (j, c) = single_user_closed_forms(gamma, &arm);
            assert!((e.j - j).abs() < 1e-6, "gamma={gamma} p={p}: {} vs {j}", e.j);
            assert!((e.c - c).abs() < 1e-6);
            let l = single_user_lagrange_cost(gamma, &arm, 3.0);
            assert!((e.lagrangian(3.0) - l).abs() < 1e-6);
        }
    }
}

#[test]
fn clamp_bias_at_fifty_gamma() {
    // At N = 50 the truncated chain differs from the unbounded one by about
    // the tail mass, which the wider truncation removes.
    let cfg = ModelConfig::uniform(1, 50, 0, 1.0).unwrap();
    let m = AoiModel::new_relaxed(cfg, ProtocolSpec::StandardArq { error: vec![0.8] }).unwrap();
    let mdp = CompiledMdp::compile(&m).unwrap();
    let pol = DeterministicPolicy::from_fn(mdp.shared_space(), |_| Action::New(0));
    let e = evaluate_exact(&mdp, &pol).unwrap();
    let (j, _) = single_user_closed_forms(1, &ArqArm::new(1.0, 0.8).unwrap());
    let gap = j - e.j;
    let tail = 5.0 * 0.8f64.powi(50);
    assert!(gap > 1e-6 && gap < 10.0 * tail, "gap {gap}, tail {tail}");
}

#[test]
fn arq_indices_match_indifference() {
    for p in [0.1, 0.3, 0.5, 0.8] {
        for delta in 1..=10 {
            let arm = ArqArm::new(1.0, p).unwrap();
            let m = oracle_model_arq(delta, &arm).unwrap();
            let mdp = CompiledMdp::compile(&m).unwrap();
            let c = indifference_subsidy_numeric(delta, &mdp, SubsidyAccounting::PerSlot).unwrap();
            let i = whittle_index_arq(f64::from(delta), &arm);
            assert!((c - i).abs() < 1e-2, "p={p} delta={delta}: oracle {c} closed {i}");
        }
    }
}

#[test]
fn fr_indices_match_indifference() {
    for ps in [0.1, 0.3, 0.5, 0.8] {
        let arm = FrArm::from_symbol_error(1.0, 5, 3, ps).unwrap();
        for delta in 5..=10 {
            let mdp = oracle_model_fr(delta, &arm).unwrap();
            let c = indifference_subsidy_numeric(delta, &mdp, SubsidyAccounting::PerSlot).unwrap();
            let i = whittle_index_fr(f64::from(delta), &arm);
            assert!((c - i).abs() < 1e-2, "ps={ps} delta={delta}: oracle {c} closed {i}");
        }
    }
}

#[test]
fn whittle_is_optimal_for_identical_users() {
    for users in [2usize, 3] {
        for p in [0.1, 0.3] {
            let n = if users == 2 { 8 } else { 6 };
            let cfg = ModelConfig::uniform(users, n, 0, 1.0).unwrap();
            let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![p; users] }).unwrap();
            let mdp = CompiledMdp::compile(&m).unwrap();
            let (opt, _) = rvi_solve(&mdp, 0.0, &RviOptions::default(), None).unwrap();
            let j_opt = evaluate_exact(&mdp, &opt).unwrap().j;
            let wi = WhittlePolicy::from_model(&m, 0.0).unwrap();
            let table = DeterministicPolicy::from_fn(mdp.shared_space(), |s| wi.decide_state(s));
            let j_wi = evaluate_exact(&mdp, &table).unwrap().j;
            assert!((j_wi - j_opt).abs() < 1e-6, "M={users} p={p}: {j_wi} vs {j_opt}");
        }
    }
}
