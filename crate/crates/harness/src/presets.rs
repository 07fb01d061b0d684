//! Built-in scenarios for the published experiment figures.

use aoi_learners::dqn::DqnConfig;
use aoi_learners::sarsa::SarsaConfig;
use aoi_learners::ucrl2::Ucrl2Config;

use crate::error::{LabError, Result};
use crate::scenario::{ModelSection, PolicyKind, ProtocolTemplate, RunSection, Scenario, SeedSpec, SolverSection, Sweep};

pub const PRESETS: [&str; 6] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8"];

fn model(users: Option<usize>, max_age: u32, max_retx: u32) -> ModelSection {
    ModelSection {
        users,
        max_age,
        max_retx,
        weights: None,
        budget: 1.0,
    }
}

fn run(policies: &[PolicyKind], horizon: u64, seeds: u64) -> RunSection {
    RunSection {
        policies: policies.to_vec(),
        horizon,
        seeds: SeedSpec::Count(seeds),
        curve_points: 0,
        dqn_episodes: 500,
        calibration_horizon: 20_000,
        out: None,
    }
}

fn scenario(name: &str, model: ModelSection, protocol: ProtocolTemplate, sweep: Sweep, run: RunSection) -> Scenario {
    Scenario {
        name: name.into(),
        model,
        protocol,
        sweep,
        run,
        solver: SolverSection::default(),
        ucrl2: Ucrl2Config::default(),
        sarsa: SarsaConfig::default(),
        dqn: DqnConfig::default(),
    }
}

fn arq3() -> ProtocolTemplate {
    ProtocolTemplate::StandardArq {
        error: vec![0.5, 0.2, 0.1],
    }
}

pub fn preset(name: &str) -> Result<Scenario> {
    use PolicyKind::*;
    let s = match name {
        // Three ARQ users over a budget sweep: planning versus learning.
        "fig3" => scenario(
            name,
            model(None, 30, 0),
            arq3(),
            Sweep {
                budgets: vec![0.4, 0.6, 0.8, 1.0],
                users: vec![],
            },
            run(&[Rvi, Whittle, Ucrl2Vi, Ucrl2Whittle], 100_000, 100),
        ),
        // Growing ARQ populations with p_j = (j - 1) / M.
        "fig4" => scenario(
            name,
            model(None, 200, 0),
            ProtocolTemplate::ArqLinear { scale: 1.0 },
            Sweep {
                budgets: vec![],
                users: vec![2, 3, 4, 5, 6],
            },
            run(&[Whittle, Ucrl2Whittle, Greedy, RoundRobin], 10_000, 100),
        ),
        // Learning curves of every agent on the three-user ARQ system.
        "fig5" => {
            let mut r = run(&[Rvi, Ucrl2Vi, Ucrl2Whittle, SarsaLfa, Dqn], 10_000, 20);
            r.curve_points = 20;
            r.dqn_episodes = 100;
            scenario(name, model(None, 20, 0), arq3(), Sweep::default(), r)
        }
        // Two HARQ users with g_j(r) = base_j 2^-r.
        "fig6" => {
            let mut r = run(&[Rvi, Ucrl2Vi, SarsaLfa, Dqn], 10_000, 20);
            r.curve_points = 20;
            r.dqn_episodes = 100;
            scenario(
                name,
                model(None, 20, 3),
                ProtocolTemplate::HarqGeometric {
                    base: vec![0.5, 0.2],
                    factor: 0.5,
                },
                Sweep::default(),
                r,
            )
        }
        // FR HARQ with a (5, 3) code and p_s,j = (j - 1) / 2M.
        "fig7" => scenario(
            name,
            model(None, 200, 0),
            ProtocolTemplate::FrLinear {
                block_len: 5,
                info_len: 3,
                scale: 0.5,
            },
            Sweep {
                budgets: vec![0.6, 1.0],
                users: vec![2, 4, 6, 8, 10],
            },
            run(&[Whittle], 100_000, 10),
        ),
        // Ten HARQ users trained by DQN.
        "fig8" => {
            let mut r = run(&[Dqn, Greedy, RoundRobin], 10_000, 1);
            r.dqn_episodes = 300;
            scenario(
                name,
                model(Some(10), 40, 3),
                ProtocolTemplate::HarqLinear { scale: 1.0, factor: 0.5 },
                Sweep::default(),
                r,
            )
        }
        other => {
            return Err(LabError::Scenario(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aoi_core::model::ProtocolSpec;

    #[test]
    fn all_presets_validate() {
        for name in PRESETS {
            let s = preset(name).unwrap();
            let text = s.to_toml().unwrap();
            let (back, warnings) = Scenario::from_toml(&text, true).unwrap();
            assert!(warnings.is_empty());
            assert_eq!(back, s, "{name}");
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn fig3_fields() {
        let s = preset("fig3").unwrap();
        assert_eq!(s.run.horizon, 100_000);
        assert_eq!(s.seeds().len(), 100);
        let cases = s.cases().unwrap();
        assert_eq!(cases.len(), 4);
        assert_eq!(
            cases[0].model.protocol(),
            &ProtocolSpec::StandardArq {
                error: vec![0.5, 0.2, 0.1]
            }
        );
        assert_eq!(cases[0].model.config().weights, vec![1.0; 3]);
    }

    #[test]
    fn fig6_and_fig7_channels() {
        let c = &preset("fig6").unwrap().cases().unwrap()[0];
        assert!((c.model.protocol().error_prob(0, 1) - 0.25).abs() < 1e-15);
        assert!((c.model.protocol().error_prob(1, 2) - 0.05).abs() < 1e-15);
        let cases = preset("fig7").unwrap().cases().unwrap();
        let m4 = cases.iter().find(|c| c.users == 4).unwrap();
        assert_eq!(
            m4.model.protocol(),
            &ProtocolSpec::FrHarq {
                block_len: 5,
                info_len: 3,
                symbol_error: vec![0.0, 0.125, 0.25, 0.375]
            }
        );
        assert!(cases.iter().any(|c| c.lambda == 0.6));
    }
}
