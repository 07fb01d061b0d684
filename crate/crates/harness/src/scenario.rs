//! Scenario files: model, protocol, policies, sweeps and hyperparameters.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use aoi_core::kernel::AoiModel;
use aoi_core::model::{ModelConfig, ProtocolSpec};
use aoi_core::rvi::RviOptions;
use aoi_learners::dqn::DqnConfig;
use aoi_learners::sarsa::SarsaConfig;
use aoi_learners::ucrl2::Ucrl2Config;

use crate::error::{LabError, Result};

/// Channel description. The `*_linear` families depend on the number of
/// users so they can be swept over `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolTemplate {
    StandardArq {
        error: Vec<f64>,
    },
    GeneralHarq {
        error: Vec<Vec<f64>>,
    },
    /// `g_j(r) = base_j * factor^r`.
    HarqGeometric {
        base: Vec<f64>,
        factor: f64,
    },
    FrHarq {
        block_len: u32,
        info_len: u32,
        symbol_error: Vec<f64>,
    },
    /// `p_j = scale (j - 1) / M`.
    ArqLinear {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `g_j(r) = scale (j - 1) / M * factor^r`.
    HarqLinear {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "half")]
        factor: f64,
    },
    /// `p_s,j = scale (j - 1) / M`.
    FrLinear {
        block_len: u32,
        info_len: u32,
        #[serde(default = "half")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn linear(users: usize, scale: f64) -> Vec<f64> {
    (0..users).map(|j| scale * j as f64 / users as f64).collect()
}

impl ProtocolTemplate {
    pub fn instantiate(&self, users: usize, max_retx: u32) -> ProtocolSpec {
        match self {
            ProtocolTemplate::StandardArq { error } => ProtocolSpec::StandardArq { error: error.clone() },
            ProtocolTemplate::GeneralHarq { error } => ProtocolSpec::GeneralHarq { error: error.clone() },
            ProtocolTemplate::HarqGeometric { base, factor } => ProtocolSpec::harq_geometric(base, *factor, max_retx),
            ProtocolTemplate::FrHarq {
                block_len,
                info_len,
                symbol_error,
            } => ProtocolSpec::FrHarq {
                block_len: *block_len,
                info_len: *info_len,
                symbol_error: symbol_error.clone(),
            },
            ProtocolTemplate::ArqLinear { scale } => ProtocolSpec::StandardArq {
                error: linear(users, *scale),
            },
            ProtocolTemplate::HarqLinear { scale, factor } => {
                ProtocolSpec::harq_geometric(&linear(users, *scale), *factor, max_retx)
            }
            ProtocolTemplate::FrLinear {
                block_len,
                info_len,
                scale,
            } => ProtocolSpec::FrHarq {
                block_len: *block_len,
                info_len: *info_len,
                symbol_error: linear(users, *scale),
            },
        }
    }

    /// Number of users fixed by an explicit parameter list.
    pub fn fixed_users(&self) -> Option<usize> {
        match self {
            ProtocolTemplate::StandardArq { error } => Some(error.len()),
            ProtocolTemplate::GeneralHarq { error } => Some(error.len()),
            ProtocolTemplate::HarqGeometric { base, .. } => Some(base.len()),
            ProtocolTemplate::FrHarq { symbol_error, .. } => Some(symbol_error.len()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    /// Number of users; defaults to the length of the protocol's parameter list.
    #[serde(default)]
    pub users: Option<usize>,
    pub max_age: u32,
    #[serde(default)]
    pub max_retx: u32,
    /// Defaults to unit weights.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Transmission budget `lambda`.
    #[serde(default = "one")]
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sweep {
    #[serde(default)]
    pub budgets: Vec<f64>,
    #[serde(default)]
    pub users: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Constrained optimum of the known model (RVI, multiplier search, mixture).
    Rvi,
    Whittle,
    Greedy,
    RoundRobin,
    Ucrl2Vi,
    Ucrl2Whittle,
    SarsaLfa,
    Dqn,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Rvi,
        PolicyKind::Whittle,
        PolicyKind::Greedy,
        PolicyKind::RoundRobin,
        PolicyKind::Ucrl2Vi,
        PolicyKind::Ucrl2Whittle,
        PolicyKind::SarsaLfa,
        PolicyKind::Dqn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rvi => "rvi",
            PolicyKind::Whittle => "whittle",
            PolicyKind::Greedy => "greedy",
            PolicyKind::RoundRobin => "round-robin",
            PolicyKind::Ucrl2Vi => "ucrl2-vi",
            PolicyKind::Ucrl2Whittle => "ucrl2-whittle",
            PolicyKind::SarsaLfa => "sarsa-lfa",
            PolicyKind::Dqn => "dqn",
        }
    }

    pub fn is_learner(self) -> bool {
        matches!(
            self,
            PolicyKind::Ucrl2Vi | PolicyKind::Ucrl2Whittle | PolicyKind::SarsaLfa | PolicyKind::Dqn
        )
    }

    /// Policies that transmit in every slot and ignore the budget.
    pub fn ignores_budget(self) -> bool {
        matches!(self, PolicyKind::Greedy | PolicyKind::RoundRobin | PolicyKind::Dqn)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either a count (seeds `0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub policies: Vec<PolicyKind>,
    /// Slots simulated per seed.
    pub horizon: u64,
    pub seeds: SeedSpec,
    /// Points of the running-average curve per policy; 0 disables `curves.csv`.
    #[serde(default)]
    pub curve_points: usize,
    /// DQN training episodes before evaluation.
    #[serde(default = "default_dqn_episodes")]
    pub dqn_episodes: usize,
    /// Slots per bisection step when calibrating the Whittle multiplier.
    #[serde(default = "default_calibration")]
    pub calibration_horizon: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_dqn_episodes() -> usize {
    500
}

fn default_calibration() -> u64 {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let r = RviOptions::default();
        Self {
            epsilon: r.epsilon,
            max_sweeps: r.max_sweeps,
        }
    }
}

impl SolverSection {
    pub fn rvi(&self) -> RviOptions {
        RviOptions {
            epsilon: self.epsilon,
            max_sweeps: self.max_sweeps,
            ..RviOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSection,
    pub protocol: ProtocolTemplate,
    #[serde(default)]
    pub sweep: Sweep,
    pub run: RunSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub ucrl2: Ucrl2Config,
    #[serde(default)]
    pub sarsa: SarsaConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub label: String,
    pub users: usize,
    pub lambda: f64,
    pub model: AoiModel,
}

impl Scenario {
    pub fn from_toml(text: &str, strict: bool) -> Result<(Self, Vec<String>)> {
        let de = toml::Deserializer::parse(text).map_err(|e| LabError::Scenario(e.to_string()))?;
        let mut unknown = Vec::new();
        let scenario: Scenario = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| LabError::Scenario(e.to_string()))?;
        if strict && !unknown.is_empty() {
            return Err(LabError::Scenario(format!(
                "unknown key(s): {} (use --lenient to ignore)",
                unknown.join(", ")
            )));
        }
        scenario.validate()?;
        let warnings = unknown.into_iter().map(|k| format!("ignored unknown key `{k}`")).collect();
        Ok((scenario, warnings))
    }

    pub fn load(path: &Path, strict: bool) -> Result<(Self, Vec<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, strict)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LabError::Scenario(e.to_string()))
    }

    /// SHA-256 of the scenario without its output path.
    pub fn hash(&self) -> String {
        let mut s = self.clone();
        s.run.out = None;
        let json = serde_json::to_string(&s).expect("scenario serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.run.seeds.seeds()
    }

    fn validate(&self) -> Result<()> {
        if self.run.horizon == 0 {
            return Err(LabError::Scenario("run.horizon: expected an integer >= 1".into()));
        }
        if self.seeds().is_empty() {
            return Err(LabError::Scenario("run.seeds: expected at least one seed".into()));
        }
        if self.run.policies.is_empty() {
            return Err(LabError::Scenario("run.policies: expected at least one policy".into()));
        }
        if let (Some(fixed), false) = (self.protocol.fixed_users(), self.sweep.users.is_empty()) {
            return Err(LabError::Scenario(format!(
                "sweep.users: the protocol lists {fixed} users explicitly; use a *_linear protocol to sweep M"
            )));
        }
        if self.model.weights.is_some() && !self.sweep.users.is_empty() {
            return Err(LabError::Scenario("model.weights: cannot be combined with sweep.users".into()));
        }
        self.cases().map(|_| ())
    }

    /// Expands the budget and user sweeps into validated models.
    pub fn cases(&self) -> Result<Vec<Case>> {
        let budgets = if self.sweep.budgets.is_empty() {
            vec![self.model.budget]
        } else {
            self.sweep.budgets.clone()
        };
        let users = if self.sweep.users.is_empty() {
            let m = self
                .model
                .users
                .or(self.protocol.fixed_users())
                .ok_or_else(|| LabError::Scenario("model.users: required for *_linear protocols".into()))?;
            vec![m]
        } else {
            self.sweep.users.clone()
        };
        let mut out = Vec::new();
        for &m in &users {
            for &lambda in &budgets {
                let weights = self.model.weights.clone().unwrap_or_else(|| vec![1.0; m]);
                let cfg = ModelConfig::new(weights, self.model.max_age, self.model.max_retx, lambda)?;
                let protocol = self.protocol.instantiate(m, self.model.max_retx);
                let model = AoiModel::new(cfg, protocol)?;
                out.push(Case {
                    label: format!("M={m} lambda={lambda}"),
                    users: m,
                    lambda,
                    model,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[model]
max_age = 10
[protocol]
kind = "standard_arq"
error = [0.5, 0.2]
[run]
policies = ["whittle", "round-robin"]
horizon = 100
seeds = 2
"#;

    #[test]
    fn defaults_filled() {
        let (s, w) = Scenario::from_toml(MINIMAL, true).unwrap();
        assert!(w.is_empty());
        assert_eq!(s.model.budget, 1.0);
        assert_eq!(s.seeds(), vec![0, 1]);
        assert_eq!(s.dqn, DqnConfig::default());
        let cases = s.cases().unwrap();
        assert_eq!(cases.len(), 1);
        assert_eq!(cases[0].users, 2);
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        let err = Scenario::from_toml(&text, true).unwrap_err().to_string();
        assert!(err.contains("run.bogus"), "{err}");
        let (_, w) = Scenario::from_toml(&text, false).unwrap();
        assert_eq!(w, vec!["ignored unknown key `run.bogus`".to_string()]);
    }

    #[test]
    fn type_errors_name_the_key() {
        let text = MINIMAL.replace("horizon = 100", "horizon = \"long\"");
        let err = Scenario::from_toml(&text, true).unwrap_err().to_string();
        assert!(err.contains("horizon") && err.contains("u64"), "{err}");
    }

    #[test]
    fn linear_families() {
        let p = ProtocolTemplate::ArqLinear { scale: 1.0 }.instantiate(4, 0);
        assert_eq!(p, ProtocolSpec::StandardArq { error: vec![0.0, 0.25, 0.5, 0.75] });
        let p = ProtocolTemplate::FrLinear {
            block_len: 5,
            info_len: 3,
            scale: 0.5,
        }
        .instantiate(2, 0);
        assert_eq!(
            p,
            ProtocolSpec::FrHarq {
                block_len: 5,
                info_len: 3,
                symbol_error: vec![0.0, 0.25]
            }
        );
    }

    #[test]
    fn hash_ignores_output_path() {
        let (mut s, _) = Scenario::from_toml(MINIMAL, true).unwrap();
        let h = s.hash();
        s.run.out = Some("elsewhere".into());
        assert_eq!(s.hash(), h);
        s.run.horizon += 1;
        assert_ne!(s.hash(), h);
    }

    #[test]
    fn toml_round_trip() {
        let (s, _) = Scenario::from_toml(MINIMAL, true).unwrap();
        let (t, _) = Scenario::from_toml(&s.to_toml().unwrap(), true).unwrap();
        assert_eq!(s, t);
    }
}
