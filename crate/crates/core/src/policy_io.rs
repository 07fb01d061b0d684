//! Text format for solved policies and CSV export of value tables.
//!
//! ```text
//! # aoi-policy v1
//! # config-sha256 <hex>
//! # protocol <arq|harq|fr>
//! # eta <value>
//! # construction <deterministic|single-state|time-sharing>
//! <state index> <action>            (base table, one line per state)
//! high <state index> <action>        (time-sharing only: second table)
//! mix <state index> <action> <mu>    (single-state only)
//! share <mu>                         (time-sharing only)
//! ```
//! Actions use the textual form `i`, `n<j>`, `x<j>` with one-based users.

use std::io::{BufRead, Write};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::AoiModel;
use crate::lagrange::{ConstrainedPolicy, MixturePolicy, TimeSharingPolicy};
use crate::mdp::CompiledMdp;
use crate::model::Action;
use crate::rvi::{DeterministicPolicy, ValueTables};
use crate::space::StateSpace;

const HEADER: &str = "# aoi-policy v1";

/// SHA-256 of the canonical JSON of the configuration and protocol.
pub fn config_hash(model: &AoiModel) -> String {
    let json = serde_json::to_string(&(model.config(), model.protocol())).expect("model serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn write_table<W: Write>(out: &mut W, prefix: &str, p: &DeterministicPolicy) -> Result<()> {
    for (i, a) in p.actions().iter().enumerate() {
        writeln!(out, "{prefix}{i} {a}")?;
    }
    Ok(())
}

pub fn write_policy<W: Write>(mut out: W, model: &AoiModel, policy: &ConstrainedPolicy, eta: f64) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    writeln!(out, "# config-sha256 {}", config_hash(model))?;
    writeln!(out, "# protocol {}", model.protocol().name())?;
    writeln!(out, "# eta {eta:e}")?;
    writeln!(out, "# construction {}", policy.construction())?;
    match policy {
        ConstrainedPolicy::Deterministic(p) => write_table(&mut out, "", p)?,
        ConstrainedPolicy::Mixture(m) => {
            write_table(&mut out, "", &m.base)?;
            writeln!(out, "mix {} {} {:e}", m.state, m.alternative, m.mu)?;
        }
        ConstrainedPolicy::TimeSharing(t) => {
            write_table(&mut out, "", &t.low)?;
            write_table(&mut out, "high ", &t.high)?;
            writeln!(out, "share {:e}", t.mu)?;
        }
    }
    Ok(())
}

/// A policy read back from text, with its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPolicy {
    pub policy: ConstrainedPolicy,
    pub eta: f64,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what}")))
}

/// Reads a policy for `model`; the configuration hash must match.
pub fn read_policy<R: BufRead>(input: R, model: &AoiModel, space: Arc<StateSpace>) -> Result<StoredPolicy> {
    let n = space.len();
    let mut low: Vec<Option<Action>> = vec![None; n];
    let mut high: Vec<Option<Action>> = vec![None; n];
    let mut mix: Option<(usize, Action, f64)> = None;
    let mut share: Option<f64> = None;
    let mut eta = 0.0;
    let mut construction = String::new();
    let mut seen_header = false;
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let no = k + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if k == 0 {
            if text != HEADER {
                return Err(parse_err(no, format!("expected `{HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            let mut it = meta.split_whitespace();
            match (it.next(), it.next()) {
                (Some("config-sha256"), Some(h)) => {
                    if h != config_hash(model) {
                        return Err(parse_err(no, "configuration hash does not match the model"));
                    }
                }
                (Some("eta"), v) => eta = parse_num(no, v, "eta")?,
                (Some("construction"), Some(c)) => construction = c.to_string(),
                _ => {}
            }
            continue;
        }
        let mut it = text.split_whitespace();
        let first = it.next().unwrap_or_default();
        let put = |table: &mut Vec<Option<Action>>, idx: Option<&str>, act: Option<&str>| -> Result<()> {
            let i: usize = parse_num(no, idx, "state index")?;
            let a: Action = parse_num(no, act, "action")?;
            *table.get_mut(i).ok_or_else(|| parse_err(no, format!("state index {i} out of range")))? = Some(a);
            Ok(())
        };
        match first {
            "high" => put(&mut high, it.next(), it.next())?,
            "mix" => {
                let i = parse_num(no, it.next(), "state index")?;
                let a = parse_num(no, it.next(), "action")?;
                let mu = parse_num(no, it.next(), "mu")?;
                mix = Some((i, a, mu));
            }
            "share" => share = Some(parse_num(no, it.next(), "mu")?),
            _ => put(&mut low, Some(first), it.next())?,
        }
    }
    if !seen_header {
        return Err(Error::Parse("empty policy file".into()));
    }
    let complete = |t: Vec<Option<Action>>, what: &str| -> Result<DeterministicPolicy> {
        let actions = t
            .into_iter()
            .enumerate()
            .map(|(i, a)| a.ok_or_else(|| Error::Parse(format!("{what} table has no action for state {i}"))))
            .collect::<Result<Vec<_>>>()?;
        DeterministicPolicy::new(Arc::clone(&space), actions)
    };
    let base = complete(low, "base")?;
    let policy = match construction.as_str() {
        "deterministic" => ConstrainedPolicy::Deterministic(base),
        "single-state" => {
            let (state, alternative, mu) = mix.ok_or_else(|| Error::Parse("missing mix line".into()))?;
            if state >= n {
                return Err(Error::Parse(format!("mix state {state} out of range")));
            }
            ConstrainedPolicy::Mixture(MixturePolicy {
                base,
                state,
                alternative,
                mu,
            })
        }
        "time-sharing" => {
            let mu = share.ok_or_else(|| Error::Parse("missing share line".into()))?;
            ConstrainedPolicy::TimeSharing(TimeSharingPolicy::new(base, complete(high, "high")?, mu))
        }
        other => return Err(Error::Parse(format!("unknown construction `{other}`"))),
    };
    Ok(StoredPolicy { policy, eta })
}

/// One row per state-action pair: `state,action,q,h,greedy`.
pub fn write_value_csv<W: Write>(mut out: W, mdp: &CompiledMdp, tables: &ValueTables, policy: &DeterministicPolicy) -> Result<()> {
    writeln!(out, "state,action,q,h,chosen")?;
    for s in 0..mdp.num_states() {
        let state = mdp.space().state(s);
        for (c, q) in mdp.choices(s).iter().zip(tables.q_row(mdp, s)) {
            writeln!(
                out,
                "\"{state}\",{},{q},{},{}",
                c.action,
                tables.h[s],
                u8::from(policy.action(s) == c.action)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrange::build_mixture;
    use crate::model::{ModelConfig, ProtocolSpec};
    use crate::rvi::{rvi_solve, RviOptions};

    fn setup() -> (AoiModel, CompiledMdp) {
        let cfg = ModelConfig::uniform(2, 5, 0, 0.5).unwrap();
        let m = AoiModel::new(cfg, ProtocolSpec::StandardArq { error: vec![0.3, 0.1] }).unwrap();
        let mdp = CompiledMdp::compile(&m).unwrap();
        (m, mdp)
    }

    fn round_trip(m: &AoiModel, mdp: &CompiledMdp, p: &ConstrainedPolicy) -> StoredPolicy {
        let mut buf = Vec::new();
        write_policy(&mut buf, m, p, 1.25).unwrap();
        read_policy(buf.as_slice(), m, mdp.shared_space()).unwrap()
    }

    #[test]
    fn deterministic_round_trip() {
        let (m, mdp) = setup();
        let (pol, _) = rvi_solve(&mdp, 1.0, &RviOptions::default(), None).unwrap();
        let p = ConstrainedPolicy::Deterministic(pol);
        let back = round_trip(&m, &mdp, &p);
        assert_eq!(back.policy, p);
        assert_eq!(back.eta, 1.25);
    }

    #[test]
    fn mixture_and_time_sharing_round_trip() {
        let (m, mdp) = setup();
        let space = mdp.shared_space();
        let a = DeterministicPolicy::from_fn(Arc::clone(&space), |_| Action::New(0));
        let b = DeterministicPolicy::from_fn(Arc::clone(&space), |_| Action::Idle);
        let mix = ConstrainedPolicy::Mixture(MixturePolicy {
            base: a.clone(),
            state: 3,
            alternative: Action::New(1),
            mu: 0.123456789,
        });
        assert_eq!(round_trip(&m, &mdp, &mix).policy, mix);
        let ts = ConstrainedPolicy::TimeSharing(TimeSharingPolicy::new(a, b, 0.7));
        assert_eq!(round_trip(&m, &mdp, &ts).policy, ts);
    }

    #[test]
    fn solved_mixture_round_trip() {
        let (m, mdp) = setup();
        let (lo, _) = rvi_solve(&mdp, 0.5, &RviOptions::default(), None).unwrap();
        let (hi, _) = rvi_solve(&mdp, 20.0, &RviOptions::default(), None).unwrap();
        if let Ok((p, _)) = build_mixture(&mdp, &lo, &hi, 0.5) {
            assert_eq!(round_trip(&m, &mdp, &p).policy, p);
        }
    }

    #[test]
    fn rejects_foreign_config() {
        let (m, mdp) = setup();
        let (pol, _) = rvi_solve(&mdp, 1.0, &RviOptions::default(), None).unwrap();
        let mut buf = Vec::new();
        write_policy(&mut buf, &m, &ConstrainedPolicy::Deterministic(pol), 1.0).unwrap();
        let other = m.with_budget(0.9).unwrap();
        assert!(matches!(read_policy(buf.as_slice(), &other, mdp.shared_space()), Err(Error::Parse(_))));
        assert!(read_policy("garbage\n".as_bytes(), &m, mdp.shared_space()).is_err());
    }

    #[test]
    fn value_csv_has_row_per_choice() {
        let (_, mdp) = setup();
        let (pol, t) = rvi_solve(&mdp, 1.0, &RviOptions::default(), None).unwrap();
        let mut buf = Vec::new();
        write_value_csv(&mut buf, &mdp, &t, &pol).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + mdp.num_choices());
        let chosen = text.lines().skip(1).filter(|l| l.ends_with(",1")).count();
        assert_eq!(chosen, mdp.num_states());
    }
}
