use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use aoi_core::index::{index_table, write_index_csv, ArmIndex, ArqArm, FrArm};
use aoi_core::policy_io::write_policy;
use aoi_lab::output::{csv_bytes, write_atomic, write_outputs};
use aoi_lab::presets::{preset, PRESETS};
use aoi_lab::runner::{case_bound, solve_case, AGGREGATE, BOUND_POLICY};
use aoi_lab::scenario::SeedSpec;
use aoi_lab::{exit, run_scenario, LabError, PolicyKind, Result, Scenario};

#[derive(Parser)]
#[command(name = "aoi-lab", version, about = "Age-of-information scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve each case exactly: multiplier search, RVI and the randomized mixture.
    Solve(Common),
    /// Simulate the planning and heuristic policies of a scenario.
    Simulate(Common),
    /// Run the learning agents of a scenario.
    Learn(Common),
    /// Print the analytic lower bound of each case.
    Bound {
        #[command(flatten)]
        common: Common,
        /// Budget overriding the scenario's budgets.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Print Whittle index tables.
    Index {
        /// One user as `p=<error>,w=<weight>`; repeat for more users.
        #[arg(long = "user", required = true, num_args = 1..)]
        users: Vec<String>,
        /// Receiver ages, `a..b` (inclusive) or a comma list.
        #[arg(long, default_value = "1..10")]
        delta: String,
        /// FR HARQ code `n,k`; `p` is then the symbol error probability.
        #[arg(long)]
        code: Option<String>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every policy of a figure preset.
    Repro {
        /// One of fig3 .. fig8.
        figure: String,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    opts: RunOpts,
}

#[derive(Args)]
struct RunOpts {
    /// Seed count `n` (seeds 0..n) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Slots per run.
    #[arg(long)]
    horizon: Option<u64>,
    /// Output directory; defaults to `out/<scenario name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma list of policies overriding the scenario.
    #[arg(long)]
    policies: Option<String>,
    /// Reject unknown scenario keys (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Warn about unknown scenario keys instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_seeds(s: &str) -> Result<SeedSpec> {
    let bad = || LabError::Scenario(format!("--seeds: expected a count or a comma list of integers, got `{s}`"));
    if s.contains(',') {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>>>()
            .map(SeedSpec::List)
    } else {
        s.trim().parse().map(SeedSpec::Count).map_err(|_| bad())
    }
}

fn parse_policies(s: &str) -> Result<Vec<PolicyKind>> {
    s.split(',')
        .map(|x| {
            let x = x.trim();
            PolicyKind::ALL.into_iter().find(|k| k.name() == x).ok_or_else(|| {
                let names: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                LabError::Scenario(format!("unknown policy `{x}`; expected one of {}", names.join(", ")))
            })
        })
        .collect()
}

fn parse_deltas(s: &str) -> Result<Vec<u32>> {
    let bad = || LabError::Scenario(format!("--delta: expected `a..b` or a comma list, got `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
    }
}

/// Splits `--user` values into users; a value starting with `p=` opens a new user.
fn group_users(values: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some(last) if !v.trim_start().starts_with("p=") => last.push(v.clone()),
            _ => out.push(vec![v.clone()]),
        }
    }
    out
}

/// Parses `p=0.5,w=1` (or the same pairs split across arguments).
fn parse_user(parts: &[String]) -> Result<(f64, f64)> {
    let (mut p, mut w) = (None, 1.0);
    for kv in parts.iter().flat_map(|s| s.split(',')) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LabError::Scenario(format!("--user: expected key=value, got `{kv}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| LabError::Scenario(format!("--user {k}: expected a number, got `{v}`")))?;
        match k.trim() {
            "p" => p = Some(v),
            "w" => w = v,
            other => return Err(LabError::Scenario(format!("--user: unknown key `{other}`; expected p or w"))),
        }
    }
    let p = p.ok_or_else(|| LabError::Scenario("--user: missing p=<error probability>".into()))?;
    Ok((p, w))
}

fn parse_code(s: &str) -> Result<(u32, u32)> {
    let bad = || LabError::Scenario(format!("--code: expected `n,k`, got `{s}`"));
    let (n, k) = s.split_once(',').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, k.trim().parse().map_err(|_| bad())?))
}

fn load(common: &Common) -> Result<Scenario> {
    let strict = !common.opts.lenient;
    let mut s = match (&common.scenario, &common.preset) {
        (Some(path), _) => {
            let (s, warnings) = Scenario::load(path, strict)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            s
        }
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(LabError::Scenario("one of --scenario or --preset is required".into())),
    };
    apply(&mut s, &common.opts)?;
    Ok(s)
}

fn apply(s: &mut Scenario, opts: &RunOpts) -> Result<()> {
    if let Some(seeds) = &opts.seeds {
        s.run.seeds = parse_seeds(seeds)?;
    }
    if let Some(h) = opts.horizon {
        s.run.horizon = h;
    }
    if let Some(p) = &opts.policies {
        s.run.policies = parse_policies(p)?;
    }
    if let Some(out) = &opts.out {
        s.run.out = Some(out.clone());
    }
    // Re-validate after overrides.
    let text = s.to_toml()?;
    Scenario::from_toml(&text, true)?;
    Ok(())
}

fn out_dir(s: &Scenario) -> PathBuf {
    s.run.out.clone().unwrap_or_else(|| Path::new("out").join(&s.name))
}

fn print_summary(rows: &[aoi_lab::ResultRow]) {
    println!("{:<22} {:<14} {:>10} {:>8} {:>9} {:>10}", "case", "policy", "J", "C", "ci", "bound");
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for r in rows.iter().filter(|r| r.seed == AGGREGATE || r.policy == BOUND_POLICY) {
        println!(
            "{:<22} {:<14} {:>10} {:>8} {:>9} {:>10}{}",
            r.case,
            r.policy,
            f(r.j),
            f(r.c),
            f(r.ci),
            f(r.bound),
            if r.status == "ok" { String::new() } else { format!("  [{}]", r.status) }
        );
    }
}

fn batch(mut s: Scenario, filter: impl Fn(PolicyKind) -> bool, what: &str, jobs: Option<usize>) -> Result<()> {
    s.run.policies.retain(|k| filter(*k));
    if s.run.policies.is_empty() {
        return Err(LabError::Scenario(format!("run.policies: no {what} policies selected")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Scenario(format!("--jobs: {e}")))?;
    let t = Instant::now();
    let out = pool.install(|| run_scenario(&s))?;
    let dir = out_dir(&s);
    let files = write_outputs(&dir, &s, &out, std::env::args().collect(), pool.current_num_threads(), t.elapsed().as_secs_f64())?;
    print_summary(&out.rows);
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    if out.failed > 0 {
        return Err(LabError::PartialFailure {
            failed: out.failed,
            total: out.total,
        });
    }
    Ok(())
}

fn solve(s: &Scenario) -> Result<()> {
    let dir = out_dir(s);
    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    println!("{:<22} {:>12} {:>10} {:>10}  construction", "case", "eta", "J", "C");
    for (i, case) in s.cases()?.iter().enumerate() {
        let (eta, policy, eval, _) = solve_case(s, case)?;
        println!("{:<22} {:>12.6} {:>10.6} {:>10.6}  {}", case.label, eta, eval.j, eval.c, policy.construction());
        let path = dir.join(format!("policy-{i}.txt"));
        let mut buf = Vec::new();
        write_policy(&mut buf, &case.model, &policy, eta)?;
        write_atomic(&path, &buf)?;
        rows.push(SolveRow {
            scenario_hash: s.hash(),
            case: case.label.clone(),
            lambda: case.lambda,
            users: case.users,
            eta,
            j: eval.j,
            c: eval.c,
            construction: policy.construction(),
            policy_file: path.file_name().unwrap().to_string_lossy().into_owned(),
        });
    }
    let header = ["scenario_hash", "case", "lambda", "users", "eta", "j", "c", "construction", "policy_file"];
    write_atomic(&dir.join("solve.csv"), &csv_bytes(&rows, &header)?)?;
    write_atomic(&dir.join("scenario.toml"), s.to_toml()?.as_bytes())?;
    eprintln!("wrote {}", dir.join("solve.csv").display());
    Ok(())
}

#[derive(serde::Serialize)]
struct SolveRow {
    scenario_hash: String,
    case: String,
    lambda: f64,
    users: usize,
    eta: f64,
    j: f64,
    c: f64,
    construction: &'static str,
    policy_file: String,
}

fn bound(s: &Scenario, lambda: Option<f64>) -> Result<()> {
    println!("case,lambda,bound");
    let mut seen = Vec::new();
    for case in s.cases()? {
        let lam = lambda.unwrap_or(case.lambda);
        let key = (case.users, lam.to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        match case_bound(&case.model, lam)? {
            Some(b) => println!("M={},{lam},{b}", case.users),
            None => {
                return Err(LabError::Core(aoi_core::Error::WrongProtocol {
                    expected: "standard ARQ or FR HARQ",
                }))
            }
        }
    }
    Ok(())
}

fn index(users: &[String], delta: &str, code: Option<&str>, out: Option<&Path>) -> Result<()> {
    let deltas = parse_deltas(delta)?;
    let code = code.map(parse_code).transpose()?;
    let mut arms = Vec::new();
    for u in group_users(users) {
        let (p, w) = parse_user(&u)?;
        arms.push(match code {
            Some((n, k)) => ArmIndex::Fr(FrArm::from_symbol_error(w, n, k, p)?),
            None => ArmIndex::Arq(ArqArm::new(w, p)?),
        });
    }
    let rows = index_table(&arms, deltas);
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            write_index_csv(&mut buf, &rows)?;
            write_atomic(path, &buf)?;
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            write_index_csv(&mut w, &rows)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(c) => solve(&load(&c)?),
        Command::Simulate(c) => {
            let jobs = c.opts.jobs;
            batch(load(&c)?, |k| !k.is_learner(), "planning or heuristic", jobs)
        }
        Command::Learn(c) => {
            let jobs = c.opts.jobs;
            batch(load(&c)?, PolicyKind::is_learner, "learning", jobs)
        }
        Command::Bound { common, lambda } => bound(&load(&common)?, lambda),
        Command::Index { users, delta, code, out } => index(&users, &delta, code.as_deref(), out.as_deref()),
        Command::Repro { figure, opts } => {
            if !PRESETS.contains(&figure.as_str()) {
                return Err(LabError::Scenario(format!(
                    "unknown figure `{figure}`; expected one of {}",
                    PRESETS.join(", ")
                )));
            }
            let mut s = preset(&figure)?;
            apply(&mut s, &opts)?;
            batch(s, |_| true, "", opts.jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_and_deltas() {
        assert_eq!(parse_seeds("3").unwrap(), SeedSpec::Count(3));
        assert_eq!(parse_seeds("4, 7").unwrap(), SeedSpec::List(vec![4, 7]));
        assert!(parse_seeds("x").is_err());
        assert_eq!(parse_deltas("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_deltas("2,9").unwrap(), vec![2, 9]);
        assert!(parse_deltas("0..3").is_err());
    }

    #[test]
    fn users_and_policies() {
        assert_eq!(parse_user(&["p=0.5,w=2".into()]).unwrap(), (0.5, 2.0));
        assert_eq!(parse_user(&["p=0.5".into(), "w=3".into()]).unwrap(), (0.5, 3.0));
        assert!(parse_user(&["w=1".into()]).is_err());
        let g = group_users(&["p=0.5".into(), "w=2".into(), "p=0.1,w=1".into()]);
        assert_eq!(g.len(), 2);
        assert_eq!(parse_user(&g[0]).unwrap(), (0.5, 2.0));
        assert_eq!(parse_policies("rvi,round-robin").unwrap(), vec![PolicyKind::Rvi, PolicyKind::RoundRobin]);
        assert!(parse_policies("foo").is_err());
        assert_eq!(parse_code("5,3").unwrap(), (5, 3));
    }

    #[test]
    fn cli_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
