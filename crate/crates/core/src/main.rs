use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use defcast::bounds::{
    best_expert_bound, crossover, default_delta_grid, normal_hedge_min, quantile_bound,
    ReferenceBound,
};
use defcast::harness::{self, EnvironmentSpec, RunConfig, RunOptions, Trace};
use defcast::learners::{LearnerConfig, LearnerVariant};
use defcast::levin::{levin_search, HoeffdingRelation};
use defcast::{Error, GameSpec};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "defcast", version, about = "Defensive forecasting for prediction with expert advice")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configured simulation and check its guarantee.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Re-verify every certificate and protocol invariant.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the CSV trace and JSON sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the regret bounds at one point.
    Bounds {
        #[arg(long = "T")]
        t: f64,
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        eps: f64,
        /// Comma-separated δ values for the NormalHedge bound.
        #[arg(long, value_delimiter = ',')]
        delta_grid: Option<Vec<f64>>,
    },
    /// Grid-search random Hoeffding relations for a point that clears the level.
    VerifyLevin {
        #[arg(long)]
        omega_size: usize,
        #[arg(long)]
        resolution: usize,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-2)]
        tolerance: f64,
    },
    /// Run several learners on the same environment stream.
    Compare {
        #[arg(long, value_delimiter = ',')]
        learners: Vec<String>,
        #[arg(long, default_value = "iid_uniform")]
        env: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Quantile at which to report regret; defaults to 1/N.
        #[arg(long)]
        eps: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate { config, verify, seed, out } => simulate(config, verify, seed, out),
        Cmd::Bounds { t, n, eps, delta_grid } => bounds(t, n, eps, delta_grid),
        Cmd::VerifyLevin { omega_size, resolution, count, seed, tolerance } => {
            verify_levin(omega_size, resolution, count, seed, tolerance)
        }
        Cmd::Compare { learners, env, n, t, seed, runs, eps } => {
            compare(&learners, &env, n, t, seed, runs, eps)
        }
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn print_checks(trace: &Trace) {
    for c in &trace.checks {
        println!(
            "{:<26} {}  ({} evaluations, worst excess {:.3e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.evaluations,
            c.worst_excess
        );
    }
}

fn exit_code(traces: &[&Trace]) -> u8 {
    if traces.iter().any(|t| t.infeasible()) {
        EXIT_INFEASIBLE
    } else if traces.iter().all(|t| t.all_pass()) {
        0
    } else {
        EXIT_VIOLATION
    }
}

fn simulate(config: PathBuf, verify: bool, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<u8> {
    let cfg = RunConfig::load(&config)?;
    let trace = harness::run(&cfg, &RunOptions { verify, seed, run_index: 0 })?;
    let m = &trace.meta;
    println!(
        "{} on {} (N = {}, T = {}, seed {}): {} rounds, slack {:.3e}",
        m.learner,
        m.environment,
        m.num_experts,
        m.horizon,
        m.seed,
        trace.rows.len(),
        m.slack
    );
    if let Some(last) = trace.rows.last() {
        for (e, q) in m.eps_grid.iter().zip(&last.quantiles) {
            println!("  eps {e:<8} regret {:>10.4}  bound {:>10.4}", q.r_eps, q.bound);
        }
    }
    print_checks(&trace);
    if let Some(why) = &m.aborted {
        println!("aborted: {why}");
    }
    let dir = out.or_else(|| cfg.output.as_ref().map(|o| o.dir.clone()));
    if let Some(dir) = dir {
        let stem = cfg
            .output
            .as_ref()
            .and_then(|o| o.stem.clone())
            .or_else(|| cfg.name.clone())
            .unwrap_or_else(|| "run".into());
        let (csv, json) = harness::emit::emit(&cfg, &trace, &dir, &stem)?;
        println!("wrote {} and {}", csv.display(), json.display());
    }
    Ok(exit_code(&[&trace]))
}

fn bounds(t: f64, n: usize, eps: f64, deltas: Option<Vec<f64>>) -> anyhow::Result<u8> {
    if !(t >= 1.0) {
        bail!("T must be at least 1");
    }
    let deltas = deltas.unwrap_or_else(default_delta_grid);
    let nh = normal_hedge_min(t, n, eps, &deltas)?;
    println!("T = {t}, N = {n}, eps = {eps}");
    println!("{:<36} {:>14.2}", "quantile, anytime", quantile_bound(t, eps)?);
    println!("{:<36} {:>14.2}", "best expert, known horizon", best_expert_bound(t, n)?);
    let rows = [
        ("best expert, uniform in T", ReferenceBound::UniformBestExpert { t, n }),
        ("weighted average (c = 1)", ReferenceBound::WeightedAverage { t, eps, c: 1.0 }),
        ("mixture, explicit part", ReferenceBound::MixtureExplicit { t, eps }),
        ("nominal-N shape", ReferenceBound::NominalShape { t, eps, n }),
    ];
    println!("{:<36} {:>14.2}", "NormalHedge, best delta", nh);
    for (label, b) in rows {
        match b.value() {
            Ok(v) if b.assertable() => println!("{label:<36} {v:>14.2}"),
            Ok(v) => println!("{label:<36} {v:>14.2}  (reference only)"),
            Err(e) => println!("{label:<36} {:>14}  ({e})", "n/a"),
        }
    }
    if n >= 2 {
        match crossover(n, eps, &deltas) {
            Ok(ts) => println!("{:<36} {:>14}", "crossover T*", ts),
            Err(e) => println!("{:<36} {:>14}  ({e})", "crossover T*", "n/a"),
        }
    }
    Ok(0)
}

fn verify_levin(
    omega_size: usize,
    resolution: usize,
    count: usize,
    seed: u64,
    tolerance: f64,
) -> anyhow::Result<u8> {
    let mut failures = 0;
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let rel = HoeffdingRelation::random(&mut rng, omega_size)?;
        let c = rel.level();
        let gap = rel.precondition_gap(resolution);
        let status = match levin_search(&rel, resolution, c, tolerance) {
            Ok(r) => format!(
                "PASS  C = {c:.6}  max g = {:.6}  slack {:+.3e}{}",
                r.max_value,
                r.slack,
                if r.combined { "  (adjacent pair)" } else { "" }
            ),
            Err(Error::LevinNotFound { best_slack }) => {
                failures += 1;
                format!("FAIL  C = {c:.6}  best slack {best_slack:+.3e}")
            }
            Err(e) => return Err(e.into()),
        };
        println!("instance {i:>3}  precondition gap {gap:+.3e}  {status}");
    }
    println!("{} of {count} instances cleared the level", count - failures);
    Ok(if failures == 0 { 0 } else { EXIT_VIOLATION })
}

fn learner_for(name: &str, n: usize, t: usize) -> anyhow::Result<LearnerVariant> {
    Ok(match name {
        "dfa_fixed" => LearnerVariant::DfaFixed { eta: None, horizon: Some(t) },
        "dfa_mixture" => LearnerVariant::DfaMixture { eta_min: 1e-4, k: 32 },
        "fake_dfa" => LearnerVariant::FakeDfa { i_max: None },
        "hedge" => LearnerVariant::Hedge {
            eta: (8.0 * (n.max(2) as f64).ln() / t.max(1) as f64).sqrt(),
        },
        "hedge_anytime" => LearnerVariant::HedgeAnytime,
        other => bail!("unknown learner {other:?}"),
    })
}

fn env_for(name: &str, n: usize) -> anyhow::Result<EnvironmentSpec> {
    Ok(match name {
        "iid_uniform" => EnvironmentSpec::IidUniform,
        "alternating" => EnvironmentSpec::Alternating,
        "many_good_experts" => EnvironmentSpec::ManyGoodExperts { fraction: 0.25, gap: 0.2 },
        "iid_bernoulli" => EnvironmentSpec::IidBernoulli {
            q: (0..n).map(|i| 0.3 + 0.4 * i as f64 / n.max(2).saturating_sub(1) as f64).collect(),
        },
        "adaptive_worst_case" => EnvironmentSpec::AdaptiveWorstCase,
        other => bail!("unknown environment {other:?}"),
    })
}

fn compare(
    learners: &[String],
    env: &str,
    n: usize,
    t: usize,
    seed: u64,
    runs: u64,
    eps: Option<f64>,
) -> anyhow::Result<u8> {
    if learners.is_empty() {
        bail!("--learners needs at least one name");
    }
    let eps = eps.unwrap_or(1.0 / n.max(1) as f64);
    let environment = env_for(env, n)?;
    let mut jobs = Vec::new();
    for name in learners {
        let cfg = RunConfig {
            name: Some(name.clone()),
            game: GameSpec::dtol(n)?,
            learner: LearnerConfig::new(learner_for(name, n, t)?),
            weights: None,
            experts: None,
            environment: environment.clone(),
            t,
            seed,
            eps_grid: Some(vec![eps]),
            output: None,
        };
        cfg.validate().with_context(|| format!("learner {name}"))?;
        for r in 0..runs {
            jobs.push((cfg.clone(), RunOptions { verify: false, seed: Some(seed), run_index: r }));
        }
    }
    let traces = harness::sweep(&jobs)
        .into_iter()
        .collect::<defcast::Result<Vec<_>>>()?;
    println!(
        "{:<14} {:>12} {:>12} {:>12}  checks",
        "learner", "mean R_eps", "max R_eps", "final loss"
    );
    for (name, chunk) in learners.iter().zip(traces.chunks(runs as usize)) {
        let finals: Vec<f64> = chunk
            .iter()
            .map(|tr| tr.rows.last().map_or(0.0, |r| r.quantiles[0].r_eps))
            .collect();
        let loss: f64 = chunk
            .iter()
            .map(|tr| tr.rows.last().map_or(0.0, |r| r.cum_loss))
            .sum::<f64>()
            / runs as f64;
        let mean = finals.iter().sum::<f64>() / runs as f64;
        let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let status = if chunk.iter().any(|t| t.infeasible()) {
            "INFEASIBLE"
        } else if chunk.iter().all(|t| t.all_pass()) {
            "PASS"
        } else {
            "FAIL"
        };
        println!("{name:<14} {mean:>12.4} {max:>12.4} {loss:>12.4}  {status}");
    }
    println!("eps = {eps}, env = {env}, N = {n}, T = {t}, runs = {runs}");
    Ok(exit_code(&traces.iter().collect::<Vec<_>>()))
}
