//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.
//!
//! Quantities are recomputed from the traces with local oracles rather than
//! read back from the runner's own checks.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use defcast::bounds::{crossover, default_delta_grid, normal_hedge_min, ReferenceBound};
use defcast::game::{ExpertPool, GameSpec};
use defcast::harness::{sweep, EnvironmentSpec, RunConfig, RunOptions, Trace};
use defcast::learners::{LearnerConfig, LearnerVariant};
use defcast::levin::{levin_search, HoeffdingRelation};
use defcast::potential::{
    default_i_max, log_f_with, mixture_grid, EtaNode, PotentialMode, PotentialState,
    TIME_VARYING_C,
};

const TAU: f64 = 1e-9;
const SEEDS: u64 = 20;
const MASTER_SEED: u64 = 2024;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn slack(t: usize) -> f64 {
    (t as f64 * TAU.ln_1p()).exp()
}

/// Smallest level covered by weight `eps` (sorted scan, ties kept together).
fn oracle_quantile(losses: &[f64], weights: &[f64], eps: f64) -> f64 {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap());
    let mut acc = 0.0;
    for (j, &i) in idx.iter().enumerate() {
        acc += weights[i];
        let tie_next = j + 1 < idx.len() && losses[idx[j + 1]] == losses[i];
        if !tie_next && acc >= eps - 1e-12 {
            return losses[i];
        }
    }
    losses[idx[idx.len() - 1]]
}

/// Cumulative expert losses after every row.
fn cumulative_experts(tr: &Trace) -> Vec<Vec<f64>> {
    let mut acc = vec![0.0; tr.meta.num_experts];
    tr.rows
        .iter()
        .map(|r| {
            for (a, l) in acc.iter_mut().zip(&r.expert_losses) {
                *a += l;
            }
            acc.clone()
        })
        .collect()
}

fn environments(n: usize) -> Vec<(EnvironmentSpec, bool)> {
    let q = (0..n)
        .map(|i| 0.3 + 0.4 * i as f64 / (n - 1).max(1) as f64)
        .collect();
    vec![
        (EnvironmentSpec::IidUniform, true),
        (EnvironmentSpec::IidBernoulli { q }, true),
        (EnvironmentSpec::Alternating, false),
        (
            EnvironmentSpec::Duplicated {
                base: Box::new(EnvironmentSpec::IidUniform),
                copies: 2,
            },
            true,
        ),
        (EnvironmentSpec::ManyGoodExperts { fraction: 0.25, gap: 0.2 }, true),
        (EnvironmentSpec::AdaptiveWorstCase, false),
    ]
}

fn config(variant: LearnerVariant, env: EnvironmentSpec, n: usize, t: usize) -> RunConfig {
    RunConfig {
        name: None,
        game: GameSpec::dtol(n).unwrap(),
        learner: LearnerConfig::new(variant),
        weights: None,
        experts: None,
        environment: env,
        t,
        seed: MASTER_SEED,
        eps_grid: None,
        output: None,
    }
}

/// Jobs over the environment suite: 20 streams for random environments, one
/// for deterministic ones.
fn suite_jobs(variant: &LearnerVariant, ns: &[usize], t: usize, verify: bool) -> Vec<(RunConfig, RunOptions)> {
    let mut jobs = Vec::new();
    for &n in ns {
        for (env, random) in environments(n) {
            let runs = if random { SEEDS } else { 1 };
            for r in 0..runs {
                jobs.push((
                    config(variant.clone(), env.clone(), n, t),
                    RunOptions { verify, seed: None, run_index: r },
                ));
            }
        }
    }
    jobs
}

struct Timed {
    trace: Trace,
    elapsed: Duration,
}

fn run_jobs(jobs: &[(RunConfig, RunOptions)]) -> Vec<Timed> {
    defcast::par::map(jobs, |(cfg, opts)| {
        let start = Instant::now();
        let trace = defcast::harness::run(cfg, opts).expect("valid configuration");
        Timed {
            trace,
            elapsed: start.elapsed(),
        }
    })
}

fn decrease_violations(tr: &Trace) -> (usize, f64) {
    let mut prev = tr
        .rows
        .first()
        .map_or(0.0, |r| r.c_t.ln());
    let mut bad = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in &tr.rows {
        let excess = r.log_f - (prev + TAU.ln_1p());
        worst = worst.max(excess);
        if !(excess <= 0.0) {
            bad += 1;
        }
        prev = r.log_f;
    }
    (bad, worst)
}

fn criterion_1(fixed: &[Timed], mixture: &[Timed]) -> Line {
    let mut bad = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut steps = 0;
    for t in fixed.iter().chain(mixture) {
        let (b, w) = decrease_violations(&t.trace);
        bad += b;
        worst = worst.max(w);
        steps += t.trace.rows.len();
    }
    let slowest = mixture
        .iter()
        .filter(|t| t.trace.meta.num_experts == 8)
        .map(|t| t.elapsed)
        .max()
        .unwrap_or_default();
    Line {
        id: 1,
        name: "supermartingale decrease (fixed, mixture)",
        pass: bad == 0 && slowest < Duration::from_secs(60),
        detail: format!(
            "{} runs, {steps} steps, {bad} violations, worst log excess {worst:.3e}, slowest N=8 K=32 run {:.2}s",
            fixed.len() + mixture.len(),
            slowest.as_secs_f64()
        ),
    }
}

fn criterion_2() -> (Line, Vec<Trace>) {
    let t = 200;
    let variant = LearnerVariant::DfaFixed { eta: None, horizon: Some(t) };
    let runs = run_jobs(&suite_jobs(&variant, &[2, 4, 8], t, true));
    let mut bad = 0;
    let mut worst_ratio: f64 = 0.0;
    for r in &runs {
        let tr = &r.trace;
        let n = tr.meta.num_experts;
        let cum = cumulative_experts(tr);
        let best = cum.last().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
        let regret = tr.rows.last().unwrap().cum_loss - best;
        let bound = (2.0 * t as f64 * (n as f64).ln()).sqrt() * slack(t);
        worst_ratio = worst_ratio.max(regret / bound);
        if tr.rows.len() != t || !(regret <= bound) {
            bad += 1;
        }
    }
    let line = Line {
        id: 2,
        name: "best-expert regret at the horizon (T=200)",
        pass: bad == 0,
        detail: format!("{} runs, {bad} violations, max regret/bound {worst_ratio:.4}", runs.len()),
    };
    (line, runs.into_iter().map(|r| r.trace).collect())
}

fn criterion_3(mixture: &[Timed], grid: &[EtaNode]) -> Line {
    let mut bad = 0;
    let mut checks = 0;
    let mut worst = f64::NEG_INFINITY;
    for r in mixture {
        let tr = &r.trace;
        let n = tr.meta.num_experts;
        let w = vec![1.0 / n as f64; n];
        for (row, cum) in tr.rows.iter().zip(cumulative_experts(tr)) {
            for &eps in &tr.meta.eps_grid {
                let regret = row.cum_loss - oracle_quantile(&cum, &w, eps);
                let tf = row.t as f64;
                let value: f64 = grid
                    .iter()
                    .map(|nd| nd.weight * (regret * nd.eta - tf * nd.eta * nd.eta / 2.0).exp())
                    .sum();
                let limit = slack(row.t) / eps;
                checks += 1;
                worst = worst.max(value / limit);
                if !(value <= limit) {
                    bad += 1;
                }
            }
        }
    }
    Line {
        id: 3,
        name: "mixture certificate, every eps and prefix",
        pass: bad == 0 && checks > 0,
        detail: format!("{checks} checks, {bad} violations, max value/(1/eps) {worst:.4}"),
    }
}

fn criterion_4(fake: &[Timed]) -> Line {
    let mut cap_bad = 0;
    let mut step_bad = 0;
    let mut bound_bad = 0;
    let mut max_cap = f64::NEG_INFINITY;
    let mut worst_ratio: f64 = 0.0;
    for r in fake {
        let tr = &r.trace;
        let n = tr.meta.num_experts;
        let w = vec![1.0 / n as f64; n];
        for (i, row) in tr.rows.iter().enumerate() {
            max_cap = max_cap.max(row.c_t);
            if !(row.c_t <= 1.0) {
                cap_bad += 1;
            }
            if let Some(next) = tr.rows.get(i + 1) {
                let tf = row.t as f64;
                let rhs = (tf / (tf + 1.0)).sqrt() * row.log_f + TAU.ln_1p();
                if !(next.c_t.ln() <= rhs) {
                    step_bad += 1;
                }
            }
        }
        // the step into C_{T+1} and C_{T+1} ≤ 1 after the last row
        for c in &tr.checks {
            if (c.name == "capacity_step" || c.name == "capacity_le_one") && !c.pass {
                step_bad += c.violations;
            }
        }
        for (row, cum) in tr.rows.iter().zip(cumulative_experts(tr)) {
            let tf = row.t as f64;
            for &eps in &tr.meta.eps_grid {
                let regret = row.cum_loss - oracle_quantile(&cum, &w, eps);
                let bound = (2.0 * (tf * (1.0 / eps).ln()).sqrt() + 7.0 * tf.sqrt()) * slack(row.t);
                worst_ratio = worst_ratio.max(regret / bound);
                if !(regret <= bound) {
                    bound_bad += 1;
                }
            }
        }
    }
    Line {
        id: 4,
        name: "time-varying capacity and quantile bound",
        pass: cap_bad + step_bad + bound_bad == 0,
        detail: format!(
            "{} runs; C_t>1: {cap_bad} (max C_t {max_cap:.6}), step: {step_bad}, bound: {bound_bad} (max regret/bound {worst_ratio:.4})",
            fake.len()
        ),
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> PotentialState {
    let mode = match rng.gen_range(0..3) {
        0 => PotentialMode::FixedEta { eta: rng.gen_range(0.1..1.5) },
        1 => PotentialMode::Mixture { grid: mixture_grid(1e-3, 8).unwrap() },
        _ => PotentialMode::TimeVarying { i_max: rng.gen_range(1..=4) },
    };
    let mut s = PotentialState::new(mode, &ExpertPool::uniform(n)).unwrap();
    for _ in 0..rng.gen_range(0..30) {
        let omega: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let mix: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = mix.iter().sum();
        let ll = mix.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>() / total;
        s.update(ll, &omega).unwrap();
    }
    s
}

fn criterion_5() -> Line {
    let samples = 100_000usize;
    let pairs: Vec<u64> = (0..100).collect();
    let results = defcast::par::map(&pairs, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
        rng.set_stream(1000 + i);
        let n = rng.gen_range(2..=6);
        let s = random_state(&mut rng, n);
        let coef = s.coefficients();
        let level = coef.log_total();
        // π: independent coordinates, each a Bernoulli(q) or a uniform band around q
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
        let best = (0..n).fold(0, |b, j| if q[j] < q[b] { j } else { b });
        let (mut sum, mut sq) = (0.0, 0.0);
        let mut omega = vec![0.0; n];
        for _ in 0..samples {
            for (o, &qj) in omega.iter_mut().zip(&q) {
                *o = if rng.gen_bool(0.5) {
                    if rng.gen_bool(qj) { 1.0 } else { 0.0 }
                } else {
                    let r = qj.min(1.0 - qj);
                    rng.gen_range(qj - r..=qj + r)
                };
            }
            let v = (log_f_with(&coef, omega[best], &omega) - level).exp();
            sum += v;
            sq += v * v;
        }
        let m = samples as f64;
        let mean = sum / m;
        let se = ((sq / m - mean * mean).max(0.0) / m).sqrt();
        (mean, se)
    });
    let ok = results.iter().filter(|(m, se)| *m <= 1.0 + 3.0 * se).count();
    let max_mean = results.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    Line {
        id: 5,
        name: "Hoeffding expectation, Monte Carlo",
        pass: ok >= 99,
        detail: format!("{ok}/100 pairs with mean <= 1 + 3 SE (largest mean {max_mean:.5})"),
    }
}

fn criterion_6() -> Line {
    let start = Instant::now();
    let mut ok = 0;
    let mut pre_bad = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
        rng.set_stream(5000 + i);
        let rel = HoeffdingRelation::random(&mut rng, 2).unwrap();
        if rel.precondition_gap(1000) > 1e-12 {
            pre_bad += 1;
            continue;
        }
        let c = rel.level();
        if let Ok(r) = levin_search(&rel, 1000, c, 1e-2) {
            worst = worst.max(r.slack);
            if r.max_value <= c + 1e-2 {
                ok += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Line {
        id: 6,
        name: "grid search for a level-clearing distribution",
        pass: ok == 50 && pre_bad == 0 && elapsed < Duration::from_secs(30),
        detail: format!(
            "{ok}/50 found, {pre_bad} precondition failures, worst slack {worst:+.3e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_7() -> Line {
    let mut errs = Vec::new();
    for l in [10.0f64, 20.0] {
        for k in [1usize, 16, 64, 1000] {
            let grid = mixture_grid((-l).exp(), k).unwrap();
            let mass: f64 = grid.iter().map(|nd| nd.weight).sum();
            errs.push((mass - (1.0 - 1.0 / l)).abs());
        }
    }
    let mass_err = errs.iter().copied().fold(0.0, f64::max);

    // Σ_{i ≤ M} 1/i², smallest terms first, plus the Euler–Maclaurin tail
    let m = 1_000_000u64;
    let partial: f64 = (1..=m).rev().map(|i| 1.0 / (i as f64 * i as f64)).sum();
    let mf = m as f64;
    let tail = 1.0 / mf - 1.0 / (2.0 * mf * mf) + 1.0 / (6.0 * mf.powi(3));
    let total_err = (TIME_VARYING_C * (partial + tail) - 1.0).abs();
    let truncated = 1.0 - TIME_VARYING_C * partial;
    Line {
        id: 7,
        name: "prior normalisation",
        pass: mass_err <= 1e-12 && total_err <= 1e-12,
        detail: format!(
            "grid mass error {mass_err:.2e}; |c(Σ_{{i<=1e6}} + tail) - 1| = {total_err:.2e} (mass beyond i=1e6: {truncated:.3e})"
        ),
    }
}

fn criterion_8() -> Line {
    let t = 300;
    let mut max_r = 0.0f64;
    let mut max_gamma = 0.0f64;
    let mut baseline_worse = true;
    let mut comparisons = 0;
    for base_n in [2usize, 3] {
        let i_max = default_i_max(base_n);
        let eps_grid = vec![1.0 / base_n as f64, 0.5, 1.0];
        for base_env in [
            EnvironmentSpec::IidUniform,
            EnvironmentSpec::ManyGoodExperts { fraction: 0.5, gap: 0.3 },
        ] {
            for k in [2usize, 4] {
                let mut jobs = Vec::new();
                for r in 0..5 {
                    let opts = RunOptions { verify: false, seed: None, run_index: r };
                    let mut base = config(LearnerVariant::FakeDfa { i_max: Some(i_max) }, base_env.clone(), base_n, t);
                    base.eps_grid = Some(eps_grid.clone());
                    let mut dup = base.clone();
                    dup.game = GameSpec::dtol(base_n * k).unwrap();
                    dup.environment = EnvironmentSpec::Duplicated {
                        base: Box::new(base_env.clone()),
                        copies: k,
                    };
                    jobs.push((base, opts));
                    jobs.push((dup, opts));
                }
                let traces: Vec<Trace> = sweep(&jobs).into_iter().map(Result::unwrap).collect();
                for pair in traces.chunks(2) {
                    let (b, d) = (&pair[0], &pair[1]);
                    for (rb, rd) in b.rows.iter().zip(&d.rows) {
                        for (qb, qd) in rb.quantiles.iter().zip(&rd.quantiles) {
                            max_r = max_r.max((qb.r_eps - qd.r_eps).abs());
                            comparisons += 1;
                        }
                        for j in 0..base_n {
                            let agg: f64 = (0..k).map(|c| rd.gamma[c * base_n + j]).sum();
                            max_gamma = max_gamma.max((agg - rb.gamma[j]).abs());
                        }
                    }
                    let nominal = |n| ReferenceBound::UniformBestExpert { t: t as f64, n }.value().unwrap();
                    baseline_worse &= nominal(base_n * k) > nominal(base_n);
                }
            }
        }
    }
    Line {
        id: 8,
        name: "duplication invariance of quantile regret",
        pass: max_r <= 1e-9 && baseline_worse && comparisons > 0,
        detail: format!(
            "{comparisons} comparisons, max |dR| {max_r:.2e}, max aggregated decision gap {max_gamma:.2e}, nominal-N bound grows: {baseline_worse}"
        ),
    }
}

fn criterion_9() -> Line {
    let d = default_delta_grid();
    let t = 1e5;
    let q = 2.0 * (t * (1.0f64 / 0.05).ln()).sqrt() + 7.0 * t.sqrt();
    let nh = normal_hedge_min(t, 100, 0.05, &d).unwrap();
    let sign_ok = q < nh;
    let mut found = true;
    let mut parts = Vec::new();
    for n in [10usize, 100, 1000] {
        let reference = 1e6 * (n as f64).ln().powi(4);
        match crossover(n, 0.01, &d) {
            Ok(ts) => parts.push(format!(
                "N={n}: T*={ts} vs 1e6 ln^4 N={reference:.3e} (log10 ratio {:+.2})",
                (ts as f64 / reference).log10()
            )),
            Err(e) => {
                found = false;
                parts.push(format!("N={n}: {e}"));
            }
        }
    }
    Line {
        id: 9,
        name: "bound crossover against NormalHedge",
        pass: sign_ok && found,
        detail: format!(
            "at N=100 eps=0.05 T=1e5: {q:.2} < {nh:.2}; {}",
            parts.join("; ")
        ),
    }
}

fn criterion_10(all: &[&Trace]) -> Line {
    let infeasible = all.iter().filter(|t| t.infeasible()).count();
    let inexact: usize = all.iter().map(|t| t.meta.inexact_certificates).sum();
    let gap = all
        .iter()
        .filter_map(|t| t.meta.max_reverify_gap)
        .fold(0.0, f64::max);
    let verified = all.iter().filter(|t| t.meta.max_reverify_gap.is_some()).count();
    Line {
        id: 10,
        name: "solver feasibility and certificate re-verification",
        pass: infeasible == 0 && inexact == 0 && gap <= 1e-12 && verified > 0,
        detail: format!(
            "{} runs, {infeasible} infeasible, {inexact} inexact, {verified} re-verified, max gap {gap:.2e}",
            all.len()
        ),
    }
}

fn main() {
    let start = Instant::now();
    let t = 1000;
    let grid = mixture_grid(1e-4, 32).unwrap();
    let ns = [2usize, 4, 8];
    let fixed = run_jobs(&suite_jobs(&LearnerVariant::DfaFixed { eta: None, horizon: Some(t) }, &ns, t, true));
    let mixture = run_jobs(&suite_jobs(&LearnerVariant::DfaMixture { eta_min: 1e-4, k: 32 }, &ns, t, true));
    let fake = run_jobs(&suite_jobs(&LearnerVariant::FakeDfa { i_max: None }, &ns, t, true));

    let mut lines = vec![criterion_1(&fixed, &mixture)];
    let (l2, short) = criterion_2();
    lines.push(l2);
    lines.push(criterion_3(&mixture, &grid));
    lines.push(criterion_4(&fake));
    lines.push(criterion_5());
    lines.push(criterion_6());
    lines.push(criterion_7());
    lines.push(criterion_8());
    lines.push(criterion_9());
    let all: Vec<&Trace> = fixed
        .iter()
        .chain(&mixture)
        .chain(&fake)
        .map(|r| &r.trace)
        .chain(short.iter())
        .collect();
    lines.push(criterion_10(&all));

    for l in &lines {
        println!(
            "[{}] criterion {:>2}: {} -- {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.detail
        );
    }
    let failed = lines.iter().filter(|l| !l.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        lines.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
