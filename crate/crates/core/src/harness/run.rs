//! The experiment runner: wires a learner to an environment for `T` rounds,
//! records a per-round trace and checks the learner's guarantee as it goes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{mixture_certificate_value, quantile_bound};
use crate::error::{Error, Result};
use crate::game::{quantile_loss, Decision, GameSpec, Outcome, ProtocolState, TraceRetention};
use crate::harness::config::RunConfig;
use crate::harness::env::Environment;
use crate::learners::{self, horizon_eta, Learner, LearnerVariant};
use crate::par;
use crate::potential::EtaNode;
use crate::solver::{self, StepContext};

/// Largest allowed gap between a certificate and its re-evaluation.
pub const REVERIFY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Re-evaluate every certificate and protocol invariant inline.
    pub verify: bool,
    /// Overrides both the configured seed and the environment variable.
    pub seed: Option<u64>,
    /// Stream index for this run under the master seed.
    pub run_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileCell {
    pub l_eps: f64,
    pub r_eps: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub step_loss: f64,
    pub cum_loss: f64,
    pub quantiles: Vec<QuantileCell>,
    /// `log f_t(γ_t, ω_t)`; NaN for learners without a potential.
    pub log_f: f64,
    /// The ceiling the round's decision was certified against; NaN without a potential.
    pub c_t: f64,
    pub cert_exact: Option<bool>,
    #[serde(skip)]
    pub gamma: Vec<f64>,
    #[serde(skip)]
    pub expert_losses: Vec<f64>,
}

/// Outcome of one asserted bound over a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub evaluations: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen, in the check's own units.
    pub worst_excess: f64,
    pub first_violation: Option<usize>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult {
            name: name.to_string(),
            pass: true,
            evaluations: 0,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
            first_violation: None,
        }
    }

    fn record(&mut self, t: usize, lhs: f64, rhs: f64) {
        self.evaluations += 1;
        let excess = lhs - rhs;
        if excess > self.worst_excess || excess.is_nan() {
            self.worst_excess = excess;
        }
        if !(lhs <= rhs) {
            self.pass = false;
            self.violations += 1;
            self.first_violation.get_or_insert(t);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: Option<String>,
    pub learner: String,
    pub environment: String,
    pub num_experts: usize,
    pub horizon: usize,
    pub seed: u64,
    pub run_index: u64,
    /// SHA-256 of the configuration as JSON.
    pub config_hash: String,
    pub eps_grid: Vec<f64>,
    pub tolerance: f64,
    /// `(1 + τ)^T − 1` over the completed rounds.
    pub slack: f64,
    pub solver_iterations: usize,
    pub inexact_certificates: usize,
    /// Largest re-evaluation gap seen under `verify`.
    pub max_reverify_gap: Option<f64>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: RunMeta,
    pub rows: Vec<TraceRow>,
    pub checks: Vec<CheckResult>,
}

impl Trace {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn infeasible(&self) -> bool {
        self.meta.aborted.is_some()
    }

    pub fn regret_at(&self, row: usize, eps_index: usize) -> f64 {
        self.rows[row].quantiles[eps_index].r_eps
    }
}

pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serialises");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Checks the run maintains, depending on the learner.
struct Checks {
    decrease: Option<CheckResult>,
    best_expert: Option<(usize, f64, CheckResult)>,
    mixture: Option<(Vec<EtaNode>, CheckResult)>,
    capacity: Option<(CheckResult, CheckResult)>,
    quantile: Option<CheckResult>,
    reverify: Option<CheckResult>,
}

impl Checks {
    fn for_learner(cfg: &RunConfig, learner: &dyn Learner, n: usize, verify: bool) -> Self {
        let mut c = Checks {
            decrease: None,
            best_expert: None,
            mixture: None,
            capacity: None,
            quantile: None,
            reverify: (verify && learner.potential().is_some())
                .then(|| CheckResult::new("certificate_reverify")),
        };
        match cfg.learner.variant {
            LearnerVariant::DfaFixed { eta, horizon } => {
                c.decrease = Some(CheckResult::new("supermartingale_decrease"));
                if let Some(h) = horizon {
                    let eta = eta.unwrap_or_else(|| horizon_eta(n, h));
                    c.best_expert = Some((h, eta, CheckResult::new("best_expert_regret")));
                }
            }
            LearnerVariant::DfaMixture { .. } => {
                c.decrease = Some(CheckResult::new("supermartingale_decrease"));
                let grid = learner.mixture_grid().expect("mixture learner").to_vec();
                c.mixture = Some((grid, CheckResult::new("mixture_certificate")));
            }
            LearnerVariant::FakeDfa { .. } => {
                c.capacity = Some((
                    CheckResult::new("capacity_le_one"),
                    CheckResult::new("capacity_step"),
                ));
                c.quantile = Some(CheckResult::new("quantile_bound"));
            }
            LearnerVariant::Hedge { .. } | LearnerVariant::HedgeAnytime => {}
        }
        c
    }

    fn finish(self) -> Vec<CheckResult> {
        let mut out = Vec::new();
        out.extend(self.decrease);
        out.extend(self.best_expert.map(|b| b.2));
        out.extend(self.mixture.map(|m| m.1));
        if let Some((a, b)) = self.capacity {
            out.push(a);
            out.push(b);
        }
        out.extend(self.quantile);
        out.extend(self.reverify);
        out
    }
}

/// Execute one run.
///
/// Configuration problems are errors. A solver failure ends the run early and
/// is reported in `meta.aborted` together with the rows completed so far.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<Trace> {
    cfg.validate()?;
    let seed = match opts.seed {
        Some(s) => s,
        None => cfg.effective_seed()?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(opts.run_index);

    let pool = cfg.pool()?;
    let n = pool.len();
    let weights = pool.weights().to_vec();
    let eps_grid = cfg.eps_grid()?;
    let experts = cfg.expert_decisions()?;
    let mut learner = learners::build(&cfg.learner, &cfg.game, &pool)?;
    let mut env = Environment::new(cfg.environment.clone(), cfg.game.clone(), n, rng)?;
    let mut state = ProtocolState::with_retention(n, TraceRetention::Ring(0));
    let tau = cfg.learner.solver.tolerance;
    let ln_tau = tau.ln_1p();
    let mut checks = Checks::for_learner(cfg, learner.as_ref(), n, opts.verify);

    let mut meta = RunMeta {
        name: cfg.name.clone(),
        learner: learner.name().to_string(),
        environment: cfg.environment.name().to_string(),
        num_experts: n,
        horizon: cfg.t,
        seed,
        run_index: opts.run_index,
        config_hash: config_hash(cfg),
        eps_grid: eps_grid.clone(),
        tolerance: tau,
        slack: 0.0,
        solver_iterations: 0,
        inexact_certificates: 0,
        max_reverify_gap: None,
        aborted: None,
    };
    let mut rows = Vec::with_capacity(cfg.t);

    for t in 1..=cfg.t {
        let gamma = match learner.decide(&experts) {
            Ok(g) => g,
            Err(e @ Error::Infeasible { .. }) => {
                meta.aborted = Some(format!("round {t}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if opts.verify {
            verify_decision(&gamma, &cfg.game)?;
            if let (Some(cert), Some(pot), Some(chk)) =
                (learner.certificate(), learner.potential(), checks.reverify.as_mut())
            {
                let ctx = StepContext::for_game(&cfg.game, &experts);
                let enumerable = match cfg.game {
                    GameSpec::Dtol { n } => n <= 24,
                    GameSpec::FiniteConvex(_) => true,
                };
                if cert.exact && enumerable {
                    let v = solver::reverify(pot, ctx, &gamma)?;
                    let gap = (v - cert.worst_value_log).abs();
                    meta.max_reverify_gap = Some(meta.max_reverify_gap.unwrap_or(0.0).max(gap));
                    chk.record(t, gap, REVERIFY_TOL);
                }
            }
        }

        let outcome = env.next(t, &gamma, learner.as_ref())?;
        let (step_loss, expert_losses) = losses(&cfg.game, &gamma, &outcome, &experts)?;
        if opts.verify {
            if let Outcome::Losses(w) = &outcome {
                if w.len() != n || w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return Err(Error::LossOutOfRange {
                        value: w.iter().copied().fold(f64::NAN, f64::max),
                        what: "environment outcome",
                    });
                }
            }
        }
        state.advance_with_losses(gamma.clone(), outcome.clone(), step_loss, expert_losses.clone())?;
        learner.observe(step_loss, &expert_losses, &outcome)?;

        let rec = learner.last_record().expect("observe leaves a record");
        let log_f = rec.log_f.unwrap_or(f64::NAN);
        let ceiling_log = rec.ceiling_log.unwrap_or(f64::NAN);
        meta.solver_iterations += rec.solver_iterations;
        if rec.exact == Some(false) {
            meta.inexact_certificates += 1;
        }
        let slack_log = t as f64 * ln_tau;

        let mut quantiles = Vec::with_capacity(eps_grid.len());
        for &eps in &eps_grid {
            let l_eps = quantile_loss(state.expert_losses(), &weights, eps)?;
            let r_eps = state.cum_loss() - l_eps;
            let bound = quantile_bound(t as f64, eps)?;
            quantiles.push(QuantileCell { l_eps, r_eps, bound });
        }

        if let Some(chk) = checks.decrease.as_mut() {
            chk.record(t, log_f, ceiling_log + ln_tau);
        }
        if let Some((h, eta, chk)) = checks.best_expert.as_mut() {
            if t == *h {
                // f_T ≥ p_n exp(η R^n − T η²/2) and f_T ≤ (1+τ)^T
                let tf = t as f64;
                let uniform = weights.iter().all(|&p| (p * n as f64 - 1.0).abs() < 1e-12);
                for (p, l) in weights.iter().zip(state.expert_losses()) {
                    let regret = state.cum_loss() - l;
                    let bound = if uniform {
                        (2.0 * tf * (n as f64).ln()).sqrt() * slack_log.exp()
                    } else {
                        ((1.0 / p).ln() + slack_log) / *eta + tf * *eta / 2.0
                    };
                    chk.record(t, regret, bound);
                }
            }
        }
        if let Some((grid, chk)) = checks.mixture.as_mut() {
            for (cell, &eps) in quantiles.iter().zip(&eps_grid) {
                let v = mixture_certificate_value(grid, t, cell.r_eps);
                chk.record(t, (v * eps).ln(), slack_log);
            }
        }
        if let Some((le_one, step)) = checks.capacity.as_mut() {
            let pot = learner.potential().expect("time-varying learner");
            let next = pot.capacity_log()?;
            le_one.record(t, ceiling_log, 0.0);
            le_one.record(t, next, 0.0);
            let tf = t as f64;
            step.record(t, next, (tf / (tf + 1.0)).sqrt() * log_f + ln_tau);
        }
        if let Some(chk) = checks.quantile.as_mut() {
            for cell in &quantiles {
                chk.record(t, cell.r_eps, cell.bound * slack_log.exp());
            }
        }

        meta.slack = slack_log.exp_m1();
        rows.push(TraceRow {
            t,
            step_loss,
            cum_loss: state.cum_loss(),
            quantiles,
            log_f,
            c_t: ceiling_log.exp(),
            cert_exact: rec.exact,
            gamma: gamma.into_inner(),
            expert_losses,
        });
    }

    Ok(Trace {
        meta,
        rows,
        checks: checks.finish(),
    })
}

fn verify_decision(gamma: &Decision, game: &GameSpec) -> Result<()> {
    let w = gamma.weights();
    let s: f64 = w.iter().sum();
    if w.len() != game.decision_dim() || w.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidDecision(format!("learner emitted {w:?}")));
    }
    Ok(())
}

fn losses(
    game: &GameSpec,
    gamma: &Decision,
    outcome: &Outcome,
    experts: &[Decision],
) -> Result<(f64, Vec<f64>)> {
    let step = game.loss(gamma, outcome)?;
    let el = match (game, outcome) {
        (GameSpec::Dtol { .. }, Outcome::Losses(w)) => w.clone(),
        (GameSpec::FiniteConvex(g), Outcome::Symbol(k)) => experts
            .iter()
            .map(|e| g.mixture_loss(e, *k))
            .collect::<Result<_>>()?,
        _ => return Err(Error::UnknownOutcome(format!("{outcome:?}"))),
    };
    Ok((step, el))
}

/// Run every job, in parallel when the `parallel` feature is on. Results come
/// back in job order and do not depend on scheduling.
pub fn sweep(jobs: &[(RunConfig, RunOptions)]) -> Vec<Result<Trace>> {
    par::map(jobs, |(cfg, opts)| run(cfg, opts))
}

/// [`sweep`] on the calling thread only.
pub fn sweep_sequential(jobs: &[(RunConfig, RunOptions)]) -> Vec<Result<Trace>> {
    par::map_sequential(jobs, |(cfg, opts)| run(cfg, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::env::EnvironmentSpec;
    use crate::learners::LearnerConfig;

    fn cfg(variant: LearnerVariant, env: EnvironmentSpec, n: usize, t: usize) -> RunConfig {
        RunConfig {
            name: None,
            game: GameSpec::dtol(n).unwrap(),
            learner: LearnerConfig::new(variant),
            weights: None,
            experts: None,
            environment: env,
            t,
            seed: 3,
            eps_grid: None,
            output: None,
        }
    }

    #[test]
    fn empty_run() {
        let c = cfg(LearnerVariant::FakeDfa { i_max: None }, EnvironmentSpec::IidUniform, 3, 0);
        let tr = run(&c, &RunOptions::default()).unwrap();
        assert!(tr.rows.is_empty());
        assert!(tr.all_pass());
        assert_eq!(tr.meta.slack, 0.0);
    }

    #[test]
    fn deterministic() {
        let c = cfg(
            LearnerVariant::DfaMixture { eta_min: 1e-3, k: 16 },
            EnvironmentSpec::IidUniform,
            4,
            40,
        );
        let a = run(&c, &RunOptions::default()).unwrap();
        let b = run(&c, &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        let other = run(&c, &RunOptions { run_index: 1, ..Default::default() }).unwrap();
        assert_ne!(a.rows, other.rows);
    }

    #[test]
    fn checks_per_learner() {
        let names = |v: LearnerVariant| -> Vec<String> {
            let c = cfg(v, EnvironmentSpec::AdaptiveWorstCase, 3, 30);
            let tr = run(&c, &RunOptions { verify: true, ..Default::default() }).unwrap();
            assert!(tr.all_pass(), "{:?}", tr.checks);
            tr.checks.into_iter().map(|c| c.name).collect()
        };
        assert_eq!(
            names(LearnerVariant::DfaFixed { eta: None, horizon: Some(30) }),
            ["supermartingale_decrease", "best_expert_regret", "certificate_reverify"]
        );
        assert_eq!(
            names(LearnerVariant::DfaMixture { eta_min: 1e-3, k: 8 }),
            ["supermartingale_decrease", "mixture_certificate", "certificate_reverify"]
        );
        assert_eq!(
            names(LearnerVariant::FakeDfa { i_max: None }),
            ["capacity_le_one", "capacity_step", "quantile_bound", "certificate_reverify"]
        );
        assert!(names(LearnerVariant::HedgeAnytime).is_empty());
    }

    #[test]
    fn sweep_matches_sequential() {
        let jobs: Vec<_> = (0..4)
            .map(|i| {
                (
                    cfg(LearnerVariant::FakeDfa { i_max: None }, EnvironmentSpec::IidUniform, 3, 20),
                    RunOptions { run_index: i, ..Default::default() },
                )
            })
            .collect();
        let a: Vec<_> = sweep(&jobs).into_iter().map(Result::unwrap).collect();
        let b: Vec<_> = sweep_sequential(&jobs).into_iter().map(Result::unwrap).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fabricated_over_regret_fails_the_check() {
        let mut ck = CheckResult::new("x");
        ck.record(1, 1.0, 2.0);
        assert!(ck.pass);
        ck.record(2, 3.0, 2.0);
        ck.record(3, f64::NAN, 2.0);
        assert!(!ck.pass);
        assert_eq!((ck.violations, ck.first_violation), (2, Some(2)));
    }
}
