//! Online learners: the defensive-forecasting variants and exponential-weights
//! baselines behind a common receive-advice / decide / observe contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Decision, ExpertPool, GameSpec, Outcome};
use crate::numerics::softmax_into;
use crate::potential::{default_i_max, mixture_grid, EtaNode, PotentialMode, PotentialState};
use crate::solver::{self, Certificate, SolveOptions, StepContext};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LearnerVariant {
    /// Single-rate potential; give either `eta` or the `horizon` it is tuned for.
    DfaFixed {
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        horizon: Option<usize>,
    },
    /// Discretised η-mixture potential.
    DfaMixture {
        #[serde(default = "default_eta_min")]
        eta_min: f64,
        #[serde(default = "default_cells")]
        k: usize,
    },
    /// Time-varying potential with capacity ceiling.
    FakeDfa {
        #[serde(default)]
        i_max: Option<usize>,
    },
    Hedge {
        eta: f64,
    },
    /// Exponential weights with `η_t = √(8 ln N / t)`.
    HedgeAnytime,
}

fn default_eta_min() -> f64 {
    1e-4
}

fn default_cells() -> usize {
    64
}

impl LearnerVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerVariant::DfaFixed { .. } => "dfa_fixed",
            LearnerVariant::DfaMixture { .. } => "dfa_mixture",
            LearnerVariant::FakeDfa { .. } => "fake_dfa",
            LearnerVariant::Hedge { .. } => "hedge",
            LearnerVariant::HedgeAnytime => "hedge_anytime",
        }
    }

    pub fn is_dfa(&self) -> bool {
        matches!(
            self,
            LearnerVariant::DfaFixed { .. }
                | LearnerVariant::DfaMixture { .. }
                | LearnerVariant::FakeDfa { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    #[serde(flatten)]
    pub variant: LearnerVariant,
    #[serde(default)]
    pub solver: SolveOptions,
}

impl LearnerConfig {
    pub fn new(variant: LearnerVariant) -> Self {
        LearnerConfig {
            variant,
            solver: SolveOptions::default(),
        }
    }
}

/// Learning rate tuned for a known horizon: `√(2 ln N / T)`.
pub fn horizon_eta(num_experts: usize, horizon: usize) -> f64 {
    (2.0 * (num_experts as f64).ln() / horizon as f64).sqrt()
}

/// What a learner remembers about its latest completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub gamma: Decision,
    pub outcome: Outcome,
    /// `log f_t(γ_t, ω_t)`.
    pub log_f: Option<f64>,
    /// Log of the ceiling the decision was certified against.
    pub ceiling_log: Option<f64>,
    pub exact: Option<bool>,
    pub solver_iterations: usize,
}

pub trait Learner: Send {
    fn name(&self) -> &'static str;

    /// Choose the round's decision given this round's expert predictions
    /// (ignored in DTOL, where expert `n` always plays action `n`).
    fn decide(&mut self, expert_predictions: &[Decision]) -> Result<Decision>;

    /// Learn the round's outcome with the learner's and experts' losses.
    fn observe(&mut self, learner_loss: f64, expert_losses: &[f64], outcome: &Outcome)
        -> Result<()>;

    fn last_record(&self) -> Option<&StepRecord>;

    /// The outcome the learner itself considers worst for its pending decision.
    fn adversarial_outcome(&self) -> Option<&Outcome> {
        None
    }

    /// Certificate backing the pending decision.
    fn certificate(&self) -> Option<&Certificate> {
        None
    }

    fn potential(&self) -> Option<&PotentialState> {
        None
    }

    /// Rate grid of an η-mixture learner.
    fn mixture_grid(&self) -> Option<&[EtaNode]> {
        None
    }
}

/// Build a learner for `game` with prior weights `pool`.
pub fn build(
    config: &LearnerConfig,
    game: &GameSpec,
    pool: &ExpertPool,
) -> Result<Box<dyn Learner>> {
    config.solver.validate()?;
    if let GameSpec::Dtol { n } = game {
        if *n != pool.len() {
            return Err(Error::DimensionMismatch {
                expected: *n,
                got: pool.len(),
            });
        }
    }
    let n = pool.len();
    let mode = match &config.variant {
        LearnerVariant::DfaFixed { eta, horizon } => {
            let eta = match (eta, horizon) {
                (Some(e), _) => *e,
                (None, Some(h)) if *h >= 1 => horizon_eta(n, *h),
                _ => {
                    return Err(Error::Config(
                        "dfa_fixed needs a known horizon or an explicit eta".into(),
                    ))
                }
            };
            Some(PotentialMode::FixedEta { eta })
        }
        LearnerVariant::DfaMixture { eta_min, k } => Some(PotentialMode::Mixture {
            grid: mixture_grid(*eta_min, *k)?,
        }),
        LearnerVariant::FakeDfa { i_max } => Some(PotentialMode::TimeVarying {
            i_max: i_max.unwrap_or_else(|| default_i_max(pool.effective_count())),
        }),
        LearnerVariant::Hedge { eta } => {
            if !(*eta > 0.0) {
                return Err(Error::InvalidParameter("hedge needs eta > 0".into()));
            }
            None
        }
        LearnerVariant::HedgeAnytime => None,
    };
    Ok(match mode {
        Some(mode) => Box::new(DfaLearner {
            name: config.variant.name(),
            game: game.clone(),
            potential: PotentialState::new(mode, pool)?,
            opts: config.solver,
            pending: None,
            record: None,
            t: 0,
        }),
        None => Box::new(HedgeLearner {
            name: config.variant.name(),
            game: game.clone(),
            fixed_eta: match config.variant {
                LearnerVariant::Hedge { eta } => Some(eta),
                _ => None,
            },
            log_prior: pool.weights().iter().map(|p| p.ln()).collect(),
            losses: vec![0.0; n],
            pending: None,
            record: None,
            t: 0,
        }),
    })
}

/// Defensive forecasting with any of the three potentials.
pub struct DfaLearner {
    name: &'static str,
    game: GameSpec,
    potential: PotentialState,
    opts: SolveOptions,
    pending: Option<Certificate>,
    record: Option<StepRecord>,
    t: usize,
}

impl DfaLearner {
    pub fn new(game: GameSpec, mode: PotentialMode, pool: &ExpertPool, opts: SolveOptions) -> Result<Self> {
        let name = match mode {
            PotentialMode::FixedEta { .. } => "dfa_fixed",
            PotentialMode::Mixture { .. } => "dfa_mixture",
            PotentialMode::TimeVarying { .. } => "fake_dfa",
        };
        Ok(DfaLearner {
            name,
            game,
            potential: PotentialState::new(mode, pool)?,
            opts,
            pending: None,
            record: None,
            t: 0,
        })
    }
}

impl Learner for DfaLearner {
    fn name(&self) -> &'static str {
        self.name
    }

    fn decide(&mut self, expert_predictions: &[Decision]) -> Result<Decision> {
        let ctx = StepContext::for_game(&self.game, expert_predictions);
        let opts = SolveOptions {
            seed: self
                .opts
                .seed
                .wrapping_add((self.t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.opts
        };
        let cert = solver::solve(&self.potential, ctx, self.potential.ceiling_log(), &opts)?;
        let gamma = cert.gamma.clone();
        self.pending = Some(cert);
        Ok(gamma)
    }

    fn observe(
        &mut self,
        learner_loss: f64,
        expert_losses: &[f64],
        outcome: &Outcome,
    ) -> Result<()> {
        let cert = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidParameter("observe called before decide".into()))?;
        self.potential.update(learner_loss, expert_losses)?;
        self.t += 1;
        self.record = Some(StepRecord {
            t: self.t,
            gamma: cert.gamma,
            outcome: outcome.clone(),
            log_f: Some(self.potential.last_log_f()),
            ceiling_log: Some(cert.ceiling_log),
            exact: Some(cert.exact),
            solver_iterations: cert.iterations,
        });
        Ok(())
    }

    fn last_record(&self) -> Option<&StepRecord> {
        self.record.as_ref()
    }

    fn adversarial_outcome(&self) -> Option<&Outcome> {
        self.pending.as_ref().map(|c| &c.worst_outcome)
    }

    fn certificate(&self) -> Option<&Certificate> {
        self.pending.as_ref()
    }

    fn potential(&self) -> Option<&PotentialState> {
        Some(&self.potential)
    }

    fn mixture_grid(&self) -> Option<&[EtaNode]> {
        match self.potential.mode() {
            PotentialMode::Mixture { grid } => Some(grid),
            _ => None,
        }
    }
}

/// Exponential weights `γ_n ∝ p_n exp(−η L^n)`.
pub struct HedgeLearner {
    name: &'static str,
    game: GameSpec,
    fixed_eta: Option<f64>,
    log_prior: Vec<f64>,
    losses: Vec<f64>,
    pending: Option<Decision>,
    record: Option<StepRecord>,
    t: usize,
}

/// Exponential-weights distribution over experts.
pub fn hedge_weights(log_prior: &[f64], losses: &[f64], eta: f64) -> Vec<f64> {
    let logits: Vec<f64> = log_prior
        .iter()
        .zip(losses)
        .map(|(lp, l)| lp - eta * l)
        .collect();
    let mut w = Vec::new();
    softmax_into(&logits, &mut w);
    w
}

/// Map expert weights to a decision: itself in DTOL, the matching generator
/// mixture in a finite game.
pub fn combine_experts(game: &GameSpec, weights: Vec<f64>, expert_predictions: &[Decision]) -> Result<Decision> {
    match game {
        GameSpec::Dtol { .. } => Decision::normalized(weights),
        GameSpec::FiniteConvex(g) => {
            if expert_predictions.len() != weights.len() {
                return Err(Error::DimensionMismatch {
                    expected: weights.len(),
                    got: expert_predictions.len(),
                });
            }
            let mut mix = vec![0.0; g.num_generators()];
            for (w, e) in weights.iter().zip(expert_predictions) {
                for (m, x) in mix.iter_mut().zip(e.weights()) {
                    *m += w * x;
                }
            }
            Decision::normalized(mix)
        }
    }
}

impl HedgeLearner {
    fn eta(&self) -> f64 {
        self.fixed_eta.unwrap_or_else(|| {
            let n = self.losses.len().max(2) as f64;
            (8.0 * n.ln() / (self.t + 1) as f64).sqrt()
        })
    }
}

impl Learner for HedgeLearner {
    fn name(&self) -> &'static str {
        self.name
    }

    fn decide(&mut self, expert_predictions: &[Decision]) -> Result<Decision> {
        let w = hedge_weights(&self.log_prior, &self.losses, self.eta());
        let d = combine_experts(&self.game, w, expert_predictions)?;
        self.pending = Some(d.clone());
        Ok(d)
    }

    fn observe(
        &mut self,
        _learner_loss: f64,
        expert_losses: &[f64],
        outcome: &Outcome,
    ) -> Result<()> {
        let gamma = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidParameter("observe called before decide".into()))?;
        for (l, x) in self.losses.iter_mut().zip(expert_losses) {
            *l += x;
        }
        self.t += 1;
        self.record = Some(StepRecord {
            t: self.t,
            gamma,
            outcome: outcome.clone(),
            log_f: None,
            ceiling_log: None,
            exact: None,
            solver_iterations: 0,
        });
        Ok(())
    }

    fn last_record(&self) -> Option<&StepRecord> {
        self.record.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::reverify;

    #[test]
    fn hedge_examples() {
        let lp = [0.5f64.ln(), 0.5f64.ln()];
        let w = hedge_weights(&lp, &[0.0, 2f64.ln()], 1.0);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let w = hedge_weights(&lp, &[3.0, 3.0], 0.7);
        assert!(w.iter().all(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn unknown_horizon_is_rejected() {
        let game = GameSpec::dtol(3).unwrap();
        let cfg = LearnerConfig::new(LearnerVariant::DfaFixed {
            eta: None,
            horizon: None,
        });
        assert!(matches!(
            build(&cfg, &game, &ExpertPool::uniform(3)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn identical_experts_first_step_uniform() {
        let game = GameSpec::dtol(4).unwrap();
        let pool = ExpertPool::uniform(4);
        for v in [
            LearnerVariant::DfaFixed {
                eta: None,
                horizon: Some(100),
            },
            LearnerVariant::DfaMixture { eta_min: 1e-4, k: 16 },
            LearnerVariant::FakeDfa { i_max: None },
        ] {
            let mut l = build(&LearnerConfig::new(v), &game, &pool).unwrap();
            let d = l.decide(&[]).unwrap();
            assert!(d.weights().iter().all(|w| (w - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn hedge_decision_satisfies_single_rate_potential() {
        // the exponential-weights point is a valid answer for the fixed-rate potential
        let eta = 0.6;
        for n in 2..=6 {
            let pool = ExpertPool::uniform(n);
            let mut pot = PotentialState::new(PotentialMode::FixedEta { eta }, &pool).unwrap();
            let mut losses = vec![0.0; n];
            for t in 0..5 {
                let omega: Vec<f64> = (0..n).map(|i| ((i * 7 + t * 3) % 5) as f64 / 4.0).collect();
                let w = hedge_weights(&vec![(1.0 / n as f64).ln(); n], &losses, eta);
                let gamma = Decision::normalized(w).unwrap();
                let worst = reverify(&pot, StepContext::Dtol, &gamma).unwrap();
                assert!(worst <= pot.ceiling_log() + 1e-12, "n={n} t={t}");
                let ll: f64 = gamma.weights().iter().zip(&omega).map(|(a, b)| a * b).sum();
                pot.update(ll, &omega).unwrap();
                for (l, x) in losses.iter_mut().zip(&omega) {
                    *l += x;
                }
            }
        }
    }
}
