//! Synthetic outcome generators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Decision, GameSpec, Outcome};
use crate::learners::Learner;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    /// Independent uniform losses (DTOL) or a uniform outcome symbol.
    IidUniform,
    /// Independent 0/1 losses, expert `n` losing with probability `q[n]`.
    IidBernoulli { q: Vec<f64> },
    /// Expert `n` loses on rounds where `t + n` is odd; cycles symbols in a finite game.
    Alternating,
    /// `copies` identical blocks of a non-adaptive base environment.
    Duplicated {
        base: Box<EnvironmentSpec>,
        copies: usize,
    },
    /// The first `⌈fraction·N⌉` experts lose with probability `(1 − gap)/2`,
    /// the rest with `(1 + gap)/2`.
    ManyGoodExperts { fraction: f64, gap: f64 },
    /// The outcome the learner's own certificate names as worst; learners
    /// without one get a loss of 1 on their heaviest action.
    AdaptiveWorstCase,
}

impl EnvironmentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentSpec::IidUniform => "iid_uniform",
            EnvironmentSpec::IidBernoulli { .. } => "iid_bernoulli",
            EnvironmentSpec::Alternating => "alternating",
            EnvironmentSpec::Duplicated { .. } => "duplicated",
            EnvironmentSpec::ManyGoodExperts { .. } => "many_good_experts",
            EnvironmentSpec::AdaptiveWorstCase => "adaptive_worst_case",
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, EnvironmentSpec::AdaptiveWorstCase)
    }

    /// Check the spec against a game with `n` experts.
    pub fn validate(&self, game: &GameSpec, n: usize) -> Result<()> {
        let finite = matches!(game, GameSpec::FiniteConvex(_));
        match self {
            EnvironmentSpec::IidUniform
            | EnvironmentSpec::Alternating
            | EnvironmentSpec::AdaptiveWorstCase => Ok(()),
            _ if finite => Err(Error::Config(format!(
                "environment {} needs a DTOL game",
                self.name()
            ))),
            EnvironmentSpec::IidBernoulli { q } => {
                if q.len() != n {
                    return Err(Error::Config(format!(
                        "iid_bernoulli needs {n} probabilities, got {}",
                        q.len()
                    )));
                }
                if q.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Config("probabilities must lie in [0, 1]".into()));
                }
                Ok(())
            }
            EnvironmentSpec::Duplicated { base, copies } => {
                if *copies == 0 || n % copies != 0 {
                    return Err(Error::Config(format!(
                        "{n} experts cannot be split into {copies} copies"
                    )));
                }
                if base.is_adaptive() {
                    return Err(Error::Config("duplicated base must not be adaptive".into()));
                }
                base.validate(game, n / copies)
            }
            EnvironmentSpec::ManyGoodExperts { fraction, gap } => {
                if !(0.0..=1.0).contains(fraction) || !(0.0..=1.0).contains(gap) {
                    return Err(Error::Config("fraction and gap must lie in [0, 1]".into()));
                }
                Ok(())
            }
        }
    }
}

/// A running environment for `n` experts.
pub struct Environment {
    spec: EnvironmentSpec,
    game: GameSpec,
    n: usize,
    rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec, game: GameSpec, n: usize, rng: ChaCha8Rng) -> Result<Self> {
        spec.validate(&game, n)?;
        Ok(Environment { spec, game, n, rng })
    }

    /// The outcome of round `t` (1-based), after the learner has committed to `gamma`.
    pub fn next(&mut self, t: usize, gamma: &Decision, learner: &dyn Learner) -> Result<Outcome> {
        if let EnvironmentSpec::AdaptiveWorstCase = self.spec {
            if let Some(o) = learner.adversarial_outcome() {
                return Ok(o.clone());
            }
            return Ok(heaviest_action_outcome(&self.game, gamma));
        }
        Ok(match &self.game {
            GameSpec::Dtol { .. } => Outcome::Losses(dtol_losses(&self.spec, self.n, t, &mut self.rng)),
            GameSpec::FiniteConvex(g) => {
                let k = g.num_outcomes();
                Outcome::Symbol(match self.spec {
                    EnvironmentSpec::Alternating => (t - 1) % k,
                    _ => self.rng.gen_range(0..k),
                })
            }
        })
    }
}

fn dtol_losses(spec: &EnvironmentSpec, n: usize, t: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bern = |rng: &mut ChaCha8Rng, p: f64| if rng.gen_bool(p) { 1.0 } else { 0.0 };
    match spec {
        EnvironmentSpec::IidUniform => (0..n).map(|_| rng.gen::<f64>()).collect(),
        EnvironmentSpec::IidBernoulli { q } => q.iter().map(|&p| bern(rng, p)).collect(),
        EnvironmentSpec::Alternating => (0..n).map(|i| ((t + i) % 2) as f64).collect(),
        EnvironmentSpec::Duplicated { base, copies } => {
            let block = dtol_losses(base, n / copies, t, rng);
            block.iter().copied().cycle().take(n).collect()
        }
        EnvironmentSpec::ManyGoodExperts { fraction, gap } => {
            let good = (fraction * n as f64).ceil() as usize;
            (0..n)
                .map(|i| {
                    let p = if i < good { 0.5 - gap / 2.0 } else { 0.5 + gap / 2.0 };
                    bern(rng, p)
                })
                .collect()
        }
        EnvironmentSpec::AdaptiveWorstCase => unreachable!("handled by the caller"),
    }
}

fn heaviest_action_outcome(game: &GameSpec, gamma: &Decision) -> Outcome {
    let w = gamma.weights();
    let top = (0..w.len()).fold(0, |b, i| if w[i] > w[b] { i } else { b });
    match game {
        GameSpec::Dtol { n } => {
            let mut o = vec![0.0; *n];
            o[top] = 1.0;
            Outcome::Losses(o)
        }
        GameSpec::FiniteConvex(g) => {
            let worst = (0..g.num_outcomes()).fold(0, |b, k| {
                if g.mixture_loss(gamma, k).unwrap_or(0.0) > g.mixture_loss(gamma, b).unwrap_or(0.0) {
                    k
                } else {
                    b
                }
            });
            Outcome::Symbol(worst)
        }
    }
}
