//! Games, the repeated-play protocol and ε-quantile regret.
//!
//! Two kinds of game are supported. In decision-theoretic online learning
//! (DTOL) the learner spreads probability over `N` actions and Reality reveals
//! a loss vector in `[0,1]^N`; expert `n` is the rigid strategy that always
//! plays action `n`. In a finite convex game the outcome is one of finitely
//! many symbols and decisions are mixtures of generator loss functions, which
//! is enough to represent any bounded convex game with finite outcome space.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when validating sums of weights and loss ranges.
pub const WEIGHT_TOL: f64 = 1e-12;

/// A finite-outcome convex game given by the generators of its prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteConvexGame {
    outcomes: Vec<String>,
    /// `generators[g][w]` is the loss of generator `g` at outcome `w`.
    generators: Vec<Vec<f64>>,
}

impl FiniteConvexGame {
    pub fn new(outcomes: Vec<String>, generators: Vec<Vec<f64>>) -> Result<Self> {
        if outcomes.len() < 2 {
            return Err(Error::InvalidGame("need at least two outcomes".into()));
        }
        if generators.is_empty() {
            return Err(Error::InvalidGame("need at least one generator".into()));
        }
        for (i, a) in outcomes.iter().enumerate() {
            if outcomes[..i].contains(a) {
                return Err(Error::InvalidGame(format!("duplicate outcome `{a}`")));
            }
        }
        for g in &generators {
            if g.len() != outcomes.len() {
                return Err(Error::DimensionMismatch {
                    expected: outcomes.len(),
                    got: g.len(),
                });
            }
            if let Some(&v) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::LossOutOfRange {
                    value: v,
                    what: "generator coordinate",
                });
            }
        }
        Ok(Self {
            outcomes,
            generators,
        })
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    pub fn num_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn outcome_index(&self, symbol: &str) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o == symbol)
            .ok_or_else(|| Error::UnknownOutcome(symbol.to_string()))
    }

    /// Loss of generator `g` at outcome index `w`.
    pub fn generator_loss(&self, g: usize, w: usize) -> f64 {
        self.generators[g][w]
    }

    /// Loss of a generator mixture at outcome index `w`.
    pub fn mixture_loss(&self, gamma: &Decision, w: usize) -> Result<f64> {
        if gamma.len() != self.generators.len() {
            return Err(Error::DimensionMismatch {
                expected: self.generators.len(),
                got: gamma.len(),
            });
        }
        if w >= self.outcomes.len() {
            return Err(Error::UnknownOutcome(format!("#{w}")));
        }
        Ok(gamma
            .weights()
            .iter()
            .zip(&self.generators)
            .map(|(a, g)| a * g[w])
            .sum())
    }
}

/// The game `(Ω, Γ, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameSpec {
    Dtol { n: usize },
    FiniteConvex(FiniteConvexGame),
}

impl GameSpec {
    pub fn dtol(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGame("DTOL needs N >= 1".into()));
        }
        Ok(GameSpec::Dtol { n })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GameSpec::Dtol { n } => GameSpec::dtol(*n).map(|_| ()),
            GameSpec::FiniteConvex(g) => {
                FiniteConvexGame::new(g.outcomes.clone(), g.generators.clone()).map(|_| ())
            }
        }
    }

    /// Dimension of the decision simplex.
    pub fn decision_dim(&self) -> usize {
        match self {
            GameSpec::Dtol { n } => *n,
            GameSpec::FiniteConvex(g) => g.num_generators(),
        }
    }

    /// `λ(γ, ω)`.
    pub fn loss(&self, gamma: &Decision, outcome: &Outcome) -> Result<f64> {
        match (self, outcome) {
            (GameSpec::Dtol { .. }, Outcome::Losses(w)) => dtol_loss(gamma, w),
            (GameSpec::FiniteConvex(g), Outcome::Symbol(w)) => g.mixture_loss(gamma, *w),
            _ => Err(Error::InvalidGame("outcome kind does not match game".into())),
        }
    }
}

/// A point of the decision simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Decision(Vec<f64>);

impl Decision {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDecision("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidDecision(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidDecision(format!("weights sum to {sum}")));
        }
        Ok(Decision(weights))
    }

    /// Normalise a nonnegative vector with positive mass.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDecision("cannot normalise".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Decision(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Decision(vec![1.0 / n as f64; n])
    }

    /// The unit decision `e_i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Decision(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// What Reality announces: a DTOL loss vector or the index of a finite outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Losses(Vec<f64>),
    Symbol(usize),
}

impl Outcome {
    pub fn losses(&self) -> Option<&[f64]> {
        match self {
            Outcome::Losses(w) => Some(w),
            Outcome::Symbol(_) => None,
        }
    }
}

fn check_unit(v: f64, what: &'static str) -> Result<()> {
    if !(-WEIGHT_TOL..=1.0 + WEIGHT_TOL).contains(&v) || v.is_nan() {
        return Err(Error::LossOutOfRange { value: v, what });
    }
    Ok(())
}

/// DTOL loss `γ · ω`.
pub fn dtol_loss(gamma: &Decision, omega: &[f64]) -> Result<f64> {
    if gamma.len() != omega.len() {
        return Err(Error::DimensionMismatch {
            expected: gamma.len(),
            got: omega.len(),
        });
    }
    for &w in omega {
        check_unit(w, "outcome coordinate")?;
    }
    Ok(gamma.weights().iter().zip(omega).map(|(a, b)| a * b).sum())
}

/// Turn a finite-game round into a DTOL loss vector: coordinate `n` is expert
/// `n`'s loss at the announced outcome.
pub fn reduce_pea_outcome(
    expert_predictions: &[Decision],
    outcome: &str,
    game: &GameSpec,
) -> Result<Vec<f64>> {
    let GameSpec::FiniteConvex(g) = game else {
        return Err(Error::InvalidGame("reduction needs a finite convex game".into()));
    };
    let w = g.outcome_index(outcome)?;
    expert_predictions
        .iter()
        .map(|p| g.mixture_loss(p, w))
        .collect()
}

/// Expert prior weights `p_n`: positive, total mass at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertPool {
    weights: Vec<f64>,
}

impl ExpertPool {
    pub fn uniform(n: usize) -> Self {
        ExpertPool {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no experts".into()));
        }
        if weights.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidWeights("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + WEIGHT_TOL {
            return Err(Error::InvalidWeights(format!("total weight {total} > 1")));
        }
        Ok(ExpertPool { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Number of experts the truncation rules treat the pool as having:
    /// `N` for uniform pools, `⌈1/min p⌉` otherwise.
    pub fn effective_count(&self) -> usize {
        let n = self.weights.len();
        let min = self.weights.iter().copied().fold(f64::INFINITY, f64::min);
        let uniform = self.weights.iter().all(|p| (p - min).abs() <= WEIGHT_TOL * min.max(1.0))
            && (self.total() - 1.0).abs() <= 1e-9;
        if uniform {
            n
        } else {
            ((1.0 / min) - 1e-9).ceil() as usize
        }
    }
}

/// Smallest `v` such that the experts with `L^n ≤ v` carry weight at least `eps`.
pub fn quantile_loss(expert_losses: &[f64], weights: &[f64], eps: f64) -> Result<f64> {
    if expert_losses.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: expert_losses.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(eps > 0.0) || eps > total + WEIGHT_TOL {
        return Err(Error::InvalidQuantile { eps, total });
    }
    let mut order: Vec<usize> = (0..expert_losses.len()).collect();
    order.sort_by(|&a, &b| expert_losses[a].total_cmp(&expert_losses[b]));
    let mut covered = 0.0;
    let mut i = 0;
    while i < order.len() {
        // take the whole tie group at this loss level
        let level = expert_losses[order[i]];
        while i < order.len() && expert_losses[order[i]] == level {
            covered += weights[order[i]];
            i += 1;
        }
        if covered >= eps - WEIGHT_TOL {
            return Ok(level);
        }
    }
    Ok(expert_losses[order[order.len() - 1]])
}

/// Result of an ε-quantile regret query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileQuery {
    pub eps: f64,
    pub quantile_loss: f64,
    pub regret: f64,
}

/// Per-round record kept in the protocol trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub decision: Decision,
    pub outcome: Outcome,
    pub learner_loss: f64,
    pub expert_losses: Vec<f64>,
}

/// How much per-round history a [`ProtocolState`] retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceRetention {
    #[default]
    Full,
    Ring(usize),
}

/// Cumulative losses of the learner and the experts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolState {
    t: usize,
    cum_loss: f64,
    expert_losses: Vec<f64>,
    retention: TraceRetention,
    trace: VecDeque<RoundRecord>,
}

impl ProtocolState {
    pub fn new(num_experts: usize) -> Self {
        Self::with_retention(num_experts, TraceRetention::Full)
    }

    pub fn with_retention(num_experts: usize, retention: TraceRetention) -> Self {
        ProtocolState {
            t: 0,
            cum_loss: 0.0,
            expert_losses: vec![0.0; num_experts],
            retention,
            trace: VecDeque::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn cum_loss(&self) -> f64 {
        self.cum_loss
    }

    pub fn expert_losses(&self) -> &[f64] {
        &self.expert_losses
    }

    pub fn trace(&self) -> impl Iterator<Item = &RoundRecord> {
        self.trace.iter()
    }

    pub fn num_experts(&self) -> usize {
        self.expert_losses.len()
    }

    /// Record a round given the learner's and every expert's loss.
    pub fn advance_with_losses(
        &mut self,
        decision: Decision,
        outcome: Outcome,
        learner_loss: f64,
        expert_losses: Vec<f64>,
    ) -> Result<()> {
        if expert_losses.len() != self.expert_losses.len() {
            return Err(Error::DimensionMismatch {
                expected: self.expert_losses.len(),
                got: expert_losses.len(),
            });
        }
        check_unit(learner_loss, "learner step loss")?;
        for &l in &expert_losses {
            check_unit(l, "expert step loss")?;
        }
        self.t += 1;
        self.cum_loss += learner_loss;
        for (acc, l) in self.expert_losses.iter_mut().zip(&expert_losses) {
            *acc += l;
        }
        match self.retention {
            TraceRetention::Full => {}
            TraceRetention::Ring(0) => return Ok(()),
            TraceRetention::Ring(cap) => {
                while self.trace.len() >= cap {
                    self.trace.pop_front();
                }
            }
        }
        self.trace.push_back(RoundRecord {
            t: self.t,
            decision,
            outcome,
            learner_loss,
            expert_losses,
        });
        Ok(())
    }

    /// DTOL round: learner suffers `γ · ω`, expert `n` suffers `ω_n`.
    pub fn advance(&mut self, gamma: &Decision, omega: &[f64]) -> Result<()> {
        let loss = dtol_loss(gamma, omega)?;
        self.advance_with_losses(
            gamma.clone(),
            Outcome::Losses(omega.to_vec()),
            loss,
            omega.to_vec(),
        )
    }

    /// Finite-game round with the experts' generator mixtures for this step.
    pub fn advance_pea(
        &mut self,
        game: &FiniteConvexGame,
        gamma: &Decision,
        expert_predictions: &[Decision],
        outcome: usize,
    ) -> Result<()> {
        let loss = game.mixture_loss(gamma, outcome)?;
        let expert: Vec<f64> = expert_predictions
            .iter()
            .map(|p| game.mixture_loss(p, outcome))
            .collect::<Result<_>>()?;
        self.advance_with_losses(gamma.clone(), Outcome::Symbol(outcome), loss, expert)
    }

    pub fn quantile_loss(&self, weights: &[f64], eps: f64) -> Result<f64> {
        quantile_loss(&self.expert_losses, weights, eps)
    }

    /// `R^ε = L_T − L^ε`.
    pub fn quantile_regret(&self, weights: &[f64], eps: f64) -> Result<QuantileQuery> {
        let q = self.quantile_loss(weights, eps)?;
        Ok(QuantileQuery {
            eps,
            quantile_loss: q,
            regret: self.cum_loss - q,
        })
    }
}

/// Default ε report grid `{1/N, 0.01, 0.05, 0.1, 0.25, 0.5, 1} ∩ (0, Σp]`,
/// sorted and deduplicated.
pub fn default_eps_grid(num_experts: usize, total_weight: f64) -> Vec<f64> {
    let mut grid = vec![1.0 / num_experts as f64, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0];
    grid.retain(|&e| e > 0.0 && e <= total_weight + WEIGHT_TOL);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    grid
}
