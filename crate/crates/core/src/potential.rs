//! Hoeffding-supermartingale potentials.
//!
//! Every potential used by the learners has the shape
//!
//! ```text
//! f_t(γ, ω) = Σ_n p_n Σ_k w_k · exp(η_k R^n − penalty_k) · exp(η_k (λ(γ,ω) − λ(γ^n,ω)) − η_k²/2)
//! ```
//!
//! where `R^n = L_{t−1} − L^n_{t−1}` is the running regret to expert `n`. The
//! three modes differ only in the rate grid `(η_k, w_k)` and the accumulated
//! variance penalty:
//!
//! | mode           | grid                               | penalty_k                 |
//! |----------------|------------------------------------|---------------------------|
//! | `FixedEta`     | single node `(η, 1)`               | `(t−1) η²/2`              |
//! | `Mixture`      | discretised `dη / (η ln²(1/η))`    | `(t−1) η_k²/2`            |
//! | `TimeVarying`  | `(i/√t, c/i²)`, rebuilt each step  | `(i²/(2√t)) Σ_{s<t} 1/√s` |
//!
//! All aggregation is done on logarithms so states with large regrets never
//! overflow.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ExpertPool, WEIGHT_TOL};
use crate::numerics::LogSumExp;

/// Normalising constant of the `c/i²` weights: `1/c = Σ 1/i² = π²/6`.
pub const TIME_VARYING_C: f64 = 6.0 / (PI * PI);

/// A learning rate with its mixture weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaNode {
    pub eta: f64,
    pub weight: f64,
}

/// Exponent of a single Hoeffding factor: `η (ℓ_learner − ℓ_expert) − η²/2`.
#[inline]
pub fn hoeffding_exponent(eta: f64, learner_loss: f64, expert_loss: f64) -> f64 {
    eta * (learner_loss - expert_loss) - 0.5 * eta * eta
}

/// Discretisation of the prior `μ(dη) = dη / (η ln²(1/η))` on `[eta_min, 1/e]`.
///
/// The interval is split into `k` geometric cells. Each node sits at its cell's
/// geometric midpoint and carries the exact cell mass `1/ln(1/b) − 1/ln(1/a)`,
/// so the masses telescope to `1 − 1/ln(1/eta_min)`.
pub fn mixture_grid(eta_min: f64, k: usize) -> Result<Vec<EtaNode>> {
    let upper = (-1.0f64).exp();
    if !(eta_min > 0.0) || eta_min >= upper {
        return Err(Error::InvalidParameter(format!(
            "eta_min must lie in (0, 1/e), got {eta_min}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("grid needs at least one cell".into()));
    }
    // geometric in η means linear in ln(1/η), which runs from ln(1/eta_min) down to 1
    let l0 = -eta_min.ln();
    let edge = |j: usize| {
        if j == k {
            1.0
        } else {
            l0 + (1.0 - l0) * (j as f64 / k as f64)
        }
    };
    Ok((0..k)
        .map(|j| {
            let (la, lb) = (edge(j), edge(j + 1));
            EtaNode {
                eta: (-(la + lb) / 2.0).exp(),
                weight: 1.0 / lb - 1.0 / la,
            }
        })
        .collect())
}

/// Rate grid of the time-varying potential at step `t`: `(i/√t, c/i²)` for
/// `i = 1..=i_max`, weights left unrenormalised.
pub fn time_varying_grid(t: usize, i_max: usize) -> Vec<EtaNode> {
    let st = (t.max(1) as f64).sqrt();
    (1..=i_max)
        .map(|i| {
            let fi = i as f64;
            EtaNode {
                eta: fi / st,
                weight: TIME_VARYING_C / (fi * fi),
            }
        })
        .collect()
}

/// Default truncation `⌈√ln max(N, 3)⌉ + 1`.
pub fn default_i_max(num_experts: usize) -> usize {
    ((num_experts.max(3) as f64).ln().sqrt()).ceil() as usize + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PotentialMode {
    FixedEta { eta: f64 },
    Mixture { grid: Vec<EtaNode> },
    TimeVarying { i_max: usize },
}

impl PotentialMode {
    fn validate(&self) -> Result<()> {
        match self {
            PotentialMode::FixedEta { eta } => {
                if !(eta.is_finite() && *eta >= 0.0) {
                    return Err(Error::InvalidParameter(format!("bad learning rate {eta}")));
                }
            }
            PotentialMode::Mixture { grid } => {
                if grid.is_empty() {
                    return Err(Error::InvalidParameter("empty rate grid".into()));
                }
                if grid
                    .iter()
                    .any(|n| !(n.eta >= 0.0 && n.eta.is_finite() && n.weight > 0.0))
                {
                    return Err(Error::InvalidParameter("bad rate grid node".into()));
                }
                let mass: f64 = grid.iter().map(|n| n.weight).sum();
                if mass > 1.0 + WEIGHT_TOL {
                    return Err(Error::InvalidParameter(format!("grid mass {mass} > 1")));
                }
            }
            PotentialMode::TimeVarying { i_max } => {
                if *i_max == 0 {
                    return Err(Error::InvalidParameter("i_max must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Log-coefficients of the current potential, laid out node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub etas: Vec<f64>,
    /// `log_coef[k * n_experts + n] = log p_n + log w_k + η_k R^n − penalty_k`.
    pub log_coef: Vec<f64>,
    pub n_experts: usize,
}

impl Coefficients {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.log_coef[k * self.n_experts..(k + 1) * self.n_experts]
    }

    /// `log Σ_{k,n} exp(log_coef)`: the potential's value with no new round.
    pub fn log_total(&self) -> f64 {
        let mut acc = LogSumExp::new();
        self.log_coef.iter().for_each(|&c| acc.push(c));
        acc.value()
    }
}

/// State of a Hoeffding-mixture potential after `steps` completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialState {
    mode: PotentialMode,
    weights: Vec<f64>,
    regrets: Vec<f64>,
    steps: usize,
    /// `Σ_{s ≤ steps} 1/√s`.
    variance: f64,
    last_log_f: f64,
}

impl PotentialState {
    pub fn new(mode: PotentialMode, pool: &ExpertPool) -> Result<Self> {
        mode.validate()?;
        let mut s = PotentialState {
            mode,
            weights: pool.weights().to_vec(),
            regrets: vec![0.0; pool.len()],
            steps: 0,
            variance: 0.0,
            last_log_f: 0.0,
        };
        s.last_log_f = s.coefficients().log_total();
        Ok(s)
    }

    pub fn mode(&self) -> &PotentialMode {
        &self.mode
    }

    pub fn num_experts(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `R^n = L_t − L^n_t` after the completed rounds.
    pub fn regrets(&self) -> &[f64] {
        &self.regrets
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Logarithm of the value cached by the last [`update`](Self::update):
    /// `f_t(γ_t, ω_t)`, or the total prior mass before any round.
    pub fn last_log_f(&self) -> f64 {
        self.last_log_f
    }

    /// Rate grid used for the upcoming round `steps + 1`.
    pub fn nodes(&self) -> Vec<EtaNode> {
        match &self.mode {
            PotentialMode::FixedEta { eta } => vec![EtaNode {
                eta: *eta,
                weight: 1.0,
            }],
            PotentialMode::Mixture { grid } => grid.clone(),
            PotentialMode::TimeVarying { i_max } => time_varying_grid(self.steps + 1, *i_max),
        }
    }

    fn penalty(&self, node_index: usize, eta: f64) -> f64 {
        match self.mode {
            PotentialMode::FixedEta { .. } | PotentialMode::Mixture { .. } => {
                self.steps as f64 * eta * eta / 2.0
            }
            PotentialMode::TimeVarying { .. } => {
                let i = (node_index + 1) as f64;
                let t = (self.steps + 1) as f64;
                i * i / (2.0 * t.sqrt()) * self.variance
            }
        }
    }

    /// Log-coefficients of the potential for the upcoming round.
    pub fn coefficients(&self) -> Coefficients {
        let nodes = self.nodes();
        let n = self.weights.len();
        let mut log_coef = Vec::with_capacity(nodes.len() * n);
        for (k, node) in nodes.iter().enumerate() {
            let base = node.weight.ln() - self.penalty(k, node.eta);
            for (p, r) in self.weights.iter().zip(&self.regrets) {
                log_coef.push(p.ln() + base + node.eta * r);
            }
        }
        Coefficients {
            etas: nodes.iter().map(|n| n.eta).collect(),
            log_coef,
            n_experts: n,
        }
    }

    /// `log f_t(γ, ω)` given the learner's loss `λ(γ, ω)` and each expert's
    /// loss `λ(γ^n, ω)` in the upcoming round.
    pub fn log_f(&self, learner_loss: f64, expert_losses: &[f64]) -> Result<f64> {
        if expert_losses.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: expert_losses.len(),
            });
        }
        let coef = self.coefficients();
        Ok(log_f_with(&coef, learner_loss, expert_losses))
    }

    /// Capacity `C_T` of the time-varying potential (log).
    pub fn capacity_log(&self) -> Result<f64> {
        match self.mode {
            PotentialMode::TimeVarying { .. } => Ok(self.coefficients().log_total()),
            _ => Err(Error::WrongMode {
                expected: "time-varying",
            }),
        }
    }

    /// The ceiling the next decision must respect: the previous realised value
    /// for the fixed-rate and mixture potentials, `C_T` for the time-varying one.
    pub fn ceiling_log(&self) -> f64 {
        match self.mode {
            PotentialMode::TimeVarying { .. } => self.coefficients().log_total(),
            _ => self.last_log_f,
        }
    }

    /// Absorb a completed round.
    pub fn update(&mut self, learner_loss: f64, expert_losses: &[f64]) -> Result<()> {
        self.last_log_f = self.log_f(learner_loss, expert_losses)?;
        for (r, l) in self.regrets.iter_mut().zip(expert_losses) {
            *r += learner_loss - l;
        }
        self.steps += 1;
        self.variance += 1.0 / (self.steps as f64).sqrt();
        Ok(())
    }
}

/// `log f` from precomputed coefficients.
pub fn log_f_with(coef: &Coefficients, learner_loss: f64, expert_losses: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for (k, &eta) in coef.etas.iter().enumerate() {
        for (c, &l) in coef.row(k).iter().zip(expert_losses) {
            acc.push(c + hoeffding_exponent(eta, learner_loss, l));
        }
    }
    acc.value()
}
