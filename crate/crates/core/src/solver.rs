//! The min-max step of defensive forecasting.
//!
//! Given a potential `f(γ, ω)` and a ceiling `C`, find `γ` in the decision
//! simplex with `max_ω f(γ, ω) ≤ C`. For every potential in this crate such a
//! `γ` exists whenever `C` is at least the potential's current mass.
//!
//! `log f(γ, ω)` is a log-sum-exp of functions affine in `γ`, hence convex in
//! `γ`; in the DTOL game it is also convex in `ω`, so the supremum over the
//! outcome cube is attained at one of its `2^N` vertices. The solver therefore
//! minimises a pointwise maximum of finitely many smooth convex functions with
//! entropic mirror descent (multiplicative updates, Polyak step towards the
//! ceiling, weighted iterate averaging) and stops at the first certified
//! point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Decision, FiniteConvexGame, GameSpec, Outcome};
use crate::numerics::LogSumExp;
use crate::par;
use crate::potential::{Coefficients, PotentialState};

/// How the inner maximisation over outcomes is carried out in DTOL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOracle {
    /// Enumerate all `2^N` vertices of the loss cube.
    ExactVertex,
    /// `M` random vertices plus coordinate-wise local search.
    SampledVertex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub inner_oracle: InnerOracle,
    pub exact_cap: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-9,
            max_iterations: 10_000,
            inner_oracle: InnerOracle::ExactVertex,
            exact_cap: 16,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        if self.exact_cap == 0 {
            return Err(Error::InvalidParameter("exact_cap must be >= 1".into()));
        }
        if let InnerOracle::SampledVertex(0) = self.inner_oracle {
            return Err(Error::InvalidParameter("sampled oracle needs M >= 1".into()));
        }
        Ok(())
    }
}

/// A decision together with the evidence that it respects the ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gamma: Decision,
    pub worst_value_log: f64,
    pub worst_outcome: Outcome,
    /// True iff the inner oracle enumerated every extreme outcome.
    pub exact: bool,
    pub ceiling_log: f64,
    pub iterations: usize,
}

/// What the solver needs to know about the round besides the potential.
#[derive(Debug, Clone, Copy)]
pub enum StepContext<'a> {
    Dtol,
    Finite {
        game: &'a FiniteConvexGame,
        expert_predictions: &'a [Decision],
    },
}

impl<'a> StepContext<'a> {
    pub fn for_game(game: &'a GameSpec, expert_predictions: &'a [Decision]) -> Self {
        match game {
            GameSpec::Dtol { .. } => StepContext::Dtol,
            GameSpec::FiniteConvex(g) => StepContext::Finite {
                game: g,
                expert_predictions,
            },
        }
    }
}

/// Mean of the outcome distribution `π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanOutcome {
    /// Mean loss vector in `[0,1]^N`.
    Dtol(Vec<f64>),
    /// Distribution over the finite outcomes.
    Finite(Vec<f64>),
}

/// Index set spanning the best-response face: simplex vertices in DTOL,
/// generators in a finite game.
pub fn best_response(mu: &MeanOutcome, game: &GameSpec) -> Result<Vec<usize>> {
    let expected: Vec<f64> = match (mu, game) {
        (MeanOutcome::Dtol(m), GameSpec::Dtol { n }) => {
            if m.len() != *n {
                return Err(Error::DimensionMismatch {
                    expected: *n,
                    got: m.len(),
                });
            }
            if m.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::InvalidParameter("mean outside [0,1]^N".into()));
            }
            m.clone()
        }
        (MeanOutcome::Finite(pi), GameSpec::FiniteConvex(g)) => {
            if pi.len() != g.num_outcomes() {
                return Err(Error::DimensionMismatch {
                    expected: g.num_outcomes(),
                    got: pi.len(),
                });
            }
            let total: f64 = pi.iter().sum();
            if pi.iter().any(|x| *x < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter("π is not a distribution".into()));
            }
            g.generators()
                .iter()
                .map(|row| row.iter().zip(pi).map(|(a, b)| a * b).sum())
                .collect()
        }
        _ => return Err(Error::InvalidGame("mean kind does not match game".into())),
    };
    let min = expected.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((0..expected.len())
        .filter(|&i| expected[i] <= min + 1e-12)
        .collect())
}

/// One candidate outcome: `log f(γ, ω) = LSE_k(η_k · (γ · row) + offsets_k)`.
#[derive(Debug, Clone)]
struct Scenario {
    row: Vec<f64>,
    offsets: Vec<f64>,
    outcome: Outcome,
}

/// Per-node rescaled coefficients used to build DTOL vertex scenarios cheaply.
struct ScaledCoef<'a> {
    coef: &'a Coefficients,
    max: Vec<f64>,
    scaled: Vec<f64>,
    decay: Vec<f64>,
}

impl<'a> ScaledCoef<'a> {
    fn new(coef: &'a Coefficients) -> Self {
        let n = coef.n_experts;
        let k = coef.etas.len();
        let mut max = Vec::with_capacity(k);
        let mut scaled = Vec::with_capacity(k * n);
        for kk in 0..k {
            let row = coef.row(kk);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max.push(m);
            scaled.extend(row.iter().map(|c| (c - m).exp()));
        }
        let decay = coef.etas.iter().map(|e| (-e).exp()).collect();
        ScaledCoef {
            coef,
            max,
            scaled,
            decay,
        }
    }

    fn vertex(&self, bits: &[bool]) -> Scenario {
        let n = self.coef.n_experts;
        let offsets = self
            .coef
            .etas
            .iter()
            .enumerate()
            .map(|(k, &eta)| {
                let row = &self.scaled[k * n..(k + 1) * n];
                let (mut lo, mut hi) = (0.0, 0.0);
                for (a, &b) in row.iter().zip(bits) {
                    if b {
                        hi += a;
                    } else {
                        lo += a;
                    }
                }
                self.max[k] + (lo + self.decay[k] * hi).ln() - 0.5 * eta * eta
            })
            .collect();
        let row: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Scenario {
            outcome: Outcome::Losses(row.clone()),
            row,
            offsets,
        }
    }
}

fn bits_of(mask: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

fn finite_scenarios(
    coef: &Coefficients,
    game: &FiniteConvexGame,
    experts: &[Decision],
) -> Result<Vec<Scenario>> {
    if experts.len() != coef.n_experts {
        return Err(Error::DimensionMismatch {
            expected: coef.n_experts,
            got: experts.len(),
        });
    }
    (0..game.num_outcomes())
        .map(|w| {
            let losses: Vec<f64> = experts
                .iter()
                .map(|e| game.mixture_loss(e, w))
                .collect::<Result<_>>()?;
            let offsets = coef
                .etas
                .iter()
                .enumerate()
                .map(|(k, &eta)| {
                    let mut acc = LogSumExp::new();
                    for (c, l) in coef.row(k).iter().zip(&losses) {
                        acc.push(c - eta * l);
                    }
                    acc.value() - 0.5 * eta * eta
                })
                .collect();
            Ok(Scenario {
                row: (0..game.num_generators())
                    .map(|g| game.generator_loss(g, w))
                    .collect(),
                offsets,
                outcome: Outcome::Symbol(w),
            })
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn scenario_value(etas: &[f64], sc: &Scenario, gamma: &[f64]) -> f64 {
    let s = dot(gamma, &sc.row);
    let mut acc = LogSumExp::new();
    for (eta, off) in etas.iter().zip(&sc.offsets) {
        acc.push(eta * s + off);
    }
    acc.value()
}

/// `∂ log f / ∂γ = η̄ · row` with `η̄` the softmax-weighted rate.
fn scenario_gradient(etas: &[f64], sc: &Scenario, gamma: &[f64]) -> Vec<f64> {
    let s = dot(gamma, &sc.row);
    let terms: Vec<f64> = etas.iter().zip(&sc.offsets).map(|(e, o)| e * s + o).collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, e) in terms.iter().zip(etas) {
        let w = (t - m).exp();
        num += w * e;
        den += w;
    }
    let eta_bar = if den > 0.0 { num / den } else { 0.0 };
    sc.row.iter().map(|r| eta_bar * r).collect()
}

/// Outcome set the solver maximises over.
struct Oracle<'a> {
    etas: Vec<f64>,
    scenarios: Vec<Scenario>,
    scaled: Option<ScaledCoef<'a>>,
    exact: bool,
}

impl<'a> Oracle<'a> {
    fn build(coef: &'a Coefficients, ctx: StepContext<'_>, opts: &SolveOptions) -> Result<Self> {
        let etas = coef.etas.clone();
        match ctx {
            StepContext::Finite {
                game,
                expert_predictions,
            } => Ok(Oracle {
                scenarios: finite_scenarios(coef, game, expert_predictions)?,
                etas,
                scaled: None,
                exact: true,
            }),
            StepContext::Dtol => {
                let n = coef.n_experts;
                let scaled = ScaledCoef::new(coef);
                match opts.inner_oracle {
                    InnerOracle::ExactVertex => {
                        if n > opts.exact_cap {
                            return Err(Error::ExactCapExceeded {
                                n,
                                cap: opts.exact_cap,
                            });
                        }
                        let scenarios =
                            par::map_range(1usize << n, |mask| scaled.vertex(&bits_of(mask, n)));
                        Ok(Oracle {
                            etas,
                            scenarios,
                            scaled: Some(scaled),
                            exact: true,
                        })
                    }
                    InnerOracle::SampledVertex(m) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                        let mut scenarios = vec![
                            scaled.vertex(&vec![false; n]),
                            scaled.vertex(&vec![true; n]),
                        ];
                        for _ in 0..m {
                            let bits: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
                            scenarios.push(scaled.vertex(&bits));
                        }
                        Ok(Oracle {
                            etas,
                            scenarios,
                            scaled: Some(scaled),
                            exact: false,
                        })
                    }
                }
            }
        }
    }

    fn worst(&self, gamma: &[f64]) -> (usize, f64) {
        par::argmax_range(self.scenarios.len(), |i| {
            scenario_value(&self.etas, &self.scenarios[i], gamma)
        })
        .expect("oracle has at least one scenario")
    }

    /// Worst outcome at `gamma`; in sampled mode first improves the best
    /// sampled vertex by single-coordinate flips and remembers what it finds.
    fn worst_with_search(&mut self, gamma: &[f64]) -> (usize, f64) {
        let (mut idx, mut val) = self.worst(gamma);
        if self.exact {
            return (idx, val);
        }
        let Some(scaled) = &self.scaled else {
            return (idx, val);
        };
        let mut bits: Vec<bool> = self.scenarios[idx].row.iter().map(|r| *r > 0.5).collect();
        let mut improved = true;
        let mut found = None;
        while improved {
            improved = false;
            for i in 0..bits.len() {
                bits[i] = !bits[i];
                let sc = scaled.vertex(&bits);
                let v = scenario_value(&self.etas, &sc, gamma);
                if v > val + 1e-15 {
                    val = v;
                    found = Some(sc);
                    improved = true;
                } else {
                    bits[i] = !bits[i];
                }
            }
        }
        if let Some(sc) = found {
            self.scenarios.push(sc);
            idx = self.scenarios.len() - 1;
        }
        (idx, val)
    }
}

/// Starting point: the potential's gradient with respect to the regrets,
/// `γ_n ∝ Σ_k η_k · coef_{k,n}`, mapped to generator weights in a finite game.
fn gradient_point(coef: &Coefficients, ctx: StepContext<'_>) -> Vec<f64> {
    let n = coef.n_experts;
    let use_eta = coef.etas.iter().any(|&e| e > 0.0);
    let logs: Vec<f64> = (0..n)
        .map(|j| {
            let mut acc = LogSumExp::new();
            for (k, &eta) in coef.etas.iter().enumerate() {
                let c = coef.row(k)[j];
                if use_eta {
                    if eta > 0.0 {
                        acc.push(c + eta.ln());
                    }
                } else {
                    acc.push(c);
                }
            }
            acc.value()
        })
        .collect();
    let mut w = Vec::new();
    crate::numerics::softmax_into(&logs, &mut w);
    match ctx {
        StepContext::Dtol => w,
        StepContext::Finite {
            game,
            expert_predictions,
        } => {
            let mut g = vec![0.0; game.num_generators()];
            for (wn, e) in w.iter().zip(expert_predictions) {
                for (acc, x) in g.iter_mut().zip(e.weights()) {
                    *acc += wn * x;
                }
            }
            let s: f64 = g.iter().sum();
            g.iter_mut().for_each(|x| *x /= s);
            g
        }
    }
}

/// Worst outcome for a fixed decision, with the achieved `log f`.
pub fn worst_outcome(
    potential: &PotentialState,
    ctx: StepContext<'_>,
    gamma: &Decision,
    opts: &SolveOptions,
) -> Result<(Outcome, f64)> {
    let coef = potential.coefficients();
    let mut oracle = Oracle::build(&coef, ctx, opts)?;
    let dim = oracle.scenarios[0].row.len();
    if gamma.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: gamma.len(),
        });
    }
    let (idx, val) = oracle.worst_with_search(gamma.weights());
    Ok((oracle.scenarios[idx].outcome.clone(), val))
}

struct Best {
    gamma: Vec<f64>,
    value: f64,
    idx: usize,
}

/// Find `γ` with `max_ω log f(γ, ω) ≤ ceiling_log + log(1 + τ)`.
pub fn solve(
    potential: &PotentialState,
    ctx: StepContext<'_>,
    ceiling_log: f64,
    opts: &SolveOptions,
) -> Result<Certificate> {
    opts.validate()?;
    if ceiling_log.is_nan() || ceiling_log == f64::NEG_INFINITY {
        return Err(Error::Infeasible {
            best_log: f64::NAN,
            ceiling_log,
            iterations: 0,
        });
    }
    let coef = potential.coefficients();
    let mut oracle = Oracle::build(&coef, ctx, opts)?;
    let threshold = ceiling_log + opts.tolerance.ln_1p();

    let start = gradient_point(&coef, ctx);
    let (idx, value) = oracle.worst_with_search(&start);
    let best = Best {
        gamma: start.clone(),
        value,
        idx,
    };
    let finish = |best: Best, oracle: &Oracle, iterations: usize| -> Result<Certificate> {
        Ok(Certificate {
            gamma: Decision::normalized(best.gamma)?,
            worst_value_log: best.value,
            worst_outcome: oracle.scenarios[best.idx].outcome.clone(),
            exact: oracle.exact,
            ceiling_log,
            iterations,
        })
    };
    if best.value <= threshold {
        return finish(best, &oracle, 0);
    }

    let (best, iterations) = descend(&mut oracle, best, ceiling_log, threshold, opts.max_iterations);
    if best.value <= threshold {
        return finish(best, &oracle, iterations);
    }
    Err(Error::Infeasible {
        best_log: best.value,
        ceiling_log,
        iterations,
    })
}

/// Mirror descent on `max_ω log f(·, ω)` from `best.gamma`; returns the best
/// point seen (iterate or running average) and the iterations used.
fn descend(
    oracle: &mut Oracle<'_>,
    mut best: Best,
    ceiling_log: f64,
    threshold: f64,
    max_iterations: usize,
) -> (Best, usize) {
    let dim = best.gamma.len();
    // keep iterates strictly inside the simplex so every coordinate can grow
    let mut log_w: Vec<f64> = best
        .gamma
        .iter()
        .map(|&x| (x * (1.0 - 1e-9) + 1e-9 / dim as f64).ln())
        .collect();
    let mut gamma = best.gamma.clone();
    let (mut cur_idx, mut cur_val) = (best.idx, best.value);
    let mut avg = vec![0.0; dim];
    let mut avg_mass = 0.0;

    for it in 1..=max_iterations {
        let g = scenario_gradient(&oracle.etas, &oracle.scenarios[cur_idx], &gamma);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let half_span = (hi - lo) / 2.0;
        if !(half_span > 0.0) {
            // the active outcome does not depend on γ
            return (best, it);
        }
        let centre = (hi + lo) / 2.0;
        let step = (cur_val - ceiling_log).max(1e-12) / (half_span * half_span);
        for (lw, gi) in log_w.iter_mut().zip(&g) {
            *lw -= step * (gi - centre);
        }
        let lmax = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_w.iter_mut().for_each(|x| *x -= lmax);
        let z: f64 = log_w.iter().map(|x| x.exp()).sum();
        for (gi, lw) in gamma.iter_mut().zip(&log_w) {
            *gi = lw.exp() / z;
        }
        (cur_idx, cur_val) = oracle.worst_with_search(&gamma);
        if cur_val < best.value {
            best = Best {
                gamma: gamma.clone(),
                value: cur_val,
                idx: cur_idx,
            };
        }
        for (a, gi) in avg.iter_mut().zip(&gamma) {
            *a += step * gi;
        }
        avg_mass += step;
        if best.value <= threshold {
            return (best, it);
        }
        if it % 8 == 0 {
            let mean: Vec<f64> = avg.iter().map(|a| a / avg_mass).collect();
            let (ai, av) = oracle.worst_with_search(&mean);
            if av < best.value {
                best = Best {
                    gamma: mean,
                    value: av,
                    idx: ai,
                };
                if best.value <= threshold {
                    return (best, it);
                }
            }
        }
    }
    (best, max_iterations)
}

/// Re-evaluate a certificate through the potential directly (not through the
/// solver's scenario tables) over every extreme outcome; returns the largest
/// `log f` found. Requires enumerable outcomes.
pub fn reverify(
    potential: &PotentialState,
    ctx: StepContext<'_>,
    gamma: &Decision,
) -> Result<f64> {
    match ctx {
        StepContext::Dtol => {
            let n = potential.num_experts();
            if n > 24 {
                return Err(Error::ExactCapExceeded { n, cap: 24 });
            }
            let vals = par::map_range(1usize << n, |mask| {
                let omega: Vec<f64> = bits_of(mask, n)
                    .into_iter()
                    .map(|b| if b { 1.0 } else { 0.0 })
                    .collect();
                let ll = dot(gamma.weights(), &omega);
                potential.log_f(ll, &omega)
            });
            vals.into_iter()
                .try_fold(f64::NEG_INFINITY, |m, v| v.map(|v| m.max(v)))
        }
        StepContext::Finite {
            game,
            expert_predictions,
        } => (0..game.num_outcomes()).try_fold(f64::NEG_INFINITY, |m, w| {
            let ll = game.mixture_loss(gamma, w)?;
            let el: Vec<f64> = expert_predictions
                .iter()
                .map(|e| game.mixture_loss(e, w))
                .collect::<Result<_>>()?;
            Ok(m.max(potential.log_f(ll, &el)?))
        }),
    }
}
