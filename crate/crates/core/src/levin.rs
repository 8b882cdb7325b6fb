//! Brute-force grid search over the simplex for finite outcome sets: if every
//! distribution `π` admits some `g ∈ q(π)` with `E_π g ≤ C`, then a single `π`
//! admits `g ∈ q(π)` with `g(ω) ≤ C` for every outcome.
//!
//! The search walks the simplex lattice with denominator `resolution`. Pure grid
//! candidates are tried first; if none clears the level, convex combinations of
//! candidates from adjacent lattice points are tried, which stand in for the
//! tie points between two best responses that the lattice misses.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Decision, ExpertPool, FiniteConvexGame, GameSpec};
use crate::par;
use crate::potential::{mixture_grid, PotentialMode, PotentialState};
use crate::solver::{best_response, MeanOutcome};

pub const MAX_OMEGA: usize = 4;
const MAX_GRID_POINTS: usize = 5_000_000;
const IMPROVE_TOL: f64 = 1e-12;

/// A multivalued map from distributions on a finite outcome set to loss functions.
pub trait Relation: Sync {
    fn omega_size(&self) -> usize;

    /// Some members of `q(π)`, each a vector indexed by outcome.
    fn candidates(&self, pi: &[f64]) -> Vec<Vec<f64>>;
}

/// Wraps a closure as a [`Relation`].
pub struct FnRelation<F> {
    omega_size: usize,
    f: F,
}

impl<F> FnRelation<F>
where
    F: Fn(&[f64]) -> Vec<Vec<f64>> + Sync,
{
    pub fn new(omega_size: usize, f: F) -> Self {
        FnRelation { omega_size, f }
    }
}

impl<F> Relation for FnRelation<F>
where
    F: Fn(&[f64]) -> Vec<Vec<f64>> + Sync,
{
    fn omega_size(&self) -> usize {
        self.omega_size
    }

    fn candidates(&self, pi: &[f64]) -> Vec<Vec<f64>> {
        (self.f)(pi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevinResult {
    pub pi: Vec<f64>,
    pub g: Vec<f64>,
    /// `max_ω g(ω)`.
    pub max_value: f64,
    /// `max_value − C`.
    pub slack: f64,
    /// Whether `g` is a combination of candidates from two adjacent lattice points.
    pub combined: bool,
}

/// Every composition of `m` into `k` nonnegative parts, in lexicographic order.
pub fn simplex_lattice(k: usize, m: usize) -> Vec<Vec<u32>> {
    fn rec(k: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() + 1 == k {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in 0..=left {
            cur.push(a);
            rec(k, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, m as u32, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn lattice_size(k: usize, m: usize) -> f64 {
    // C(m + k − 1, k − 1)
    (1..k).fold(1.0, |acc, j| acc * (m + j) as f64 / j as f64)
}

fn max_of(g: &[f64]) -> f64 {
    g.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `min_{α ∈ [0,1]} max_ω (α a(ω) + (1 − α) b(ω))`, exactly: the objective is
/// piecewise linear and convex, so the minimum sits at an end or a crossing.
fn best_mix(a: &[f64], b: &[f64]) -> (f64, f64) {
    let eval = |al: f64| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| al * x + (1.0 - al) * y)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best = (1.0, eval(1.0));
    let mut consider = |al: f64| {
        if (0.0..=1.0).contains(&al) {
            let v = eval(al);
            if v < best.1 - IMPROVE_TOL {
                best = (al, v);
            }
        }
    };
    consider(0.0);
    // line ω: b(ω) + α (a(ω) − b(ω))
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let (si, sj) = (a[i] - b[i], a[j] - b[j]);
            if si != sj {
                consider((b[j] - b[i]) / (si - sj));
            }
        }
    }
    best
}

/// Grid search for `π` and `g ∈ q(π)` with `max_ω g(ω) ≤ c + tolerance`.
///
/// On failure the error carries the best slack reached.
pub fn levin_search(
    q: &dyn Relation,
    resolution: usize,
    c: f64,
    tolerance: f64,
) -> Result<LevinResult> {
    let k = q.omega_size();
    if !(1..=MAX_OMEGA).contains(&k) {
        return Err(Error::InvalidParameter(format!(
            "outcome set size must be in 1..={MAX_OMEGA}, got {k}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be positive".into()));
    }
    if lattice_size(k, resolution) > MAX_GRID_POINTS as f64 {
        return Err(Error::InvalidParameter(format!(
            "lattice with |Ω| = {k} at resolution {resolution} is too large"
        )));
    }
    let lattice = simplex_lattice(k, resolution);
    let m = resolution as f64;
    let to_pi = |p: &[u32]| -> Vec<f64> { p.iter().map(|&a| a as f64 / m).collect() };
    let cands: Vec<Vec<Vec<f64>>> = par::map(&lattice, |p| q.candidates(&to_pi(p)));
    for gs in &cands {
        if gs.iter().any(|g| g.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: gs.iter().map(Vec::len).find(|&l| l != k).unwrap_or(0),
            });
        }
    }

    let mut best: Option<LevinResult> = None;
    let offer = |cand: LevinResult, best: &mut Option<LevinResult>| {
        if best
            .as_ref()
            .map_or(true, |b| cand.max_value < b.max_value - IMPROVE_TOL)
        {
            *best = Some(cand);
        }
    };

    for (p, gs) in lattice.iter().zip(&cands) {
        for g in gs {
            let mv = max_of(g);
            offer(
                LevinResult {
                    pi: to_pi(p),
                    g: g.clone(),
                    max_value: mv,
                    slack: mv - c,
                    combined: false,
                },
                &mut best,
            );
        }
    }
    if let Some(b) = &best {
        if b.slack <= tolerance {
            return Ok(b.clone());
        }
    }

    let index: HashMap<&[u32], usize> = lattice
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_slice(), i))
        .collect();
    let pair_best: Vec<Option<LevinResult>> = par::map_range(lattice.len(), |i| {
        let p = &lattice[i];
        let mut local: Option<LevinResult> = None;
        let mut nb = p.clone();
        for a in 0..k {
            for b in 0..k {
                if a == b || p[b] == 0 {
                    continue;
                }
                nb.copy_from_slice(p);
                nb[a] += 1;
                nb[b] -= 1;
                let j = index[nb.as_slice()];
                // each unordered pair once
                if j < i {
                    continue;
                }
                for ga in &cands[i] {
                    for gb in &cands[j] {
                        let (al, mv) = best_mix(ga, gb);
                        if local.as_ref().map_or(true, |l| mv < l.max_value - IMPROVE_TOL) {
                            let pi_i = to_pi(p);
                            let pi_j = to_pi(&nb);
                            local = Some(LevinResult {
                                pi: pi_i
                                    .iter()
                                    .zip(&pi_j)
                                    .map(|(x, y)| al * x + (1.0 - al) * y)
                                    .collect(),
                                g: ga.iter().zip(gb).map(|(x, y)| al * x + (1.0 - al) * y).collect(),
                                max_value: mv,
                                slack: mv - c,
                                combined: true,
                            });
                        }
                    }
                }
            }
        }
        local
    });
    for cand in pair_best.into_iter().flatten() {
        offer(cand, &mut best);
    }
    match best {
        Some(b) if b.slack <= tolerance => Ok(b),
        Some(b) => Err(Error::LevinNotFound { best_slack: b.slack }),
        None => Err(Error::LevinNotFound {
            best_slack: f64::INFINITY,
        }),
    }
}

/// The relation `π ↦ {f(γ, ·) : γ a best-responding generator}` of a Hoeffding
/// potential in a finite game, with `C` the potential's current total mass.
#[derive(Debug, Clone)]
pub struct HoeffdingRelation {
    pub game: GameSpec,
    pub experts: Vec<Decision>,
    pub potential: PotentialState,
}

impl HoeffdingRelation {
    /// Random game, experts, potential mode and history on `omega_size` outcomes.
    pub fn random<R: Rng>(rng: &mut R, omega_size: usize) -> Result<Self> {
        let n_gen = rng.gen_range(2..=4);
        let generators: Vec<Vec<f64>> = (0..n_gen)
            .map(|_| (0..omega_size).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let outcomes = (0..omega_size).map(|w| format!("w{w}")).collect();
        let fg = FiniteConvexGame::new(outcomes, generators)?;
        let game = GameSpec::FiniteConvex(fg.clone());
        let n_exp = rng.gen_range(1..=4);
        let random_mix = |rng: &mut R| -> Result<Decision> {
            Decision::normalized((0..n_gen).map(|_| rng.gen::<f64>() + 1e-3).collect())
        };
        let experts = (0..n_exp).map(|_| random_mix(rng)).collect::<Result<Vec<_>>>()?;
        let mode = match rng.gen_range(0..3) {
            0 => PotentialMode::FixedEta {
                eta: rng.gen_range(0.05..2.0),
            },
            1 => PotentialMode::Mixture {
                grid: mixture_grid(1e-3, 8)?,
            },
            _ => PotentialMode::TimeVarying {
                i_max: rng.gen_range(1..=4),
            },
        };
        let mut potential = PotentialState::new(mode, &ExpertPool::uniform(n_exp))?;
        for _ in 0..rng.gen_range(0..12) {
            let w = rng.gen_range(0..omega_size);
            let learner = random_mix(rng)?;
            let ll = fg.mixture_loss(&learner, w)?;
            let el = experts
                .iter()
                .map(|e| fg.mixture_loss(e, w))
                .collect::<Result<Vec<_>>>()?;
            potential.update(ll, &el)?;
        }
        Ok(HoeffdingRelation {
            game,
            experts,
            potential,
        })
    }

    fn finite(&self) -> &FiniteConvexGame {
        match &self.game {
            GameSpec::FiniteConvex(g) => g,
            GameSpec::Dtol { .. } => unreachable!("constructed over a finite game"),
        }
    }

    /// The level `C`: the potential with no new round.
    pub fn level(&self) -> f64 {
        self.potential.coefficients().log_total().exp()
    }

    /// `ω ↦ f(e_g, ω)` for generator `g`.
    pub fn generator_potential(&self, g: usize) -> Vec<f64> {
        let fg = self.finite();
        let coef = self.potential.coefficients();
        (0..fg.num_outcomes())
            .map(|w| {
                let el: Vec<f64> = self
                    .experts
                    .iter()
                    .map(|e| fg.mixture_loss(e, w).expect("expert sized to game"))
                    .collect();
                crate::potential::log_f_with(&coef, fg.generator_loss(g, w), &el).exp()
            })
            .collect()
    }

    /// Largest `E_π g − C` over `g ∈ q(π)` and every lattice point `π`.
    pub fn precondition_gap(&self, resolution: usize) -> f64 {
        let c = self.level();
        let k = self.omega_size();
        let m = resolution as f64;
        simplex_lattice(k, resolution)
            .iter()
            .map(|p| {
                let pi: Vec<f64> = p.iter().map(|&a| a as f64 / m).collect();
                self.candidates(&pi)
                    .iter()
                    .map(|g| g.iter().zip(&pi).map(|(x, y)| x * y).sum::<f64>() - c)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Relation for HoeffdingRelation {
    fn omega_size(&self) -> usize {
        self.finite().num_outcomes()
    }

    fn candidates(&self, pi: &[f64]) -> Vec<Vec<f64>> {
        let br = best_response(&MeanOutcome::Finite(pi.to_vec()), &self.game)
            .expect("lattice points are distributions");
        br.into_iter().map(|g| self.generator_potential(g)).collect()
    }
}
