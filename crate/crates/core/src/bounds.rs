//! Closed-form regret bounds, the discretised mixture certificate, and the
//! comparison against the NormalHedge bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::quantile_loss;
use crate::potential::EtaNode;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps must lie in (0, 1], got {eps}")))
    }
}

/// Regret to the best of `n` experts for the single-rate learner tuned to
/// horizon `t`: `√(2 T ln N)`.
pub fn best_expert_bound(t: f64, n: usize) -> Result<f64> {
    match n {
        0 => Err(Error::InvalidParameter("need at least one expert".into())),
        1 => Ok(0.0),
        _ => Ok((2.0 * t * (n as f64).ln()).sqrt()),
    }
}

/// Anytime ε-quantile regret bound of the time-varying learner:
/// `2√(T ln(1/ε)) + 7√T`.
pub fn quantile_bound(t: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(2.0 * (t * (1.0 / eps).ln()).sqrt() + 7.0 * t.sqrt())
}

/// End state of a mixture run, enough to re-evaluate its certificate at any ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub t: usize,
    pub learner_loss: f64,
    pub expert_losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub grid: Vec<EtaNode>,
}

/// `Σ_j w_j exp((L_T − L^ε) η_j − T η_j²/2)`, compared against `(1/ε)(1 + slack)`.
///
/// `grid` must be the grid the run used.
pub fn check_mixture_certificate(
    summary: &MixtureSummary,
    grid: &[EtaNode],
    eps: f64,
    slack: f64,
) -> Result<(f64, bool)> {
    check_eps(eps)?;
    if grid != summary.grid.as_slice() {
        return Err(Error::GridMismatch);
    }
    let l_eps = quantile_loss(&summary.expert_losses, &summary.weights, eps)?;
    let value = mixture_certificate_value(grid, summary.t, summary.learner_loss - l_eps);
    Ok((value, value <= (1.0 + slack) / eps))
}

/// The certificate sum for a given regret.
pub fn mixture_certificate_value(grid: &[EtaNode], t: usize, regret: f64) -> f64 {
    let t = t as f64;
    grid.iter()
        .map(|nd| nd.weight * (regret * nd.eta - 0.5 * t * nd.eta * nd.eta).exp())
        .sum()
}

/// `Σ u_n ln(u_n / p_n)`, with `0 ln 0 = 0`.
pub fn relative_entropy(u: &[f64], p: &[f64]) -> Result<f64> {
    if u.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: u.len(),
        });
    }
    let mut s = 0.0;
    for (&ui, &pi) in u.iter().zip(p) {
        if ui < 0.0 || pi <= 0.0 {
            return Err(Error::InvalidWeights("u must be nonnegative and p positive".into()));
        }
        if ui > 0.0 {
            s += ui * (ui / pi).ln();
        }
    }
    Ok(s)
}

/// Bounds from the literature, each carrying its own parameters.
///
/// Most values are regret terms added to a reference loss. `Aggregating` is a
/// bound on the learner's total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "snake_case")]
pub enum ReferenceBound {
    /// `√(2T ln N) + √(ln N / 8)`, uniform in T, best expert only.
    UniformBestExpert { t: f64, n: usize },
    /// `√(1 + ln 1/ε) · √(3(1+50δ)T + (16 ln²N/δ)(10.2/δ² + ln N))`.
    NormalHedge { t: f64, n: usize, eps: f64, delta: f64 },
    /// `(1/c)√T ln(1/ε) + c√T`.
    WeightedAverage { t: f64, eps: f64, c: f64 },
    /// `c L^ε + (c/η) ln(1/ε)`.
    Aggregating { l_eps: f64, eps: f64, c: f64, eta: f64 },
    /// `(1 + 1/ln T)√(2T ln(1/ε) + 5T ln ln T)`, without its `O(ln 1/ε)` tail.
    MixtureExplicit { t: f64, eps: f64 },
    /// `√(T ln 1/ε) + ln²N` with the unknown constant set to one.
    NominalShape { t: f64, eps: f64, n: usize },
    /// `2√(T Σ u_n ln(u_n/p_n)) + 7√T`, regret to the `u`-average expert.
    WeightedPrior { t: f64, u: Vec<f64>, p: Vec<f64> },
}

impl ReferenceBound {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceBound::UniformBestExpert { .. } => "uniform_best_expert",
            ReferenceBound::NormalHedge { .. } => "normal_hedge",
            ReferenceBound::WeightedAverage { .. } => "weighted_average",
            ReferenceBound::Aggregating { .. } => "aggregating",
            ReferenceBound::MixtureExplicit { .. } => "mixture_explicit",
            ReferenceBound::NominalShape { .. } => "nominal_shape",
            ReferenceBound::WeightedPrior { .. } => "weighted_prior",
        }
    }

    /// False for shapes whose constants are unknown; those are for plots only.
    pub fn assertable(&self) -> bool {
        !matches!(
            self,
            ReferenceBound::MixtureExplicit { .. } | ReferenceBound::NominalShape { .. }
        )
    }

    pub fn value(&self) -> Result<f64> {
        match *self {
            ReferenceBound::UniformBestExpert { t, n } => {
                if n == 0 {
                    return Err(Error::InvalidParameter("need at least one expert".into()));
                }
                let ln_n = (n as f64).ln();
                Ok((2.0 * t * ln_n).sqrt() + (ln_n / 8.0).sqrt())
            }
            ReferenceBound::NormalHedge { t, n, eps, delta } => {
                check_eps(eps)?;
                if !(delta > 0.0 && delta <= 0.5) {
                    return Err(Error::InvalidParameter(format!(
                        "delta must lie in (0, 1/2], got {delta}"
                    )));
                }
                if n == 0 {
                    return Err(Error::InvalidParameter("need at least one expert".into()));
                }
                let ln_n = (n as f64).ln();
                let inner = 3.0 * (1.0 + 50.0 * delta) * t
                    + 16.0 * ln_n * ln_n / delta * (10.2 / (delta * delta) + ln_n);
                Ok((1.0 + (1.0 / eps).ln()).sqrt() * inner.sqrt())
            }
            ReferenceBound::WeightedAverage { t, eps, c } => {
                check_eps(eps)?;
                if !(c > 0.0) {
                    return Err(Error::InvalidParameter("c must be positive".into()));
                }
                Ok(t.sqrt() * (1.0 / eps).ln() / c + c * t.sqrt())
            }
            ReferenceBound::Aggregating { l_eps, eps, c, eta } => {
                check_eps(eps)?;
                if !(c >= 1.0 && eta > 0.0) {
                    return Err(Error::InvalidParameter("need c >= 1 and eta > 0".into()));
                }
                Ok(c * l_eps + c / eta * (1.0 / eps).ln())
            }
            ReferenceBound::MixtureExplicit { t, eps } => {
                check_eps(eps)?;
                if t < 16.0 {
                    return Err(Error::InvalidParameter(
                        "ln ln T is only positive for T >= 16".into(),
                    ));
                }
                let lt = t.ln();
                Ok((1.0 + 1.0 / lt) * (2.0 * t * (1.0 / eps).ln() + 5.0 * t * lt.ln()).sqrt())
            }
            ReferenceBound::NominalShape { t, eps, n } => {
                check_eps(eps)?;
                let ln_n = (n.max(1) as f64).ln();
                Ok((t * (1.0 / eps).ln()).sqrt() + ln_n * ln_n)
            }
            ReferenceBound::WeightedPrior { t, ref u, ref p } => {
                let kl = relative_entropy(u, p)?;
                Ok(2.0 * (t * kl.max(0.0)).sqrt() + 7.0 * t.sqrt())
            }
        }
    }
}

/// 100 log-spaced values `δ_i = 10⁻³ · 500^{(i+1)/100}`, ending at ½.
pub fn default_delta_grid() -> Vec<f64> {
    (0..100)
        .map(|i| 1e-3 * 500f64.powf((i + 1) as f64 / 100.0))
        .collect()
}

/// Smallest NormalHedge bound over `deltas`.
pub fn normal_hedge_min(t: f64, n: usize, eps: f64, deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("empty delta grid".into()));
    }
    let mut best = f64::INFINITY;
    for &delta in deltas {
        best = best.min(ReferenceBound::NormalHedge { t, n, eps, delta }.value()?);
    }
    Ok(best)
}

const CROSSOVER_T_MAX: u64 = 1 << 60;

/// Largest integer horizon at which the quantile bound is no worse than the
/// best NormalHedge bound over `deltas`.
///
/// The comparison flips once: both bounds squared and divided by `T` give a
/// constant against a quantity decreasing in `T`.
pub fn crossover(n: usize, eps: f64, deltas: &[f64]) -> Result<u64> {
    if n < 2 {
        return Err(Error::InvalidParameter("crossover needs N >= 2".into()));
    }
    let better = |t: u64| -> Result<bool> {
        let t = t as f64;
        Ok(quantile_bound(t, eps)? <= normal_hedge_min(t, n, eps, deltas)?)
    };
    if !better(1)? {
        return Err(Error::NoCrossover(format!(
            "quantile bound already worse at T = 1 (N = {n}, eps = {eps})"
        )));
    }
    if better(CROSSOVER_T_MAX)? {
        return Err(Error::NoCrossover(format!(
            "quantile bound still better at T = {CROSSOVER_T_MAX} (N = {n}, eps = {eps})"
        )));
    }
    let (mut lo, mut hi) = (1u64, CROSSOVER_T_MAX);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if better(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::mixture_grid;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let b = best_expert_bound(100.0, 10).unwrap();
        assert!((b - 21.4597).abs() < 1e-4, "{b}");
        assert_eq!(best_expert_bound(55.0, 1).unwrap(), 0.0);
        assert!(best_expert_bound(5.0, 0).is_err());
        let q = best_expert_bound(400.0, 7).unwrap() / best_expert_bound(100.0, 7).unwrap();
        assert!((q - 2.0).abs() < 1e-12);

        let b = quantile_bound(10_000.0, 0.1).unwrap();
        let direct = 2.0 * (1e4 * 10f64.ln()).sqrt() + 700.0;
        assert!((b - direct).abs() < 1e-9);
        assert!((b - 1003.49).abs() < 5e-3, "{b}");
        assert_eq!(quantile_bound(49.0, 1.0).unwrap(), 49.0);
        assert!((quantile_bound(1.0, (-1.0f64).exp()).unwrap() - 9.0).abs() < 1e-12);
        assert!(quantile_bound(10.0, 0.0).is_err());
        assert!(quantile_bound(10.0, 1.5).is_err());
    }

    #[test]
    fn reference_values() {
        let v = ReferenceBound::UniformBestExpert { t: 100.0, n: 10 }.value().unwrap();
        assert!((v - 21.996).abs() < 1e-3, "{v}");

        let ln2 = 2f64.ln();
        let want = (1.0 + ln2).sqrt()
            * (3.0 * 26.0 * 100.0 + (16.0 * ln2 * ln2 / 0.5) * (10.2 / 0.25 + ln2)).sqrt();
        let v = ReferenceBound::NormalHedge { t: 100.0, n: 2, eps: 0.5, delta: 0.5 }
            .value()
            .unwrap();
        assert!((v - want).abs() < 1e-9);

        let t: f64 = 250.0;
        let eps: f64 = 0.03;
        let v = ReferenceBound::WeightedAverage { t, eps, c: 1.0 }.value().unwrap();
        assert!((v - (t.sqrt() * (1.0 / eps).ln() + t.sqrt())).abs() < 1e-9);

        let bad = ReferenceBound::NormalHedge { t: 1.0, n: 2, eps: 0.5, delta: 0.6 };
        assert!(bad.value().is_err());
        assert!(ReferenceBound::MixtureExplicit { t: 15.0, eps: 0.5 }.value().is_err());
        assert!(!ReferenceBound::MixtureExplicit { t: 16.0, eps: 0.5 }.assertable());
        assert!(!ReferenceBound::NominalShape { t: 16.0, eps: 0.5, n: 3 }.assertable());
        assert!(ReferenceBound::Aggregating { l_eps: 1.0, eps: 0.5, c: 1.0, eta: 1.0 }.assertable());
    }

    #[test]
    fn weighted_prior_on_uniform_quantile_set() {
        // k-uniform u against uniform p
        let n = 12;
        let p = vec![1.0 / n as f64; n];
        for k in 1..=n {
            let u: Vec<f64> = (0..n).map(|i| if i < k { 1.0 / k as f64 } else { 0.0 }).collect();
            let kl = relative_entropy(&u, &p).unwrap();
            assert!((kl - (n as f64 / k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_certificate() {
        let grid = mixture_grid(1e-4, 32).unwrap();
        let mass: f64 = grid.iter().map(|nd| nd.weight).sum();
        let mut s = MixtureSummary {
            t: 100,
            learner_loss: 40.0,
            expert_losses: vec![40.0, 45.0, 50.0, 55.0],
            weights: vec![0.25; 4],
            grid: grid.clone(),
        };
        // L_T = L^ε: every exponent is nonpositive
        let (v, ok) = check_mixture_certificate(&s, &grid, 0.25, 0.0).unwrap();
        assert!(ok && v <= mass);

        // fabricated over-regret: far beyond what the mixture allows at ε = 0.1
        let eps = 0.1;
        s.weights = vec![0.1; 10];
        s.expert_losses = vec![0.0; 10];
        s.learner_loss = 2.0 * (100.0 * (1.0f64 / eps).ln()).sqrt() + 60.0;
        let (v, ok) = check_mixture_certificate(&s, &grid, eps, 1e-6).unwrap();
        assert!(!ok && v > 1.0 / eps, "{v}");

        let other = mixture_grid(1e-4, 16).unwrap();
        assert_eq!(check_mixture_certificate(&s, &other, eps, 0.0), Err(Error::GridMismatch));
    }

    #[test]
    fn delta_grid_shape() {
        let d = default_delta_grid();
        assert_eq!(d.len(), 100);
        assert!(d[0] > 1e-3);
        assert!((d[99] - 0.5).abs() < 1e-12);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn crossover_sign_and_search() {
        let d = default_delta_grid();
        let t = 1e5;
        assert!(quantile_bound(t, 0.05).unwrap() < normal_hedge_min(t, 100, 0.05, &d).unwrap());
        for n in [2usize, 10, 100] {
            for eps in [0.5, 0.1, 0.01] {
                let ts = crossover(n, eps, &d).unwrap();
                let at = |t: u64| {
                    quantile_bound(t as f64, eps).unwrap()
                        <= normal_hedge_min(t as f64, n, eps, &d).unwrap()
                };
                assert!(at(ts) && !at(ts + 1), "n={n} eps={eps} T*={ts}");
            }
        }
        assert!(crossover(1, 0.1, &d).is_err());
    }

    proptest! {
        #[test]
        fn quantile_bound_monotone(t in 1.0f64..1e6, dt in 1e-3f64..1e3, e in 1e-6f64..1.0, de in 0.0f64..1.0) {
            let e2 = (e + de).min(1.0);
            prop_assert!(quantile_bound(t, e2).unwrap() <= quantile_bound(t, e).unwrap());
            prop_assert!(quantile_bound(t + dt, e).unwrap() > quantile_bound(t, e).unwrap());
        }

        #[test]
        fn best_expert_bound_monotone(t in 1.0f64..1e6, dt in 1e-3f64..1e3, n in 2usize..10_000) {
            prop_assert!(best_expert_bound(t + dt, n).unwrap() > best_expert_bound(t, n).unwrap());
            prop_assert!(best_expert_bound(t, n + 1).unwrap() > best_expert_bound(t, n).unwrap());
        }
    }
}
