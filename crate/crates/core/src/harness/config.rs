//! Run configuration: JSON in, validated before anything runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{default_eps_grid, Decision, ExpertPool, GameSpec};
use crate::harness::env::EnvironmentSpec;
use crate::learners::{LearnerConfig, LearnerVariant};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DEFCAST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub game: GameSpec,
    pub learner: LearnerConfig,
    /// Prior weights; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Fixed expert decisions (generator mixtures), finite games only.
    #[serde(default)]
    pub experts: Option<Vec<Vec<f64>>>,
    pub environment: EnvironmentSpec,
    /// Number of rounds.
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    /// ε values to report; derived from the pool when absent.
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    #[serde(default)]
    pub stem: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn num_experts(&self) -> usize {
        match &self.game {
            GameSpec::Dtol { n } => *n,
            GameSpec::FiniteConvex(_) => self.experts.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn pool(&self) -> Result<ExpertPool> {
        match &self.weights {
            Some(w) => ExpertPool::new(w.clone()),
            None => Ok(ExpertPool::uniform(self.num_experts())),
        }
    }

    pub fn expert_decisions(&self) -> Result<Vec<Decision>> {
        match &self.experts {
            Some(es) => es.iter().map(|e| Decision::new(e.clone())).collect(),
            None => Ok(Vec::new()),
        }
    }

    pub fn eps_grid(&self) -> Result<Vec<f64>> {
        let pool = self.pool()?;
        Ok(match &self.eps_grid {
            Some(g) => g.clone(),
            None => default_eps_grid(pool.len(), pool.total()),
        })
    }

    /// Seed after applying the environment override.
    pub fn effective_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
            Err(_) => Ok(self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        let n = self.num_experts();
        if n == 0 {
            return Err(Error::Config("need at least one expert".into()));
        }
        match (&self.game, &self.experts) {
            (GameSpec::Dtol { .. }, Some(_)) => {
                return Err(Error::Config("DTOL experts are the actions; drop `experts`".into()))
            }
            (GameSpec::FiniteConvex(g), Some(es)) => {
                for e in es {
                    if e.len() != g.num_generators() {
                        return Err(Error::Config(format!(
                            "expert decisions need {} weights, got {}",
                            g.num_generators(),
                            e.len()
                        )));
                    }
                    Decision::new(e.clone()).map_err(|e| Error::Config(e.to_string()))?;
                }
            }
            _ => {}
        }
        let pool = self.pool().map_err(|e| Error::Config(e.to_string()))?;
        if pool.len() != n {
            return Err(Error::Config(format!(
                "{} weights for {n} experts",
                pool.len()
            )));
        }
        if let LearnerVariant::DfaFixed { eta: None, horizon: None } = self.learner.variant {
            return Err(Error::Config(
                "dfa_fixed needs a known horizon or an explicit eta".into(),
            ));
        }
        self.learner
            .solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.environment.validate(&self.game, n)?;
        for &eps in self.eps_grid()?.iter() {
            if !(eps > 0.0 && eps <= pool.total() + 1e-12) {
                return Err(Error::Config(format!(
                    "eps {eps} outside (0, {}]",
                    pool.total()
                )));
            }
        }
        Ok(())
    }
}
