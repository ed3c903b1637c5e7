//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scoreflow::metrics::W2Method;
use scoreflow::sampler::{Initialization, SamplerConfig, ScoreOracle};
use scoreflow::schedule::{Family, Schedule};
use scoreflow::target::{
    estimate_l0, estimate_l1, verify_weak_concavity, ConstantProvenance, GaussianMixture, GridSpec, PairSampling,
    Provenance, TargetConstants,
};

use crate::CliError;

/// Regularity constants as declared in a config. `l0`, `l1`, `x0_norm` and
/// `score_at_origin` may be left out: `x0_norm` and `score_at_origin` are
/// then computed from the target, `l0` and `l1` estimated on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    pub alpha0: f64,
    pub m0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
    #[serde(default)]
    pub score_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_at_origin: Option<f64>,
    /// Number of sampled pairs for the weak-concavity check; zero skips it.
    #[serde(default)]
    pub verify_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub t_end: f64,
    pub k_steps: usize,
    pub n_samples: usize,
    #[serde(default = "exact")]
    pub score: ScoreOracle,
    #[serde(default)]
    pub init: Initialization,
}

fn exact() -> ScoreOracle {
    ScoreOracle::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    /// Chosen from the target when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<W2Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub target: GaussianMixture,
    pub constants: ConstantsSpec,
    pub schedule: Family,
    pub sampler: SamplerSettings,
    #[serde(default = "no_metric")]
    pub metric: MetricSettings,
}

fn no_metric() -> MetricSettings {
    MetricSettings { method: None }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.schedule()?;
        cfg.sampler_config()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        Ok(Schedule::new(self.schedule)?)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig, CliError> {
        let s = &self.sampler;
        Ok(SamplerConfig::new(self.schedule()?, self.target.clone(), s.t_end, s.k_steps)?
            .with_score(s.score)
            .with_init(s.init)
            .with_seed(self.seed))
    }

    /// The W2 method: as configured, else exact in 1-D, the Gaussian closed
    /// form for a single Gaussian, per coordinate for product mixtures and
    /// sliced otherwise.
    pub fn metric(&self) -> W2Method {
        self.metric.method.unwrap_or_else(|| {
            let g = &self.target;
            if g.dim() == 1 {
                W2Method::Exact1d
            } else if g.n_components() == 1 {
                W2Method::GaussianClosedForm
            } else if g.is_product_form() {
                W2Method::Coordinatewise
            } else {
                W2Method::auto(g.dim())
            }
        })
    }

    /// Fills in omitted constants and records where each one came from.
    ///
    /// The score error used is the larger of the declared one and that of
    /// the configured score oracle, so the bound covers the run.
    pub fn resolve_constants(&self) -> Result<TargetConstants, CliError> {
        let c = &self.constants;
        let g = &self.target;
        let mut prov = ConstantProvenance::default();
        let grid = GridSpec::default_for(g.dim());
        let l0 = match c.l0 {
            Some(v) => v,
            None => {
                prov.l0 = Provenance::Estimated;
                estimate_l0(g, &grid)?.value
            }
        };
        let l1 = match c.l1 {
            Some(v) => v,
            None => {
                prov.l1 = Provenance::Estimated;
                let s = &self.sampler;
                estimate_l1(g, &self.schedule()?, s.t_end, s.t_end / s.k_steps.max(1) as f64, &grid)?.value
            }
        };
        let x0_norm = c.x0_norm.unwrap_or_else(|| {
            prov.x0_norm = Provenance::Derived;
            g.x0_l2_norm()
        });
        let score_at_origin = c.score_at_origin.unwrap_or_else(|| {
            prov.score_at_origin = Provenance::Derived;
            g.score_at_origin_norm()
        });
        let oracle_err = self.sampler.score.score_error();
        if oracle_err > c.score_err {
            prov.score_err = Provenance::Derived;
        }
        if c.verify_pairs > 0 {
            let check = verify_weak_concavity(g, c.alpha0, c.m0, &PairSampling::for_mixture(g, c.verify_pairs, self.seed))?;
            if let Some(ce) = check.counterexample.filter(|_| !check.verified) {
                return Err(CliError::Config(format!(
                    "weak concavity fails for alpha0 = {}, M0 = {} at x = {:?}, y = {:?} ({} > {})",
                    c.alpha0, c.m0, ce.x, ce.y, ce.lhs, ce.rhs
                )));
            }
            prov.alpha0 = Provenance::Verified;
            prov.m0 = Provenance::Verified;
        }
        let out = TargetConstants {
            alpha0: c.alpha0,
            m0: c.m0,
            l0,
            l1,
            score_err: c.score_err.max(oracle_err),
            x0_norm,
            score_at_origin,
            dim: g.dim(),
            provenance: prov,
        };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GAUSSIAN: &str = r#"
seed = 7

[target]
weights = [1.0]
means = [[0.0]]
variances = [[1.0]]

[constants]
alpha0 = 1.0
m0 = 0.0
l0 = 1.0
l1 = 0.0

[schedule]
family = "ou"

[sampler]
t_end = 3.0
k_steps = 300
n_samples = 1000
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::parse(GAUSSIAN).unwrap();
        assert_eq!(cfg.sampler.score, ScoreOracle::Exact);
        assert_eq!(cfg.metric(), W2Method::Exact1d);
        let again = ExperimentConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn derived_constants_are_marked() {
        let cfg = ExperimentConfig::parse(GAUSSIAN).unwrap();
        let c = cfg.resolve_constants().unwrap();
        assert_eq!(c.x0_norm, 1.0);
        assert_eq!(c.provenance.x0_norm, Provenance::Derived);
        assert_eq!(c.provenance.alpha0, Provenance::User);
    }

    #[test]
    fn bad_weights_name_the_invariant() {
        let text = GAUSSIAN.replace("weights = [1.0]", "weights = [0.7]");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("weights"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::parse(&format!("{GAUSSIAN}\n[extra]\nx = 1\n")).is_err());
    }
}
