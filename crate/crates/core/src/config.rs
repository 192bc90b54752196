//! JSON run configuration shared by the command-line subcommands.
//!
//! Every field has a default, so `{}` is a valid configuration. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esprm::EsprmConfig;
use crate::experiment::{ExperimentPlan, Method};
use crate::gmm::GmmSettings;
use crate::nuisance::{NuisanceFamily, NuisanceSettings, ScoreConfig};
use crate::scenario::{ScenarioKind, ScenarioSpec};
use crate::surrogate::{ErmSettings, PolicyClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario for `simulate` and oracle `eval`; sampled from the seed
    /// unless `scenario_spec` is given.
    pub scenario: ScenarioKind,
    pub scenario_spec: Option<ScenarioSpec>,
    /// Rows emitted by `simulate`.
    pub n: usize,
    pub policy: PolicyClass,
    pub method: Method,
    /// Fraction of rows used to fit nuisances when `fit` receives raw
    /// `(x, t, y)` data.
    pub tuning_fraction: f64,
    pub nuisance_family: NuisanceFamily,
    pub nuisance: NuisanceSettings,
    pub scores: ScoreConfig,
    pub erm: ErmSettings,
    pub gmm: GmmSettings,
    pub esprm: EsprmConfig,
    /// Covariate draws for oracle evaluation.
    pub mc_size: usize,
    pub experiment: ExperimentPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioKind::Linear,
            scenario_spec: None,
            n: 1000,
            policy: PolicyClass::Linear,
            method: Method::Erm,
            tuning_fraction: 0.5,
            nuisance_family: NuisanceFamily::Linear,
            nuisance: NuisanceSettings::default(),
            scores: ScoreConfig::default(),
            erm: ErmSettings::default(),
            gmm: GmmSettings::default(),
            esprm: EsprmConfig::default(),
            mc_size: 1_000_000,
            experiment: ExperimentPlan::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"epochs": 3}"#).is_err());
    }

    #[test]
    fn nested_overrides() {
        let c = RunConfig::from_json(
            r#"{"method": {"kind": "finite_gmm", "basis": {"kind": "polynomial", "degree": 2}},
                "experiment": {"reps": 3, "n_grid": [50]}}"#,
        )
        .unwrap();
        assert_eq!(c.experiment.reps, 3);
        assert_eq!(c.experiment.n_grid, vec![50]);
        assert!(matches!(c.method, Method::FiniteGmm { .. }));
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
