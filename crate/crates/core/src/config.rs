//! Run configuration documents.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::discretize::{MeshPolicy, PhysicsConfig};
use crate::error::{Error, Result};
use crate::experiments::{ExperimentKind, GeometryTemplate, RegimeSpec, SweepPlan};

/// Sweep parameters shared by all experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub regime: RegimeSpec,
    pub mesh: MeshPolicy,
    #[serde(default = "one")]
    pub levels: usize,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default = "three")]
    pub bands: usize,
    #[serde(default = "two_pi")]
    pub strip_length: f64,
    #[serde(default = "yes")]
    pub check_truncation: bool,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn three() -> usize {
    3
}

fn two_pi() -> f64 {
    2.0 * std::f64::consts::PI
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub geometry: GeometryTemplate,
    #[serde(default)]
    pub physics: PhysicsConfig,
    pub sweep: SweepSection,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.plan()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// The validated sweep plan.
    pub fn plan(&self) -> Result<SweepPlan> {
        let s = &self.sweep;
        let plan = SweepPlan {
            epsilons: s.epsilons.clone(),
            regime: s.regime,
            geometry: self.geometry,
            physics: self.physics,
            mesh: s.mesh,
            levels: s.levels,
            kappa: s.kappa,
            taus: s.taus.clone(),
            bands: s.bands,
            strip_length: s.strip_length,
            check_truncation: s.check_truncation,
            seed: self.seed,
        };
        plan.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("sweep.{m}")),
            other => other,
        })?;
        if let GeometryTemplate::Warped { delta, .. } = self.geometry {
            if !(delta.abs() < 1.0) {
                return Err(Error::Config(format!("geometry.delta: |{delta}| must be below 1")));
            }
        }
        let cell = matches!(
            self.experiment,
            ExperimentKind::BandSweep | ExperimentKind::BottomAsymptotics
        );
        if cell && self.geometry != GeometryTemplate::Periodic {
            return Err(Error::Config("geometry: cell experiments need the periodic geometry".into()));
        }
        let robin = matches!(plan.regime, RegimeSpec::Robin { .. });
        let needs_robin = !matches!(self.experiment, ExperimentKind::DirichletResolvent);
        if robin != needs_robin {
            return Err(Error::Config(format!(
                "sweep.regime: {} needs the {} regime",
                self.experiment.label(),
                if needs_robin { "robin" } else { "dirichlet" }
            )));
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BAND: &str = r#"{
        "experiment": "band_sweep",
        "sweep": {
            "epsilons": [0.2, 0.1],
            "regime": {"kind": "robin", "K": 10.0},
            "mesh": {"kind": "graded", "n": 16},
            "taus": [0.0, 0.25]
        },
        "output_dir": "out",
        "seed": 3
    }"#;

    #[test]
    fn minimal_band_config_parses() {
        let cfg = RunConfig::from_json_str(BAND).unwrap();
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.seed, 3);
        assert_eq!(plan.levels, 1);
        assert_eq!(plan.taus, vec![0.0, 0.25]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = BAND.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        let msg = RunConfig::from_json_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("colour"), "{msg}");
        let bad = BAND.replace("\"taus\"", "\"tau_grid\"");
        let msg = RunConfig::from_json_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("tau_grid"), "{msg}");
    }

    #[test]
    fn invalid_values_name_their_field() {
        let bad = BAND.replace("[0.2, 0.1]", "[0.1, 0.2]");
        let msg = RunConfig::from_json_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("sweep.epsilons"), "{msg}");
        let bad = BAND.replace("\"robin\", \"K\": 10.0", "\"dirichlet\", \"eta\": 0.3");
        let msg = RunConfig::from_json_str(&bad).unwrap_err().to_string();
        assert!(msg.contains("sweep.regime"), "{msg}");
    }
}
