//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use pat_core::medium::PmlSettings;
use pat_core::operators::AdjointSchedule;
use pat_core::recon::{Method, ReconSettings, DEFAULT_PROX_ITERATIONS};
use pat_core::scenarios::DEFAULT_NOISE_REL;
use pat_core::solver::DEFAULT_CFL;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

/// Which experiment to build. `custom` reads the medium, sensor mask and
/// optional ground truth from field files on the full grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ScenarioConfig {
    #[serde(rename = "I")]
    I { n: usize, pml: Option<usize> },
    #[serde(rename = "II")]
    II { n: usize, pml: Option<usize> },
    /// Two-material check instance small enough for dense assembly.
    #[serde(rename = "layered")]
    Layered { n: usize, pml: usize },
    #[serde(rename = "custom")]
    Custom {
        /// Full grid dimensions including the absorbing layer.
        dims: Vec<usize>,
        spacing: f64,
        pml: usize,
        c0: PathBuf,
        rho0: PathBuf,
        /// Non-zero entries mark sensor points.
        sensors: PathBuf,
        /// Interior ground truth.
        p0: Option<PathBuf>,
    },
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::II { n: 128, pml: None }
    }
}

/// Time axis: explicit `nt` (with `dt`, or `dt` from the CFL number), or
/// derived from a CFL number and an end time (default: the slowest wave
/// crosses the domain 1.5 times).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub cfl: f64,
    pub t_end: Option<f64>,
    pub nt: Option<usize>,
    pub dt: Option<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            cfl: DEFAULT_CFL,
            t_end: None,
            nt: None,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmlConfig {
    /// Zero switches absorption off while keeping the layer.
    pub alpha_max: f64,
    pub exponent: f64,
}

impl Default for PmlConfig {
    fn default() -> Self {
        let d = PmlSettings::default();
        Self {
            alpha_max: d.alpha_max,
            exponent: d.exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub name: Method,
    pub iterations: usize,
    pub eta_factor: f64,
    pub lambda: f64,
    pub prox_iterations: usize,
    /// Skip power iteration and use this value of `‖A*A‖`.
    pub theta: Option<f64>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        let d = ReconSettings::default();
        Self {
            name: d.method,
            iterations: d.iterations,
            eta_factor: d.eta_factor,
            lambda: d.lambda,
            prox_iterations: DEFAULT_PROX_ITERATIONS,
            theta: None,
        }
    }
}

impl MethodConfig {
    pub fn settings(&self) -> ReconSettings {
        ReconSettings {
            method: self.name,
            iterations: self.iterations,
            eta_factor: self.eta_factor,
            lambda: self.lambda,
            prox_iterations: self.prox_iterations,
            project_output: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub trials: usize,
    pub max_log10: f64,
    pub median_log10: f64,
    pub dense_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            max_log10: -2.5,
            median_log10: -3.5,
            dense_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub time: TimeConfig,
    pub pml: PmlConfig,
    /// Reference sound speed of the k-space correction; defaults to max c0.
    pub c_ref: Option<f64>,
    pub smoothing: bool,
    pub adjoint_schedule: AdjointSchedule,
    pub precision: Precision,
    pub method: MethodConfig,
    pub noise_rel: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            time: TimeConfig::default(),
            pml: PmlConfig::default(),
            c_ref: None,
            smoothing: true,
            adjoint_schedule: AdjointSchedule::Shifted,
            precision: Precision::F32,
            method: MethodConfig::default(),
            noise_rel: DEFAULT_NOISE_REL,
            seed: 0,
            out: PathBuf::from("out"),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Usage(format!("config key '{key}': {why}")));
        if !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return bad("noise_rel", "must be a finite non-negative number");
        }
        if !(self.time.cfl > 0.0) {
            return bad("time.cfl", "must be positive");
        }
        if self.time.dt.is_some() && self.time.nt.is_none() {
            return bad("time.dt", "needs an explicit 'nt'");
        }
        if self.time.nt.is_some() && self.time.t_end.is_some() {
            return bad("time.t_end", "conflicts with an explicit 'nt'");
        }
        if self.verify.trials < 1 {
            return bad("verify.trials", "must be at least 1");
        }
        self.method
            .settings()
            .validate()
            .map_err(|e| CliError::Usage(format!("config key 'method': {e}")))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Hash of the fields that determine the imaging operator.
    pub fn operator_hash(&self) -> String {
        let key = serde_json::json!({
            "scenario": self.scenario,
            "time": self.time,
            "pml": self.pml,
            "c_ref": self.c_ref,
            "smoothing": self.smoothing,
            "adjoint_schedule": self.adjoint_schedule,
            "precision": self.precision,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_json(r#"{"noise_rell": 0.1}"#).unwrap_err();
        assert!(e.to_string().contains("noise_rell"), "{e}");
        let e = RunConfig::from_json(r#"{"method": {"lamda": 0.1}}"#).unwrap_err();
        assert!(e.to_string().contains("lamda"), "{e}");
        let e = RunConfig::from_json(r#"{"scenario": {"kind": "II", "n": 128, "size": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("size"), "{e}");
    }

    #[test]
    fn method_names_and_values() {
        let c = RunConfig::from_json(r#"{"method": {"name": "LS+", "iterations": 7}, "precision": "f64"}"#).unwrap();
        assert_eq!(c.method.name, Method::LsPlus);
        assert_eq!(c.method.iterations, 7);
        assert_eq!(c.precision, Precision::F64);
        assert!(RunConfig::from_json(r#"{"method": {"eta_factor": 2.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"time": {"nt": 10}}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"time": {"dt": 1e-7}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"time": {"nt": 10, "t_end": 1e-5}}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.operator_hash(), b.operator_hash());
    }
}
