//! The run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use pearl_core::data::ColumnSpec;
use pearl_core::inference::InferenceOptions;
use pearl_core::pearl::PearlConfig;
use pearl_core::simulation::{BaselineOptions, McConfig, Method, ScenarioSpec};
use pearl_core::value::ValueOptions;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Everything a command needs. Fields a command does not use are ignored by
/// it but still echoed, so one file can drive all four commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: ColumnSpec,
    /// Main output file; JSON reports go to stdout when unset.
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub pearl: PearlConfig,
    pub inference: InferenceOptions,
    /// 1-based coordinates; `test` defaults to the first, `simulate` to 1..=8.
    pub coordinates: Option<Vec<usize>>,
    pub value: ValueOptions,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: ColumnSpec::default(),
            output: None,
            seed: 1,
            pearl: PearlConfig::default(),
            inference: InferenceOptions::default(),
            coordinates: None,
            value: ValueOptions::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: ScenarioSpec,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub baseline: BaselineOptions,
    pub achieved_value: bool,
    pub value_inference: bool,
    pub oracle_draws: usize,
    pub reference_n: usize,
    pub reference_lambda: f64,
    pub alpha: f64,
    /// Directory receiving every replication's data and the raw records.
    pub dump: Option<PathBuf>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let mc = McConfig::default();
        SimulationConfig {
            scenario: mc.scenario,
            reps: mc.reps,
            methods: mc.methods,
            baseline: mc.baseline,
            achieved_value: mc.achieved_value,
            value_inference: mc.value_inference,
            oracle_draws: mc.oracle_draws,
            reference_n: mc.reference_n,
            reference_lambda: mc.reference_lambda,
            alpha: mc.alpha,
            dump: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    }

    pub fn input(&self) -> Result<&Path, Failure> {
        self.input
            .as_deref()
            .ok_or_else(|| Failure::validation("an input file is required (--input or \"input\" in the config)"))
    }

    pub fn test_coordinates(&self) -> Vec<usize> {
        self.coordinates.clone().unwrap_or_else(|| vec![1])
    }

    pub fn study(&self) -> McConfig {
        let s = &self.simulation;
        McConfig {
            scenario: s.scenario,
            reps: s.reps,
            methods: s.methods.clone(),
            pearl: self.pearl.clone(),
            baseline: s.baseline.clone(),
            inference: self.inference.clone(),
            coordinates: self
                .coordinates
                .clone()
                .unwrap_or_else(|| (1..=8.min(s.scenario.p)).collect()),
            achieved_value: s.achieved_value,
            value_inference: s.value_inference,
            value: self.value,
            oracle_draws: s.oracle_draws,
            reference_n: s.reference_n,
            reference_lambda: s.reference_lambda,
            alpha: s.alpha,
            seed: self.seed,
        }
    }
}
