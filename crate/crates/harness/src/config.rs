//! JSON run configuration. Every section has defaults; CLI flags override
//! `seed`, `out` and `threads`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dataforge::{DegradationSpec, PhantomKind, PhantomSpec};
use imagecore::{SplitRatios, TaskKind};
use serde::{Deserialize, Serialize};
use worldsim::train::TrainConfig;
use worldsim::ModelConfig;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub forge: ForgeConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeConfig {
    /// Number of records.
    pub size: usize,
    /// Side length of every forged image.
    pub resolution: usize,
    /// Relative task weights; tasks not listed are never drawn.
    pub task_mix: BTreeMap<TaskKind, f64>,
    /// Fundus structures for segmentation records, by mask name.
    pub segment_structures: Vec<String>,
    /// Stable, recovery, progression.
    pub category_priors: [f64; 3],
    pub delta_t_months: Vec<f64>,
    pub growth: f32,
    pub progress_kind: PhantomKind,
    /// Consecutive records that share one patient (and one phantom).
    pub records_per_patient: usize,
    pub split: SplitRatios,
    /// Phantom template; width and height are replaced by `resolution`.
    pub phantom: PhantomSpec,
    pub degradation: DegradationSpec,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        let mut degradation = DegradationSpec::all_defaults();
        // magnitudes tuned for 128 px; halve the spatial ones for the 64 px default
        degradation.gaussian_blur = Some(1.0);
        if let Some(m) = degradation.motion_blur.as_mut() {
            m.length = [2.0, 6.0];
        }
        if let Some(s) = degradation.spots.as_mut() {
            s.radius = [1.5, 5.0];
        }
        degradation.combine = vec![
            dataforge::DegradationKind::Illumination,
            dataforge::DegradationKind::GaussianBlur,
            dataforge::DegradationKind::Spots,
        ];
        ForgeConfig {
            size: 100,
            resolution: 64,
            task_mix: [(TaskKind::Segment, 1.0)].into_iter().collect(),
            segment_structures: vec!["disc".into()],
            category_priors: [0.713, 0.163, 0.123],
            delta_t_months: vec![3.0, 6.0, 12.0],
            growth: dataforge::phantom::DEFAULT_GROWTH,
            progress_kind: PhantomKind::Fundus,
            records_per_patient: 1,
            split: SplitRatios::default(),
            phantom: PhantomSpec::default(),
            degradation,
        }
    }
}

pub const SEGMENT_STRUCTURES: [(&str, u16); 5] =
    [("disc", 1), ("cup", 2), ("vessels", 3), ("fovea", 4), ("lesions", 5)];

pub fn structure_class(name: &str) -> Option<u16> {
    SEGMENT_STRUCTURES.iter().find(|(n, _)| *n == name).map(|(_, id)| *id)
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(format!("forge: {m}")));
        if self.size == 0 {
            return bad("size must be positive".into());
        }
        if self.resolution < 32 || self.resolution % worldsim::model::IMAGE_MULTIPLE != 0 {
            return bad(format!("resolution {} must be >= 32 and a multiple of 8", self.resolution));
        }
        if self.task_mix.is_empty() || self.task_mix.values().any(|w| !(*w >= 0.0)) {
            return bad("task_mix needs non-negative weights".into());
        }
        if self.task_mix.values().sum::<f64>() <= 0.0 {
            return bad("task_mix weights sum to zero".into());
        }
        if self.segment_structures.is_empty() {
            return bad("segment_structures is empty".into());
        }
        if let Some(s) = self.segment_structures.iter().find(|s| structure_class(s).is_none()) {
            return bad(format!("unknown structure {s:?}"));
        }
        if self.category_priors.iter().any(|p| !(*p >= 0.0)) || self.category_priors.iter().sum::<f64>() <= 0.0 {
            return bad("category_priors must be non-negative and not all zero".into());
        }
        if self.delta_t_months.is_empty() || self.delta_t_months.iter().any(|d| !(*d >= 0.0)) {
            return bad("delta_t_months must be non-empty and >= 0".into());
        }
        if self.records_per_patient == 0 {
            return bad("records_per_patient must be positive".into());
        }
        if self.progress_kind == PhantomKind::Angio {
            return bad("progress_kind must be fundus or bscan".into());
        }
        self.phantom_spec(self.phantom.kind)?;
        self.degradation.validate()?;
        Ok(())
    }

    pub fn phantom_spec(&self, kind: PhantomKind) -> Result<PhantomSpec> {
        let spec = self.phantom.clone().with_size(self.resolution, self.resolution).with_kind(kind);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub model: ModelConfig,
    pub schedule: TrainConfig,
    /// Stop once the global step reaches this value (the checkpoint can be resumed).
    pub max_steps: Option<u64>,
    /// Seed for parameter initialization; the run seed when absent.
    pub init_seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { model: ModelConfig::default(), schedule: TrainConfig::default(), max_steps: None, init_seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Sample the model for every record.
    Model,
    /// Use the ground truth as the prediction (pipeline check).
    Oracle,
    /// Paired stable/progression samples of each progression baseline.
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub sample_steps: usize,
    /// Evaluation side length; the checkpoint's stage-1 resolution when absent.
    pub resolution: Option<usize>,
    pub max_samples: Option<usize>,
    /// Dilation of the baseline lesion mask for counterfactual locality.
    pub lesion_dilation: usize,
    pub parse_tol: f32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: EvalMode::Model,
            sample_steps: 20,
            resolution: None,
            max_samples: None,
            lesion_dilation: 3,
            parse_tol: imagecore::DEFAULT_PARSE_TOL,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.resolution {
            if r == 0 || r % worldsim::model::IMAGE_MULTIPLE != 0 {
                return Err(HarnessError::Config(format!("eval: resolution {r} must be a positive multiple of 8")));
            }
        }
        if self.sample_steps > 100_000 || !(self.parse_tol > 0.0) {
            return Err(HarnessError::Config("eval: bad sample_steps or parse_tol".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportEntry {
    pub name: String,
    pub bundle: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Bundles to compare, one table row per entry.
    pub models: Vec<ReportEntry>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| HarnessError::Config("no seed: pass --seed or set \"seed\" in the config".into()))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set \"out\"".into()))
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.out()?;
        if self.threads == Some(0) {
            return Err(HarnessError::Config("threads must be >= 1".into()));
        }
        let as_config = |e: HarnessError| match e {
            HarnessError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Config(other.to_string()),
        };
        self.forge.validate().map_err(as_config)?;
        self.train.model.validate().map_err(|e| as_config(e.into()))?;
        self.train.schedule.validate().map_err(|e| as_config(e.into()))?;
        self.eval.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_all_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 7, "out": "x"}"#).unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"forge": {"sise": 7}}"#).is_err());
    }

    #[test]
    fn task_mix_parses_by_name() {
        let c: RunConfig = serde_json::from_str(r#"{"forge": {"task_mix": {"segment": 1.0, "progress": 2}}}"#).unwrap();
        assert_eq!(c.forge.task_mix[&TaskKind::Progress], 2.0);
    }
}
