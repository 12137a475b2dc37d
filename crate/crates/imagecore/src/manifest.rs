//! Dataset records and patient-level splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImageError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Segment,
    Detect,
    Translate,
    Enhance,
    Sr,
    Inpaint,
    Outpaint,
    Progress,
    Exemplar,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::Segment,
        TaskKind::Detect,
        TaskKind::Translate,
        TaskKind::Enhance,
        TaskKind::Sr,
        TaskKind::Inpaint,
        TaskKind::Outpaint,
        TaskKind::Progress,
        TaskKind::Exemplar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Segment => "segment",
            TaskKind::Detect => "detect",
            TaskKind::Translate => "translate",
            TaskKind::Enhance => "enhance",
            TaskKind::Sr => "sr",
            TaskKind::Inpaint => "inpaint",
            TaskKind::Outpaint => "outpaint",
            TaskKind::Progress => "progress",
            TaskKind::Exemplar => "exemplar",
        }
    }

    /// Tasks whose output is a palette-rendered mask or box overlay.
    pub fn is_parsing(self) -> bool {
        matches!(self, TaskKind::Segment | TaskKind::Detect)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ImageError::Manifest(format!("unknown task kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub patient_id: String,
    #[serde(default)]
    pub volume_id: Option<String>,
    pub task: TaskKind,
    pub input_refs: Vec<String>,
    pub target_ref: String,
    pub prompt: String,
    #[serde(default)]
    pub delta_t: Option<f64>,
    #[serde(default)]
    pub split: Split,
    /// Progression outcome category (`stable`, `recovery`, `progression`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Auxiliary files keyed by role, e.g. `lesion_mask` or `gt_mask`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SampleRecord {
    pub fn new(
        id: impl Into<String>,
        patient_id: impl Into<String>,
        task: TaskKind,
        input_refs: Vec<String>,
        target_ref: impl Into<String>,
        prompt: impl Into<String>,
    ) -> Self {
        SampleRecord {
            id: id.into(),
            patient_id: patient_id.into(),
            volume_id: None,
            task,
            input_refs,
            target_ref: target_ref.into(),
            prompt: prompt.into(),
            delta_t: None,
            split: Split::Unassigned,
            category: None,
            aux: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>) -> Self {
        DatasetManifest { records }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if r.patient_id.is_empty() {
                return Err(ImageError::Manifest(format!("record {} has an empty patient_id", r.id)));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(ImageError::Manifest(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.70, val: 0.15, test: 0.15 }
    }
}

/// Assigns every record to train/val/test by patient.
///
/// Patients are sorted, shuffled with `seed`, and cut by cumulative ratio.
/// Val and test get `floor(ratio * patients)`; the remainder goes to train.
pub fn patient_split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    if manifest.records.is_empty() {
        return Err(ImageError::Manifest("cannot split an empty manifest".into()));
    }
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || [ratios.train, ratios.val, ratios.test].iter().any(|&r| r < 0.0) {
        return Err(ImageError::Manifest(format!("split ratios must be non-negative and sum to 1, got {sum}")));
    }
    manifest.validate()?;
    if let Some(r) = manifest.records.iter().find(|r| r.split != Split::Unassigned) {
        return Err(ImageError::Manifest(format!("record {} is already assigned", r.id)));
    }

    let mut patients: Vec<&str> = manifest.patients().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let n = patients.len();
    let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_val - n_test;

    let assignment: BTreeMap<&str, Split> = patients
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (p, s)
        })
        .collect();

    let records = manifest
        .records
        .iter()
        .map(|r| SampleRecord { split: assignment[r.patient_id.as_str()], ..r.clone() })
        .collect();
    Ok(DatasetManifest { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(patients: usize, per_patient: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for p in 0..patients {
            for k in 0..per_patient {
                records.push(SampleRecord::new(
                    format!("r{p}_{k}"),
                    format!("p{p:04}"),
                    TaskKind::Segment,
                    vec![format!("in/{p}_{k}.png")],
                    format!("out/{p}_{k}.png"),
                    "segment the optic disc using red",
                ));
            }
        }
        DatasetManifest::new(records)
    }

    fn patient_counts(m: &DatasetManifest) -> [usize; 3] {
        let mut out = [0; 3];
        for (i, s) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
            out[i] = m.split(s).map(|r| r.patient_id.as_str()).collect::<BTreeSet<_>>().len();
        }
        out
    }

    #[test]
    fn twenty_patients() {
        let m = patient_split(&manifest(20, 3), SplitRatios::default(), 1).unwrap();
        assert_eq!(patient_counts(&m), [14, 3, 3]);
    }

    #[test]
    fn one_patient_goes_to_train() {
        let m = patient_split(&manifest(1, 5), SplitRatios::default(), 9).unwrap();
        assert!(m.records.iter().all(|r| r.split == Split::Train));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let src = manifest(50, 2);
        let a = patient_split(&src, SplitRatios::default(), 42).unwrap();
        let b = patient_split(&src, SplitRatios::default(), 42).unwrap();
        assert_eq!(a, b);
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &a.records {
            assert_eq!(*seen.entry(&r.patient_id).or_insert(r.split), r.split);
        }
    }

    #[test]
    fn errors() {
        assert!(patient_split(&DatasetManifest::default(), SplitRatios::default(), 0).is_err());
        let mut dup = manifest(2, 1);
        dup.records[1].id = dup.records[0].id.clone();
        assert!(patient_split(&dup, SplitRatios::default(), 0).is_err());
        let bad = SplitRatios { train: 0.5, val: 0.1, test: 0.1 };
        assert!(patient_split(&manifest(3, 1), bad, 0).is_err());
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let m = manifest(1, 1);
        let text = m.to_json().unwrap();
        assert_eq!(DatasetManifest::from_json(&text).unwrap(), m);
        let bad = text.replacen("\"prompt\"", "\"mystery\": 1, \"prompt\"", 1);
        assert!(DatasetManifest::from_json(&bad).is_err());
    }
}
