//! `eval`: score a checkpoint (or the ground truth) on the test split and
//! write an evaluation bundle.
//!
//! Bundle layout:
//! - `bundle.json`: run description and the list of tasks
//! - `metrics/<task>.csv`: per-sample rows (`sample_id,metric,value`)
//! - `metrics/<task>.aggregates.json`: mean, s.d. and count per metric
//! - `failures.csv`: samples that could not be scored, with the error text
//! - `artifacts/`: predictions and progression change maps

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dataforge::builders::progress_prompt;
use dataforge::{derive_seed, FollowupCategory};
use imagecore::io::write_png;
use imagecore::{Image, LabelMask, Split, TaskKind};
use metrics::{render_change_map, signed_change_map, tissue_mask, MetricReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use worldsim::checkpoint::Checkpoint;
use worldsim::scoring::{score, EvalTarget};
use worldsim::train::TrainExample;
use worldsim::{Model, Prompt};

use crate::config::{EvalMode, RunConfig};
use crate::data::{load_example, open_manifest};
use crate::error::{HarnessError, IoContext, Result};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const FAILURES_FILE: &str = "failures.csv";
const EVAL_TAG: u64 = 0x4556_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub mode: EvalMode,
    pub resolution: Option<usize>,
    pub sample_steps: usize,
    pub seed: u64,
    pub records: usize,
    pub failures: usize,
    pub tasks: Vec<String>,
}

/// Per-task metric reports plus the run description.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub info: BundleInfo,
    pub reports: BTreeMap<String, MetricReport>,
}

fn metrics_dir(dir: &Path) -> PathBuf {
    dir.join("metrics")
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mdir = metrics_dir(dir);
        std::fs::create_dir_all(&mdir).at(&mdir)?;
        let mut info = self.info.clone();
        info.tasks = self.reports.keys().cloned().collect();
        info.failures = self.reports.values().map(|r| r.failures.len()).sum();
        for (task, report) in &self.reports {
            report.write_csv(mdir.join(format!("{task}.csv")))?;
            report.write_aggregates_json(mdir.join(format!("{task}.aggregates.json")))?;
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "task", "reason"]).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        for (task, report) in &self.reports {
            for f in &report.failures {
                w.write_record([f.sample_id.as_str(), task, &f.reason]).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let fpath = dir.join(FAILURES_FILE);
        std::fs::write(&fpath, bytes).at(&fpath)?;
        let ipath = dir.join(BUNDLE_FILE);
        std::fs::write(&ipath, serde_json::to_string_pretty(&info)?).at(&ipath)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Bundle> {
        let ipath = dir.join(BUNDLE_FILE);
        let info: BundleInfo = serde_json::from_str(&std::fs::read_to_string(&ipath).at(&ipath)?)?;
        let mut reports = BTreeMap::new();
        for task in &info.tasks {
            let report = MetricReport::read_csv(metrics_dir(dir).join(format!("{task}.csv")))?;
            reports.insert(task.clone(), report);
        }
        let fpath = dir.join(FAILURES_FILE);
        if fpath.exists() {
            let mut r = csv::Reader::from_path(&fpath).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            for rec in r.records() {
                let rec = rec.map_err(|e| HarnessError::Runtime(e.to_string()))?;
                reports.entry(rec[1].to_string()).or_insert_with(MetricReport::new).fail(&rec[0], &rec[2]);
            }
        }
        Ok(Bundle { info, reports })
    }
}

/// Share of the per-pixel absolute difference between `a` and `b` that falls
/// inside `region`. `None` when the two images are identical.
pub fn change_locality(a: &Image, b: &Image, region: &LabelMask) -> Result<Option<f64>> {
    if a.dims() != b.dims() || a.channels() != b.channels() || a.dims() != region.dims() {
        return Err(HarnessError::Runtime("change locality: size mismatch".into()));
    }
    let (w, h) = a.dims();
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let d: f64 = (0..a.channels()).map(|c| f64::from((a.get(x, y, c) - b.get(x, y, c)).abs())).sum();
            total += d;
            if region.get(x, y) != 0 {
                inside += d;
            }
        }
    }
    Ok((total > 0.0).then(|| inside / total))
}

struct Outcome {
    id: String,
    task: TaskKind,
    scored: std::result::Result<BTreeMap<String, f64>, String>,
}

struct Evaluator<'a> {
    mode: EvalMode,
    model: Option<&'a Model>,
    res: Option<usize>,
    steps: usize,
    seed: u64,
    dilation: usize,
    artifacts: PathBuf,
}

fn target_rendering(ex: &TrainExample) -> Image {
    match &ex.eval {
        EvalTarget::Image(img) => img.clone(),
        _ => ex.target.clone(),
    }
}

impl Evaluator<'_> {
    fn model(&self) -> Result<&Model> {
        self.model.ok_or_else(|| HarnessError::Config("this eval mode needs a checkpoint".into()))
    }

    fn run(&self, root: &Path, record: &imagecore::SampleRecord, index: usize) -> Result<BTreeMap<String, f64>> {
        let ex = load_example(root, record)?;
        let ex = match self.res {
            Some(r) => ex.resized(r),
            None => ex,
        };
        let seed = derive_seed(derive_seed(self.seed, EVAL_TAG), index as u64);
        match self.mode {
            EvalMode::Counterfactual => self.counterfactual(&ex, seed),
            EvalMode::Model | EvalMode::Oracle => {
                let pred = if self.mode == EvalMode::Oracle {
                    target_rendering(&ex)
                } else {
                    let pred = self.model()?.sample(&ex.prompt, &ex.images, self.steps, seed)?;
                    let path = self.artifacts.join(format!("{}_pred.png", ex.id));
                    write_png(&pred, &path)?;
                    pred
                };
                if ex.task == TaskKind::Progress {
                    let before = &ex.images[ex.prompt.structural];
                    let map = signed_change_map(before, &pred, &tissue_mask(before))?;
                    write_png(&render_change_map(&map), self.artifacts.join(format!("{}_change.png", ex.id)))?;
                }
                Ok(score(&pred, &ex.eval)?)
            }
        }
    }

    fn counterfactual(&self, ex: &TrainExample, seed: u64) -> Result<BTreeMap<String, f64>> {
        if ex.task != TaskKind::Progress {
            return Err(HarnessError::Runtime("counterfactual: not a progression record".into()));
        }
        let lesions = ex.lesions.as_ref().filter(|l| !l.is_empty());
        let lesions = lesions.ok_or_else(|| HarnessError::Runtime("counterfactual: baseline has no lesions".into()))?;
        let months = ex.prompt.delta_t.unwrap_or(12.0);
        let model = self.model()?;
        let mut pair = Vec::with_capacity(2);
        for category in [FollowupCategory::Stable, FollowupCategory::Progression] {
            let mut prompt = Prompt::new(&progress_prompt(category, months), ex.images.len());
            prompt.structural = ex.prompt.structural;
            prompt.delta_t = ex.prompt.delta_t;
            let img = model.sample(&prompt, &ex.images, self.steps, seed)?;
            write_png(&img, self.artifacts.join(format!("{}_{}.png", ex.id, category.name())))?;
            pair.push(img);
        }
        let map = signed_change_map(&pair[0], &pair[1], &tissue_mask(&pair[0]))?;
        write_png(&render_change_map(&map), self.artifacts.join(format!("{}_change.png", ex.id)))?;
        let region = lesions.dilate(self.dilation);
        let locality = change_locality(&pair[0], &pair[1], &region)?
            .ok_or_else(|| HarnessError::Runtime("counterfactual: samples are identical".into()))?;
        let mut out = BTreeMap::new();
        out.insert("locality".to_string(), locality);
        out.insert("region_fraction".to_string(), region.count_nonzero() as f64 / region.labels().len() as f64);
        Ok(out)
    }
}

/// Evaluates the manifest's test split. Per-sample errors become failure rows.
pub fn cmd_eval(cfg: &RunConfig, manifest_path: &Path, checkpoint: Option<&Path>) -> Result<Bundle> {
    cfg.validate()?;
    let mode = cfg.eval.mode;
    if mode != EvalMode::Oracle && checkpoint.is_none() {
        return Err(HarnessError::Config(format!("eval mode {mode:?} needs --checkpoint")));
    }
    let seed = cfg.seed()?;
    let out = cfg.out()?.to_path_buf();
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let (manifest, root) = open_manifest(manifest_path)?;
    let mut records: Vec<_> = manifest.split(Split::Test).collect();
    if records.is_empty() {
        return Err(HarnessError::Runtime("test split is empty".into()));
    }
    if let Some(n) = cfg.eval.max_samples {
        records.truncate(n);
    }
    let res = cfg.eval.resolution.or(match mode {
        EvalMode::Oracle => None,
        _ => ck.as_ref().map(|c| c.train.stage1_res),
    });
    let artifacts = out.join("artifacts");
    std::fs::create_dir_all(&artifacts).at(&artifacts)?;
    let eval = Evaluator {
        mode,
        model: ck.as_ref().map(|c| &c.model),
        res,
        steps: cfg.eval.sample_steps,
        seed,
        dilation: cfg.eval.lesion_dilation,
        artifacts,
    };
    let outcomes: Vec<Outcome> = crate::with_threads(cfg.threads(), || {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| Outcome { id: r.id.clone(), task: r.task, scored: eval.run(&root, r, i).map_err(|e| e.to_string()) })
            .collect()
    });
    let mut reports: BTreeMap<String, MetricReport> = BTreeMap::new();
    for o in outcomes {
        let report = reports.entry(o.task.name().to_string()).or_default();
        match o.scored {
            Ok(m) => m.into_iter().for_each(|(k, v)| report.push(&o.id, k, v)),
            Err(e) => {
                log::warn!("{}: {e}", o.id);
                report.fail(&o.id, e);
            }
        }
    }
    let bundle = Bundle {
        info: BundleInfo {
            manifest: Some(manifest_path.to_path_buf()),
            checkpoint: checkpoint.map(Path::to_path_buf),
            mode,
            resolution: res,
            sample_steps: cfg.eval.sample_steps,
            seed,
            records: records.len(),
            failures: 0,
            tasks: Vec::new(),
        },
        reports,
    };
    bundle.save(&out)?;
    Bundle::load(&out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locality_counts_region_share() {
        let a = Image::new(4, 4, 1);
        let mut b = a.clone();
        b.set(0, 0, 0, 0.3);
        b.set(3, 3, 0, 0.1);
        let mut region = LabelMask::new(4, 4);
        region.set(0, 0, 1);
        let f = change_locality(&a, &b, &region).unwrap().unwrap();
        assert!((f - 0.75).abs() < 1e-6);
        assert_eq!(change_locality(&a, &a, &region).unwrap(), None);
    }
}
