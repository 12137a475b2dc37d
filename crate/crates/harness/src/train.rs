//! `train`: run or resume the curriculum and write checkpoint plus log.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dataforge::derive_seed;
use imagecore::Split;
use worldsim::checkpoint::Checkpoint;
use worldsim::curriculum::{run_curriculum, CurriculumState, Plan};
use worldsim::{AdamWState, Model};

use crate::config::RunConfig;
use crate::data::{load_split, open_manifest};
use crate::error::{HarnessError, IoContext, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.eywk";
pub const LOG_FILE: &str = "train_log.jsonl";
const INIT_TAG: u64 = 0x494e_4954;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub step: u64,
    pub finished: bool,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains on the manifest's train split. With `resume`, the run continues from
/// the checkpoint's step using the checkpoint's own schedule and seed, and the
/// log is appended to.
pub fn cmd_train(cfg: &RunConfig, manifest_path: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = cfg.out()?.to_path_buf();
    let loaded = match resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let (manifest, root) = open_manifest(manifest_path)?;
    let train = load_split(&root, &manifest, Split::Train)?;
    if train.is_empty() {
        return Err(HarnessError::Runtime("manifest has no train records".into()));
    }
    std::fs::create_dir_all(&out).at(&out)?;
    let (mut model, mut opt, mut state, schedule, seed) = match loaded {
        Some(ck) => {
            if ck.train != cfg.train.schedule {
                log::warn!("resuming with the checkpoint's schedule; the config's differs");
            }
            (ck.model, ck.opt, ck.curriculum, ck.train, ck.seed)
        }
        None => {
            let seed = cfg.seed()?;
            let mut model = Model::new(cfg.train.model.clone(), cfg.train.init_seed.unwrap_or(derive_seed(seed, INIT_TAG)))?;
            model.params.round_to_f32();
            let opt = AdamWState::new(&model.params);
            (model, opt, CurriculumState::default(), cfg.train.schedule.clone(), seed)
        }
    };
    let log_path = out.join(LOG_FILE);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .at(&log_path)?;
    let mut log = BufWriter::new(file);
    crate::with_threads(cfg.threads(), || {
        run_curriculum(&mut model, &mut opt, &mut state, &train, &schedule, seed, &mut log, cfg.train.max_steps)
    })?;
    log.flush().at(&log_path)?;
    let finished = state.hard.as_deref().is_some_and(|hard| {
        let refine = worldsim::curriculum::refine_steps(&train, hard, &schedule, seed);
        Plan::new(&schedule, Some(refine)).total().is_some_and(|t| state.step >= t)
    });
    let ck = Checkpoint { model, opt, train: schedule, curriculum: state, seed };
    let ck_path = out.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    Ok(TrainSummary { step: ck.step(), finished, checkpoint: ck_path, log: log_path })
}
