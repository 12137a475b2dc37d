//! Stage 1, hard-example mining and refinement, then stage 2 at higher resolution.

use std::collections::BTreeSet;
use std::io::Write;

use dataforge::{augment, derive_seed, perturb_lesions, AugmentationSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::Model;
use crate::optim::AdamWState;
use crate::scoring::{mine_hard, score, EvalRow, HardHit};
use crate::train::{train_step, LossMode, StepOutput, TrainConfig, TrainExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Vae,
    Stage1,
    Refine,
    Stage2,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Vae => "vae",
            Phase::Stage1 => "stage1",
            Phase::Refine => "refine",
            Phase::Stage2 => "stage2",
            Phase::Done => "done",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// Progress that must survive a checkpoint: the global step and the mined set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumState {
    pub step: u64,
    /// `None` until the mining pass after stage 1 has run.
    #[serde(default)]
    pub hard: Option<Vec<HardHit>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Phase { phase: String, step: u64, steps: u64 },
    Mining { step: u64, scored: usize, hard: usize },
    Hard { id: String, metric: String, value: f64 },
}

/// Phase boundaries in global steps. Refinement length is known once mining has run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub vae_end: u64,
    pub stage1_end: u64,
    pub refine_end: Option<u64>,
    pub stage2_steps: u64,
}

impl Plan {
    pub fn new(cfg: &TrainConfig, refine_steps: Option<u64>) -> Self {
        let vae_end = cfg.vae_pretrain_steps;
        let stage1_end = vae_end + cfg.stage1_steps;
        Plan { vae_end, stage1_end, refine_end: refine_steps.map(|r| stage1_end + r), stage2_steps: cfg.stage2_steps }
    }

    pub fn total(&self) -> Option<u64> {
        self.refine_end.map(|r| r + self.stage2_steps)
    }

    /// Phase and offset within it; `None` at the mining boundary.
    pub fn locate(&self, step: u64) -> Option<(Phase, u64)> {
        if step < self.vae_end {
            return Some((Phase::Vae, step));
        }
        if step < self.stage1_end {
            return Some((Phase::Stage1, step - self.vae_end));
        }
        let refine_end = self.refine_end?;
        if step < refine_end {
            return Some((Phase::Refine, step - self.stage1_end));
        }
        if step < refine_end + self.stage2_steps {
            return Some((Phase::Stage2, step - refine_end));
        }
        Some((Phase::Done, 0))
    }
}

/// Indices `offset*b .. offset*b+b` of the concatenated per-epoch shuffles of `0..n`.
pub fn batch_indices(n: usize, b: usize, offset: u64, seed: u64) -> Vec<usize> {
    let start = offset as usize * b;
    let mut out = Vec::with_capacity(b);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for p in start..start + b {
        let epoch = p / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("just set").1[p % n]);
    }
    out
}

/// One epoch over all examples with hard ones repeated `weight` times, shuffled.
pub fn refine_list(ids: &[&str], hard: &[HardHit], weight: usize, seed: u64) -> Vec<(usize, bool)> {
    let hard_ids: BTreeSet<&str> = hard.iter().map(|h| h.id.as_str()).collect();
    let mut list = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let is_hard = hard_ids.contains(id);
        let reps = if is_hard { weight } else { 1 };
        list.extend(std::iter::repeat((i, is_hard)).take(reps));
    }
    list.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    list
}

/// Length of the refinement phase; zero when nothing was mined.
pub fn refine_steps(train: &[TrainExample], hard: &[HardHit], cfg: &TrainConfig, seed: u64) -> u64 {
    if hard.is_empty() {
        return 0;
    }
    let ids: Vec<&str> = train.iter().map(|e| e.id.as_str()).collect();
    let list = refine_list(&ids, hard, cfg.hard_weight, derive_seed(seed, Phase::Refine.tag()));
    list.len().div_ceil(cfg.effective_batch) as u64
}

/// Intensity augmentation (no rescale) plus lesion-local perturbation of the structural image.
pub fn reaugment(ex: &TrainExample, seed: u64) -> Result<TrainExample> {
    let spec = AugmentationSpec { scale: None, ..AugmentationSpec::default() };
    let mut out = ex.clone();
    let s = ex.prompt.structural;
    let mut img = augment(&ex.images[s], &spec, seed)?;
    if let Some(lesions) = &ex.lesions {
        if lesions.dims() == img.dims() {
            img = perturb_lesions(&img, lesions, derive_seed(seed, 1))?;
        }
    }
    out.images[s] = img;
    Ok(out)
}

/// Samples and scores up to `limit` examples; used for the mining pass.
pub fn evaluate(model: &Model, examples: &[TrainExample], steps: usize, seed: u64) -> Result<Vec<EvalRow>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let pred = model.sample(&ex.prompt, &ex.images, steps, derive_seed(seed, i as u64))?;
            Ok(EvalRow { id: ex.id.clone(), task: ex.task, metrics: score(&pred, &ex.eval)? })
        })
        .collect()
}

fn write_line<T: Serialize>(log: &mut dyn Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *log, v)?;
    log.write_all(b"\n")?;
    Ok(())
}

/// Runs (or resumes) the curriculum until it finishes or `until` steps are done.
/// Every optimizer step appends a `StepRecord` line to `log`.
#[allow(clippy::too_many_arguments)]
pub fn run_curriculum(
    model: &mut Model,
    opt: &mut AdamWState,
    state: &mut CurriculumState,
    train: &[TrainExample],
    cfg: &TrainConfig,
    seed: u64,
    log: &mut dyn Write,
    until: Option<u64>,
) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(SimError::Input("empty train split".into()));
    }
    let low: Vec<TrainExample> = train.iter().map(|e| e.resized(cfg.stage1_res)).collect();
    let mut high: Option<Vec<TrainExample>> = None;
    let ids: Vec<&str> = train.iter().map(|e| e.id.as_str()).collect();
    let b = cfg.effective_batch;
    let refine_steps = |hard: &[HardHit]| refine_steps(train, hard, cfg, seed);
    let mut last_phase = None;
    loop {
        if until.is_some_and(|u| state.step >= u) {
            return Ok(());
        }
        let plan = Plan::new(cfg, state.hard.as_deref().map(refine_steps));
        let Some((phase, offset)) = plan.locate(state.step) else {
            let n = cfg.mine_limit.min(low.len());
            let rows = evaluate(model, &low[..n], cfg.val_sample_steps, derive_seed(seed, 0x6d69_6e65))?;
            let hits = mine_hard(&rows, &cfg.hard)?;
            write_line(log, &LogEvent::Mining { step: state.step, scored: n, hard: hits.len() })?;
            for h in &hits {
                write_line(log, &LogEvent::Hard { id: h.id.clone(), metric: h.metric.clone(), value: h.value })?;
            }
            log::info!("mining at step {}: {} of {n} hard", state.step, hits.len());
            state.hard = Some(hits);
            continue;
        };
        if phase == Phase::Done {
            return Ok(());
        }
        if last_phase != Some(phase) {
            let steps = match phase {
                Phase::Vae => plan.vae_end,
                Phase::Stage1 => plan.stage1_end - plan.vae_end,
                Phase::Refine => plan.refine_end.expect("located") - plan.stage1_end,
                _ => plan.stage2_steps,
            };
            if offset == 0 {
                write_line(log, &LogEvent::Phase { phase: phase.name().into(), step: state.step, steps })?;
            }
            last_phase = Some(phase);
        }
        let phase_seed = derive_seed(seed, phase.tag());
        let owned: Vec<TrainExample>;
        let batch: Vec<&TrainExample> = match phase {
            Phase::Vae | Phase::Stage1 => batch_indices(low.len(), b, offset, phase_seed).into_iter().map(|i| &low[i]).collect(),
            Phase::Refine => {
                let list = refine_list(&ids, state.hard.as_deref().unwrap_or(&[]), cfg.hard_weight, phase_seed);
                let start = offset as usize * b;
                owned = list[start..(start + b).min(list.len())]
                    .iter()
                    .enumerate()
                    .map(|(k, &(i, is_hard))| {
                        if is_hard {
                            reaugment(&low[i], derive_seed(phase_seed, (start + k) as u64))
                        } else {
                            Ok(low[i].clone())
                        }
                    })
                    .collect::<Result<_>>()?;
                owned.iter().collect()
            }
            Phase::Stage2 => {
                let hi = high.get_or_insert_with(|| train.iter().map(|e| e.resized(cfg.stage2_res)).collect());
                batch_indices(hi.len(), b, offset, phase_seed).into_iter().map(|i| &hi[i]).collect()
            }
            Phase::Done => unreachable!(),
        };
        let mode = if phase == Phase::Vae { LossMode::VaeOnly } else { LossMode::Full };
        let StepOutput { step, lr, loss } = train_step(model, opt, &batch, mode, state.step, seed, cfg)?;
        write_line(log, &StepRecord { step, lr, loss: loss.total, stage: phase.name().into() })?;
        if step % 50 == 0 {
            log::info!(
                "step {step} [{}] lr {lr:.3e} loss {:.4} (diff {:.4} recon {:.4} kl {:.3})",
                phase.name(),
                loss.total,
                loss.diffusion,
                loss.recon,
                loss.kl
            );
        }
        state.step += 1;
    }
}

/// Moving average with a trailing window, for loss-trend checks.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len().saturating_sub(w - 1));
    let mut acc: f64 = values.iter().take(w).sum();
    if values.len() < w {
        return out;
    }
    out.push(acc / w as f64);
    for i in w..values.len() {
        acc += values[i] - values[i - w];
        out.push(acc / w as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::scoring::EvalTarget;
    use crate::tokenizer::Prompt;
    use crate::train::HardThresholds;
    use dataforge::{gen_phantom, PhantomSpec};
    use imagecore::TaskKind;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            d_model: 16,
            heads: 2,
            blocks: 1,
            mlp_hidden: 32,
            vae_widths: [8, 8],
            unet_widths: [8, 16],
            groups: 4,
            time_dim: 16,
            ..ModelConfig::default()
        };
        Model::new(cfg, 1).unwrap()
    }

    fn corpus(n: u64) -> Vec<TrainExample> {
        (0..n)
            .map(|i| {
                let s = gen_phantom(&PhantomSpec::default().with_size(32, 32), i).unwrap();
                TrainExample {
                    id: format!("e{i}"),
                    task: TaskKind::Enhance,
                    prompt: Prompt::new("enhance the image", 1),
                    images: vec![s.image.clone()],
                    target: s.image.clone(),
                    lesions: None,
                    eval: EvalTarget::Image(s.image),
                }
            })
            .collect()
    }

    fn run(ssim: f64, mine_limit: usize) -> (Vec<serde_json::Value>, CurriculumState) {
        let cfg = TrainConfig {
            effective_batch: 2,
            stage1_res: 16,
            stage2_res: 32,
            stage1_steps: 2,
            stage2_steps: 2,
            mine_limit,
            val_sample_steps: 2,
            hard: HardThresholds { ssim, ..Default::default() },
            ..Default::default()
        };
        let mut model = tiny();
        let mut opt = AdamWState::new(&model.params);
        let mut state = CurriculumState::default();
        let mut log = Vec::new();
        run_curriculum(&mut model, &mut opt, &mut state, &corpus(6), &cfg, 5, &mut log, None).unwrap();
        let lines = String::from_utf8(log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        (lines, state)
    }

    fn phases(lines: &[serde_json::Value]) -> Vec<String> {
        lines.iter().filter(|l| l["event"] == "phase").map(|l| l["phase"].as_str().unwrap().to_string()).collect()
    }

    #[test]
    fn empty_hard_set_skips_refinement() {
        let (lines, state) = run(0.5, 0);
        assert_eq!(state.hard.as_deref(), Some(&[][..]));
        assert_eq!(phases(&lines), ["stage1", "stage2"]);
        assert_eq!(state.step, 4);
    }

    #[test]
    fn hard_events_carry_their_metric() {
        let (lines, state) = run(2.0, 4);
        let hard = state.hard.unwrap();
        assert_eq!(hard.len(), 4);
        let events: Vec<&serde_json::Value> = lines.iter().filter(|l| l["event"] == "hard").collect();
        assert_eq!(events.len(), hard.len());
        for (e, h) in events.iter().zip(&hard) {
            assert_eq!(e["id"], h.id.as_str());
            assert_eq!(e["metric"], "ssim");
            assert_eq!(e["value"].as_f64(), Some(h.value));
        }
        assert_eq!(phases(&lines), ["stage1", "refine", "stage2"]);
        let stages: Vec<&str> = lines.iter().filter_map(|l| l["stage"].as_str()).collect();
        // six ids plus one extra copy of each of the four hard ones, two per batch
        assert_eq!(stages.iter().filter(|s| **s == "refine").count(), 5);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen = Vec::new();
        for off in 0..5 {
            seen.extend(batch_indices(n, 4, off, 3));
        }
        let mut first: Vec<usize> = seen[..10].to_vec();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(n, 4, 2, 3), batch_indices(n, 4, 2, 3));
    }

    #[test]
    fn hard_ids_are_upweighted() {
        let hard = vec![HardHit { id: "b".into(), metric: "dice".into(), value: 0.1 }];
        let list = refine_list(&["a", "b", "c"], &hard, 2, 0);
        assert_eq!(list.len(), 4);
        assert_eq!(list.iter().filter(|x| x.0 == 1).count(), 2);
        assert!(list.iter().all(|x| x.1 == (x.0 == 1)));
    }

    #[test]
    fn plan_locates_phases() {
        let cfg = TrainConfig { vae_pretrain_steps: 2, stage1_steps: 3, stage2_steps: 4, ..Default::default() };
        let p = Plan::new(&cfg, None);
        assert_eq!(p.locate(0), Some((Phase::Vae, 0)));
        assert_eq!(p.locate(4), Some((Phase::Stage1, 2)));
        assert_eq!(p.locate(5), None);
        let p = Plan::new(&cfg, Some(0));
        assert_eq!(p.locate(5), Some((Phase::Stage2, 0)));
        assert_eq!(p.locate(9), Some((Phase::Done, 0)));
        assert_eq!(p.total(), Some(9));
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(smoothed(&[1.0], 2).is_empty());
    }
}
