//! Training examples, the per-example loss graph, and the accumulated AdamW step.

use imagecore::{Image, LabelMask, TaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{image_tensor, Model};
use crate::optim::{AdamWConfig, AdamWState, LrSchedule};
use crate::scoring::EvalTarget;
use crate::tape::{Graph, NodeId, ParamGrads, Tensor};
use crate::tokenizer::Prompt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardThresholds {
    pub dice: f64,
    pub miou: f64,
    pub ssim: f64,
}

impl Default for HardThresholds {
    fn default() -> Self {
        HardThresholds { dice: 0.5, miou: 0.5, ssim: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: LrSchedule,
    pub adam: AdamWConfig,
    pub effective_batch: usize,
    pub stage1_res: usize,
    pub stage2_res: usize,
    /// VAE-only steps before the joint stage-1 steps.
    pub vae_pretrain_steps: u64,
    pub stage1_steps: u64,
    pub stage2_steps: u64,
    pub hard: HardThresholds,
    /// Respaced sampling steps for the validation pass that feeds mining.
    pub val_sample_steps: usize,
    /// Upper bound on the samples scored in the mining pass.
    pub mine_limit: usize,
    /// Sampling weight of hard samples in the refinement epoch.
    pub hard_weight: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: LrSchedule::default(),
            adam: AdamWConfig::default(),
            effective_batch: 64,
            stage1_res: 32,
            stage2_res: 64,
            vae_pretrain_steps: 0,
            stage1_steps: 1000,
            stage2_steps: 200,
            hard: HardThresholds::default(),
            val_sample_steps: 20,
            mine_limit: 64,
            hard_weight: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.lr.target > 0.0 && self.lr.warmup_start > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.effective_batch == 0 {
            return bad("effective_batch must be positive".into());
        }
        if self.stage1_res == 0 || self.stage2_res <= self.stage1_res {
            return bad(format!("stage2_res {} must exceed stage1_res {}", self.stage2_res, self.stage1_res));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) || a.weight_decay < 0.0 {
            return bad(format!("invalid AdamW settings {a:?}"));
        }
        let h = &self.hard;
        if [h.dice, h.miou, h.ssim].iter().any(|t| !(*t > 0.0)) {
            return bad("hard thresholds must be positive".into());
        }
        if self.hard_weight == 0 {
            return bad("hard_weight must be >= 1".into());
        }
        Ok(())
    }
}

/// One conditioning/target pair ready for the model.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub task: TaskKind,
    pub prompt: Prompt,
    pub images: Vec<Image>,
    pub target: Image,
    pub lesions: Option<LabelMask>,
    pub eval: EvalTarget,
}

impl TrainExample {
    /// Copy at `res x res`. Mask and box renderings use nearest sampling.
    pub fn resized(&self, res: usize) -> TrainExample {
        let fit = |img: &Image| {
            if img.dims() == (res, res) {
                img.clone()
            } else {
                img.resize_bilinear(res, res)
            }
        };
        let target = if !matches!(self.eval, EvalTarget::Image(_)) { resize_nearest(&self.target, res, res) } else { fit(&self.target) };
        TrainExample {
            id: self.id.clone(),
            task: self.task,
            prompt: self.prompt.clone(),
            images: self.images.iter().map(fit).collect(),
            target,
            lesions: self.lesions.as_ref().map(|m| m.resize_nearest(res, res)),
            eval: self.eval.resized(res),
        }
    }
}

pub fn resize_nearest(img: &Image, width: usize, height: usize) -> Image {
    let (w, h) = img.dims();
    if (w, h) == (width, height) {
        return img.clone();
    }
    let mut out = Image::new(width, height, img.channels());
    for y in 0..height {
        for x in 0..width {
            out.set_pixel(x, y, img.pixel(x * w / width, y * h / height));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Diffusion on stop-gradient latents plus the codec terms.
    Full,
    VaeOnly,
    /// Like `Full` but gradients flow through the latents too; a smooth
    /// function of every parameter, used for gradient checking.
    Undetached,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub diffusion: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Builds the training loss for one example. All randomness (timestep,
/// diffusion noise, reparameterization noise) comes from `noise_seed`.
pub fn example_loss(
    model: &Model,
    g: &mut Graph,
    ex: &TrainExample,
    mode: LossMode,
    noise_seed: u64,
) -> Result<(NodeId, [NodeId; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let cfg = &model.config;
    ex.prompt.validate(ex.images.len())?;
    let structural = &ex.images[ex.prompt.structural];
    if structural.dims() != ex.target.dims() {
        return Err(SimError::Shape(format!(
            "{}: structural image {:?} vs target {:?}",
            ex.id,
            structural.dims(),
            ex.target.dims()
        )));
    }
    let x_target = g.constant(image_tensor(&ex.target));
    let (mu_t, lv_t) = model.vae_encode_graph(g, x_target);
    let lat_shape = g.shape(mu_t).to_vec();

    let mut recon = Vec::new();
    let mut kl = Vec::new();
    let mut codec = |g: &mut Graph, x: NodeId, mu: NodeId, lv: NodeId, rng: &mut ChaCha8Rng| {
        let z = model.reparameterize(g, mu, lv, normal_tensor(rng, &lat_shape));
        let dec = model.vae_decode_graph(g, z);
        recon.push(g.mse(dec, x));
        kl.push(model.kl_graph(g, mu, lv));
    };
    codec(g, x_target, mu_t, lv_t, &mut rng);

    let diffusion = match mode {
        LossMode::VaeOnly => None,
        LossMode::Full | LossMode::Undetached => {
            let detach = mode == LossMode::Full;
            let x_struc = g.constant(image_tensor(structural));
            let (mu_s, lv_s) = model.vae_encode_graph(g, x_struc);
            codec(g, x_struc, mu_s, lv_s, &mut rng);
            let (z_struc, z0) = if detach { (g.detach(mu_s), g.detach(mu_t)) } else { (mu_s, mu_t) };
            let t = rng.gen_range(1..=cfg.diffusion_steps);
            let eps = normal_tensor(&mut rng, &lat_shape);
            let ab = cfg.schedule()?.alpha_bar(t);
            let signal = g.scale(z0, ab.sqrt());
            let noise = g.constant(Tensor::new(lat_shape.clone(), eps.data.iter().map(|e| (1.0 - ab).sqrt() * e).collect()));
            let zt = g.add(signal, noise);
            let c_sem = model.encode_semantic_graph(g, &ex.prompt, &ex.images)?;
            let pred = model.denoiser_graph(g, zt, t, c_sem, z_struc)?;
            let eps = g.constant(eps);
            Some(g.mse(pred, eps))
        }
    };

    let mean_of = |g: &mut Graph, xs: &[NodeId]| {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = g.add(acc, x);
        }
        g.scale(acc, 1.0 / xs.len() as f64)
    };
    let recon = mean_of(g, &recon);
    let kl = mean_of(g, &kl);
    let kl_w = g.scale(kl, cfg.kl_weight);
    let mut total = g.add(recon, kl_w);
    let diff = match diffusion {
        Some(d) => {
            total = g.add(total, d);
            d
        }
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok((total, [diff, recon, kl]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub step: u64,
    pub lr: f64,
    pub loss: LossParts,
}

/// Noise seed of batch slot `slot` at global step `step`.
pub fn noise_seed(seed: u64, step: u64, slot: usize) -> u64 {
    dataforge::derive_seed(dataforge::derive_seed(seed, step), slot as u64)
}

/// Forward and backward for one example; returns the loss parts and gradients.
pub fn example_grads(model: &Model, ex: &TrainExample, mode: LossMode, noise_seed: u64) -> Result<(LossParts, ParamGrads)> {
    let mut g = Graph::new();
    let (total, [d, r, k]) = example_loss(model, &mut g, ex, mode, noise_seed)?;
    let v = |n: NodeId| g.value(n).data[0];
    let parts = LossParts { diffusion: v(d), recon: v(r), kl: v(k), total: v(total) };
    if !parts.total.is_finite() {
        return Err(SimError::NonFinite {
            step: 0,
            detail: format!("example {}: diffusion {} recon {} kl {}", ex.id, parts.diffusion, parts.recon, parts.kl),
        });
    }
    Ok((parts, g.backward(total)))
}

/// One optimizer step over `batch`: per-example gradients are averaged (in
/// batch order, so the result does not depend on threading) and applied with AdamW.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamWState,
    batch: &[&TrainExample],
    mode: LossMode,
    step: u64,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(SimError::Input("empty batch".into()));
    }
    let results: Vec<Result<(LossParts, ParamGrads)>> = {
        let m: &Model = model;
        let work = |(slot, ex): (usize, &&TrainExample)| example_grads(m, ex, mode, noise_seed(seed, step, slot));
        batch.par_iter().enumerate().map(work).collect()
    };
    let n = batch.len() as f64;
    let mut loss = LossParts::default();
    let mut grads: ParamGrads = ParamGrads::new();
    for r in results {
        let (parts, g) = r.map_err(|e| match e {
            SimError::NonFinite { detail, .. } => SimError::NonFinite { step, detail },
            other => other,
        })?;
        loss.diffusion += parts.diffusion / n;
        loss.recon += parts.recon / n;
        loss.kl += parts.kl / n;
        loss.total += parts.total / n;
        for (name, gv) in g {
            match grads.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name, gv);
                }
            }
        }
    }
    for gv in grads.values_mut() {
        gv.iter_mut().for_each(|v| *v /= n);
    }
    if let Some((name, _)) = grads.iter().find(|(_, gv)| gv.iter().any(|v| !v.is_finite())) {
        return Err(SimError::NonFinite { step, detail: format!("gradient of {name}") });
    }
    let lr = cfg.lr.lr(step);
    opt.step(&mut model.params, &grads, lr, &cfg.adam);
    model.params.round_to_f32();
    opt.round_to_f32();
    Ok(StepOutput { step, lr, loss })
}
