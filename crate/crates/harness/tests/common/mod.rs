#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harness::RunConfig;
use worldsim::ModelConfig;

/// Every file under `dir`, keyed by its relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        blocks: 1,
        mlp_hidden: 32,
        vae_widths: [8, 8],
        unet_widths: [8, 16],
        groups: 4,
        time_dim: 16,
        ..ModelConfig::default()
    }
}

/// A 32 px segmentation corpus and a few-step curriculum on a tiny model.
pub fn tiny_run(seed: u64, out: &Path) -> RunConfig {
    let mut cfg = RunConfig { seed: Some(seed), out: Some(out.to_path_buf()), threads: Some(1), ..Default::default() };
    cfg.forge.size = 24;
    cfg.forge.resolution = 32;
    cfg.train.model = tiny_model();
    let s = &mut cfg.train.schedule;
    s.effective_batch = 2;
    s.stage1_res = 16;
    s.stage2_res = 32;
    s.vae_pretrain_steps = 2;
    s.stage1_steps = 3;
    s.stage2_steps = 2;
    s.mine_limit = 3;
    s.val_sample_steps = 2;
    s.lr.warmup_steps = 4;
    s.lr.target = 1e-3;
    cfg.eval.sample_steps = 2;
    cfg
}
