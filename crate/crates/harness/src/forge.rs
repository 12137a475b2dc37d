//! Corpus forging: phantoms, task builders, patient split, manifest and provenance.

use std::collections::BTreeMap;
use std::path::Path;

use dataforge::builders::{
    color_name, detect_prompt, enhance_prompt, inpaint_prompt, outpaint_prompt, progress_prompt, segment_prompt,
    sr_prompt, translate_prompt, EXEMPLAR_INSTRUCTION,
};
use dataforge::phantom::followup_geometry;
use dataforge::{
    build_exemplar, build_rpe_sample, degrade, derive_seed, downsample_pair, gen_followup, gen_phantom, make_inpaint,
    make_outpaint, render, FollowupCategory, PatientRef, PhantomKind, PhantomSample, RpeInputs, SR_FACTORS,
};
use imagecore::io::encode_png;
use imagecore::{encode_color_mask, patient_split, DatasetManifest, Image, LabelMask, Palette, SampleRecord, TaskKind};
use metrics::components::{components, Connectivity};
use metrics::{draw_boxes, Box};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{structure_class, ForgeConfig, RunConfig};
use crate::error::{HarnessError, IoContext, Result};

const PHANTOM_TAG: u64 = 0x5048_414e;
const DEMO_TAG: u64 = 0x4445_4d4f;
const SPLIT_TAG: u64 = 0x5350_4c54;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROVENANCE_FILE: &str = "provenance.json";
/// Palette class used for lesion masks and detection boxes.
pub const LESION_CLASS: u16 = 5;
pub const RPE_CLASS: u16 = 6;

/// One forged record with the files it references.
#[derive(Debug, Clone)]
pub struct ForgedRecord {
    pub record: SampleRecord,
    pub files: Vec<(String, Vec<u8>)>,
    pub provenance: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub forge: ForgeConfig,
    pub records: Vec<Value>,
}

struct Builder<'a> {
    cfg: &'a ForgeConfig,
    id: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Builder<'_> {
    fn image(&mut self, role: &str, img: &Image) -> Result<String> {
        let path = format!("images/{}_{role}.png", self.id);
        self.files.push((path.clone(), encode_png(img)?));
        Ok(path)
    }

    fn mask(&mut self, role: &str, mask: &LabelMask, palette: &Palette) -> Result<String> {
        let path = format!("masks/{}_{role}.png", self.id);
        self.files.push((path.clone(), encode_png(&encode_color_mask(mask, palette)?)?));
        Ok(path)
    }

    fn json(&mut self, role: &str, v: &Value) -> Result<String> {
        let path = format!("meta/{}_{role}.json", self.id);
        self.files.push((path.clone(), serde_json::to_vec(v)?));
        Ok(path)
    }
}

fn relabel(mask: &LabelMask, class: u16) -> LabelMask {
    let labels = mask.labels().iter().map(|&v| if v != 0 { class } else { 0 }).collect();
    LabelMask::from_vec(mask.width(), mask.height(), labels).expect("same dims")
}

/// Bounding boxes of the 8-connected components of a mask, in pixel-edge coordinates.
pub fn mask_boxes(mask: &LabelMask) -> Vec<Box> {
    let grid: Vec<bool> = mask.labels().iter().map(|&v| v != 0).collect();
    components(&grid, mask.width(), mask.height(), Connectivity::Eight)
        .iter()
        .map(|c| {
            let (x0, y0, x1, y1) = c.extent(mask.width());
            Box::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).expect("non-empty component")
        })
        .collect()
}

fn draw_category(rng: &mut ChaCha8Rng, priors: &[f64; 3]) -> FollowupCategory {
    let idx = WeightedIndex::new(priors).expect("validated priors").sample(rng);
    [FollowupCategory::Stable, FollowupCategory::Recovery, FollowupCategory::Progression][idx]
}

/// The task of record `index`, drawn from the mix with the record's own seed.
pub fn record_task(cfg: &ForgeConfig, seed: u64, index: u64) -> TaskKind {
    let tasks: Vec<(TaskKind, f64)> = cfg.task_mix.iter().map(|(t, w)| (*t, *w)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    let dist = WeightedIndex::new(tasks.iter().map(|t| t.1)).expect("validated mix");
    tasks[dist.sample(&mut rng)].0
}

pub fn forge_record(cfg: &ForgeConfig, seed: u64, index: u64) -> Result<ForgedRecord> {
    let task = record_task(cfg, seed, index);
    let record_seed = derive_seed(seed, index);
    // one draw was spent on the task
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed);
    let _: f64 = rng.gen();
    let patient_index = index / cfg.records_per_patient as u64;
    let patient = format!("P{patient_index:05}");
    let phantom_seed = derive_seed(seed ^ PHANTOM_TAG, patient_index);
    let id = format!("r{index:05}");
    let mut b = Builder { cfg, id: id.clone(), files: Vec::new() };
    let standard = Palette::standard();
    let fundus = || gen_phantom(&cfg.phantom_spec(PhantomKind::Fundus)?, phantom_seed).map_err(HarnessError::from);
    let op_seed = derive_seed(record_seed, 1);
    let mut details = json!({});

    let structure_target = |b: &mut Builder, s: &PhantomSample, name: &str, role: &str| -> Result<(String, u16, String)> {
        let class = structure_class(name).expect("validated structure");
        let palette = standard.subset(&[class])?;
        let path = b.mask(role, &relabel(s.mask(name), class), &palette)?;
        let entry = palette.get(class).expect("subset entry");
        Ok((path, class, segment_prompt(&entry.name, color_name(entry.rgb))))
    };

    let mut record = match task {
        TaskKind::Segment => {
            let s = fundus()?;
            let name = &b.cfg.segment_structures[rng.gen_range(0..b.cfg.segment_structures.len())];
            let input = b.image("in0", &s.image)?;
            let (target, class, prompt) = structure_target(&mut b, &s, name, "target")?;
            details = json!({ "structure": name });
            let mut r = SampleRecord::new(&id, &patient, task, vec![input], target, prompt);
            r.aux.insert("classes".into(), class.to_string());
            r
        }
        TaskKind::Detect => {
            let s = fundus()?;
            let boxes = mask_boxes(s.mask("lesions"));
            let color = standard.get(LESION_CLASS).expect("standard class").color();
            let (w, h) = s.image.dims();
            let target = draw_boxes(&Image::new(w, h, 3), &boxes, color);
            let input = b.image("in0", &s.image)?;
            let target = b.mask_image("target", &target)?;
            let coords: Vec<[f64; 4]> = boxes.iter().map(|bx| [bx.x0, bx.y0, bx.x1, bx.y1]).collect();
            let boxes_ref = b.json("boxes", &json!(coords))?;
            let entry = standard.get(LESION_CLASS).expect("standard class");
            let mut r = SampleRecord::new(&id, &patient, task, vec![input], target, detect_prompt(&entry.name, color_name(entry.rgb)));
            r.aux.insert("boxes".into(), boxes_ref);
            r.aux.insert("classes".into(), LESION_CLASS.to_string());
            r
        }
        TaskKind::Translate => {
            let s = fundus()?;
            let input = b.image("in0", &s.image)?;
            let target = b.image("target", &s.render_as(PhantomKind::Angio)?)?;
            SampleRecord::new(&id, &patient, task, vec![input], target, translate_prompt())
        }
        TaskKind::Enhance => {
            let s = fundus()?;
            let input = b.image("in0", &degrade(&s.image, &b.cfg.degradation, op_seed)?)?;
            let target = b.image("target", &s.image)?;
            SampleRecord::new(&id, &patient, task, vec![input], target, enhance_prompt())
        }
        TaskKind::Sr => {
            let s = fundus()?;
            let factor = SR_FACTORS[rng.gen_range(0..SR_FACTORS.len())];
            let (low, high) = downsample_pair(&s.image, factor)?;
            details = json!({ "factor": factor });
            let input = b.image("in0", &low)?;
            let target = b.image("target", &high)?;
            SampleRecord::new(&id, &patient, task, vec![input], target, sr_prompt(factor))
        }
        TaskKind::Inpaint | TaskKind::Outpaint => {
            let s = fundus()?;
            let (masked, _) = if task == TaskKind::Inpaint {
                make_inpaint(&s.image, op_seed)?
            } else {
                make_outpaint(&s.image, op_seed)?
            };
            let input = b.image("in0", &masked)?;
            let target = b.image("target", &s.image)?;
            let prompt = if task == TaskKind::Inpaint { inpaint_prompt() } else { outpaint_prompt() };
            SampleRecord::new(&id, &patient, task, vec![input], target, prompt)
        }
        TaskKind::Progress => {
            let spec = b.cfg.phantom_spec(b.cfg.progress_kind)?;
            let s = gen_phantom(&spec, phantom_seed)?;
            let category = draw_category(&mut rng, &b.cfg.category_priors);
            let dt = b.cfg.delta_t_months[rng.gen_range(0..b.cfg.delta_t_months.len())];
            details = json!({ "category": category.name(), "delta_t": dt });
            let lesion_palette = standard.subset(&[LESION_CLASS])?;
            let baseline_lesions = relabel(&s.mask("lesions").union(s.mask("hole")), LESION_CLASS);
            let pre = b.image("in0", &s.image)?;
            let lesions_ref = b.mask("lesions", &baseline_lesions, &lesion_palette)?;
            let has_hole = !s.mask("hole").is_empty();
            let mut r = if spec.kind == PhantomKind::Bscan && category == FollowupCategory::Recovery && has_hole {
                let geometry = followup_geometry(&s.geometry, category, dt as f32, b.cfg.growth);
                let (post, masks) = render(&spec, &geometry)?;
                let post_ref = b.image("target", &post)?;
                let rpe = relabel(&masks["rpe_band"], RPE_CLASS);
                let rpe_ref = b.mask("rpe", &rpe, &standard.subset(&[RPE_CLASS])?)?;
                let inputs = RpeInputs {
                    id: &id,
                    patient_id: &patient,
                    pre_ref: &pre,
                    post_ref: &post_ref,
                    rpe_mask_ref: &rpe_ref,
                    post_dims: post.dims(),
                };
                build_rpe_sample(&inputs, &rpe, dt)?
            } else {
                let (post, _) = gen_followup(&s, category, dt as f32, b.cfg.growth)?;
                let target = b.image("target", &post)?;
                let mut r = SampleRecord::new(&id, &patient, task, vec![pre], target, progress_prompt(category, dt));
                r.delta_t = Some(dt);
                r.category = Some(category.name().to_string());
                r
            };
            r.aux.insert("lesion_mask".into(), lesions_ref);
            r
        }
        TaskKind::Exemplar => {
            let query = fundus()?;
            let demo_patient = format!("D{index:05}");
            let demo = gen_phantom(&b.cfg.phantom_spec(PhantomKind::Fundus)?, derive_seed(seed ^ DEMO_TAG, index))?;
            let name = b.cfg.segment_structures[rng.gen_range(0..b.cfg.segment_structures.len())].clone();
            let demo_in = b.image("demo_in", &demo.image)?;
            let (demo_out, _, _) = structure_target(&mut b, &demo, &name, "demo_out")?;
            let query_in = b.image("query", &query.image)?;
            let (target, class, _) = structure_target(&mut b, &query, &name, "target")?;
            let ex = build_exemplar(
                PatientRef { path: &demo_in, patient: &demo_patient },
                &demo_out,
                PatientRef { path: &query_in, patient: &patient },
                "segment",
            )?;
            details = json!({ "structure": name, "demo_seed": derive_seed(seed ^ DEMO_TAG, index) });
            let mut r = SampleRecord::new(
                &id,
                &patient,
                task,
                vec![ex.demo_input, ex.demo_output, ex.query],
                target,
                EXEMPLAR_INSTRUCTION,
            );
            r.aux.insert("classes".into(), class.to_string());
            r.aux.insert("demo_patient".into(), ex.demo_patient);
            r
        }
    };
    record.id = id.clone();
    let provenance = json!({
        "id": id,
        "task": task.name(),
        "record_seed": record_seed,
        "phantom_seed": phantom_seed,
        "details": details,
    });
    Ok(ForgedRecord { record, files: b.files, provenance })
}

impl Builder<'_> {
    fn mask_image(&mut self, role: &str, img: &Image) -> Result<String> {
        let path = format!("masks/{}_{role}.png", self.id);
        self.files.push((path.clone(), encode_png(img)?));
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeSummary {
    pub records: usize,
    pub per_task: BTreeMap<TaskKind, usize>,
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(&path, bytes).at(&path)
}

/// Forges `cfg.forge.size` records into `cfg.out`.
pub fn cmd_forge(cfg: &RunConfig) -> Result<ForgeSummary> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let out = cfg.out()?;
    std::fs::create_dir_all(out).at(out)?;
    let fc = &cfg.forge;
    let forged: Vec<ForgedRecord> = crate::with_threads(cfg.threads(), || {
        (0..fc.size as u64).into_par_iter().map(|i| forge_record(fc, seed, i)).collect::<Result<Vec<_>>>()
    })?;
    for f in &forged {
        for (rel, bytes) in &f.files {
            write_file(out, rel, bytes)?;
        }
    }
    let manifest = DatasetManifest::new(forged.iter().map(|f| f.record.clone()).collect());
    let manifest = patient_split(&manifest, fc.split, derive_seed(seed, SPLIT_TAG))?;
    write_file(out, MANIFEST_FILE, (manifest.to_json()? + "\n").as_bytes())?;
    let provenance = Provenance {
        master_seed: seed,
        forge: fc.clone(),
        records: forged.iter().map(|f| f.provenance.clone()).collect(),
    };
    write_file(out, PROVENANCE_FILE, (serde_json::to_string_pretty(&provenance)? + "\n").as_bytes())?;
    let mut per_task = BTreeMap::new();
    for f in &forged {
        *per_task.entry(f.record.task).or_insert(0) += 1;
    }
    log::info!("forged {} records into {}", forged.len(), out.display());
    Ok(ForgeSummary { records: forged.len(), per_task })
}
