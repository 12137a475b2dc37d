//! Manifest records to model-ready examples.

use std::path::Path;

use imagecore::io::read_image;
use imagecore::{parse_color_mask, DatasetManifest, Palette, SampleRecord, Split, TaskKind, DEFAULT_PARSE_TOL};
use metrics::Box;
use worldsim::scoring::EvalTarget;
use worldsim::train::TrainExample;
use worldsim::Prompt;

use crate::error::{HarnessError, IoContext, Result};
use crate::forge::LESION_CLASS;

fn classes(record: &SampleRecord) -> Result<Vec<u16>> {
    let text = record
        .aux
        .get("classes")
        .ok_or_else(|| HarnessError::Runtime(format!("{}: no classes entry", record.id)))?;
    text.split(',')
        .map(|c| c.trim().parse::<u16>().map_err(|_| HarnessError::Runtime(format!("{}: bad class {c:?}", record.id))))
        .collect()
}

/// The conditioning prompt of a record; exemplar queries are the structural image.
pub fn record_prompt(record: &SampleRecord) -> Prompt {
    let n = record.input_refs.len();
    let mut prompt = Prompt::new(&record.prompt, n);
    if record.task == TaskKind::Exemplar && n > 0 {
        prompt.structural = n - 1;
    }
    prompt.delta_t = record.delta_t;
    prompt
}

pub fn load_example(root: &Path, record: &SampleRecord) -> Result<TrainExample> {
    let images = record.input_refs.iter().map(|r| read_image(root.join(r))).collect::<imagecore::Result<Vec<_>>>()?;
    let target = read_image(root.join(&record.target_ref))?;
    let standard = Palette::standard();
    let lesions = match record.aux.get("lesion_mask") {
        Some(r) => {
            let img = read_image(root.join(r))?;
            Some(parse_color_mask(&img.to_rgb(), &standard.subset(&[LESION_CLASS])?, DEFAULT_PARSE_TOL)?)
        }
        None => None,
    };
    let eval = match record.task {
        TaskKind::Segment | TaskKind::Exemplar => {
            let palette = standard.subset(&classes(record)?)?;
            let gt = parse_color_mask(&target.to_rgb(), &palette, DEFAULT_PARSE_TOL)?;
            EvalTarget::Mask { gt, palette, tol: DEFAULT_PARSE_TOL }
        }
        TaskKind::Detect => {
            let r = record
                .aux
                .get("boxes")
                .ok_or_else(|| HarnessError::Runtime(format!("{}: no boxes entry", record.id)))?;
            let path = root.join(r);
            let coords: Vec<[f64; 4]> = serde_json::from_str(&std::fs::read_to_string(&path).at(&path)?)?;
            let gt = coords.iter().map(|c| Box::new(c[0], c[1], c[2], c[3])).collect::<metrics::Result<Vec<_>>>()?;
            let color = standard.get(LESION_CLASS).expect("standard class").color();
            EvalTarget::Boxes { gt, color, tol: DEFAULT_PARSE_TOL, size: target.dims() }
        }
        _ => EvalTarget::Image(target.clone()),
    };
    Ok(TrainExample {
        id: record.id.clone(),
        task: record.task,
        prompt: record_prompt(record),
        images,
        target,
        lesions,
        eval,
    })
}

pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<TrainExample>> {
    manifest.split(split).map(|r| load_example(root, r)).collect()
}

/// Loads a manifest and returns it with its corpus directory.
pub fn open_manifest(path: &Path) -> Result<(DatasetManifest, std::path::PathBuf)> {
    let manifest = DatasetManifest::load(path)?;
    manifest.validate()?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, root))
}
