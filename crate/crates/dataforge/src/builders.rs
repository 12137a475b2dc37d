//! Instruction templates and sample builders for exemplar and RPE-aligned records.

use imagecore::{LabelMask, SampleRecord, TaskKind};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::phantom::FollowupCategory;

pub const EXEMPLAR_INSTRUCTION: &str =
    "According to the demonstration shown in image 1, apply the same process to image 2.";

pub const RPE_ALIGNMENT_SENTENCE: &str = "Align the retinal position according to the RPE layer mask from image 2.";

/// Renders a follow-up interval as "at N months".
pub fn delta_t_phrase(months: f64) -> String {
    if months.fract() == 0.0 {
        format!("at {} months", months as i64)
    } else {
        format!("at {months} months")
    }
}

pub fn segment_prompt(structure: &str, color: &str) -> String {
    format!("segment the {structure} using {color}")
}

pub fn detect_prompt(structure: &str, color: &str) -> String {
    format!("detect the {structure} with {color} boxes")
}

pub fn translate_prompt() -> String {
    "translate the color fundus photograph into a fluorescein angiogram".into()
}

pub fn enhance_prompt() -> String {
    "enhance the quality of this degraded fundus image".into()
}

pub fn sr_prompt(factor: usize) -> String {
    format!("restore the high resolution image from this image downsampled by {factor}")
}

pub fn inpaint_prompt() -> String {
    "inpaint the masked regions of this fundus image".into()
}

pub fn outpaint_prompt() -> String {
    "outpaint the missing periphery of this fundus image".into()
}

pub fn progress_prompt(category: FollowupCategory, months: f64) -> String {
    format!("predict the {} follow up retinal image {}", category.name(), delta_t_phrase(months))
}

pub fn rpe_prompt(months: f64) -> String {
    format!("Predict the post-operative retinal image {}. {RPE_ALIGNMENT_SENTENCE}", delta_t_phrase(months))
}

/// Every word the templates above can emit (numbers excluded).
pub fn template_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = vec![
        "segment", "the", "using", "detect", "with", "boxes", "translate", "color", "fundus", "photograph",
        "into", "a", "fluorescein", "angiogram", "enhance", "quality", "of", "this", "degraded", "image",
        "restore", "high", "resolution", "from", "downsampled", "by", "inpaint", "masked", "regions",
        "outpaint", "missing", "periphery", "predict", "follow", "up", "retinal", "at", "months", "post",
        "operative", "align", "position", "according", "to", "rpe", "layer", "mask", "demonstration",
        "shown", "in", "apply", "same", "process", "and", "optic", "disc", "cup", "vessels", "fovea",
        "lesions", "band", "macular", "hole", "stable", "recovery", "progression", "red", "green", "blue",
        "yellow", "cyan", "magenta", "white",
    ];
    words.sort_unstable();
    words.dedup();
    words
}

/// Color names for the standard palette's RGB values.
pub fn color_name(rgb: [u8; 3]) -> &'static str {
    match rgb {
        [255, 0, 0] => "red",
        [0, 255, 0] => "green",
        [0, 0, 255] => "blue",
        [255, 255, 0] => "yellow",
        [0, 255, 255] => "cyan",
        [255, 0, 255] => "magenta",
        [255, 255, 255] => "white",
        _ => "color",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarSample {
    pub demo_input: String,
    pub demo_output: String,
    pub query: String,
    pub instruction: String,
    pub task: String,
    pub demo_patient: String,
    pub query_patient: String,
}

/// A demonstration pair or query, referenced by path, with its patient.
#[derive(Debug, Clone, Copy)]
pub struct PatientRef<'a> {
    pub path: &'a str,
    pub patient: &'a str,
}

/// Builds an exemplar-conditioned sample. Demo and query must come from different patients.
pub fn build_exemplar(
    demo_input: PatientRef<'_>,
    demo_output: &str,
    query: PatientRef<'_>,
    task: &str,
) -> Result<ExemplarSample> {
    if demo_input.patient == query.patient {
        return Err(ForgeError::Leakage(format!(
            "demonstration and query both come from patient {}",
            query.patient
        )));
    }
    Ok(ExemplarSample {
        demo_input: demo_input.path.to_string(),
        demo_output: demo_output.to_string(),
        query: query.path.to_string(),
        instruction: EXEMPLAR_INSTRUCTION.to_string(),
        task: task.to_string(),
        demo_patient: demo_input.patient.to_string(),
        query_patient: query.patient.to_string(),
    })
}

pub const EMPTY_RPE_WARNING: &str = "empty_rpe_mask";

/// Paths and sizes for an RPE-aligned progression sample.
#[derive(Debug, Clone)]
pub struct RpeInputs<'a> {
    pub id: &'a str,
    pub patient_id: &'a str,
    pub pre_ref: &'a str,
    pub post_ref: &'a str,
    /// Where the rendered RPE mask image lives.
    pub rpe_mask_ref: &'a str,
    pub post_dims: (usize, usize),
}

/// Builds a record whose second input is the RPE band mask of the post-operative scan.
pub fn build_rpe_sample(inputs: &RpeInputs<'_>, rpe_mask: &LabelMask, delta_t: f64) -> Result<SampleRecord> {
    rpe_mask.check_dims(inputs.post_dims.0, inputs.post_dims.1)?;
    if !(delta_t >= 0.0) {
        return Err(ForgeError::InvalidArgument(format!("delta_t must be >= 0, got {delta_t}")));
    }
    let mut rec = SampleRecord::new(
        inputs.id,
        inputs.patient_id,
        TaskKind::Progress,
        vec![inputs.pre_ref.to_string(), inputs.rpe_mask_ref.to_string()],
        inputs.post_ref,
        rpe_prompt(delta_t),
    );
    rec.delta_t = Some(delta_t);
    rec.category = Some(FollowupCategory::Recovery.name().to_string());
    if rpe_mask.is_empty() {
        rec.warnings.push(EMPTY_RPE_WARNING.to_string());
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exemplar_template_and_leakage_guard() {
        let s = build_exemplar(
            PatientRef { path: "a.png", patient: "p1" },
            "a_mask.png",
            PatientRef { path: "b.png", patient: "p2" },
            "segment",
        )
        .unwrap();
        assert_eq!(
            s.instruction,
            "According to the demonstration shown in image 1, apply the same process to image 2."
        );
        let back: ExemplarSample = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        let err = build_exemplar(
            PatientRef { path: "a.png", patient: "p1" },
            "a_mask.png",
            PatientRef { path: "b.png", patient: "p1" },
            "segment",
        );
        assert!(matches!(err, Err(ForgeError::Leakage(_))));
    }

    fn inputs() -> RpeInputs<'static> {
        RpeInputs {
            id: "r1",
            patient_id: "p1",
            pre_ref: "pre.png",
            post_ref: "post.png",
            rpe_mask_ref: "rpe.png",
            post_dims: (8, 8),
        }
    }

    #[test]
    fn rpe_prompt_contents() {
        let mut mask = LabelMask::new(8, 8);
        mask.set(1, 6, 1);
        let r = build_rpe_sample(&inputs(), &mask, 6.0).unwrap();
        assert!(r.prompt.contains("Align the retinal position according to the RPE layer mask from image 2."));
        assert!(r.prompt.contains("at 6 months"));
        assert_eq!(r.input_refs, vec!["pre.png", "rpe.png"]);
        assert_eq!(r.target_ref, "post.png");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn rpe_empty_mask_flagged_and_dims_checked() {
        let r = build_rpe_sample(&inputs(), &LabelMask::new(8, 8), 3.0).unwrap();
        assert_eq!(r.warnings, vec![EMPTY_RPE_WARNING]);
        assert!(build_rpe_sample(&inputs(), &LabelMask::new(8, 9), 3.0).is_err());
    }

    #[test]
    fn phrases() {
        assert_eq!(delta_t_phrase(6.0), "at 6 months");
        assert_eq!(delta_t_phrase(1.5), "at 1.5 months");
        assert_eq!(segment_prompt("optic disc", "red"), "segment the optic disc using red");
    }
}
