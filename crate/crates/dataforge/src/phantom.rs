//! Procedural retinal phantoms with exact ground-truth masks.
//!
//! Sampling produces a [`Geometry`]; rendering is a pure function of
//! `(spec, geometry)`, so masks can always be regenerated and follow-up scans
//! are produced by editing the geometry and rendering again.

use std::collections::BTreeMap;
use std::f32::consts::PI;

use imagecore::{Image, LabelMask};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Color fundus photograph.
    Fundus,
    /// Fluorescein angiogram (grayscale), same anatomy as fundus.
    Angio,
    /// OCT B-scan (grayscale).
    Bscan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub kind: PhantomKind,
    /// Inclusive lesion count range.
    pub lesion_count_range: [u32; 2],
    /// Optic disc radius as a fraction of the image width.
    pub disc_radius_frac: f32,
    pub vessel_depth: u32,
    /// B-scan layer thicknesses as fractions of height (inner retina to choroid).
    pub layer_thicknesses: [f32; 6],
    /// Probability that a B-scan contains a macular hole.
    pub hole_probability: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            width: 128,
            height: 128,
            kind: PhantomKind::Fundus,
            lesion_count_range: [0, 5],
            disc_radius_frac: 0.1,
            vessel_depth: 3,
            layer_thicknesses: [0.05, 0.07, 0.05, 0.04, 0.08, 0.035],
            hole_probability: 0.5,
        }
    }
}

impl PhantomSpec {
    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn with_kind(mut self, kind: PhantomKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(ForgeError::InvalidSpec(format!(
                "phantom must be at least 32x32, got {}x{}",
                self.width, self.height
            )));
        }
        let [lo, hi] = self.lesion_count_range;
        if lo > hi || hi > 8 {
            return Err(ForgeError::InvalidSpec(format!("lesion_count_range {lo}..={hi} outside [0,8]")));
        }
        if !(0.02..=0.25).contains(&self.disc_radius_frac) {
            return Err(ForgeError::InvalidSpec("disc_radius_frac must lie in [0.02, 0.25]".into()));
        }
        if self.layer_thicknesses.iter().any(|&t| t <= 0.0) || self.layer_thicknesses.iter().sum::<f32>() > 0.6 {
            return Err(ForgeError::InvalidSpec("layer thicknesses must be positive and sum to <= 0.6".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    /// Bright (exudate-like) lesion.
    Bright,
    /// Dark (hemorrhage- or fluid-like) lesion.
    Dark,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub cx: f32,
    pub cy: f32,
    pub rx: f32,
    pub ry: f32,
    pub angle: f32,
    pub kind: LesionKind,
}

impl Lesion {
    #[inline]
    pub fn contains(&self, x: f32, y: f32) -> bool {
        if self.rx <= 0.0 || self.ry <= 0.0 {
            return false;
        }
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }

    pub fn scaled(&self, factor: f32) -> Lesion {
        Lesion { rx: self.rx * factor, ry: self.ry * factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VesselSegment {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
    pub half_width: f32,
}

impl VesselSegment {
    fn distance(&self, x: f32, y: f32) -> f32 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 { (((x - self.x0) * dx + (y - self.y0) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (px, py) = (self.x0 + t * dx, self.y0 + t * dy);
        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundusGeometry {
    pub fov_cx: f32,
    pub fov_cy: f32,
    pub fov_r: f32,
    pub disc_cx: f32,
    pub disc_cy: f32,
    pub disc_r: f32,
    /// Cup radius as a fraction of the disc radius.
    pub cup_ratio: f32,
    pub fovea_cx: f32,
    pub fovea_cy: f32,
    pub fovea_r: f32,
    pub vessels: Vec<VesselSegment>,
    pub lesions: Vec<Lesion>,
    /// Multiplicative pigmentation of the background.
    pub pigment: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BscanGeometry {
    /// Inner limiting membrane depth at the image center (pixels).
    pub ilm_y: f32,
    /// Parabolic curvature coefficient of all boundaries.
    pub curvature: f32,
    /// Thicknesses in pixels; the last entry is the RPE band.
    pub layers: Vec<f32>,
    pub hole_cx: f32,
    /// Hole width at the ILM; 0 means no hole.
    pub hole_width: f32,
    pub lesions: Vec<Lesion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Geometry {
    Fundus(FundusGeometry),
    Bscan(BscanGeometry),
}

impl Geometry {
    pub fn lesions(&self) -> &[Lesion] {
        match self {
            Geometry::Fundus(g) => &g.lesions,
            Geometry::Bscan(g) => &g.lesions,
        }
    }

    fn lesions_mut(&mut self) -> &mut Vec<Lesion> {
        match self {
            Geometry::Fundus(g) => &mut g.lesions,
            Geometry::Bscan(g) => &mut g.lesions,
        }
    }

    pub fn hole_width(&self) -> f32 {
        match self {
            Geometry::Bscan(g) => g.hole_width,
            Geometry::Fundus(_) => 0.0,
        }
    }
}

pub const MASK_NAMES: [&str; 7] = ["disc", "cup", "vessels", "fovea", "lesions", "rpe_band", "hole"];

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub spec: PhantomSpec,
    pub image: Image,
    /// Binary masks keyed by structure name (see [`MASK_NAMES`]).
    pub masks: BTreeMap<String, LabelMask>,
    pub patient_id: String,
    pub geometry: Geometry,
}

impl PhantomSample {
    pub fn mask(&self, name: &str) -> &LabelMask {
        &self.masks[name]
    }

    /// Same anatomy rendered as a different modality (fundus <-> angio).
    pub fn render_as(&self, kind: PhantomKind) -> Result<Image> {
        let spec = self.spec.clone().with_kind(kind);
        Ok(render(&spec, &self.geometry)?.0)
    }
}

/// Generates a phantom; deterministic in `(spec, seed)`.
pub fn gen_phantom(spec: &PhantomSpec, seed: u64) -> Result<PhantomSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = match spec.kind {
        PhantomKind::Fundus | PhantomKind::Angio => Geometry::Fundus(sample_fundus(spec, &mut rng)),
        PhantomKind::Bscan => Geometry::Bscan(sample_bscan(spec, &mut rng)),
    };
    let (image, masks) = render(spec, &geometry)?;
    Ok(PhantomSample { spec: spec.clone(), image, masks, patient_id: format!("P{seed:016x}"), geometry })
}

fn sample_fundus(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> FundusGeometry {
    let w = spec.width as f32;
    let h = spec.height as f32;
    let s = w.min(h);
    let fov_cx = w / 2.0;
    let fov_cy = h / 2.0;
    let fov_r = 0.47 * s;
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let disc_r = spec.disc_radius_frac * w * rng.gen_range(0.95..1.05);
    let max_off = (fov_r - disc_r * 1.4).max(0.0);
    let disc_cx = fov_cx + side * rng.gen_range(0.22 * s..0.3 * s).min(max_off);
    let disc_cy = fov_cy + rng.gen_range(-0.06..0.06) * h;
    let cup_ratio = rng.gen_range(0.4..0.7);
    let fovea_cx = fov_cx - side * rng.gen_range(0.02..0.06) * s;
    let fovea_cy = fov_cy + rng.gen_range(-0.03..0.03) * h;
    let fovea_r = 0.05 * s;

    let mut vessels = Vec::new();
    let base_angle = if side > 0.0 { PI } else { 0.0 };
    let trunk_offsets = [0.55f32, -0.55, 1.25, -1.25];
    for off in trunk_offsets {
        let angle = base_angle + off + rng.gen_range(-0.15..0.15);
        grow_vessel(
            rng,
            &mut vessels,
            (disc_cx, disc_cy),
            angle,
            0,
            spec.vessel_depth,
            s,
            (fov_cx, fov_cy, fov_r),
        );
    }

    let [lo, hi] = spec.lesion_count_range;
    let n = rng.gen_range(lo..=hi);
    let mut lesions = Vec::with_capacity(n as usize);
    let mut attempts = 0;
    while lesions.len() < n as usize && attempts < 200 {
        attempts += 1;
        let rr = rng.gen_range(0.0..0.75f32).sqrt() * fov_r;
        let th = rng.gen_range(0.0..2.0 * PI);
        let cx = fov_cx + rr * th.cos();
        let cy = fov_cy + rr * th.sin();
        let rx = rng.gen_range(0.025..0.06) * s;
        let ry = rx * rng.gen_range(0.6..1.0);
        let angle = rng.gen_range(0.0..PI);
        let kind = if rng.gen_bool(0.5) { LesionKind::Bright } else { LesionKind::Dark };
        // keep lesions off the disc so their masks stay distinct
        if ((cx - disc_cx).powi(2) + (cy - disc_cy).powi(2)).sqrt() < disc_r + rx + 2.0 {
            continue;
        }
        lesions.push(Lesion { cx, cy, rx, ry, angle, kind });
    }
    let pigment = rng.gen_range(0.85..1.1);
    FundusGeometry {
        fov_cx,
        fov_cy,
        fov_r,
        disc_cx,
        disc_cy,
        disc_r,
        cup_ratio,
        fovea_cx,
        fovea_cy,
        fovea_r,
        vessels,
        lesions,
        pigment,
    }
}

#[allow(clippy::too_many_arguments)]
fn grow_vessel(
    rng: &mut ChaCha8Rng,
    out: &mut Vec<VesselSegment>,
    start: (f32, f32),
    mut angle: f32,
    depth: u32,
    max_depth: u32,
    scale: f32,
    fov: (f32, f32, f32),
) {
    let half_width = (0.011 * scale * 0.7f32.powi(depth as i32)).max(0.6);
    let seg_len = 0.07 * scale;
    let (mut x, mut y) = start;
    let n_segments = 6 - depth.min(3) as usize;
    for i in 0..n_segments {
        angle += rng.gen_range(-0.25..0.25);
        let nx = x + seg_len * angle.cos();
        let ny = y + seg_len * angle.sin();
        if ((nx - fov.0).powi(2) + (ny - fov.1).powi(2)).sqrt() > fov.2 {
            break;
        }
        out.push(VesselSegment { x0: x, y0: y, x1: nx, y1: ny, half_width });
        if depth < max_depth && i >= 1 && rng.gen_bool(0.45) {
            let branch = angle + if rng.gen_bool(0.5) { 0.6 } else { -0.6 };
            grow_vessel(rng, out, (nx, ny), branch, depth + 1, max_depth, scale, fov);
        }
        x = nx;
        y = ny;
    }
}

fn sample_bscan(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> BscanGeometry {
    let w = spec.width as f32;
    let h = spec.height as f32;
    let ilm_y = h * rng.gen_range(0.28..0.36);
    let curvature = rng.gen_range(-0.6..0.6) / w;
    let layers: Vec<f32> =
        spec.layer_thicknesses.iter().map(|&t| (t * h * rng.gen_range(0.9..1.1)).max(1.0)).collect();
    let hole_cx = w / 2.0 + rng.gen_range(-0.08..0.08) * w;
    let hole_width = if rng.gen::<f32>() < spec.hole_probability { rng.gen_range(0.08..0.18) * w } else { 0.0 };
    let [lo, hi] = spec.lesion_count_range;
    let n = rng.gen_range(lo..=hi);
    let retina: f32 = layers[..layers.len() - 1].iter().sum();
    let lesions = (0..n)
        .map(|_| {
            let cx = rng.gen_range(0.15..0.85) * w;
            let cy = ilm_y + retina * rng.gen_range(0.45..0.75);
            let rx = rng.gen_range(0.03..0.07) * w;
            let ry = (retina * rng.gen_range(0.12..0.22)).max(1.0);
            Lesion { cx, cy, rx, ry, angle: 0.0, kind: LesionKind::Dark }
        })
        .collect();
    BscanGeometry { ilm_y, curvature, layers, hole_cx, hole_width, lesions }
}

/// Renders image and masks from geometry. Pure; hard-edged so that editing one
/// structure only changes the pixels it covers.
pub fn render(spec: &PhantomSpec, geometry: &Geometry) -> Result<(Image, BTreeMap<String, LabelMask>)> {
    spec.validate()?;
    match (spec.kind, geometry) {
        (PhantomKind::Fundus | PhantomKind::Angio, Geometry::Fundus(g)) => Ok(render_fundus(spec, g)),
        (PhantomKind::Bscan, Geometry::Bscan(g)) => Ok(render_bscan(spec, g)),
        _ => Err(ForgeError::InvalidSpec(format!("geometry does not match kind {:?}", spec.kind))),
    }
}

fn empty_masks(w: usize, h: usize) -> BTreeMap<String, LabelMask> {
    MASK_NAMES.iter().map(|n| (n.to_string(), LabelMask::new(w, h))).collect()
}

fn render_fundus(spec: &PhantomSpec, g: &FundusGeometry) -> (Image, BTreeMap<String, LabelMask>) {
    let (w, h) = (spec.width, spec.height);
    let angio = spec.kind == PhantomKind::Angio;
    let mut img = Image::new(w, h, if angio { 1 } else { 3 });
    let mut masks = empty_masks(w, h);
    let cup_r = g.disc_r * g.cup_ratio;

    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let dfov = ((px - g.fov_cx).powi(2) + (py - g.fov_cy).powi(2)).sqrt();
            if dfov > g.fov_r {
                continue;
            }
            let t = dfov / g.fov_r;
            let vignette = 1.0 - 0.3 * t * t;
            let mut color: [f32; 3] = if angio {
                [0.22 * vignette; 3]
            } else {
                [0.80 * vignette * g.pigment, 0.38 * vignette * g.pigment, 0.18 * vignette * g.pigment]
            };

            let dfovea = ((px - g.fovea_cx).powi(2) + (py - g.fovea_cy).powi(2)).sqrt();
            if dfovea <= g.fovea_r {
                masks.get_mut("fovea").unwrap().set(x, y, 1);
                color = if angio { [0.08; 3] } else { [color[0] * 0.7, color[1] * 0.6, color[2] * 0.6] };
            }

            if g.vessels.iter().any(|v| v.distance(px, py) <= v.half_width) {
                masks.get_mut("vessels").unwrap().set(x, y, 1);
                color = if angio { [0.85; 3] } else { [0.48, 0.08, 0.06] };
            }

            let ddisc = ((px - g.disc_cx).powi(2) + (py - g.disc_cy).powi(2)).sqrt();
            if ddisc <= g.disc_r {
                masks.get_mut("disc").unwrap().set(x, y, 1);
                color = if angio { [0.55; 3] } else { [0.98, 0.82, 0.55] };
                if ddisc <= cup_r {
                    masks.get_mut("cup").unwrap().set(x, y, 1);
                    color = if angio { [0.7; 3] } else { [1.0, 0.96, 0.82] };
                }
            }

            if let Some(lesion) = g.lesions.iter().find(|l| l.contains(px, py)) {
                masks.get_mut("lesions").unwrap().set(x, y, 1);
                color = match (lesion.kind, angio) {
                    (LesionKind::Bright, false) => [0.96, 0.92, 0.35],
                    (LesionKind::Dark, false) => [0.35, 0.04, 0.03],
                    (LesionKind::Bright, true) => [0.97; 3],
                    (LesionKind::Dark, true) => [0.05; 3],
                };
            }

            if angio {
                img.set(x, y, 0, color[0]);
            } else {
                img.set_pixel(x, y, &color);
            }
        }
    }
    (img, masks)
}

fn render_bscan(spec: &PhantomSpec, g: &BscanGeometry) -> (Image, BTreeMap<String, LabelMask>) {
    let (w, h) = (spec.width, spec.height);
    let mut img = Image::new(w, h, 1);
    let mut masks = empty_masks(w, h);
    // inner retina .. outer nuclear layer, then RPE, then choroid
    let layer_values = [0.62f32, 0.42, 0.26, 0.48, 0.2, 0.92];
    let retina: f32 = g.layers[..g.layers.len() - 1].iter().sum();
    let cx = w as f32 / 2.0;

    for x in 0..w {
        let px = x as f32 + 0.5;
        let top = g.ilm_y + g.curvature * (px - cx).powi(2);
        let rpe_top = top + retina;
        for y in 0..h {
            let py = y as f32 + 0.5;
            let mut v = 0.04;
            if py >= top {
                let mut edge = top;
                v = 0.34; // choroid
                for (i, &t) in g.layers.iter().enumerate() {
                    if py < edge + t {
                        v = layer_values[i.min(layer_values.len() - 1)];
                        break;
                    }
                    edge += t;
                }
            }
            let in_rpe = py >= rpe_top && py < rpe_top + g.layers[g.layers.len() - 1];
            if in_rpe {
                masks.get_mut("rpe_band").unwrap().set(x, y, 1);
            }
            if g.hole_width > 0.0 && py >= top && py < rpe_top {
                // wedge narrowing from the ILM to a third of its width above the RPE
                let depth = ((py - top) / retina).clamp(0.0, 1.0);
                let half = 0.5 * g.hole_width * (1.0 - 0.67 * depth);
                if (px - g.hole_cx).abs() <= half {
                    masks.get_mut("hole").unwrap().set(x, y, 1);
                    v = 0.04;
                }
            }
            if g.lesions.iter().any(|l| l.contains(px, py)) && py >= top && py < rpe_top {
                masks.get_mut("lesions").unwrap().set(x, y, 1);
                v = 0.07;
            }
            img.set(x, y, 0, v);
        }
    }
    (img, masks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FollowupCategory {
    Stable,
    Recovery,
    Progression,
}

impl FollowupCategory {
    pub const ALL: [FollowupCategory; 3] =
        [FollowupCategory::Stable, FollowupCategory::Recovery, FollowupCategory::Progression];

    pub fn name(self) -> &'static str {
        match self {
            FollowupCategory::Stable => "stable",
            FollowupCategory::Recovery => "recovery",
            FollowupCategory::Progression => "progression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Default lesion growth rate per month.
pub const DEFAULT_GROWTH: f32 = 0.1;

/// Months for a macular hole to close completely under recovery.
pub const HOLE_CLOSURE_MONTHS: f32 = 6.0;

/// Edits the geometry of a baseline for a follow-up after `delta_t` months.
pub fn followup_geometry(geometry: &Geometry, category: FollowupCategory, delta_t: f32, growth: f32) -> Geometry {
    let mut g = geometry.clone();
    let factor = match category {
        FollowupCategory::Stable => 1.0,
        FollowupCategory::Progression => 1.0 + growth * delta_t,
        FollowupCategory::Recovery => (1.0 - growth * delta_t).max(0.0),
    };
    for l in g.lesions_mut() {
        *l = l.scaled(factor);
    }
    if let (FollowupCategory::Recovery, Geometry::Bscan(b)) = (category, &mut g) {
        let closed = (delta_t / HOLE_CLOSURE_MONTHS).clamp(0.0, 1.0);
        b.hole_width *= 1.0 - closed;
    }
    g
}

/// Renders a follow-up scan and the mask of pixels whose lesion/hole state changed.
pub fn gen_followup(
    sample: &PhantomSample,
    category: FollowupCategory,
    delta_t: f32,
    growth: f32,
) -> Result<(Image, LabelMask)> {
    if !(delta_t >= 0.0) {
        return Err(ForgeError::InvalidArgument(format!("delta_t must be >= 0, got {delta_t}")));
    }
    let geometry = followup_geometry(&sample.geometry, category, delta_t, growth);
    let (image, masks) = render(&sample.spec, &geometry)?;
    let before = sample.mask("lesions").union(sample.mask("hole"));
    let after = masks["lesions"].union(&masks["hole"]);
    let labels = before.labels().iter().zip(after.labels()).map(|(&a, &b)| u16::from(a != b)).collect();
    let change = LabelMask::from_vec(before.width(), before.height(), labels)?;
    Ok((image, change))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = PhantomSpec::default();
        let a = gen_phantom(&spec, 11).unwrap();
        let b = gen_phantom(&spec, 11).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.masks, b.masks);
        assert_eq!(a.geometry, b.geometry);
        assert_ne!(gen_phantom(&spec, 12).unwrap().image, a.image);
    }

    #[test]
    fn zero_lesions() {
        let spec = PhantomSpec { lesion_count_range: [0, 0], ..Default::default() };
        for seed in 0..5 {
            assert!(gen_phantom(&spec, seed).unwrap().mask("lesions").is_empty());
        }
    }

    #[test]
    fn rejects_small_and_bad_ranges() {
        assert!(gen_phantom(&PhantomSpec::default().with_size(31, 64), 0).is_err());
        let bad = PhantomSpec { lesion_count_range: [3, 9], ..Default::default() };
        assert!(gen_phantom(&bad, 0).is_err());
    }

    #[test]
    fn disc_area_matches_geometry() {
        let spec = PhantomSpec::default();
        for seed in 0..100 {
            let s = gen_phantom(&spec, seed).unwrap();
            let Geometry::Fundus(g) = &s.geometry else { panic!() };
            let expected = PI * g.disc_r * g.disc_r;
            let nominal = PI * (spec.disc_radius_frac * spec.width as f32).powi(2);
            let got = s.mask("disc").count(1) as f32;
            assert!((got - expected).abs() / expected < 0.05, "seed {seed}: {got} vs {expected}");
            assert!((got - nominal).abs() / nominal <= 0.15, "seed {seed}");
        }
    }

    #[test]
    fn cup_inside_disc_and_masks_consistent() {
        let s = gen_phantom(&PhantomSpec::default(), 5).unwrap();
        let (disc, cup) = (s.mask("disc"), s.mask("cup"));
        assert!(cup.count(1) > 0);
        for (c, d) in cup.labels().iter().zip(disc.labels()) {
            assert!(*c == 0 || *d == 1);
        }
        let (img, masks) = render(&s.spec, &s.geometry).unwrap();
        assert_eq!(img, s.image);
        assert_eq!(masks, s.masks);
    }

    #[test]
    fn bscan_has_rpe_band() {
        let spec = PhantomSpec::default().with_kind(PhantomKind::Bscan);
        let s = gen_phantom(&spec, 3).unwrap();
        assert_eq!(s.image.channels(), 1);
        assert!(s.mask("rpe_band").count(1) > spec.width);
        assert!(s.mask("disc").is_empty());
    }

    #[test]
    fn followup_stable_and_zero_dt_are_identity() {
        let spec = PhantomSpec { lesion_count_range: [2, 4], ..Default::default() };
        let s = gen_phantom(&spec, 8).unwrap();
        let (img, change) = gen_followup(&s, FollowupCategory::Stable, 12.0, DEFAULT_GROWTH).unwrap();
        assert_eq!(img, s.image);
        assert!(change.is_empty());
        let (img, change) = gen_followup(&s, FollowupCategory::Progression, 0.0, DEFAULT_GROWTH).unwrap();
        assert_eq!(img, s.image);
        assert!(change.is_empty());
        assert!(gen_followup(&s, FollowupCategory::Progression, -1.0, DEFAULT_GROWTH).is_err());
    }

    #[test]
    fn progression_scales_radii_and_change_is_local() {
        let spec = PhantomSpec { lesion_count_range: [2, 4], ..Default::default() };
        let s = gen_phantom(&spec, 21).unwrap();
        let (img, change) = gen_followup(&s, FollowupCategory::Progression, 5.0, 0.1).unwrap();
        let grown = followup_geometry(&s.geometry, FollowupCategory::Progression, 5.0, 0.1);
        for (a, b) in s.geometry.lesions().iter().zip(grown.lesions()) {
            assert!((b.rx / a.rx - 1.5).abs() < 1e-6);
        }
        // regenerate from scaled geometry and compare the changed area
        let (_, masks) = render(&spec, &grown).unwrap();
        let expected = masks["lesions"].count(1) - s.mask("lesions").count(1);
        assert_eq!(change.count(1), expected);
        assert!(change.count(1) > 0);
        for i in 0..change.labels().len() {
            if change.labels()[i] == 0 {
                let (x, y) = (i % spec.width, i / spec.width);
                assert_eq!(img.pixel(x, y), s.image.pixel(x, y));
            }
        }
    }

    #[test]
    fn recovery_closes_hole() {
        let spec = PhantomSpec { hole_probability: 1.0, ..Default::default() }.with_kind(PhantomKind::Bscan);
        let s = gen_phantom(&spec, 4).unwrap();
        assert!(s.mask("hole").count(1) > 0);
        let g = followup_geometry(&s.geometry, FollowupCategory::Recovery, 6.0, 0.1);
        assert_eq!(g.hole_width(), 0.0);
        let g = followup_geometry(&s.geometry, FollowupCategory::Recovery, 3.0, 0.1);
        assert!((g.hole_width() - 0.5 * s.geometry.hole_width()).abs() < 1e-5);
    }
}
