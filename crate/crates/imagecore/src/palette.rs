use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ImageError, Result};
use crate::image::{Image, LabelMask};

/// Default nearest-color tolerance; wide enough to absorb anti-aliased edges.
pub const DEFAULT_PARSE_TOL: f32 = 0.35;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteEntry {
    pub id: u16,
    pub name: String,
    pub rgb: [u8; 3],
}

impl PaletteEntry {
    pub fn color(&self) -> [f32; 3] {
        [self.rgb[0] as f32 / 255.0, self.rgb[1] as f32 / 255.0, self.rgb[2] as f32 / 255.0]
    }
}

/// Binds class ids to display colors. Background (id 0, black) is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PaletteEntry>", into = "Vec<PaletteEntry>")]
pub struct Palette {
    entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut colors = HashSet::new();
        for e in &entries {
            if e.id == 0 {
                return Err(ImageError::Palette("class id 0 is reserved for background".into()));
            }
            if e.rgb == [0, 0, 0] {
                return Err(ImageError::Palette(format!("class {} uses the background color", e.id)));
            }
            if !ids.insert(e.id) {
                return Err(ImageError::Palette(format!("duplicate class id {}", e.id)));
            }
            if !colors.insert(e.rgb) {
                return Err(ImageError::Palette(format!("duplicate color {:?}", e.rgb)));
            }
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.id);
        Ok(Palette { entries })
    }

    /// The palette used by the phantom corpus.
    pub fn standard() -> Self {
        let e = |id, name: &str, rgb| PaletteEntry { id, name: name.to_string(), rgb };
        Palette::new(vec![
            e(1, "optic disc", [255, 0, 0]),
            e(2, "optic cup", [0, 255, 0]),
            e(3, "vessels", [0, 0, 255]),
            e(4, "fovea", [255, 255, 0]),
            e(5, "lesions", [0, 255, 255]),
            e(6, "rpe band", [255, 0, 255]),
            e(7, "macular hole", [255, 255, 255]),
        ])
        .expect("standard palette is valid")
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&PaletteEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// A palette containing only the given class, keeping its id and color.
    pub fn subset(&self, ids: &[u16]) -> Result<Palette> {
        let entries = ids
            .iter()
            .map(|&id| self.get(id).cloned().ok_or(ImageError::UnknownLabel(id)))
            .collect::<Result<Vec<_>>>()?;
        Palette::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl TryFrom<Vec<PaletteEntry>> for Palette {
    type Error = ImageError;

    fn try_from(entries: Vec<PaletteEntry>) -> Result<Self> {
        Palette::new(entries)
    }
}

impl From<Palette> for Vec<PaletteEntry> {
    fn from(p: Palette) -> Self {
        p.entries
    }
}

/// Assigns each pixel to the nearest palette color within `tol` (Euclidean RGB),
/// otherwise background. Ties go to the lowest class id.
pub fn parse_color_mask(img: &Image, palette: &Palette, tol: f32) -> Result<LabelMask> {
    if img.channels() != 3 {
        return Err(ImageError::Channels { expected: "3".into(), got: img.channels() });
    }
    let colors: Vec<(u16, [f32; 3])> = palette.entries.iter().map(|e| (e.id, e.color())).collect();
    let tol2 = tol.max(0.0) * tol.max(0.0);
    let mut mask = LabelMask::new(img.width(), img.height());
    for (label, px) in mask.labels_mut().iter_mut().zip(img.data().chunks_exact(3)) {
        let mut best: Option<(u16, f32)> = None;
        for &(id, c) in &colors {
            let d2 = (px[0] - c[0]).powi(2) + (px[1] - c[1]).powi(2) + (px[2] - c[2]).powi(2);
            // entries are sorted by id, so strict < keeps the lowest id on ties
            if d2 <= tol2 && best.map_or(true, |(_, bd)| d2 < bd) {
                best = Some((id, d2));
            }
        }
        *label = best.map_or(0, |(id, _)| id);
    }
    Ok(mask)
}

/// Renders a label mask with palette colors on a black background.
pub fn encode_color_mask(mask: &LabelMask, palette: &Palette) -> Result<Image> {
    let mut img = Image::new(mask.width(), mask.height(), 3);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let l = mask.get(x, y);
            if l == 0 {
                continue;
            }
            let entry = palette.get(l).ok_or(ImageError::UnknownLabel(l))?;
            img.set_pixel(x, y, &entry.color());
        }
    }
    Ok(img)
}
