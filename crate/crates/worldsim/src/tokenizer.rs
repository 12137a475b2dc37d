use std::collections::HashMap;

use dataforge::builders::template_words;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;
/// Numbers 0..=MAX_NUMBER get their own tokens (follow-up months, SR factors).
pub const MAX_NUMBER: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::new(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Self {
        let mut v = Vocab { words, index: HashMap::new() };
        v.reindex();
        v
    }

    /// UNK, the instruction-template words, then the numbers.
    pub fn from_templates() -> Self {
        let mut words = vec![UNK.to_string()];
        words.extend(template_words().into_iter().map(String::from));
        words.extend((0..=MAX_NUMBER).map(|n| n.to_string()));
        Self::new(words)
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Lowercased alphanumeric runs; everything else separates words.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Result<Vec<usize>> {
    let words = split_words(text);
    if words.is_empty() {
        return Err(SimError::Input("empty prompt".into()));
    }
    Ok(words.iter().map(|w| vocab.id(w)).collect())
}

/// A piece of the conditioning sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    /// Index into the conditioning image list.
    Image(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub segments: Vec<Segment>,
    /// Which conditioning image supplies the structural latent.
    pub structural: usize,
    pub delta_t: Option<f64>,
}

impl Prompt {
    /// Text followed by images `0..n_images`; the first image is structural.
    pub fn new(text: &str, n_images: usize) -> Self {
        let mut segments = vec![Segment::Text(text.to_string())];
        segments.extend((0..n_images).map(Segment::Image));
        Prompt { segments, structural: 0, delta_t: None }
    }

    /// Instruction, then demo input, demo output and query; the query is structural.
    pub fn exemplar(instruction: &str) -> Self {
        let mut p = Self::new(instruction, 3);
        p.structural = 2;
        p
    }

    pub fn text(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Text(t) => Some(t.as_str()),
                Segment::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn image_refs(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Image(i) => Some(*i),
                Segment::Text(_) => None,
            })
            .collect()
    }

    pub fn validate(&self, n_images: usize) -> Result<()> {
        if self.segments.is_empty() {
            return Err(SimError::Input("prompt has no segments".into()));
        }
        if n_images == 0 {
            return Err(SimError::Input("at least one conditioning image is required".into()));
        }
        if let Some(bad) = self.image_refs().into_iter().find(|&i| i >= n_images) {
            return Err(SimError::Input(format!("image segment {bad} but only {n_images} images given")));
        }
        if self.structural >= n_images {
            return Err(SimError::Input(format!("structural image {} out of range", self.structural)));
        }
        Ok(())
    }
}
