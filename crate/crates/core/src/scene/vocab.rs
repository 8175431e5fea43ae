use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::BBox;
use crate::corpus_io::{EmbeddingError, EmbeddingTable};

/// Geometric relation between a first box `a` and a second box `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `a` rests on top of `b`.
    On,
    /// `a` is lower than `b`.
    Under,
    /// Offset more horizontally than vertically.
    Beside,
    /// `a` is higher than `b` without resting on it.
    Above,
}

/// Fraction of the narrower (shorter) box that must overlap for stacking
/// (side-by-side) relations.
pub const MIN_OVERLAP: f64 = 0.5;
/// Maximum vertical gap for `on`, as a fraction of image height.
pub const CONTACT_GAP: f64 = 0.05;

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::On, Relation::Under, Relation::Beside, Relation::Above];

    pub fn word(self) -> &'static str {
        match self {
            Relation::On => "on",
            Relation::Under => "under",
            Relation::Beside => "beside",
            Relation::Above => "above",
        }
    }

    pub fn from_word(word: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.word() == word)
    }

    pub fn holds(self, a: &BBox, b: &BBox, width: f64, height: f64) -> bool {
        Relation::between(a, b, width, height) == self
    }

    /// Exactly one relation holds for any ordered pair: `beside` when the
    /// centres are further apart horizontally than vertically, otherwise
    /// `on`, `above` or `under` by which box is higher and whether they touch.
    pub fn between(a: &BBox, b: &BBox, width: f64, height: f64) -> Relation {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let (dx, dy) = ((bx - ax) / width, (by - ay) / height);
        if dx.abs() >= dy.abs() {
            Relation::Beside
        } else if dy < 0.0 {
            Relation::Under
        } else if a.horizontal_overlap(b) >= MIN_OVERLAP && (a.y_br - b.y_tl).abs() <= CONTACT_GAP * height {
            Relation::On
        } else {
            Relation::Above
        }
    }
}

/// Words used by the generator and how they map onto visual feature slots:
/// category one-hot first, attribute one-hot next, noise after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneVocabulary {
    pub categories: Vec<String>,
    pub attributes: Vec<String>,
    pub relations: Vec<Relation>,
}

impl Default for SceneVocabulary {
    fn default() -> Self {
        SceneVocabulary {
            categories: ["cat", "dog", "man", "table", "car", "chair"].map(String::from).to_vec(),
            attributes: ["red", "black", "white", "blue", "green", "yellow"].map(String::from).to_vec(),
            relations: Relation::ALL.to_vec(),
        }
    }
}

impl SceneVocabulary {
    pub fn category_slot(&self, category: usize) -> usize {
        category
    }

    pub fn attribute_slot(&self, attribute: usize) -> usize {
        self.categories.len() + attribute
    }

    /// Number of leading feature slots with a fixed meaning.
    pub fn layout_width(&self) -> usize {
        self.categories.len() + self.attributes.len()
    }

    pub fn validate(&self, d_v: usize) -> Result<(), String> {
        if self.categories.len() < 2 || self.attributes.is_empty() {
            return Err("need at least two categories and one attribute".into());
        }
        let mut seen = std::collections::HashSet::new();
        let words = self
            .categories
            .iter()
            .map(String::as_str)
            .chain(self.attributes.iter().map(String::as_str))
            .chain(self.relations.iter().map(|r| r.word()));
        for w in words {
            if !seen.insert(w) {
                return Err(format!("word '{w}' appears in more than one list"));
            }
        }
        if self.layout_width() > d_v {
            return Err(format!("layout needs {} slots but d_v is {}", self.layout_width(), d_v));
        }
        Ok(())
    }

    /// Every word a generated query can contain.
    pub fn all_words(&self) -> Vec<String> {
        let mut out: Vec<String> = self.categories.clone();
        out.extend(self.attributes.iter().cloned());
        out.extend(self.relations.iter().map(|r| r.word().to_string()));
        out
    }

    /// Random word vectors for [`Self::all_words`], uniform in `[-1, 1)`.
    pub fn embedding_table(&self, dim: usize, seed: u64) -> Result<EmbeddingTable, EmbeddingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = self.all_words();
        let rows: Vec<(&str, Vec<f64>)> = words
            .iter()
            .map(|w| (w.as_str(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        EmbeddingTable::from_rows(dim, rows, seed)
    }
}
