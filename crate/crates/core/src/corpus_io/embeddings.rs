//! GloVe-style text embeddings: one `word v1 ... vD` line per word.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SELF_TOKEN: &str = "SELF";
pub const UNKNOWN_TOKEN: &str = "UKN";
pub const OOV_TOKEN: &str = "OOV";
pub const SPECIAL_TOKENS: [&str; 3] = [SELF_TOKEN, UNKNOWN_TOKEN, OOV_TOKEN];

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("line {line}: expected {expected} values after the word, found {found}")]
    Arity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: invalid number '{value}'")]
    Number { line: usize, value: String },
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word vectors of a fixed dimension with `SELF`, `UKN` and `OOV` rows always
/// present.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

/// Case policy: the three special tokens keep their spelling, everything else
/// is lowercased.
pub fn normalize_word(word: &str) -> String {
    if SPECIAL_TOKENS.contains(&word) {
        word.to_string()
    } else {
        word.to_lowercase()
    }
}

impl EmbeddingTable {
    /// An empty table holding only the special rows, drawn from
    /// uniform(-0.1, 0.1) under `seed`.
    pub fn with_specials(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        let mut table = EmbeddingTable::empty(dim)?;
        table.fill_specials(seed);
        Ok(table)
    }

    fn empty(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDimension);
        }
        Ok(EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        })
    }

    fn fill_specials(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for token in SPECIAL_TOKENS {
            // Draw regardless so each special row's values do not depend on
            // which other specials the file supplied.
            let draw: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-0.1..0.1)).collect();
            if !self.index.contains_key(token) {
                self.insert(token, draw);
            }
        }
    }

    /// Inserts or replaces a row.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> bool {
        assert_eq!(vector.len(), self.dim, "vector length must equal the table dimension");
        let word = normalize_word(word);
        if let Some(&row) = self.index.get(&word) {
            self.vectors[row * self.dim..(row + 1) * self.dim].copy_from_slice(&vector);
            true
        } else {
            self.index.insert(word.clone(), self.words.len());
            self.words.push(word);
            self.vectors.extend(vector);
            false
        }
    }

    /// Builds a table from explicit rows, adding missing special rows.
    pub fn from_rows<'a>(
        dim: usize,
        rows: impl IntoIterator<Item = (&'a str, Vec<f64>)>,
        seed: u64,
    ) -> Result<Self, EmbeddingError> {
        let mut table = EmbeddingTable::empty(dim)?;
        for (w, v) in rows {
            if v.len() != dim {
                return Err(EmbeddingError::Arity {
                    line: table.words.len() + 1,
                    expected: dim,
                    found: v.len(),
                });
            }
            table.insert(w, v);
        }
        table.fill_specials(seed);
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(&normalize_word(word))
    }

    /// Vector for `word`, falling back to the `OOV` row.
    pub fn lookup(&self, word: &str) -> &[f64] {
        let row = self
            .index
            .get(&normalize_word(word))
            .or_else(|| self.index.get(OOV_TOKEN))
            .copied()
            .expect("OOV row always present");
        self.row(row)
    }

    pub(crate) fn row(&self, row: usize) -> &[f64] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }
}

/// Reads a text embedding file of dimension `dim`. Special rows missing from
/// the file are seeded from `seed`.
pub fn load_embeddings<R: BufRead>(reader: R, dim: usize, seed: u64) -> Result<EmbeddingTable, EmbeddingError> {
    let mut table = EmbeddingTable::empty(dim)?;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(EmbeddingError::Arity {
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        let vector = values
            .iter()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(EmbeddingError::Number {
                    line: lineno,
                    value: v.to_string(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if table.insert(word, vector) {
            log::warn!("line {lineno}: duplicate embedding for '{word}', keeping the last one");
        }
    }
    table.fill_specials(seed);
    Ok(table)
}

pub fn write_embeddings<W: Write>(mut writer: W, table: &EmbeddingTable) -> std::io::Result<()> {
    for (i, w) in table.words.iter().enumerate() {
        write!(writer, "{w}")?;
        for v in table.row(i) {
            // `{:?}` prints the shortest string that round-trips exactly.
            write!(writer, " {v:?}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}
