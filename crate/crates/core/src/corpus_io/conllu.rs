//! Ten-column CoNLL-U style dependency parses.
//!
//! Columns used: 1 index, 2 surface, 4 POS, 7 head, 8 relation. The rest are
//! ignored on read and written as `_`. Sentences are separated by blank
//! lines; a `# sent_id = ...` comment names the sentence.

use std::fmt;
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("sentence {sentence}: {detail}")]
    Structure { sentence: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DependencyToken {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface: String,
    pub pos: String,
    /// Index of the head token, 0 for the root.
    pub head: usize,
    pub relation: String,
}

impl DependencyToken {
    pub fn new(index: usize, surface: &str, pos: &str, head: usize, relation: &str) -> Self {
        DependencyToken {
            index,
            surface: surface.to_lowercase(),
            pos: pos.to_string(),
            head,
            relation: relation.to_string(),
        }
    }

    /// Relation without a subtype, e.g. `nmod` for `nmod:poss`.
    pub fn base_relation(&self) -> &str {
        self.relation.split(':').next().unwrap_or("")
    }

    pub fn is_noun(&self) -> bool {
        matches!(self.pos.as_str(), "NN" | "NNS" | "NNP" | "NNPS" | "NOUN" | "PROPN")
    }

    pub fn is_verb(&self) -> bool {
        self.pos.starts_with("VB") || self.pos == "VERB"
    }
}

/// A validated dependency tree.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct DependencyParse {
    sentence_id: String,
    tokens: Vec<DependencyToken>,
}

impl DependencyParse {
    pub fn new(sentence_id: impl Into<String>, tokens: Vec<DependencyToken>) -> Result<Self, ParseError> {
        let sentence_id = sentence_id.into();
        let fail = |detail: String| ParseError::Structure {
            sentence: sentence_id.clone(),
            detail,
        };
        if tokens.is_empty() {
            return Err(fail("no tokens".into()));
        }
        let n = tokens.len();
        for (pos, t) in tokens.iter().enumerate() {
            if t.index != pos + 1 {
                return Err(fail(format!("token {} found at position {}", t.index, pos + 1)));
            }
            if t.head == t.index {
                return Err(fail(format!("token {} is its own head", t.index)));
            }
            if t.head > n {
                return Err(fail(format!("token {} has head {} beyond {} tokens", t.index, t.head, n)));
            }
            if t.relation.is_empty() {
                return Err(fail(format!("token {} has an empty relation", t.index)));
            }
        }
        let roots = tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(fail(format!("expected exactly one root, found {roots}")));
        }
        // Every token must reach the root within n steps.
        for t in &tokens {
            let mut cur = t.head;
            let mut steps = 0;
            while cur != 0 {
                steps += 1;
                if steps > n {
                    return Err(fail(format!("cycle through token {}", t.index)));
                }
                cur = tokens[cur - 1].head;
            }
        }
        Ok(DependencyParse { sentence_id, tokens })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn tokens(&self) -> &[DependencyToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> &DependencyToken {
        &self.tokens[index - 1]
    }

    pub fn root(&self) -> usize {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .map(|t| t.index)
            .expect("validated parse has a root")
    }

    /// Dependents of `index` in token order.
    pub fn children(&self, index: usize) -> impl Iterator<Item = &DependencyToken> + '_ {
        self.tokens.iter().filter(move |t| t.head == index)
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for DependencyParse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# sent_id = {}", self.sentence_id)?;
        for t in &self.tokens {
            writeln!(
                f,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                t.index, t.surface, t.pos, t.head, t.relation
            )?;
        }
        Ok(())
    }
}

pub fn read_parses<R: BufRead>(reader: R) -> Result<Vec<DependencyParse>, ParseError> {
    let mut parses = Vec::new();
    let mut tokens = Vec::new();
    let mut sentence_id: Option<String> = None;

    let finish = |tokens: &mut Vec<DependencyToken>,
                  sentence_id: &mut Option<String>,
                  parses: &mut Vec<DependencyParse>|
     -> Result<(), ParseError> {
        if tokens.is_empty() {
            *sentence_id = None;
            return Ok(());
        }
        let id = sentence_id
            .take()
            .unwrap_or_else(|| format!("s{}", parses.len() + 1));
        parses.push(DependencyParse::new(id, std::mem::take(tokens))?);
        Ok(())
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            finish(&mut tokens, &mut sentence_id, &mut parses)?;
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                if !id.is_empty() {
                    sentence_id = Some(id.to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 10 {
            return Err(ParseError::Malformed {
                line: lineno,
                detail: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        // Multiword ranges and empty nodes carry no tree edge.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let number = |s: &str, what: &str| -> Result<usize, ParseError> {
            s.parse().map_err(|_| ParseError::Malformed {
                line: lineno,
                detail: format!("{what} '{s}' is not a number"),
            })
        };
        let index = number(cols[0], "index")?;
        let head = number(cols[6], "head")?;
        if index == 0 {
            return Err(ParseError::Malformed {
                line: lineno,
                detail: "token index must be at least 1".into(),
            });
        }
        if cols[1].is_empty() || cols[7].is_empty() {
            return Err(ParseError::Malformed {
                line: lineno,
                detail: "empty surface or relation".into(),
            });
        }
        tokens.push(DependencyToken::new(index, cols[1], cols[3], head, cols[7]));
    }
    finish(&mut tokens, &mut sentence_id, &mut parses)?;
    Ok(parses)
}

pub fn parse_conllu(text: &str) -> Result<Vec<DependencyParse>, ParseError> {
    read_parses(text.as_bytes())
}

pub fn write_parses<W: Write>(mut writer: W, parses: &[DependencyParse]) -> std::io::Result<()> {
    for p in parses {
        write!(writer, "{p}")?;
        writeln!(writer)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLACK_CAT: &str = "# sent_id = q4\n\
        1\tblack\t_\tJJ\t_\t_\t2\tamod\t_\t_\n\
        2\tcat\t_\tNN\t_\t_\t0\troot\t_\t_\n";

    #[test]
    fn reads_minimal_tree() {
        let parses = parse_conllu(BLACK_CAT).unwrap();
        assert_eq!(parses.len(), 1);
        let p = &parses[0];
        assert_eq!(p.sentence_id(), "q4");
        assert_eq!(p.len(), 2);
        assert_eq!(p.root(), 2);
        assert_eq!(p.token(1).relation, "amod");
    }

    #[test]
    fn self_head_is_structure_error() {
        let text = "1\tcat\t_\tNN\t_\t_\t1\troot\t_\t_\n";
        assert!(matches!(parse_conllu(text), Err(ParseError::Structure { .. })));
    }

    #[test]
    fn blank_line_separates_sentences() {
        let text = format!("{BLACK_CAT}\n{BLACK_CAT}\n");
        assert_eq!(parse_conllu(&text).unwrap().len(), 2);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = "1\tblack\t_\tJJ\t_\t_\t2\tamod\t_\t_\n2\tcat\tNN\t0\troot\n";
        match parse_conllu(text) {
            Err(ParseError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycles_and_root_counts_rejected() {
        let cycle = "1\ta\t_\tNN\t_\t_\t2\tx\t_\t_\n2\tb\t_\tNN\t_\t_\t1\tx\t_\t_\n3\tc\t_\tNN\t_\t_\t0\troot\t_\t_\n";
        let two_roots = "1\ta\t_\tNN\t_\t_\t0\troot\t_\t_\n2\tb\t_\tNN\t_\t_\t0\troot\t_\t_\n";
        let no_root = "1\ta\t_\tNN\t_\t_\t2\tx\t_\t_\n2\tb\t_\tNN\t_\t_\t1\tx\t_\t_\n";
        for text in [cycle, two_roots, no_root] {
            assert!(matches!(parse_conllu(text), Err(ParseError::Structure { .. })), "{text}");
        }
    }

    #[test]
    fn head_out_of_range_rejected() {
        let text = "1\ta\t_\tNN\t_\t_\t5\tx\t_\t_\n2\tb\t_\tNN\t_\t_\t0\troot\t_\t_\n";
        assert!(matches!(parse_conllu(text), Err(ParseError::Structure { .. })));
    }

    #[test]
    fn surface_is_lowercased_and_ranges_skipped() {
        let text = "1-2\tCats'\t_\t_\t_\t_\t_\t_\t_\t_\n1\tBlack\t_\tJJ\t_\t_\t2\tamod\t_\t_\n2\tCAT\t_\tNN\t_\t_\t0\troot\t_\t_\n";
        let p = &parse_conllu(text).unwrap()[0];
        assert_eq!(p.text(), "black cat");
    }

    #[test]
    fn write_then_read_is_identity() {
        let parses = parse_conllu(&format!("{BLACK_CAT}\n# sent_id = b\n1\tman\t_\tNN\t_\t_\t0\troot\t_\t_\n")).unwrap();
        let mut buf = Vec::new();
        write_parses(&mut buf, &parses).unwrap();
        assert_eq!(read_parses(buf.as_slice()).unwrap(), parses);
    }
}
