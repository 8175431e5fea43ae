//! Rule-based extraction of discriminative triads from dependency parses.
//!
//! A triad `(target, reference, discriminative)` says how to tell the target
//! object apart: by an attribute (`reference == target`), or by a relation to
//! another object. All triads of a query share the target word.
//!
//! The target is the leftmost noun that is neither a compound modifier nor
//! governed (transitively) by an earlier noun. Around it:
//!
//! * modifiers of the target give unary triads `(t, t, modifier)`,
//! * prepositional dependents give `(t, object, preposition)`,
//! * verbs attached to the target give `(t, object, verb)` for their direct
//!   objects and `(t, object, preposition)` for their prepositional
//!   dependents, following `conj` chains,
//! * every reference noun found this way gets its own unary triads.
//!
//! Queries without a noun produce `(UKN, UKN, word)` per content word; a noun
//! with nothing attached produces `(t, t, SELF)`.

use serde::{Deserialize, Serialize};

use crate::corpus_io::{DependencyParse, DependencyToken, EmbeddingTable, SELF_TOKEN, UNKNOWN_TOKEN};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid triad ({target}, {reference}, {discriminative}): {reason}")]
pub struct TriadError {
    pub target: String,
    pub reference: String,
    pub discriminative: String,
    pub reason: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[String; 3]", into = "[String; 3]")]
pub struct DiscriminativeTriad {
    pub target: String,
    pub reference: String,
    pub discriminative: String,
}

impl DiscriminativeTriad {
    pub fn new(target: &str, reference: &str, discriminative: &str) -> Result<Self, TriadError> {
        let triad = DiscriminativeTriad {
            target: target.to_string(),
            reference: reference.to_string(),
            discriminative: discriminative.to_string(),
        };
        triad.validate()?;
        Ok(triad)
    }

    pub fn validate(&self) -> Result<(), TriadError> {
        let fail = |reason| {
            Err(TriadError {
                target: self.target.clone(),
                reference: self.reference.clone(),
                discriminative: self.discriminative.clone(),
                reason,
            })
        };
        if self.target.is_empty() || self.reference.is_empty() || self.discriminative.is_empty() {
            return fail("empty unit");
        }
        if self.discriminative == SELF_TOKEN && self.target != self.reference {
            return fail("SELF requires reference == target");
        }
        if self.target == UNKNOWN_TOKEN && self.reference != UNKNOWN_TOKEN {
            return fail("UKN target requires UKN reference");
        }
        Ok(())
    }

    pub fn units(&self) -> [&str; 3] {
        [&self.target, &self.reference, &self.discriminative]
    }

    pub fn is_unary(&self) -> bool {
        self.target == self.reference
    }
}

impl TryFrom<[String; 3]> for DiscriminativeTriad {
    type Error = TriadError;

    fn try_from([t, r, d]: [String; 3]) -> Result<Self, Self::Error> {
        DiscriminativeTriad::new(&t, &r, &d)
    }
}

impl From<DiscriminativeTriad> for [String; 3] {
    fn from(t: DiscriminativeTriad) -> Self {
        [t.target, t.reference, t.discriminative]
    }
}

/// A query reduced to its triads. `triads` is never empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedQuery {
    pub query_id: String,
    pub triads: Vec<DiscriminativeTriad>,
    pub source_parse: DependencyParse,
}

/// Relations that never yield a unary triad: subjects, function words,
/// clause structure, and relations handled by the prepositional or verbal
/// rules.
const NON_MODIFIER_RELATIONS: &[&str] = &[
    "nsubj", "nsubjpass", "csubj", "prep", "nmod", "obl", "det", "predet", "case", "punct",
    "cc", "conj", "acl", "relcl", "rcmod", "partmod", "vmod", "dobj", "obj", "iobj", "pobj",
    "aux", "auxpass", "cop", "mark", "root", "dep", "poss",
];

const PREPOSITIONAL_RELATIONS: &[&str] = &["prep", "nmod", "obl"];
const VERB_ATTACHMENT_RELATIONS: &[&str] = &["acl", "relcl", "rcmod", "partmod", "vmod"];
const OBJECT_RELATIONS: &[&str] = &["dobj", "obj"];
const SUBJECT_RELATIONS: &[&str] = &["nsubj", "nsubjpass"];

const FUNCTION_POS: &[&str] = &[
    "DT", "PDT", "IN", "CC", "TO", "POS", "PRP", "PRP$", "WDT", "WP", "WP$", "EX", "MD", "DET",
    "ADP", "CCONJ", "SCONJ", "PRON", "AUX", "PART", "PUNCT",
];

fn is_content_word(t: &DependencyToken) -> bool {
    !FUNCTION_POS.contains(&t.pos.as_str())
        && t.pos.chars().any(|c| c.is_ascii_alphabetic())
        && !matches!(t.base_relation(), "det" | "case" | "punct" | "cc")
}

/// Index of the target token, or `None` when the parse has no usable noun.
pub fn select_target_unit(parse: &DependencyParse) -> Option<usize> {
    parse
        .tokens()
        .iter()
        .filter(|t| t.is_noun())
        .filter(|t| !(t.base_relation() == "compound" && t.head != 0 && parse.token(t.head).is_noun()))
        .find(|t| !has_earlier_noun_ancestor(parse, t))
        .map(|t| t.index)
}

fn has_earlier_noun_ancestor(parse: &DependencyParse, token: &DependencyToken) -> bool {
    let mut cur = token.head;
    while cur != 0 {
        let anc = parse.token(cur);
        if anc.is_noun() && anc.index < token.index {
            return true;
        }
        cur = anc.head;
    }
    false
}

/// Dependents of `index` with one of `relations`.
fn children_with<'a>(
    parse: &'a DependencyParse,
    index: usize,
    relations: &'a [&'a str],
) -> impl Iterator<Item = &'a DependencyToken> + 'a {
    parse
        .children(index)
        .filter(move |c| relations.contains(&c.base_relation()))
}

/// `token` followed by everything reachable from it through `conj` edges.
fn with_conjuncts<'a>(parse: &'a DependencyParse, token: &'a DependencyToken) -> Vec<&'a DependencyToken> {
    let mut out = vec![token];
    let mut i = 0;
    while i < out.len() {
        let cur = out[i].index;
        out.extend(children_with(parse, cur, &["conj"]));
        i += 1;
    }
    out
}

/// A triad candidate keyed by the token index of its discriminative word.
struct Candidate {
    position: usize,
    triad: (String, String, String),
}

struct Extraction<'a> {
    parse: &'a DependencyParse,
    target: usize,
    unary: Vec<Candidate>,
    relational: Vec<Candidate>,
    references: Vec<usize>,
}

impl<'a> Extraction<'a> {
    fn word(&self, index: usize) -> String {
        self.parse.token(index).surface.clone()
    }

    fn push_unary(&mut self, owner: usize, modifier: &DependencyToken, into_unary: bool) {
        let w = self.word(owner);
        let c = Candidate {
            position: modifier.index,
            triad: (w.clone(), w, modifier.surface.clone()),
        };
        if into_unary {
            self.unary.push(c);
        } else {
            self.relational.push(c);
        }
    }

    fn push_relation(&mut self, reference: usize, discriminative: &DependencyToken) {
        self.relational.push(Candidate {
            position: discriminative.index,
            triad: (self.word(self.target), self.word(reference), discriminative.surface.clone()),
        });
        if !self.references.contains(&reference) {
            self.references.push(reference);
        }
    }

    /// Unary modifiers of `owner`, including conjoined ones.
    fn modifiers(&self, owner: usize) -> Vec<&'a DependencyToken> {
        let parse = self.parse;
        let mut out = Vec::new();
        for child in parse.children(owner) {
            if NON_MODIFIER_RELATIONS.contains(&child.base_relation()) {
                continue;
            }
            for m in with_conjuncts(parse, child) {
                if !out.iter().any(|o: &&DependencyToken| o.index == m.index) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// A prepositional dependent `dep` attached to `anchor` (the target or a
    /// verb modifying it). Returns whether anything was emitted.
    fn prepositional(&mut self, dep: &'a DependencyToken) -> bool {
        let parse = self.parse;
        if dep.base_relation() == "prep" {
            // spaCy style: the preposition heads its object.
            match children_with(parse, dep.index, &["pobj", "obj", "nmod"]).next() {
                Some(obj) if obj.is_noun() => self.push_relation(obj.index, dep),
                Some(obj) => self.push_unary(self.target, obj, true),
                None => self.push_unary(self.target, dep, true),
            }
            return true;
        }
        // UD style: the object heads its case marker.
        if !dep.is_noun() {
            self.push_unary(self.target, dep, true);
            return true;
        }
        match children_with(parse, dep.index, &["case"]).next() {
            Some(case) => {
                self.push_relation(dep.index, case);
                true
            }
            None => false,
        }
    }

    fn verb(&mut self, verb: &'a DependencyToken, attached_to_target: bool) {
        let parse = self.parse;
        let mut emitted = false;
        for obj in children_with(parse, verb.index, OBJECT_RELATIONS) {
            if obj.is_noun() {
                self.push_relation(obj.index, verb);
                emitted = true;
            }
        }
        for dep in children_with(parse, verb.index, PREPOSITIONAL_RELATIONS) {
            emitted |= self.prepositional(dep);
        }
        if !emitted && attached_to_target {
            self.push_unary(self.target, verb, false);
        }
        for conj in children_with(parse, verb.index, &["conj"]) {
            if conj.is_verb() {
                self.verb(conj, attached_to_target);
            }
        }
    }

    fn run(mut self) -> Vec<(String, String, String)> {
        let parse = self.parse;
        let target = self.target;

        for m in self.modifiers(target) {
            self.push_unary(target, m, true);
        }
        for dep in children_with(parse, target, PREPOSITIONAL_RELATIONS) {
            self.prepositional(dep);
        }
        for v in children_with(parse, target, VERB_ATTACHMENT_RELATIONS) {
            if v.is_verb() {
                self.verb(v, true);
            }
        }
        let t = parse.token(target);
        if SUBJECT_RELATIONS.contains(&t.base_relation()) && t.head != 0 && parse.token(t.head).is_verb() {
            self.verb(parse.token(t.head), true);
        }

        self.unary.sort_by_key(|c| c.position);
        self.relational.sort_by_key(|c| c.position);
        let mut triads: Vec<_> = self.unary.drain(..).chain(self.relational.drain(..)).map(|c| c.triad).collect();

        for &r in &self.references {
            let w = self.word(r);
            for m in self.modifiers(r) {
                triads.push((w.clone(), w.clone(), m.surface.clone()));
            }
        }
        if triads.is_empty() {
            let w = self.word(target);
            triads.push((w.clone(), w, SELF_TOKEN.to_string()));
        }
        triads
    }
}

pub fn extract_triads(parse: &DependencyParse) -> ParsedQuery {
    let raw = match select_target_unit(parse) {
        Some(target) => Extraction {
            parse,
            target,
            unary: Vec::new(),
            relational: Vec::new(),
            references: Vec::new(),
        }
        .run(),
        None => {
            let mut out: Vec<_> = parse
                .tokens()
                .iter()
                .filter(|t| is_content_word(t))
                .map(|t| (UNKNOWN_TOKEN.to_string(), UNKNOWN_TOKEN.to_string(), t.surface.clone()))
                .collect();
            if out.is_empty() {
                let first = &parse.tokens()[0];
                out.push((UNKNOWN_TOKEN.into(), UNKNOWN_TOKEN.into(), first.surface.clone()));
            }
            out
        }
    };

    let mut triads: Vec<DiscriminativeTriad> = Vec::with_capacity(raw.len());
    for (t, r, d) in raw {
        let triad = DiscriminativeTriad {
            target: t,
            reference: r,
            discriminative: d,
        };
        if !triads.contains(&triad) {
            debug_assert!(triad.validate().is_ok(), "{triad:?}");
            triads.push(triad);
        }
    }
    ParsedQuery {
        query_id: parse.sentence_id().to_string(),
        triads,
        source_parse: parse.clone(),
    }
}

/// Word vectors `(e_t, e_r, e_d)` for each triad, unknown words mapping to
/// the `OOV` row.
pub fn triads_to_embeddings(query: &ParsedQuery, table: &EmbeddingTable) -> Vec<[Vec<f64>; 3]> {
    query
        .triads
        .iter()
        .map(|t| t.units().map(|u| table.lookup(u).to_vec()))
        .collect()
}
