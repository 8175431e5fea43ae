use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::{spatial_feature, BBox};
use super::vocab::{Relation, SceneVocabulary};
use super::{ObjectLabel, Proposal, Scene, SceneError, SceneQuery, MAX_PAIR_IOU};
use crate::corpus_io::{DependencyToken, SELF_TOKEN};
use crate::triad::DiscriminativeTriad;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub n_proposals: usize,
    pub d_v: usize,
    pub sigma: f64,
    pub queries_per_scene: usize,
    pub width: f64,
    pub height: f64,
    /// Chance that a new object is stacked on an existing one.
    pub stack_probability: f64,
    /// Chance that a new object is placed beside an existing one.
    pub beside_probability: f64,
    /// Chance that a new object copies an existing object's labels.
    pub duplicate_probability: f64,
    /// Chance of naming the attribute even when the category alone is unique.
    pub redundant_attribute_probability: f64,
    /// Name a distinguishing attribute before trying relations.
    pub prefer_attributes: bool,
    /// Chance of adding one more true triad to a description that already
    /// identifies the target.
    pub extra_triad_probability: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_proposals: 8,
            d_v: 32,
            sigma: 0.05,
            queries_per_scene: 2,
            width: 640.0,
            height: 480.0,
            stack_probability: 0.3,
            beside_probability: 0.2,
            duplicate_probability: 0.1,
            redundant_attribute_probability: 0.5,
            prefer_attributes: true,
            extra_triad_probability: 0.5,
        }
    }
}

const MAX_SCENE_ATTEMPTS: usize = 200;
const MAX_PLACEMENT_TRIES: usize = 300;

impl SceneConfig {
    pub fn validate(&self, vocab: &SceneVocabulary) -> Result<(), SceneError> {
        let fail = |m: String| Err(SceneError::Infeasible(m));
        if self.n_proposals < 2 {
            return fail(format!("need at least 2 proposals, got {}", self.n_proposals));
        }
        if self.queries_per_scene == 0 || self.queries_per_scene > self.n_proposals {
            return fail(format!(
                "queries_per_scene must be in 1..={}, got {}",
                self.n_proposals, self.queries_per_scene
            ));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return fail(format!("sigma must be a non-negative number, got {}", self.sigma));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return fail(format!("image size must be positive, got {}x{}", self.width, self.height));
        }
        for p in [
            self.stack_probability,
            self.beside_probability,
            self.duplicate_probability,
            self.redundant_attribute_probability,
            self.extra_triad_probability,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.stack_probability + self.beside_probability > 1.0 {
            return fail("stack and beside probabilities sum above 1".into());
        }
        vocab.validate(self.d_v).map_err(SceneError::Infeasible)
    }
}

fn compatible(candidate: &BBox, placed: &[BBox], width: f64, height: f64) -> bool {
    if candidate.x_tl < 0.0 || candidate.y_tl < 0.0 || candidate.x_br > width || candidate.y_br > height {
        return false;
    }
    placed.iter().all(|b| {
        let inter = candidate.intersection_area(b);
        let iou = inter / (candidate.area() + b.area() - inter);
        iou <= MAX_PAIR_IOU && !b.contains(candidate) && !candidate.contains(b)
    })
}

fn place_boxes(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Option<Vec<BBox>> {
    let (w_img, h_img) = (cfg.width, cfg.height);
    let mut placed: Vec<BBox> = Vec::with_capacity(cfg.n_proposals);
    for _ in 0..cfg.n_proposals {
        let mut ok = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let w = rng.random_range(0.08..0.22) * w_img;
            let h = rng.random_range(0.10..0.25) * h_img;
            let mode: f64 = rng.random();
            let (x0, y0) = if !placed.is_empty() && mode < cfg.stack_probability {
                let s = placed[rng.random_range(0..placed.len())];
                let x0 = s.x_tl + rng.random_range(-0.25..0.75) * s.width().min(w) - 0.25 * (w - s.width()).max(0.0);
                let gap = rng.random_range(0.0..0.02) * h_img;
                (x0, s.y_tl - gap - h)
            } else if !placed.is_empty() && mode < cfg.stack_probability + cfg.beside_probability {
                let s = placed[rng.random_range(0..placed.len())];
                let gap = rng.random_range(0.0..0.03) * w_img;
                let x0 = if rng.random_bool(0.5) { s.x_br + gap } else { s.x_tl - gap - w };
                (x0, s.y_tl + rng.random_range(-0.2..0.2) * h)
            } else {
                (rng.random_range(0.0..(w_img - w)), rng.random_range(0.0..(h_img - h)))
            };
            let Ok(candidate) = BBox::new(x0, y0, x0 + w, y0 + h) else {
                continue;
            };
            if compatible(&candidate, &placed, w_img, h_img) {
                placed.push(candidate);
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

/// Whether object `x` satisfies `triad` under the scene annotations.
pub fn satisfies(labels: &[ObjectLabel], boxes: &[BBox], width: f64, height: f64, x: usize, triad: &DiscriminativeTriad) -> bool {
    if labels[x].category != triad.target {
        return false;
    }
    let d = triad.discriminative.as_str();
    if d == SELF_TOKEN {
        return true;
    }
    if let Some(rel) = Relation::from_word(d) {
        return (0..labels.len())
            .any(|y| y != x && labels[y].category == triad.reference && rel.holds(&boxes[x], &boxes[y], width, height));
    }
    labels[x].attribute == d
}

fn unique_match(labels: &[ObjectLabel], boxes: &[BBox], width: f64, height: f64, triads: &[DiscriminativeTriad]) -> Option<usize> {
    let mut found = None;
    for x in 0..labels.len() {
        if triads.iter().all(|t| satisfies(labels, boxes, width, height, x, t)) {
            if found.is_some() {
                return None;
            }
            found = Some(x);
        }
    }
    found
}

/// A triad list that only `target` satisfies, preferring the fewest triads.
/// With `prefer_attributes`, a distinguishing attribute is always used over a
/// relation; otherwise distinguishing singles are drawn at random. With
/// `extra_triad_probability`, one more true but possibly non-distinguishing
/// triad is added.
#[allow(clippy::too_many_arguments)]
pub fn describe_target(
    vocab: &SceneVocabulary,
    labels: &[ObjectLabel],
    boxes: &[BBox],
    width: f64,
    height: f64,
    target: usize,
    cfg: &SceneConfig,
    rng: &mut impl Rng,
) -> Result<Vec<DiscriminativeTriad>, SceneError> {
    let category = labels[target].category.as_str();
    let attribute = DiscriminativeTriad::new(category, category, &labels[target].attribute).expect("non-empty words");
    let mut relations: Vec<DiscriminativeTriad> = Vec::new();
    for &rel in &vocab.relations {
        for y in 0..labels.len() {
            if labels[y].category != category && rel.holds(&boxes[target], &boxes[y], width, height) {
                let t = DiscriminativeTriad::new(category, &labels[y].category, rel.word()).expect("non-empty words");
                if !relations.contains(&t) {
                    relations.push(t);
                }
            }
        }
    }
    let frame = Frame {
        labels,
        boxes,
        width,
        height,
        target,
    };
    let mut triads = minimal_description(&frame, &attribute, &relations, cfg, rng)?;
    if triads[0].discriminative != SELF_TOKEN && rng.random_bool(cfg.extra_triad_probability) {
        let extra: Vec<&DiscriminativeTriad> =
            std::iter::once(&attribute).chain(&relations).filter(|t| !triads.contains(t)).collect();
        if let Some(t) = extra.choose(rng) {
            triads.push((*t).clone());
            // The realized phrase names the attribute before any relation.
            triads.sort_by_key(|t| !t.is_unary());
        }
    }
    Ok(triads)
}

struct Frame<'a> {
    labels: &'a [ObjectLabel],
    boxes: &'a [BBox],
    width: f64,
    height: f64,
    target: usize,
}

fn minimal_description(
    f: &Frame<'_>,
    attribute: &DiscriminativeTriad,
    relations: &[DiscriminativeTriad],
    cfg: &SceneConfig,
    rng: &mut impl Rng,
) -> Result<Vec<DiscriminativeTriad>, SceneError> {
    let (labels, boxes, width, height, target) = (f.labels, f.boxes, f.width, f.height, f.target);
    let category = labels[target].category.as_str();
    let attribute = attribute.clone();
    let unique = |ts: &[DiscriminativeTriad]| unique_match(labels, boxes, width, height, ts) == Some(target);

    let only_category = DiscriminativeTriad::new(category, category, SELF_TOKEN).expect("valid");
    if unique(std::slice::from_ref(&only_category)) {
        if rng.random_bool(cfg.redundant_attribute_probability) {
            return Ok(vec![attribute]);
        }
        return Ok(vec![only_category]);
    }

    let mut singles: Vec<Vec<DiscriminativeTriad>> = Vec::new();
    if unique(std::slice::from_ref(&attribute)) {
        if cfg.prefer_attributes {
            return Ok(vec![attribute]);
        }
        singles.push(vec![attribute.clone()]);
    }
    for r in relations {
        if unique(std::slice::from_ref(r)) {
            singles.push(vec![r.clone()]);
        }
    }
    if let Some(choice) = singles.choose(rng) {
        return Ok(choice.clone());
    }

    let mut pairs: Vec<Vec<DiscriminativeTriad>> = Vec::new();
    for r in relations {
        let pair = vec![attribute.clone(), r.clone()];
        if unique(&pair) {
            pairs.push(pair);
        }
    }
    for (i, a) in relations.iter().enumerate() {
        for b in &relations[i + 1..] {
            let pair = vec![a.clone(), b.clone()];
            if unique(&pair) {
                pairs.push(pair);
            }
        }
    }
    pairs.choose(rng).cloned().ok_or(SceneError::Ambiguous { target })
}

/// Dependency tokens for a generated description, laid out as
/// `the [attribute] noun (preposition the reference)*`.
fn realize(triads: &[DiscriminativeTriad]) -> Vec<DependencyToken> {
    let target = &triads[0].target;
    let attribute = triads
        .iter()
        .find(|t| t.is_unary() && t.discriminative != SELF_TOKEN && Relation::from_word(&t.discriminative).is_none());
    let relations: Vec<&DiscriminativeTriad> = triads
        .iter()
        .filter(|t| Relation::from_word(&t.discriminative).is_some())
        .collect();

    let mut tokens = Vec::new();
    let noun = if attribute.is_some() { 3 } else { 2 };
    tokens.push(DependencyToken::new(1, "the", "DT", noun, "det"));
    if let Some(a) = attribute {
        tokens.push(DependencyToken::new(2, &a.discriminative, "JJ", noun, "amod"));
    }
    tokens.push(DependencyToken::new(noun, target, "NN", 0, "root"));
    for r in relations {
        let base = tokens.len();
        tokens.push(DependencyToken::new(base + 1, &r.discriminative, "IN", base + 3, "case"));
        tokens.push(DependencyToken::new(base + 2, "the", "DT", base + 3, "det"));
        tokens.push(DependencyToken::new(base + 3, &r.reference, "NN", noun, "nmod"));
    }
    tokens
}

/// A query that uniquely identifies `target` in `scene`, with a dependency
/// parse from which the same triads are extracted.
pub fn generate_query(
    scene: &Scene,
    vocab: &SceneVocabulary,
    target: usize,
    seed: u64,
    cfg: &SceneConfig,
) -> Result<SceneQuery, SceneError> {
    let n = scene.proposals.len();
    if target >= n {
        return Err(SceneError::IndexOutOfRange { index: target, n });
    }
    if scene.objects.len() != n {
        return Err(SceneError::Invalid {
            scene: scene.scene_id.clone(),
            detail: "query generation needs object annotations".into(),
        });
    }
    let boxes: Vec<BBox> = scene.proposals.iter().map(|p| p.bbox).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triads = describe_target(
        vocab,
        &scene.objects,
        &boxes,
        scene.width,
        scene.height,
        target,
        cfg,
        &mut rng,
    )?;
    let parse = realize(&triads);
    let text = parse.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
    Ok(SceneQuery {
        query_id: format!("{}-q{}", scene.scene_id, target),
        text,
        parse,
        triads,
        ground_truth: target,
    })
}

/// One scene, deterministic in `(vocab, cfg, seed)`.
pub fn generate_scene(vocab: &SceneVocabulary, cfg: &SceneConfig, seed: u64) -> Result<Scene, SceneError> {
    generate_scene_with_id(vocab, cfg, seed, format!("scene-{seed}"))
}

fn generate_scene_with_id(
    vocab: &SceneVocabulary,
    cfg: &SceneConfig,
    seed: u64,
    scene_id: String,
) -> Result<Scene, SceneError> {
    cfg.validate(vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| SceneError::Infeasible(e.to_string()))?;

    for _ in 0..MAX_SCENE_ATTEMPTS {
        let Some(boxes) = place_boxes(cfg, &mut rng) else {
            continue;
        };
        let mut labels: Vec<ObjectLabel> = Vec::with_capacity(cfg.n_proposals);
        for k in 0..cfg.n_proposals {
            if k > 0 && rng.random_bool(cfg.duplicate_probability) {
                let src = labels[rng.random_range(0..k)].clone();
                labels.push(src);
            } else {
                labels.push(ObjectLabel {
                    category: vocab.categories.choose(&mut rng).expect("non-empty").clone(),
                    attribute: vocab.attributes.choose(&mut rng).expect("non-empty").clone(),
                });
            }
        }

        let mut proposals = Vec::with_capacity(cfg.n_proposals);
        for (b, label) in boxes.iter().zip(&labels) {
            let mut visual = vec![0.0; cfg.d_v];
            let c = vocab.categories.iter().position(|w| *w == label.category).expect("known");
            let a = vocab.attributes.iter().position(|w| *w == label.attribute).expect("known");
            visual[vocab.category_slot(c)] = 1.0;
            visual[vocab.attribute_slot(a)] = 1.0;
            for v in visual.iter_mut().skip(vocab.layout_width()) {
                *v = if cfg.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            }
            proposals.push(Proposal {
                bbox: *b,
                visual,
                spatial: spatial_feature(b, cfg.width, cfg.height)?,
            });
        }

        let mut scene = Scene {
            scene_id: scene_id.clone(),
            width: cfg.width,
            height: cfg.height,
            proposals,
            objects: labels,
            queries: Vec::new(),
        };
        let mut order: Vec<usize> = (0..cfg.n_proposals).collect();
        order.shuffle(&mut rng);
        for target in order {
            if scene.queries.len() == cfg.queries_per_scene {
                break;
            }
            match generate_query(&scene, vocab, target, rng.random(), cfg) {
                Ok(q) => scene.queries.push(q),
                Err(SceneError::Ambiguous { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if scene.queries.len() == cfg.queries_per_scene {
            return Ok(scene);
        }
    }
    Err(SceneError::Infeasible(format!(
        "no layout with {} describable objects after {MAX_SCENE_ATTEMPTS} attempts",
        cfg.queries_per_scene
    )))
}

/// `count` scenes whose per-scene seeds derive from `seed`.
pub fn generate_scenes(vocab: &SceneVocabulary, cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<Scene>, SceneError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let s: u64 = master.random();
            generate_scene_with_id(vocab, cfg, s, format!("s{seed}-{i:05}"))
        })
        .collect()
}
