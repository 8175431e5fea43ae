//! Proposal scoring, grounding and IoU evaluation.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{unit_scores, ModelError, ModelParams, SceneFeatures, UnitScores};
use crate::scene::{BBox, Proposal, Scene};
use crate::triad::DiscriminativeTriad;

/// Correct when the chosen box overlaps the ground truth by more than this.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("{0}")]
    Empty(&'static str),
    #[error("invalid score weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            alpha: 2.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), InferError> {
        if [self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(InferError::Weights(format!("{self:?}")))
        }
    }
}

/// `alpha * a_t + beta * a_r + gamma * a_d`.
pub fn pair_score(target: f64, reference: f64, discriminative: f64, w: &ScoreWeights) -> f64 {
    w.alpha * target + w.beta * reference + w.gamma * discriminative
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Best pair score among the pairs led by one proposal, and the second
/// proposal achieving it.
pub fn proposal_triad_score(pair_scores: &[f64]) -> Result<(f64, usize), InferError> {
    let j = argmax(pair_scores).ok_or(InferError::Empty("no pair scores"))?;
    Ok((pair_scores[j], j))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundingResult {
    pub chosen: usize,
    /// Per proposal, summed over triads.
    pub scores: Vec<f64>,
    /// `M x N` per-triad proposal scores.
    pub triad_scores: Vec<Vec<f64>>,
    /// `M x N` second proposal behind each per-triad score.
    pub references: Vec<Vec<usize>>,
}

/// Combines unit scores of every triad into the grounding decision.
pub fn ground_from_scores(units: &[UnitScores], w: &ScoreWeights) -> Result<GroundingResult, InferError> {
    w.validate()?;
    let first = units.first().ok_or(InferError::Empty("query has no triads"))?;
    let n = first.n;
    if n == 0 {
        return Err(InferError::Empty("scene has no proposals"));
    }
    let mut scores = vec![0.0; n];
    let mut triad_scores = Vec::with_capacity(units.len());
    let mut references = Vec::with_capacity(units.len());
    for u in units {
        if u.n != n || u.target.len() != n || u.reference.len() != n || u.discriminative.len() != n * n {
            return Err(ModelError::Dimension(format!("unit scores for {} proposals, expected {n}", u.n)).into());
        }
        let mut row = Vec::with_capacity(n);
        let mut refs = Vec::with_capacity(n);
        let mut pairs = vec![0.0; n];
        for (i, total) in scores.iter_mut().enumerate() {
            let (s, j) = if u.diagonal_only {
                (pair_score(u.target[i], u.reference[i], u.pair(i, i), w), i)
            } else {
                for (j, p) in pairs.iter_mut().enumerate() {
                    *p = pair_score(u.target[i], u.reference[j], u.pair(i, j), w);
                }
                proposal_triad_score(&pairs)?
            };
            row.push(s);
            refs.push(j);
            *total += s;
        }
        triad_scores.push(row);
        references.push(refs);
    }
    let chosen = argmax(&scores).expect("n > 0");
    Ok(GroundingResult {
        chosen,
        scores,
        triad_scores,
        references,
    })
}

pub fn ground(
    triads: &[DiscriminativeTriad],
    proposals: &[Proposal],
    params: &ModelParams,
    w: &ScoreWeights,
) -> Result<GroundingResult, InferError> {
    let features = SceneFeatures::new(proposals, &params.config)?;
    ground_features(triads, &features, params, w)
}

fn ground_features(
    triads: &[DiscriminativeTriad],
    features: &SceneFeatures,
    params: &ModelParams,
    w: &ScoreWeights,
) -> Result<GroundingResult, InferError> {
    if triads.is_empty() {
        return Err(InferError::Empty("query has no triads"));
    }
    let units = triads
        .iter()
        .map(|t| unit_scores(params, features, t))
        .collect::<Result<Vec<_>, _>>()?;
    ground_from_scores(&units, w)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Which triads of a query are used at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriadSelection {
    All,
    /// One triad per query, drawn with a per-query seed derived from this one.
    SingleRandom(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query_id: String,
    pub chosen: usize,
    pub gt: usize,
    pub iou: f64,
    pub correct: bool,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub queries: usize,
    pub correct: usize,
    pub accuracy: f64,
}

fn query_seed(base: u64, query_id: &str) -> u64 {
    // FNV-1a over the id, mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ base;
    for b in query_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn evaluate(
    scenes: &[Scene],
    params: &ModelParams,
    w: &ScoreWeights,
    selection: TriadSelection,
) -> Result<EvalReport, InferError> {
    w.validate()?;
    let per_scene: Vec<Vec<ReportRow>> = scenes
        .par_iter()
        .map(|scene| -> Result<Vec<ReportRow>, InferError> {
            let features = SceneFeatures::new(&scene.proposals, &params.config)?;
            let mut rows = Vec::with_capacity(scene.queries.len());
            for q in &scene.queries {
                let triads: Vec<DiscriminativeTriad> = match selection {
                    TriadSelection::All => q.triads.clone(),
                    TriadSelection::SingleRandom(seed) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(seed, &q.query_id));
                        q.triads.choose(&mut rng).cloned().into_iter().collect()
                    }
                };
                let g = ground_features(&triads, &features, params, w)?;
                let overlap = iou(&scene.proposals[g.chosen].bbox, &scene.proposals[q.ground_truth].bbox);
                rows.push(ReportRow {
                    query_id: q.query_id.clone(),
                    chosen: g.chosen,
                    gt: q.ground_truth,
                    iou: overlap,
                    correct: overlap > IOU_THRESHOLD,
                    scores: g.scores,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<ReportRow> = per_scene.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(InferError::Empty("evaluation set has no queries"));
    }
    let correct = rows.iter().filter(|r| r.correct).count();
    Ok(EvalReport {
        queries: rows.len(),
        correct,
        accuracy: correct as f64 / rows.len() as f64,
        rows,
    })
}
