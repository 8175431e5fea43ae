//! Synthetic scenes with planted, decodable structure.
//!
//! Each object has a category and an attribute. Its visual feature is
//! `one_hot(category) ++ one_hot(attribute) ++ gaussian(0, sigma)` padding.
//! Queries are generated from the annotations so that exactly one object
//! satisfies all of their triads. The chosen object index is written to the
//! scene file, but [`TrainingScene`] has no field for it.

mod generate;
mod geometry;
mod vocab;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus_io::{DependencyParse, DependencyToken};
use crate::triad::{DiscriminativeTriad, ParsedQuery};

pub use generate::{describe_target, generate_query, generate_scene, generate_scenes, satisfies, SceneConfig};
pub use geometry::{spatial_feature, BBox};
pub use vocab::{Relation, SceneVocabulary, CONTACT_GAP, MIN_OVERLAP};

/// Generated scenes keep every pair of boxes at or below this IoU, so a
/// wrong pick never scores as correct under the 0.5 threshold.
pub const MAX_PAIR_IOU: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("degenerate box {0:?}")]
    DegenerateBox(BBox),
    #[error("image size must be positive, got {width}x{height}")]
    ImageSize { width: f64, height: f64 },
    #[error("infeasible scene configuration: {0}")]
    Infeasible(String),
    #[error("no distinguishing description for object {target}")]
    Ambiguous { target: usize },
    #[error("proposal index {index} out of range for {n} proposals")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("scene {scene}: {detail}")]
    Invalid { scene: String, detail: String },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub visual: Vec<f64>,
    pub spatial: [f64; 5],
}

/// Annotation of a generated object. Only the generator and evaluation
/// read it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub category: String,
    pub attribute: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneQuery {
    pub query_id: String,
    pub text: String,
    pub parse: Vec<DependencyToken>,
    pub triads: Vec<DiscriminativeTriad>,
    pub ground_truth: usize,
}

impl SceneQuery {
    pub fn parsed(&self) -> Result<ParsedQuery, SceneError> {
        let source_parse = DependencyParse::new(self.query_id.clone(), self.parse.clone()).map_err(|e| SceneError::Invalid {
            scene: self.query_id.clone(),
            detail: e.to_string(),
        })?;
        Ok(ParsedQuery {
            query_id: self.query_id.clone(),
            triads: self.triads.clone(),
            source_parse,
        })
    }
}

/// A scene with its annotations and ground truth: the evaluation view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<Proposal>,
    pub objects: Vec<ObjectLabel>,
    pub queries: Vec<SceneQuery>,
}

/// The training view: proposals and query triads only.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TrainingScene {
    pub scene_id: String,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<Proposal>,
    pub queries: Vec<TrainingQuery>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TrainingQuery {
    pub query_id: String,
    pub triads: Vec<DiscriminativeTriad>,
}

fn check_proposals(scene_id: &str, width: f64, height: f64, proposals: &[Proposal]) -> Result<(), SceneError> {
    let invalid = |detail: String| SceneError::Invalid {
        scene: scene_id.to_string(),
        detail,
    };
    if proposals.len() < 2 {
        return Err(invalid(format!("need at least 2 proposals, found {}", proposals.len())));
    }
    let d_v = proposals[0].visual.len();
    for (i, p) in proposals.iter().enumerate() {
        let expected = spatial_feature(&p.bbox, width, height)?;
        if p.visual.len() != d_v {
            return Err(invalid(format!("proposal {i} has {} visual values, expected {d_v}", p.visual.len())));
        }
        if p.visual.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("proposal {i} has non-finite visual features")));
        }
        if p.spatial != expected {
            return Err(invalid(format!("proposal {i} spatial feature does not match its box")));
        }
    }
    Ok(())
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        check_proposals(&self.scene_id, self.width, self.height, &self.proposals)?;
        let n = self.proposals.len();
        if !self.objects.is_empty() && self.objects.len() != n {
            return Err(SceneError::Invalid {
                scene: self.scene_id.clone(),
                detail: format!("{} labels for {} proposals", self.objects.len(), n),
            });
        }
        for q in &self.queries {
            if q.ground_truth >= n {
                return Err(SceneError::IndexOutOfRange {
                    index: q.ground_truth,
                    n,
                });
            }
            if q.triads.is_empty() {
                return Err(SceneError::Invalid {
                    scene: self.scene_id.clone(),
                    detail: format!("query {} has no triads", q.query_id),
                });
            }
            q.parsed()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn visual_dim(&self) -> usize {
        self.proposals.first().map_or(0, |p| p.visual.len())
    }

    /// `f_v[i] ++ f_s[i] ++ f_v[j] ++ f_s[j]`.
    pub fn pair_feature(&self, i: usize, j: usize) -> Result<Vec<f64>, SceneError> {
        pair_feature(&self.proposals, i, j)
    }

    pub fn training_view(&self) -> TrainingScene {
        TrainingScene {
            scene_id: self.scene_id.clone(),
            width: self.width,
            height: self.height,
            proposals: self.proposals.clone(),
            queries: self
                .queries
                .iter()
                .map(|q| TrainingQuery {
                    query_id: q.query_id.clone(),
                    triads: q.triads.clone(),
                })
                .collect(),
        }
    }
}

impl TrainingScene {
    pub fn validate(&self) -> Result<(), SceneError> {
        check_proposals(&self.scene_id, self.width, self.height, &self.proposals)?;
        if let Some(q) = self.queries.iter().find(|q| q.triads.is_empty()) {
            return Err(SceneError::Invalid {
                scene: self.scene_id.clone(),
                detail: format!("query {} has no triads", q.query_id),
            });
        }
        Ok(())
    }
}

pub fn pair_feature(proposals: &[Proposal], i: usize, j: usize) -> Result<Vec<f64>, SceneError> {
    let n = proposals.len();
    for index in [i, j] {
        if index >= n {
            return Err(SceneError::IndexOutOfRange { index, n });
        }
    }
    let (a, b) = (&proposals[i], &proposals[j]);
    let mut out = Vec::with_capacity(2 * a.visual.len() + 10);
    out.extend_from_slice(&a.visual);
    out.extend_from_slice(&a.spatial);
    out.extend_from_slice(&b.visual);
    out.extend_from_slice(&b.spatial);
    Ok(out)
}

pub fn write_scenes<W: Write>(mut writer: W, scenes: &[Scene]) -> Result<(), SceneError> {
    for s in scenes {
        serde_json::to_writer(&mut writer, s).map_err(|e| SceneError::Json { line: 0, source: e })?;
        writeln!(writer)?;
    }
    Ok(())
}

fn read_lines<T, R, F>(reader: R, mut check: F) -> Result<Vec<T>, SceneError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
    F: FnMut(&T) -> Result<(), SceneError>,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| SceneError::Json { line: i + 1, source: e })?;
        check(&item)?;
        out.push(item);
    }
    Ok(out)
}

/// Reads scenes with annotations and ground truth, for evaluation.
pub fn read_scenes<R: BufRead>(reader: R) -> Result<Vec<Scene>, SceneError> {
    read_lines(reader, Scene::validate)
}

/// Reads scenes for training. Ground truth and annotations are skipped.
pub fn read_training_scenes<R: BufRead>(reader: R) -> Result<Vec<TrainingScene>, SceneError> {
    read_lines(reader, TrainingScene::validate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> Scene {
        let vocab = SceneVocabulary::default();
        generate_scene(&vocab, &SceneConfig::default(), 3).unwrap()
    }

    #[test]
    fn pair_feature_layout() {
        let s = tiny_scene();
        let d_v = s.visual_dim();
        assert_eq!(d_v, 32);
        let same = s.pair_feature(2, 2).unwrap();
        assert_eq!(same.len(), 2 * d_v + 10);
        assert_eq!(same[..d_v + 5], same[d_v + 5..]);
        let ab = s.pair_feature(0, 1).unwrap();
        let ba = s.pair_feature(1, 0).unwrap();
        assert_eq!(ab[..d_v + 5], ba[d_v + 5..]);
        assert_eq!(ab[d_v + 5..], ba[..d_v + 5]);
        assert!(matches!(s.pair_feature(0, 99), Err(SceneError::IndexOutOfRange { index: 99, .. })));
    }

    #[test]
    fn training_reader_never_sees_ground_truth() {
        let s = tiny_scene();
        let mut buf = Vec::new();
        write_scenes(&mut buf, std::slice::from_ref(&s)).unwrap();
        let train = read_training_scenes(buf.as_slice()).unwrap();
        assert_eq!(train[0], s.training_view());
        let eval = read_scenes(buf.as_slice()).unwrap();
        assert_eq!(eval[0], s);
    }

    #[test]
    fn reader_rejects_bad_ground_truth() {
        let mut s = tiny_scene();
        s.queries[0].ground_truth = 100;
        let mut buf = Vec::new();
        write_scenes(&mut buf, &[s]).unwrap();
        assert!(matches!(read_scenes(buf.as_slice()), Err(SceneError::IndexOutOfRange { .. })));
    }

    #[test]
    fn reader_rejects_tampered_spatial() {
        let mut s = tiny_scene();
        s.proposals[0].spatial[4] = 0.9;
        let mut buf = Vec::new();
        write_scenes(&mut buf, &[s]).unwrap();
        assert!(read_training_scenes(buf.as_slice()).is_err());
        assert!(matches!(read_scenes("{not json}\n".as_bytes()), Err(SceneError::Json { line: 1, .. })));
    }
}
