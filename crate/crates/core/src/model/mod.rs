//! Triad matching and reconstruction network.
//!
//! Three attention stacks score proposals against the target and reference
//! units and proposal pairs against the discriminative unit. Attention-
//! weighted features are mapped back to the unit embeddings by three small
//! reconstruction networks.

mod graph;
mod ops;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{normalize_word, EmbeddingTable, OOV_TOKEN, SELF_TOKEN, SPECIAL_TOKENS, UNKNOWN_TOKEN};
use crate::engine::{EngineError, Tensor};
use crate::scene::Proposal;
use crate::triad::DiscriminativeTriad;

pub use graph::{full_path_gradcheck, loss_and_gradients, GraphParams, LossParts, Reconstruction, SceneVars, TriadGraph, UnitMask};
pub use ops::{
    aggregate, attention_scores, discriminative_attention, reconstruct, reference_attention, target_attention,
    triad_loss, unit_scores, UnitScores,
};

/// Width of the box feature appended to each proposal in a pair.
pub const SPATIAL_DIM: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Soft,
    Hard,
}

impl Mode {
    /// Softmax temperature used for aggregation.
    pub fn temperature(self, tau: f64) -> f64 {
        match self {
            Mode::Soft => 1.0,
            Mode::Hard => tau,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_l: usize,
    pub hidden_attn: usize,
    pub hidden_recon: usize,
    pub tau: f64,
    pub mode: Mode,
    /// Add seeded Gumbel noise to attention scores before the softmax.
    pub gumbel: bool,
    /// Scale each visual feature to unit L2 norm before use.
    pub normalize_visual: bool,
    /// Score triads whose reference is the target itself on `(i, i)` pairs
    /// only.
    pub unary_diagonal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_v: 32,
            d_l: 16,
            hidden_attn: 128,
            hidden_recon: 64,
            tau: 0.1,
            mode: Mode::Hard,
            gumbel: false,
            normalize_visual: false,
            unary_diagonal: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_l", self.d_l),
            ("hidden_attn", self.hidden_attn),
            ("hidden_recon", self.hidden_recon),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        Ok(())
    }

    pub fn pair_dim(&self) -> usize {
        2 * (self.d_v + SPATIAL_DIM)
    }

    pub fn temperature(&self) -> f64 {
        self.mode.temperature(self.tau)
    }
}

/// Two fully connected layers, row-vector convention: `x W1 + b1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Mlp {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<f64>>();
            let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
            let b = Tensor::row(draw(fan_out));
            (w, b)
        };
        let (w1, b1) = layer(input, hidden);
        let (w2, b2) = layer(hidden, output);
        Mlp { w1, b1, w2, b2 }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Mlp {
        Mlp {
            w1: Tensor::zeros(&[input, hidden]),
            b1: Tensor::zeros(&[1, hidden]),
            w2: Tensor::zeros(&[hidden, output]),
            b2: Tensor::zeros(&[1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Where a unit's embedding comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Row of the frozen word table.
    Word(usize),
    /// Row of the trainable special-token table.
    Special(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub att_t: Mlp,
    pub att_r: Mlp,
    pub att_d: Mlp,
    pub rec_t: Mlp,
    pub rec_r: Mlp,
    pub rec_d: Mlp,
    /// Rows for SELF, UKN and OOV, in that order.
    pub specials: Tensor,
    words: Vec<String>,
    word_vectors: Tensor,
    index: HashMap<String, usize>,
}

pub const PARAM_NAMES: [&str; 25] = [
    "att_t.w1", "att_t.b1", "att_t.w2", "att_t.b2", "att_r.w1", "att_r.b1", "att_r.w2", "att_r.b2", "att_d.w1",
    "att_d.b1", "att_d.w2", "att_d.b2", "rec_t.w1", "rec_t.b1", "rec_t.w2", "rec_t.b2", "rec_r.w1", "rec_r.b1",
    "rec_r.w2", "rec_r.b2", "rec_d.w1", "rec_d.b1", "rec_d.w2", "rec_d.b2", "specials",
];

impl ModelParams {
    /// Fresh parameters. Special rows start from the table's values and
    /// become trainable; all other words stay frozen.
    pub fn init(config: ModelConfig, table: &EmbeddingTable, seed: u64) -> Result<ModelParams, ModelError> {
        config.validate()?;
        if table.dim() != config.d_l {
            return Err(ModelError::Dimension(format!(
                "embedding table has dimension {}, config d_l is {}",
                table.dim(),
                config.d_l
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d_v, d_l) = (config.d_v, config.d_l);
        let att_t = Mlp::init(d_v + d_l, config.hidden_attn, 1, &mut rng);
        let att_r = Mlp::init(d_v + d_l, config.hidden_attn, 1, &mut rng);
        let att_d = Mlp::init(config.pair_dim() + d_l, config.hidden_attn, 1, &mut rng);
        let rec_t = Mlp::init(d_v, config.hidden_recon, d_l, &mut rng);
        let rec_r = Mlp::init(d_v, config.hidden_recon, d_l, &mut rng);
        let rec_d = Mlp::init(config.pair_dim(), config.hidden_recon, d_l, &mut rng);

        let mut specials = Vec::with_capacity(3 * d_l);
        for tok in SPECIAL_TOKENS {
            specials.extend_from_slice(table.lookup(tok));
        }
        let mut words = Vec::new();
        let mut vectors = Vec::new();
        for w in table.words() {
            if SPECIAL_TOKENS.contains(&w.as_str()) {
                continue;
            }
            words.push(w.clone());
            vectors.extend_from_slice(table.lookup(w));
        }
        let n = words.len();
        ModelParams::assemble(
            config,
            [att_t, att_r, att_d, rec_t, rec_r, rec_d],
            Tensor::matrix(3, d_l, specials)?,
            words,
            Tensor::new(vec![n, d_l], vectors)?,
        )
    }

    /// Builds parameters from parts, checking every shape.
    pub fn assemble(
        config: ModelConfig,
        mlps: [Mlp; 6],
        specials: Tensor,
        words: Vec<String>,
        word_vectors: Tensor,
    ) -> Result<ModelParams, ModelError> {
        config.validate()?;
        let [att_t, att_r, att_d, rec_t, rec_r, rec_d] = mlps;
        let (d_v, d_l) = (config.d_v, config.d_l);
        let expect = [
            (&att_t, d_v + d_l, config.hidden_attn, 1),
            (&att_r, d_v + d_l, config.hidden_attn, 1),
            (&att_d, config.pair_dim() + d_l, config.hidden_attn, 1),
            (&rec_t, d_v, config.hidden_recon, d_l),
            (&rec_r, d_v, config.hidden_recon, d_l),
            (&rec_d, config.pair_dim(), config.hidden_recon, d_l),
        ];
        for (k, (m, i, h, o)) in expect.into_iter().enumerate() {
            let ok = m.w1.shape() == [i, h] && m.b1.shape() == [1, h] && m.w2.shape() == [h, o] && m.b2.shape() == [1, o];
            if !ok {
                return Err(ModelError::Dimension(format!(
                    "{} expects {i}x{h}x{o}, got w1 {:?} b1 {:?} w2 {:?} b2 {:?}",
                    &PARAM_NAMES[4 * k][..5],
                    m.w1.shape(),
                    m.b1.shape(),
                    m.w2.shape(),
                    m.b2.shape()
                )));
            }
        }
        if specials.shape() != [3, d_l] {
            return Err(ModelError::Dimension(format!("specials shape {:?}, expected [3, {d_l}]", specials.shape())));
        }
        let expected_vectors = [words.len(), d_l];
        if word_vectors.shape() != expected_vectors && !(words.is_empty() && word_vectors.is_empty()) {
            return Err(ModelError::Dimension(format!(
                "word vectors shape {:?}, expected {:?}",
                word_vectors.shape(),
                expected_vectors
            )));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if SPECIAL_TOKENS.contains(&w.as_str()) || index.insert(w.clone(), i).is_some() {
                return Err(ModelError::Dimension(format!("word '{w}' listed twice or reserved")));
            }
        }
        let params = ModelParams {
            config,
            att_t,
            att_r,
            att_d,
            rec_t,
            rec_r,
            rec_d,
            specials,
            words,
            word_vectors,
            index,
        };
        if let Some(name) = params.non_finite() {
            return Err(ModelError::Engine(EngineError::Domain(format!("parameter {name} is not finite"))));
        }
        Ok(params)
    }

    fn non_finite(&self) -> Option<&'static str> {
        let frozen_ok = self.word_vectors.is_finite();
        if !frozen_ok {
            return Some("word_vectors");
        }
        self.tensors().into_iter().zip(PARAM_NAMES).find(|(t, _)| !t.is_finite()).map(|(_, n)| n)
    }

    /// Trainable tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(PARAM_NAMES.len());
        for m in [&self.att_t, &self.att_r, &self.att_d, &self.rec_t, &self.rec_r, &self.rec_d] {
            out.extend(m.tensors());
        }
        out.push(&self.specials);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(PARAM_NAMES.len());
        for m in [
            &mut self.att_t,
            &mut self.att_r,
            &mut self.att_d,
            &mut self.rec_t,
            &mut self.rec_r,
            &mut self.rec_d,
        ] {
            out.extend(m.tensors_mut());
        }
        out.push(&mut self.specials);
        out
    }

    pub fn mlps(&self) -> [&Mlp; 6] {
        [&self.att_t, &self.att_r, &self.att_d, &self.rec_t, &self.rec_r, &self.rec_d]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_vectors(&self) -> &Tensor {
        &self.word_vectors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn source(&self, word: &str) -> EmbeddingSource {
        let w = normalize_word(word);
        let special = |tok: &str| SPECIAL_TOKENS.iter().position(|s| *s == tok).expect("special token");
        match w.as_str() {
            SELF_TOKEN => EmbeddingSource::Special(special(SELF_TOKEN)),
            UNKNOWN_TOKEN => EmbeddingSource::Special(special(UNKNOWN_TOKEN)),
            _ => match self.index.get(&w) {
                Some(&i) => EmbeddingSource::Word(i),
                None => EmbeddingSource::Special(special(OOV_TOKEN)),
            },
        }
    }

    pub fn embedding(&self, word: &str) -> &[f64] {
        match self.source(word) {
            EmbeddingSource::Word(i) => self.word_vectors.row_slice(i),
            EmbeddingSource::Special(k) => self.specials.row_slice(k),
        }
    }

    pub fn triad_embeddings(&self, triad: &DiscriminativeTriad) -> [Vec<f64>; 3] {
        triad.units().map(|u| self.embedding(u).to_vec())
    }
}

/// Visual and pair features for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFeatures {
    pub n: usize,
    /// `N x D_v`.
    pub visual: Tensor,
    /// `N^2 x (2 D_v + 10)`, row `i * N + j` for the pair `(i, j)`.
    pub pairs: Tensor,
    /// `N x (2 D_v + 10)`, the pairs `(i, i)`.
    pub diagonal: Tensor,
}

impl SceneFeatures {
    pub fn new(proposals: &[Proposal], config: &ModelConfig) -> Result<SceneFeatures, ModelError> {
        let n = proposals.len();
        if n == 0 {
            return Err(ModelError::Dimension("scene has no proposals".into()));
        }
        let d_v = config.d_v;
        let mut visual = Vec::with_capacity(n * d_v);
        for (i, p) in proposals.iter().enumerate() {
            if p.visual.len() != d_v {
                return Err(ModelError::Dimension(format!(
                    "proposal {i} has {} visual values, model expects {d_v}",
                    p.visual.len()
                )));
            }
            let norm = if config.normalize_visual {
                p.visual.iter().map(|v| v * v).sum::<f64>().sqrt()
            } else {
                1.0
            };
            let norm = if norm > 0.0 { norm } else { 1.0 };
            visual.extend(p.visual.iter().map(|v| v / norm));
        }
        let width = config.pair_dim();
        let mut pairs = Vec::with_capacity(n * n * width);
        for i in 0..n {
            for j in 0..n {
                for k in [i, j] {
                    pairs.extend_from_slice(&visual[k * d_v..(k + 1) * d_v]);
                    pairs.extend_from_slice(&proposals[k].spatial);
                }
            }
        }
        let diagonal = (0..n).flat_map(|i| pairs[(i * n + i) * width..(i * n + i + 1) * width].iter().copied()).collect();
        Ok(SceneFeatures {
            n,
            visual: Tensor::matrix(n, d_v, visual)?,
            pairs: Tensor::matrix(n * n, width, pairs)?,
            diagonal: Tensor::matrix(n, width, diagonal)?,
        })
    }
}
