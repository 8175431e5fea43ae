//! Differentiable forward pass of the triad loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingSource, Mode, ModelConfig, ModelError, ModelParams, SceneFeatures};
use crate::corpus_io::EmbeddingTable;
use crate::engine::gradcheck::{self, GradCheckReport, Probe};
use crate::engine::{Gradients, Tape, Tensor, Var};
use crate::scene::{spatial_feature, BBox, Proposal};
use crate::triad::DiscriminativeTriad;

/// Which unit reconstruction terms enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitMask {
    pub target: bool,
    pub reference: bool,
    pub discriminative: bool,
}

impl Default for UnitMask {
    fn default() -> Self {
        UnitMask {
            target: true,
            reference: true,
            discriminative: true,
        }
    }
}

impl UnitMask {
    pub fn as_array(self) -> [bool; 3] {
        [self.target, self.reference, self.discriminative]
    }

    pub fn any(self) -> bool {
        self.as_array().iter().any(|&b| b)
    }
}

/// How aggregated features are compared with unit embeddings.
#[derive(Clone, Copy, Debug)]
pub enum Reconstruction<'a> {
    /// Through the trained reconstruction networks.
    Learned,
    /// Through fixed projections to the embedding width, one per unit.
    Projected(&'a [Tensor; 3]),
}

/// Trainable parameters recorded as tape leaves, in `PARAM_NAMES` order.
pub struct GraphParams {
    vars: Vec<Var>,
}

impl GraphParams {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> GraphParams {
        GraphParams {
            vars: params.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    fn mlp(&self, k: usize) -> [Var; 4] {
        [self.vars[4 * k], self.vars[4 * k + 1], self.vars[4 * k + 2], self.vars[4 * k + 3]]
    }

    fn specials(&self) -> Var {
        self.vars[24]
    }

    /// Gradient per parameter; zeros where the loss does not reach.
    pub fn gradients(&self, grads: &Gradients, tape: &Tape) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zero(v, tape)).collect()
    }
}

/// Per-unit loss values of one triad; disabled units are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub units: [f64; 3],
}

/// Scene features recorded as tape constants.
#[derive(Clone, Copy, Debug)]
pub struct SceneVars {
    pub visual: Var,
    pub pairs: Var,
    pub diagonal: Var,
}

impl SceneVars {
    pub fn record(tape: &mut Tape, scene: &SceneFeatures) -> SceneVars {
        SceneVars {
            visual: tape.constant(scene.visual.clone()),
            pairs: tape.constant(scene.pairs.clone()),
            diagonal: tape.constant(scene.diagonal.clone()),
        }
    }
}

pub struct TriadGraph {
    pub loss: Var,
    pub parts: LossParts,
}

fn attention(tape: &mut Tape, mlp: [Var; 4], features: Var, embedding: Var, rows: usize) -> Result<Var, ModelError> {
    let tiled = tape.repeat_rows(embedding, rows)?;
    let x = tape.concat(&[features, tiled])?;
    let x = tape.relu(x)?;
    let h = tape.matmul(x, mlp[0])?;
    let h = tape.add(h, mlp[1])?;
    let h = tape.relu(h)?;
    let a = tape.matmul(h, mlp[2])?;
    Ok(tape.add(a, mlp[3])?)
}

fn reconstruction(tape: &mut Tape, mlp: [Var; 4], feature: Var) -> Result<Var, ModelError> {
    let h = tape.matmul(feature, mlp[0])?;
    let h = tape.add(h, mlp[1])?;
    let h = tape.relu(h)?;
    let out = tape.matmul(h, mlp[2])?;
    Ok(tape.add(out, mlp[3])?)
}

fn embedding_var(tape: &mut Tape, gp: &GraphParams, params: &ModelParams, word: &str) -> Result<Var, ModelError> {
    match params.source(word) {
        EmbeddingSource::Word(_) => Ok(tape.constant(Tensor::row(params.embedding(word).to_vec()))),
        EmbeddingSource::Special(k) => {
            let mut pick = vec![0.0; 3];
            pick[k] = 1.0;
            let pick = tape.constant(Tensor::row(pick));
            Ok(tape.matmul(pick, gp.specials())?)
        }
    }
}

fn gumbel_noise(n: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::matrix(n, 1, data).expect("sized")
}

impl TriadGraph {
    /// Records the loss of one triad over a scene already on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        tape: &mut Tape,
        gp: &GraphParams,
        params: &ModelParams,
        scene: SceneVars,
        triad: &DiscriminativeTriad,
        mask: UnitMask,
        recon: Reconstruction<'_>,
        mut noise: Option<&mut ChaCha8Rng>,
    ) -> Result<TriadGraph, ModelError> {
        let config = &params.config;
        let temperature = config.temperature();
        let n = tape.value(scene.visual).rows();
        let units = triad.units();
        let features = if config.unary_diagonal && triad.is_unary() {
            [scene.visual, scene.visual, scene.diagonal]
        } else {
            [scene.visual, scene.visual, scene.pairs]
        };
        let rows = features.map(|f| tape.value(f).rows());
        debug_assert_eq!(rows[0], n);

        let mut terms = Vec::with_capacity(3);
        let mut parts = LossParts::default();
        for c in 0..3 {
            if !mask.as_array()[c] {
                continue;
            }
            let e = embedding_var(tape, gp, params, units[c])?;
            let mut scores = attention(tape, gp.mlp(c), features[c], e, rows[c])?;
            if config.gumbel {
                if let Some(rng) = noise.as_deref_mut() {
                    let g = tape.constant(gumbel_noise(rows[c], rng));
                    scores = tape.add(scores, g)?;
                }
            }
            let weights = tape.softmax(scores, temperature)?;
            let aggregated = tape.matmul(weights, features[c])?;
            let rebuilt = match recon {
                Reconstruction::Learned => reconstruction(tape, gp.mlp(3 + c), aggregated)?,
                Reconstruction::Projected(p) => {
                    let proj = tape.constant(p[c].clone());
                    tape.matmul(aggregated, proj)?
                }
            };
            let term = tape.l2_sq(rebuilt, e)?;
            parts.units[c] = tape.value(term).item()?;
            terms.push(term);
        }
        if terms.is_empty() {
            return Err(ModelError::Config("every unit loss is disabled".into()));
        }
        let loss = tape.sum(&terms)?;
        parts.total = tape.value(loss).item()?;
        Ok(TriadGraph { loss, parts })
    }
}

/// Loss and analytic gradients of a set of triads over one scene.
pub fn loss_and_gradients(
    params: &ModelParams,
    scene: &SceneFeatures,
    triads: &[DiscriminativeTriad],
    mask: UnitMask,
    recon: Reconstruction<'_>,
    noise: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>, Vec<bool>), ModelError> {
    let (tape, gp, loss) = record_loss(params, scene, triads, mask, recon, noise)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item()?, gp.gradients(&grads, &tape), tape.relu_signature()))
}

fn record_loss(
    params: &ModelParams,
    scene: &SceneFeatures,
    triads: &[DiscriminativeTriad],
    mask: UnitMask,
    recon: Reconstruction<'_>,
    mut noise: Option<&mut ChaCha8Rng>,
) -> Result<(Tape, GraphParams, Var), ModelError> {
    let mut tape = Tape::new();
    let gp = GraphParams::record(&mut tape, params);
    let vars = SceneVars::record(&mut tape, scene);
    let mut losses = Vec::with_capacity(triads.len());
    for t in triads {
        let g = TriadGraph::build(&mut tape, &gp, params, vars, t, mask, recon, noise.as_deref_mut())?;
        losses.push(g.loss);
    }
    let loss = tape.sum(&losses)?;
    Ok((tape, gp, loss))
}

/// Finite-difference check of the whole loss path on a small random
/// instance: `D_v = D_l = 4`, three proposals, default hidden widths.
pub fn full_path_gradcheck(seed: u64, mode: Mode, h: f64) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_v, d_l, n) = (4, 4, 3);
    let mut vector = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let rows: Vec<(&str, Vec<f64>)> = ["cat", "table", "red", "on"].into_iter().map(|w| (w, vector(d_l))).collect();
    let proposals: Vec<Proposal> = (0..n)
        .map(|i| {
            let x = 40.0 + 150.0 * i as f64;
            let bbox = BBox::new(x, 60.0 + 20.0 * i as f64, x + 120.0, 200.0 + 30.0 * i as f64).expect("valid box");
            Proposal {
                bbox,
                visual: vector(d_v),
                spatial: spatial_feature(&bbox, 640.0, 480.0).expect("valid box"),
            }
        })
        .collect();
    let table = EmbeddingTable::from_rows(d_l, rows, seed).map_err(|e| ModelError::Config(e.to_string()))?;
    let config = ModelConfig {
        d_v,
        d_l,
        mode,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(config.clone(), &table, seed)?;
    let scene = SceneFeatures::new(&proposals, &config)?;
    let triads = [
        DiscriminativeTriad::new("cat", "table", "on"),
        DiscriminativeTriad::new("cat", "cat", "SELF"),
        DiscriminativeTriad::new("UKN", "UKN", "zyzzyva"),
    ]
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|e| ModelError::Config(e.to_string()))?;

    let mask = UnitMask::default();
    let (_, analytic, _) = loss_and_gradients(&params, &scene, &triads, mask, Reconstruction::Learned, None)?;
    let mut values: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let mut probe_params = params.clone();
    let report = gradcheck::check(&mut values, &analytic, h, |vals| {
        for (dst, src) in probe_params.tensors_mut().into_iter().zip(vals) {
            dst.data_mut().copy_from_slice(src.data());
        }
        let (tape, _, loss) = record_loss(&probe_params, &scene, &triads, mask, Reconstruction::Learned, None)
            .map_err(|e| crate::engine::EngineError::Domain(e.to_string()))?;
        Ok(Probe {
            loss: tape.value(loss).item()?,
            relu_signature: tape.relu_signature(),
        })
    })?;
    Ok(report)
}
