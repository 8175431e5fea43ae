//! Weakly-supervised training and the ablation sweep.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::EmbeddingTable;
use crate::engine::{AdamConfig, AdamState, EngineError, Tape, Tensor};
use crate::infer::{evaluate, InferError, ScoreWeights, TriadSelection};
use crate::model::{GraphParams, Mode, ModelConfig, ModelError, ModelParams, Reconstruction, SceneFeatures, SceneVars, TriadGraph, UnitMask};
use crate::scene::{Scene, TrainingScene};
use crate::triad::DiscriminativeTriad;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set has no triads")]
    EmptyDataset,
    #[error("scene {scene}: {source}")]
    Scene { scene: String, source: ModelError },
    #[error("non-finite loss or gradient at step {step}: {detail}")]
    NonFinite {
        step: u64,
        detail: String,
        last_good: Box<ModelParams>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Learning rate 1e-3, for short runs on synthetic data.
    Desk,
    /// Learning rate 1.3e-5.
    Paper,
}

impl Preset {
    pub fn learning_rate(self) -> f64 {
        match self {
            Preset::Desk => 1e-3,
            Preset::Paper => 1.3e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Overrides the preset's learning rate.
    pub lr: Option<f64>,
    pub epochs: usize,
    /// Stops after this many optimizer steps, if set.
    pub iterations: Option<u64>,
    pub seed: u64,
    /// Triads per optimizer step.
    pub batch_size: usize,
    /// Calls the checkpoint hook every this many steps; 0 disables it.
    pub checkpoint_every: u64,
    pub units: UnitMask,
    /// When false, aggregated features are compared with unit embeddings
    /// through fixed random projections instead of learned networks.
    pub reconstruction: bool,
    /// Hard mode only: the temperature starts here and decays
    /// geometrically to `model.tau`. `None` trains at `model.tau` throughout.
    pub tau_start: Option<f64>,
    /// Share of all steps spent decaying from `tau_start`.
    pub anneal_fraction: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: Preset::Desk,
            lr: None,
            epochs: 3,
            iterations: None,
            seed: 1,
            batch_size: 1,
            checkpoint_every: 0,
            units: UnitMask::default(),
            reconstruction: true,
            tau_start: Some(1.0),
            anneal_fraction: 0.8,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(self.preset.learning_rate())
    }

    /// Hard-mode temperature after `step` of `total` steps.
    pub fn tau_at(&self, step: u64, total: u64) -> f64 {
        let end = self.model.tau;
        let Some(start) = self.tau_start else {
            return end;
        };
        let span = self.anneal_fraction * total as f64;
        let progress = if span > 0.0 { (step as f64 / span).min(1.0) } else { 1.0 };
        start * (end / start).powf(progress)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if !self.units.any() {
            return fail("at least one unit loss must be enabled");
        }
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.iterations == Some(0) {
            return fail("iterations must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if let Some(t) = self.tau_start {
            if !(t > 0.0) || !t.is_finite() {
                return fail("tau_start must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return fail("anneal_fraction must be in [0, 1]");
        }
        let lr = self.learning_rate();
        if !(lr > 0.0) || !lr.is_finite() {
            return fail("learning rate must be positive");
        }
        self.model.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub variant: String,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogEntry>,
}

/// Fixed projections standing in for reconstruction networks.
pub fn random_projections(config: &ModelConfig, seed: u64) -> [Tensor; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f6a);
    let mut make = |input: usize| {
        let bound = 1.0 / (input as f64).sqrt();
        let data = (0..input * config.d_l).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::matrix(input, config.d_l, data).expect("sized")
    };
    [make(config.d_v), make(config.d_v), make(config.pair_dim())]
}

fn check_dims(scenes: &[TrainingScene], table: &EmbeddingTable, cfg: &ModelConfig) -> Result<(), TrainError> {
    if table.dim() != cfg.d_l {
        return Err(TrainError::Config(format!(
            "model.d_l is {} but the embeddings have dimension {}",
            cfg.d_l,
            table.dim()
        )));
    }
    if let Some(s) = scenes.iter().find(|s| s.proposals.first().is_some_and(|p| p.visual.len() != cfg.d_v)) {
        return Err(TrainError::Config(format!(
            "model.d_v is {} but scene {} has {}-wide visual features",
            cfg.d_v,
            s.scene_id,
            s.proposals[0].visual.len()
        )));
    }
    Ok(())
}

fn with_final_tau(mut params: ModelParams, config: &TrainConfig) -> ModelParams {
    params.config.tau = config.model.tau;
    params
}

/// Trains from scratch. `on_checkpoint` is called with the step count and
/// current parameters at the configured cadence and after the last step.
pub fn train(
    scenes: &[TrainingScene],
    table: &EmbeddingTable,
    config: &TrainConfig,
    variant: &str,
    mut on_checkpoint: impl FnMut(u64, &ModelParams),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_dims(scenes, table, &config.model)?;
    let features: Vec<SceneFeatures> = scenes
        .iter()
        .map(|s| {
            SceneFeatures::new(&s.proposals, &config.model).map_err(|e| TrainError::Scene {
                scene: s.scene_id.clone(),
                source: e,
            })
        })
        .collect::<Result<_, _>>()?;
    let items: Vec<(usize, &DiscriminativeTriad)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.queries.iter().flat_map(move |q| q.triads.iter().map(move |t| (i, t))))
        .collect();
    if items.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let mut params = ModelParams::init(config.model.clone(), table, config.seed)?;
    let projections = random_projections(&config.model, config.seed);
    let recon = if config.reconstruction {
        Reconstruction::Learned
    } else {
        Reconstruction::Projected(&projections)
    };
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate()), &params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::new();
    let mut step: u64 = 0;
    let max_steps = config.iterations.unwrap_or(u64::MAX);
    let total_steps = ((config.epochs * items.len().div_ceil(config.batch_size)) as u64).min(max_steps);

    'outer: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if step >= max_steps {
                break 'outer;
            }
            params.config.tau = config.tau_at(step, total_steps);
            let mut grads: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for &k in batch {
                let (scene, triad) = items[k];
                let mut tape = Tape::new();
                let gp = GraphParams::record(&mut tape, &params);
                let vars = SceneVars::record(&mut tape, &features[scene]);
                let graph = TriadGraph::build(
                    &mut tape,
                    &gp,
                    &params,
                    vars,
                    triad,
                    config.units,
                    recon,
                    Some(&mut noise_rng),
                );
                let graph = match graph {
                    Ok(g) => g,
                    Err(ModelError::Engine(e @ EngineError::NonFinite { .. })) => {
                        return Err(TrainError::NonFinite {
                            step,
                            detail: e.to_string(),
                            last_good: Box::new(with_final_tau(params, config)),
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
                batch_loss += graph.parts.total;
                let g = gp.gradients(&tape.backward(graph.loss).map_err(ModelError::from)?, &tape);
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = grads.expect("non-empty batch");
            if batch.len() > 1 {
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
            let loss = batch_loss * scale;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    detail: format!("loss {loss}"),
                    last_good: Box::new(with_final_tau(params, config)),
                });
            }
            if let Err(e) = adam.step(&mut params.tensors_mut(), &grads) {
                return Err(TrainError::NonFinite {
                    step,
                    detail: e.to_string(),
                    last_good: Box::new(with_final_tau(params, config)),
                });
            }
            params.config.tau = config.model.tau;
            step += 1;
            log.push(LogEntry {
                step,
                epoch,
                loss,
                variant: variant.to_string(),
            });
            if config.checkpoint_every > 0 && step.is_multiple_of(config.checkpoint_every) {
                on_checkpoint(step, &params);
            }
        }
        log::info!("{variant}: epoch {epoch} done after {step} steps");
    }
    if config.checkpoint_every == 0 || !step.is_multiple_of(config.checkpoint_every) {
        on_checkpoint(step, &params);
    }
    Ok(TrainOutcome { params, log })
}

/// Rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "w/o L^t")]
    NoTargetLoss,
    #[serde(rename = "w/o L^d")]
    NoDiscriminativeLoss,
    #[serde(rename = "w/o L^r")]
    NoReferenceLoss,
    #[serde(rename = "w/o Recon")]
    NoReconstruction,
    #[serde(rename = "Soft")]
    Soft,
    #[serde(rename = "Single")]
    Single,
    #[serde(rename = "Ours")]
    Ours,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::NoTargetLoss,
        Variant::NoDiscriminativeLoss,
        Variant::NoReferenceLoss,
        Variant::NoReconstruction,
        Variant::Soft,
        Variant::Single,
        Variant::Ours,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::NoTargetLoss => "w/o L^t",
            Variant::NoDiscriminativeLoss => "w/o L^d",
            Variant::NoReferenceLoss => "w/o L^r",
            Variant::NoReconstruction => "w/o Recon",
            Variant::Soft => "Soft",
            Variant::Single => "Single",
            Variant::Ours => "Ours",
        }
    }

    /// Training config for this row, derived from the baseline.
    /// `Single` trains exactly like `Ours`; it differs at inference.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.model.mode = Mode::Hard;
        c.units = UnitMask::default();
        c.reconstruction = true;
        match self {
            Variant::NoTargetLoss => c.units.target = false,
            Variant::NoDiscriminativeLoss => c.units.discriminative = false,
            Variant::NoReferenceLoss => c.units.reference = false,
            Variant::NoReconstruction => c.reconstruction = false,
            Variant::Soft => c.model.mode = Mode::Soft,
            Variant::Single | Variant::Ours => {}
        }
        c
    }

    pub fn selection(self, seed: u64) -> TriadSelection {
        match self {
            Variant::Single => TriadSelection::SingleRandom(seed),
            _ => TriadSelection::All,
        }
    }

    fn trained_as(self) -> Variant {
        match self {
            Variant::Single => Variant::Ours,
            v => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn mean(&self, v: Variant) -> Option<f64> {
        let acc: Vec<f64> = self.rows.iter().filter(|r| r.variant == v).map(|r| r.accuracy).collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }
}

/// Trains every variant for every seed (in parallel) and evaluates on the
/// held-out scenes. Seeds replace `base.seed`.
pub fn ablate(
    train_scenes: &[TrainingScene],
    eval_scenes: &[Scene],
    table: &EmbeddingTable,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    weights: &ScoreWeights,
) -> Result<AblationReport, TrainError> {
    let mut jobs: Vec<(Variant, u64)> = Vec::new();
    for &v in variants {
        for &s in seeds {
            let job = (v.trained_as(), s);
            if !jobs.contains(&job) {
                jobs.push(job);
            }
        }
    }
    let trained: Vec<((Variant, u64), ModelParams)> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let mut cfg = v.apply(base);
            cfg.seed = seed;
            let out = train(train_scenes, table, &cfg, v.label(), |_, _| {})?;
            Ok(((v, seed), out.params))
        })
        .collect::<Result<_, TrainError>>()?;

    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for &v in variants {
        for &seed in seeds {
            let params = &trained
                .iter()
                .find(|(k, _)| *k == (v.trained_as(), seed))
                .expect("trained above")
                .1;
            let report = evaluate(eval_scenes, params, weights, v.selection(seed))?;
            rows.push(AblationRow {
                variant: v,
                seed,
                accuracy: report.accuracy,
            });
        }
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenes, SceneConfig, SceneVocabulary};

    fn table(vocab: &SceneVocabulary, d_l: usize) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<(String, Vec<f64>)> = vocab
            .all_words()
            .into_iter()
            .map(|w| (w, (0..d_l).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        EmbeddingTable::from_rows(d_l, rows.iter().map(|(w, v)| (w.as_str(), v.clone())), 5).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            model: ModelConfig {
                hidden_attn: 16,
                hidden_recon: 8,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn temperature_schedule() {
        let mut cfg = TrainConfig::default();
        cfg.model.tau = 0.1;
        cfg.tau_start = Some(1.0);
        cfg.anneal_fraction = 0.5;
        assert_eq!(cfg.tau_at(0, 100), 1.0);
        assert!((cfg.tau_at(25, 100) - 0.1f64.sqrt()).abs() < 1e-12);
        assert!((cfg.tau_at(50, 100) - 0.1).abs() < 1e-12);
        assert!((cfg.tau_at(99, 100) - 0.1).abs() < 1e-12);
        cfg.tau_start = None;
        assert_eq!(cfg.tau_at(0, 100), 0.1);
        cfg.tau_start = Some(1.0);
        cfg.anneal_fraction = 0.0;
        assert_eq!(cfg.tau_at(0, 100), 0.1);
        cfg.anneal_fraction = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = small_config();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let parsed = TrainConfig::from_toml("seed = 4\n[model]\nmode = \"soft\"\ntau = 0.5\n").unwrap();
        assert_eq!(parsed.seed, 4);
        assert_eq!(parsed.model.mode, Mode::Soft);
        assert!(matches!(TrainConfig::from_toml("sede = 4\n"), Err(TrainError::Config(_))));
    }

    #[test]
    fn all_units_disabled_is_rejected() {
        let toml = "[units]\ntarget = false\nreference = false\ndiscriminative = false\n";
        assert!(matches!(TrainConfig::from_toml(toml), Err(TrainError::Config(_))));
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_descends_and_is_reproducible() {
        let vocab = SceneVocabulary::default();
        let scenes: Vec<TrainingScene> = generate_scenes(&vocab, &SceneConfig::default(), 50, 3)
            .unwrap()
            .iter()
            .map(Scene::training_view)
            .collect();
        let t = table(&vocab, 16);
        let cfg = TrainConfig {
            iterations: Some(200),
            epochs: 10,
            ..small_config()
        };
        let mut hooks = Vec::new();
        let a = train(&scenes, &t, &cfg, "Ours", |s, _| hooks.push(s)).unwrap();
        assert_eq!(a.log.len(), 200);
        assert_eq!(hooks, vec![200]);
        let mean = |xs: &[LogEntry]| xs.iter().map(|e| e.loss).sum::<f64>() / xs.len() as f64;
        let (first, last) = (mean(&a.log[..20]), mean(&a.log[180..]));
        assert!(last < first, "{first} -> {last}");
        assert!(a.log.iter().all(|e| e.loss.is_finite()));

        let b = train(&scenes, &t, &cfg, "Ours", |_, _| {}).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn checkpoint_cadence_and_batches() {
        let vocab = SceneVocabulary::default();
        let scenes: Vec<TrainingScene> = generate_scenes(&vocab, &SceneConfig::default(), 5, 2)
            .unwrap()
            .iter()
            .map(Scene::training_view)
            .collect();
        let cfg = TrainConfig {
            batch_size: 3,
            checkpoint_every: 2,
            iterations: Some(5),
            epochs: 50,
            ..small_config()
        };
        let mut hooks = Vec::new();
        let out = train(&scenes, &table(&vocab, 16), &cfg, "x", |s, _| hooks.push(s)).unwrap();
        assert_eq!(out.log.len(), 5);
        assert_eq!(hooks, vec![2, 4, 5]);
    }

    #[test]
    fn dimension_mismatches_are_config_errors() {
        let vocab = SceneVocabulary::default();
        let scenes: Vec<TrainingScene> = generate_scenes(&vocab, &SceneConfig::default(), 2, 2)
            .unwrap()
            .iter()
            .map(Scene::training_view)
            .collect();
        let r = train(&scenes, &table(&vocab, 8), &small_config(), "x", |_, _| {});
        assert!(matches!(r, Err(TrainError::Config(_))));
        assert!(matches!(
            train(&[], &table(&vocab, 16), &small_config(), "x", |_, _| {}),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn variants_map_to_configs() {
        let base = TrainConfig::default();
        assert!(!Variant::NoTargetLoss.apply(&base).units.target);
        assert!(!Variant::NoReconstruction.apply(&base).reconstruction);
        assert_eq!(Variant::Soft.apply(&base).model.mode, Mode::Soft);
        assert_eq!(Variant::Single.apply(&base), Variant::Ours.apply(&base));
        assert_eq!(Variant::Single.selection(3), TriadSelection::SingleRandom(3));
        let labels: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
        assert_eq!(labels, ["w/o L^t", "w/o L^d", "w/o L^r", "w/o Recon", "Soft", "Single", "Ours"]);
    }
}
