use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use triadground::corpus_io::{load_checkpoint, load_embeddings, read_parses, save_checkpoint, write_embeddings, write_triads};
use triadground::infer::{evaluate, ground, ScoreWeights, TriadSelection};
use triadground::model::{full_path_gradcheck, Mode, ModelParams};
use triadground::scene::{generate_scenes, read_scenes, read_training_scenes, write_scenes, Scene, SceneConfig, SceneVocabulary};
use triadground::train::{ablate, train, TrainConfig, Variant};
use triadground::triad::extract_triads;

use crate::error::CliError;
use crate::files::{create_dir, open, read_to_string, write_atomic};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

/// Weakly-supervised referring expression grounding with discriminative triads.
#[derive(Debug, Parser)]
#[command(name = "triadground")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract discriminative triads from CoNLL-U parses into a TSV listing.
    Parse {
        /// CoNLL-U input, one block per query.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output TSV: query_id, k, target, reference, discriminative.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic scenes as JSON lines.
    GenScenes(GenScenesArgs),
    /// Train a model from scenes and word embeddings.
    Train(TrainArgs),
    /// Ground every query of a scene file and write a per-query report.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON-lines report, one row per query.
        #[arg(long)]
        report: PathBuf,
        /// Use one random triad per query, drawn from this seed.
        #[arg(long)]
        single: Option<u64>,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Ground one query and print the score table.
    Ground {
        /// Scene file containing the query.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        query_id: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
    },
    /// Train and evaluate every ablation variant over several seeds.
    Ablate(AblateArgs),
    /// Finite-difference check of the training gradients on a small random model.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Difference step.
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    /// Number of scenes.
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Generator settings (TOML); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Proposals per scene.
    #[arg(long)]
    pub proposals: Option<usize>,
    /// Standard deviation of the visual noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Also write random embeddings for the scene vocabulary here.
    #[arg(long)]
    pub emb_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 42)]
    pub emb_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scenes; ground truth in the file is not read.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Text embeddings, one word and its values per line.
    #[arg(long)]
    pub emb: PathBuf,
    /// Output directory for the checkpoint, log and resolved config.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train_scenes: PathBuf,
    #[arg(long)]
    pub eval_scenes: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Write the full report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[command(flatten)]
    pub overrides: ConfigArgs,
}

/// Training config file plus overrides; flags win over the file.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Final temperature of hard aggregation.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Ablation row to train, e.g. "w/o L^t" or "Soft".
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Soft,
    Hard,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Weight of the target attention in pair scores.
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    /// Weight of the reference attention.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Weight of the discriminative attention.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

impl WeightArgs {
    fn weights(&self) -> ScoreWeights {
        ScoreWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

fn parse_variant(label: &str) -> Result<Variant, CliError> {
    Variant::ALL
        .into_iter()
        .find(|v| v.label().eq_ignore_ascii_case(label))
        .ok_or_else(|| {
            let known: Vec<&str> = Variant::ALL.iter().map(|v| v.label()).collect();
            CliError::Config(format!("unknown variant '{label}', expected one of {known:?}"))
        })
}

impl ConfigArgs {
    /// The resolved config and the name of the trained variant.
    pub fn resolve(&self) -> Result<(TrainConfig, String), CliError> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_toml(&read_to_string(path)?)?,
            None => TrainConfig::default(),
        };
        let mut label = Variant::Ours.label().to_string();
        if let Some(v) = &self.variant {
            let v = parse_variant(v)?;
            cfg = v.apply(&cfg);
            label = v.label().to_string();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.lr = Some(lr);
        }
        if let Some(t) = self.tau {
            cfg.model.tau = t;
        }
        if let Some(m) = self.mode {
            cfg.model.mode = match m {
                ModeArg::Soft => Mode::Soft,
                ModeArg::Hard => Mode::Hard,
            };
        }
        cfg.validate()?;
        Ok((cfg, label))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { input, out } => parse(&input, &out),
        Command::GenScenes(args) => gen_scenes(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Eval {
            scenes,
            ckpt,
            report,
            single,
            weights,
        } => eval(&scenes, &ckpt, &report, single, &weights.weights()),
        Command::Ground {
            scene,
            query_id,
            ckpt,
            weights,
        } => ground_cmd(&scene, &query_id, &ckpt, &weights.weights()),
        Command::Ablate(args) => ablate_cmd(&args),
        Command::Gradcheck { seed, h, tolerance } => gradcheck(seed, h, tolerance),
    }
}

fn parse(input: &Path, out: &Path) -> Result<(), CliError> {
    let parses = read_parses(open(input)?).map_err(|e| CliError::at(input, e))?;
    let queries: Vec<_> = parses.iter().map(extract_triads).collect();
    write_atomic(out, |w| write_triads(w, &queries).map_err(|e| CliError::at(out, e)))?;
    let rows: usize = queries.iter().map(|q| q.triads.len()).sum();
    println!("{} queries, {rows} triads", queries.len());
    Ok(())
}

fn gen_scenes(args: &GenScenesArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => toml::from_str(&read_to_string(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SceneConfig::default(),
    };
    if let Some(n) = args.proposals {
        cfg.n_proposals = n;
    }
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    let vocab = SceneVocabulary::default();
    cfg.validate(&vocab).map_err(|e| CliError::Config(e.to_string()))?;
    let scenes = generate_scenes(&vocab, &cfg, args.n, args.seed)?;
    write_atomic(&args.out, |w| write_scenes(w, &scenes).map_err(|e| CliError::at(&args.out, e)))?;
    if let Some(path) = &args.emb_out {
        let table = vocab.embedding_table(args.emb_dim, args.emb_seed)?;
        write_atomic(path, |w| write_embeddings(w, &table).map_err(|e| CliError::at(path, e)))?;
    }
    let queries: usize = scenes.iter().map(|s| s.queries.len()).sum();
    println!("{} scenes, {queries} queries", scenes.len());
    Ok(())
}

fn load_table(path: &Path, cfg: &TrainConfig) -> Result<triadground::corpus_io::EmbeddingTable, CliError> {
    load_embeddings(open(path)?, cfg.model.d_l, cfg.seed).map_err(|e| CliError::at(path, e))
}

fn read_eval_scenes(path: &Path) -> Result<Vec<Scene>, CliError> {
    read_scenes(open(path)?).map_err(|e| CliError::at(path, e))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_atomic(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, r).map_err(|e| CliError::at(path, e))?;
            writeln!(w).map_err(|e| CliError::at(path, e))?;
        }
        Ok(())
    })
}

fn train_cmd(args: &TrainArgs) -> Result<(), CliError> {
    let (cfg, variant) = args.overrides.resolve()?;
    let scenes = read_training_scenes(open(&args.scenes)?).map_err(|e| CliError::at(&args.scenes, e))?;
    let table = load_table(&args.emb, &cfg)?;
    create_dir(&args.out)?;
    let mut saved: Result<(), CliError> = Ok(());
    let outcome = train(&scenes, &table, &cfg, &variant, |step, params| {
        if cfg.checkpoint_every > 0 && saved.is_ok() {
            let path = args.out.join(format!("step-{step}.ckpt"));
            saved = save_checkpoint(params, &path).map_err(|e| CliError::at(&path, e));
        }
    });
    saved?;
    let outcome = match outcome {
        Ok(o) => o,
        Err(triadground::train::TrainError::NonFinite { step, detail, last_good }) => {
            let path = args.out.join(CHECKPOINT_FILE);
            save_checkpoint(&last_good, &path).map_err(|e| CliError::at(&path, e))?;
            return Err(CliError::Invariant(format!(
                "non-finite values at step {step} ({detail}); last good parameters saved to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let ckpt = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.params, &ckpt).map_err(|e| CliError::at(&ckpt, e))?;
    write_jsonl(&args.out.join(LOG_FILE), &outcome.log)?;
    let cfg_path = args.out.join(CONFIG_FILE);
    write_atomic(&cfg_path, |w| w.write_all(cfg.to_toml().as_bytes()).map_err(|e| CliError::at(&cfg_path, e)))?;
    let last = outcome.log.last().map_or(f64::NAN, |l| l.loss);
    println!("{} steps, final loss {last:.6}, checkpoint {}", outcome.log.len(), ckpt.display());
    Ok(())
}

fn load_params(path: &Path) -> Result<ModelParams, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    load_checkpoint(path).map_err(|e| CliError::at(path, e))
}

fn eval(scenes: &Path, ckpt: &Path, report: &Path, single: Option<u64>, w: &ScoreWeights) -> Result<(), CliError> {
    let params = load_params(ckpt)?;
    let scenes = read_eval_scenes(scenes)?;
    let selection = single.map_or(TriadSelection::All, TriadSelection::SingleRandom);
    let r = evaluate(&scenes, &params, w, selection)?;
    write_jsonl(report, &r.rows)?;
    println!("accuracy {:.4} ({}/{})", r.accuracy, r.correct, r.queries);
    Ok(())
}

fn ground_cmd(scene: &Path, query_id: &str, ckpt: &Path, w: &ScoreWeights) -> Result<(), CliError> {
    let params = load_params(ckpt)?;
    let scenes = read_eval_scenes(scene)?;
    let (scene, query) = scenes
        .iter()
        .find_map(|s| s.queries.iter().find(|q| q.query_id == query_id).map(|q| (s, q)))
        .ok_or_else(|| CliError::Failed(format!("query '{query_id}' not found in {}", scene.display())))?;
    let g = ground(&query.triads, &scene.proposals, &params, w)?;
    let b = &scene.proposals[g.chosen].bbox;
    println!("query {query_id}: \"{}\"", query.text);
    for (k, t) in query.triads.iter().enumerate() {
        println!("  triad {}: ({}, {}, {})", k + 1, t.target, t.reference, t.discriminative);
    }
    println!(
        "chosen {} box [{:.1}, {:.1}, {:.1}, {:.1}] score {:.4}",
        g.chosen, b.x_tl, b.y_tl, b.x_br, b.y_br, g.scores[g.chosen]
    );
    print!("proposal      score");
    for k in 0..query.triads.len() {
        print!("  triad{:<2} ref", k + 1);
    }
    println!();
    for (i, s) in g.scores.iter().enumerate() {
        let mark = if i == g.chosen { '*' } else { ' ' };
        print!("{mark}{i:>7} {s:>10.4}");
        for (row, refs) in g.triad_scores.iter().zip(&g.references) {
            print!("  {:>8.4} {:>3}", row[i], refs[i]);
        }
        println!();
    }
    Ok(())
}

fn ablate_cmd(args: &AblateArgs) -> Result<(), CliError> {
    if args.overrides.variant.is_some() {
        return Err(CliError::Config("--variant does not apply to ablate".into()));
    }
    let (cfg, _) = args.overrides.resolve()?;
    let train_scenes = read_training_scenes(open(&args.train_scenes)?).map_err(|e| CliError::at(&args.train_scenes, e))?;
    let eval_scenes = read_eval_scenes(&args.eval_scenes)?;
    let table = load_table(&args.emb, &cfg)?;
    let report = ablate(&train_scenes, &eval_scenes, &table, &cfg, &Variant::ALL, &args.seeds, &args.weights.weights())?;
    println!("{:<10} {:>8}  per seed", "variant", "mean");
    for v in Variant::ALL {
        let per: Vec<String> = report
            .rows
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| format!("{:.4}", r.accuracy))
            .collect();
        println!("{:<10} {:>8.4}  {}", v.label(), report.mean(v).unwrap_or(f64::NAN), per.join(" "));
    }
    if let Some(path) = &args.out {
        write_atomic(path, |w| serde_json::to_writer_pretty(w, &report).map_err(|e| CliError::at(path, e)))?;
    }
    Ok(())
}

fn gradcheck(seed: u64, h: f64, tolerance: f64) -> Result<(), CliError> {
    let positive = |v: f64| v > 0.0;
    if !positive(h) || !positive(tolerance) {
        return Err(CliError::Config("h and tolerance must be positive".into()));
    }
    let mut worst: f64 = 0.0;
    for mode in [Mode::Soft, Mode::Hard] {
        let r = full_path_gradcheck(seed, mode, h)?;
        println!(
            "{mode:?}: max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
            r.max_relative_error, r.checked, r.skipped_kinks
        );
        worst = worst.max(r.max_relative_error);
    }
    if worst < tolerance {
        println!("max relative error {worst:.3e} < {tolerance:e}");
        Ok(())
    } else {
        Err(CliError::Invariant(format!("max relative error {worst:.3e} exceeds {tolerance:e}")))
    }
}
