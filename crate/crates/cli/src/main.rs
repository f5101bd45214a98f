//! Command-line interface: corpus generation, training, embedding export,
//! task evaluation, and heatmap export.
//!
//! Exit codes: 0 success, 1 validation/configuration error, 2 I/O error.
//! All randomness hangs off `--seed`; outputs are byte-identical across
//! runs except the timestamp field in `resolved_config.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use trimodal_core::corpus::{generate_corpus, split_corpus, GenConfig, Triplet};
use trimodal_core::encoders::{FusionMode, ModelConfig};
use trimodal_core::error::{Error, Result};
use trimodal_core::fusion::Modality;
use trimodal_core::manifest::{read_corpus_dir, write_corpus_dir};
use trimodal_core::model::Model;
use trimodal_core::tasks::{
    self, build_asd_manifest, build_retrieval_manifest, build_spot_manifest, AsdGroup, Direction,
    SpotItem, SpotRule, TaskEmbeddings, DEFAULT_RECALL_KS, SPOT_DELTA,
};
use trimodal_core::trainer::{
    load_checkpoint, save_checkpoint, train, write_metrics_jsonl, Checkpoint, TrainConfig,
};

fn default_ratios() -> (f64, f64, f64) {
    (0.8, 0.1, 0.1)
}
fn default_gallery() -> usize {
    500
}
fn default_asd_speakers() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitConfig {
    #[serde(default = "default_ratios")]
    ratios: (f64, f64, f64),
    #[serde(default)]
    speaker_disjoint_test: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfig {
    #[serde(default = "default_gallery")]
    ret_gallery: usize,
    #[serde(default = "default_asd_speakers")]
    asd_speakers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

/// The one config file: generation, model, training, split, and benchmark
/// sections, each optional with full defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    gen: GenConfig,
    model: ModelConfig,
    train: TrainConfig,
    split: SplitConfig,
    bench: BenchConfig,
}

#[derive(Parser)]
#[command(name = "trimodal", version, about = "Tri-modal gesture/speech/text embedding toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus, splits, and benchmark manifests.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a generated corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        drop_prob: Option<f64>,
        /// concat | avg | pairwise-text | pairwise-audio
        #[arg(long)]
        fusion: Option<String>,
    },
    /// Export per-clip embedding tensors for every clip in a corpus.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// text | audio | both
        #[arg(long, default_value = "both")]
        modality: String,
    },
    /// Evaluate a task (ret | spot | asd) against a benchmark manifest.
    Eval {
        #[arg(long)]
        task: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// text | audio | both; for ret the manifest header is the default
        #[arg(long)]
        modality: Option<String>,
        /// Directory of precomputed per-clip embeddings (from `embed`).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Export the word-vs-frame similarity heatmap for one clip.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "both")]
        modality: String,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn write_resolved_config(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = serde_json::json!({
        "command": command,
        "timestamp_unix_s": now,
        "config": cfg,
    });
    fs::write(
        dir.join("resolved_config.json"),
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(())
}

fn parse_modality(s: &str) -> Result<Modality> {
    s.parse()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { config, out, seed } => cmd_gen(config, out, seed),
        Cmd::Train {
            config,
            corpus,
            out,
            seed,
            beta,
            drop_prob,
            fusion,
        } => cmd_train(config, corpus, out, seed, beta, drop_prob, fusion),
        Cmd::Embed {
            checkpoint,
            corpus,
            out,
            modality,
        } => cmd_embed(checkpoint, corpus, out, modality),
        Cmd::Eval {
            task,
            checkpoint,
            corpus,
            manifest,
            out,
            modality,
            embeddings,
        } => cmd_eval(task, checkpoint, corpus, manifest, out, modality, embeddings),
        Cmd::Heatmap {
            checkpoint,
            corpus,
            id,
            out,
            modality,
        } => cmd_heatmap(checkpoint, corpus, id, out, modality),
    }
}

#[derive(Serialize, Deserialize)]
struct Splits {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

fn cmd_gen(config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.gen.seed = s;
    }
    let corpus = generate_corpus(&cfg.gen)?;
    let (train_ids, val_ids, test_ids) = split_corpus(
        &corpus,
        cfg.split.ratios,
        cfg.gen.seed,
        cfg.split.speaker_disjoint_test,
    )?;

    fs::create_dir_all(&out)?;
    write_corpus_dir(&out, &corpus)?;
    fs::write(
        out.join("splits.json"),
        serde_json::to_string_pretty(&Splits {
            train: train_ids,
            val: val_ids,
            test: test_ids.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?,
    )?;

    let bench_dir = out.join("bench");
    fs::create_dir_all(&bench_dir)?;
    let gallery: Vec<String> = test_ids.iter().take(cfg.bench.ret_gallery).cloned().collect();
    let ret = build_retrieval_manifest(&gallery, Direction::ContentToGesture, Modality::Both);
    tasks::write_retrieval_manifest(&bench_dir.join("ret.jsonl"), &ret)?;
    let spots = build_spot_manifest(&corpus, &test_ids, cfg.gen.seed);
    tasks::write_jsonl(&bench_dir.join("spot.jsonl"), &spots)?;
    let groups = build_asd_manifest(&corpus, &test_ids, cfg.bench.asd_speakers, cfg.gen.seed)?;
    tasks::write_jsonl(&bench_dir.join("asd.jsonl"), &groups)?;

    write_resolved_config(&out, "gen", &cfg)?;
    println!(
        "generated {} clips ({} gallery / {} spot items / {} asd groups) in {}",
        corpus.len(),
        ret.gallery.len(),
        spots.len(),
        groups.len(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<PathBuf>,
    corpus_dir: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    beta: Option<f64>,
    drop_prob: Option<f64>,
    fusion: Option<String>,
) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(b) = beta {
        cfg.model.beta = b;
    }
    if let Some(d) = drop_prob {
        cfg.train.drop_prob = d;
        cfg.model.drop_prob = d;
    }
    if let Some(f) = fusion {
        cfg.model.fusion = f.parse::<FusionMode>()?;
    }

    let corpus = read_corpus_dir(&corpus_dir)?;
    let splits: Splits = serde_json::from_str(&fs::read_to_string(corpus_dir.join("splits.json"))?)
        .map_err(|e| Error::Config(format!("bad splits.json: {e}")))?;
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let pick = |ids: &[String]| -> Vec<Triplet> {
        ids.iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|t| (*t).clone()))
            .collect()
    };
    let train_set = pick(&splits.train);
    let val_set = pick(&splits.val);

    let mut model = Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    let output = train(&mut model, &train_set, &val_set, &cfg.train)?;

    fs::create_dir_all(&out)?;
    let val_history: Vec<f64> = output
        .metrics
        .iter()
        .filter(|m| m.split == "val")
        .map(|m| m.total)
        .collect();
    let ckpt = Checkpoint::capture(
        &model,
        None,
        cfg.train.epochs,
        output.final_lr,
        val_history,
    )?;
    save_checkpoint(&out.join("model.jglc"), &ckpt)?;
    write_metrics_jsonl(&out.join("metrics.jsonl"), &output.metrics)?;
    write_resolved_config(&out, "train", &cfg)?;
    if let Some(epoch) = output.diverged_at_epoch {
        eprintln!("warning: training diverged at epoch {epoch}; checkpoint holds the last finite state");
    }
    println!("trained {} epochs -> {}", cfg.train.epochs, out.display());
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<Model<f32>> {
    load_checkpoint(checkpoint)?.into_model()
}

fn cmd_embed(checkpoint: PathBuf, corpus_dir: PathBuf, out: PathBuf, modality: String) -> Result<()> {
    let modality = parse_modality(&modality)?;
    let model = load_model(&checkpoint)?;
    let corpus = read_corpus_dir(&corpus_dir)?;
    fs::create_dir_all(&out)?;
    for t in &corpus {
        let set = model.embed_sample(t, modality, false)?;
        tasks::write_clip_embeddings(&out, &t.id, &TaskEmbeddings::from_set(&set))?;
    }
    println!("embedded {} clips -> {}", corpus.len(), out.display());
    Ok(())
}

fn gather_embeddings(
    model: Option<&Model<f32>>,
    corpus: &[Triplet],
    ids: &[String],
    modality: Modality,
    precomputed: &Option<PathBuf>,
) -> Result<BTreeMap<String, TaskEmbeddings>> {
    match precomputed {
        Some(dir) => {
            let mut out = BTreeMap::new();
            for id in ids {
                out.insert(id.clone(), tasks::read_clip_embeddings(dir, id)?);
            }
            Ok(out)
        }
        None => {
            let model = model.expect("model required without --embeddings");
            tasks::compute_embeddings(model, corpus, ids, modality)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    task: String,
    checkpoint: PathBuf,
    corpus_dir: PathBuf,
    manifest: PathBuf,
    out: Option<PathBuf>,
    modality: Option<String>,
    embeddings: Option<PathBuf>,
) -> Result<()> {
    let corpus = read_corpus_dir(&corpus_dir)?;
    let model = if embeddings.is_none() {
        Some(load_model(&checkpoint)?)
    } else {
        None
    };
    let report = match task.as_str() {
        "ret" => {
            let m = tasks::read_retrieval_manifest(&manifest)?;
            let modality = match modality {
                Some(s) => parse_modality(&s)?,
                None => m.modality,
            };
            let embs = gather_embeddings(model.as_ref(), &corpus, &m.gallery, modality, &embeddings)?;
            tasks::eval_retrieval(&embs, &m, &DEFAULT_RECALL_KS)?
        }
        "spot" => {
            let items: Vec<SpotItem> = tasks::read_jsonl(&manifest)?;
            let modality = match modality {
                Some(s) => parse_modality(&s)?,
                None => Modality::Both,
            };
            let ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
            let embs = gather_embeddings(model.as_ref(), &corpus, &ids, modality, &embeddings)?;
            let pad = model.as_ref().map(|m| m.cfg.pad_frames).unwrap_or(10);
            tasks::eval_spotting(&embs, &items, pad, SPOT_DELTA, SpotRule::PaddedPeak)?
        }
        "asd" => {
            let groups: Vec<AsdGroup> = tasks::read_jsonl(&manifest)?;
            let modality = match modality {
                Some(s) => parse_modality(&s)?,
                None => Modality::Both,
            };
            let mut ids: Vec<String> = Vec::new();
            for g in &groups {
                if !ids.contains(&g.query_id) {
                    ids.push(g.query_id.clone());
                }
                for c in &g.candidate_ids {
                    if !ids.contains(c) {
                        ids.push(c.clone());
                    }
                }
            }
            let embs = gather_embeddings(model.as_ref(), &corpus, &ids, modality, &embeddings)?;
            tasks::eval_asd(&embs, &groups)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown task {other}, expected ret|spot|asd"
            )))
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_heatmap(
    checkpoint: PathBuf,
    corpus_dir: PathBuf,
    id: String,
    out: PathBuf,
    modality: String,
) -> Result<()> {
    let modality = parse_modality(&modality)?;
    let model = load_model(&checkpoint)?;
    let corpus = read_corpus_dir(&corpus_dir)?;
    let t = corpus
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::Validation(format!("clip {id} not found in corpus")))?;
    let set = model.embed_sample(t, modality, true)?;
    let embeddings = TaskEmbeddings::from_set(&set);
    let scores = tasks::heatmap_scores(&embeddings)?;
    let segments = trimodal_core::encoders::word_frame_segments(
        &t.transcript,
        t.gesture.fps,
        t.gesture.frames(),
    );
    let texts: Vec<String> = t.transcript.words.iter().map(|w| w.text.clone()).collect();
    fs::create_dir_all(&out)?;
    tasks::export_heatmap(&scores, &segments, &texts, &out.join(&id))?;
    println!("heatmap for {id} -> {}", out.display());
    Ok(())
}
