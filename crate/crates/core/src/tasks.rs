//! Downstream evaluations: cross-modal retrieval, gesture word spotting,
//! and active speaker detection, plus word-frame similarity heatmap export.
//!
//! All scoring normalizes embeddings to unit L2 immediately before the
//! cosine; ties break toward the lowest index everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::corpus::Triplet;
use crate::error::{Error, Result};
use crate::fusion::Modality;
use crate::model::{EmbeddingSet, Model};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{cosine, norm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ContentToGesture,
    GestureToContent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalManifest {
    pub direction: Direction,
    pub modality: Modality,
    pub gallery: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotItem {
    pub id: String,
    pub word_index: usize,
    pub gt_start_frame: usize,
    pub gt_end_frame: usize,
    pub stressed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsdGroup {
    pub query_id: String,
    pub candidate_ids: Vec<String>,
    pub true_index: usize,
}

/// Metric map plus per-item records, serialized pretty for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub items: Vec<serde_json::Value>,
}

impl TaskReport {
    fn new(task: &str) -> Self {
        TaskReport {
            task: task.to_string(),
            metrics: BTreeMap::new(),
            items: Vec::new(),
        }
    }

    pub fn write_pretty(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// The embeddings one clip contributes to the evaluators; exactly what the
/// per-clip embedding files store.
#[derive(Debug, Clone)]
pub struct TaskEmbeddings {
    pub g_t: Tensor<f32>,
    pub g_global: Vec<f32>,
    pub c_w: Tensor<f32>,
    pub c_global: Vec<f32>,
    pub g_w: Tensor<f32>,
}

impl TaskEmbeddings {
    pub fn from_set(set: &EmbeddingSet) -> Self {
        TaskEmbeddings {
            g_t: set.g_t.clone(),
            g_global: set.g_global.clone(),
            c_w: set.c_w.clone(),
            c_global: set.c_global.clone(),
            g_w: set.g_w.clone(),
        }
    }
}

pub const EMBED_TENSOR_NAMES: [&str; 5] = ["g_T", "g_global", "c_w", "c_global", "g_w"];

/// Write one clip's task embeddings as bare tensor files
/// `<dir>/<id>.<name>.jgl`.
pub fn write_clip_embeddings(dir: &Path, id: &str, e: &TaskEmbeddings) -> Result<()> {
    fs::create_dir_all(dir)?;
    let g_global = Tensor::from_vec(&[e.g_global.len()], e.g_global.clone());
    let c_global = Tensor::from_vec(&[e.c_global.len()], e.c_global.clone());
    let pairs: [(&str, &Tensor<f32>); 5] = [
        ("g_T", &e.g_t),
        ("g_global", &g_global),
        ("c_w", &e.c_w),
        ("c_global", &c_global),
        ("g_w", &e.g_w),
    ];
    for (name, tensor) in pairs {
        container::write_tensor(&dir.join(format!("{id}.{name}.jgl")), tensor)?;
    }
    Ok(())
}

pub fn read_clip_embeddings(dir: &Path, id: &str) -> Result<TaskEmbeddings> {
    let load = |name: &str| container::read_tensor(&dir.join(format!("{id}.{name}.jgl")));
    Ok(TaskEmbeddings {
        g_t: load("g_T")?,
        g_global: load("g_global")?.data,
        c_w: load("c_w")?,
        c_global: load("c_global")?.data,
        g_w: load("g_w")?,
    })
}

/// Embed every listed clip with the model.
pub fn compute_embeddings(
    model: &Model<f32>,
    corpus: &[Triplet],
    ids: &[String],
    modality: Modality,
) -> Result<BTreeMap<String, TaskEmbeddings>> {
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out = BTreeMap::new();
    for id in ids {
        let t = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("clip {id} not found in corpus")))?;
        let set = model.embed_sample(t, modality, false)?;
        out.insert(id.clone(), TaskEmbeddings::from_set(&set));
    }
    Ok(out)
}

/// Rank gallery vectors by cosine against the query, descending; ties break
/// toward the lower gallery index.
pub fn retrieve(query: &[f32], gallery: &[Vec<f32>]) -> Result<Vec<usize>> {
    if norm(query).to_f64() < 1e-8 {
        return Err(Error::NumericGuard("query vector has near-zero norm".into()));
    }
    let mut scored = Vec::with_capacity(gallery.len());
    for (i, g) in gallery.iter().enumerate() {
        scored.push((cosine(query, g)?, i));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// 1-based rank of the true item in a ranking.
pub fn rank_of(ranking: &[usize], true_index: usize) -> usize {
    ranking.iter().position(|&i| i == true_index).expect("true item in ranking") + 1
}

/// Recall@K for each K plus the (lower) median rank.
pub fn retrieval_metrics(true_ranks: &[usize], ks: &[usize]) -> TaskReport {
    assert!(!true_ranks.is_empty(), "retrieval_metrics needs >= 1 ranking");
    let n = true_ranks.len() as f64;
    let mut report = TaskReport::new("retrieval");
    for &k in ks {
        let hits = true_ranks.iter().filter(|&&r| r <= k).count() as f64;
        report.metrics.insert(format!("R@{k}"), hits / n);
    }
    let mut sorted = true_ranks.to_vec();
    sorted.sort_unstable();
    let mr = sorted[(sorted.len() - 1) / 2] as f64;
    report.metrics.insert("MR".into(), mr);
    report.metrics.insert("queries".into(), n);
    report
}

pub const DEFAULT_RECALL_KS: [usize; 4] = [5, 10, 25, 50];
pub const SPOT_DELTA: f32 = 0.5;

/// Per-frame cosine trace of one word embedding against the frame
/// embeddings, the frames at or above the threshold, and the peak frame
/// (lowest index on ties).
pub fn spot_word(
    g_t: &Tensor<f32>,
    c_w_i: &[f32],
    delta: f32,
) -> Result<(Vec<usize>, Vec<f32>, usize)> {
    if norm(c_w_i).to_f64() < 1e-8 {
        return Err(Error::NumericGuard("word embedding has near-zero norm".into()));
    }
    let mut trace = Vec::with_capacity(g_t.rows());
    for t in 0..g_t.rows() {
        trace.push(cosine(c_w_i, g_t.row(t))?);
    }
    let set: Vec<usize> = (0..trace.len()).filter(|&t| trace[t] >= delta).collect();
    let mut peak = 0usize;
    for t in 1..trace.len() {
        if trace[t] > trace[peak] {
            peak = t;
        }
    }
    Ok((set, trace, peak))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotRule {
    /// Hit when the predicted set is non-empty and the peak frame lies in
    /// the ground-truth interval padded by `pad` frames.
    PaddedPeak,
    /// Hit when IoU(predicted set, ground-truth interval) >= 0.5.
    Iou,
}

pub struct SpotPrediction {
    pub set: Vec<usize>,
    pub peak: usize,
}

fn spot_hit(item: &SpotItem, pred: &SpotPrediction, pad: usize, rule: SpotRule) -> bool {
    match rule {
        SpotRule::PaddedPeak => {
            !pred.set.is_empty()
                && pred.peak + pad >= item.gt_start_frame
                && pred.peak <= item.gt_end_frame + pad
        }
        SpotRule::Iou => {
            if pred.set.is_empty() {
                return false;
            }
            let gt: Vec<usize> = (item.gt_start_frame..=item.gt_end_frame).collect();
            let inter = pred.set.iter().filter(|t| gt.contains(t)).count();
            let union = pred.set.len() + gt.len() - inter;
            inter as f64 / union as f64 >= 0.5
        }
    }
}

/// Accuracy over spot items, with the stressed/unstressed split and its
/// relative difference.
pub fn spotting_accuracy(
    items: &[SpotItem],
    predictions: &[SpotPrediction],
    pad: usize,
    rule: SpotRule,
) -> TaskReport {
    assert_eq!(items.len(), predictions.len());
    let mut report = TaskReport::new("spotting");
    let mut correct = 0usize;
    let mut stressed = (0usize, 0usize); // (correct, total)
    let mut unstressed = (0usize, 0usize);
    for (item, pred) in items.iter().zip(predictions) {
        let hit = spot_hit(item, pred, pad, rule);
        correct += hit as usize;
        if item.stressed {
            stressed.0 += hit as usize;
            stressed.1 += 1;
        } else {
            unstressed.0 += hit as usize;
            unstressed.1 += 1;
        }
        report.items.push(serde_json::json!({
            "id": item.id,
            "word_index": item.word_index,
            "hit": hit,
            "peak": pred.peak,
            "detected_frames": pred.set.len(),
            "stressed": item.stressed,
        }));
    }
    let acc = correct as f64 / items.len().max(1) as f64;
    report.metrics.insert("accuracy".into(), acc);
    if stressed.1 > 0 {
        report
            .metrics
            .insert("accuracy_stressed".into(), stressed.0 as f64 / stressed.1 as f64);
    }
    if unstressed.1 > 0 {
        report
            .metrics
            .insert("accuracy_unstressed".into(), unstressed.0 as f64 / unstressed.1 as f64);
    }
    if stressed.1 > 0 && unstressed.1 > 0 && unstressed.0 > 0 {
        let ws = stressed.0 as f64 / stressed.1 as f64;
        let wo = unstressed.0 as f64 / unstressed.1 as f64;
        report
            .metrics
            .insert("stress_delta_pct".into(), (ws - wo) / wo * 100.0);
    }
    report.metrics.insert("items".into(), items.len() as f64);
    report
}

/// Index of the candidate whose gesture embedding best matches the query;
/// lowest index on exact ties.
pub fn detect_active_speaker(candidates: &[Vec<f32>], query: &[f32]) -> Result<usize> {
    if candidates.len() < 2 {
        return Err(Error::Validation("active speaker detection needs >= 2 candidates".into()));
    }
    let mut best = 0usize;
    let mut best_cos = cosine(query, &candidates[0])?;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let cs = cosine(query, c)?;
        if cs > best_cos {
            best_cos = cs;
            best = i;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// high-level evaluators over embedding maps

pub fn eval_retrieval(
    embeddings: &BTreeMap<String, TaskEmbeddings>,
    manifest: &RetrievalManifest,
    ks: &[usize],
) -> Result<TaskReport> {
    let mut gallery = Vec::with_capacity(manifest.gallery.len());
    let mut queries = Vec::with_capacity(manifest.gallery.len());
    for id in &manifest.gallery {
        let e = embeddings
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no embeddings for clip {id}")))?;
        match manifest.direction {
            Direction::ContentToGesture => {
                queries.push(e.c_global.clone());
                gallery.push(e.g_global.clone());
            }
            Direction::GestureToContent => {
                queries.push(e.g_global.clone());
                gallery.push(e.c_global.clone());
            }
        }
    }
    let mut ranks = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let ranking = retrieve(q, &gallery)?;
        ranks.push(rank_of(&ranking, i));
    }
    let mut report = retrieval_metrics(&ranks, ks);
    report.items = manifest
        .gallery
        .iter()
        .zip(&ranks)
        .map(|(id, r)| serde_json::json!({manifest_id_key(): id, "rank": r}))
        .collect();
    report.metrics.insert("gallery".into(), gallery.len() as f64);
    Ok(report)
}

fn manifest_id_key() -> &'static str {
    "id"
}

pub fn eval_spotting(
    embeddings: &BTreeMap<String, TaskEmbeddings>,
    items: &[SpotItem],
    pad: usize,
    delta: f32,
    rule: SpotRule,
) -> Result<TaskReport> {
    let mut predictions = Vec::with_capacity(items.len());
    for item in items {
        let e = embeddings
            .get(&item.id)
            .ok_or_else(|| Error::Validation(format!("no embeddings for clip {}", item.id)))?;
        if item.word_index >= e.c_w.rows() {
            return Err(Error::Validation(format!(
                "word index {} out of range for clip {}",
                item.word_index, item.id
            )));
        }
        let (set, _trace, peak) = spot_word(&e.g_t, e.c_w.row(item.word_index), delta)?;
        predictions.push(SpotPrediction { set, peak });
    }
    Ok(spotting_accuracy(items, &predictions, pad, rule))
}

pub fn eval_asd(
    embeddings: &BTreeMap<String, TaskEmbeddings>,
    groups: &[AsdGroup],
) -> Result<TaskReport> {
    let mut report = TaskReport::new("asd");
    let mut correct = 0usize;
    for g in groups {
        let query = &embeddings
            .get(&g.query_id)
            .ok_or_else(|| Error::Validation(format!("no embeddings for query {}", g.query_id)))?
            .c_global;
        let mut candidates = Vec::with_capacity(g.candidate_ids.len());
        for id in &g.candidate_ids {
            candidates.push(
                embeddings
                    .get(id)
                    .ok_or_else(|| Error::Validation(format!("no embeddings for candidate {id}")))?
                    .g_global
                    .clone(),
            );
        }
        let picked = detect_active_speaker(&candidates, query)?;
        let hit = picked == g.true_index;
        correct += hit as usize;
        report.items.push(serde_json::json!({
            "query": g.query_id,
            "picked": picked,
            "true_index": g.true_index,
            "hit": hit,
        }));
    }
    report
        .metrics
        .insert("accuracy".into(), correct as f64 / groups.len().max(1) as f64);
    report.metrics.insert("groups".into(), groups.len() as f64);
    if let Some(g) = groups.first() {
        report
            .metrics
            .insert("speakers".into(), g.candidate_ids.len() as f64);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// heatmap export

/// Writes `<base>.csv` (6-decimal fixed point), `<base>.pgm` (8-bit P5 with
/// scores mapped affinely from [-1,1] to [0,255]) and `<base>.json` listing
/// the word boundary columns.
pub fn export_heatmap(
    scores: &Tensor<f32>,
    word_boundaries: &[(usize, usize)],
    word_texts: &[String],
    base: &Path,
) -> Result<()> {
    scores.validate_finite("heatmap scores")?;
    let (w, t) = (scores.rows(), scores.cols());

    let mut csv = String::new();
    for i in 0..w {
        let row: Vec<String> = scores.row(i).iter().map(|v| format!("{v:.6}")).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(base.with_extension("csv"), csv)?;

    let mut pgm = Vec::with_capacity(32 + w * t);
    pgm.extend_from_slice(format!("P5\n{t} {w}\n255\n").as_bytes());
    for v in &scores.data {
        let p = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        pgm.push(p);
    }
    fs::write(base.with_extension("pgm"), pgm)?;

    let sidecar = serde_json::json!({
        "words": word_boundaries
            .iter()
            .zip(word_texts)
            .enumerate()
            .map(|(i, ((s, e), text))| serde_json::json!({
                "index": i,
                "text": text,
                "start_frame": s,
                "end_frame": e,
            }))
            .collect::<Vec<_>>(),
        "rows": w,
        "cols": t,
    });
    fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(())
}

/// Word-vs-frame cosine score matrix for one clip's embeddings.
pub fn heatmap_scores(e: &TaskEmbeddings) -> Result<Tensor<f32>> {
    let (w, t) = (e.c_w.rows(), e.g_t.rows());
    let mut scores = Tensor::zeros(&[w, t]);
    for i in 0..w {
        for j in 0..t {
            scores.row_mut(i)[j] = cosine(e.c_w.row(i), e.g_t.row(j))?;
        }
    }
    Ok(scores)
}

// ---------------------------------------------------------------------------
// benchmark manifest construction and JSONL round-trip

pub fn build_retrieval_manifest(
    ids: &[String],
    direction: Direction,
    modality: Modality,
) -> RetrievalManifest {
    RetrievalManifest {
        direction,
        modality,
        gallery: ids.to_vec(),
    }
}

/// Ids of clips with at least `min_plants` planted gestured words; benchmark
/// queries are curated for clips that actually carry gesture evidence, the
/// way the evaluation sets are described.
pub fn gesture_active_ids(corpus: &[Triplet], ids: &[String], min_plants: usize) -> Vec<String> {
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    ids.iter()
        .filter(|id| {
            by_id
                .get(id.as_str())
                .is_some_and(|t| t.plants.len() >= min_plants)
        })
        .cloned()
        .collect()
}

/// One spot item per clip that has at least one planted gestured word; the
/// target plant is chosen deterministically from the seed.
pub fn build_spot_manifest(corpus: &[Triplet], ids: &[String], seed: u64) -> Vec<SpotItem> {
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut items = Vec::new();
    for id in ids {
        let Some(t) = by_id.get(id.as_str()) else { continue };
        if t.plants.is_empty() {
            continue;
        }
        let mut rng = Rng::new(derive_seed(seed, &[0x5907, items.len() as u64]));
        let plant = &t.plants[rng.uniform_int(0, t.plants.len() as i64 - 1) as usize];
        items.push(SpotItem {
            id: id.clone(),
            word_index: plant.word_index,
            gt_start_frame: plant.frame_start,
            gt_end_frame: plant.frame_end,
            stressed: t.transcript.words[plant.word_index].stressed,
        });
    }
    items
}

/// Query each clip against `speakers - 1` distractor clips from other
/// speakers; the true candidate position is randomized per group.
pub fn build_asd_manifest(
    corpus: &[Triplet],
    ids: &[String],
    speakers: usize,
    seed: u64,
) -> Result<Vec<AsdGroup>> {
    if speakers < 2 {
        return Err(Error::Config("asd groups need at least 2 speakers".into()));
    }
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut groups = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        let Some(t) = by_id.get(id.as_str()) else { continue };
        let mut rng = Rng::new(derive_seed(seed, &[0xA5D, k as u64]));
        let mut others: Vec<&String> = ids
            .iter()
            .filter(|oid| {
                by_id
                    .get(oid.as_str())
                    .is_some_and(|o| o.speaker_id != t.speaker_id)
            })
            .collect();
        if others.len() < speakers - 1 {
            continue;
        }
        rng.shuffle(&mut others);
        // distinct speakers among distractors
        let mut seen = vec![t.speaker_id.clone()];
        let mut candidates: Vec<String> = Vec::new();
        for oid in others {
            let sp = &by_id[oid.as_str()].speaker_id;
            if !seen.contains(sp) {
                seen.push(sp.clone());
                candidates.push(oid.clone());
                if candidates.len() == speakers - 1 {
                    break;
                }
            }
        }
        if candidates.len() < speakers - 1 {
            continue;
        }
        let true_index = rng.uniform_int(0, speakers as i64 - 1) as usize;
        candidates.insert(true_index, id.clone());
        groups.push(AsdGroup {
            query_id: id.clone(),
            candidate_ids: candidates,
            true_index,
        });
    }
    Ok(groups)
}

pub fn write_retrieval_manifest(path: &Path, m: &RetrievalManifest) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "{}",
        serde_json::json!({"direction": m.direction, "modality": m.modality})
    )?;
    for id in &m.gallery {
        writeln!(out, "{}", serde_json::json!({ "id": id }))?;
    }
    Ok(())
}

pub fn read_retrieval_manifest(path: &Path) -> Result<RetrievalManifest> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty retrieval manifest".into(),
    })?;
    #[derive(Deserialize)]
    struct Header {
        direction: Direction,
        modality: Modality,
    }
    let header: Header = serde_json::from_str(&header?).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    #[derive(Deserialize)]
    struct IdLine {
        id: String,
    }
    let mut gallery = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let id: IdLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        gallery.push(id.id);
    }
    if gallery.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "retrieval manifest has no gallery entries".into(),
        });
    }
    Ok(RetrievalManifest {
        direction: header.direction,
        modality: header.modality,
        gallery,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_ranks_first() {
        let query = vec![1.0f32, 0.0, 0.0];
        let gallery = vec![
            vec![0.0f32, 1.0, 0.0],
            vec![1.0f32, 0.0, 0.0],
            vec![0.0f32, 0.0, 1.0],
        ];
        let ranking = retrieve(&query, &gallery).unwrap();
        assert_eq!(ranking[0], 1);
        assert_eq!(rank_of(&ranking, 1), 1);
    }

    #[test]
    fn duplicate_gallery_breaks_ties_low() {
        let query = vec![0.5f32, 0.5];
        let gallery = vec![query.clone(), query.clone(), query.clone()];
        let ranking = retrieve(&query, &gallery).unwrap();
        assert_eq!(ranking, vec![0, 1, 2]);
        assert_eq!(rank_of(&ranking, 0), 1);
    }

    #[test]
    fn zero_query_guarded() {
        let gallery = vec![vec![1.0f32, 0.0]];
        assert!(matches!(
            retrieve(&[0.0, 0.0], &gallery),
            Err(Error::NumericGuard(_))
        ));
    }

    #[test]
    fn metrics_perfect_and_lower_median() {
        let perfect = retrieval_metrics(&[1, 1, 1], &DEFAULT_RECALL_KS);
        assert_eq!(perfect.metrics["R@5"], 1.0);
        assert_eq!(perfect.metrics["MR"], 1.0);

        let two = retrieval_metrics(&[1, 3], &DEFAULT_RECALL_KS);
        assert_eq!(two.metrics["MR"], 1.0, "lower median of {{1,3}}");
        assert_eq!(two.metrics["R@5"], 1.0);
    }

    #[test]
    fn recall_monotone_in_k() {
        let mut rng = Rng::new(3);
        let ranks: Vec<usize> = (0..200).map(|_| rng.uniform_int(1, 500) as usize).collect();
        let r = retrieval_metrics(&ranks, &[5, 10, 25, 50, 100, 250, 500]);
        let keys = [5, 10, 25, 50, 100, 250, 500];
        for w in keys.windows(2) {
            assert!(r.metrics[&format!("R@{}", w[0])] <= r.metrics[&format!("R@{}", w[1])]);
        }
        assert_eq!(r.metrics["R@500"], 1.0);
    }

    #[test]
    fn spot_word_exact_interval() {
        // word embedding matches frames 10..=14 exactly, orthogonal elsewhere
        let d = 4;
        let t = 20;
        let mut g_t = Tensor::zeros(&[t, d]);
        for f in 0..t {
            if (10..=14).contains(&f) {
                g_t.row_mut(f)[0] = 1.0;
            } else {
                g_t.row_mut(f)[1] = 1.0;
            }
        }
        let c = vec![1.0f32, 0.0, 0.0, 0.0];
        let (set, trace, peak) = spot_word(&g_t, &c, SPOT_DELTA).unwrap();
        assert_eq!(set, vec![10, 11, 12, 13, 14]);
        assert_eq!(peak, 10, "lowest-index tie-break on the plateau");
        assert_eq!(trace.len(), t);
    }

    #[test]
    fn all_below_threshold_is_a_miss() {
        let g_t = Tensor::from_vec(&[3, 2], vec![0.0f32, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let c = vec![1.0f32, 0.1];
        let (set, _, peak) = spot_word(&g_t, &c, 0.5).unwrap();
        assert!(set.is_empty());
        let item = SpotItem {
            id: "x".into(),
            word_index: 0,
            gt_start_frame: 0,
            gt_end_frame: 2,
            stressed: false,
        };
        let report = spotting_accuracy(
            &[item],
            &[SpotPrediction { set, peak }],
            10,
            SpotRule::PaddedPeak,
        );
        assert_eq!(report.metrics["accuracy"], 0.0);
    }

    #[test]
    fn predicted_set_shrinks_as_delta_rises() {
        let mut rng = Rng::new(8);
        let g_t = Tensor::from_vec(&[30, 6], (0..180).map(|_| rng.normal() as f32).collect());
        let c: Vec<f32> = (0..6).map(|_| rng.normal() as f32).collect();
        let mut last = usize::MAX;
        for delta in [-1.0f32, -0.5, 0.0, 0.3, 0.6, 0.9] {
            let (set, _, _) = spot_word(&g_t, &c, delta).unwrap();
            assert!(set.len() <= last);
            last = set.len();
        }
    }

    #[test]
    fn stress_split_delta_matches_reported_ratio() {
        // 54% with stress vs 38.75% without gives a 39.4% relative gap
        let mut items = Vec::new();
        let mut preds = Vec::new();
        let mut push = |stressed: bool, hit: bool, idx: usize| {
            items.push(SpotItem {
                id: format!("c{idx}"),
                word_index: 0,
                gt_start_frame: 5,
                gt_end_frame: 10,
                stressed,
            });
            preds.push(SpotPrediction {
                set: if hit { vec![7] } else { vec![] },
                peak: 7,
            });
        };
        let mut idx = 0;
        for i in 0..100 {
            push(true, i < 54, idx);
            idx += 1;
        }
        for i in 0..400 {
            push(false, i < 155, idx);
            idx += 1;
        }
        let report = spotting_accuracy(&items, &preds, 0, SpotRule::PaddedPeak);
        assert!((report.metrics["accuracy_stressed"] - 0.54).abs() < 1e-12);
        assert!((report.metrics["accuracy_unstressed"] - 0.3875).abs() < 1e-12);
        let delta = report.metrics["stress_delta_pct"];
        assert!((delta - 39.4).abs() < 0.06, "delta {delta}");
    }

    #[test]
    fn iou_rule_accepts_half_overlap() {
        let item = SpotItem {
            id: "x".into(),
            word_index: 0,
            gt_start_frame: 10,
            gt_end_frame: 19,
            stressed: false,
        };
        let hit = SpotPrediction {
            set: (10..=19).collect(),
            peak: 12,
        };
        let partial = SpotPrediction {
            set: (15..=30).collect(),
            peak: 16,
        };
        assert!(spot_hit(&item, &hit, 0, SpotRule::Iou));
        assert!(!spot_hit(&item, &partial, 0, SpotRule::Iou));
    }

    #[test]
    fn asd_picks_highest_cosine() {
        let query = vec![1.0f32, 0.0];
        let candidates = vec![vec![0.9f32, 0.4358899], vec![0.1f32, 0.99498743]];
        assert_eq!(detect_active_speaker(&candidates, &query).unwrap(), 0);
    }

    #[test]
    fn asd_scale_invariance_and_dominated_append() {
        let mut rng = Rng::new(5);
        let query: Vec<f32> = (0..6).map(|_| rng.normal() as f32).collect();
        let candidates: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..6).map(|_| rng.normal() as f32).collect())
            .collect();
        let base = detect_active_speaker(&candidates, &query).unwrap();

        let scaled: Vec<Vec<f32>> = candidates
            .iter()
            .map(|c| c.iter().map(|&v| v * 7.0).collect())
            .collect();
        assert_eq!(detect_active_speaker(&scaled, &query).unwrap(), base);

        // appending a strictly dominated candidate cannot change the pick
        let mut extended = candidates.clone();
        let worst: Vec<f32> = query.iter().map(|&v| -v).collect();
        extended.push(worst);
        assert_eq!(detect_active_speaker(&extended, &query).unwrap(), base);
    }

    #[test]
    fn heatmap_pixel_mapping_and_csv_round_trip() {
        let dir = std::env::temp_dir().join("trimodal-heatmap-test");
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("map");
        let scores = Tensor::from_vec(&[2, 3], vec![0.0f32, 1.0, -1.0, 0.25, -0.5, 0.75]);
        export_heatmap(
            &scores,
            &[(0, 1), (1, 2)],
            &["w000".into(), "w001".into()],
            &base,
        )
        .unwrap();

        let pgm = std::fs::read(base.with_extension("pgm")).unwrap();
        let header_end = pgm.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let pixels = &pgm[header_end..];
        assert_eq!(pixels[0], 128, "0.0 maps to mid-grey");
        assert_eq!(pixels[1], 255, "1.0 maps to white");
        assert_eq!(pixels[2], 0, "-1.0 maps to black");

        let csv = std::fs::read_to_string(base.with_extension("csv")).unwrap();
        for (i, line) in csv.lines().enumerate() {
            for (j, field) in line.split(',').enumerate() {
                let v: f32 = field.parse().unwrap();
                assert!((v - scores.row(i)[j]).abs() < 1e-6);
            }
        }

        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(sidecar["words"][1]["start_frame"], 1);
    }

    #[test]
    fn retrieval_supports_both_directions() {
        let mut embeddings = BTreeMap::new();
        // construct clips where gesture and content embeddings match only
        // for the same id
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            let mut g = vec![0.0f32; 3];
            g[i] = 1.0;
            embeddings.insert(
                id.to_string(),
                TaskEmbeddings {
                    g_t: Tensor::zeros(&[1, 3]),
                    g_global: g.clone(),
                    c_w: Tensor::zeros(&[1, 3]),
                    c_global: g,
                    g_w: Tensor::zeros(&[1, 3]),
                },
            );
        }
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        for direction in [Direction::ContentToGesture, Direction::GestureToContent] {
            let m = build_retrieval_manifest(&ids, direction, Modality::Both);
            let report = eval_retrieval(&embeddings, &m, &[5]).unwrap();
            assert_eq!(report.metrics["MR"], 1.0);
            assert_eq!(report.metrics["R@5"], 1.0);
        }
    }

    #[test]
    fn manifest_jsonl_round_trips() {
        let dir = std::env::temp_dir().join("trimodal-taskmanifest-test");
        std::fs::create_dir_all(&dir).unwrap();

        let ret = build_retrieval_manifest(
            &["a".into(), "b".into()],
            Direction::ContentToGesture,
            Modality::Both,
        );
        let p = dir.join("ret.jsonl");
        write_retrieval_manifest(&p, &ret).unwrap();
        let back = read_retrieval_manifest(&p).unwrap();
        assert_eq!(back.gallery, ret.gallery);
        assert_eq!(back.direction, ret.direction);

        let spots = vec![SpotItem {
            id: "a".into(),
            word_index: 2,
            gt_start_frame: 4,
            gt_end_frame: 9,
            stressed: true,
        }];
        let p = dir.join("spot.jsonl");
        write_jsonl(&p, &spots).unwrap();
        let back: Vec<SpotItem> = read_jsonl(&p).unwrap();
        assert_eq!(back[0].word_index, 2);
        assert!(back[0].stressed);

        let groups = vec![AsdGroup {
            query_id: "a".into(),
            candidate_ids: vec!["a".into(), "b".into()],
            true_index: 0,
        }];
        let p = dir.join("asd.jsonl");
        write_jsonl(&p, &groups).unwrap();
        let back: Vec<AsdGroup> = read_jsonl(&p).unwrap();
        assert_eq!(back[0].candidate_ids.len(), 2);
    }
}
