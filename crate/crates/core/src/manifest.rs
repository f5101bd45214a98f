//! Corpus manifests: one JSON object per clip, one `stats` trailer line.
//!
//! Feature tensors live in sibling `.jgl` files referenced by the manifest;
//! `write_corpus_dir` / `read_corpus_dir` handle the full layout
//! `<dir>/{manifest.jsonl, tensors/<id>.{ges,spe}.jgl}`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::corpus::{GestureTrack, Plant, SpeechTrack, Transcript, Triplet, WordToken};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub id: String,
    pub speaker: String,
    pub gesture_file: String,
    pub speech_file: String,
    pub fps: f64,
    pub hop_ms: f64,
    pub duration_s: f64,
    pub words: Vec<WordToken>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plants: Vec<Plant>,
}

/// Per-split statistics in the shape of the benchmark table: total hours,
/// distinct speakers, average clip duration, clip count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub clips: usize,
    pub hours: f64,
    pub speakers: usize,
    pub avg_duration_s: f64,
}

#[derive(Serialize, Deserialize)]
struct StatsLine {
    stats: CorpusStats,
}

pub fn corpus_stats(corpus: &[Triplet]) -> CorpusStats {
    let total_s: f64 = corpus.iter().map(|t| t.duration_s()).sum();
    let speakers: HashSet<&str> = corpus.iter().map(|t| t.speaker_id.as_str()).collect();
    CorpusStats {
        clips: corpus.len(),
        hours: total_s / 3600.0,
        speakers: speakers.len(),
        avg_duration_s: if corpus.is_empty() {
            0.0
        } else {
            total_s / corpus.len() as f64
        },
    }
}

fn meta_of(t: &Triplet) -> ClipMeta {
    ClipMeta {
        id: t.id.clone(),
        speaker: t.speaker_id.clone(),
        gesture_file: format!("tensors/{}.ges.jgl", t.id),
        speech_file: format!("tensors/{}.spe.jgl", t.id),
        fps: t.gesture.fps,
        hop_ms: t.speech.hop_ms,
        duration_s: t.duration_s(),
        words: t.transcript.words.clone(),
        plants: t.plants.clone(),
    }
}

pub fn write_manifest(path: &Path, corpus: &[Triplet]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Validation("refusing to write an empty manifest".into()));
    }
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for t in corpus {
        let line = serde_json::to_string(&meta_of(t))
            .map_err(|e| Error::Format(format!("manifest serialization failed: {e}")))?;
        writeln!(w, "{line}")?;
    }
    let stats = StatsLine {
        stats: corpus_stats(corpus),
    };
    writeln!(
        w,
        "{}",
        serde_json::to_string(&stats).map_err(|e| Error::Format(e.to_string()))?
    )?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<(Vec<ClipMeta>, Option<CorpusStats>)> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut clips = Vec::new();
    let mut stats = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line.contains("\"stats\"") {
            if let Ok(s) = serde_json::from_str::<StatsLine>(&line) {
                stats = Some(s.stats);
                continue;
            }
        }
        let meta: ClipMeta = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if meta.words.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("clip {} has an empty word list", meta.id),
            });
        }
        clips.push(meta);
    }
    if clips.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "manifest contains no clips".into(),
        });
    }
    Ok((clips, stats))
}

pub fn write_corpus_dir(dir: &Path, corpus: &[Triplet]) -> Result<()> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors)?;
    for t in corpus {
        container::write_tensor(&tensors.join(format!("{}.ges.jgl", t.id)), &t.gesture.features)?;
        container::write_tensor(&tensors.join(format!("{}.spe.jgl", t.id)), &t.speech.features)?;
    }
    write_manifest(&dir.join("manifest.jsonl"), corpus)
}

pub fn read_corpus_dir(dir: &Path) -> Result<Vec<Triplet>> {
    let (metas, _) = read_manifest(&dir.join("manifest.jsonl"))?;
    let mut out = Vec::with_capacity(metas.len());
    for m in metas {
        let gesture = container::read_tensor(&dir.join(&m.gesture_file))?;
        let speech = container::read_tensor(&dir.join(&m.speech_file))?;
        let t = Triplet {
            id: m.id,
            gesture: GestureTrack {
                features: gesture,
                fps: m.fps,
            },
            speech: SpeechTrack {
                features: speech,
                hop_ms: m.hop_ms,
            },
            transcript: Transcript { words: m.words },
            speaker_id: m.speaker,
            plants: m.plants,
        };
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}
