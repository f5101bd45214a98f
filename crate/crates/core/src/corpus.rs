//! Synthetic tri-modal corpus generation.
//!
//! Each clip is a triplet of gesture frame features, speech features, and a
//! word-aligned transcript. Ground truth is planted: every vocabulary word
//! owns a gesture motif vector and a speech spectral signature. Gestured
//! words add their motif into the gesture feature stream over a window
//! shifted by a random offset from the spoken interval; every word stamps
//! its signature into the speech features, and stressed words amplify their
//! speech interval. The offsets are what make the word-level alignment
//! layer earn its keep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// One spoken word with timing and synthetic ground-truth flags.
///
/// `stressed` and `gestured` are generator ground truth; training never
/// reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub subword_count: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub stressed: bool,
    pub gestured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub words: Vec<WordToken>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn validate(&self, duration_s: f64) -> Result<()> {
        if self.words.is_empty() {
            return Err(Error::Validation("transcript must contain at least one word".into()));
        }
        let mut prev_end = 0.0f64;
        for (i, w) in self.words.iter().enumerate() {
            if w.subword_count == 0 {
                return Err(Error::Validation(format!("word {i} has zero sub-words")));
            }
            if !(w.start_s >= 0.0 && w.end_s > w.start_s) {
                return Err(Error::Validation(format!(
                    "word {i} has invalid interval [{}, {}]",
                    w.start_s, w.end_s
                )));
            }
            if w.start_s + 1e-9 < prev_end {
                return Err(Error::Validation(format!("word {i} overlaps its predecessor")));
            }
            if w.end_s > duration_s + 1e-6 {
                return Err(Error::Validation(format!(
                    "word {i} ends at {} beyond clip duration {duration_s}",
                    w.end_s
                )));
            }
            prev_end = w.end_s;
        }
        Ok(())
    }
}

/// Frame-level gesture features (stand-in for a vision backbone output).
#[derive(Debug, Clone, PartialEq)]
pub struct GestureTrack {
    /// [T, d_v]
    pub features: Tensor<f32>,
    pub fps: f64,
}

impl GestureTrack {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.fps
    }
}

/// Mel-rate speech features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechTrack {
    /// [T', d_mel]
    pub features: Tensor<f32>,
    pub hop_ms: f64,
}

impl SpeechTrack {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Ground-truth record of where a word's gesture motif was injected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub word_index: usize,
    pub frame_start: usize,
    pub frame_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub id: String,
    pub gesture: GestureTrack,
    pub speech: SpeechTrack,
    pub transcript: Transcript,
    pub speaker_id: String,
    /// Synthetic ground truth for evaluation only.
    pub plants: Vec<Plant>,
}

impl Triplet {
    pub fn duration_s(&self) -> f64 {
        self.gesture.duration_s()
    }

    pub fn validate(&self) -> Result<()> {
        self.gesture.features.validate_finite("gesture features")?;
        self.speech.features.validate_finite("speech features")?;
        if self.gesture.frames() == 0 {
            return Err(Error::Validation("gesture track has no frames".into()));
        }
        self.transcript.validate(self.duration_s())
    }
}

/// Inclusive video-frame interval for a spoken interval, clamped to the clip.
pub fn time_to_frames(start_s: f64, end_s: f64, fps: f64, frames: usize) -> (usize, usize) {
    let last = frames.saturating_sub(1);
    let s = (start_s * fps).floor() as i64;
    let e = (end_s * fps).ceil() as i64 - 1;
    let s = s.clamp(0, last as i64) as usize;
    let e = e.clamp(s as i64, last as i64) as usize;
    (s, e)
}

fn default_n_samples() -> usize { 1000 }
fn default_n_speakers() -> usize { 20 }
fn default_vocab_size() -> usize { 50 }
fn default_words_per_clip() -> (usize, usize) { (3, 6) }
fn default_gestured_fraction() -> f64 { 0.6 }
fn default_offset() -> (i64, i64) { (-10, 10) }
fn default_motif_dim() -> usize { 8 }
fn default_noise_sigma() -> f64 { 0.25 }
fn default_stress_fraction() -> f64 { 0.25 }
fn default_seed() -> u64 { 7 }
fn default_d_v() -> usize { 64 }
fn default_d_mel() -> usize { 80 }
fn default_fps() -> f64 { 25.0 }
fn default_hop_ms() -> f64 { 10.0 }
fn default_motif_gain() -> f64 { 1.0 }
fn default_speaker_sigma() -> f64 { 0.1 }
fn default_stress_gain() -> f64 { 1.0 }
fn default_speech_gain() -> f64 { 1.0 }
fn default_word_duration() -> (f64, f64) { (0.24, 0.6) }
fn default_gap_duration() -> (f64, f64) { (0.04, 0.16) }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_n_speakers")]
    pub n_speakers: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default = "default_words_per_clip")]
    pub words_per_clip: (usize, usize),
    #[serde(default = "default_gestured_fraction")]
    pub gestured_fraction: f64,
    /// Signed uniform range of frames between the spoken interval and the
    /// injected gesture window.
    #[serde(default = "default_offset")]
    pub gesture_offset_frames: (i64, i64),
    /// Number of gesture feature dimensions a motif occupies.
    #[serde(default = "default_motif_dim")]
    pub gesture_motif_dim: usize,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_stress_fraction")]
    pub stress_fraction: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_d_v")]
    pub d_v: usize,
    #[serde(default = "default_d_mel")]
    pub d_mel: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_hop_ms")]
    pub hop_ms: f64,
    #[serde(default = "default_motif_gain")]
    pub motif_gain: f64,
    /// Scale of the per-speaker perturbation added to each injected motif.
    #[serde(default = "default_speaker_sigma")]
    pub speaker_sigma: f64,
    /// Stressed words have their speech interval multiplied by (1 + gain).
    #[serde(default = "default_stress_gain")]
    pub stress_gain: f64,
    #[serde(default = "default_speech_gain")]
    pub speech_gain: f64,
    #[serde(default = "default_word_duration")]
    pub word_duration_s: (f64, f64),
    #[serde(default = "default_gap_duration")]
    pub gap_duration_s: (f64, f64),
    /// Fraction of the vocabulary sharing a surface form with another word
    /// (resolvable only through speech).
    #[serde(default)]
    pub text_collision_fraction: f64,
    /// Fraction sharing a speech signature (resolvable only through text).
    #[serde(default)]
    pub speech_collision_fraction: f64,
    /// Minimum mean-square gesture feature energy for a clip to be kept.
    /// Left at zero this filter is inert; it is a stand-in knob, not a
    /// faithful activity filter.
    #[serde(default)]
    pub min_energy: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.n_speakers == 0 {
            return Err(Error::Config("n_speakers must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if !(self.gestured_fraction > 0.0 && self.gestured_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "gestured_fraction must be in (0, 1], got {}",
                self.gestured_fraction
            )));
        }
        if self.words_per_clip.0 == 0 || self.words_per_clip.0 > self.words_per_clip.1 {
            return Err(Error::Config(format!(
                "words_per_clip range {:?} is empty",
                self.words_per_clip
            )));
        }
        if self.gesture_offset_frames.0 > self.gesture_offset_frames.1 {
            return Err(Error::Config("gesture_offset_frames range is empty".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if self.gesture_motif_dim == 0 || self.gesture_motif_dim > self.d_v {
            return Err(Error::Config(format!(
                "gesture_motif_dim {} must be in 1..=d_v ({})",
                self.gesture_motif_dim, self.d_v
            )));
        }
        if self.word_duration_s.0 <= 0.0 || self.word_duration_s.0 > self.word_duration_s.1 {
            return Err(Error::Config("word_duration_s range is empty".into()));
        }
        if self.gap_duration_s.0 < 0.0 || self.gap_duration_s.0 > self.gap_duration_s.1 {
            return Err(Error::Config("gap_duration_s range is empty".into()));
        }
        Ok(())
    }

    /// Mel frames per video frame; 4 at the 25 fps / 10 ms defaults.
    pub fn mel_per_video(&self) -> usize {
        let r = 1000.0 / (self.hop_ms * self.fps);
        r.round() as usize
    }
}

/// One vocabulary entry with its planted identities.
#[derive(Debug, Clone)]
pub struct VocabWord {
    pub surface: String,
    pub subword_count: usize,
    /// Unit-norm gesture motif, nonzero in `gesture_motif_dim` dimensions.
    pub motif: Vec<f32>,
    /// Unit-norm speech spectral signature.
    pub speech_sig: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub words: Vec<VocabWord>,
}

impl Vocabulary {
    pub fn build(cfg: &GenConfig) -> Vocabulary {
        let mut rng = Rng::new(derive_seed(cfg.seed, &[0x70CA8]));
        let n = cfg.vocab_size;
        let text_collided = ((cfg.text_collision_fraction * n as f64).round() as usize).min(n);
        let speech_collided =
            ((cfg.speech_collision_fraction * n as f64).round() as usize).min(n - text_collided);

        // raw sparse draws; orthonormalized below when the dimension allows,
        // which makes the cosine-argmax oracle exact even under overlaps
        let mut motifs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut motif = vec![0.0f64; cfg.d_v];
            let mut dims: Vec<usize> = (0..cfg.d_v).collect();
            rng.shuffle(&mut dims);
            for &d in dims.iter().take(cfg.gesture_motif_dim) {
                motif[d] = rng.normal();
            }
            motifs.push(motif);
        }
        if n <= cfg.d_v {
            gram_schmidt(&mut motifs, &mut rng);
        } else {
            for m in motifs.iter_mut() {
                normalize_f64(m);
            }
        }

        let mut words = Vec::with_capacity(n);
        for (m, motif) in motifs.into_iter().enumerate() {
            // text-collided words pair up on a shared surface form
            let surface_id = if m < text_collided { m - m % 2 } else { m };
            let surface = format!("w{surface_id:03}");
            let subword_count = 1 + surface_id % 3;

            let speech_seed = if (text_collided..text_collided + speech_collided).contains(&m) {
                let base = m - (m - text_collided) % 2;
                derive_seed(cfg.seed, &[0x5160, base as u64])
            } else {
                derive_seed(cfg.seed, &[0x5160, m as u64])
            };
            let mut sig_rng = Rng::new(speech_seed);
            let mut speech_sig: Vec<f32> =
                (0..cfg.d_mel).map(|_| sig_rng.normal() as f32).collect();
            normalize(&mut speech_sig);

            words.push(VocabWord {
                surface,
                subword_count,
                motif: motif.iter().map(|&v| v as f32).collect(),
                speech_sig,
            });
        }
        Vocabulary { words }
    }
}

fn normalize(v: &mut [f32]) {
    let n: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn normalize_f64(v: &mut [f64]) {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// In-place modified Gram-Schmidt; degenerate rows are redrawn densely.
fn gram_schmidt(rows: &mut [Vec<f64>], rng: &mut Rng) {
    let d = rows[0].len();
    for i in 0..rows.len() {
        loop {
            for j in 0..i {
                let prev = rows[j].clone();
                let dot: f64 = rows[i].iter().zip(&prev).map(|(a, b)| a * b).sum();
                for (a, b) in rows[i].iter_mut().zip(&prev) {
                    *a -= dot * b;
                }
            }
            let nrm: f64 = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-6 {
                for x in rows[i].iter_mut() {
                    *x /= nrm;
                }
                break;
            }
            for x in rows[i].iter_mut().take(d) {
                *x = rng.normal();
            }
        }
    }
}

/// Generate a corpus. Deterministic for a fixed config; each clip draws from
/// its own derived stream, so generation order is immaterial.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    let vocab = Vocabulary::build(cfg);
    let mut out = Vec::with_capacity(cfg.n_samples);
    for idx in 0..cfg.n_samples {
        let clip = generate_clip(cfg, &vocab, idx);
        if cfg.min_energy > 0.0 {
            let e: f64 = clip
                .gesture
                .features
                .data
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                / clip.gesture.features.numel() as f64;
            if e < cfg.min_energy {
                continue;
            }
        }
        out.push(clip);
    }
    Ok(out)
}

fn generate_clip(cfg: &GenConfig, vocab: &Vocabulary, idx: usize) -> Triplet {
    let mut rng = Rng::new(derive_seed(cfg.seed, &[0xC11F, idx as u64]));
    let speaker = rng.uniform_int(0, cfg.n_speakers as i64 - 1) as usize;
    let n_words = rng.uniform_int(cfg.words_per_clip.0 as i64, cfg.words_per_clip.1 as i64) as usize;

    // lay out word timings left to right
    let mut cursor = rng.uniform_range(cfg.gap_duration_s.0, cfg.gap_duration_s.1);
    let mut words = Vec::with_capacity(n_words);
    let mut meanings = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let m = rng.uniform_int(0, cfg.vocab_size as i64 - 1) as usize;
        let dur = rng.uniform_range(cfg.word_duration_s.0, cfg.word_duration_s.1);
        let start = cursor;
        let end = cursor + dur;
        cursor = end + rng.uniform_range(cfg.gap_duration_s.0, cfg.gap_duration_s.1);
        let vw = &vocab.words[m];
        words.push(WordToken {
            text: vw.surface.clone(),
            subword_count: vw.subword_count,
            start_s: start,
            end_s: end,
            stressed: rng.bernoulli(cfg.stress_fraction),
            gestured: rng.bernoulli(cfg.gestured_fraction),
        });
        meanings.push(m);
    }
    let duration = cursor;
    let t_frames = (duration * cfg.fps).ceil() as usize;
    let mel_per = cfg.mel_per_video();
    let t_mel = t_frames * mel_per;

    // gesture features: background noise plus motifs over shifted windows
    let mut gesture = Tensor::zeros(&[t_frames, cfg.d_v]);
    for v in gesture.data.iter_mut() {
        *v = (rng.normal() * cfg.noise_sigma) as f32;
    }
    let mut plants = Vec::new();
    for (i, w) in words.iter().enumerate() {
        if !w.gestured {
            continue;
        }
        let (s, e) = time_to_frames(w.start_s, w.end_s, cfg.fps, t_frames);
        let off = rng.uniform_int(cfg.gesture_offset_frames.0, cfg.gesture_offset_frames.1);
        let last = t_frames as i64 - 1;
        let lo = (s as i64 + off).clamp(0, last) as usize;
        let hi = (e as i64 + off).clamp(lo as i64, last) as usize;
        let m = meanings[i];
        let mut delta = vec![0.0f32; cfg.d_v];
        if cfg.speaker_sigma > 0.0 {
            let mut srng = Rng::new(derive_seed(cfg.seed, &[0x5EAC, speaker as u64, m as u64]));
            for d in delta.iter_mut() {
                *d = (srng.normal() * cfg.speaker_sigma) as f32;
            }
        }
        let motif = &vocab.words[m].motif;
        for f in lo..=hi {
            let row = gesture.row_mut(f);
            for d in 0..cfg.d_v {
                row[d] += cfg.motif_gain as f32 * motif[d] + delta[d];
            }
        }
        plants.push(Plant {
            word_index: i,
            frame_start: lo,
            frame_end: hi,
        });
    }

    // speech features: noise, per-word spectral signatures, stress boost
    let mut speech = Tensor::zeros(&[t_mel, cfg.d_mel]);
    for v in speech.data.iter_mut() {
        *v = (rng.normal() * cfg.noise_sigma) as f32;
    }
    let mel_rate = cfg.fps * mel_per as f64;
    for (i, w) in words.iter().enumerate() {
        let (s, e) = time_to_frames(w.start_s, w.end_s, mel_rate, t_mel);
        let sig = &vocab.words[meanings[i]].speech_sig;
        let boost = if w.stressed {
            (1.0 + cfg.stress_gain) as f32
        } else {
            1.0
        };
        for f in s..=e {
            let row = speech.row_mut(f);
            for d in 0..cfg.d_mel {
                row[d] = (row[d] + cfg.speech_gain as f32 * sig[d]) * boost;
            }
        }
    }

    Triplet {
        id: format!("clip_{idx:06}"),
        gesture: GestureTrack {
            features: gesture,
            fps: cfg.fps,
        },
        speech: SpeechTrack {
            features: speech,
            hop_ms: cfg.hop_ms,
        },
        transcript: Transcript { words },
        speaker_id: format!("spk{speaker:03}"),
        plants,
    }
}

/// Split a corpus into train/val/test id sets.
pub fn split_corpus(
    corpus: &[Triplet],
    ratios: (f64, f64, f64),
    seed: u64,
    speaker_disjoint_test: bool,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
    }
    if ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::Config("split ratios must be non-negative".into()));
    }
    let n = corpus.len();
    let n_train = (ratios.0 * n as f64).round() as usize;
    let n_val = (ratios.1 * n as f64).round() as usize;
    let n_val = n_val.min(n - n_train.min(n));
    let n_test = n - n_train.min(n) - n_val;

    let mut rng = Rng::new(derive_seed(seed, &[0x5137]));
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();

    if speaker_disjoint_test {
        let mut speakers: Vec<String> = Vec::new();
        for t in corpus {
            if !speakers.contains(&t.speaker_id) {
                speakers.push(t.speaker_id.clone());
            }
        }
        rng.shuffle(&mut speakers);
        let mut test_speakers = Vec::new();
        let mut count = 0usize;
        for s in &speakers {
            if count >= n_test {
                break;
            }
            count += corpus.iter().filter(|t| &t.speaker_id == s).count();
            test_speakers.push(s.clone());
        }
        let mut rest: Vec<&Triplet> = corpus
            .iter()
            .filter(|t| !test_speakers.contains(&t.speaker_id))
            .collect();
        test = corpus
            .iter()
            .filter(|t| test_speakers.contains(&t.speaker_id))
            .map(|t| t.id.clone())
            .collect();
        rng.shuffle(&mut rest);
        for (i, t) in rest.iter().enumerate() {
            if i < n_train.min(rest.len()) {
                train.push(t.id.clone());
            } else {
                val.push(t.id.clone());
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        for (k, &i) in order.iter().enumerate() {
            let id = corpus[i].id.clone();
            if k < n_train {
                train.push(id);
            } else if k < n_train + n_val {
                val.push(id);
            } else {
                test.push(id);
            }
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine;

    fn small_cfg() -> GenConfig {
        GenConfig {
            n_samples: 20,
            vocab_size: 12,
            d_v: 16,
            d_mel: 20,
            gesture_motif_dim: 4,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_generation() {
        let cfg = small_cfg();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_limit_contains_exact_motif() {
        let cfg = GenConfig {
            gestured_fraction: 1.0,
            noise_sigma: 0.0,
            speaker_sigma: 0.0,
            ..small_cfg()
        };
        let vocab = Vocabulary::build(&cfg);
        let corpus = generate_corpus(&cfg).unwrap();
        for clip in &corpus {
            for plant in &clip.plants {
                let w = &clip.transcript.words[plant.word_index];
                let m = vocab
                    .words
                    .iter()
                    .position(|v| v.surface == w.text)
                    .unwrap();
                let motif = &vocab.words[m].motif;
                for f in plant.frame_start..=plant.frame_end {
                    let row = clip.gesture.features.row(f);
                    // additive injection on zero background: rows may hold a
                    // sum of motifs when shifted windows overlap, so check
                    // only frames covered by this plant alone
                    let overlaps = clip
                        .plants
                        .iter()
                        .filter(|p| p.frame_start <= f && f <= p.frame_end)
                        .count();
                    if overlaps == 1 {
                        for d in 0..cfg.d_v {
                            assert_eq!(row[d], cfg.motif_gain as f32 * motif[d]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn motif_recoverable_by_cosine_argmax_when_noiseless() {
        let cfg = GenConfig {
            gestured_fraction: 1.0,
            noise_sigma: 0.0,
            speaker_sigma: 0.0,
            n_samples: 40,
            ..small_cfg()
        };
        let vocab = Vocabulary::build(&cfg);
        let corpus = generate_corpus(&cfg).unwrap();
        let mut checked = 0;
        for clip in &corpus {
            for plant in &clip.plants {
                let w = &clip.transcript.words[plant.word_index];
                let m = vocab.words.iter().position(|v| v.surface == w.text).unwrap();
                let motif: Vec<f32> = vocab.words[m].motif.clone();
                let mut best = (f32::MIN, 0usize);
                for f in 0..clip.gesture.frames() {
                    let row = clip.gesture.features.row(f);
                    if row.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let c = cosine(row, &motif).unwrap();
                    if c > best.0 {
                        best = (c, f);
                    }
                }
                // a repeated word plants the same motif twice, so the argmax
                // may land in any occurrence of the same surface form
                let hit = clip.plants.iter().any(|p| {
                    clip.transcript.words[p.word_index].text == w.text
                        && best.1 >= p.frame_start
                        && best.1 <= p.frame_end
                });
                assert!(
                    hit,
                    "argmax frame {} outside every plant of word {}",
                    best.1, w.text
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn gestured_fraction_matches_config() {
        let cfg = GenConfig {
            n_samples: 2000,
            gestured_fraction: 0.3,
            d_v: 8,
            d_mel: 8,
            gesture_motif_dim: 2,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let (mut gestured, mut total) = (0usize, 0usize);
        for c in &corpus {
            for w in &c.transcript.words {
                total += 1;
                gestured += w.gestured as usize;
            }
        }
        let frac = gestured as f64 / total as f64;
        assert!((frac - 0.3).abs() < 0.03, "fraction {frac}");
    }

    #[test]
    fn mel_to_video_ratio_is_four() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        for c in &corpus {
            assert_eq!(c.speech.frames(), 4 * c.gesture.frames());
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let cfg = GenConfig {
            words_per_clip: (5, 3),
            ..GenConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
        let cfg = GenConfig {
            gestured_fraction: 0.0,
            ..GenConfig::default()
        };
        assert!(matches!(generate_corpus(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn split_all_train() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let (train, val, test) = split_corpus(&corpus, (1.0, 0.0, 0.0), 3, false).unwrap();
        assert_eq!(train.len(), corpus.len());
        assert!(val.is_empty() && test.is_empty());
    }

    #[test]
    fn split_sizes_exact() {
        let cfg = GenConfig {
            n_samples: 2000,
            d_v: 4,
            d_mel: 4,
            gesture_motif_dim: 2,
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        let (train, val, test) = split_corpus(&corpus, (0.8, 0.1, 0.1), 3, false).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (1600, 200, 200));
        // disjoint by id
        for id in &val {
            assert!(!train.contains(id));
        }
    }

    #[test]
    fn split_speaker_disjoint() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        let (train, _, test) = split_corpus(&corpus, (0.6, 0.2, 0.2), 3, true).unwrap();
        let spk = |id: &String| {
            corpus
                .iter()
                .find(|t| &t.id == id)
                .unwrap()
                .speaker_id
                .clone()
        };
        let test_speakers: Vec<String> = test.iter().map(spk).collect();
        for id in &train {
            assert!(!test_speakers.contains(&spk(id)));
        }
    }

    #[test]
    fn bad_ratio_sum_rejected() {
        let corpus = generate_corpus(&small_cfg()).unwrap();
        assert!(matches!(
            split_corpus(&corpus, (0.5, 0.2, 0.2), 3, false),
            Err(Error::Config(_))
        ));
    }
}
