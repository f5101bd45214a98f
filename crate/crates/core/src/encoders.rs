//! Modality encoders.
//!
//! Gesture: projection MLP, sinusoidal positions, transformer stack, output
//! projection; frame-level output [T, d]. Text: trainable sub-word embedding
//! table, positions, transformer stack, projection to d/2; pooled to one row
//! per word by exact mean. Speech: strided 2-D conv stack collapsing the mel
//! axis and downsampling time 4x to video rate, projection to d/2; pooled to
//! word rows over the spoken frame intervals.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{SpeechTrack, Transcript};
pub use crate::corpus::time_to_frames;
use crate::error::{Error, Result};
use crate::nn::{add_positional, AudioConvStack, LayerNorm, Linear, TransformerStack};
use crate::params::ParamStore;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Concatenate word-level speech and text halves (the reference path).
    Concat,
    /// Average the two modalities into both halves.
    Avg,
    /// Text only; speech is absent rather than zeroed.
    PairwiseText,
    /// Speech only.
    PairwiseAudio,
}

impl Default for FusionMode {
    fn default() -> Self {
        FusionMode::Concat
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionMode::Concat),
            "avg" => Ok(FusionMode::Avg),
            "pairwise-text" => Ok(FusionMode::PairwiseText),
            "pairwise-audio" => Ok(FusionMode::PairwiseAudio),
            other => Err(Error::Config(format!("unknown fusion mode {other}"))),
        }
    }
}

fn default_d() -> usize { 64 }
fn default_d_v() -> usize { 64 }
fn default_d_mel() -> usize { 80 }
fn default_gesture_layers() -> usize { 6 }
fn default_text_layers() -> usize { 3 }
fn default_attn_heads() -> usize { 8 }
fn default_tau_seq() -> f64 { 10.0 }
fn default_tau_couple() -> f64 { 10.0 }
fn default_beta() -> f64 { 0.5 }
fn default_pad_frames() -> usize { 10 }
fn default_drop_prob() -> f64 { 0.5 }
fn default_vocab_size() -> usize { 50 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Joint embedding dimension; must be even (speech/text halves are d/2).
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_d_v")]
    pub d_v: usize,
    #[serde(default = "default_d_mel")]
    pub d_mel: usize,
    #[serde(default = "default_gesture_layers")]
    pub gesture_layers: usize,
    #[serde(default = "default_text_layers")]
    pub text_layers: usize,
    #[serde(default = "default_attn_heads")]
    pub attn_heads: usize,
    /// Feed-forward width; defaults to 4*d.
    #[serde(default)]
    pub ff_dim: Option<usize>,
    /// Alignment temperature; defaults to 1/sqrt(d).
    #[serde(default)]
    pub tau_align: Option<f64>,
    #[serde(default = "default_tau_seq")]
    pub tau_seq: f64,
    #[serde(default = "default_tau_couple")]
    pub tau_couple: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Frames of padding on either side of a word's alignment window.
    #[serde(default = "default_pad_frames")]
    pub pad_frames: usize,
    #[serde(default = "default_drop_prob")]
    pub drop_prob: f64,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    #[serde(default)]
    pub fusion: FusionMode,
    /// Adds the mirrored direction to the phrase contrastive loss.
    #[serde(default)]
    pub symmetric_seq_loss: bool,
    /// Swaps the roles in the coupling score (mean over speech-text words,
    /// max over gesture words).
    #[serde(default)]
    pub transpose_coupling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

impl ModelConfig {
    pub fn ff_dim(&self) -> usize {
        self.ff_dim.unwrap_or(4 * self.d)
    }

    pub fn tau_align(&self) -> f64 {
        self.tau_align.unwrap_or(1.0 / (self.d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::Config(format!("d must be a positive even number, got {}", self.d)));
        }
        if self.d % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "attn_heads {} must divide d {}",
                self.attn_heads, self.d
            )));
        }
        if self.tau_seq <= 0.0 || self.tau_couple <= 0.0 || self.tau_align() <= 0.0 {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!(
                "drop_prob must be in [0, 1], got {}",
                self.drop_prob
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        Ok(())
    }
}

/// Frame-level gesture embeddings, [T, d].
#[derive(Debug, Clone)]
pub struct GestureEmbedding<T: Real> {
    pub g_t: Tensor<T>,
}

/// Sub-word and word-level text embeddings, both at width d/2.
#[derive(Debug, Clone)]
pub struct TextEmbedding<T: Real> {
    pub l_sw: Tensor<T>,
    pub l_w: Tensor<T>,
}

/// Video-rate and word-level speech embeddings, both at width d/2.
#[derive(Debug, Clone)]
pub struct SpeechEmbedding<T: Real> {
    pub s_frames: Tensor<T>,
    pub s_w: Tensor<T>,
}

/// Deterministic sub-word ids for a synthetic surface form `w<number>`.
pub fn tokenize(text: &str, subword_count: usize, vocab_size: usize) -> Result<Vec<usize>> {
    let n: usize = text
        .strip_prefix('w')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Validation(format!("unknown token {text:?}")))?;
    if subword_count == 0 {
        return Err(Error::Validation(format!("word {text:?} has zero sub-words")));
    }
    Ok((0..subword_count)
        .map(|j| (n * 3 + j * 7) % vocab_size)
        .collect())
}

/// Flattened token ids plus per-word inclusive row segments.
pub fn transcript_tokens(
    transcript: &Transcript,
    vocab_size: usize,
) -> Result<(Vec<usize>, Vec<(usize, usize)>)> {
    if transcript.is_empty() {
        return Err(Error::Validation("transcript must contain at least one word".into()));
    }
    let mut tokens = Vec::new();
    let mut segments = Vec::new();
    for w in &transcript.words {
        let ids = tokenize(&w.text, w.subword_count, vocab_size)?;
        let lo = tokens.len();
        tokens.extend(ids);
        segments.push((lo, tokens.len() - 1));
    }
    Ok((tokens, segments))
}

/// Inclusive video-frame segments for each word of a transcript.
pub fn word_frame_segments(
    transcript: &Transcript,
    fps: f64,
    frames: usize,
) -> Vec<(usize, usize)> {
    transcript
        .words
        .iter()
        .map(|w| time_to_frames(w.start_s, w.end_s, fps, frames))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GestureEncoder {
    proj1: Linear,
    proj_ln: LayerNorm,
    proj2: Linear,
    stack: TransformerStack,
    out: Linear,
}

impl GestureEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, &[0x6E5]));
        GestureEncoder {
            proj1: Linear::new(store, &mut rng, "gesture.proj1", cfg.d_v, cfg.d),
            proj_ln: LayerNorm::new(store, "gesture.proj_ln", cfg.d),
            proj2: Linear::new(store, &mut rng, "gesture.proj2", cfg.d, cfg.d),
            stack: TransformerStack::new(
                store,
                &mut rng,
                "gesture.stack",
                cfg.d,
                cfg.gesture_layers,
                cfg.attn_heads,
                cfg.ff_dim(),
            ),
            out: Linear::new(store, &mut rng, "gesture.out", cfg.d, cfg.d),
        }
    }

    /// [T, d_v] -> [T, d]
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, features: Var) -> Var {
        let x = self.proj1.forward(tape, features);
        let x = self.proj_ln.forward(tape, x);
        let x = tape.gelu(x);
        let x = self.proj2.forward(tape, x);
        let x = add_positional(tape, x);
        let x = self.stack.forward(tape, x);
        self.out.forward(tape, x)
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub table: usize,
    d: usize,
    stack: TransformerStack,
    out: Linear,
}

impl TextEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, &[0x7E7]));
        let scale = 1.0 / (cfg.d as f64).sqrt();
        let data = (0..cfg.vocab_size * cfg.d)
            .map(|_| T::from_f64(rng.normal() * scale))
            .collect();
        let table = store.register(
            "text.table",
            Tensor::from_vec(&[cfg.vocab_size, cfg.d], data),
        );
        TextEncoder {
            table,
            d: cfg.d,
            stack: TransformerStack::new(
                store,
                &mut rng,
                "text.stack",
                cfg.d,
                cfg.text_layers,
                cfg.attn_heads,
                cfg.ff_dim(),
            ),
            out: Linear::new(store, &mut rng, "text.out", cfg.d, cfg.d / 2),
        }
    }

    /// Token ids -> (l_sw [S, d/2], l_w [W, d/2]).
    ///
    /// With `zero_input` the embedding vectors entering the head are zeroed,
    /// which is how a dropped text modality is represented.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        tokens: &[usize],
        segments: &[(usize, usize)],
        zero_input: bool,
    ) -> (Var, Var) {
        let x = if zero_input {
            tape.constant(Tensor::zeros(&[tokens.len(), self.d]))
        } else {
            let table = tape.param(self.table);
            tape.gather_rows(table, tokens)
        };
        let x = add_positional(tape, x);
        let x = self.stack.forward(tape, x);
        let l_sw = self.out.forward(tape, x);
        let l_w = tape.segment_mean_rows(l_sw, segments);
        (l_sw, l_w)
    }
}

#[derive(Debug, Clone)]
pub struct AudioEncoder {
    conv: AudioConvStack,
    out: Linear,
}

impl AudioEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, &[0xA0D10]));
        let conv = AudioConvStack::new(store, &mut rng, "audio", cfg.d);
        let c_last = *AudioConvStack::channel_plan(cfg.d).last().unwrap();
        AudioEncoder {
            conv,
            out: Linear::new(store, &mut rng, "audio.out", c_last, cfg.d / 2),
        }
    }

    /// Mel features [T', d_mel] (a var already on the tape) ->
    /// (s_frames [T'/4, d/2], s_w [W, d/2]). A dropped speech modality is
    /// represented by inserting a zero tensor as the input var.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        mel: Var,
        segments: &[(usize, usize)],
    ) -> (Var, Var) {
        let (t_mel, d_mel) = (tape.val(mel).rows(), tape.val(mel).cols());
        // [T', d_mel] -> [d_mel, T'] -> [1, d_mel, T']
        let x = tape.transpose(mel);
        let x = tape.reshape(x, &[1, d_mel, t_mel]);
        let frames = self.conv.forward(tape, x);
        let s_frames = self.out.forward(tape, frames);
        let s_w = tape.segment_mean_rows(s_frames, segments);
        (s_frames, s_w)
    }
}

/// Validates a speech track against its transcript before encoding.
pub fn validate_speech_inputs(track: &SpeechTrack, transcript: &Transcript) -> Result<f64> {
    if track.frames() < 4 {
        return Err(Error::Validation(format!(
            "speech track must have at least 4 mel frames, got {}",
            track.frames()
        )));
    }
    track.features.validate_finite("speech features")?;
    let mel_rate = 1000.0 / track.hop_ms;
    let fps = mel_rate / 4.0;
    let duration = track.frames() as f64 / mel_rate;
    for (i, w) in transcript.words.iter().enumerate() {
        if w.end_s > duration + 1e-6 || w.start_s < 0.0 {
            return Err(Error::Validation(format!(
                "word {i} interval [{}, {}] outside speech track of {duration:.3}s",
                w.start_s, w.end_s
            )));
        }
    }
    Ok(fps)
}
