//! Speech-text fusion and gesture-word alignment.
//!
//! Fusion concatenates the word-level speech and text halves into c^w and
//! average-pools a global phrase embedding. Alignment computes a word-level
//! gesture embedding by attention-pooling the frame embeddings over the
//! word's spoken interval padded by `p` frames on either side, which lets
//! the model look past the speech-based boundary when the gesture leads or
//! trails the word.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::FusionMode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Which modalities are live for a sample. A dropped modality is zeroed at
/// its encoder input, never at the embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Both,
    TextOnly,
    AudioOnly,
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Modality::Both),
            "text" => Ok(Modality::TextOnly),
            "audio" => Ok(Modality::AudioOnly),
            other => Err(Error::Config(format!(
                "unknown modality {other}, expected text|audio|both"
            ))),
        }
    }
}

/// Training-time modality drop: with probability `drop_prob` one of the two
/// content modalities is dropped, chosen fairly; never both.
pub fn sample_drop_mode(rng: &mut Rng, drop_prob: f64) -> Modality {
    if rng.bernoulli(drop_prob) {
        if rng.bernoulli(0.5) {
            Modality::TextOnly
        } else {
            Modality::AudioOnly
        }
    } else {
        Modality::Both
    }
}

#[derive(Debug, Clone)]
pub struct FusedEmbedding<T: Real> {
    /// [W, d]
    pub c_w: Tensor<T>,
    /// [d]
    pub c_global: Vec<T>,
    pub active_modalities: Modality,
}

#[derive(Debug, Clone)]
pub struct AlignedGestureEmbedding<T: Real> {
    /// [W, d]
    pub g_w: Tensor<T>,
    /// Per-word attention over the padded window; kept only when diagnostics
    /// are requested.
    pub attn: Option<Vec<Vec<T>>>,
    /// [d]
    pub g_global: Vec<T>,
}

/// Word-level fusion on the tape. `Concat` is the reference path; the
/// other variants are ablation modes that keep c^w at width d by letting a
/// single modality (or the average) fill both halves.
pub fn fuse_words<T: Real>(tape: &mut Tape<T>, s_w: Var, l_w: Var, mode: FusionMode) -> Var {
    match mode {
        FusionMode::Concat => tape.concat_cols(s_w, l_w),
        FusionMode::Avg => {
            let s2 = tape.concat_cols(s_w, s_w);
            let l2 = tape.concat_cols(l_w, l_w);
            let sum = tape.add(s2, l2);
            tape.scale(sum, T::from_f64(0.5))
        }
        FusionMode::PairwiseText => tape.concat_cols(l_w, l_w),
        FusionMode::PairwiseAudio => tape.concat_cols(s_w, s_w),
    }
}

/// Plain concatenation fusion over word-level embeddings.
pub fn fuse<T: Real>(s_w: &Tensor<T>, l_w: &Tensor<T>, mode: Modality) -> Result<FusedEmbedding<T>> {
    if s_w.rank() != 2 || l_w.rank() != 2 || s_w.shape != l_w.shape {
        return Err(Error::Validation(format!(
            "fuse expects matching [W, d/2] inputs, got {:?} and {:?}",
            s_w.shape, l_w.shape
        )));
    }
    let mut tape = Tape::free();
    let s = tape.constant(s_w.clone());
    let l = tape.constant(l_w.clone());
    let c = fuse_words(&mut tape, s, l, FusionMode::Concat);
    let g = tape.mean_rows(c);
    Ok(FusedEmbedding {
        c_w: tape.val(c).clone(),
        c_global: tape.val(g).data.clone(),
        active_modalities: mode,
    })
}

/// Padded inclusive attention windows for each word's frame interval.
pub fn padded_windows(
    segments: &[(usize, usize)],
    pad: usize,
    frames: usize,
) -> Vec<(usize, usize)> {
    let last = frames.saturating_sub(1);
    segments
        .iter()
        .map(|&(s, e)| (s.saturating_sub(pad), (e + pad).min(last)))
        .collect()
}

/// Attention-pool one word window; returns the pooled embedding and the
/// attention weights over the window.
pub fn align_word<T: Real>(
    g_t: &Tensor<T>,
    c_w_i: &[T],
    word_frames: (usize, usize),
    pad: usize,
    tau_align: f64,
) -> Result<(Vec<T>, Vec<T>)> {
    if g_t.rank() != 2 || g_t.cols() != c_w_i.len() {
        return Err(Error::Validation(format!(
            "align_word dim mismatch: frames {:?} vs query of {}",
            g_t.shape,
            c_w_i.len()
        )));
    }
    let windows = padded_windows(&[word_frames], pad, g_t.rows());
    let mut tape = Tape::free();
    let frames = tape.constant(g_t.clone());
    let query = tape.constant(Tensor::from_vec(&[1, c_w_i.len()], c_w_i.to_vec()));
    let pooled = tape.attn_pool(frames, query, &windows, T::from_f64(tau_align));
    let attn = tape.attn_weights(pooled).unwrap()[0].clone();
    Ok((tape.val(pooled).row(0).to_vec(), attn))
}

/// Tape-level alignment over all words of a sample.
pub fn align_all_graph<T: Real>(
    tape: &mut Tape<T>,
    g_t: Var,
    c_w: Var,
    segments: &[(usize, usize)],
    pad: usize,
    tau_align: f64,
) -> Var {
    let frames = tape.val(g_t).rows();
    let windows = padded_windows(segments, pad, frames);
    tape.attn_pool(g_t, c_w, &windows, T::from_f64(tau_align))
}

/// Value-level alignment over all words, with optional attention diagnostics.
pub fn align_all<T: Real>(
    g_t: &Tensor<T>,
    c_w: &Tensor<T>,
    segments: &[(usize, usize)],
    pad: usize,
    tau_align: f64,
    diagnostics: bool,
) -> Result<AlignedGestureEmbedding<T>> {
    if g_t.cols() != c_w.cols() {
        return Err(Error::Validation(format!(
            "align dim mismatch: g_T {:?} vs c_w {:?}",
            g_t.shape, c_w.shape
        )));
    }
    if segments.len() != c_w.rows() {
        return Err(Error::Validation("one frame segment per word required".into()));
    }
    let mut tape = Tape::free();
    let frames = tape.constant(g_t.clone());
    let queries = tape.constant(c_w.clone());
    let g_w = align_all_graph(&mut tape, frames, queries, segments, pad, tau_align);
    let g_global = tape.mean_rows(frames);
    Ok(AlignedGestureEmbedding {
        g_w: tape.val(g_w).clone(),
        attn: if diagnostics {
            Some(tape.attn_weights(g_w).unwrap().to_vec())
        } else {
            None
        },
        g_global: tape.val(g_global).data.clone(),
    })
}
