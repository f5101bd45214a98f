//! The assembled tri-modal network.
//!
//! `forward_sample` records one clip's full forward pass on a tape: the three
//! encoders, word-level fusion, global pooling, and attention alignment. The
//! trainer stitches per-sample graphs into a batch objective; evaluation
//! reads the values straight off the tape.

use crate::autodiff::{Tape, Var};
use crate::corpus::Triplet;
use crate::encoders::{
    transcript_tokens, validate_speech_inputs, word_frame_segments, AudioEncoder,
    GestureEncoder, ModelConfig, TextEncoder,
};
use crate::error::Result;
use crate::fusion::{align_all_graph, fuse_words, Modality};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    gesture: GestureEncoder,
    text: TextEncoder,
    audio: AudioEncoder,
}

/// Vars for every embedding of one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleVars {
    pub g_t: Var,
    pub l_sw: Var,
    pub l_w: Var,
    pub s_frames: Var,
    pub s_w: Var,
    pub c_w: Var,
    pub c_global: Var,
    pub g_w: Var,
    pub g_global: Var,
}

/// One sample's recorded forward pass.
pub struct SampleForward<'p, T: Real> {
    pub tape: Tape<'p, T>,
    pub vars: SampleVars,
}

/// All per-sample embeddings, extracted as plain tensors.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub g_t: Tensor<f32>,
    pub l_sw: Tensor<f32>,
    pub l_w: Tensor<f32>,
    pub s_frames: Tensor<f32>,
    pub s_w: Tensor<f32>,
    pub c_w: Tensor<f32>,
    pub c_global: Vec<f32>,
    pub g_w: Tensor<f32>,
    pub g_global: Vec<f32>,
    pub attn: Option<Vec<Vec<f32>>>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let gesture = GestureEncoder::new(&mut store, &cfg, seed);
        let text = TextEncoder::new(&mut store, &cfg, seed);
        let audio = AudioEncoder::new(&mut store, &cfg, seed);
        Ok(Model {
            cfg,
            store,
            gesture,
            text,
            audio,
        })
    }

    /// Same architecture with parameters converted element-wise.
    pub fn cast<U: Real>(&self) -> Model<U> {
        let mut m = Model::<U>::new(self.cfg.clone(), 0).expect("config already validated");
        m.store = self.store.map_values(|t| t.map(|v| U::from_f64(v.to_f64())));
        m
    }

    /// Rebuild the architecture around an existing parameter store (layout
    /// must match the config's registration order).
    pub fn with_store(cfg: ModelConfig, store: ParamStore<T>) -> Result<Model<T>> {
        let mut m = Model::new(cfg, 0)?;
        assert_eq!(m.store.len(), store.len(), "store layout mismatch");
        m.store = store;
        Ok(m)
    }

    /// Record one clip's forward pass. `mode` zeroes a dropped modality at
    /// its encoder input; `diagnostics` keeps attention weights around.
    pub fn forward_sample<'p>(
        &'p self,
        triplet: &Triplet,
        mode: Modality,
    ) -> Result<SampleForward<'p, T>> {
        triplet.validate()?;
        let fps = validate_speech_inputs(&triplet.speech, &triplet.transcript)?;
        let _ = fps;
        let (tokens, token_segments) = transcript_tokens(&triplet.transcript, self.cfg.vocab_size)?;

        let mut tape = Tape::new(&self.store);

        // gesture branch
        let feats = tape.constant(triplet.gesture.features.map(|v| T::from_f32(v)));
        let g_t = self.gesture.forward(&mut tape, feats);

        // text branch; zeroed embedding input when audio-only
        let (l_sw, l_w) = self.text.forward(
            &mut tape,
            &tokens,
            &token_segments,
            mode == Modality::AudioOnly,
        );

        // speech branch; zeroed spectrogram when text-only
        let t_frames_video = {
            let t_mel = triplet.speech.frames();
            t_mel / 4
        };
        let speech_segments = word_frame_segments(
            &triplet.transcript,
            triplet.gesture.fps,
            t_frames_video,
        );
        let mel = if mode == Modality::TextOnly {
            Tensor::zeros(&triplet.speech.features.shape)
        } else {
            triplet.speech.features.map(|v| T::from_f32(v))
        };
        let mel = tape.constant(mel);
        let (s_frames, s_w) = self.audio.forward(&mut tape, mel, &speech_segments);

        // fusion and pooling
        let c_w = fuse_words(&mut tape, s_w, l_w, self.cfg.fusion);
        let c_global = tape.mean_rows(c_w);
        let g_global = tape.mean_rows(g_t);

        // word-level gesture alignment over padded windows
        let gesture_segments = word_frame_segments(
            &triplet.transcript,
            triplet.gesture.fps,
            triplet.gesture.frames(),
        );
        let g_w = align_all_graph(
            &mut tape,
            g_t,
            c_w,
            &gesture_segments,
            self.cfg.pad_frames,
            self.cfg.tau_align(),
        );

        Ok(SampleForward {
            tape,
            vars: SampleVars {
                g_t,
                l_sw,
                l_w,
                s_frames,
                s_w,
                c_w,
                c_global,
                g_w,
                g_global,
            },
        })
    }

    /// Evaluation-mode embeddings for one clip.
    pub fn embed_sample(
        &self,
        triplet: &Triplet,
        mode: Modality,
        diagnostics: bool,
    ) -> Result<EmbeddingSet> {
        let fwd = self.forward_sample(triplet, mode)?;
        let t = &fwd.tape;
        let v = &fwd.vars;
        Ok(EmbeddingSet {
            g_t: t.val(v.g_t).to_f32(),
            l_sw: t.val(v.l_sw).to_f32(),
            l_w: t.val(v.l_w).to_f32(),
            s_frames: t.val(v.s_frames).to_f32(),
            s_w: t.val(v.s_w).to_f32(),
            c_w: t.val(v.c_w).to_f32(),
            c_global: t.val(v.c_global).data.iter().map(|x| x.to_f32()).collect(),
            g_w: t.val(v.g_w).to_f32(),
            g_global: t.val(v.g_global).data.iter().map(|x| x.to_f32()).collect(),
            attn: if diagnostics {
                t.attn_weights(v.g_w)
                    .map(|ws| ws.iter().map(|w| w.iter().map(|x| x.to_f32()).collect()).collect())
            } else {
                None
            },
        })
    }
}

/// Spec-surface wrappers over the encoder branches; each runs a scratch tape
/// in evaluation mode.
pub mod encode {
    use super::*;
    use crate::corpus::{GestureTrack, SpeechTrack, Transcript};
    use crate::encoders::{GestureEmbedding, SpeechEmbedding, TextEmbedding};
    use crate::error::Error;

    pub fn encode_gesture<T: Real>(
        model: &Model<T>,
        track: &GestureTrack,
    ) -> Result<GestureEmbedding<T>> {
        if track.frames() == 0 {
            return Err(Error::Validation("gesture track has no frames".into()));
        }
        track.features.validate_finite("gesture features")?;
        if track.features.cols() != model.cfg.d_v {
            return Err(Error::Validation(format!(
                "gesture feature dim {} does not match d_v {}",
                track.features.cols(),
                model.cfg.d_v
            )));
        }
        let mut tape = Tape::new(&model.store);
        let feats = tape.constant(track.features.map(|v| T::from_f32(v)));
        let g_t = model.gesture.forward(&mut tape, feats);
        Ok(GestureEmbedding {
            g_t: tape.val(g_t).clone(),
        })
    }

    pub fn encode_text<T: Real>(
        model: &Model<T>,
        transcript: &Transcript,
    ) -> Result<TextEmbedding<T>> {
        let (tokens, segments) = transcript_tokens(transcript, model.cfg.vocab_size)?;
        let mut tape = Tape::new(&model.store);
        let (l_sw, l_w) = model.text.forward(&mut tape, &tokens, &segments, false);
        Ok(TextEmbedding {
            l_sw: tape.val(l_sw).clone(),
            l_w: tape.val(l_w).clone(),
        })
    }

    pub fn encode_speech<T: Real>(
        model: &Model<T>,
        track: &SpeechTrack,
        transcript: &Transcript,
    ) -> Result<SpeechEmbedding<T>> {
        let fps = validate_speech_inputs(track, transcript)?;
        if track.features.cols() != model.cfg.d_mel {
            return Err(Error::Validation(format!(
                "mel dim {} does not match d_mel {}",
                track.features.cols(),
                model.cfg.d_mel
            )));
        }
        let t_video = track.frames() / 4;
        let segments = word_frame_segments(transcript, fps, t_video);
        let mut tape = Tape::new(&model.store);
        let mel = tape.constant(track.features.map(|v| T::from_f32(v)));
        let (s_frames, s_w) = model.audio.forward(&mut tape, mel, &segments);
        Ok(SpeechEmbedding {
            s_frames: tape.val(s_frames).clone(),
            s_w: tape.val(s_w).clone(),
        })
    }
}
