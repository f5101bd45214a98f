//! Reusable network building blocks: linear layers, layer norm, sinusoidal
//! positional encoding, transformer encoder layers, and the strided audio
//! convolution stack.
//!
//! Blocks register their parameters against a [`ParamStore`] at construction
//! and hold the indices; `forward` records onto a tape.

use crate::autodiff::{Tape, Var};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

fn init_matrix<T: Real>(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<T> {
    // Xavier-uniform
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.uniform_range(-limit, limit)))
        .collect();
    Tensor::from_vec(&[rows, cols], data)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.register(&format!("{name}.w"), init_matrix(rng, d_in, d_out));
        let b = store.register(&format!("{name}.b"), Tensor::zeros(&[1, d_out]));
        Linear { w, b }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        let gamma = store.register(
            &format!("{name}.gamma"),
            Tensor::from_vec(&[1, d], vec![T::ONE; d]),
        );
        let beta = store.register(&format!("{name}.beta"), Tensor::zeros(&[1, d]));
        LayerNorm { gamma, beta }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Fixed sinusoidal positional encoding, added to a [T, d] sequence.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            let angle = pos as f64 * freq;
            out.data[pos * d + 2 * i] = T::from_f64(angle.sin());
            out.data[pos * d + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    out
}

pub fn add_positional<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let (len, d) = (tape.val(x).rows(), tape.val(x).cols());
    let pe = tape.constant(positional_encoding(len, d));
    tape.add(x, pe)
}

/// Pre-norm transformer encoder layer: multi-head self-attention and a GELU
/// feed-forward block, each behind a residual connection.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub heads: usize,
    ln_attn: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln_ff: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl TransformerLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        assert!(d % heads == 0, "heads must divide model dim");
        let layer = TransformerLayer {
            heads,
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d),
            wq: Linear::new(store, rng, &format!("{name}.wq"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.wk"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.wv"), d, d),
            wo: Linear::new(store, rng, &format!("{name}.wo"), d, d),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, ff_dim),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), ff_dim, d),
        };
        // damp each residual branch at init so a deep stack starts close to
        // the identity and the input signal survives to the pooled outputs
        for idx in [layer.wo.w, layer.ff2.w] {
            let scale = T::from_f64(0.1);
            for v in store.tensor_mut(idx).data.iter_mut() {
                *v *= scale;
            }
        }
        layer
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let d = tape.val(x).cols();
        let hd = d / self.heads;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        let normed = self.ln_attn.forward(tape, x);
        let q = self.wq.forward(tape, normed);
        let k = self.wk.forward(tape, normed);
        let v = self.wv.forward(tape, normed);

        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, vh));
        }
        let mut cat = head_outs[0];
        for h in head_outs.into_iter().skip(1) {
            cat = tape.concat_cols(cat, h);
        }
        let attn_out = self.wo.forward(tape, cat);
        let x = tape.add(x, attn_out);

        let normed = self.ln_ff.forward(tape, x);
        let f = self.ff1.forward(tape, normed);
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, f);
        tape.add(x, f)
    }
}

/// A stack of transformer layers with a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    layers: Vec<TransformerLayer>,
    ln_out: LayerNorm,
}

impl TransformerStack {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut Rng,
        name: &str,
        d: usize,
        n_layers: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| TransformerLayer::new(store, rng, &format!("{name}.layer{i}"), d, heads, ff_dim))
            .collect();
        TransformerStack {
            layers,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), d),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, mut x: Var) -> Var {
        for layer in &self.layers {
            x = layer.forward(tape, x);
        }
        self.ln_out.forward(tape, x)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub norm: Option<(usize, usize)>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub act: bool,
}

/// The strided 2-D convolution stack that maps a [1, d_mel, 4T] spectrogram
/// to [d/2, 1, T]: frequency collapses 80 -> 40 -> 20 -> 7 -> 3 -> 1 while
/// time reduces exactly 4x.
#[derive(Debug, Clone)]
pub struct AudioConvStack {
    layers: Vec<ConvLayer>,
}

impl AudioConvStack {
    /// Channel widths follow the reference schedule scaled by `d / 512`.
    pub fn channel_plan(d: usize) -> Vec<usize> {
        [32usize, 64, 128, 256, 256, 256]
            .iter()
            .map(|&c| ((c * d) / 512).max(1))
            .collect()
    }

    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut Rng, name: &str, d: usize) -> Self {
        let chans = Self::channel_plan(d);
        let specs: [(usize, usize, (usize, usize), (usize, usize)); 6] = [
            (5, 5, (1, 1), (2, 2)),
            (3, 3, (2, 2), (1, 1)),
            (3, 3, (2, 2), (1, 1)),
            (3, 3, (3, 1), (1, 1)),
            (3, 3, (3, 1), (1, 1)),
            (1, 1, (3, 1), (0, 0)),
        ];
        let mut layers = Vec::with_capacity(6);
        let mut c_in = 1usize;
        for (i, &(kf, kt, stride, pad)) in specs.iter().enumerate() {
            let c_out = chans[i];
            let fan = (c_in * kf * kt + c_out * kf * kt) as f64;
            let limit = (6.0 / fan).sqrt();
            let data = (0..c_out * c_in * kf * kt)
                .map(|_| T::from_f64(rng.uniform_range(-limit, limit)))
                .collect();
            let w = store.register(
                &format!("{name}.conv{i}.w"),
                Tensor::from_vec(&[c_out, c_in, kf, kt], data),
            );
            let b = store.register(&format!("{name}.conv{i}.b"), Tensor::zeros(&[c_out]));
            // last layer: bare convolution, no norm or activation
            let norm = if i < 5 {
                let gamma = store.register(
                    &format!("{name}.conv{i}.gamma"),
                    Tensor::from_vec(&[c_out], vec![T::ONE; c_out]),
                );
                let beta = store.register(&format!("{name}.conv{i}.beta"), Tensor::zeros(&[c_out]));
                Some((gamma, beta))
            } else {
                None
            };
            layers.push(ConvLayer {
                w,
                b,
                norm,
                stride,
                pad,
                act: i < 5,
            });
            c_in = c_out;
        }
        AudioConvStack { layers }
    }

    /// [1, d_mel, T'] -> [T'/4, d/2]
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, mut x: Var) -> Var {
        for layer in &self.layers {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            x = tape.conv2d(x, w, b, layer.stride, layer.pad);
            if let Some((gamma, beta)) = layer.norm {
                let g = tape.param(gamma);
                let be = tape.param(beta);
                x = tape.inst_norm(x, g, be);
            }
            if layer.act {
                x = tape.gelu(x);
            }
        }
        // [C, 1, T] -> [C, T] -> [T, C]
        let val = tape.val(x);
        assert_eq!(val.shape[1], 1, "frequency axis did not collapse");
        let (c, t) = (val.shape[0], val.shape[2]);
        let flat = tape.reshape(x, &[c, t]);
        tape.transpose(flat)
    }
}
