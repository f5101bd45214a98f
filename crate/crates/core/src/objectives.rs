//! Training objectives.
//!
//! The phrase contrastive loss is an InfoNCE over cosine similarities of
//! pooled clip-level gesture and speech-text embeddings, anchored on the
//! gesture side as printed; a `symmetric` flag averages in the mirrored
//! direction. The coupling score lambda averages, over one sample's gesture
//! words, the best cosine against the other sample's speech-text words; the
//! coupling loss is an InfoNCE over the N x N lambda matrix. Ties inside the
//! max break toward the lowest index, deterministically.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{norm, Real, Tensor};

/// Per-sample embeddings entering the batch objectives.
#[derive(Debug, Clone)]
pub struct SampleEmbeddings<T: Real> {
    /// [1, d]
    pub g_global: Tensor<T>,
    /// [1, d]
    pub c_global: Tensor<T>,
    /// [W, d]
    pub g_w: Tensor<T>,
    /// [W, d]
    pub c_w: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BatchEmbeddings<T: Real> {
    pub samples: Vec<SampleEmbeddings<T>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossValue<T: Real> {
    pub total: T,
    pub l_seq: T,
    pub l_couple: T,
    pub beta: T,
}

const NORM_GUARD: f64 = 1e-8;

fn guard_rows<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    for i in 0..t.rows() {
        if norm(t.row(i)).to_f64() < NORM_GUARD {
            return Err(Error::NumericGuard(format!(
                "{what} row {i} has near-zero norm; cosine undefined"
            )));
        }
    }
    Ok(())
}

/// InfoNCE over global embeddings already on the tape, as vars of shape
/// [1, d] per sample.
pub fn phrase_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    g_globals: &[Var],
    c_globals: &[Var],
    tau_seq: f64,
    symmetric: bool,
) -> Var {
    assert_eq!(g_globals.len(), c_globals.len());
    let g = tape.concat_rows(g_globals);
    let c = tape.concat_rows(c_globals);
    let gn = tape.l2_normalize_rows(g);
    let cn = tape.l2_normalize_rows(c);
    let sims = tape.matmul_nt(gn, cn);
    let logits = tape.scale(sims, T::from_f64(tau_seq));
    let ls = tape.log_softmax_rows(logits);
    let diag = tape.mean_diag(ls);
    let fwd = tape.scale(diag, T::from_f64(-1.0));
    if !symmetric {
        return fwd;
    }
    let logits_t = tape.transpose(logits);
    let ls_t = tape.log_softmax_rows(logits_t);
    let diag_t = tape.mean_diag(ls_t);
    let bwd = tape.scale(diag_t, T::from_f64(-1.0));
    let sum = tape.add(fwd, bwd);
    tape.scale(sum, T::from_f64(0.5))
}

/// lambda between one sample's word-level gesture rows and another's
/// speech-text rows, both pre-normalized on the tape.
fn coupling_score_graph<T: Real>(
    tape: &mut Tape<T>,
    g_w_normed: Var,
    c_w_normed: Var,
    transpose: bool,
) -> Var {
    let sims = if transpose {
        tape.matmul_nt(c_w_normed, g_w_normed)
    } else {
        tape.matmul_nt(g_w_normed, c_w_normed)
    };
    let best = tape.row_max(sims);
    tape.mean_all(best)
}

/// InfoNCE over the full lambda matrix; `g_ws`/`c_ws` are per-sample [W, d]
/// vars.
pub fn coupling_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    g_ws: &[Var],
    c_ws: &[Var],
    tau_couple: f64,
    transpose: bool,
) -> Var {
    let n = g_ws.len();
    assert_eq!(n, c_ws.len());
    let gn: Vec<Var> = g_ws.iter().map(|&v| tape.l2_normalize_rows(v)).collect();
    let cn: Vec<Var> = c_ws.iter().map(|&v| tape.l2_normalize_rows(v)).collect();
    let mut lambdas = Vec::with_capacity(n * n);
    for &g in &gn {
        for &c in &cn {
            lambdas.push(coupling_score_graph(tape, g, c, transpose));
        }
    }
    let matrix = tape.assemble(&lambdas, n, n);
    let logits = tape.scale(matrix, T::from_f64(tau_couple));
    let ls = tape.log_softmax_rows(logits);
    let diag = tape.mean_diag(ls);
    tape.scale(diag, T::from_f64(-1.0))
}

/// Weighted combination on the tape; returns (total, l_seq, l_couple).
pub fn total_loss_graph<T: Real>(
    tape: &mut Tape<T>,
    g_globals: &[Var],
    c_globals: &[Var],
    g_ws: &[Var],
    c_ws: &[Var],
    beta: f64,
    tau_seq: f64,
    tau_couple: f64,
    symmetric: bool,
    transpose_coupling: bool,
) -> (Var, Var, Var) {
    let l_seq = phrase_loss_graph(tape, g_globals, c_globals, tau_seq, symmetric);
    let l_couple = coupling_loss_graph(tape, g_ws, c_ws, tau_couple, transpose_coupling);
    let a = tape.scale(l_seq, T::from_f64(beta));
    let b = tape.scale(l_couple, T::from_f64(1.0 - beta));
    let total = tape.add(a, b);
    (total, l_seq, l_couple)
}

/// The phrase contrastive loss on plain values.
pub fn phrase_contrastive_loss<T: Real>(
    batch: &BatchEmbeddings<T>,
    tau_seq: f64,
    symmetric: bool,
) -> Result<T> {
    let n = batch.samples.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "contrastive loss requires at least 2 samples, got {n}"
        )));
    }
    for (i, s) in batch.samples.iter().enumerate() {
        guard_rows(&s.g_global, &format!("g_global[{i}]"))?;
        guard_rows(&s.c_global, &format!("c_global[{i}]"))?;
    }
    let mut tape = Tape::free();
    let g: Vec<Var> = batch
        .samples
        .iter()
        .map(|s| tape.constant(s.g_global.clone()))
        .collect();
    let c: Vec<Var> = batch
        .samples
        .iter()
        .map(|s| tape.constant(s.c_global.clone()))
        .collect();
    let loss = phrase_loss_graph(&mut tape, &g, &c, tau_seq, symmetric);
    Ok(tape.val(loss).item())
}

/// Eq.-3-style coupling score on plain values: mean over gesture rows of the
/// best cosine against the speech-text rows.
pub fn coupling_score<T: Real>(g_w: &Tensor<T>, c_w: &Tensor<T>) -> Result<T> {
    if g_w.rank() != 2 || c_w.rank() != 2 || g_w.cols() != c_w.cols() {
        return Err(Error::Validation(format!(
            "coupling_score expects [W, d] inputs with equal d, got {:?} and {:?}",
            g_w.shape, c_w.shape
        )));
    }
    if g_w.rows() == 0 || c_w.rows() == 0 {
        return Err(Error::Validation("coupling_score requires W >= 1".into()));
    }
    guard_rows(g_w, "g_w")?;
    guard_rows(c_w, "c_w")?;
    let mut tape = Tape::free();
    let g = tape.constant(g_w.clone());
    let c = tape.constant(c_w.clone());
    let gn = tape.l2_normalize_rows(g);
    let cn = tape.l2_normalize_rows(c);
    let lam = coupling_score_graph(&mut tape, gn, cn, false);
    Ok(tape.val(lam).item())
}

/// The coupling loss on plain values.
pub fn coupling_loss<T: Real>(
    batch: &BatchEmbeddings<T>,
    tau_couple: f64,
    transpose: bool,
) -> Result<T> {
    let n = batch.samples.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "coupling loss requires at least 2 samples, got {n}"
        )));
    }
    for (i, s) in batch.samples.iter().enumerate() {
        guard_rows(&s.g_w, &format!("g_w[{i}]"))?;
        guard_rows(&s.c_w, &format!("c_w[{i}]"))?;
    }
    let mut tape = Tape::free();
    let g: Vec<Var> = batch
        .samples
        .iter()
        .map(|s| tape.constant(s.g_w.clone()))
        .collect();
    let c: Vec<Var> = batch
        .samples
        .iter()
        .map(|s| tape.constant(s.c_w.clone()))
        .collect();
    let loss = coupling_loss_graph(&mut tape, &g, &c, tau_couple, transpose);
    Ok(tape.val(loss).item())
}

/// Weighted sum of the two losses.
pub fn total_loss<T: Real>(
    batch: &BatchEmbeddings<T>,
    beta: f64,
    tau_seq: f64,
    tau_couple: f64,
    symmetric: bool,
    transpose_coupling: bool,
) -> Result<LossValue<T>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must be in [0, 1], got {beta}")));
    }
    let l_seq = phrase_contrastive_loss(batch, tau_seq, symmetric)?;
    let l_couple = coupling_loss(batch, tau_couple, transpose_coupling)?;
    let b = T::from_f64(beta);
    let total = b * l_seq + (T::ONE - b) * l_couple;
    if !total.is_finite() {
        return Err(Error::Validation("loss is not finite".into()));
    }
    Ok(LossValue {
        total,
        l_seq,
        l_couple,
        beta: b,
    })
}
