//! Deterministic training loop.
//!
//! Per step: sample a training window per clip (snapped outward to word
//! boundaries), sample a modality-drop mode, run the per-sample forwards in
//! parallel, join them through the batch objective, backprop the seeds into
//! each sample graph, and apply a decoupled-weight-decay Adam update with
//! gradients accumulated in a fixed sample order. Every random choice comes
//! from a stream derived from (seed, epoch, clip); two runs with the same
//! seed produce identical loss curves.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::container;
use crate::corpus::{time_to_frames, Plant, Triplet};
use crate::encoders::{FusionMode, ModelConfig};
use crate::error::{Error, Result};
use crate::fusion::{sample_drop_mode, Modality};
use crate::model::{Model, SampleForward};
use crate::params::ParamStore;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Real, Tensor};

fn default_lr() -> f64 { 5e-5 }
fn default_weight_decay() -> f64 { 1e-4 }
fn default_adam_betas() -> (f64, f64) { (0.9, 0.98) }
fn default_batch_size() -> usize { 32 }
fn default_epochs() -> usize { 10 }
fn default_plateau_patience() -> usize { 2 }
fn default_plateau_factor() -> f64 { 5.0 }
fn default_clip_len() -> (f64, f64) { (2.0, 10.0) }
fn default_seed() -> u64 { 7 }
fn default_drop_prob() -> f64 { 0.5 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_adam_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "default_clip_len")]
    pub clip_len_s: (f64, f64),
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_drop_prob")]
    pub drop_prob: f64,
    /// Global gradient-norm clip; off by default.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(Error::Config("lr must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 for contrastive losses".into()));
        }
        if self.clip_len_s.0 <= 0.0 || self.clip_len_s.0 > self.clip_len_s.1 {
            return Err(Error::Config(format!("clip_len_s range {:?} is empty", self.clip_len_s)));
        }
        if self.plateau_factor <= 1.0 {
            return Err(Error::Config("plateau_factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Slice a random training window out of a clip, snapping the boundaries
/// outward to word boundaries so no retained word is truncated. Gesture and
/// speech features are sliced at their 1x and 4x rates; word times are
/// re-based to the window start.
pub fn sample_training_window(
    triplet: &Triplet,
    rng: &mut Rng,
    clip_len_s: (f64, f64),
) -> Result<Triplet> {
    let dur = triplet.duration_s();
    if dur + 1e-9 < clip_len_s.0 {
        return Err(Error::ClipTooShort(format!(
            "{} is {dur:.2}s, below the {:.2}s minimum",
            triplet.id, clip_len_s.0
        )));
    }
    if dur <= clip_len_s.0 {
        return Ok(triplet.clone());
    }
    let target = rng.uniform_range(clip_len_s.0, clip_len_s.1.min(dur));
    if target >= dur {
        return Ok(triplet.clone());
    }
    let start = rng.uniform_range(0.0, dur - target);
    let end = start + target;

    let words = &triplet.transcript.words;
    let retained: Vec<usize> = (0..words.len())
        .filter(|&i| words[i].end_s > start && words[i].start_s < end)
        .collect();
    let retained = if retained.is_empty() {
        // take the word nearest the window centre so W >= 1 holds
        let centre = (start + end) / 2.0;
        let nearest = (0..words.len())
            .min_by(|&a, &b| {
                let da = ((words[a].start_s + words[a].end_s) / 2.0 - centre).abs();
                let db = ((words[b].start_s + words[b].end_s) / 2.0 - centre).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        vec![nearest]
    } else {
        retained
    };
    let w_start = words[retained[0]].start_s.min(start);
    let w_end = words[*retained.last().unwrap()].end_s.max(end);

    let fps = triplet.gesture.fps;
    let t_frames = triplet.gesture.frames();
    let (f0, f1) = time_to_frames(w_start, w_end.min(dur), fps, t_frames);

    let d_v = triplet.gesture.features.cols();
    let mut gesture = Tensor::zeros(&[f1 - f0 + 1, d_v]);
    for (row, f) in (f0..=f1).enumerate() {
        gesture.row_mut(row).copy_from_slice(triplet.gesture.features.row(f));
    }

    let mel_per = 4usize;
    let t_mel = triplet.speech.frames();
    let (m0, m1) = (mel_per * f0, (mel_per * f1 + mel_per - 1).min(t_mel - 1));
    let d_mel = triplet.speech.features.cols();
    let mut speech = Tensor::zeros(&[m1 - m0 + 1, d_mel]);
    for (row, f) in (m0..=m1).enumerate() {
        speech.row_mut(row).copy_from_slice(triplet.speech.features.row(f));
    }

    let base = f0 as f64 / fps;
    let new_words = retained
        .iter()
        .map(|&i| {
            let mut w = words[i].clone();
            w.start_s = (w.start_s - base).max(0.0);
            w.end_s = w.end_s - base;
            w
        })
        .collect();
    let new_plants = triplet
        .plants
        .iter()
        .filter(|p| retained.contains(&p.word_index) && p.frame_end >= f0 && p.frame_start <= f1)
        .map(|p| Plant {
            word_index: retained.iter().position(|&i| i == p.word_index).unwrap(),
            frame_start: p.frame_start.max(f0) - f0,
            frame_end: p.frame_end.min(f1) - f0,
        })
        .collect();

    let mut out = triplet.clone();
    out.gesture.features = gesture;
    out.speech.features = speech;
    out.transcript.words = new_words;
    out.plants = new_plants;
    Ok(out)
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, betas: (f64, f64), weight_decay: f64) -> Self {
        let m = (0..store.len())
            .map(|i| Tensor::zeros(&store.tensor(i).shape))
            .collect();
        let v = (0..store.len())
            .map(|i| Tensor::zeros(&store.tensor(i).shape))
            .collect();
        AdamW {
            m,
            v,
            step: 0,
            betas,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::from_f64(self.betas.0), T::from_f64(self.betas.1));
        let one = T::ONE;
        let bc1 = T::from_f64(1.0 - self.betas.0.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - self.betas.1.powi(self.step as i32));
        let lr_t = T::from_f64(lr);
        let wd = T::from_f64(self.weight_decay);
        let eps = T::from_f64(self.eps);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let p = store.tensor_mut(idx);
            for ((pv, gm), (mv, vv)) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(m.data.iter_mut().zip(v.data.iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * *gm;
                *vv = b2 * *vv + (one - b2) * *gm * *gm;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr_t * (mhat / (vhat.sqrt() + eps)) - lr_t * wd * *pv;
            }
        }
    }
}

/// Reduce-on-plateau bookkeeping: when validation total fails to improve for
/// `patience` consecutive epochs, divide the learning rate by `factor`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauSchedule {
            patience,
            factor,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's validation total; returns the updated learning rate.
    pub fn observe(&mut self, val_total: f64, lr: f64) -> f64 {
        if val_total < self.best {
            self.best = val_total;
            self.bad_epochs = 0;
            lr
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.bad_epochs = 0;
                lr / self.factor
            } else {
                lr
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub l_seq: f64,
    pub l_couple: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub metrics: Vec<MetricsRow>,
    /// Set when training aborted on a non-finite loss; parameters are rolled
    /// back to the last finite epoch.
    pub diverged_at_epoch: Option<usize>,
    pub final_lr: f64,
}

struct BatchLoss {
    total: f64,
    l_seq: f64,
    l_couple: f64,
}

/// One optimisation step over a batch of prepared samples. Returns the loss
/// components; gradients are accumulated in sample order for determinism.
fn train_batch(
    model: &Model<f32>,
    samples: &[(Triplet, Modality)],
    cfg: &ModelConfig,
) -> Result<(BatchLoss, Vec<Option<Tensor<f32>>>)> {
    let forwards: Vec<Result<SampleForward<f32>>> = samples
        .par_iter()
        .map(|(t, mode)| model.forward_sample(t, *mode))
        .collect();
    let mut fwds = Vec::with_capacity(forwards.len());
    for f in forwards {
        fwds.push(f?);
    }

    // batch graph over the per-sample outputs
    let mut batch = Tape::free();
    let mut g_globals = Vec::new();
    let mut c_globals = Vec::new();
    let mut g_ws = Vec::new();
    let mut c_ws = Vec::new();
    for f in &fwds {
        g_globals.push(batch.input(f.tape.val(f.vars.g_global).clone()));
        c_globals.push(batch.input(f.tape.val(f.vars.c_global).clone()));
        g_ws.push(batch.input(f.tape.val(f.vars.g_w).clone()));
        c_ws.push(batch.input(f.tape.val(f.vars.c_w).clone()));
    }
    let (total, l_seq, l_couple) = crate::objectives::total_loss_graph(
        &mut batch,
        &g_globals,
        &c_globals,
        &g_ws,
        &c_ws,
        cfg.beta,
        cfg.tau_seq,
        cfg.tau_couple,
        cfg.symmetric_seq_loss,
        cfg.transpose_coupling,
    );
    let loss = BatchLoss {
        total: batch.val(total).item() as f64,
        l_seq: batch.val(l_seq).item() as f64,
        l_couple: batch.val(l_couple).item() as f64,
    };
    let batch_grads = batch.backward(total);

    // seed each sample graph with its output gradients, in parallel
    let per_sample: Vec<Vec<Option<Tensor<f32>>>> = fwds
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut seeds = Vec::new();
            for (var, leaf) in [
                (f.vars.g_global, g_globals[i]),
                (f.vars.c_global, c_globals[i]),
                (f.vars.g_w, g_ws[i]),
                (f.vars.c_w, c_ws[i]),
            ] {
                if let Some(g) = batch_grads.wrt(leaf) {
                    seeds.push((var, g.clone()));
                }
            }
            f.tape.backward_seeded(&seeds).param_grads
        })
        .collect();

    // fixed-order accumulation
    let mut acc: Vec<Option<Tensor<f32>>> = vec![None; model.store.len()];
    for sample in per_sample {
        for (slot, g) in acc.iter_mut().zip(sample) {
            if let Some(g) = g {
                match slot {
                    Some(t) => {
                        for (a, b) in t.data.iter_mut().zip(&g.data) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
    }
    Ok((loss, acc))
}

/// Forward-only loss over a fixed set (validation); whole clips, no drop.
fn eval_loss(model: &Model<f32>, set: &[Triplet], batch_size: usize, cfg: &ModelConfig) -> Result<BatchLoss> {
    let mut tot = (0.0, 0.0, 0.0);
    let mut batches = 0usize;
    for chunk in set.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let forwards: Vec<Result<SampleForward<f32>>> = chunk
            .par_iter()
            .map(|t| model.forward_sample(t, Modality::Both))
            .collect();
        let mut fwds = Vec::with_capacity(chunk.len());
        for f in forwards {
            fwds.push(f?);
        }
        let mut batch = Tape::free();
        let g_globals: Vec<_> = fwds
            .iter()
            .map(|f| batch.constant(f.tape.val(f.vars.g_global).clone()))
            .collect();
        let c_globals: Vec<_> = fwds
            .iter()
            .map(|f| batch.constant(f.tape.val(f.vars.c_global).clone()))
            .collect();
        let g_ws: Vec<_> = fwds
            .iter()
            .map(|f| batch.constant(f.tape.val(f.vars.g_w).clone()))
            .collect();
        let c_ws: Vec<_> = fwds
            .iter()
            .map(|f| batch.constant(f.tape.val(f.vars.c_w).clone()))
            .collect();
        let (total, l_seq, l_couple) = crate::objectives::total_loss_graph(
            &mut batch,
            &g_globals,
            &c_globals,
            &g_ws,
            &c_ws,
            cfg.beta,
            cfg.tau_seq,
            cfg.tau_couple,
            cfg.symmetric_seq_loss,
            cfg.transpose_coupling,
        );
        tot.0 += batch.val(total).item() as f64;
        tot.1 += batch.val(l_seq).item() as f64;
        tot.2 += batch.val(l_couple).item() as f64;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::Validation("evaluation set has fewer than 2 clips".into()));
    }
    let n = batches as f64;
    Ok(BatchLoss {
        total: tot.0 / n,
        l_seq: tot.1 / n,
        l_couple: tot.2 / n,
    })
}

/// Train in place. The model's fusion/beta/temperature knobs come from
/// `model.cfg`; the optimisation schedule from `cfg`.
pub fn train(
    model: &mut Model<f32>,
    train_set: &[Triplet],
    val_set: &[Triplet],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Validation("training set needs at least 2 clips".into()));
    }
    // pairwise fusion has a single live modality, so drop is disabled there
    let drop_prob = match model.cfg.fusion {
        FusionMode::PairwiseText | FusionMode::PairwiseAudio => 0.0,
        _ => cfg.drop_prob,
    };

    let mut opt = AdamW::new(&model.store, cfg.adam_betas, cfg.weight_decay);
    let mut lr = cfg.lr;
    let mut schedule = PlateauSchedule::new(cfg.plateau_patience, cfg.plateau_factor);
    let mut metrics = Vec::new();
    let mut last_good = model.store.clone();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, &[0x0E9, epoch as u64]));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let mut samples = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let mut rng = Rng::new(derive_seed(cfg.seed, &[0x57E9, epoch as u64, idx as u64]));
                let windowed = match sample_training_window(&train_set[idx], &mut rng, cfg.clip_len_s)
                {
                    Ok(w) => w,
                    Err(Error::ClipTooShort(_)) => continue,
                    Err(e) => return Err(e),
                };
                let mode = sample_drop_mode(&mut rng, drop_prob);
                samples.push((windowed, mode));
            }
            if samples.len() < 2 {
                continue;
            }
            let (loss, grads) = train_batch(model, &samples, &model.cfg)?;
            if !loss.total.is_finite() {
                model.store = last_good.clone();
                return Ok(TrainOutput {
                    metrics,
                    diverged_at_epoch: Some(epoch),
                    final_lr: lr,
                });
            }
            let grads = clip_gradients(grads, cfg.grad_clip);
            opt.step(&mut model.store, &grads, lr);
            epoch_loss.0 += loss.total;
            epoch_loss.1 += loss.l_seq;
            epoch_loss.2 += loss.l_couple;
            steps += 1;
        }
        let steps = steps.max(1) as f64;
        metrics.push(MetricsRow {
            epoch,
            split: "train".into(),
            l_seq: epoch_loss.1 / steps,
            l_couple: epoch_loss.2 / steps,
            total: epoch_loss.0 / steps,
            lr,
        });

        let val = if val_set.len() >= 2 {
            eval_loss(model, val_set, cfg.batch_size, &model.cfg)?
        } else {
            BatchLoss {
                total: epoch_loss.0 / steps,
                l_seq: epoch_loss.1 / steps,
                l_couple: epoch_loss.2 / steps,
            }
        };
        if !val.total.is_finite() {
            model.store = last_good.clone();
            return Ok(TrainOutput {
                metrics,
                diverged_at_epoch: Some(epoch),
                final_lr: lr,
            });
        }
        metrics.push(MetricsRow {
            epoch,
            split: "val".into(),
            l_seq: val.l_seq,
            l_couple: val.l_couple,
            total: val.total,
            lr,
        });
        last_good = model.store.clone();
        lr = schedule.observe(val.total, lr);
    }
    Ok(TrainOutput {
        metrics,
        diverged_at_epoch: None,
        final_lr: lr,
    })
}

fn clip_gradients(
    mut grads: Vec<Option<Tensor<f32>>>,
    max_norm: Option<f64>,
) -> Vec<Option<Tensor<f32>>> {
    let Some(max_norm) = max_norm else {
        return grads;
    };
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for &v in &g.data {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            for v in g.data.iter_mut() {
                *v *= scale;
            }
        }
    }
    grads
}

pub fn write_metrics_jsonl(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Everything needed to resume or reuse a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: Vec<(String, Tensor<f32>)>,
    pub opt_m: Vec<(String, Tensor<f32>)>,
    pub opt_v: Vec<(String, Tensor<f32>)>,
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub val_history: Vec<f64>,
    pub config_json: String,
}

impl Checkpoint {
    pub fn capture(
        model: &Model<f32>,
        opt: Option<&AdamW<f32>>,
        epoch: usize,
        lr: f64,
        val_history: Vec<f64>,
    ) -> Result<Checkpoint> {
        let params: Vec<(String, Tensor<f32>)> = model
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let (opt_m, opt_v, step) = match opt {
            Some(o) => (
                model
                    .store
                    .iter()
                    .enumerate()
                    .map(|(i, (n, _))| (n.to_string(), o.m[i].clone()))
                    .collect(),
                model
                    .store
                    .iter()
                    .enumerate()
                    .map(|(i, (n, _))| (n.to_string(), o.v[i].clone()))
                    .collect(),
                o.step,
            ),
            None => (Vec::new(), Vec::new(), 0),
        };
        Ok(Checkpoint {
            params,
            opt_m,
            opt_v,
            step,
            epoch,
            lr,
            val_history,
            config_json: serde_json::to_string(&model.cfg)
                .map_err(|e| Error::Format(e.to_string()))?,
        })
    }

    pub fn into_model(self) -> Result<Model<f32>> {
        let cfg: ModelConfig = serde_json::from_str(&self.config_json)
            .map_err(|e| Error::Format(format!("bad checkpoint config: {e}")))?;
        let mut model = Model::new(cfg, 0)?;
        for (name, tensor) in self.params {
            model.store.load(&name, tensor)?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
    for (n, t) in &ckpt.params {
        entries.push((format!("param.{n}"), t.clone()));
    }
    for (n, t) in &ckpt.opt_m {
        entries.push((format!("opt.m.{n}"), t.clone()));
    }
    for (n, t) in &ckpt.opt_v {
        entries.push((format!("opt.v.{n}"), t.clone()));
    }
    entries.push((
        "meta.scalars".into(),
        Tensor::from_vec(
            &[3],
            vec![ckpt.step as f32, ckpt.epoch as f32, ckpt.lr as f32],
        ),
    ));
    entries.push((
        "meta.val_history".into(),
        Tensor::from_vec(
            &[ckpt.val_history.len().max(1)],
            if ckpt.val_history.is_empty() {
                vec![f32::NAN]
            } else {
                ckpt.val_history.iter().map(|&v| v as f32).collect()
            },
        ),
    ));
    let cfg_bytes: Vec<f32> = ckpt.config_json.bytes().map(|b| b as f32).collect();
    entries.push((
        "meta.config".into(),
        Tensor::from_vec(&[cfg_bytes.len()], cfg_bytes),
    ));
    container::write_named(path, &entries)
}


pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let entries = container::read_named(path)?;
    let mut params = Vec::new();
    let mut opt_m = Vec::new();
    let mut opt_v = Vec::new();
    let mut step = 0usize;
    let mut epoch = 0usize;
    let mut lr = 0.0f64;
    let mut val_history = Vec::new();
    let mut config_json = String::new();
    for (name, tensor) in entries {
        if let Some(p) = name.strip_prefix("param.") {
            params.push((p.to_string(), tensor));
        } else if let Some(p) = name.strip_prefix("opt.m.") {
            opt_m.push((p.to_string(), tensor));
        } else if let Some(p) = name.strip_prefix("opt.v.") {
            opt_v.push((p.to_string(), tensor));
        } else if name == "meta.scalars" {
            if tensor.numel() != 3 {
                return Err(Error::Format("meta.scalars must hold 3 values".into()));
            }
            step = tensor.data[0] as usize;
            epoch = tensor.data[1] as usize;
            lr = tensor.data[2] as f64;
        } else if name == "meta.val_history" {
            val_history = tensor
                .data
                .iter()
                .filter(|v| v.is_finite())
                .map(|&v| v as f64)
                .collect();
        } else if name == "meta.config" {
            let bytes: Vec<u8> = tensor.data.iter().map(|&v| v as u8).collect();
            config_json = String::from_utf8(bytes)
                .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        } else {
            return Err(Error::Format(format!("unknown checkpoint entry {name}")));
        }
    }
    if config_json.is_empty() {
        return Err(Error::Format("checkpoint is missing its config entry".into()));
    }
    Ok(Checkpoint {
        params,
        opt_m,
        opt_v,
        step,
        epoch,
        lr,
        val_history,
        config_json,
    })
}
