use std::collections::BTreeMap;
use std::time::Instant;
use trimodal_core::corpus::{generate_corpus, split_corpus, GenConfig, Triplet};
use trimodal_core::encoders::{FusionMode, ModelConfig};
use trimodal_core::fusion::Modality;
use trimodal_core::model::Model;
use trimodal_core::tasks::{
    build_retrieval_manifest, build_spot_manifest, compute_embeddings, eval_retrieval,
    eval_spotting, Direction, SpotRule, SPOT_DELTA,
};
use trimodal_core::trainer::{train, TrainConfig};

fn gen_cfg(seed: u64) -> GenConfig {
    GenConfig {
        n_samples: 400,
        n_speakers: 18,
        vocab_size: 30,
        d_v: 32,
        d_mel: 20,
        gesture_motif_dim: 6,
        words_per_clip: (3, 5),
        gestured_fraction: 0.6,
        gesture_offset_frames: (-8, 8),
        noise_sigma: 0.25,
        stress_fraction: 0.25,
        text_collision_fraction: 0.7,
        speech_collision_fraction: 0.3,
        seed,
        ..GenConfig::default()
    }
}

fn split_sets(corpus: &[Triplet], seed: u64) -> (Vec<Triplet>, Vec<Triplet>, Vec<String>) {
    let (a, b, c) = split_corpus(corpus, (0.8, 0.1, 0.1), seed, false).unwrap();
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let pick = |ids: &[String]| ids.iter().map(|id| (*by_id.get(id.as_str()).unwrap()).clone()).collect();
    (pick(&a), pick(&b), c)
}

fn run(corpus: &[Triplet], seed: u64, beta: f64, fusion: FusionMode, lr: f64, epochs: usize) -> (f64, f64) {
    let (tr, va, test_ids) = split_sets(corpus, seed);
    let mcfg = ModelConfig {
        d: 32, d_v: 32, d_mel: 20, gesture_layers: 2, text_layers: 1,
        attn_heads: 8, vocab_size: 30, beta, fusion,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new(mcfg, seed).unwrap();
    let tcfg = TrainConfig {
        lr, batch_size: 24, epochs, clip_len_s: (1.0, 10.0), seed,
        drop_prob: 0.5, plateau_patience: 4, ..TrainConfig::default()
    };
    let out = train(&mut model, &tr, &va, &tcfg).unwrap();
    assert!(out.diverged_at_epoch.is_none());
    let manifest = build_retrieval_manifest(&test_ids, Direction::ContentToGesture, Modality::Both);
    let embs = compute_embeddings(&model, corpus, &test_ids, Modality::Both).unwrap();
    let ret = eval_retrieval(&embs, &manifest, &[5]).unwrap();
    let spots = build_spot_manifest(corpus, &test_ids, seed);
    let spot = eval_spotting(&embs, &spots, 10, SPOT_DELTA, SpotRule::PaddedPeak).unwrap();
    (ret.metrics["MR"], spot.metrics["accuracy"])
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4e-4);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let t0 = Instant::now();
    for seed in [31u64, 32, 33] {
        let corpus = generate_corpus(&gen_cfg(seed)).unwrap();
        for (name, beta, fusion) in [
            ("seq   ", 1.0, FusionMode::Concat),
            ("couple", 0.0, FusionMode::Concat),
            ("both  ", 0.5, FusionMode::Concat),
            ("avg   ", 0.5, FusionMode::Avg),
            ("pw-txt", 0.5, FusionMode::PairwiseText),
            ("pw-aud", 0.5, FusionMode::PairwiseAudio),
        ] {
            let (mr, spot) = run(&corpus, seed, beta, fusion, lr, epochs);
            println!("[{:5.0}s] seed {seed} {name}: MR {mr:5.1} spot {spot:.3}", t0.elapsed().as_secs_f64());
        }
    }
}
