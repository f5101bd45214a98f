use trimodal_core::corpus::{generate_corpus, split_corpus, GenConfig, Triplet};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::model::Model;
use trimodal_core::trainer::{train, TrainConfig};

fn main() {
    let gen = GenConfig {
        n_samples: 64, n_speakers: 8, vocab_size: 24, d_v: 16, d_mel: 20,
        gesture_motif_dim: 4, words_per_clip: (3, 4), gestured_fraction: 0.8,
        noise_sigma: 0.15, ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let (train_ids, val_ids, _) = split_corpus(&corpus, (0.85, 0.15, 0.0), 3, false).unwrap();
    let pick = |ids: &[String]| -> Vec<Triplet> {
        corpus.iter().filter(|t| ids.contains(&t.id)).cloned().collect()
    };
    let (tr, va) = (pick(&train_ids), pick(&val_ids));
    let mcfg = ModelConfig {
        d: 32, d_v: 16, d_mel: 20, gesture_layers: 2, text_layers: 1,
        attn_heads: 8, vocab_size: 24, ..ModelConfig::default()
    };
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
    let drop: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let patience: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let mut model = Model::<f32>::new(mcfg, 5).unwrap();
    let tcfg = TrainConfig {
        lr, batch_size: 8, epochs: 30, clip_len_s: (1.0, 6.0), seed: 7,
        drop_prob: drop, plateau_patience: patience, ..TrainConfig::default()
    };
    let out = train(&mut model, &tr, &va, &tcfg).unwrap();
    for m in &out.metrics {
        if m.split == "train" {
            println!("epoch {:2} train total {:.4} seq {:.4} couple {:.4} lr {:.2e}", m.epoch, m.total, m.l_seq, m.l_couple, m.lr);
        }
    }
}
