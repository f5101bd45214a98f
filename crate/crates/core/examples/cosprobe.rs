use trimodal_core::corpus::{generate_corpus, GenConfig};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::fusion::Modality;
use trimodal_core::model::Model;
use trimodal_core::tensor::cosine;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let layers: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(6);
    let d: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(64);
    let gen = GenConfig {
        n_samples: 8, vocab_size: 50, words_per_clip: (4, 6),
        noise_sigma: 0.25, seed: 11, ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let cfg = ModelConfig {
        d, gesture_layers: layers, text_layers: (layers / 2).max(1),
        attn_heads: 8, ..ModelConfig::default()
    };
    let model = Model::<f32>::new(cfg, 5).unwrap();
    let sets: Vec<_> = corpus.iter()
        .map(|t| model.embed_sample(t, Modality::Both, false).unwrap())
        .collect();
    let stats = |name: &str, get: &dyn Fn(usize) -> Vec<f32>| {
        let mut cs = Vec::new();
        for i in 0..8 {
            for j in 0..i {
                cs.push(cosine(&get(i), &get(j)).unwrap());
            }
        }
        let mean: f32 = cs.iter().sum::<f32>() / cs.len() as f32;
        let min = cs.iter().cloned().fold(f32::MAX, f32::min);
        let max = cs.iter().cloned().fold(f32::MIN, f32::max);
        println!("{name}: pairwise cos mean {mean:.5} min {min:.5} max {max:.5}");
    };
    stats("g_global", &|i| sets[i].g_global.clone());
    stats("c_global", &|i| sets[i].c_global.clone());
    // frame-level variation within one clip
    let g = &sets[0].g_t;
    let c01 = cosine(g.row(0), g.row(g.rows()/2)).unwrap();
    println!("g_t row0 vs mid: cos {c01:.5}");
}
