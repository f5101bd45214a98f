use std::time::Instant;
use trimodal_core::corpus::{generate_corpus, GenConfig};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::fusion::Modality;
use trimodal_core::model::Model;

fn main() {
    let gen = GenConfig {
        n_samples: 32, n_speakers: 10, vocab_size: 50,
        words_per_clip: (4, 6), ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let tmean: f64 = corpus.iter().map(|c| c.gesture.frames() as f64).sum::<f64>() / 32.0;
    println!("mean frames {tmean:.1}, mean dur {:.2}s", tmean / 25.0);
    let model = Model::<f32>::new(ModelConfig::default(), 1).unwrap();
    println!("params: {}", model.store.numel());

    // forward only
    let t0 = Instant::now();
    for c in corpus.iter().take(8) {
        let _ = model.forward_sample(c, Modality::Both).unwrap();
    }
    println!("fwd/clip: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / 8.0);

    // forward + full backward through a simple scalar
    let t0 = Instant::now();
    for c in corpus.iter().take(8) {
        let f = model.forward_sample(c, Modality::Both).unwrap();
        let mut tape = f.tape;
        let m = tape.mean_rows(f.vars.g_w);
        let s = tape.mean_all(m);
        let _ = tape.backward(s);
    }
    println!("fwd+bwd/clip: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / 8.0);
}
