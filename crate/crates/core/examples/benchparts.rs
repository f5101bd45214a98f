use std::time::Instant;
use trimodal_core::corpus::{generate_corpus, GenConfig};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::model::{encode, Model};

fn main() {
    let gen = GenConfig {
        n_samples: 8, vocab_size: 50, words_per_clip: (4, 6), ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let model = Model::<f32>::new(ModelConfig::default(), 1).unwrap();

    let t0 = Instant::now();
    for c in &corpus { let _ = encode::encode_gesture(&model, &c.gesture).unwrap(); }
    println!("gesture fwd/clip: {:.1} ms", t0.elapsed().as_secs_f64() * 125.0);

    let t0 = Instant::now();
    for c in &corpus { let _ = encode::encode_speech(&model, &c.speech, &c.transcript).unwrap(); }
    println!("speech  fwd/clip: {:.1} ms", t0.elapsed().as_secs_f64() * 125.0);

    let t0 = Instant::now();
    for c in &corpus { let _ = encode::encode_text(&model, &c.transcript).unwrap(); }
    println!("text    fwd/clip: {:.1} ms", t0.elapsed().as_secs_f64() * 125.0);
}
