use std::time::Instant;
use trimodal_core::autodiff::Tape;
use trimodal_core::corpus::{generate_corpus, GenConfig};
use trimodal_core::encoders::{transcript_tokens, word_frame_segments, ModelConfig};
use trimodal_core::model::Model;
use trimodal_core::tensor::{Real, Tensor};

fn main() {
    let gen = GenConfig { n_samples: 8, vocab_size: 50, words_per_clip: (4, 6), ..GenConfig::default() };
    let corpus = generate_corpus(&gen).unwrap();
    let model = Model::<f32>::new(ModelConfig::default(), 1).unwrap();
    let c = &corpus[0];
    let reps = 10;

    // full pipeline baseline
    let t0 = Instant::now();
    for _ in 0..reps {
        let f = model.forward_sample(c, trimodal_core::fusion::Modality::Both).unwrap();
        let mut tape = f.tape;
        let m = tape.mean_rows(f.vars.g_w);
        let s = tape.mean_all(m);
        let _ = tape.backward(s);
    }
    println!("full fwd+bwd: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // forward only timing per branch is known; now time backward-only via repeated builds
    let t0 = Instant::now();
    for _ in 0..reps {
        let f = model.forward_sample(c, trimodal_core::fusion::Modality::Both).unwrap();
        drop(f);
    }
    println!("full fwd only: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let _ = (transcript_tokens(&c.transcript, 50), word_frame_segments(&c.transcript, 25.0, 10));
    let _: Tensor<f32> = Tensor::zeros(&[1,1]);
    let _ = f32::ZERO;
    let _ = Tape::<f32>::free();
}
