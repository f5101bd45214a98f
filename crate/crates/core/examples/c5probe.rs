use std::collections::BTreeMap;
use std::time::Instant;
use trimodal_core::corpus::{generate_corpus, split_corpus, GenConfig, Triplet};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::fusion::Modality;
use trimodal_core::model::Model;
use trimodal_core::tasks::{
    build_asd_manifest, build_retrieval_manifest, build_spot_manifest, compute_embeddings,
    eval_asd, eval_retrieval, eval_spotting, gesture_active_ids, Direction, SpotRule, SPOT_DELTA,
};
use trimodal_core::trainer::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let tau_couple: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10.0);
    let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let glayers: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(6);
    let d: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(64);
    let noise: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.25);
    let speech_gain: f64 = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let t_start = Instant::now();
    let gen = GenConfig {
        n_samples: n,
        n_speakers: 40,
        vocab_size: 50,
        words_per_clip: (4, 6),
        gestured_fraction: 0.6,
        gesture_offset_frames: (-8, 8),
        noise_sigma: noise,
        speech_gain,
        stress_fraction: 0.25,
        text_collision_fraction: 0.2,
        speech_collision_fraction: 0.2,
        seed: 11,
        ..GenConfig::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    println!("[{:6.1}s] corpus: {} clips", t_start.elapsed().as_secs_f64(), corpus.len());

    let (train_ids, val_ids, test_ids) = split_corpus(&corpus, (0.8, 0.1, 0.1), 3, false).unwrap();
    // gallery: held-out clips (test first, then val) curated for gesture
    // activity, fixed at 200
    let mut held_out = test_ids.clone();
    held_out.extend(val_ids.iter().cloned());
    let active = gesture_active_ids(&corpus, &held_out, 2);
    let test_ids: Vec<String> = active.into_iter().take(200).collect();
    println!("gallery of {} gesture-active clips", test_ids.len());
    let by_id: BTreeMap<&str, &Triplet> = corpus.iter().map(|t| (t.id.as_str(), t)).collect();
    let pick = |ids: &[String]| -> Vec<Triplet> {
        ids.iter().map(|id| (*by_id.get(id.as_str()).unwrap()).clone()).collect()
    };
    let (tr, va) = (pick(&train_ids), pick(&val_ids));

    let symmetric: bool = args.get(9).map(|s| s == "sym").unwrap_or(false);
    let mcfg = ModelConfig {
        tau_couple,
        d,
        gesture_layers: glayers,
        text_layers: (glayers / 2).max(1),
        symmetric_seq_loss: symmetric,
        ..ModelConfig::default()
    };
    let mut model = Model::<f32>::new(mcfg, 5).unwrap();
    let tcfg = TrainConfig {
        lr,
        batch_size: 32,
        epochs,
        clip_len_s: (1.5, 10.0),
        seed: 7,
        drop_prob: 0.5,
        plateau_patience: 3,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &tr, &va, &tcfg).unwrap();
    for m in &out.metrics {
        if m.split == "val" {
            println!("  epoch {:2} val total {:.4} seq {:.4} couple {:.4} lr {:.2e}", m.epoch, m.total, m.l_seq, m.l_couple, m.lr);
        }
    }
    println!("[{:6.1}s] trained", t_start.elapsed().as_secs_f64());

    // retrieval on the held-out gallery
    let ret = build_retrieval_manifest(&test_ids, Direction::ContentToGesture, Modality::Both);
    let embs = compute_embeddings(&model, &corpus, &test_ids, Modality::Both).unwrap();
    let report = eval_retrieval(&embs, &ret, &[1, 5, 10, 25, 50]).unwrap();
    println!(
        "[{:6.1}s] retrieval R@1 {:.3} R@5 {:.3} MR {}",
        t_start.elapsed().as_secs_f64(),
        report.metrics["R@1"],
        report.metrics["R@5"],
        report.metrics["MR"]
    );

    // unimodal retrieval (criterion 8)
    for (name, m) in [("text", Modality::TextOnly), ("audio", Modality::AudioOnly)] {
        let embs_m = compute_embeddings(&model, &corpus, &test_ids, m).unwrap();
        let rep = eval_retrieval(&embs_m, &ret, &[1, 5]).unwrap();
        println!(
            "  {name}-only R@1 {:.3} R@5 {:.3}",
            rep.metrics["R@1"], rep.metrics["R@5"]
        );
    }

    // spotting with planted ground truth
    let spots = build_spot_manifest(&corpus, &test_ids, 11);
    let srep = eval_spotting(&embs, &spots, 10, SPOT_DELTA, SpotRule::PaddedPeak).unwrap();
    println!(
        "[{:6.1}s] spotting acc {:.3} (stressed {:.3} / unstressed {:.3}) on {} items",
        t_start.elapsed().as_secs_f64(),
        srep.metrics["accuracy"],
        srep.metrics.get("accuracy_stressed").copied().unwrap_or(-1.0),
        srep.metrics.get("accuracy_unstressed").copied().unwrap_or(-1.0),
        srep.metrics["items"]
    );

    // 2-speaker asd
    let groups = build_asd_manifest(&corpus, &test_ids, 2, 11).unwrap();
    let arep = eval_asd(&embs, &groups).unwrap();
    println!(
        "[{:6.1}s] asd-2 acc {:.3} on {} groups",
        t_start.elapsed().as_secs_f64(),
        arep.metrics["accuracy"],
        arep.metrics["groups"]
    );
}
