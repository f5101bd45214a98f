use trimodal_core::autodiff::Tape;
use trimodal_core::corpus::{generate_corpus, GenConfig};
use trimodal_core::encoders::ModelConfig;
use trimodal_core::fusion::Modality;
use trimodal_core::model::Model;
use trimodal_core::objectives::total_loss_graph;
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
        ..ModelConfig::default()
    };
    let model = Model::<f32>::new(cfg.clone(), 5).unwrap();

    let sets: Vec<_> = corpus.iter().map(|t| model.embed_sample(t, Modality::Both, false).unwrap()).collect();
    let mut cs = Vec::new();
    for i in 0..8 { for j in 0..i { cs.push(cosine(&sets[i].g_global, &sets[j].g_global).unwrap()); } }
    println!("g_global pairwise cos: mean {:.4} min {:.4} max {:.4}",
        cs.iter().sum::<f32>()/cs.len() as f32,
        cs.iter().cloned().fold(f32::MAX, f32::min),
        cs.iter().cloned().fold(f32::MIN, f32::max));
    let g = &sets[0].g_t;
    println!("g_t row0 vs mid cos: {:.4}", cosine(g.row(0), g.row(g.rows()/2)).unwrap());

    // one batch loss + gradient norms grouped by prefix
    let fwds: Vec<_> = corpus.iter().map(|t| model.forward_sample(t, Modality::Both).unwrap()).collect();
    let mut batch = Tape::free();
    let gg: Vec<_> = fwds.iter().map(|f| batch.input(f.tape.val(f.vars.g_global).clone())).collect();
    let cg: Vec<_> = fwds.iter().map(|f| batch.input(f.tape.val(f.vars.c_global).clone())).collect();
    let gw: Vec<_> = fwds.iter().map(|f| batch.input(f.tape.val(f.vars.g_w).clone())).collect();
    let cw: Vec<_> = fwds.iter().map(|f| batch.input(f.tape.val(f.vars.c_w).clone())).collect();
    let (total, lseq, lcpl) = total_loss_graph(&mut batch, &gg, &cg, &gw, &cw, 0.5, 10.0, 10.0, false, false);
    println!("loss total {:.4} seq {:.4} couple {:.4}",
        batch.val(total).item(), batch.val(lseq).item(), batch.val(lcpl).item());
    let bg = batch.backward(total);
    let mut acc: Vec<Option<trimodal_core::tensor::Tensor<f32>>> = vec![None; model.store.len()];
    for (i, f) in fwds.iter().enumerate() {
        let mut seeds = Vec::new();
        for (var, leaf) in [(f.vars.g_global, gg[i]), (f.vars.c_global, cg[i]), (f.vars.g_w, gw[i]), (f.vars.c_w, cw[i])] {
            if let Some(gr) = bg.wrt(leaf) { seeds.push((var, gr.clone())); }
        }
        for (slot, gr) in acc.iter_mut().zip(f.tape.backward_seeded(&seeds).param_grads) {
            if let Some(gr) = gr {
                match slot {
                    Some(t) => for (a, b) in t.data.iter_mut().zip(&gr.data) { *a += b; },
                    None => *slot = Some(gr),
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
    for (i, gr) in acc.iter().enumerate() {
        let name = model.store.name(i);
        let prefix = name.split('.').next().unwrap().to_string();
        if let Some(gr) = gr {
            let n2: f64 = gr.data.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let e = groups.entry(prefix).or_insert((0.0, 0));
            e.0 += n2;
            e.1 += gr.numel();
        }
    }
    for (prefix, (n2, cnt)) in groups {
        println!("grad rms {prefix:8}: {:.3e} over {cnt} params", (n2 / cnt as f64).sqrt());
    }
}
