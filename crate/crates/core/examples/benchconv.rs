use std::time::Instant;
use trimodal_core::autodiff::Tape;
use trimodal_core::params::ParamStore;
use trimodal_core::rng::Rng;
use trimodal_core::tensor::Tensor;

fn rnd(rng: &mut Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.normal() as f32).collect())
}

fn main() {
    let mut rng = Rng::new(1);
    let layers: Vec<([usize;3],[usize;4],(usize,usize),(usize,usize))> = vec![
        ([1,80,272],[4,1,5,5],(1,1),(2,2)),
        ([4,80,272],[8,4,3,3],(2,2),(1,1)),
        ([8,40,136],[16,8,3,3],(2,2),(1,1)),
        ([16,20,68],[32,16,3,3],(3,1),(1,1)),
        ([32,7,68],[32,32,3,3],(3,1),(1,1)),
        ([32,3,68],[32,32,1,1],(3,1),(0,0)),
    ];
    let store = ParamStore::<f32>::new();
    for (i,(xs, ws, stride, pad)) in layers.iter().enumerate() {
        let x = rnd(&mut rng, xs);
        let w = rnd(&mut rng, ws);
        let b = rnd(&mut rng, &[ws[0]]);
        let reps = 50;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new(&store);
            let xv = tape.input(x.clone());
            let wv = tape.input(w.clone());
            let bv = tape.input(b.clone());
            let c = tape.conv2d(xv, wv, bv, *stride, *pad);
            let m = tape.mean_all(c);
            let _ = tape.backward(m);
        }
        println!("layer {i}: {:.2} ms fwd+bwd", t0.elapsed().as_secs_f64()*1000.0/reps as f64);
    }
}
