use std::time::Instant;

use ndarray::Array4;
use transcycle::models::{init_parameters, Classifier, Discriminator, Generator};
use transcycle::nn::Mode;
use transcycle::rng::SeedStreams;

#[test]
#[ignore]
fn bench_forward_backward() {
    let streams = SeedStreams::new(0);
    let b = 16usize;
    let x = Array4::<f32>::from_elem((b, 3, 68, 68), 0.3);

    for (gw, res) in [(12usize, 2usize), (16, 2), (16, 3)] {
        let mut g = Generator::<f32>::new(3, gw, res);
        init_parameters(&mut g, &mut streams.stream("g"));
        let t = Instant::now();
        let n = 3;
        for _ in 0..n {
            let (y, cache) = g.forward(&x).unwrap();
            let _ = g.backward(cache, &y, true);
        }
        let dt = t.elapsed().as_secs_f64() / n as f64;
        println!("generator w={gw} res={res}: fwd+bwd {:.1} ms/batch{b} = {:.2} ms/sample", dt*1e3, dt*1e3/b as f64);
    }
    for cw in [12usize, 16] {
        let mut c = Classifier::<f32>::new(3, cw, 10);
        init_parameters(&mut c, &mut streams.stream("c"));
        let t = Instant::now();
        let n = 5;
        for _ in 0..n {
            let (y, cache) = c.forward(&x, Mode::Train).unwrap();
            let _ = c.backward(cache, &y, true);
        }
        let dt = t.elapsed().as_secs_f64() / n as f64;
        println!("classifier w={cw}: fwd+bwd {:.1} ms/batch{b} = {:.2} ms/sample", dt*1e3, dt*1e3/b as f64);
    }
    let mut d = Discriminator::<f32>::new(3, 16);
    init_parameters(&mut d, &mut streams.stream("d"));
    let t = Instant::now();
    let n = 10;
    for _ in 0..n {
        let (y, cache) = d.forward(&x).unwrap();
        let _ = d.backward(cache, &y, true);
    }
    let dt = t.elapsed().as_secs_f64() / n as f64;
    println!("discriminator w=16: fwd+bwd {:.1} ms/batch{b} = {:.2} ms/sample", dt*1e3, dt*1e3/b as f64);
}
