use std::time::Instant;

use ndarray::Array4;
use transcycle::nn::Conv2d;

fn time_conv(name: &str, ic: usize, oc: usize, k: usize, s: usize, p: usize, hw: usize, b: usize) {
    let mut conv = Conv2d::<f32>::new("t", ic, oc, k, s, p, true);
    conv.weight.value.fill(0.01);
    let x = Array4::<f32>::from_elem((b, ic, hw, hw), 0.3);
    let n = 10;
    let t = Instant::now();
    for _ in 0..n {
        let (_y, _c) = conv.forward(x.clone());
    }
    let fwd = t.elapsed().as_secs_f64() / n as f64;
    let (y, _) = conv.forward(x.clone());
    let t = Instant::now();
    for _ in 0..n {
        let (_yy, cache) = conv.forward(x.clone());
        let _ = conv.backward(cache, &y, true);
    }
    let both = t.elapsed().as_secs_f64() / n as f64;
    let flops = {
        let oh = (hw + 2 * p - k) / s + 1;
        (b * oh * oh * oc * ic * k * k * 2) as f64
    };
    println!(
        "{name}: fwd {:.1} ms ({:.1} GF/s), fwd+bwd {:.1} ms",
        fwd * 1e3,
        flops / fwd / 1e9,
        both * 1e3
    );
}

#[test]
#[ignore]
fn bench_layers() {
    let b = 16;
    time_conv("in  3->12 k7 s1 @68", 3, 12, 7, 1, 3, 68, b);
    time_conv("out 12->3 k7 s1 @68", 12, 3, 7, 1, 3, 68, b);
    time_conv("down 12->24 k3 s2 @68", 12, 24, 3, 2, 1, 68, b);
    time_conv("down 24->48 k3 s2 @34", 24, 48, 3, 2, 1, 34, b);
    time_conv("res 48->48 k3 s1 @17", 48, 48, 3, 1, 1, 17, b);
    time_conv("stem 3->12 k3 s1 @68", 3, 12, 3, 1, 1, 68, b);
}
