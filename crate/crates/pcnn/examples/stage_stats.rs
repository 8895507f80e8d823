//! Prints per-stage signal statistics for a freshly initialized network on
//! a few MNIST images; a scratch tool for choosing gains and scales.

use pcnn::idx::load_idx;
use pcnn::network::{forward_trace, NetworkConfig, NetworkSpec};
use pcnn::twin::initial_theta;

fn stats(label: &str, values: impl Iterator<Item = f64>) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    let over = v.iter().filter(|&&x| x > 1.0).count();
    println!("{label:16} mean {mean:10.5}  min {min:10.6}  max {max:10.5}  >1: {over}/{}", v.len());
}

fn main() {
    let dir = std::env::var("PCNN_DATA_DIR").unwrap_or_else(|_| "data/mnist".into());
    let dir = std::path::Path::new(&dir);
    let data = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))
        .unwrap()
        .subset(5);
    let spec = NetworkSpec::standard().unwrap();
    let config = NetworkConfig::<f64>::default();
    let theta = match std::env::args().nth(1) {
        Some(ckpt) => pcnn::twin::load_checkpoint(std::path::Path::new(&ckpt)).unwrap(),
        None => initial_theta::<f64>(0),
    };

    for (i, image) in data.images.iter().enumerate() {
        println!("image {i}");
        let t = forward_trace(&spec, &config, &theta, image).unwrap();
        stats("conv1 |z|^2", t.conv1_out.data().iter().map(|z| z.norm_sqr()));
        stats("pool1 |z|^2", t.pool1.data().iter().map(|z| z.norm_sqr()));
        stats("pw |z|^2", t.pw_out.data().iter().map(|z| z.norm_sqr()));
        stats("pool2 |z|^2", t.pool2.data().iter().map(|z| z.norm_sqr()));
        stats("oeo y", t.oeo_out.iter().cloned());
        stats("fc1 comb |z|^2", t.fc1_combined.iter().map(|z| z.norm_sqr()));
        stats("nofu out |z|^2", t.nofu_out.iter().map(|z| z.norm_sqr()));
        stats("scores", t.scores.iter().cloned());
    }
}
