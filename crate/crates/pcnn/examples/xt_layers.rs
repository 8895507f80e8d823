//! Applies crosstalk to one layer range at a time and reports the accuracy
//! on a test subset; a scratch tool for locating crosstalk sensitivity.

use pcnn::eval::evaluate;
use pcnn::idx::load_idx;
use pcnn::network::{effective_theta, Mode, NetworkConfig, NetworkSpec};
use pcnn::photonic::{CrosstalkModel, Layer, ParameterLayout};
use pcnn::twin::load_checkpoint;

fn main() {
    let dir = std::env::var("PCNN_DATA_DIR").unwrap_or_else(|_| "data/mnist".into());
    let dir = std::path::Path::new(&dir);
    let data = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))
        .unwrap()
        .subset(1000);
    let samples = data.samples();
    let spec = NetworkSpec::standard().unwrap();
    let config = NetworkConfig::<f64>::default();
    let ckpt = std::env::args().nth(1).expect("checkpoint path");
    let theta = load_checkpoint::<f64>(std::path::Path::new(&ckpt)).unwrap();
    let xt: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);

    let clean = evaluate(&spec, &config, &theta, &samples, Mode::Twin, None).unwrap();
    println!("clean            acc {:.4}", clean.accuracy);

    let model = CrosstalkModel::nearest_neighbor(xt).unwrap();
    let full = effective_theta(&theta, Mode::Hardware, Some(&model)).unwrap().into_owned();
    let layout = ParameterLayout;
    for layer in Layer::ALL {
        let r = layout.range(layer);
        let mut hybrid = theta.clone();
        hybrid[r.clone()].copy_from_slice(&full[r.clone()]);
        let res = evaluate(&spec, &config, &hybrid, &samples, Mode::Twin, None).unwrap();
        println!("{layer:?} only      acc {:.4}", res.accuracy);
    }
    let all = evaluate(&spec, &config, &full, &samples, Mode::Twin, None).unwrap();
    println!("all layers       acc {:.4}", all.accuracy);

    // Gaussian phase-noise sensitivity, per layer and global, at equal sigma.
    if let Ok(s) = std::env::var("PCNN_NOISE_SIGMA") {
        use rand::prelude::*;
        let sigma: f64 = s.parse().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        // Box-Muller; avoids a rand_distr dependency for a scratch tool.
        let noise: Vec<f64> = (0..theta.len())
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        for layer in Layer::ALL {
            let r = layout.range(layer);
            let mut pert = theta.clone();
            for i in r {
                pert[i] += noise[i];
            }
            let res = evaluate(&spec, &config, &pert, &samples, Mode::Twin, None).unwrap();
            println!("noise {sigma} {layer:?} acc {:.4}", res.accuracy);
        }
        let pert: Vec<f64> = theta.iter().zip(&noise).map(|(t, n)| t + n).collect();
        let res = evaluate(&spec, &config, &pert, &samples, Mode::Twin, None).unwrap();
        println!("noise {sigma} all    acc {:.4}", res.accuracy);
    }

    // Counterfactual: if the initialization's leakage cancelled exactly, only
    // the training drift would leak. theta_eff = theta + xt * A * (theta - theta0).
    if let Ok(seed) = std::env::var("PCNN_DRIFT_SEED") {
        let theta0 = pcnn::twin::initial_theta::<f64>(seed.parse().unwrap());
        let drift: Vec<f64> = theta.iter().zip(&theta0).map(|(t, t0)| t - t0).collect();
        let leaked = pcnn::photonic::apply_crosstalk(&drift, &model);
        let eff: Vec<f64> = theta
            .iter()
            .zip(drift.iter().zip(&leaked))
            .map(|(t, (d, l))| t + (l - d))
            .collect();
        let res = evaluate(&spec, &config, &eff, &samples, Mode::Twin, None).unwrap();
        println!("drift-only leak  acc {:.4}", res.accuracy);
        let rms = (drift.iter().map(|d| d * d).sum::<f64>() / drift.len() as f64).sqrt();
        println!("drift rms {rms:.4}");
    }
}
