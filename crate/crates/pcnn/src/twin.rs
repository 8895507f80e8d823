//! Differentiable digital twin: cross-entropy loss, exact reverse-mode
//! gradients of all 2,132 phases through the forward math, Adam pre-training,
//! phase transfer, parity verification, and the checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{
    attenuator_grad_bank, forward_trace, network_forward, ForwardTrace, Mode, NetworkConfig,
    NetworkSpec, FC1_BANK, N_CLASSES, NOFU_RINGS, OEO_DIM,
};
use crate::photonic::{mesh_backward, TOTAL_PARAMS};
use crate::scalar::{lit, Scalar};

/// Per-epoch training record. Kept at f64 regardless of the model scalar.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Default softmax scale applied to raw intensities before the loss.
pub fn default_s_scale<S: Scalar>() -> S {
    lit(10.0)
}

/// Cross entropy of scaled intensity scores: -log softmax(s_scale * scores)[label].
pub fn loss<S: Scalar>(scores: &[S; N_CLASSES], label: usize, s_scale: S) -> S {
    let logits: Vec<S> = scores.iter().map(|&s| s * s_scale).collect();
    let max = logits.iter().cloned().fold(logits[0], S::max);
    let sum_exp: S = logits.iter().map(|&l| (l - max).exp()).sum();
    -(logits[label] - max - sum_exp.ln())
}

/// dL/dscores for the cross-entropy loss above.
pub fn loss_grad<S: Scalar>(scores: &[S; N_CLASSES], label: usize, s_scale: S) -> [S; N_CLASSES] {
    let logits: Vec<S> = scores.iter().map(|&s| s * s_scale).collect();
    let max = logits.iter().cloned().fold(logits[0], S::max);
    let sum_exp: S = logits.iter().map(|&l| (l - max).exp()).sum();
    let mut grad = [S::zero(); N_CLASSES];
    for k in 0..N_CLASSES {
        let p = (logits[k] - max).exp() / sum_exp;
        let indicator = if k == label { S::one() } else { S::zero() };
        grad[k] = s_scale * (p - indicator);
    }
    grad
}

/// Exact reverse-mode gradient of loss(network_forward(theta, image), label)
/// in twin mode, for every entry of the 2,132-parameter vector.
pub fn backward<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    image: &[u8],
    label: usize,
    s_scale: S,
) -> Result<(S, Vec<S>)> {
    let (l, g, _) = backward_scored(spec, config, theta, image, label, s_scale)?;
    Ok((l, g))
}

/// Like `backward` but also hands back the forward scores, so training can
/// track accuracy without a second forward pass.
pub fn backward_scored<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    image: &[u8],
    label: usize,
    s_scale: S,
) -> Result<(S, Vec<S>, [S; N_CLASSES])> {
    let trace = forward_trace(spec, config, theta, image)?;
    let loss_value = loss(&trace.scores, label, s_scale);
    if !loss_value.is_finite() {
        return Err(Error::Numeric("non-finite loss at the readout".into()));
    }
    let grad = backward_from_trace(spec, config, theta, &trace, label, s_scale)?;
    Ok((loss_value, grad, trace.scores))
}

fn backward_from_trace<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    trace: &ForwardTrace<S>,
    label: usize,
    s_scale: S,
) -> Result<Vec<S>> {
    let zero = Complex::new(S::zero(), S::zero());
    let mut grad = vec![S::zero(); TOTAL_PARAMS];

    // Readout and FC2 mesh.
    let dscores = loss_grad(&trace.scores, label, s_scale);
    let mut g_fc2_out = vec![zero; 12];
    for k in 0..N_CLASSES {
        // d|a|^2 -> complex adjoint 2 a dL/ds
        g_fc2_out[k] = trace.fc2_out[k] * (dscores[k] + dscores[k]);
    }
    mesh_backward(
        &spec.fc2_mesh,
        spec.fc2_mesh_phases(theta),
        &trace.fc2_combined,
        &mut g_fc2_out,
        &mut grad[1988..2132],
    )?;
    let mut g_nofu_out = vec![zero; NOFU_RINGS];
    spec.fc2_combiner.adjoint(&g_fc2_out, &mut g_nofu_out);

    // NOFU rings.
    let nofu = spec.nofu_params(theta);
    let globals = &config.nofu;
    let half = lit::<S>(0.5);
    let mut g_fc1_out = vec![zero; NOFU_RINGS];
    for i in 0..NOFU_RINGS {
        let z = trace.fc1_out[i];
        let g = g_nofu_out[i];
        let alpha_phase = nofu[2 * i];
        let delta = nofu[2 * i + 1];
        let alpha = (alpha_phase * half).sin().powi(2);
        let r2 = z.norm_sqr();
        let clipped = alpha * r2 > globals.clip_power;
        let p = if clipped { globals.clip_power } else { alpha * r2 };
        let d = delta - globals.carrier_coeff * p;
        let wl = globals.linewidth;
        let denom = S::one() + (d / wl) * (d / wl);
        let t = S::one() - globals.dip_depth / denom;
        let sqrt_t = t.sqrt();
        let sqrt_1a = (S::one() - alpha).sqrt();
        let f = sqrt_1a * sqrt_t;
        // dT/dd and chain pieces
        let dt_dd = lit::<S>(2.0) * globals.dip_depth * d / (wl * wl * denom * denom);
        let dsqrt_t_dd = dt_dd / (lit::<S>(2.0) * sqrt_t);
        let re_gz = (g.conj() * z).re;
        // input adjoint: f * g + 2 f' Re(conj(g) z) z, f' = df/d|z|^2
        let dp_dr2 = if clipped { S::zero() } else { alpha };
        let f_prime = sqrt_1a * dsqrt_t_dd * (-globals.carrier_coeff) * dp_dr2;
        g_fc1_out[i] = g * f + z * (lit::<S>(2.0) * f_prime * re_gz);
        // delta: d enters through delta directly
        grad[1924 + 2 * i + 1] += re_gz * sqrt_1a * dsqrt_t_dd;
        // alpha_phase: alpha moves both the tap ratio and the dropped power
        let dp_dalpha = if clipped { S::zero() } else { r2 };
        let df_dalpha = if alpha >= S::one() {
            S::zero()
        } else {
            -sqrt_t / (lit::<S>(2.0) * sqrt_1a)
                + sqrt_1a * dsqrt_t_dd * (-globals.carrier_coeff) * dp_dalpha
        };
        let dalpha_dphase = (alpha_phase).sin() * half;
        grad[1924 + 2 * i] += re_gz * df_dalpha * dalpha_dphase;
    }

    // FC1 mesh, combiner, weight bank.
    mesh_backward(
        &spec.fc1_mesh,
        spec.fc1_mesh_phases(theta),
        &trace.fc1_combined,
        &mut g_fc1_out,
        &mut grad[900..1924],
    )?;
    let mut g_bank = vec![zero; FC1_BANK];
    spec.fc1_combiner.adjoint(&g_fc1_out, &mut g_bank);
    let fc1_weights = spec.fc1_weights(theta);
    let (amps, damps) = attenuator_grad_bank(fc1_weights);
    let mut g_oeo = vec![S::zero(); OEO_DIM];
    for j in 0..FC1_BANK {
        let y = if j < OEO_DIM { trace.oeo_out[j] } else { S::zero() };
        let gv = g_bank[j].re; // bank entries are real
        grad[564 + j] += gv * y * damps[j];
        if j < OEO_DIM {
            g_oeo[j] = gv * amps[j];
        }
    }

    // O/E/O: y = sqrt(clip(gain |z|^2, 0, 1)); zero outside the active range.
    let flat = trace.pool2.data();
    let mut g_pool2 = vec![zero; OEO_DIM];
    for j in 0..OEO_DIM {
        let z = flat[j];
        let p = config.oeo_gain * z.norm_sqr();
        if p > S::zero() && p < S::one() {
            let y = trace.oeo_out[j];
            let dl_dp = g_oeo[j] * config.oeo_gain / (y + y);
            g_pool2[j] = z * (dl_dp + dl_dp);
        }
    }

    // Pool2: adjoint flows to the winning position only, scaled by the tap.
    let mut g_pw = vec![zero; 8 * 11 * 11];
    for c in 0..8 {
        for oh in 0..5 {
            for ow in 0..5 {
                let idx = (c * 5 + oh) * 5 + ow;
                let (h, w) = trace.pool2_winners[idx];
                g_pw[(c * 11 + h) * 11 + w] = g_pool2[idx] * config.pool2_taps[c];
            }
        }
    }

    // Pointwise mesh: per position, input is channels 0..4 padded to 8.
    let mut g_dw = vec![zero; 4 * 11 * 11];
    let pw_phases = spec.pw_phases(theta);
    let mut pw_grad = vec![S::zero(); 64];
    for h in 0..11 {
        for w in 0..11 {
            let mut g_out = [zero; 8];
            let mut any = false;
            for c in 0..8 {
                let g = g_pw[(c * 11 + h) * 11 + w];
                g_out[c] = g;
                any = any || g != zero;
            }
            if !any {
                continue;
            }
            let mut input = [zero; 8];
            for c in 0..4 {
                input[c] = trace.dw_out.at(c, h, w);
            }
            mesh_backward(&spec.pw_mesh, pw_phases, &input, &mut g_out, &mut pw_grad)?;
            for c in 0..4 {
                g_dw[(c * 11 + h) * 11 + w] = g_out[c];
            }
        }
    }
    grad[500..564].iter_mut().zip(&pw_grad).for_each(|(g, d)| *g += *d);

    // Depthwise meshes: adjoint enters at output mode 0 only.
    let mut g_pool1 = vec![zero; 4 * 13 * 13];
    for c in 0..4 {
        let phases = spec.dw_phases(theta, c);
        let mut dw_grad = vec![S::zero(); 100];
        for p in 0..121 {
            let g = g_dw[(c * 11 + p / 11) * 11 + p % 11];
            if g == zero {
                continue;
            }
            let mut g_out = [zero; 10];
            g_out[0] = g;
            let mut input = [zero; 10];
            input[..9].copy_from_slice(&trace.patches2[c][p]);
            mesh_backward(&spec.dw_mesh, phases, &input, &mut g_out, &mut dw_grad)?;
            // scatter the patch adjoint back into the pooled map
            let (oh, ow) = (p / 11, p % 11);
            for dh in 0..3 {
                for dw in 0..3 {
                    g_pool1[(c * 13 + oh + dh) * 13 + ow + dw] += g_out[3 * dh + dw];
                }
            }
        }
        grad[100 + 100 * c..200 + 100 * c]
            .iter_mut()
            .zip(&dw_grad)
            .for_each(|(g, d)| *g += *d);
    }

    // Pool1: winners only, scaled by the GST factor.
    let mut g_conv1 = vec![zero; 4 * 26 * 26];
    for c in 0..4 {
        for oh in 0..13 {
            for ow in 0..13 {
                let idx = (c * 13 + oh) * 13 + ow;
                let g = g_pool1[idx];
                if g == zero {
                    continue;
                }
                let (h, w) = trace.pool1_winners[idx];
                g_conv1[(c * 26 + h) * 26 + w] += g * config.gst_pool1;
            }
        }
    }

    // Conv1 mesh: 676 patches, adjoint on modes 0..4.
    let conv1_phases = spec.conv1_phases(theta);
    let mut conv1_grad = vec![S::zero(); 100];
    for p in 0..676 {
        let (h, w) = (p / 26, p % 26);
        let mut g_out = [zero; 10];
        let mut any = false;
        for c in 0..4 {
            let g = g_conv1[(c * 26 + h) * 26 + w];
            g_out[c] = g;
            any = any || g != zero;
        }
        if !any {
            continue;
        }
        let mut input = [zero; 10];
        for (j, &v) in trace.patches1[p].iter().enumerate() {
            input[j] = Complex::new(v, S::zero());
        }
        mesh_backward(&spec.conv1_mesh, conv1_phases, &input, &mut g_out, &mut conv1_grad)?;
    }
    grad[0..100].iter_mut().zip(&conv1_grad).for_each(|(g, d)| *g += *d);

    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient at parameter {i}")));
        }
    }
    Ok(grad)
}

/// 1-to-1 phase transfer from the twin to the hardware: an identity copy,
/// no decomposition and no re-fitting.
pub fn transfer_phases<S: Scalar>(theta_twin: &[S]) -> Result<Vec<S>> {
    if theta_twin.len() != TOTAL_PARAMS {
        return Err(Error::Dimension {
            context: "transfer_phases",
            expected: TOTAL_PARAMS,
            actual: theta_twin.len(),
        });
    }
    Ok(theta_twin.to_vec())
}

/// Max |twin - hardware| score difference over a set of images, with
/// crosstalk disabled on the hardware path.
pub fn parity_check<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    images: &[Vec<u8>],
) -> Result<S> {
    let mut worst = S::zero();
    for image in images {
        let twin = network_forward(spec, config, theta, image, Mode::Twin, None)?;
        let hw = network_forward(spec, config, theta, image, Mode::Hardware, None)?;
        for k in 0..N_CLASSES {
            worst = worst.max((twin[k] - hw[k]).abs());
        }
    }
    Ok(worst)
}

/// Pre-training configuration (Adam defaults; SGD behind the switch).
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig<S: Scalar> {
    pub batch: usize,
    pub lr: S,
    pub epochs: usize,
    pub seed: u64,
    pub s_scale: S,
    pub use_adam: bool,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            batch: 32,
            lr: lit(0.001),
            epochs: 20,
            seed: 0,
            s_scale: default_s_scale(),
            use_adam: true,
        }
    }
}

/// Half-width of the uniform phase initialization. Chosen empirically:
/// wide inits (up to [-pi, pi]) put every MZI in a random splitting state
/// and train several points worse in 10 epochs at lr 0.001 than a narrow
/// band around the cross state; ranges in 0.4-0.6 were best on a
/// 10k/2k MNIST subset sweep (see README).
pub const INIT_PHASE_RANGE: f64 = 0.5;

/// Initial parameter vector: mesh and attenuator phases uniform in
/// [-INIT_PHASE_RANGE, INIT_PHASE_RANGE]; NOFU rings start at half tap
/// (alpha_phase = pi/2) with a small positive detuning so the activation
/// has slope at low power.
pub fn initial_theta<S: Scalar>(seed: u64) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta: Vec<S> = (0..TOTAL_PARAMS)
        .map(|_| lit::<S>(rng.gen_range(-INIT_PHASE_RANGE..INIT_PHASE_RANGE)))
        .collect();
    for i in 0..NOFU_RINGS {
        theta[1924 + 2 * i] = lit(std::f64::consts::FRAC_PI_2);
        theta[1924 + 2 * i + 1] = lit(0.5);
    }
    theta
}

struct Adam<S: Scalar> {
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
    beta1: S,
    beta2: S,
    eps: S,
}

impl<S: Scalar> Adam<S> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }

    fn step(&mut self, theta: &mut [S], grad: &[S], lr: S) {
        self.t += 1;
        let b1c = S::one() - self.beta1.powi(self.t);
        let b2c = S::one() - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1c;
            let vhat = self.v[i] / b2c;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// A labelled image set borrowed from the dataset container.
pub struct Samples<'a> {
    pub images: &'a [Vec<u8>],
    pub labels: &'a [u8],
}

impl<'a> Samples<'a> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Mini-batch gradient descent on the twin. Deterministic under a fixed
/// seed; returns the best-test-accuracy parameters and per-epoch records.
/// `on_epoch` fires after each epoch so callers can stream records out.
pub fn pretrain<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    train: &Samples<'_>,
    test: &Samples<'_>,
    cfg: &TrainConfig<S>,
    mut on_epoch: impl FnMut(&LossRecord),
) -> Result<(Vec<S>, Vec<LossRecord>)> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Input("pretrain needs non-empty train and test sets".into()));
    }
    let mut theta = initial_theta::<S>(cfg.seed);
    let mut adam = Adam::new(TOTAL_PARAMS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1111);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best_theta = theta.clone();
    let mut best_acc = -1.0f64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            // Per-sample backward passes are independent; the reduction is
            // done in index order to keep results bitwise deterministic.
            let results: Vec<Result<(S, Vec<S>, bool)>> = chunk
                .par_iter()
                .map(|&idx| {
                    let image = &train.images[idx];
                    let label = train.labels[idx] as usize;
                    let (l, g, scores) =
                        backward_scored(spec, config, &theta, image, label, cfg.s_scale)?;
                    Ok((l, g, crate::network::predict(&scores) == label))
                })
                .collect();
            let mut grad = vec![S::zero(); TOTAL_PARAMS];
            let inv = S::one() / lit::<S>(chunk.len() as f64);
            for r in results {
                let (l, g, ok) = r.map_err(|e| {
                    Error::Numeric(format!("training diverged at epoch {epoch}: {e}"))
                })?;
                loss_sum += l.to_f64c();
                if ok {
                    correct += 1;
                }
                for (gi, v) in grad.iter_mut().zip(&g) {
                    *gi += *v * inv;
                }
            }
            if cfg.use_adam {
                adam.step(&mut theta, &grad, cfg.lr);
            } else {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= cfg.lr * *g;
                }
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let train_acc = correct as f64 / train.len() as f64;
        let test_acc = accuracy(spec, config, &theta, test, Mode::Twin, None)?;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
        }
        let record = LossRecord { epoch, train_loss, train_acc, test_acc };
        on_epoch(&record);
        records.push(record);
        if test_acc > best_acc {
            best_acc = test_acc;
            best_theta = theta.clone();
        }
    }
    Ok((best_theta, records))
}

/// Fraction of correctly classified samples.
pub fn accuracy<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    samples: &Samples<'_>,
    mode: Mode,
    crosstalk: Option<&crate::photonic::CrosstalkModel<S>>,
) -> Result<f64> {
    let effective = crate::network::effective_theta(theta, mode, crosstalk)?;
    let hits: Vec<Result<bool>> = samples
        .images
        .par_iter()
        .zip(samples.labels.par_iter())
        .map(|(image, &label)| {
            let scores = forward_trace(spec, config, &effective, image)?.scores;
            Ok(crate::network::predict(&scores) == label as usize)
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PCNN";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes theta as a 16-byte header (magic "PCNN", version, count) followed
/// by little-endian 64-bit floats.
pub fn save_checkpoint<S: Scalar>(path: &Path, theta: &[S]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    file.write_all(&(theta.len() as u64).to_le_bytes())?;
    for v in theta {
        file.write_all(&v.to_f64c().to_le_bytes())?;
    }
    Ok(())
}

/// Reads a checkpoint back; validates magic, version, and entry count.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Vec<S>> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Checkpoint("file shorter than the 16-byte header".into()))?;
    if &header[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a PCNN checkpoint".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} payload bytes, got {}",
            count * 8,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| lit::<S>(f64::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

/// Writes per-epoch records as CSV: epoch, train_loss, train_acc, test_acc.
pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
