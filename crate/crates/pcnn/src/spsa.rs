//! In-situ fine-tuning on the (crosstalk-perturbed) hardware simulator via
//! Simultaneous Perturbation Stochastic Approximation with per-layer
//! learning-rate multipliers.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{forward_trace, Mode, NetworkConfig, NetworkSpec};
use crate::photonic::{CrosstalkModel, Layer, ParameterLayout, TOTAL_PARAMS};
use crate::scalar::{lit, Scalar};
use crate::twin::{loss, Samples};

/// Anything SPSA can measure: a scalar training objective of theta.
/// Implementations count their forward evaluations.
pub trait Objective<S: Scalar> {
    fn eval(&mut self, theta: &[S]) -> Result<S>;
    fn evaluations(&self) -> usize;
}

/// SPSA hyperparameters. Multipliers follow the per-layer schedule
/// {Conv1: 0.3, Conv2: 0.5, FC1: 1.0, NOFU: 2.0, FC2: 3.0}.
#[derive(Debug, Clone, Copy)]
pub struct SpsaConfig<S: Scalar> {
    pub eta: S,
    pub c: S,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub multipliers: [S; 5],
    /// Record test accuracy every this many steps.
    pub eval_every: usize,
}

impl<S: Scalar> SpsaConfig<S> {
    pub fn multiplier_for(&self, layer: Layer) -> S {
        match layer {
            Layer::Conv1 => self.multipliers[0],
            Layer::Conv2 => self.multipliers[1],
            Layer::Fc1 => self.multipliers[2],
            Layer::Nofu => self.multipliers[3],
            Layer::Fc2 => self.multipliers[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c <= S::zero() || self.eta <= S::zero() {
            return Err(Error::Config("SPSA needs c > 0 and eta > 0".into()));
        }
        Ok(())
    }
}

impl<S: Scalar> Default for SpsaConfig<S> {
    fn default() -> Self {
        Self {
            eta: lit(0.02),
            c: lit(0.01),
            iterations: 100,
            batch: 64,
            seed: 0,
            multipliers: [lit(0.3), lit(0.5), lit(1.0), lit(2.0), lit(3.0)],
            eval_every: 10,
        }
    }
}

/// Rademacher perturbation: each entry is +/- c with equal probability,
/// deterministic per (seed, iteration). `dim` is 2,132 for the network but
/// the sampler works for any parameter count (synthetic objectives).
pub fn sample_perturbation<S: Scalar>(
    config: &SpsaConfig<S>,
    iteration: usize,
    dim: usize,
) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration as u64 + 1);
    (0..dim)
        .map(|_| if rng.gen::<bool>() { config.c } else { -config.c })
        .collect()
}

/// Two-evaluation directional derivative (L(theta+delta) - L(theta-delta)) / (2 ||delta||).
pub fn directional_derivative<S: Scalar>(
    theta: &[S],
    delta: &[S],
    objective: &mut dyn Objective<S>,
) -> Result<S> {
    let norm: S = delta.iter().map(|d| *d * *d).sum::<S>().sqrt();
    if norm == S::zero() {
        return Err(Error::Config("SPSA perturbation must be nonzero".into()));
    }
    let plus: Vec<S> = theta.iter().zip(delta).map(|(t, d)| *t + *d).collect();
    let minus: Vec<S> = theta.iter().zip(delta).map(|(t, d)| *t - *d).collect();
    let l_plus = objective.eval(&plus)?;
    let l_minus = objective.eval(&minus)?;
    Ok((l_plus - l_minus) / (norm + norm))
}

/// One SPSA update: theta_i -= eta * m_i * g * delta_i, with the layer
/// multiplier m_i applied at the update (not during measurement).
/// Returns the (L+, L-) pair actually measured. A non-finite directional
/// derivative skips the update and reports it.
pub fn spsa_step<S: Scalar>(
    theta: &mut [S],
    config: &SpsaConfig<S>,
    iteration: usize,
    objective: &mut dyn Objective<S>,
) -> Result<(S, S, bool)> {
    config.validate()?;
    let delta = sample_perturbation(config, iteration, theta.len());
    let norm: S = delta.iter().map(|d| *d * *d).sum::<S>().sqrt();
    let plus: Vec<S> = theta.iter().zip(&delta).map(|(t, d)| *t + *d).collect();
    let minus: Vec<S> = theta.iter().zip(&delta).map(|(t, d)| *t - *d).collect();
    let l_plus = objective.eval(&plus)?;
    let l_minus = objective.eval(&minus)?;
    let g = (l_plus - l_minus) / (norm + norm);
    if !g.is_finite() {
        return Ok((l_plus, l_minus, false));
    }
    if theta.len() == TOTAL_PARAMS {
        let layout = ParameterLayout;
        for layer in Layer::ALL {
            let m = config.multiplier_for(layer);
            for i in layout.range(layer) {
                theta[i] -= config.eta * m * g * delta[i];
            }
        }
    } else {
        // Synthetic objectives of other sizes have no layer structure;
        // every parameter takes the bare learning rate.
        for (t, d) in theta.iter_mut().zip(&delta) {
            *t -= config.eta * g * *d;
        }
    }
    Ok((l_plus, l_minus, true))
}

/// One row of the fine-tuning trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpsaTraceRow {
    pub iteration: usize,
    pub train_loss_plus: f64,
    pub train_loss_minus: f64,
    /// Present on iterations where test accuracy was measured.
    pub test_acc: Option<f64>,
}

/// Mean cross-entropy of the hardware path (crosstalk applied) over a
/// mini-batch. Counts each call as one hardware forward pass.
pub struct HardwareObjective<'a, S: Scalar> {
    pub spec: &'a NetworkSpec,
    pub config: &'a NetworkConfig<S>,
    pub crosstalk: Option<&'a CrosstalkModel<S>>,
    pub samples: Samples<'a>,
    pub s_scale: S,
    batch_indices: Vec<usize>,
    evaluations: usize,
}

impl<'a, S: Scalar> HardwareObjective<'a, S> {
    pub fn new(
        spec: &'a NetworkSpec,
        config: &'a NetworkConfig<S>,
        crosstalk: Option<&'a CrosstalkModel<S>>,
        samples: Samples<'a>,
        s_scale: S,
    ) -> Self {
        let n = samples.len();
        Self {
            spec,
            config,
            crosstalk,
            samples,
            s_scale,
            batch_indices: (0..n).collect(),
            evaluations: 0,
        }
    }

    pub fn set_batch(&mut self, indices: Vec<usize>) {
        self.batch_indices = indices;
    }
}

impl<S: Scalar> Objective<S> for HardwareObjective<'_, S> {
    fn eval(&mut self, theta: &[S]) -> Result<S> {
        self.evaluations += 1;
        let effective =
            crate::network::effective_theta(theta, Mode::Hardware, self.crosstalk)?;
        let losses: Vec<Result<S>> = self
            .batch_indices
            .par_iter()
            .map(|&idx| {
                let scores =
                    forward_trace(self.spec, self.config, &effective, &self.samples.images[idx])?
                        .scores;
                Ok(loss(&scores, self.samples.labels[idx] as usize, self.s_scale))
            })
            .collect();
        let mut sum = S::zero();
        for l in losses {
            sum += l?;
        }
        Ok(sum / lit::<S>(self.batch_indices.len() as f64))
    }

    fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Runs the SPSA loop with fresh batches per iteration, recording test
/// accuracy every `eval_every` steps; returns the best-accuracy theta.
/// Exactly two training-objective evaluations happen per iteration.
pub fn finetune<S: Scalar>(
    theta: &[S],
    objective: &mut HardwareObjective<'_, S>,
    test: &Samples<'_>,
    config: &SpsaConfig<S>,
) -> Result<(Vec<S>, Vec<SpsaTraceRow>)> {
    config.validate()?;
    let mut theta = theta.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e5a_u64);
    let n_train = objective.samples.len();
    let mut trace = Vec::with_capacity(config.iterations);

    let eval_acc = |theta: &[S], obj: &HardwareObjective<'_, S>| -> Result<f64> {
        crate::twin::accuracy(obj.spec, obj.config, theta, test, Mode::Hardware, obj.crosstalk)
    };

    let mut best_theta = theta.clone();
    let mut best_acc = eval_acc(&theta, objective)?;

    for iteration in 0..config.iterations {
        let indices: Vec<usize> =
            (0..config.batch.min(n_train)).map(|_| rng.gen_range(0..n_train)).collect();
        objective.set_batch(indices);
        let (l_plus, l_minus, _applied) = spsa_step(&mut theta, config, iteration, objective)?;
        let test_acc = if (iteration + 1) % config.eval_every == 0
            || iteration + 1 == config.iterations
        {
            let acc = eval_acc(&theta, objective)?;
            if acc > best_acc {
                best_acc = acc;
                best_theta = theta.clone();
            }
            Some(acc)
        } else {
            None
        };
        trace.push(SpsaTraceRow {
            iteration,
            train_loss_plus: l_plus.to_f64c(),
            train_loss_minus: l_minus.to_f64c(),
            test_acc,
        });
    }
    Ok((best_theta, trace))
}

/// Writes the fine-tuning trace as CSV:
/// iteration, train_loss_plus, train_loss_minus, test_acc.
pub fn write_trace_csv(path: &std::path::Path, trace: &[SpsaTraceRow]) -> Result<()> {
    let mut out = String::from("iteration,train_loss_plus,train_loss_minus,test_acc\n");
    for row in trace {
        let acc = row.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            row.iteration, row.train_loss_plus, row.train_loss_minus, acc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
