//! Flat TOML run configuration. Every knob defaults to the published
//! operating point and can be overridden per-run; the resolved config is
//! hashed into the manifest so artifacts are traceable to their settings.

use std::path::Path;

use anyhow::Context;
use pcnn::network::{NetworkConfig, NofuGlobals};
use pcnn::perf::{NopsMode, PerfConfig, PowerMode, StageLatencies};
use pcnn::spsa::SpsaConfig;
use pcnn::twin::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub network: NetworkSection,
    pub train: TrainSection,
    pub spsa: SpsaSection,
    pub crosstalk: CrosstalkSection,
    pub perf: PerfSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub oeo_gain: f64,
    pub s_scale: f64,
    pub gst_pool1: f64,
    pub pool2_taps: [f64; 8],
    pub nofu_dip_depth: f64,
    pub nofu_linewidth: f64,
    pub nofu_carrier_coeff: f64,
    pub nofu_clip_power: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let nofu = NofuGlobals::<f64>::default();
        Self {
            oeo_gain: 1.0,
            s_scale: 10.0,
            gst_pool1: 1.0,
            pool2_taps: [1.0; 8],
            nofu_dip_depth: nofu.dip_depth,
            nofu_linewidth: nofu.linewidth,
            nofu_carrier_coeff: nofu.carrier_coeff,
            nofu_clip_power: nofu.clip_power,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub use_adam: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::<f64>::default();
        Self { batch: d.batch, lr: d.lr, epochs: d.epochs, use_adam: d.use_adam }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpsaSection {
    pub eta: f64,
    pub c: f64,
    pub iterations: usize,
    pub batch: usize,
    pub multipliers: [f64; 5],
    pub eval_every: usize,
}

impl Default for SpsaSection {
    fn default() -> Self {
        let d = SpsaConfig::<f64>::default();
        Self {
            eta: d.eta,
            c: d.c,
            iterations: d.iterations,
            batch: d.batch,
            multipliers: d.multipliers,
            eval_every: d.eval_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrosstalkSection {
    /// Nearest-neighbour coupling strength for single-point runs.
    pub xt: f64,
    /// Sweep grid for `xtalk-sweep`.
    pub sweep: Vec<f64>,
}

impl Default for CrosstalkSection {
    fn default() -> Self {
        Self { xt: 0.1, sweep: vec![0.0, 0.05, 0.1, 0.12] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerfSection {
    pub tau_patch_ns: f64,
    pub p_pi_w: f64,
    pub p_modulator_w: f64,
    pub p_other_w: f64,
}

impl Default for PerfSection {
    fn default() -> Self {
        let d = PerfConfig::default();
        Self {
            tau_patch_ns: d.tau_patch_ns,
            p_pi_w: d.p_pi_w,
            p_modulator_w: d.p_modulator_w,
            p_other_w: d.p_other_w,
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }

    /// Canonical serialized form used for the manifest's config hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn network_config(&self) -> NetworkConfig<f64> {
        NetworkConfig {
            oeo_gain: self.network.oeo_gain,
            nofu: NofuGlobals {
                dip_depth: self.network.nofu_dip_depth,
                linewidth: self.network.nofu_linewidth,
                carrier_coeff: self.network.nofu_carrier_coeff,
                clip_power: self.network.nofu_clip_power,
            },
            gst_pool1: self.network.gst_pool1,
            pool2_taps: self.network.pool2_taps,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            batch: self.train.batch,
            lr: self.train.lr,
            epochs: self.train.epochs,
            seed,
            s_scale: self.network.s_scale,
            use_adam: self.train.use_adam,
        }
    }

    pub fn spsa_config(&self, seed: u64) -> SpsaConfig<f64> {
        SpsaConfig {
            eta: self.spsa.eta,
            c: self.spsa.c,
            iterations: self.spsa.iterations,
            batch: self.spsa.batch,
            seed,
            multipliers: self.spsa.multipliers,
            eval_every: self.spsa.eval_every,
        }
    }

    pub fn perf_config(&self, nops: NopsMode, power: PowerMode) -> PerfConfig {
        PerfConfig {
            tau_patch_ns: self.perf.tau_patch_ns,
            stage_latencies_ns: StageLatencies::default(),
            p_pi_w: self.perf.p_pi_w,
            p_modulator_w: self.perf.p_modulator_w,
            p_other_w: self.perf.p_other_w,
            nops_mode: nops,
            power_mode: power,
        }
    }
}
