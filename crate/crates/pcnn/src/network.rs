//! The PCNN forward pass: patch streaming, Conv1, depthwise + pointwise
//! Conv2, all-optical max pooling (spatial and WDM), the O/E/O stage, the
//! FC1 weight bank + mesh, the NOFU nonlinearity, FC2, and the intensity
//! readout. Twin and hardware modes share the exact same math; hardware
//! mode additionally maps the parameter vector through the crosstalk model.

use std::borrow::Cow;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::photonic::{
    apply_crosstalk, attenuator_amplitude, attenuator_amplitude_grad, build_clements_mesh,
    mesh_apply, wrap_phase, CrosstalkModel, MeshSpec, ParameterLayout, TOTAL_PARAMS,
};
use crate::scalar::{lit, Scalar};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const N_CLASSES: usize = 10;
/// Flattened Pool2 output: 8 channels x 5 x 5.
pub const OEO_DIM: usize = 200;
/// FC1 attenuator weight bank width.
pub const FC1_BANK: usize = 336;
pub const NOFU_RINGS: usize = 32;

/// Complex-amplitude feature map, C x H x W.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<S: Scalar> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<Complex<S>>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![Complex::new(S::zero(), S::zero()); channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, h: usize, w: usize) -> Complex<S> {
        self.data[(c * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, h: usize, w: usize) -> &mut Complex<S> {
        &mut self.data[(c * self.height + h) * self.width + w]
    }

    pub fn data(&self) -> &[Complex<S>] {
        &self.data
    }
}

/// Fixed passive combiner: contiguous disjoint input groups summed into one
/// output mode each, with 1/sqrt(group size) amplitude normalization.
#[derive(Debug, Clone)]
pub struct Combiner {
    groups: Vec<std::ops::Range<usize>>,
    n_inputs: usize,
}

impl Combiner {
    pub fn new(group_sizes: &[usize]) -> Self {
        let mut groups = Vec::with_capacity(group_sizes.len());
        let mut start = 0;
        for &len in group_sizes {
            groups.push(start..start + len);
            start += len;
        }
        Self { groups, n_inputs: start }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[std::ops::Range<usize>] {
        &self.groups
    }

    pub fn forward<S: Scalar>(&self, input: &[Complex<S>], output: &mut [Complex<S>]) {
        for (k, g) in self.groups.iter().enumerate() {
            let norm = S::one() / lit::<S>(g.len() as f64).sqrt();
            let mut acc = Complex::new(S::zero(), S::zero());
            for j in g.clone() {
                acc += input[j];
            }
            output[k] = acc * norm;
        }
    }

    /// Transpose of `forward` for reverse-mode gradients.
    pub fn adjoint<S: Scalar>(&self, g_output: &[Complex<S>], g_input: &mut [Complex<S>]) {
        for (k, g) in self.groups.iter().enumerate() {
            let norm = S::one() / lit::<S>(g.len() as f64).sqrt();
            for j in g.clone() {
                g_input[j] = g_output[k] * norm;
            }
        }
    }
}

/// Fixed NOFU globals: Lorentzian dip depth, linewidth, carrier coefficient,
/// and the clip power of the carrier-injection model.
#[derive(Debug, Clone, Copy)]
pub struct NofuGlobals<S: Scalar> {
    pub dip_depth: S,
    pub linewidth: S,
    pub carrier_coeff: S,
    pub clip_power: S,
}

impl<S: Scalar> Default for NofuGlobals<S> {
    fn default() -> Self {
        Self {
            dip_depth: lit(0.8),
            linewidth: lit(0.5),
            carrier_coeff: lit(2.0),
            clip_power: lit(1.0),
        }
    }
}

/// Physical configuration knobs shared by twin and hardware modes.
#[derive(Debug, Clone, Copy)]
pub struct NetworkConfig<S: Scalar> {
    pub oeo_gain: S,
    pub nofu: NofuGlobals<S>,
    /// GST attenuation applied to the Pool1 winner amplitude.
    pub gst_pool1: S,
    /// Per-wavelength tap factors of the Pool2 delay network.
    pub pool2_taps: [S; 8],
}

impl<S: Scalar> Default for NetworkConfig<S> {
    fn default() -> Self {
        Self {
            oeo_gain: S::one(),
            nofu: NofuGlobals::default(),
            gst_pool1: S::one(),
            pool2_taps: [S::one(); 8],
        }
    }
}

/// Static topology of the whole network plus the parameter layout.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub conv1_mesh: MeshSpec,
    /// Shared topology of the four depthwise meshes (phases differ).
    pub dw_mesh: MeshSpec,
    pub pw_mesh: MeshSpec,
    pub fc1_mesh: MeshSpec,
    pub fc2_mesh: MeshSpec,
    pub fc1_combiner: Combiner,
    pub fc2_combiner: Combiner,
    pub layout: ParameterLayout,
}

impl NetworkSpec {
    pub fn standard() -> Result<Self> {
        let mut fc1_groups = vec![11usize; 16];
        fc1_groups.extend(std::iter::repeat(10).take(16));
        let mut fc2_groups = vec![3usize; 8];
        fc2_groups.extend(std::iter::repeat(2).take(4));
        let spec = Self {
            conv1_mesh: build_clements_mesh(10)?,
            dw_mesh: build_clements_mesh(10)?,
            pw_mesh: build_clements_mesh(8)?,
            fc1_mesh: build_clements_mesh(32)?,
            fc2_mesh: build_clements_mesh(12)?,
            fc1_combiner: Combiner::new(&fc1_groups),
            fc2_combiner: Combiner::new(&fc2_groups),
            layout: ParameterLayout,
        };
        debug_assert_eq!(spec.fc1_combiner.n_inputs(), FC1_BANK);
        debug_assert_eq!(spec.fc2_combiner.n_inputs(), NOFU_RINGS);
        Ok(spec)
    }

    // Slices of the global parameter vector, in layout order.
    pub fn conv1_phases<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[0..100]
    }
    pub fn dw_phases<'a, S>(&self, theta: &'a [S], channel: usize) -> &'a [S] {
        &theta[100 + 100 * channel..200 + 100 * channel]
    }
    pub fn pw_phases<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[500..564]
    }
    pub fn fc1_weights<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[564..900]
    }
    pub fn fc1_mesh_phases<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[900..1924]
    }
    pub fn nofu_params<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[1924..1988]
    }
    pub fn fc2_mesh_phases<'a, S>(&self, theta: &'a [S]) -> &'a [S] {
        &theta[1988..2132]
    }
}

/// Whether the forward pass represents the digital twin or the hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Twin,
    Hardware,
}

/// Pixel bytes to real amplitudes: pixel / 255, no per-patch renormalization.
pub fn encode_image<S: Scalar>(pixels: &[u8]) -> Result<Vec<S>> {
    if pixels.len() != IMAGE_PIXELS {
        return Err(Error::Dimension {
            context: "encode_image",
            expected: IMAGE_PIXELS,
            actual: pixels.len(),
        });
    }
    let inv = S::one() / lit::<S>(255.0);
    Ok(pixels.iter().map(|&p| lit::<S>(p as f64) * inv).collect())
}

/// Row-major k x k patches with the given stride over an H x W grid.
pub fn extract_patches<T: Copy>(
    values: &[T],
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
) -> Result<Vec<Vec<T>>> {
    if height < k || width < k {
        return Err(Error::Dimension {
            context: "extract_patches",
            expected: k,
            actual: height.min(width),
        });
    }
    let out_h = (height - k) / stride + 1;
    let out_w = (width - k) / stride + 1;
    let mut patches = Vec::with_capacity(out_h * out_w);
    for oh in 0..out_h {
        for ow in 0..out_w {
            let mut patch = Vec::with_capacity(k * k);
            for dh in 0..k {
                for dw in 0..k {
                    patch.push(values[(oh * stride + dh) * width + ow * stride + dw]);
                }
            }
            patches.push(patch);
        }
    }
    Ok(patches)
}

/// Streams patches through a mesh: each patch is zero-padded to the mesh
/// width, propagated, and read out at `out_modes`.
pub fn conv_layer_forward<S: Scalar>(
    mesh: &MeshSpec,
    phases: &[S],
    patches: &[Vec<Complex<S>>],
    out_modes: &[usize],
) -> Result<Vec<Vec<Complex<S>>>> {
    let n = mesh.n_modes;
    let mut outputs = Vec::with_capacity(patches.len());
    let mut amps = vec![Complex::new(S::zero(), S::zero()); n];
    for patch in patches {
        if patch.len() > n {
            return Err(Error::Dimension {
                context: "conv_layer_forward patch",
                expected: n,
                actual: patch.len(),
            });
        }
        for a in amps.iter_mut() {
            *a = Complex::new(S::zero(), S::zero());
        }
        amps[..patch.len()].copy_from_slice(patch);
        mesh_apply(mesh, phases, &mut amps)?;
        outputs.push(out_modes.iter().map(|&m| amps[m]).collect());
    }
    Ok(outputs)
}

/// All-optical spatial max pooling: per channel and non-overlapping window,
/// passes the complex amplitude of the highest-intensity element (times an
/// attenuation factor). Ties break to the row-major first occurrence.
pub fn optical_maxpool<S: Scalar>(
    map: &FeatureMap<S>,
    window: usize,
    stride: usize,
    attenuation: S,
) -> (FeatureMap<S>, Vec<(usize, usize)>) {
    let out_h = (map.height - window) / stride + 1;
    let out_w = (map.width - window) / stride + 1;
    let mut out = FeatureMap::zeros(map.channels, out_h, out_w);
    let mut winners = Vec::with_capacity(map.channels * out_h * out_w);
    for c in 0..map.channels {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut best = map.at(c, oh * stride, ow * stride);
                let mut best_pos = (oh * stride, ow * stride);
                let mut best_p = best.norm_sqr();
                for dh in 0..window {
                    for dw in 0..window {
                        let (h, w) = (oh * stride + dh, ow * stride + dw);
                        let v = map.at(c, h, w);
                        let p = v.norm_sqr();
                        if p > best_p {
                            best = v;
                            best_p = p;
                            best_pos = (h, w);
                        }
                    }
                }
                *out.at_mut(c, oh, ow) = best * attenuation;
                winners.push(best_pos);
            }
        }
    }
    (out, winners)
}

/// WDM max pooling: channel c rides wavelength c; pooling acts independently
/// per wavelength with optional per-tap amplitude factors.
pub fn wdm_pool2<S: Scalar>(
    map: &FeatureMap<S>,
    taps: &[S; 8],
) -> Result<(FeatureMap<S>, Vec<(usize, usize)>)> {
    if map.channels != 8 {
        return Err(Error::Config(format!(
            "WDM pooling needs 8 wavelength channels, got {}",
            map.channels
        )));
    }
    let out_h = (map.height - 2) / 2 + 1;
    let out_w = (map.width - 2) / 2 + 1;
    let mut out = FeatureMap::zeros(8, out_h, out_w);
    let mut winners = Vec::with_capacity(8 * out_h * out_w);
    for c in 0..8 {
        let single = FeatureMap {
            channels: 1,
            height: map.height,
            width: map.width,
            data: map.data[(c * map.height * map.width)..((c + 1) * map.height * map.width)]
                .to_vec(),
        };
        let (pooled, w) = optical_maxpool(&single, 2, 2, taps[c]);
        for h in 0..out_h {
            for ww in 0..out_w {
                *out.at_mut(c, h, ww) = pooled.at(0, h, ww);
            }
        }
        winners.extend(w);
    }
    Ok((out, winners))
}

/// O/E/O conversion: photodetect (phase is discarded), scale, clip to [0,1],
/// re-encode as real amplitudes: y_i = sqrt(clip(gain |z_i|^2, 0, 1)).
pub fn oeo_stage<S: Scalar>(fields: &[Complex<S>], gain: S) -> Vec<S> {
    fields
        .iter()
        .map(|z| {
            let p = gain * z.norm_sqr();
            let p = if p > S::one() { S::one() } else { p };
            p.sqrt()
        })
        .collect()
}

/// FC1: 336-wide attenuator weight bank, fixed 336 -> 32 combiner, 32-mode
/// mesh. The 200-dim input is zero-padded to 336.
pub fn fc1_forward<S: Scalar>(
    spec: &NetworkSpec,
    weights: &[S],
    mesh_phases: &[S],
    input: &[S],
) -> Result<Vec<Complex<S>>> {
    if input.len() != OEO_DIM {
        return Err(Error::Dimension {
            context: "fc1_forward input",
            expected: OEO_DIM,
            actual: input.len(),
        });
    }
    let mut bank = vec![Complex::new(S::zero(), S::zero()); FC1_BANK];
    for (j, &y) in input.iter().enumerate() {
        bank[j] = Complex::new(attenuator_amplitude(weights[j]) * y, S::zero());
    }
    let mut combined = vec![Complex::new(S::zero(), S::zero()); NOFU_RINGS];
    spec.fc1_combiner.forward(&bank, &mut combined);
    mesh_apply(&spec.fc1_mesh, mesh_phases, &mut combined)?;
    Ok(combined)
}

/// Per-ring NOFU transfer: tap fraction alpha = sin^2(alpha_phase / 2),
/// dropped power P = min(alpha |z|^2, P_max), detuning d = delta - g_N P,
/// Lorentzian transmission T = 1 - A / (1 + (d/w)^2),
/// output = z sqrt(1 - alpha) sqrt(T).
pub fn nofu_forward<S: Scalar>(
    fields: &[Complex<S>],
    params: &[S],
    globals: &NofuGlobals<S>,
) -> Vec<Complex<S>> {
    let half = lit::<S>(0.5);
    fields
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let alpha_phase = params[2 * i];
            let delta = params[2 * i + 1];
            let alpha = (alpha_phase * half).sin().powi(2);
            let p = (alpha * z.norm_sqr()).min(globals.clip_power);
            let d = delta - globals.carrier_coeff * p;
            let dr = d / globals.linewidth;
            let t = S::one() - globals.dip_depth / (S::one() + dr * dr);
            *z * ((S::one() - alpha).sqrt() * t.sqrt())
        })
        .collect()
}

/// FC2: fixed 32 -> 12 combiner, 12-mode mesh, intensity readout of the
/// first 10 modes as class scores.
pub fn fc2_forward<S: Scalar>(
    spec: &NetworkSpec,
    mesh_phases: &[S],
    input: &[Complex<S>],
) -> Result<[S; N_CLASSES]> {
    if input.len() != NOFU_RINGS {
        return Err(Error::Dimension {
            context: "fc2_forward input",
            expected: NOFU_RINGS,
            actual: input.len(),
        });
    }
    let mut combined = vec![Complex::new(S::zero(), S::zero()); 12];
    spec.fc2_combiner.forward(input, &mut combined);
    mesh_apply(&spec.fc2_mesh, mesh_phases, &mut combined)?;
    let mut scores = [S::zero(); N_CLASSES];
    for k in 0..N_CLASSES {
        scores[k] = combined[k].norm_sqr();
    }
    Ok(scores)
}

/// Attenuator amplitudes and their derivatives for the whole FC1 bank.
pub fn attenuator_grad_bank<S: Scalar>(weights: &[S]) -> (Vec<S>, Vec<S>) {
    let amps = weights.iter().map(|&w| attenuator_amplitude(w)).collect();
    let grads = weights.iter().map(|&w| attenuator_amplitude_grad(w)).collect();
    (amps, grads)
}

/// Argmax class; ties break to the smallest index.
pub fn predict<S: Scalar>(scores: &[S; N_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    best
}

/// Resolves the effective parameter vector for a forward pass. Hardware mode
/// with a crosstalk model wraps the realized phases to [-pi, pi] and injects
/// the leakage; otherwise the nominal vector is used untouched so twin and
/// hardware are bit-identical.
pub fn effective_theta<'a, S: Scalar>(
    theta: &'a [S],
    mode: Mode,
    crosstalk: Option<&CrosstalkModel<S>>,
) -> Result<Cow<'a, [S]>> {
    if theta.len() != TOTAL_PARAMS {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: TOTAL_PARAMS,
            actual: theta.len(),
        });
    }
    match (mode, crosstalk) {
        (Mode::Hardware, Some(model)) => {
            let wrapped: Vec<S> = theta.iter().map(|&t| wrap_phase(t)).collect();
            Ok(Cow::Owned(apply_crosstalk(&wrapped, model)))
        }
        _ => Ok(Cow::Borrowed(theta)),
    }
}

/// Everything the reverse pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S: Scalar> {
    pub patches1: Vec<Vec<S>>,
    pub conv1_out: FeatureMap<S>,
    pub pool1: FeatureMap<S>,
    pub pool1_winners: Vec<(usize, usize)>,
    pub patches2: [Vec<Vec<Complex<S>>>; 4],
    pub dw_out: FeatureMap<S>,
    pub pw_out: FeatureMap<S>,
    pub pool2: FeatureMap<S>,
    pub pool2_winners: Vec<(usize, usize)>,
    pub oeo_out: Vec<S>,
    pub fc1_combined: Vec<Complex<S>>,
    pub fc1_out: Vec<Complex<S>>,
    pub nofu_out: Vec<Complex<S>>,
    pub fc2_combined: Vec<Complex<S>>,
    pub fc2_out: Vec<Complex<S>>,
    pub scores: [S; N_CLASSES],
}

/// Runs the full pipeline and returns the 10 class scores.
pub fn network_forward<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    image: &[u8],
    mode: Mode,
    crosstalk: Option<&CrosstalkModel<S>>,
) -> Result<[S; N_CLASSES]> {
    let theta = effective_theta(theta, mode, crosstalk)?;
    Ok(forward_trace(spec, config, &theta, image)?.scores)
}

/// Forward pass that records every stage boundary for reverse mode.
/// The math is identical to `network_forward` on the same effective theta.
pub fn forward_trace<S: Scalar>(
    spec: &NetworkSpec,
    config: &NetworkConfig<S>,
    theta: &[S],
    image: &[u8],
) -> Result<ForwardTrace<S>> {
    if theta.len() != TOTAL_PARAMS {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: TOTAL_PARAMS,
            actual: theta.len(),
        });
    }
    let zero = Complex::new(S::zero(), S::zero());
    let amplitudes = encode_image::<S>(image)?;

    // Conv1: 676 patches through the 10-mode mesh, channels = modes 0..3.
    let patches1 = extract_patches(&amplitudes, IMAGE_SIDE, IMAGE_SIDE, 3, 1)?;
    let conv1_phases = spec.conv1_phases(theta);
    let mut conv1_out = FeatureMap::zeros(4, 26, 26);
    let mut buf10 = [zero; 10];
    for (p, patch) in patches1.iter().enumerate() {
        for a in buf10.iter_mut() {
            *a = zero;
        }
        for (j, &v) in patch.iter().enumerate() {
            buf10[j] = Complex::new(v, S::zero());
        }
        mesh_apply(&spec.conv1_mesh, conv1_phases, &mut buf10)?;
        let (h, w) = (p / 26, p % 26);
        for c in 0..4 {
            *conv1_out.at_mut(c, h, w) = buf10[c];
        }
    }

    let (pool1, pool1_winners) = optical_maxpool(&conv1_out, 2, 2, config.gst_pool1);

    // Conv2 depthwise: per channel, 121 patches through its own 10-mode mesh.
    let mut dw_out = FeatureMap::zeros(4, 11, 11);
    let mut patches2: [Vec<Vec<Complex<S>>>; 4] = Default::default();
    for c in 0..4 {
        let chan: Vec<Complex<S>> = (0..13 * 13)
            .map(|i| pool1.at(c, i / 13, i % 13))
            .collect();
        let patches = extract_patches(&chan, 13, 13, 3, 1)?;
        let phases = spec.dw_phases(theta, c);
        for (p, patch) in patches.iter().enumerate() {
            for a in buf10.iter_mut() {
                *a = zero;
            }
            buf10[..9].copy_from_slice(patch);
            mesh_apply(&spec.dw_mesh, phases, &mut buf10)?;
            *dw_out.at_mut(c, p / 11, p % 11) = buf10[0];
        }
        patches2[c] = patches;
    }

    // Conv2 pointwise: per position, 4 channel amplitudes padded to 8 modes.
    let pw_phases = spec.pw_phases(theta);
    let mut pw_out = FeatureMap::zeros(8, 11, 11);
    let mut buf8 = [zero; 8];
    for h in 0..11 {
        for w in 0..11 {
            for a in buf8.iter_mut() {
                *a = zero;
            }
            for c in 0..4 {
                buf8[c] = dw_out.at(c, h, w);
            }
            mesh_apply(&spec.pw_mesh, pw_phases, &mut buf8)?;
            for c in 0..8 {
                *pw_out.at_mut(c, h, w) = buf8[c];
            }
        }
    }

    let (pool2, pool2_winners) = wdm_pool2(&pw_out, &config.pool2_taps)?;

    // O/E/O: flatten channel-major and photodetect.
    let flat: Vec<Complex<S>> = pool2.data().to_vec();
    let oeo_out = oeo_stage(&flat, config.oeo_gain);

    // FC1 with the intermediate combiner input kept for the reverse pass.
    let fc1_weights = spec.fc1_weights(theta);
    let mut bank = vec![zero; FC1_BANK];
    for (j, &y) in oeo_out.iter().enumerate() {
        bank[j] = Complex::new(attenuator_amplitude(fc1_weights[j]) * y, S::zero());
    }
    let mut fc1_combined = vec![zero; NOFU_RINGS];
    spec.fc1_combiner.forward(&bank, &mut fc1_combined);
    let mut fc1_out = fc1_combined.clone();
    mesh_apply(&spec.fc1_mesh, spec.fc1_mesh_phases(theta), &mut fc1_out)?;

    let nofu_out = nofu_forward(&fc1_out, spec.nofu_params(theta), &config.nofu);

    let mut fc2_combined = vec![zero; 12];
    spec.fc2_combiner.forward(&nofu_out, &mut fc2_combined);
    let mut fc2_out = fc2_combined.clone();
    mesh_apply(&spec.fc2_mesh, spec.fc2_mesh_phases(theta), &mut fc2_out)?;

    let mut scores = [S::zero(); N_CLASSES];
    for k in 0..N_CLASSES {
        scores[k] = fc2_out[k].norm_sqr();
    }

    Ok(ForwardTrace {
        patches1,
        conv1_out,
        pool1,
        pool1_winners,
        patches2,
        dw_out,
        pw_out,
        pool2,
        pool2_winners,
        oeo_out,
        fc1_combined,
        fc1_out,
        nofu_out,
        fc2_combined,
        fc2_out,
        scores,
    })
}
