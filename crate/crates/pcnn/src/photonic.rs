//! Complex-amplitude linear optics: MZI transfer matrices, rectangular
//! Clements meshes, attenuators, the global phase-parameter layout, and
//! thermal-crosstalk injection.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Total number of tunable phase parameters in the network.
pub const TOTAL_PARAMS: usize = 2_132;

/// Coherent signal on a set of waveguide modes, tagged with its WDM channel.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalField<S: Scalar> {
    /// Complex amplitudes in units of sqrt(W).
    pub amplitudes: Vec<Complex<S>>,
    /// Wavelength-channel index (0-7).
    pub channel: u8,
}

impl<S: Scalar> OpticalField<S> {
    pub fn new(amplitudes: Vec<Complex<S>>, channel: u8) -> Self {
        Self { amplitudes, channel }
    }

    /// Total optical power, sum of |a_i|^2.
    pub fn power(&self) -> S {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// One MZI in a mesh: which adjacent mode pair it couples and where its two
/// phases live inside the mesh-local parameter slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MziNode {
    /// Upper mode index; the node couples (upper, upper + 1).
    pub upper: usize,
    /// Column in the rectangular arrangement.
    pub column: usize,
    /// Index of the internal phase theta in the mesh parameter slice.
    pub theta_idx: usize,
    /// Index of the external phase phi in the mesh parameter slice.
    pub phi_idx: usize,
}

/// Static topology of a rectangular Clements mesh on `n_modes` modes.
///
/// Parameters are ordered column-major, top-down, (theta, phi) per node,
/// with the N output phases last, for a total of N^2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeshSpec {
    pub n_modes: usize,
    pub nodes: Vec<MziNode>,
}

impl MeshSpec {
    /// Number of tunable parameters: N(N-1) node phases + N output phases.
    pub fn param_count(&self) -> usize {
        self.n_modes * self.n_modes
    }

    /// Offset of the output-phase block in the mesh parameter slice.
    pub fn output_phase_offset(&self) -> usize {
        self.n_modes * (self.n_modes - 1)
    }
}

/// Builds the alternating rectangular Clements arrangement: even columns
/// couple (0,1),(2,3),..., odd columns couple (1,2),(3,4),..., N columns.
pub fn build_clements_mesh(n_modes: usize) -> Result<MeshSpec> {
    if n_modes < 2 {
        return Err(Error::InvalidTopology(format!(
            "mesh needs at least 2 modes, got {n_modes}"
        )));
    }
    let mut nodes = Vec::with_capacity(n_modes * (n_modes - 1) / 2);
    let mut param = 0;
    for column in 0..n_modes {
        let start = column % 2;
        let mut upper = start;
        while upper + 1 < n_modes {
            nodes.push(MziNode {
                upper,
                column,
                theta_idx: param,
                phi_idx: param + 1,
            });
            param += 2;
            upper += 2;
        }
    }
    debug_assert_eq!(nodes.len(), n_modes * (n_modes - 1) / 2);
    Ok(MeshSpec { n_modes, nodes })
}

/// 2x2 MZI transfer matrix, row-major:
/// U(theta, phi) = i e^{i theta/2} [[e^{i phi} sin(theta/2), cos(theta/2)],
///                                  [e^{i phi} cos(theta/2), -sin(theta/2)]].
#[inline]
pub fn mzi_transfer<S: Scalar>(theta: S, phi: S) -> [Complex<S>; 4] {
    let half = theta / lit::<S>(2.0);
    let (s, c) = (half.sin(), half.cos());
    // i e^{i theta/2}
    let pre = Complex::new(S::zero(), S::one()) * Complex::from_polar(S::one(), half);
    let eip = Complex::from_polar(S::one(), phi);
    [pre * eip * s, pre * c, pre * eip * c, -(pre * s)]
}

/// Derivatives of the MZI transfer matrix w.r.t. (theta, phi).
#[inline]
pub fn mzi_transfer_grad<S: Scalar>(theta: S, phi: S) -> ([Complex<S>; 4], [Complex<S>; 4]) {
    let half = theta / lit::<S>(2.0);
    let (s, c) = (half.sin(), half.cos());
    let i = Complex::new(S::zero(), S::one());
    let pre = i * Complex::from_polar(S::one(), half);
    let eip = Complex::from_polar(S::one(), phi);
    let u = [pre * eip * s, pre * c, pre * eip * c, -(pre * s)];
    let h = lit::<S>(0.5);
    // dU/dtheta = (i/2) U + i e^{i theta/2} dM/dtheta
    let dm = [eip * c * h, -Complex::from(s * h), -(eip * s * h), -Complex::from(c * h)];
    let mut dtheta = [Complex::new(S::zero(), S::zero()); 4];
    for k in 0..4 {
        dtheta[k] = i * h * u[k] + pre * dm[k];
    }
    // dU/dphi: only the first column carries e^{i phi}
    let dphi = [
        i * u[0],
        Complex::new(S::zero(), S::zero()),
        i * u[2],
        Complex::new(S::zero(), S::zero()),
    ];
    (dtheta, dphi)
}

/// Applies the mesh in place to `amps` given its N^2 parameter slice.
pub fn mesh_apply<S: Scalar>(mesh: &MeshSpec, phases: &[S], amps: &mut [Complex<S>]) -> Result<()> {
    let n = mesh.n_modes;
    if amps.len() != n {
        return Err(Error::Dimension {
            context: "mesh_apply field",
            expected: n,
            actual: amps.len(),
        });
    }
    if phases.len() != mesh.param_count() {
        return Err(Error::Dimension {
            context: "mesh_apply phases",
            expected: mesh.param_count(),
            actual: phases.len(),
        });
    }
    for node in &mesh.nodes {
        let u = mzi_transfer(phases[node.theta_idx], phases[node.phi_idx]);
        let (a, b) = (amps[node.upper], amps[node.upper + 1]);
        amps[node.upper] = u[0] * a + u[1] * b;
        amps[node.upper + 1] = u[2] * a + u[3] * b;
    }
    let out = mesh.output_phase_offset();
    for m in 0..n {
        amps[m] = amps[m] * Complex::from_polar(S::one(), phases[out + m]);
    }
    Ok(())
}

/// Propagates an optical field through the mesh.
pub fn mesh_forward<S: Scalar>(
    mesh: &MeshSpec,
    phases: &[S],
    field: &OpticalField<S>,
) -> Result<OpticalField<S>> {
    let mut amps = field.amplitudes.clone();
    mesh_apply(mesh, phases, &mut amps)?;
    Ok(OpticalField::new(amps, field.channel))
}

/// Reverse-mode pass through one mesh application.
///
/// `input` is the field that entered the mesh, `adjoint` holds dL/d(output)
/// on entry (complex convention dL/dRe + i dL/dIm) and dL/d(input) on exit.
/// Phase gradients are accumulated into `grad`.
pub fn mesh_backward<S: Scalar>(
    mesh: &MeshSpec,
    phases: &[S],
    input: &[Complex<S>],
    adjoint: &mut [Complex<S>],
    grad: &mut [S],
) -> Result<()> {
    let n = mesh.n_modes;
    if input.len() != n || adjoint.len() != n {
        return Err(Error::Dimension {
            context: "mesh_backward field",
            expected: n,
            actual: input.len().max(adjoint.len()),
        });
    }
    // Recompute the forward pass, caching each node's input pair.
    let mut amps: Vec<Complex<S>> = input.to_vec();
    let mut node_in: Vec<(Complex<S>, Complex<S>)> = Vec::with_capacity(mesh.nodes.len());
    for node in &mesh.nodes {
        let (a, b) = (amps[node.upper], amps[node.upper + 1]);
        node_in.push((a, b));
        let u = mzi_transfer(phases[node.theta_idx], phases[node.phi_idx]);
        amps[node.upper] = u[0] * a + u[1] * b;
        amps[node.upper + 1] = u[2] * a + u[3] * b;
    }
    // Output phase shifters: out_m = e^{i psi_m} pre_m.
    let out = mesh.output_phase_offset();
    for m in 0..n {
        let e = Complex::from_polar(S::one(), phases[out + m]);
        let i = Complex::new(S::zero(), S::one());
        // dL/dpsi = Re(conj(g) * i * e * pre)
        grad[out + m] += (adjoint[m].conj() * i * e * amps[m]).re;
        adjoint[m] = adjoint[m] * e.conj();
    }
    for (node, &(a, b)) in mesh.nodes.iter().zip(node_in.iter()).rev() {
        let theta = phases[node.theta_idx];
        let phi = phases[node.phi_idx];
        let (ga, gb) = (adjoint[node.upper], adjoint[node.upper + 1]);
        let (dt, dp) = mzi_transfer_grad(theta, phi);
        // dL/dp = Re(g^H (dU/dp) in)
        grad[node.theta_idx] +=
            (ga.conj() * (dt[0] * a + dt[1] * b) + gb.conj() * (dt[2] * a + dt[3] * b)).re;
        grad[node.phi_idx] +=
            (ga.conj() * (dp[0] * a + dp[1] * b) + gb.conj() * (dp[2] * a + dp[3] * b)).re;
        // g_in = U^H g_out
        let u = mzi_transfer(theta, phi);
        adjoint[node.upper] = u[0].conj() * ga + u[2].conj() * gb;
        adjoint[node.upper + 1] = u[1].conj() * ga + u[3].conj() * gb;
    }
    Ok(())
}

/// Composes the mesh into a dense N x N matrix (column-major application to
/// basis vectors). Test and analysis helper, not used in the hot path.
pub fn compose_unitary<S: Scalar>(mesh: &MeshSpec, phases: &[S]) -> Result<Vec<Vec<Complex<S>>>> {
    let n = mesh.n_modes;
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut amps = vec![Complex::new(S::zero(), S::zero()); n];
        amps[j] = Complex::new(S::one(), S::zero());
        mesh_apply(mesh, phases, &mut amps)?;
        cols.push(amps);
    }
    // Transpose columns into row-major form.
    let mut rows = vec![vec![Complex::new(S::zero(), S::zero()); n]; n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            rows[i][j] = *v;
        }
    }
    Ok(rows)
}

/// Amplitude transmission of the single-parameter MMI/MZI weight element.
#[inline]
pub fn attenuator_amplitude<S: Scalar>(weight_phase: S) -> S {
    (weight_phase / lit::<S>(2.0)).cos().abs()
}

/// Derivative of `attenuator_amplitude`; one-sided zero at the kink.
#[inline]
pub fn attenuator_amplitude_grad<S: Scalar>(weight_phase: S) -> S {
    let half = weight_phase / lit::<S>(2.0);
    let c = half.cos();
    if c == S::zero() {
        return S::zero();
    }
    let sign = if c > S::zero() { S::one() } else { -S::one() };
    -sign * half.sin() * lit::<S>(0.5)
}

/// Wraps a phase to [-pi, pi].
#[inline]
pub fn wrap_phase<S: Scalar>(theta: S) -> S {
    let two_pi = S::PI() + S::PI();
    let mut t = theta % two_pi;
    if t > S::PI() {
        t -= two_pi;
    } else if t < -S::PI() {
        t += two_pi;
    }
    t
}

/// Named layer ranges of the global 2,132-entry parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Layer {
    Conv1,
    Conv2,
    Fc1,
    Nofu,
    Fc2,
}

impl Layer {
    pub const ALL: [Layer; 5] = [Layer::Conv1, Layer::Conv2, Layer::Fc1, Layer::Nofu, Layer::Fc2];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Conv1 => "Conv1",
            Layer::Conv2 => "Conv2",
            Layer::Fc1 => "FC1",
            Layer::Nofu => "NOFU",
            Layer::Fc2 => "FC2",
        }
    }
}

/// Fixed per-layer slices of the global parameter index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout;

impl ParameterLayout {
    pub const TOTAL: usize = TOTAL_PARAMS;

    pub fn range(self, layer: Layer) -> std::ops::Range<usize> {
        match layer {
            Layer::Conv1 => 0..100,
            Layer::Conv2 => 100..564,
            Layer::Fc1 => 564..1924,
            Layer::Nofu => 1924..1988,
            Layer::Fc2 => 1988..2132,
        }
    }

    pub fn layer_of(self, index: usize) -> Option<Layer> {
        Layer::ALL.into_iter().find(|&l| self.range(l).contains(&index))
    }
}

/// Deterministic thermal-crosstalk model: coupling factor plus a symmetric,
/// layer-respecting adjacency between parameter indices.
#[derive(Debug, Clone)]
pub struct CrosstalkModel<S: Scalar> {
    pub xt: S,
    adjacency: Vec<Vec<u32>>,
}

impl<S: Scalar> CrosstalkModel<S> {
    /// Nearest-neighbour adjacency in parameter index, not crossing layer
    /// boundaries. The physical heater layout is unknown; index adjacency
    /// is the deterministic stand-in.
    pub fn nearest_neighbor(xt: S) -> Result<Self> {
        if xt < S::zero() {
            return Err(Error::Config(format!("crosstalk factor must be >= 0, got {xt}")));
        }
        let layout = ParameterLayout;
        let mut adjacency = vec![Vec::new(); TOTAL_PARAMS];
        for layer in Layer::ALL {
            let r = layout.range(layer);
            for i in r.clone() {
                if i > r.start {
                    adjacency[i].push((i - 1) as u32);
                }
                if i + 1 < r.end {
                    adjacency[i].push((i + 1) as u32);
                }
            }
        }
        Ok(Self { xt, adjacency })
    }

    /// Custom adjacency; must be symmetric and stay within layer ranges.
    pub fn with_adjacency(xt: S, adjacency: Vec<Vec<u32>>) -> Result<Self> {
        if adjacency.len() != TOTAL_PARAMS {
            return Err(Error::Dimension {
                context: "crosstalk adjacency",
                expected: TOTAL_PARAMS,
                actual: adjacency.len(),
            });
        }
        let layout = ParameterLayout;
        for (i, neigh) in adjacency.iter().enumerate() {
            for &j in neigh {
                let j = j as usize;
                if layout.layer_of(i) != layout.layer_of(j) {
                    return Err(Error::Config(format!(
                        "adjacency {i} <-> {j} crosses a layer boundary"
                    )));
                }
                if !adjacency[j].contains(&(i as u32)) {
                    return Err(Error::Config(format!("adjacency {i} -> {j} is not symmetric")));
                }
            }
        }
        Ok(Self { xt, adjacency })
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }
}

/// Effective phases under crosstalk: theta'_i = theta_i + xt * sum of
/// neighbour phases. Linear in the input; identity at xt = 0.
pub fn apply_crosstalk<S: Scalar>(phases: &[S], model: &CrosstalkModel<S>) -> Vec<S> {
    let mut out = phases.to_vec();
    if model.xt == S::zero() {
        return out;
    }
    for (i, neigh) in model.adjacency.iter().enumerate() {
        if i >= phases.len() {
            break;
        }
        let mut leak = S::zero();
        for &j in neigh {
            leak += phases[j as usize];
        }
        out[i] = phases[i] + model.xt * leak;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn max_unitarity_defect(mesh: &MeshSpec, phases: &[f64]) -> f64 {
        let u = compose_unitary(mesh, phases).unwrap();
        let n = mesh.n_modes;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                // (U^H U)_ij
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    acc += u[k][i].conj() * u[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }

    #[test]
    fn mzi_bar_and_cross_states() {
        let bar = mzi_transfer(std::f64::consts::PI, 0.0);
        assert!(bar[1].norm() < 1e-15 && bar[2].norm() < 1e-15);
        let cross = mzi_transfer(0.0, 0.0);
        assert!(cross[0].norm() < 1e-15 && cross[3].norm() < 1e-15);
    }

    #[test]
    fn mzi_unitarity_at_spec_point() {
        let u = mzi_transfer(0.7, 1.3);
        // U^H U per entry
        let e00 = u[0].conj() * u[0] + u[2].conj() * u[2];
        let e01 = u[0].conj() * u[1] + u[2].conj() * u[3];
        let e11 = u[1].conj() * u[1] + u[3].conj() * u[3];
        assert!((e00 - 1.0).norm() < 1e-14);
        assert!(e01.norm() < 1e-14);
        assert!((e11 - 1.0).norm() < 1e-14);
    }

    #[test]
    fn mzi_grad_matches_finite_differences() {
        let (theta, phi) = (0.9, -1.7);
        let (dt, dp) = mzi_transfer_grad(theta, phi);
        let h = 1e-6;
        let up = mzi_transfer(theta + h, phi);
        let dn = mzi_transfer(theta - h, phi);
        for k in 0..4 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((fd - dt[k]).norm() < 1e-8, "theta entry {k}");
        }
        let up = mzi_transfer(theta, phi + h);
        let dn = mzi_transfer(theta, phi - h);
        for k in 0..4 {
            let fd = (up[k] - dn[k]) / (2.0 * h);
            assert!((fd - dp[k]).norm() < 1e-8, "phi entry {k}");
        }
    }

    #[test]
    fn clements_mesh_counts() {
        for (n, nodes, params) in [(10usize, 45usize, 100usize), (8, 28, 64), (2, 1, 4), (12, 66, 144), (32, 496, 1024)] {
            let mesh = build_clements_mesh(n).unwrap();
            assert_eq!(mesh.nodes.len(), nodes);
            assert_eq!(mesh.param_count(), params);
        }
        assert!(matches!(build_clements_mesh(1), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn clements_column_parity() {
        let mesh = build_clements_mesh(10).unwrap();
        for node in &mesh.nodes {
            assert_eq!(node.upper % 2, node.column % 2);
        }
    }

    #[test]
    fn single_node_mesh_equals_mzi() {
        let mesh = build_clements_mesh(2).unwrap();
        let phases = [0.4, -1.1, 0.0, 0.0];
        let field = OpticalField::new(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], 0);
        let out = mesh_forward(&mesh, &phases, &field).unwrap();
        let u = mzi_transfer(0.4, -1.1);
        assert!((out.amplitudes[0] - u[0]).norm() < 1e-15);
        assert!((out.amplitudes[1] - u[2]).norm() < 1e-15);
    }

    #[test]
    fn all_cross_mesh_matches_block_composition() {
        // N=4, all phases zero: each MZI is the cross matrix
        // C = [[0, i], [i, 0]] and the mesh is a product of column blocks.
        let mesh = build_clements_mesh(4).unwrap();
        let phases = vec![0.0; 16];
        let u = compose_unitary(&mesh, &phases).unwrap();
        // Oracle: multiply the per-column block matrices by hand.
        let i = Complex64::new(0.0, 1.0);
        let z = Complex64::new(0.0, 0.0);
        let cross2 = |m: &mut [[Complex64; 4]; 4], top: usize| {
            let mut next = *m;
            for col in 0..4 {
                next[top][col] = i * m[top + 1][col];
                next[top + 1][col] = i * m[top][col];
            }
            *m = next;
        };
        let mut oracle = [[z; 4]; 4];
        for d in 0..4 {
            oracle[d][d] = Complex64::new(1.0, 0.0);
        }
        for column in 0..4 {
            let start = column % 2;
            let mut top = start;
            while top + 1 < 4 {
                cross2(&mut oracle, top);
                top += 2;
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                assert!((u[r][c] - oracle[r][c]).norm() < 1e-14, "entry {r},{c}");
            }
        }
    }

    #[test]
    fn mesh_backward_matches_finite_differences() {
        let mesh = build_clements_mesh(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phases: Vec<f64> = (0..36).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let input: Vec<Complex64> = (0..6)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        // L = sum |out|^4 gives a nontrivial real loss.
        let loss = |ph: &[f64]| -> f64 {
            let mut amps = input.clone();
            mesh_apply(&mesh, ph, &mut amps).unwrap();
            amps.iter().map(|a| a.norm_sqr().powi(2)).sum()
        };
        let mut amps = input.clone();
        mesh_apply(&mesh, &phases, &mut amps).unwrap();
        // dL/d out with the complex adjoint convention.
        let mut adj: Vec<Complex64> = amps.iter().map(|a| *a * 4.0 * a.norm_sqr()).collect();
        let mut grad = vec![0.0; 36];
        mesh_backward(&mesh, &phases, &input, &mut adj, &mut grad).unwrap();
        let h = 1e-6;
        for k in 0..36 {
            let mut up_p = phases.clone();
            up_p[k] += h;
            let mut dn_p = phases.clone();
            dn_p[k] -= h;
            let fd = (loss(&up_p) - loss(&dn_p)) / (2.0 * h);
            assert!(
                (fd - grad[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {k}: fd {fd} vs analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn attenuator_values() {
        assert!((attenuator_amplitude(0.0f64) - 1.0).abs() < 1e-15);
        assert!(attenuator_amplitude(std::f64::consts::PI).abs() < 1e-15);
        assert!((attenuator_amplitude(std::f64::consts::FRAC_PI_2) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn layout_matches_table() {
        let layout = ParameterLayout;
        assert_eq!(layout.range(Layer::Conv1), 0..100);
        assert_eq!(layout.range(Layer::Conv2), 100..564);
        assert_eq!(layout.range(Layer::Fc1), 564..1924);
        assert_eq!(layout.range(Layer::Nofu), 1924..1988);
        assert_eq!(layout.range(Layer::Fc2), 1988..2132);
        let total: usize = Layer::ALL.iter().map(|&l| layout.range(l).len()).sum();
        assert_eq!(total, TOTAL_PARAMS);
        assert_eq!(layout.layer_of(99), Some(Layer::Conv1));
        assert_eq!(layout.layer_of(100), Some(Layer::Conv2));
        assert_eq!(layout.layer_of(2131), Some(Layer::Fc2));
        assert_eq!(layout.layer_of(2132), None);
    }

    #[test]
    fn crosstalk_identity_at_zero() {
        let theta: Vec<f64> = (0..TOTAL_PARAMS).map(|i| (i as f64) * 0.01 - 5.0).collect();
        let model = CrosstalkModel::nearest_neighbor(0.0).unwrap();
        assert_eq!(apply_crosstalk(&theta, &model), theta);
    }

    #[test]
    fn crosstalk_two_mutually_adjacent() {
        // xt = 0.1, theta = (1.0, 2.0) mutually adjacent -> (1.2, 2.1)
        let adjacency = {
            let mut a = vec![Vec::new(); TOTAL_PARAMS];
            a[0] = vec![1];
            a[1] = vec![0];
            a
        };
        let model = CrosstalkModel::with_adjacency(0.1, adjacency).unwrap();
        let mut theta = vec![0.0f64; TOTAL_PARAMS];
        theta[0] = 1.0;
        theta[1] = 2.0;
        let out = apply_crosstalk(&theta, &model);
        assert!((out[0] - 1.2).abs() < 1e-15);
        assert!((out[1] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn crosstalk_never_crosses_layers() {
        let model = CrosstalkModel::nearest_neighbor(0.1f64).unwrap();
        let layout = ParameterLayout;
        // Perturb only Conv2; all other layers' effective phases stay fixed.
        let mut theta = vec![0.0f64; TOTAL_PARAMS];
        for i in layout.range(Layer::Conv2) {
            theta[i] = 1.0;
        }
        let out = apply_crosstalk(&theta, &model);
        for layer in Layer::ALL {
            if layer == Layer::Conv2 {
                continue;
            }
            for i in layout.range(layer) {
                assert_eq!(out[i], 0.0, "index {i} leaked across layers");
            }
        }
    }

    #[test]
    fn crosstalk_rejects_cross_layer_adjacency() {
        let mut a = vec![Vec::new(); TOTAL_PARAMS];
        a[99] = vec![100];
        a[100] = vec![99];
        assert!(CrosstalkModel::with_adjacency(0.1, a).is_err());
    }

    proptest! {
        #[test]
        fn mzi_always_unitary(theta in -10.0f64..10.0, phi in -10.0f64..10.0) {
            let u = mzi_transfer(theta, phi);
            let e00 = u[0].conj() * u[0] + u[2].conj() * u[2];
            let e01 = u[0].conj() * u[1] + u[2].conj() * u[3];
            let e11 = u[1].conj() * u[1] + u[3].conj() * u[3];
            prop_assert!((e00 - 1.0).norm() < 1e-13);
            prop_assert!(e01.norm() < 1e-13);
            prop_assert!((e11 - 1.0).norm() < 1e-13);
        }

        #[test]
        fn mesh_preserves_power(n in 2usize..12, seed in 0u64..1000) {
            let mesh = build_clements_mesh(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phases: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-6.28..6.28)).collect();
            let amps: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let field = OpticalField::new(amps, 0);
            let out = mesh_forward(&mesh, &phases, &field).unwrap();
            prop_assert!((out.power() - field.power()).abs() < 1e-12);
        }

        #[test]
        fn mesh_unitary_property(n in 2usize..10, seed in 0u64..200) {
            let mesh = build_clements_mesh(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phases: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-6.28..6.28)).collect();
            prop_assert!(max_unitarity_defect(&mesh, &phases) < 1e-12);
        }

        #[test]
        fn wrap_phase_bounded(theta in -50.0f64..50.0) {
            let w = wrap_phase(theta);
            prop_assert!(w >= -std::f64::consts::PI && w <= std::f64::consts::PI);
            // Same realized transfer.
            let a = mzi_transfer(theta, 0.0);
            let b = mzi_transfer(w, 0.0);
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).norm() < 1e-12);
            }
        }

        #[test]
        fn crosstalk_is_linear(seed in 0u64..200, xt in 0.0f64..0.3) {
            let model = CrosstalkModel::nearest_neighbor(xt).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..TOTAL_PARAMS).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..TOTAL_PARAMS).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ca = apply_crosstalk(&a, &model);
            let cb = apply_crosstalk(&b, &model);
            let cs = apply_crosstalk(&sum, &model);
            for i in 0..TOTAL_PARAMS {
                prop_assert!((cs[i] - ca[i] - cb[i]).abs() < 1e-10);
            }
        }
    }
}
