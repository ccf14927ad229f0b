use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{binomial, pair_rank, HWBasis};
use crate::circuit::{Circuit, GateOp};
use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::subspace::SubspaceVector;

/// Wiring patterns for a trainable orthogonal block on n wires.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// Diamond of n(n−1)/2 rotations, depth 2n−3: a full orthogonal group.
    Pyramid,
    /// Two crossed diagonals, 2n−3 rotations, depth n−1 for even n.
    XCircuit,
    /// FFT-style stages, (n/2)·log2(n) rotations, depth log2(n); n must be a
    /// power of two.
    Butterfly,
    /// Single descending diagonal of n−1 rotations.
    Backslash,
}

impl LayoutKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayoutKind::Pyramid => "pyramid",
            LayoutKind::XCircuit => "x_circuit",
            LayoutKind::Butterfly => "butterfly",
            LayoutKind::Backslash => "backslash",
        }
    }

    pub const ALL: [LayoutKind; 4] = [
        LayoutKind::Pyramid,
        LayoutKind::XCircuit,
        LayoutKind::Butterfly,
        LayoutKind::Backslash,
    ];
}

/// Rotation slots in gate order. Each pair is oriented (higher wire, lower
/// wire): with the amplitude convention used by the simulators this makes a
/// slot act on the coordinate pair (v_lo, v_hi) as
/// [[cosθ, sinθ], [−sinθ, cosθ]], the planar-rotation convention the
/// layer-gradient identities are written against.
pub fn layout_pairs(layout: LayoutKind, n: usize) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(CoreError::InvalidDimension { n, k: 1 });
    }
    match layout {
        LayoutKind::Pyramid => {
            let mut out = Vec::with_capacity(n * (n - 1) / 2);
            let last = 2 * n - 4;
            for t in 0..=last {
                let mut i = t % 2;
                while i <= t.min(last - t) {
                    out.push((i + 1, i));
                    i += 2;
                }
            }
            Ok(out)
        }
        LayoutKind::XCircuit => {
            let mut out = Vec::with_capacity(2 * n - 3);
            for t in 0..n - 1 {
                out.push((t + 1, t));
                let skip = if n % 2 == 0 { t == (n - 2) / 2 } else { t == (n - 1) / 2 };
                if !skip {
                    out.push((n - 1 - t, n - 2 - t));
                }
            }
            Ok(out)
        }
        LayoutKind::Butterfly => {
            if !n.is_power_of_two() {
                return Err(CoreError::ButterflySize { n });
            }
            let stages = n.ilog2() as usize;
            let mut out = Vec::with_capacity(n / 2 * stages);
            for s in (0..stages).rev() {
                let stride = 1usize << s;
                for i in (0..n).filter(|i| i & stride == 0) {
                    out.push((i | stride, i));
                }
            }
            Ok(out)
        }
        LayoutKind::Backslash => Ok((0..n - 1).map(|i| (i + 1, i)).collect()),
    }
}

/// A trainable orthogonal transform: a fixed rotation layout with one angle
/// per slot, optionally followed by a sign flip on the last wire so the
/// determinant can reach −1.
#[derive(Clone, Debug)]
pub struct OrthoLayer {
    pub n: usize,
    pub layout: LayoutKind,
    pub pairs: Vec<(usize, usize)>,
    pub angles: Vec<f64>,
    pub det_flip: bool,
}

impl OrthoLayer {
    pub fn angle_count(layout: LayoutKind, n: usize) -> usize {
        match layout {
            LayoutKind::Pyramid => n * (n - 1) / 2,
            LayoutKind::XCircuit => 2 * n - 3,
            LayoutKind::Butterfly => n / 2 * n.ilog2() as usize,
            LayoutKind::Backslash => n - 1,
        }
    }

    pub fn new(layout: LayoutKind, n: usize, angles: Vec<f64>, det_flip: bool) -> Result<Self> {
        let pairs = layout_pairs(layout, n)?;
        if angles.len() != pairs.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} angles for a {} layout with {} slots",
                angles.len(),
                layout.name(),
                pairs.len()
            )));
        }
        Ok(OrthoLayer { n, layout, pairs, angles, det_flip })
    }

    /// All-zero angles: the identity transform (or the last-wire sign flip
    /// when `det_flip` is requested separately).
    pub fn identity(layout: LayoutKind, n: usize) -> Result<Self> {
        let pairs = layout_pairs(layout, n)?;
        let angles = vec![0.0; pairs.len()];
        Ok(OrthoLayer { n, layout, pairs, angles, det_flip: false })
    }

    pub fn circuit(&self) -> Circuit {
        let mut c = Circuit::new(self.n);
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles) {
            c.rbs(a, b, theta).expect("layout wires are in range");
        }
        if self.det_flip {
            c.push(GateOp::PauliZ { wire: self.n - 1 }).expect("wire in range");
        }
        c
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(CoreError::ShapeMismatch(format!(
                "vector of length {len} for a {}-wire layer",
                self.n
            )));
        }
        Ok(())
    }

    /// Action on single-excitation amplitudes, i.e. the orthogonal matrix
    /// applied to an ordinary coordinate vector.
    pub fn apply_unary(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut w = v.to_vec();
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles) {
            let (c, s) = (theta.cos(), theta.sin());
            let (alpha, beta) = (w[a], w[b]);
            w[a] = c * alpha - s * beta;
            w[b] = s * alpha + c * beta;
        }
        if self.det_flip {
            w[self.n - 1] = -w[self.n - 1];
        }
        Ok(w)
    }

    /// Inverse (= transpose) of `apply_unary`.
    pub fn apply_unary_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut w = v.to_vec();
        if self.det_flip {
            w[self.n - 1] = -w[self.n - 1];
        }
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles).rev() {
            let (c, s) = (theta.cos(), theta.sin());
            let (alpha, beta) = (w[a], w[b]);
            w[a] = c * alpha + s * beta;
            w[b] = -s * alpha + c * beta;
        }
        Ok(w)
    }

    /// The transform as an explicit n×n orthogonal matrix.
    pub fn unary_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for j in 0..self.n {
            let mut e = vec![0.0; self.n];
            e[j] = 1.0;
            let col = self.apply_unary(&e).expect("length checked");
            for i in 0..self.n {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    /// Action on the two-excitation sector, using the parity sign for slots
    /// that straddle an occupied spectator wire. Equals the second compound
    /// matrix of `unary_matrix` applied to the amplitude vector.
    pub fn apply_hw2(&self, state: &SubspaceVector) -> Result<SubspaceVector> {
        let n = self.n;
        if state.basis.n() != n || state.basis.k() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "layer on {n} wires applied to a ({}, {}) basis",
                state.basis.n(),
                state.basis.k()
            )));
        }
        let mut out = state.clone();
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles) {
            rbs_hw2_in_place(&mut out.amplitudes, n, a, b, theta);
        }
        if self.det_flip {
            z_hw2_in_place(&mut out.amplitudes, n, n - 1);
        }
        Ok(out)
    }

    /// Reverse-mode derivative of `apply_unary`: given the layer input and a
    /// cotangent on the output, returns (∂L/∂θ for every slot, ∂L/∂input).
    /// Works by inverting the orthogonal flow gate by gate, so nothing from
    /// the forward pass needs to be stored.
    pub fn layer_grad(&self, v: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(v.len())?;
        self.check_len(u.len())?;
        let mut w = self.apply_unary(v)?;
        let mut u = u.to_vec();
        if self.det_flip {
            w[self.n - 1] = -w[self.n - 1];
            u[self.n - 1] = -u[self.n - 1];
        }
        let mut grads = vec![0.0; self.angles.len()];
        for (slot, (&(a, b), &theta)) in self.pairs.iter().zip(&self.angles).enumerate().rev() {
            let (c, s) = (theta.cos(), theta.sin());
            // Pre-gate state.
            let alpha = c * w[a] + s * w[b];
            let beta = -s * w[a] + c * w[b];
            grads[slot] = u[a] * (-s * alpha - c * beta) + u[b] * (c * alpha - s * beta);
            let (ua, ub) = (u[a], u[b]);
            u[a] = c * ua + s * ub;
            u[b] = -s * ua + c * ub;
            w[a] = alpha;
            w[b] = beta;
        }
        Ok((grads, u))
    }

    /// `layer_grad` summed over a batch of input/cotangent column pairs.
    pub fn layer_grad_batch(
        &self,
        inputs: &[Vec<f64>],
        cotangents: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        if inputs.len() != cotangents.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} inputs with {} cotangents",
                inputs.len(),
                cotangents.len()
            )));
        }
        let mut grads = vec![0.0; self.angles.len()];
        let mut input_grads = Vec::with_capacity(inputs.len());
        for (v, u) in inputs.iter().zip(cotangents) {
            let (g, du) = self.layer_grad(v, u)?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
            input_grads.push(du);
        }
        Ok((grads, input_grads))
    }

    /// Reverse-mode derivative of `apply_hw2`, same contract as
    /// `layer_grad` but over two-excitation amplitude vectors.
    pub fn layer_grad_hw2(
        &self,
        state: &SubspaceVector,
        cotangent: &SubspaceVector,
    ) -> Result<(Vec<f64>, SubspaceVector)> {
        let n = self.n;
        if state.basis.n() != n
            || state.basis.k() != 2
            || cotangent.basis.n() != n
            || cotangent.basis.k() != 2
        {
            return Err(CoreError::ShapeMismatch(format!(
                "two-excitation gradient on a ({}, {}) basis for a {n}-wire layer",
                state.basis.n(),
                state.basis.k()
            )));
        }
        let mut w = self.apply_hw2(state)?;
        let mut u = cotangent.clone();
        if self.det_flip {
            z_hw2_in_place(&mut w.amplitudes, n, n - 1);
            z_hw2_in_place(&mut u.amplitudes, n, n - 1);
        }
        let mut grads = vec![0.0; self.angles.len()];
        for (slot, (&(a, b), &theta)) in self.pairs.iter().zip(&self.angles).enumerate().rev() {
            let (c, s) = (theta.cos(), theta.sin());
            let (lo, hi) = (a.min(b), a.max(b));
            for spect in 0..n {
                if spect == a || spect == b {
                    continue;
                }
                let sg = if lo < spect && spect < hi { -1.0 } else { 1.0 };
                let ia = pair_rank(n, a.min(spect), a.max(spect));
                let ib = pair_rank(n, b.min(spect), b.max(spect));
                // Pre-gate amplitudes of the (with-a, with-b) pair.
                let alpha = c * w.amplitudes[ia] + sg * s * w.amplitudes[ib];
                let beta = -sg * s * w.amplitudes[ia] + c * w.amplitudes[ib];
                grads[slot] += u.amplitudes[ia] * (-s * alpha - sg * c * beta)
                    + u.amplitudes[ib] * (sg * c * alpha - s * beta);
                let (ua, ub) = (u.amplitudes[ia], u.amplitudes[ib]);
                u.amplitudes[ia] = c * ua + sg * s * ub;
                u.amplitudes[ib] = -sg * s * ua + c * ub;
                w.amplitudes[ia] = alpha;
                w.amplitudes[ib] = beta;
            }
        }
        Ok((grads, u))
    }
}

/// Two-excitation action of one rotation, via the closed-form pair index —
/// no hash lookups, so the compound forward/backward passes stay cheap.
fn rbs_hw2_in_place(amps: &mut [f64], n: usize, a: usize, b: usize, theta: f64) {
    let (c, s) = (theta.cos(), theta.sin());
    let (lo, hi) = (a.min(b), a.max(b));
    for spect in 0..n {
        if spect == a || spect == b {
            continue;
        }
        let sg = if lo < spect && spect < hi { -1.0 } else { 1.0 };
        let ia = pair_rank(n, a.min(spect), a.max(spect));
        let ib = pair_rank(n, b.min(spect), b.max(spect));
        let (alpha, beta) = (amps[ia], amps[ib]);
        amps[ia] = c * alpha - sg * s * beta;
        amps[ib] = sg * s * alpha + c * beta;
    }
}

fn z_hw2_in_place(amps: &mut [f64], n: usize, wire: usize) {
    for other in 0..n {
        if other != wire {
            let idx = pair_rank(n, other.min(wire), other.max(wire));
            amps[idx] = -amps[idx];
        }
    }
}

/// Second compound matrix: entry (rank(i1,i2), rank(j1,j2)) is the 2×2 minor
/// of `v` on rows {i1,i2} and columns {j1,j2}. The two-excitation action of
/// an orthogonal block equals the compound of its one-excitation action.
pub fn compound2_matrix(v: &Mat) -> Result<Mat> {
    if v.rows() != v.cols() || v.rows() < 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "second compound of a {}×{} matrix",
            v.rows(),
            v.cols()
        )));
    }
    let n = v.rows();
    let dim = binomial(n, 2);
    let mut out = Mat::zeros(dim, dim);
    for i1 in 0..n {
        for i2 in i1 + 1..n {
            let r = pair_rank(n, i1, i2);
            for j1 in 0..n {
                for j2 in j1 + 1..n {
                    let c = pair_rank(n, j1, j2);
                    out[(r, c)] = v[(i1, j1)] * v[(i2, j2)] - v[(i1, j2)] * v[(i2, j1)];
                }
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper: the two-excitation basis the layer acts on.
pub fn hw2_basis(n: usize) -> Result<Arc<HWBasis>> {
    Ok(Arc::new(HWBasis::new(n, 2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use crate::subspace::apply_circuit_subspace;

    fn random_layer(layout: LayoutKind, n: usize, rng: &mut Pcg32, det_flip: bool) -> OrthoLayer {
        let angles: Vec<f64> = (0..OrthoLayer::angle_count(layout, n))
            .map(|_| rng.uniform(-2.5, 2.5))
            .collect();
        OrthoLayer::new(layout, n, angles, det_flip).unwrap()
    }

    #[test]
    fn slot_and_depth_census() {
        // (layout, n, slots, scheduled depth)
        let cases = [
            (LayoutKind::Pyramid, 4, 6, 5),
            (LayoutKind::Pyramid, 8, 28, 13),
            (LayoutKind::Pyramid, 16, 120, 29),
            (LayoutKind::XCircuit, 4, 5, 3),
            (LayoutKind::XCircuit, 8, 13, 7),
            (LayoutKind::XCircuit, 16, 29, 15),
            (LayoutKind::Butterfly, 4, 4, 2),
            (LayoutKind::Butterfly, 8, 12, 3),
            (LayoutKind::Butterfly, 16, 32, 4),
            (LayoutKind::Backslash, 8, 7, 7),
        ];
        for (layout, n, slots, depth) in cases {
            let layer = OrthoLayer::identity(layout, n).unwrap();
            assert_eq!(layer.pairs.len(), slots, "{layout:?} n={n} slots");
            assert_eq!(OrthoLayer::angle_count(layout, n), slots);
            assert_eq!(layer.circuit().depth(), depth, "{layout:?} n={n} depth");
        }
    }

    #[test]
    fn odd_x_circuit_stays_at_the_slot_budget() {
        for n in [3usize, 5, 7, 9] {
            let pairs = layout_pairs(LayoutKind::XCircuit, n).unwrap();
            assert_eq!(pairs.len(), 2 * n - 3, "n={n}");
        }
        let layer = OrthoLayer::identity(LayoutKind::XCircuit, 5).unwrap();
        assert_eq!(layer.circuit().depth(), 5);
    }

    #[test]
    fn butterfly_rejects_non_power_of_two() {
        assert!(matches!(
            layout_pairs(LayoutKind::Butterfly, 6),
            Err(CoreError::ButterflySize { n: 6 })
        ));
    }

    #[test]
    fn transform_is_orthogonal_with_unit_determinant() {
        let mut rng = Pcg32::new(5, 17);
        for layout in LayoutKind::ALL {
            for n in [2usize, 4, 8] {
                let layer = random_layer(layout, n, &mut rng, false);
                let w = layer.unary_matrix();
                let gram = w.transpose().matmul(&w);
                assert!(gram.max_abs_diff(&Mat::eye(n)) < 1e-12, "{layout:?} n={n}");
                assert!((w.det() - 1.0).abs() < 1e-10, "{layout:?} n={n} det");
            }
        }
    }

    #[test]
    fn sign_flip_reaches_determinant_minus_one() {
        let mut rng = Pcg32::new(6, 18);
        let layer = random_layer(LayoutKind::Pyramid, 5, &mut rng, true);
        let w = layer.unary_matrix();
        assert!((w.det() + 1.0).abs() < 1e-10);
        let gram = w.transpose().matmul(&w);
        assert!(gram.max_abs_diff(&Mat::eye(5)) < 1e-12);
    }

    #[test]
    fn unary_action_agrees_with_the_subspace_simulator() {
        let mut rng = Pcg32::new(7, 19);
        for layout in LayoutKind::ALL {
            let n = 8;
            let layer = random_layer(layout, n, &mut rng, false);
            let reduced = crate::subspace::reduced_matrix(&layer.circuit(), 1).unwrap();
            let w = layer.unary_matrix();
            assert!(reduced.max_abs_diff(&w) < 1e-12, "{layout:?}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = Pcg32::new(8, 20);
        for layout in LayoutKind::ALL {
            let layer = random_layer(layout, 8, &mut rng, true);
            let v: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w = layer.apply_unary(&v).unwrap();
            let back = layer.apply_unary_inverse(&w).unwrap();
            for (x, y) in v.iter().zip(&back) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_excitation_action_is_the_second_compound() {
        let mut rng = Pcg32::new(9, 21);
        for layout in LayoutKind::ALL {
            for n in [4usize, 8] {
                for det_flip in [false, true] {
                    let layer = random_layer(layout, n, &mut rng, det_flip);
                    let basis = hw2_basis(n).unwrap();
                    let amps: Vec<f64> =
                        (0..basis.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                    let state =
                        SubspaceVector::from_amplitudes(basis.clone(), amps.clone()).unwrap();
                    let fast = layer.apply_hw2(&state).unwrap();
                    let compound = compound2_matrix(&layer.unary_matrix()).unwrap();
                    let expect = compound.matvec(&amps);
                    for (got, want) in fast.amplitudes.iter().zip(&expect) {
                        assert!(
                            (got - want).abs() < 1e-10,
                            "{layout:?} n={n} flip={det_flip}"
                        );
                    }
                    // And both agree with the generic gate-by-gate simulator.
                    let slow = apply_circuit_subspace(&layer.circuit(), &state).unwrap();
                    for (got, want) in fast.amplitudes.iter().zip(&slow.amplitudes) {
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn compound_of_identity_and_products() {
        let n = 5;
        let eye = compound2_matrix(&Mat::eye(n)).unwrap();
        assert!(eye.max_abs_diff(&Mat::eye(binomial(n, 2))) < 1e-15);
        let mut rng = Pcg32::new(10, 22);
        let a = random_layer(LayoutKind::Pyramid, n, &mut rng, false).unary_matrix();
        let b = random_layer(LayoutKind::XCircuit, n, &mut rng, true).unary_matrix();
        let lhs = compound2_matrix(&a.matmul(&b)).unwrap();
        let rhs = compound2_matrix(&a).unwrap().matmul(&compound2_matrix(&b).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn single_slot_gradient_is_minus_cosine() {
        // One rotation on two wires, input (1,0), cotangent (0,1): the
        // second output coordinate is −sinθ, so the angle gradient must be
        // −cosθ.
        for theta in [0.0, 0.3, -1.2, 2.5] {
            let layer = OrthoLayer::new(LayoutKind::Backslash, 2, vec![theta], false).unwrap();
            let out = layer.apply_unary(&[1.0, 0.0]).unwrap();
            assert!((out[0] - theta.cos()).abs() < 1e-15);
            assert!((out[1] + theta.sin()).abs() < 1e-15);
            let (grads, _) = layer.layer_grad(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
            assert!((grads[0] + theta.cos()).abs() < 1e-12, "theta={theta}");
        }
    }

    fn fd_angle_grads(layer: &OrthoLayer, v: &[f64], u: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..layer.angles.len())
            .map(|slot| {
                let mut plus = layer.clone();
                plus.angles[slot] += h;
                let mut minus = layer.clone();
                minus.angles[slot] -= h;
                let lp: f64 =
                    plus.apply_unary(v).unwrap().iter().zip(u).map(|(a, b)| a * b).sum();
                let lm: f64 =
                    minus.apply_unary(v).unwrap().iter().zip(u).map(|(a, b)| a * b).sum();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn layer_grad_matches_finite_differences() {
        let mut rng = Pcg32::new(11, 23);
        for layout in LayoutKind::ALL {
            for det_flip in [false, true] {
                let n = 8;
                let layer = random_layer(layout, n, &mut rng, det_flip);
                let v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let u: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let (grads, input_grad) = layer.layer_grad(&v, &u).unwrap();
                let fd = fd_angle_grads(&layer, &v, &u);
                for (slot, (g, f)) in grads.iter().zip(&fd).enumerate() {
                    assert!(
                        (g - f).abs() < 1e-6 * f.abs().max(1.0),
                        "{layout:?} flip={det_flip} slot {slot}: {g} vs {f}"
                    );
                }
                // Input gradient: perturb each coordinate.
                let h = 1e-6;
                for i in 0..n {
                    let mut vp = v.clone();
                    vp[i] += h;
                    let mut vm = v.clone();
                    vm[i] -= h;
                    let lp: f64 =
                        layer.apply_unary(&vp).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum();
                    let lm: f64 =
                        layer.apply_unary(&vm).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum();
                    let f = (lp - lm) / (2.0 * h);
                    assert!((input_grad[i] - f).abs() < 1e-6 * f.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn two_excitation_gradient_matches_finite_differences() {
        let mut rng = Pcg32::new(12, 24);
        for layout in [LayoutKind::Pyramid, LayoutKind::Butterfly] {
            for det_flip in [false, true] {
                let n = 8;
                let layer = random_layer(layout, n, &mut rng, det_flip);
                let basis = hw2_basis(n).unwrap();
                let amps: Vec<f64> = (0..basis.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let cots: Vec<f64> = (0..basis.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
                let state = SubspaceVector::from_amplitudes(basis.clone(), amps.clone()).unwrap();
                let cot = SubspaceVector::from_amplitudes(basis.clone(), cots.clone()).unwrap();
                let (grads, input_grad) = layer.layer_grad_hw2(&state, &cot).unwrap();
                let h = 1e-6;
                for slot in 0..layer.angles.len() {
                    let mut plus = layer.clone();
                    plus.angles[slot] += h;
                    let mut minus = layer.clone();
                    minus.angles[slot] -= h;
                    let lp: f64 = plus
                        .apply_hw2(&state)
                        .unwrap()
                        .amplitudes
                        .iter()
                        .zip(&cots)
                        .map(|(a, b)| a * b)
                        .sum();
                    let lm: f64 = minus
                        .apply_hw2(&state)
                        .unwrap()
                        .amplitudes
                        .iter()
                        .zip(&cots)
                        .map(|(a, b)| a * b)
                        .sum();
                    let f = (lp - lm) / (2.0 * h);
                    assert!(
                        (grads[slot] - f).abs() < 1e-6 * f.abs().max(1.0),
                        "{layout:?} flip={det_flip} slot {slot}"
                    );
                }
                // Input gradient is the transpose action on the cotangent.
                for idx in 0..basis.len() {
                    let mut ap = amps.clone();
                    ap[idx] += h;
                    let mut am = amps.clone();
                    am[idx] -= h;
                    let sp = SubspaceVector::from_amplitudes(basis.clone(), ap).unwrap();
                    let sm = SubspaceVector::from_amplitudes(basis.clone(), am).unwrap();
                    let lp: f64 = layer
                        .apply_hw2(&sp)
                        .unwrap()
                        .amplitudes
                        .iter()
                        .zip(&cots)
                        .map(|(a, b)| a * b)
                        .sum();
                    let lm: f64 = layer
                        .apply_hw2(&sm)
                        .unwrap()
                        .amplitudes
                        .iter()
                        .zip(&cots)
                        .map(|(a, b)| a * b)
                        .sum();
                    let f = (lp - lm) / (2.0 * h);
                    assert!((input_grad.amplitudes[idx] - f).abs() < 1e-6 * f.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn batched_gradient_sums_columns() {
        let mut rng = Pcg32::new(13, 25);
        let layer = random_layer(LayoutKind::Pyramid, 5, &mut rng, false);
        let inputs: Vec<Vec<f64>> =
            (0..3).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let cots: Vec<Vec<f64>> =
            (0..3).map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let (batch, per_input) = layer.layer_grad_batch(&inputs, &cots).unwrap();
        let mut expect = vec![0.0; layer.angles.len()];
        for (v, u) in inputs.iter().zip(&cots) {
            let (g, du) = layer.layer_grad(v, u).unwrap();
            for (acc, gi) in expect.iter_mut().zip(&g) {
                *acc += gi;
            }
            let idx = inputs.iter().position(|x| std::ptr::eq(x, v)).unwrap();
            for (a, b) in per_input[idx].iter().zip(&du) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        for (a, b) in batch.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn angle_count_rejects_mismatch() {
        assert!(OrthoLayer::new(LayoutKind::Pyramid, 4, vec![0.0; 5], false).is_err());
    }
}
