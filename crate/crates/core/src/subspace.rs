use std::sync::Arc;

use crate::basis::HWBasis;
use crate::circuit::{Circuit, GateOp};
use crate::error::{CoreError, Result};
use crate::mat::Mat;

/// Real amplitude vector over a fixed-hamming-weight basis.
#[derive(Clone, Debug)]
pub struct SubspaceVector {
    pub basis: Arc<HWBasis>,
    pub amplitudes: Vec<f64>,
}

impl SubspaceVector {
    pub fn zero(basis: Arc<HWBasis>) -> Self {
        let len = basis.len();
        SubspaceVector { basis, amplitudes: vec![0.0; len] }
    }

    /// The basis state whose occupied wires are exactly `mask`.
    pub fn basis_state(basis: Arc<HWBasis>, mask: u64) -> Result<Self> {
        let idx = basis.index_of(mask).ok_or_else(|| {
            CoreError::ShapeMismatch(format!(
                "mask {mask:#b} is not a weight-{} state on {} wires",
                basis.k(),
                basis.n()
            ))
        })?;
        let mut v = SubspaceVector::zero(basis);
        v.amplitudes[idx] = 1.0;
        Ok(v)
    }

    pub fn from_amplitudes(basis: Arc<HWBasis>, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != basis.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} amplitudes for a basis of {}",
                amplitudes.len(),
                basis.len()
            )));
        }
        Ok(SubspaceVector { basis, amplitudes })
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Bits strictly between wires `a` and `b` (exclusive on both ends).
#[inline]
pub(crate) fn between_mask(a: usize, b: usize) -> u64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if hi - lo <= 1 {
        0
    } else {
        (1u64 << hi) - (1u64 << (lo + 1))
    }
}

/// Occupation-parity sign for a two-wire mixer acting across a register: the
/// amplitude transfer between S∪{a} and S∪{b} flips sign once per occupied
/// wire strictly between a and b. This is what makes the weight-2 action of a
/// circuit equal the second compound matrix of its weight-1 action, for any
/// wiring — adjacent-wire gates never see it.
#[inline]
pub(crate) fn crossing_sign(occupied: u64, a: usize, b: usize) -> f64 {
    if (occupied & between_mask(a, b)).count_ones() % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

pub(crate) fn apply_rbs_in_place(
    basis: &HWBasis,
    amps: &mut [f64],
    first: usize,
    second: usize,
    theta: f64,
) {
    let (c, s) = (theta.cos(), theta.sin());
    let bit_a = 1u64 << first;
    let bit_b = 1u64 << second;
    for idx in 0..basis.len() {
        let m = basis.mask(idx);
        if m & bit_a != 0 && m & bit_b == 0 {
            let partner = basis
                .index_of(m ^ bit_a ^ bit_b)
                .expect("partner mask has the same weight");
            let sg = crossing_sign(m, first, second);
            let alpha = amps[idx];
            let beta = amps[partner];
            amps[idx] = c * alpha - sg * s * beta;
            amps[partner] = sg * s * alpha + c * beta;
        }
    }
}

fn apply_z_in_place(basis: &HWBasis, amps: &mut [f64], wire: usize) {
    let bit = 1u64 << wire;
    for idx in 0..basis.len() {
        if basis.mask(idx) & bit != 0 {
            amps[idx] = -amps[idx];
        }
    }
}

/// Mix every amplitude pair (S∪{i}, S∪{j}) by the two-wire rotation; basis
/// elements containing both or neither wire are unchanged.
pub fn apply_rbs_subspace(
    state: &SubspaceVector,
    i: usize,
    j: usize,
    theta: f64,
) -> Result<SubspaceVector> {
    let n = state.basis.n();
    if i == j || i >= n || j >= n {
        return Err(CoreError::InvalidGate(format!(
            "rotation wires ({i}, {j}) invalid on {n} qubits"
        )));
    }
    let mut out = state.clone();
    apply_rbs_in_place(&state.basis, &mut out.amplitudes, i, j, theta);
    Ok(out)
}

/// Apply a weight-preserving circuit (rotations and Z only) gate by gate.
pub fn apply_circuit_subspace(circuit: &Circuit, state: &SubspaceVector) -> Result<SubspaceVector> {
    if circuit.n_qubits() != state.basis.n() {
        return Err(CoreError::ShapeMismatch(format!(
            "circuit on {} qubits applied to a {}-wire basis",
            circuit.n_qubits(),
            state.basis.n()
        )));
    }
    let mut out = state.clone();
    for gate in circuit.gates() {
        match gate.op {
            GateOp::Rbs { first, second, theta } => {
                apply_rbs_in_place(&state.basis, &mut out.amplitudes, first, second, theta);
            }
            GateOp::PauliZ { wire } => {
                apply_z_in_place(&state.basis, &mut out.amplitudes, wire);
            }
            GateOp::PauliX { .. } => {
                return Err(CoreError::UnsupportedInSubspace { gate: "PauliX" })
            }
            GateOp::Cnot { .. } => return Err(CoreError::UnsupportedInSubspace { gate: "CNOT" }),
        }
    }
    Ok(out)
}

/// The circuit's action on the weight-k subspace as an explicit
/// C(n,k) × C(n,k) matrix: column c is the image of the c-th basis state.
pub fn reduced_matrix(circuit: &Circuit, k: usize) -> Result<Mat> {
    let basis = Arc::new(HWBasis::new(circuit.n_qubits(), k)?);
    let dim = basis.len();
    let mut m = Mat::zeros(dim, dim);
    for col in 0..dim {
        let mut e = SubspaceVector::zero(basis.clone());
        e.amplitudes[col] = 1.0;
        let out = apply_circuit_subspace(circuit, &e)?;
        for row in 0..dim {
            m[(row, col)] = out.amplitudes[row];
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::hw_basis;
    use crate::circuit::Circuit;
    use crate::rng::Pcg32;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn unary(n: usize, wire: usize) -> SubspaceVector {
        let basis = Arc::new(hw_basis(n, 1).unwrap());
        SubspaceVector::basis_state(basis, 1 << wire).unwrap()
    }

    #[test]
    fn zero_angle_is_identity() {
        let e2 = unary(4, 2);
        let out = apply_rbs_subspace(&e2, 2, 3, 0.0).unwrap();
        assert_eq!(out.amplitudes, e2.amplitudes);
    }

    #[test]
    fn quarter_turn_moves_second_wire_to_first_with_minus() {
        // Two wires, state on wire 1, rotation (0,1) by π/2: amplitude lands
        // on wire 0 with sign −1.
        let e1 = unary(2, 1);
        let out = apply_rbs_subspace(&e1, 0, 1, FRAC_PI_2).unwrap();
        assert!((out.amplitudes[0] + 1.0).abs() < 1e-15);
        assert!(out.amplitudes[1].abs() < 1e-15);
    }

    #[test]
    fn doubly_occupied_pair_is_fixed() {
        let basis = Arc::new(hw_basis(4, 2).unwrap());
        let st = SubspaceVector::basis_state(basis, 0b0011).unwrap();
        let out = apply_rbs_subspace(&st, 0, 1, 0.9).unwrap();
        assert_eq!(out.amplitudes, st.amplitudes);
    }

    #[test]
    fn swapped_wire_order_negates_the_angle() {
        let basis = Arc::new(hw_basis(3, 1).unwrap());
        let mut st = SubspaceVector::zero(basis);
        st.amplitudes = vec![0.6, 0.8, 0.0];
        let a = apply_rbs_subspace(&st, 0, 1, 0.37).unwrap();
        let b = apply_rbs_subspace(&st, 1, 0, -0.37).unwrap();
        for (x, y) in a.amplitudes.iter().zip(&b.amplitudes) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn occupied_spectator_between_wires_flips_the_transfer_sign() {
        // Weight-2 on three wires, rotation (0,2): the pair {0,1}/{1,2} has
        // wire 1 occupied between the rotation wires, so the transfer sign
        // flips relative to the spectator-free case.
        let basis = Arc::new(hw_basis(3, 2).unwrap());
        let st = SubspaceVector::basis_state(basis.clone(), 0b011).unwrap(); // {0,1}
        let out = apply_rbs_subspace(&st, 0, 2, FRAC_PI_2).unwrap();
        // {0,1} empties into {1,2} with amplitude σ·sin(π/2) = −1; the
        // spectator-free transfer would give +1.
        let idx_12 = basis.index_of(0b110).unwrap();
        let idx_01 = basis.index_of(0b011).unwrap();
        assert!((out.amplitudes[idx_12] + 1.0).abs() < 1e-15);
        assert!(out.amplitudes[idx_01].abs() < 1e-15);
    }

    #[test]
    fn norm_preserved_by_random_circuits() {
        let mut rng = Pcg32::new(3, 17);
        for _ in 0..20 {
            let n = 6;
            let basis = Arc::new(hw_basis(n, 2).unwrap());
            let mut amps: Vec<f64> = (0..basis.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
            amps.iter_mut().for_each(|a| *a /= norm);
            let st = SubspaceVector::from_amplitudes(basis, amps).unwrap();
            let mut c = Circuit::new(n);
            for _ in 0..30 {
                let a = rng.next_below(n as u32) as usize;
                let mut b = rng.next_below(n as u32) as usize;
                if b == a {
                    b = (b + 1) % n;
                }
                c.rbs(a, b, rng.uniform(-3.0, 3.0)).unwrap();
            }
            let out = apply_circuit_subspace(&c, &st).unwrap();
            assert!((out.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_circuit_is_identity() {
        let st = unary(5, 3);
        let c = Circuit::new(5);
        let out = apply_circuit_subspace(&c, &st).unwrap();
        assert_eq!(out.amplitudes, st.amplitudes);
    }

    #[test]
    fn single_gate_circuit_matches_direct_application() {
        let st = unary(4, 1);
        let mut c = Circuit::new(4);
        c.rbs(1, 2, 0.83).unwrap();
        let via_circuit = apply_circuit_subspace(&c, &st).unwrap();
        let direct = apply_rbs_subspace(&st, 1, 2, 0.83).unwrap();
        assert_eq!(via_circuit.amplitudes, direct.amplitudes);
    }

    #[test]
    fn weight_changing_gates_are_rejected() {
        let st = unary(3, 0);
        let mut c = Circuit::new(3);
        c.push(GateOp::PauliX { wire: 1 }).unwrap();
        assert!(matches!(
            apply_circuit_subspace(&c, &st),
            Err(CoreError::UnsupportedInSubspace { gate: "PauliX" })
        ));
        let mut c2 = Circuit::new(3);
        c2.push(GateOp::Cnot { control: 0, target: 1 }).unwrap();
        assert!(apply_circuit_subspace(&c2, &st).is_err());
    }

    #[test]
    fn pauli_z_negates_occupied_elements() {
        let basis = Arc::new(hw_basis(3, 2).unwrap());
        let mut st = SubspaceVector::zero(basis.clone());
        st.amplitudes = vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0];
        let mut c = Circuit::new(3);
        c.push(GateOp::PauliZ { wire: 2 }).unwrap();
        let out = apply_circuit_subspace(&c, &st).unwrap();
        for idx in 0..basis.len() {
            let expect = if basis.mask(idx) & 0b100 != 0 { -st.amplitudes[idx] } else { st.amplitudes[idx] };
            assert_eq!(out.amplitudes[idx], expect);
        }
    }

    #[test]
    fn reduced_matrix_of_empty_circuit_is_identity() {
        let c = Circuit::new(5);
        for k in [1, 2] {
            let m = reduced_matrix(&c, k).unwrap();
            assert_eq!(m.max_abs_diff(&Mat::eye(m.rows())), 0.0);
        }
    }

    #[test]
    fn reduced_matrix_single_rotation_two_wires() {
        let mut c = Circuit::new(2);
        c.rbs(0, 1, FRAC_PI_4).unwrap();
        let m = reduced_matrix(&c, 1).unwrap();
        let (cs, sn) = (FRAC_PI_4.cos(), FRAC_PI_4.sin());
        // Column 0 = image of wire-0 state: (cos, sin); column 1 = (−sin, cos).
        assert!((m[(0, 0)] - cs).abs() < 1e-15);
        assert!((m[(1, 0)] - sn).abs() < 1e-15);
        assert!((m[(0, 1)] + sn).abs() < 1e-15);
        assert!((m[(1, 1)] - cs).abs() < 1e-15);
    }

    #[test]
    fn reduced_matrix_is_orthogonal_for_random_circuits() {
        let mut rng = Pcg32::new(8, 2);
        for _ in 0..10 {
            let n = 5;
            let mut c = Circuit::new(n);
            for _ in 0..25 {
                let a = rng.next_below(n as u32) as usize;
                let mut b = rng.next_below(n as u32) as usize;
                if b == a {
                    b = (b + 1) % n;
                }
                c.rbs(a, b, rng.uniform(-3.0, 3.0)).unwrap();
            }
            for k in [1, 2] {
                let m = reduced_matrix(&c, k).unwrap();
                let gram = m.transpose().matmul(&m);
                assert!(gram.max_abs_diff(&Mat::eye(m.rows())) < 1e-10);
            }
        }
    }

    #[test]
    fn circuit_application_equals_reduced_matrix_product() {
        let mut rng = Pcg32::new(21, 4);
        let n = 4;
        let mut c = Circuit::new(n);
        for _ in 0..12 {
            let a = rng.next_below(n as u32) as usize;
            let mut b = rng.next_below(n as u32) as usize;
            if b == a {
                b = (b + 1) % n;
            }
            c.rbs(a, b, rng.uniform(-2.0, 2.0)).unwrap();
        }
        let basis = Arc::new(hw_basis(n, 1).unwrap());
        let mut amps: Vec<f64> = (0..basis.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        let st = SubspaceVector::from_amplitudes(basis, amps.clone()).unwrap();
        let out = apply_circuit_subspace(&c, &st).unwrap();
        let m = reduced_matrix(&c, 1).unwrap();
        let expect = m.matvec(&amps);
        for (a, b) in out.amplitudes.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
