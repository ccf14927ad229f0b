use crate::circuit::{Circuit, GateOp};
use crate::error::{CoreError, Result};
use crate::subspace::crossing_sign;

pub const DENSE_MAX_QUBITS: usize = 14;

/// Brute-force statevector over all 2^n computational basis states. Index bit
/// i is qubit i (so the bitstring's i-th character maps to bit i). This is the
/// slow, obviously-correct backend the subspace simulator is checked against;
/// it is also the only backend that can apply X and CNOT.
pub fn dense_statevector(circuit: &Circuit, input_bits: &str) -> Result<Vec<f64>> {
    let n = circuit.n_qubits();
    if input_bits.len() != n || !input_bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(CoreError::ShapeMismatch(format!(
            "input bitstring {input_bits:?} does not describe {n} qubits"
        )));
    }
    let mut mask = 0u64;
    for (i, b) in input_bits.bytes().enumerate() {
        if b == b'1' {
            mask |= 1 << i;
        }
    }
    dense_statevector_mask(circuit, mask)
}

pub fn dense_statevector_mask(circuit: &Circuit, input: u64) -> Result<Vec<f64>> {
    let n = circuit.n_qubits();
    if n > DENSE_MAX_QUBITS {
        return Err(CoreError::OracleTooLarge { n, max: DENSE_MAX_QUBITS });
    }
    let dim = 1usize << n;
    let mut amps = vec![0.0; dim];
    amps[input as usize] = 1.0;
    for gate in circuit.gates() {
        match gate.op {
            GateOp::Rbs { first, second, theta } => {
                let (c, s) = (theta.cos(), theta.sin());
                let bit_a = 1usize << first;
                let bit_b = 1usize << second;
                for idx in 0..dim {
                    if idx & bit_a != 0 && idx & bit_b == 0 {
                        let partner = idx ^ bit_a ^ bit_b;
                        let sg = crossing_sign(idx as u64, first, second);
                        let alpha = amps[idx];
                        let beta = amps[partner];
                        amps[idx] = c * alpha - sg * s * beta;
                        amps[partner] = sg * s * alpha + c * beta;
                    }
                }
            }
            GateOp::PauliX { wire } => {
                let bit = 1usize << wire;
                for idx in 0..dim {
                    if idx & bit == 0 {
                        amps.swap(idx, idx | bit);
                    }
                }
            }
            GateOp::PauliZ { wire } => {
                let bit = 1usize << wire;
                for amp_idx in 0..dim {
                    if amp_idx & bit != 0 {
                        amps[amp_idx] = -amps[amp_idx];
                    }
                }
            }
            GateOp::Cnot { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for idx in 0..dim {
                    if idx & cbit != 0 && idx & tbit == 0 {
                        amps.swap(idx, idx | tbit);
                    }
                }
            }
        }
    }
    Ok(amps)
}
