use std::sync::Arc;

use crate::basis::{pair_rank, HWBasis};
use crate::circuit::{Circuit, GateOp};
use crate::error::{CoreError, Result};
use crate::mat::Mat;
use crate::ortho::OrthoLayer;
use crate::subspace::SubspaceVector;

pub const NORM_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoaderTopology {
    /// Binary-tree splits: depth log2(d), requires d a power of two.
    Parallel,
    /// Single chain down adjacent wires: depth d.
    Diagonal,
    /// One initial split feeding two interleaved chains over even and odd
    /// wires: depth ⌈d/2⌉ in rotation slots.
    SemiDiagonal,
}

impl LoaderTopology {
    pub fn name(&self) -> &'static str {
        match self {
            LoaderTopology::Parallel => "parallel",
            LoaderTopology::Diagonal => "diagonal",
            LoaderTopology::SemiDiagonal => "semi-diagonal",
        }
    }
}

/// Rotation wire pairs (source, destination) in gate order for a d-wire
/// loader. Every topology uses exactly d−1 pairs, each wire appears as a
/// destination at most once, and a destination is never touched before its
/// gate fires — the property the angle computation relies on.
pub fn loader_pairs(topology: LoaderTopology, d: usize) -> Result<Vec<(usize, usize)>> {
    if d < 2 {
        return Err(CoreError::ShapeMismatch(format!("loader needs d ≥ 2, got {d}")));
    }
    match topology {
        LoaderTopology::Diagonal => Ok((0..d - 1).map(|i| (i, i + 1)).collect()),
        LoaderTopology::Parallel => {
            if !d.is_power_of_two() {
                return Err(CoreError::TopologyDimension { topology: "parallel", d });
            }
            let mut out = Vec::with_capacity(d - 1);
            let mut level = vec![(0usize, d)];
            while !level.is_empty() {
                let mut next = Vec::new();
                for (lo, len) in level {
                    if len < 2 {
                        continue;
                    }
                    let half = len / 2;
                    out.push((lo, lo + half));
                    next.push((lo, half));
                    next.push((lo + half, half));
                }
                level = next;
            }
            Ok(out)
        }
        LoaderTopology::SemiDiagonal => {
            let mut out = vec![(0, 1)];
            let (mut even, mut odd) = (0usize, 1usize);
            loop {
                let mut advanced = false;
                if even + 2 < d {
                    out.push((even, even + 2));
                    even += 2;
                    advanced = true;
                }
                if odd + 2 < d {
                    out.push((odd, odd + 2));
                    odd += 2;
                    advanced = true;
                }
                if !advanced {
                    break;
                }
            }
            Ok(out)
        }
    }
}

/// Circuit that prepares the unary amplitude encoding of a unit vector:
/// one X on wire 0 followed by a fan of d−1 two-wire rotations whose angles
/// are pre-computed from the vector.
#[derive(Clone, Debug)]
pub struct VectorLoader {
    pub d: usize,
    pub topology: LoaderTopology,
    pub pairs: Vec<(usize, usize)>,
    pub angles: Vec<f64>,
    /// The unit vector the circuit prepares (input rescaled to norm 1).
    pub target: Vec<f64>,
}

/// Walk the fan in reverse, folding each destination coordinate into its
/// source with the rotation angle that re-creates the pair on the way
/// forward. Input must already be unit-normalized.
fn fan_angles(pairs: &[(usize, usize)], unit: &[f64]) -> Vec<f64> {
    let mut work = unit.to_vec();
    let mut angles = vec![0.0; pairs.len()];
    for (slot, &(src, dst)) in pairs.iter().enumerate().rev() {
        let a = work[src];
        let b = work[dst];
        angles[slot] = b.atan2(a);
        work[src] = a.hypot(b);
        work[dst] = 0.0;
    }
    angles
}

pub fn plan_vector_loader(x: &[f64], topology: LoaderTopology) -> Result<VectorLoader> {
    let d = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= NORM_FLOOR {
        return Err(CoreError::DegenerateVector { norm, floor: NORM_FLOOR });
    }
    let pairs = loader_pairs(topology, d)?;
    let target: Vec<f64> = x.iter().map(|v| v / norm).collect();
    let angles = fan_angles(&pairs, &target);
    Ok(VectorLoader { d, topology, pairs, angles, target })
}

impl VectorLoader {
    /// Full preparation circuit from |0…0⟩: X on wire 0, then the fan.
    pub fn circuit(&self) -> Circuit {
        let mut c = Circuit::new(self.d);
        c.push(GateOp::PauliX { wire: 0 }).expect("wire 0 exists");
        self.append_fan(&mut c, 0);
        c
    }

    /// The rotation fan alone (no X), shifted to start at `offset`, appended
    /// onto an existing circuit. Used to build multi-register circuits.
    pub fn append_fan(&self, c: &mut Circuit, offset: usize) {
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles) {
            c.rbs(a + offset, b + offset, theta).expect("loader wires fit");
        }
    }

    /// The adjoint of the fan (no X): reversed gate order, negated angles.
    pub fn append_fan_adjoint(&self, c: &mut Circuit, offset: usize) {
        for (&(a, b), &theta) in self.pairs.iter().zip(&self.angles).rev() {
            c.rbs(a + offset, b + offset, -theta).expect("loader wires fit");
        }
    }

    /// Depth in the per-topology counting convention used in the circuit
    /// figures: Parallel counts the log2(d) rotation levels, Diagonal counts
    /// all d slots including the X, SemiDiagonal counts the ⌈d/2⌉ rotation
    /// levels. The scheduled `circuit().depth()` differs by the X slot where
    /// the convention excludes it.
    pub fn depth(&self) -> usize {
        match self.topology {
            LoaderTopology::Parallel => self.d.ilog2() as usize,
            LoaderTopology::Diagonal => self.d,
            LoaderTopology::SemiDiagonal => self.d.div_ceil(2),
        }
    }
}

/// The normalized n×d amplitude grid of the row-superposition state: entry
/// (i, j) = X_ij / ‖X‖_F.
#[derive(Clone, Debug)]
pub struct MatrixState {
    pub n: usize,
    pub d: usize,
    pub amplitudes: Mat,
    pub frobenius: f64,
}

pub fn matrix_state(x: &Mat) -> Result<MatrixState> {
    let fro = x.frobenius_norm();
    if fro <= NORM_FLOOR {
        return Err(CoreError::DegenerateMatrix { floor: NORM_FLOOR });
    }
    let mut amplitudes = x.clone();
    amplitudes.data_mut().iter_mut().for_each(|v| *v /= fro);
    Ok(MatrixState { n: x.rows(), d: x.cols(), amplitudes, frobenius: fro })
}

impl MatrixState {
    /// View as a weight-2 state on n+d wires: amplitude (i, j) sits on the
    /// pair {top wire i, bottom wire n+j}; same-register pairs are zero.
    pub fn to_subspace(&self) -> SubspaceVector {
        let basis = Arc::new(HWBasis::new(self.n + self.d, 2).expect("n+d ≥ 2"));
        let mut v = SubspaceVector::zero(basis);
        for i in 0..self.n {
            for j in 0..self.d {
                let idx = pair_rank(self.n + self.d, i, self.n + j);
                v.amplitudes[idx] = self.amplitudes[(i, j)];
            }
        }
        v
    }
}

fn row_topology(d: usize) -> LoaderTopology {
    if d.is_power_of_two() {
        LoaderTopology::Parallel
    } else {
        LoaderTopology::Diagonal
    }
}

/// Gate-level preparation of the row-superposition state on n+d wires: load
/// the row norms on the top register, then for each row sandwich a CNOT
/// (top wire i → bottom wire n) between the adjoint and forward fans of that
/// row's loader. The rotation fans fix the empty bottom register, so only
/// the branch whose control fired picks up its row, and already-loaded
/// branches are restored by the adjoint/forward pair. Rows that are exactly
/// zero carry no amplitude on the top register and are skipped.
pub fn build_matrix_loader(x: &Mat) -> Result<Circuit> {
    let (n, d) = (x.rows(), x.cols());
    let fro = x.frobenius_norm();
    if fro <= NORM_FLOOR {
        return Err(CoreError::DegenerateMatrix { floor: NORM_FLOOR });
    }
    if d < 2 || n < 1 {
        return Err(CoreError::ShapeMismatch(format!(
            "matrix loader needs n ≥ 1, d ≥ 2, got {n}×{d}"
        )));
    }
    let norms: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut c = Circuit::new(n + d);
    c.push(GateOp::PauliX { wire: 0 })?;
    if n > 1 {
        plan_vector_loader(&norms, row_topology(n))?.append_fan(&mut c, 0);
    }
    for i in 0..n {
        if norms[i] <= NORM_FLOOR {
            continue;
        }
        let row = plan_vector_loader(x.row(i), row_topology(d))?;
        row.append_fan_adjoint(&mut c, n);
        c.push(GateOp::Cnot { control: i, target: n })?;
        row.append_fan(&mut c, n);
    }
    Ok(c)
}

/// Rotation count of the per-row loading stage alone (the figure-table
/// convention for the compound architecture): 2·n·(d−1), excluding the
/// n−1 rotations of the top-register norm loader and the n CNOTs.
pub fn matrix_loader_row_gates(n: usize, d: usize) -> usize {
    2 * n * (d - 1)
}

/// Amplitude of the bilinear form ⟨x_i, W x_j⟩ (W = identity when no layer is
/// given). Both vectors are expected unit-normalized; callers carrying norms
/// rescale the result themselves. Squaring it gives the probability of
/// reading 1 on the first wire of the corresponding circuit.
pub fn exact_overlap(x_i: &[f64], layer: Option<&OrthoLayer>, x_j: &[f64]) -> Result<f64> {
    if x_i.len() != x_j.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "overlap of vectors with lengths {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    let w_xj = match layer {
        Some(layer) => layer.apply_unary(x_j)?,
        None => x_j.to_vec(),
    };
    Ok(crate::mat::dot(x_i, &w_xj))
}

/// The inner-product circuit: load x_j, apply the layer, then run the
/// adjoint fan of x_i's loader (without its X gate, so the overlap
/// accumulates on wire 0 alone). P(wire 0 = 1) = overlap².
pub fn build_overlap_circuit(
    x_i: &[f64],
    layer: Option<&OrthoLayer>,
    x_j: &[f64],
) -> Result<Circuit> {
    if x_i.len() != x_j.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "overlap circuit for lengths {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    let d = x_i.len();
    if let Some(layer) = layer {
        if layer.n != d {
            return Err(CoreError::ShapeMismatch(format!(
                "layer on {} wires, vectors of length {d}",
                layer.n
            )));
        }
    }
    let loader_j = plan_vector_loader(x_j, LoaderTopology::Diagonal)?;
    let loader_i = plan_vector_loader(x_i, LoaderTopology::Diagonal)?;
    let mut c = loader_j.circuit();
    if let Some(layer) = layer {
        c.extend(&layer.circuit())?;
    }
    loader_i.append_fan_adjoint(&mut c, 0);
    Ok(c)
}
