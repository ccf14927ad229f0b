use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Gate vocabulary. RBS mixes |01⟩ and |10⟩ on its wire pair by a rotation
/// angle and fixes |00⟩ and |11⟩; X, Z, and CNOT are the usual Paulis and
/// controlled-NOT.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateOp {
    Rbs { first: usize, second: usize, theta: f64 },
    PauliX { wire: usize },
    PauliZ { wire: usize },
    Cnot { control: usize, target: usize },
}

impl GateOp {
    pub fn wires(&self) -> (usize, Option<usize>) {
        match *self {
            GateOp::Rbs { first, second, .. } => (first, Some(second)),
            GateOp::PauliX { wire } | GateOp::PauliZ { wire } => (wire, None),
            GateOp::Cnot { control, target } => (control, Some(target)),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GateOp::Rbs { .. } => "RBS",
            GateOp::PauliX { .. } => "PauliX",
            GateOp::PauliZ { .. } => "PauliZ",
            GateOp::Cnot { .. } => "CNOT",
        }
    }

    /// RBS and PauliZ map weight-k states to weight-k states; X and CNOT
    /// do not (or only conditionally).
    pub fn preserves_hamming_weight(&self) -> bool {
        matches!(self, GateOp::Rbs { .. } | GateOp::PauliZ { .. })
    }

    pub fn inverse(&self) -> GateOp {
        match *self {
            GateOp::Rbs { first, second, theta } => GateOp::Rbs { first, second, theta: -theta },
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub op: GateOp,
    /// Schedule slot assigned greedily at insertion: the earliest timestep at
    /// which every wire the gate touches is free.
    pub timestep: usize,
}

/// An ordered gate list on a fixed wire count, with a parallel schedule
/// computed greedily from the gate order.
#[derive(Clone, Debug)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    wire_free: Vec<usize>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            gates: Vec::new(),
            wire_free: vec![0; n_qubits],
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn push(&mut self, op: GateOp) -> Result<()> {
        let (a, b) = op.wires();
        if a >= self.n_qubits || b.is_some_and(|b| b >= self.n_qubits) {
            return Err(CoreError::InvalidGate(format!(
                "{} on wires {:?} exceeds circuit width {}",
                op.kind_name(),
                op.wires(),
                self.n_qubits
            )));
        }
        if b == Some(a) {
            return Err(CoreError::InvalidGate(format!(
                "{} requires two distinct wires, got ({a}, {a})",
                op.kind_name()
            )));
        }
        let t = match b {
            Some(b) => self.wire_free[a].max(self.wire_free[b]),
            None => self.wire_free[a],
        };
        self.wire_free[a] = t + 1;
        if let Some(b) = b {
            self.wire_free[b] = t + 1;
        }
        self.gates.push(Gate { op, timestep: t });
        Ok(())
    }

    pub fn rbs(&mut self, first: usize, second: usize, theta: f64) -> Result<()> {
        self.push(GateOp::Rbs { first, second, theta })
    }

    pub fn depth(&self) -> usize {
        self.gates.iter().map(|g| g.timestep + 1).max().unwrap_or(0)
    }

    pub fn count(&self, pred: impl Fn(&GateOp) -> bool) -> usize {
        self.gates.iter().filter(|g| pred(&g.op)).count()
    }

    pub fn rbs_count(&self) -> usize {
        self.count(|op| matches!(op, GateOp::Rbs { .. }))
    }

    pub fn cnot_count(&self) -> usize {
        self.count(|op| matches!(op, GateOp::Cnot { .. }))
    }

    pub fn is_weight_preserving(&self) -> bool {
        self.gates.iter().all(|g| g.op.preserves_hamming_weight())
    }

    /// Reverse gate order with each gate inverted; timesteps are reassigned
    /// greedily from the new order.
    pub fn adjoint(&self) -> Circuit {
        let mut out = Circuit::new(self.n_qubits);
        for gate in self.gates.iter().rev() {
            out.push(gate.op.inverse()).expect("wires already validated");
        }
        out
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        for gate in &other.gates {
            self.push(gate.op)?;
        }
        Ok(())
    }

    /// Recompute all timesteps greedily from the gate order alone; used by
    /// tests to confirm stored slots never drift from the schedule rule.
    pub fn recomputed_timesteps(&self) -> Vec<usize> {
        let mut free = vec![0usize; self.n_qubits];
        let mut out = Vec::with_capacity(self.gates.len());
        for gate in &self.gates {
            let (a, b) = gate.op.wires();
            let t = match b {
                Some(b) => free[a].max(free[b]),
                None => free[a],
            };
            free[a] = t + 1;
            if let Some(b) = b {
                free[b] = t + 1;
            }
            out.push(t);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = CircuitDoc {
            n_qubits: self.n_qubits,
            gates: self
                .gates
                .iter()
                .map(|g| {
                    let (a, b) = g.op.wires();
                    let mut qubits = vec![a];
                    if let Some(b) = b {
                        qubits.push(b);
                    }
                    GateDoc {
                        kind: g.op.kind_name().to_string(),
                        qubits,
                        theta: match g.op {
                            GateOp::Rbs { theta, .. } => Some(theta),
                            _ => None,
                        },
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("circuit serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Circuit> {
        let doc: CircuitDoc =
            serde_json::from_str(text).map_err(|e| CoreError::BadCircuitJson(e.to_string()))?;
        let mut circuit = Circuit::new(doc.n_qubits);
        for g in &doc.gates {
            let op = match (g.kind.as_str(), g.qubits.as_slice(), g.theta) {
                ("RBS", &[a, b], Some(theta)) => GateOp::Rbs { first: a, second: b, theta },
                ("PauliX", &[w], None) => GateOp::PauliX { wire: w },
                ("PauliZ", &[w], None) => GateOp::PauliZ { wire: w },
                ("CNOT", &[c, t], None) => GateOp::Cnot { control: c, target: t },
                _ => {
                    return Err(CoreError::BadCircuitJson(format!(
                        "malformed gate entry: kind={} qubits={:?} theta={:?}",
                        g.kind, g.qubits, g.theta
                    )))
                }
            };
            circuit.push(op)?;
        }
        Ok(circuit)
    }
}

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    n_qubits: usize,
    gates: Vec<GateDoc>,
}

#[derive(Serialize, Deserialize)]
struct GateDoc {
    kind: String,
    qubits: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
}
