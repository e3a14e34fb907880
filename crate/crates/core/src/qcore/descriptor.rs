//! Replayable op lists shared by codec checkpoints and fusion handles.
//!
//! JSON layout:
//! `{"format":"qv2x-desc/1","n_qubits":n,"n_params":p,"ops":[...]}` where each op is
//! `{"op":"gate","kind":"ry","target":0,"angle":{"param":{"slot":3,"scale":1.0}}}`,
//! `{"op":"phase","phases":[...]}` (diagonal `exp(i·φ_j)` over the basis) or
//! `{"op":"hadamard_layer"}`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::circuit::{apply_op, Circuit};
use super::gate::GateOp;
use super::state::StateVector;
use crate::error::{check_dim, Error, Result};

pub const DESCRIPTOR_FORMAT: &str = "qv2x-desc/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DescriptorOp {
    Gate(GateOp<f64>),
    Phase { phases: Vec<f64> },
    HadamardLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub format: String,
    pub n_qubits: usize,
    pub n_params: usize,
    pub ops: Vec<DescriptorOp>,
}

impl Descriptor {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            format: DESCRIPTOR_FORMAT.to_string(),
            n_qubits,
            n_params: 0,
            ops: Vec::new(),
        }
    }

    pub fn from_circuit(circuit: &Circuit<f64>) -> Self {
        Self {
            format: DESCRIPTOR_FORMAT.to_string(),
            n_qubits: circuit.n_qubits(),
            n_params: circuit.n_params(),
            ops: circuit
                .ops()
                .iter()
                .copied()
                .map(DescriptorOp::Gate)
                .collect(),
        }
    }

    /// Rebuilds a gate-only circuit; phase layers have no circuit form.
    pub fn to_circuit(&self) -> Result<Circuit<f64>> {
        self.validate()?;
        let mut c = Circuit::with_params(self.n_qubits, self.n_params)?;
        for op in &self.ops {
            match op {
                DescriptorOp::Gate(g) => {
                    c.push(*g)?;
                }
                _ => {
                    return Err(Error::Format(
                        "descriptor holds non-gate ops; replay it instead".into(),
                    ))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DESCRIPTOR_FORMAT {
            return Err(Error::Format(format!(
                "unknown descriptor format {:?}",
                self.format
            )));
        }
        let mut probe = Circuit::<f64>::with_params(self.n_qubits, self.n_params)?;
        let dim = 1usize << self.n_qubits;
        for op in &self.ops {
            match op {
                DescriptorOp::Gate(g) => {
                    probe.push(*g)?;
                }
                DescriptorOp::Phase { phases } => {
                    check_dim(dim, phases.len())?;
                    if phases.iter().any(|p| !p.is_finite()) {
                        return Err(Error::Integrity("non-finite phase".into()));
                    }
                }
                DescriptorOp::HadamardLayer => {}
            }
        }
        if probe.n_params() > self.n_params {
            return Err(Error::Integrity("param slot beyond n_params".into()));
        }
        Ok(())
    }

    pub fn replay(&self, state: &mut StateVector<f64>, params: &[f64]) -> Result<()> {
        self.validate()?;
        check_dim(self.n_params, params.len())?;
        check_dim(self.n_qubits, state.n_qubits())?;
        for op in &self.ops {
            match op {
                DescriptorOp::Gate(g) => apply_op(state, g, params, None),
                DescriptorOp::Phase { phases } => state.apply_diagonal_phase(phases)?,
                DescriptorOp::HadamardLayer => state.apply_hadamard_layer(),
            }
        }
        Ok(())
    }

    /// Reversed op list with each op inverted.
    pub fn inverse(&self) -> Self {
        let ops = self
            .ops
            .iter()
            .rev()
            .map(|op| match op {
                DescriptorOp::Gate(g) => DescriptorOp::Gate(g.inverse()),
                DescriptorOp::Phase { phases } => DescriptorOp::Phase {
                    phases: phases.iter().map(|p| -p).collect(),
                },
                DescriptorOp::HadamardLayer => DescriptorOp::HadamardLayer,
            })
            .collect();
        Self {
            ops,
            ..self.clone()
        }
    }

    /// SHA-256 hex digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("descriptor serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::gate::Angle;
    use crate::qcore::state::init_state;

    #[test]
    fn json_round_trip_keeps_ops() {
        let mut c = Circuit::new(2).unwrap();
        c.ry(0, Angle::slot(0))
            .unwrap()
            .cnot(0, 1)
            .unwrap()
            .h(1)
            .unwrap();
        let d = Descriptor::from_circuit(&c);
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"op\":\"gate\""));
        let back: Descriptor = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_circuit().unwrap(), c);
        assert_eq!(back.digest(), d.digest());
    }

    #[test]
    fn replay_then_inverse_is_identity() {
        let mut d = Descriptor::new(2);
        d.ops.push(DescriptorOp::Phase {
            phases: vec![0.1, 0.2, 0.3, 0.4],
        });
        d.ops.push(DescriptorOp::HadamardLayer);
        d.ops.push(DescriptorOp::Gate(GateOp::cnot(1, 0)));
        let mut s = init_state(2).unwrap();
        s.apply_hadamard_layer();
        let orig = s.clone();
        d.replay(&mut s, &[]).unwrap();
        d.inverse().replay(&mut s, &[]).unwrap();
        assert!((s.fidelity(&orig).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_format_rejected() {
        let mut d = Descriptor::new(1);
        d.format = "other".into();
        assert!(matches!(d.validate(), Err(Error::Format(_))));
        let mut d = Descriptor::new(1);
        d.ops.push(DescriptorOp::Phase { phases: vec![0.0] });
        assert!(matches!(d.validate(), Err(Error::Dimension { .. })));
    }
}
