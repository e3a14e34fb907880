use serde::{Deserialize, Serialize};

use super::gate::{single_qubit_matrix, Angle, GateKind, GateOp};
use super::state::{StateVector, MAX_QUBITS};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Ordered gate list on a fixed register; `n_params` trainable slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circuit<T> {
    n_qubits: usize,
    n_params: usize,
    ops: Vec<GateOp<T>>,
}

impl<T: Real> Circuit<T> {
    pub fn new(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(format!(
                "register of {n_qubits} qubits outside 1..={MAX_QUBITS}"
            )));
        }
        Ok(Self {
            n_qubits,
            n_params: 0,
            ops: Vec::new(),
        })
    }

    /// Circuit reserving `n_params` slots even if some are never referenced.
    pub fn with_params(n_qubits: usize, n_params: usize) -> Result<Self> {
        let mut c = Self::new(n_qubits)?;
        c.n_params = n_params;
        Ok(c)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[GateOp<T>] {
        &self.ops
    }

    pub fn push(&mut self, op: GateOp<T>) -> Result<&mut Self> {
        self.validate_op(&op)?;
        if let Some(Angle::Param { slot, .. }) = op.angle {
            self.n_params = self.n_params.max(slot + 1);
        }
        self.ops.push(op);
        Ok(self)
    }

    pub fn rx(&mut self, target: usize, angle: Angle<T>) -> Result<&mut Self> {
        self.push(GateOp::rx(target, angle))
    }

    pub fn ry(&mut self, target: usize, angle: Angle<T>) -> Result<&mut Self> {
        self.push(GateOp::ry(target, angle))
    }

    pub fn rz(&mut self, target: usize, angle: Angle<T>) -> Result<&mut Self> {
        self.push(GateOp::rz(target, angle))
    }

    pub fn h(&mut self, target: usize) -> Result<&mut Self> {
        self.push(GateOp::h(target))
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> Result<&mut Self> {
        self.push(GateOp::cnot(control, target))
    }

    /// Appends every op of `other` (same register).
    pub fn extend(&mut self, other: &Circuit<T>) -> Result<&mut Self> {
        check_dim(self.n_qubits, other.n_qubits)?;
        for op in &other.ops {
            self.push(*op)?;
        }
        self.n_params = self.n_params.max(other.n_params);
        Ok(self)
    }

    fn validate_op(&self, op: &GateOp<T>) -> Result<()> {
        if op.target >= self.n_qubits {
            return Err(Error::Wire(format!(
                "target {} on a {}-qubit circuit",
                op.target, self.n_qubits
            )));
        }
        match op.kind {
            GateKind::Cnot => {
                let control = op
                    .control
                    .ok_or_else(|| Error::Wire("CNOT without control".into()))?;
                if control >= self.n_qubits || control == op.target {
                    return Err(Error::Wire(format!(
                        "CNOT control {control} invalid for target {}",
                        op.target
                    )));
                }
                if op.angle.is_some() {
                    return Err(Error::Domain("CNOT carries no angle".into()));
                }
            }
            GateKind::H => {
                if op.control.is_some() || op.angle.is_some() {
                    return Err(Error::Domain("H carries no control or angle".into()));
                }
            }
            _ => {
                if op.control.is_some() {
                    return Err(Error::Wire("rotation gates are uncontrolled".into()));
                }
                if op.angle.is_none() {
                    return Err(Error::Domain(format!("{:?} needs an angle", op.kind)));
                }
            }
        }
        Ok(())
    }

    /// Re-checks every op; used after deserializing.
    pub fn validate(&self) -> Result<()> {
        for op in &self.ops {
            self.validate_op(op)?;
            if let Some(Angle::Param { slot, .. }) = op.angle {
                if slot >= self.n_params {
                    return Err(Error::Domain(format!(
                        "param slot {slot} >= n_params {}",
                        self.n_params
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_inputs(&self, state: &StateVector<T>, params: &[T]) -> Result<()> {
        check_dim(self.n_params, params.len())?;
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Wire(format!(
                "{}-qubit circuit applied to a {}-qubit state",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, state: &StateVector<T>, params: &[T]) -> Result<StateVector<T>> {
        let mut out = state.clone();
        self.apply_in_place(&mut out, params)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, state: &mut StateVector<T>, params: &[T]) -> Result<()> {
        self.check_inputs(state, params)?;
        self.run_range(state, params, 0, None);
        Ok(())
    }

    /// Runs ops `start..` with an optional angle shift added to op `shifted.0`.
    /// Inputs must already be validated.
    pub(crate) fn run_range(
        &self,
        state: &mut StateVector<T>,
        params: &[T],
        start: usize,
        shifted: Option<(usize, T)>,
    ) {
        for (idx, op) in self.ops.iter().enumerate().skip(start) {
            apply_op(
                state,
                op,
                params,
                shifted.filter(|s| s.0 == idx).map(|s| s.1),
            );
        }
    }

    pub(crate) fn check(&self, state: &StateVector<T>, params: &[T]) -> Result<()> {
        self.check_inputs(state, params)
    }

    /// Exact inverse: reversed ops with negated angles; H and CNOT are self-inverse.
    pub fn inverse(&self) -> Self {
        Self {
            n_qubits: self.n_qubits,
            n_params: self.n_params,
            ops: self.ops.iter().rev().map(GateOp::inverse).collect(),
        }
    }
}

pub(crate) fn apply_op<T: Real>(
    state: &mut StateVector<T>,
    op: &GateOp<T>,
    params: &[T],
    shift: Option<T>,
) {
    match op.kind {
        GateKind::Cnot => state.apply_cnot(op.control.expect("validated"), op.target),
        GateKind::H => state.apply_single(op.target, &single_qubit_matrix(GateKind::H, T::zero())),
        kind => {
            let mut theta = op.angle.expect("validated").resolve(params);
            if let Some(s) = shift {
                theta = theta + s;
            }
            state.apply_single(op.target, &single_qubit_matrix(kind, theta));
        }
    }
}

/// Fixed-angle `RY(π·x_i)` on wire `i`; no trainable parameters.
pub fn angle_encode<T: Real>(features: &[T]) -> Result<Circuit<T>> {
    let mut c = Circuit::new(features.len())?;
    for (wire, &x) in features.iter().enumerate() {
        if !(x >= T::zero() && x <= T::one()) {
            return Err(Error::Domain(format!(
                "feature {wire} = {x:?} outside [0, 1]"
            )));
        }
        c.ry(wire, Angle::Fixed(T::PI() * x))?;
    }
    Ok(c)
}
