use serde::{Deserialize, Serialize};

use super::state::StateVector;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tensor product of Pauli-Z on `wires`, identity elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observable {
    wires: Vec<usize>,
}

impl Observable {
    pub fn new(wires: Vec<usize>) -> Result<Self> {
        let mut sorted = wires.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != wires.len() {
            return Err(Error::Wire(format!(
                "repeated wire in observable {wires:?}"
            )));
        }
        Ok(Self { wires })
    }

    /// Single-wire `Z_w`.
    pub fn z(wire: usize) -> Self {
        Self { wires: vec![wire] }
    }

    pub fn wires(&self) -> &[usize] {
        &self.wires
    }
}

/// `⟨ψ|O|ψ⟩` for a Pauli-Z product; always in `[-1, 1]`.
pub fn expect<T: Real>(state: &StateVector<T>, obs: &Observable) -> Result<T> {
    let mut mask = 0usize;
    for &w in &obs.wires {
        mask |= state.wire_mask(w)?;
    }
    let mut acc = T::zero();
    for (idx, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        if (idx & mask).count_ones().is_multiple_of(2) {
            acc = acc + p;
        } else {
            acc = acc - p;
        }
    }
    Ok(acc.max(-T::one()).min(T::one()))
}

/// `⟨Z_w⟩` for every wire of the register, in wire order.
pub fn z_expectations<T: Real>(state: &StateVector<T>) -> Vec<T> {
    let n = state.n_qubits();
    let mut out = vec![T::zero(); n];
    for (idx, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        for (w, o) in out.iter_mut().enumerate() {
            if idx & (1 << (n - 1 - w)) == 0 {
                *o = *o + p;
            } else {
                *o = *o - p;
            }
        }
    }
    out
}
