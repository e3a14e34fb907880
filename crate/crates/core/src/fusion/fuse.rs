use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qcore::{Descriptor, DescriptorOp, StateVector};

/// Everything needed to undo a fusion: the applied op list, the fused register
/// dimension and a digest guarding against tampering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionHandle {
    pub descriptor: Descriptor,
    pub source_dims: usize,
    pub digest: String,
}

impl FusionHandle {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.descriptor.n_params != 0 {
            return Err(Error::Integrity(
                "fusion descriptor takes no parameters".into(),
            ));
        }
        if self.source_dims != 1usize << self.descriptor.n_qubits {
            return Err(Error::Integrity(
                "source_dims disagrees with the descriptor".into(),
            ));
        }
        if self.digest != self.descriptor.digest() {
            return Err(Error::Integrity("fusion handle digest mismatch".into()));
        }
        Ok(())
    }
}

/// Writes the semantics as phases `exp(iπ·b_j)` on the basis amplitudes, then
/// interferes them with a Hadamard layer on every wire.
pub fn cross_fuse(
    state: &StateVector<f64>,
    semantics: &[f64],
) -> Result<(StateVector<f64>, FusionHandle)> {
    check_dim(state.dim(), semantics.len())?;
    if let Some(b) = semantics.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::Domain(format!("semantic value {b} outside [0, 1]")));
    }
    let mut descriptor = Descriptor::new(state.n_qubits());
    descriptor.ops.push(DescriptorOp::Phase {
        phases: semantics.iter().map(|b| std::f64::consts::PI * b).collect(),
    });
    descriptor.ops.push(DescriptorOp::HadamardLayer);
    let mut fused = state.clone();
    descriptor.replay(&mut fused, &[])?;
    let handle = FusionHandle {
        digest: descriptor.digest(),
        descriptor,
        source_dims: state.dim(),
    };
    Ok((fused, handle))
}

/// Replays the inverse of the recorded fusion.
pub fn unfuse(fused: &StateVector<f64>, handle: &FusionHandle) -> Result<StateVector<f64>> {
    handle.validate()?;
    check_dim(handle.source_dims, fused.dim())?;
    let mut out = fused.clone();
    handle.descriptor.inverse().replay(&mut out, &[])?;
    Ok(out)
}

/// Measurement distribution of a fused state, the form consumed by decisions.
pub fn fused_distribution(fused: &StateVector<f64>) -> Vec<f64> {
    fused.probabilities()
}
