//! Dense statevector engine: gates, circuits, Pauli-Z observables and parameter-shift gradients.

mod circuit;
mod descriptor;
mod gate;
mod grad;
mod observable;
mod state;

pub use circuit::{angle_encode, Circuit};
#[allow(unused_imports)]
pub(crate) use descriptor::hex_digest;
pub use descriptor::{Descriptor, DescriptorOp, DESCRIPTOR_FORMAT};
pub use gate::{single_qubit_matrix, Angle, GateKind, GateOp};
pub use grad::{expectations, param_shift_full, param_shift_grad, param_shift_jacobian};
pub use observable::{expect, z_expectations, Observable};
pub use state::{init_state, state_fidelity, StateVector, MAX_QUBITS};
