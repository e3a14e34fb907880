use num_complex::Complex64;

use super::frame::{ModalityFrame, MAX_FEATURES};
use crate::error::{Error, Result};
use crate::qcore::StateVector;

/// Amplitude-encodes the frame features on `log2 m` qubits and keeps only the `k_keep`
/// most probable amplitudes (lower basis index first among equals), renormalized.
pub fn self_attend(frame: &ModalityFrame, k_keep: usize) -> Result<StateVector<f64>> {
    let m = frame.features.len();
    if !(2..=MAX_FEATURES).contains(&m) || !m.is_power_of_two() {
        return Err(Error::Domain(format!(
            "feature length {m} is not a power of two ≤ 16"
        )));
    }
    if !(1..=m).contains(&k_keep) {
        return Err(Error::Domain(format!("k_keep = {k_keep} outside 1..={m}")));
    }
    if frame.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frame features".into()));
    }
    if frame.features.iter().all(|&v| v == 0.0) {
        return Err(Error::Domain(
            "all-zero features cannot be normalized".into(),
        ));
    }
    let mut order: Vec<usize> = (0..m).collect();
    // stable sort keeps ascending index among equal magnitudes
    order.sort_by(|&a, &b| frame.features[b].abs().total_cmp(&frame.features[a].abs()));
    let mut amps = vec![Complex64::new(0.0, 0.0); m];
    for &i in &order[..k_keep] {
        amps[i] = Complex64::new(frame.features[i], 0.0);
    }
    StateVector::from_unnormalized(amps)
}
