use num_complex::Complex64;

use super::frame::{positions, FusionGrid, Modality, ModalityFrame};
use crate::error::{check_dim, Error, Result};
use crate::qcore::StateVector;

/// Camera-cell register (high wires) entangled with the lidar-voxel register.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub joint_state: StateVector<f64>,
    /// Per camera cell: observed by the camera and by at least one projected voxel.
    pub overlap_mask: Vec<bool>,
    pub grid: FusionGrid,
}

impl AlignedPair {
    pub fn cell_qubits(&self) -> usize {
        self.grid.cell_qubits()
    }

    pub fn voxel_qubits(&self) -> usize {
        self.grid.voxel_qubits()
    }

    /// `P(cell, voxel)` over the real grid positions, row per cell.
    pub fn joint_distribution(&self) -> Vec<Vec<f64>> {
        let vq = self.voxel_qubits();
        let probs = self.joint_state.probabilities();
        (0..self.grid.cells())
            .map(|c| {
                (0..self.grid.voxels())
                    .map(|v| probs[(c << vq) | v])
                    .collect()
            })
            .collect()
    }

    pub fn cell_marginal(&self) -> Vec<f64> {
        self.joint_distribution()
            .iter()
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn voxel_marginal(&self) -> Vec<f64> {
        let joint = self.joint_distribution();
        (0..self.grid.voxels())
            .map(|v| joint.iter().map(|row| row[v]).sum())
            .collect()
    }
}

/// Prepares the uniform superposition over occupied voxels with the cell register at
/// `|0⟩`, then applies the reversible oracle `|c⟩|v⟩ → |c ⊕ proj(v)⟩|v⟩`. Measuring the
/// voxel register therefore fixes the cell register to the projected cell.
///
/// For the drop-height projection the oracle is a fan of CNOTs from the voxel `x, y`
/// bits onto the cell bits.
pub fn entangle_align(
    frames2d: &[ModalityFrame],
    frames3d: &[ModalityFrame],
    grid: &FusionGrid,
    projection: &[usize],
) -> Result<AlignedPair> {
    grid.validate()?;
    check_dim(grid.voxels(), projection.len())?;
    if let Some(c) = projection.iter().find(|&&c| c >= grid.cells()) {
        return Err(Error::Domain(format!(
            "projection target {c} outside the cell grid"
        )));
    }
    let cells = positions(frames2d, Modality::Camera2d, grid)?;
    let voxels = positions(frames3d, Modality::Lidar3d, grid)?;
    if cells.is_empty() || voxels.is_empty() {
        return Err(Error::Domain(
            "alignment needs both modalities occupied".into(),
        ));
    }
    let (cq, vq) = (grid.cell_qubits(), grid.voxel_qubits());
    let n = cq + vq;
    if n > crate::qcore::MAX_QUBITS {
        return Err(Error::Capacity(format!("alignment register of {n} qubits")));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    for &v in &voxels {
        amps[v] = Complex64::new(1.0, 0.0);
    }
    let mut state = StateVector::from_unnormalized(amps)?;
    let vdim = 1usize << vq;
    let perm: Vec<usize> = (0..1usize << n)
        .map(|i| {
            let (c, v) = (i >> vq, i & (vdim - 1));
            let target = projection.get(v).copied().unwrap_or(0);
            ((c ^ target) << vq) | v
        })
        .collect();
    state.apply_permutation(&perm)?;

    let mut overlap_mask = vec![false; grid.cells()];
    for &c in &cells {
        overlap_mask[c] = voxels.iter().any(|&v| projection[v] == c);
    }
    Ok(AlignedPair {
        joint_state: state,
        overlap_mask,
        grid: *grid,
    })
}
