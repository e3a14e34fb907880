use serde::{Deserialize, Serialize};

use super::align::AlignedPair;
use super::frame::{positions, FusionGrid, Modality, ModalityFrame};
use crate::error::{check_dim, Error, Result};

/// Per-cell feature grids with every cell populated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchedGrids {
    pub camera: Vec<Vec<f64>>,
    /// Lidar features projected onto the cell grid (mean over the voxels of a cell).
    pub lidar: Vec<Vec<f64>>,
    /// Per-cell average of the two completed grids.
    pub fused: Vec<Vec<f64>>,
    /// Cells lacking at least one modality before patching.
    pub patched_cells: usize,
}

/// Completes both grids on the camera cell layout.
///
/// A cell missing one modality takes the value of that modality's nearest observed
/// cell (Chebyshev distance, lowest index among equals) scaled by `cos(Δφ)`, with
/// `Δφ = π/2 · (d − 1)/(d_max − 1)`: an adjacent donor is copied verbatim and a donor
/// across the whole grid contributes 0.
pub fn phase_patch(
    pair: &AlignedPair,
    frames2d: &[ModalityFrame],
    frames3d: &[ModalityFrame],
    projection: &[usize],
) -> Result<PatchedGrids> {
    let grid = &pair.grid;
    check_dim(grid.cells(), pair.overlap_mask.len())?;
    check_dim(grid.voxels(), projection.len())?;
    let cells = positions(frames2d, Modality::Camera2d, grid)?;
    let voxels = positions(frames3d, Modality::Lidar3d, grid)?;
    let Some(m) = frames2d.first().map(|f| f.features.len()) else {
        return Err(Error::Domain("no camera frames".into()));
    };
    for f in frames2d.iter().chain(frames3d) {
        check_dim(m, f.features.len())?;
    }

    let mut camera: Vec<Option<Vec<f64>>> = vec![None; grid.cells()];
    for (&c, f) in cells.iter().zip(frames2d) {
        camera[c] = Some(f.features.clone());
    }
    let mut sums = vec![(vec![0.0; m], 0usize); grid.cells()];
    for (&v, f) in voxels.iter().zip(frames3d) {
        let (s, n) = &mut sums[projection[v]];
        for (a, b) in s.iter_mut().zip(&f.features) {
            *a += b;
        }
        *n += 1;
    }
    let lidar: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect();

    for c in 0..grid.cells() {
        let both = camera[c].is_some() && lidar[c].is_some();
        if both != pair.overlap_mask[c] {
            return Err(Error::Integrity(format!(
                "overlap mask disagrees with frames at cell {c}"
            )));
        }
    }
    let patched_cells = pair.overlap_mask.iter().filter(|&&o| !o).count();
    let camera = complete(&camera, grid)?;
    let lidar = complete(&lidar, grid)?;
    let fused = camera
        .iter()
        .zip(&lidar)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
        .collect();
    Ok(PatchedGrids {
        camera,
        lidar,
        fused,
        patched_cells,
    })
}

fn complete(grid_values: &[Option<Vec<f64>>], grid: &FusionGrid) -> Result<Vec<Vec<f64>>> {
    let observed: Vec<usize> = (0..grid_values.len())
        .filter(|&c| grid_values[c].is_some())
        .collect();
    if observed.is_empty() {
        return Err(Error::Domain("no donor cell for patching".into()));
    }
    let d_max = grid.rows.max(grid.cols) - 1;
    Ok((0..grid_values.len())
        .map(|c| {
            if let Some(v) = &grid_values[c] {
                return v.clone();
            }
            let donor = *observed
                .iter()
                .min_by_key(|&&o| (grid.cell_distance(c, o), o))
                .expect("non-empty");
            let d = grid.cell_distance(c, donor);
            let norm = if d_max > 1 {
                (d - 1) as f64 / (d_max - 1) as f64
            } else {
                0.0
            };
            let scale = (std::f64::consts::FRAC_PI_2 * norm).cos().max(0.0);
            grid_values[donor]
                .as_ref()
                .expect("observed")
                .iter()
                .map(|v| v * scale)
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::entangle_align;

    fn cam(x: usize, y: usize, v: f64) -> ModalityFrame {
        ModalityFrame {
            modality: Modality::Camera2d,
            coords: vec![x, y],
            features: vec![v, v],
        }
    }

    fn lid(x: usize, y: usize, z: usize, v: f64) -> ModalityFrame {
        ModalityFrame {
            modality: Modality::Lidar3d,
            coords: vec![x, y, z],
            features: vec![v, v],
        }
    }

    #[test]
    fn full_overlap_is_plain_average() {
        let g = FusionGrid::default();
        let proj = g.drop_z_projection();
        let mut c2 = Vec::new();
        let mut c3 = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                c2.push(cam(x, y, 0.2));
                c3.push(lid(x, y, 0, 0.6));
                c3.push(lid(x, y, 1, 0.8));
            }
        }
        let pair = entangle_align(&c2, &c3, &g, &proj).unwrap();
        let out = phase_patch(&pair, &c2, &c3, &proj).unwrap();
        assert_eq!(out.patched_cells, 0);
        for cell in &out.fused {
            for v in cell {
                assert!((v - 0.45).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjacent_donor_copied_far_donor_vanishes() {
        let g = FusionGrid::default();
        let proj = g.drop_z_projection();
        let c2 = vec![cam(0, 0, 0.4)];
        let c3 = vec![lid(0, 0, 0, 0.9)];
        let pair = entangle_align(&c2, &c3, &g, &proj).unwrap();
        let out = phase_patch(&pair, &c2, &c3, &proj).unwrap();
        assert_eq!(out.patched_cells, 15);
        assert_eq!(out.camera[g.cell_index(1, 1)], vec![0.4, 0.4]);
        assert!(out.lidar[g.cell_index(3, 3)]
            .iter()
            .all(|v| v.abs() < 1e-15));
        // distance 2 of a maximum 3: cos(π/4)
        let mid = out.camera[g.cell_index(2, 0)][0];
        assert!((mid - 0.4 * std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn three_missing_cells_are_counted() {
        let g = FusionGrid::default();
        let proj = g.drop_z_projection();
        let mut c2 = Vec::new();
        let mut c3 = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                c2.push(cam(x, y, 0.5));
                if !matches!((x, y), (0, 0) | (1, 2) | (3, 3)) {
                    c3.push(lid(x, y, 1, 0.5));
                }
            }
        }
        let pair = entangle_align(&c2, &c3, &g, &proj).unwrap();
        let out = phase_patch(&pair, &c2, &c3, &proj).unwrap();
        assert_eq!(out.patched_cells, 3);
        assert!(out.fused.iter().all(|c| c.len() == 2));
    }

    #[test]
    fn tie_goes_to_lower_cell() {
        let g = FusionGrid::default();
        let proj = g.drop_z_projection();
        let c2 = vec![cam(0, 0, 0.1), cam(0, 2, 0.3)];
        let c3 = vec![lid(0, 0, 0, 0.5)];
        let pair = entangle_align(&c2, &c3, &g, &proj).unwrap();
        let out = phase_patch(&pair, &c2, &c3, &proj).unwrap();
        assert_eq!(out.camera[g.cell_index(0, 1)], vec![0.1, 0.1]);
    }
}
