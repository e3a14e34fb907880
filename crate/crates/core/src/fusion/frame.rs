use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-frame feature vector.
pub const MAX_FEATURES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    #[serde(rename = "CAMERA_2D")]
    Camera2d,
    #[serde(rename = "LIDAR_3D")]
    Lidar3d,
    Radar,
}

impl Modality {
    /// Length of the coordinate tuple this modality carries.
    pub fn coord_rank(self) -> usize {
        match self {
            Modality::Camera2d => 2,
            Modality::Lidar3d => 3,
            Modality::Radar => 0,
        }
    }
}

/// Cell grid shared by the camera (`rows × cols`) and lidar (`rows × cols × depth`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionGrid {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
}

impl Default for FusionGrid {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            depth: 2,
        }
    }
}

fn qubits_for(n: usize) -> usize {
    (n.max(2) - 1).ilog2() as usize + 1
}

impl FusionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.depth == 0 {
            return Err(Error::Domain("grid dimensions must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn voxels(&self) -> usize {
        self.cells() * self.depth
    }

    pub fn cell_qubits(&self) -> usize {
        qubits_for(self.cells())
    }

    pub fn voxel_qubits(&self) -> usize {
        qubits_for(self.voxels())
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        x * self.cols + y
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        self.cell_index(x, y) * self.depth + z
    }

    /// Projection that forgets the height coordinate.
    pub fn drop_z_projection(&self) -> Vec<usize> {
        (0..self.voxels()).map(|v| v / self.depth).collect()
    }

    /// Chebyshev distance between two cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = self.cell_coords(a);
        let (bx, by) = self.cell_coords(b);
        ax.abs_diff(bx).max(ay.abs_diff(by))
    }
}

/// One sensor observation anchored at a grid cell (camera), voxel (lidar) or at no
/// position (radar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityFrame {
    pub modality: Modality,
    pub coords: Vec<usize>,
    pub features: Vec<f64>,
}

impl ModalityFrame {
    pub fn validate(&self, grid: &FusionGrid) -> Result<()> {
        let m = self.features.len();
        if !(2..=MAX_FEATURES).contains(&m) || !m.is_power_of_two() {
            return Err(Error::Domain(format!(
                "feature length {m} is not a power of two in 2..={MAX_FEATURES}"
            )));
        }
        if let Some(v) = self.features.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("feature {v} outside [0, 1]")));
        }
        if self.coords.len() != self.modality.coord_rank() {
            return Err(Error::Domain(format!(
                "{:?} frame needs {} coordinates, got {}",
                self.modality,
                self.modality.coord_rank(),
                self.coords.len()
            )));
        }
        let bounds = [grid.rows, grid.cols, grid.depth];
        if self.coords.iter().zip(bounds).any(|(c, b)| *c >= b) {
            return Err(Error::Domain(format!(
                "coords {:?} outside the grid",
                self.coords
            )));
        }
        Ok(())
    }

    /// Flat cell (camera) or voxel (lidar) index; `None` for radar.
    pub fn position(&self, grid: &FusionGrid) -> Option<usize> {
        match self.modality {
            Modality::Camera2d => Some(grid.cell_index(self.coords[0], self.coords[1])),
            Modality::Lidar3d => {
                Some(grid.voxel_index(self.coords[0], self.coords[1], self.coords[2]))
            }
            Modality::Radar => None,
        }
    }
}

/// Validates frames of one modality and returns their positions, rejecting repeats.
pub(crate) fn positions(
    frames: &[ModalityFrame],
    modality: Modality,
    grid: &FusionGrid,
) -> Result<Vec<usize>> {
    let mut seen = BTreeSet::new();
    for f in frames {
        f.validate(grid)?;
        if f.modality != modality {
            return Err(Error::Domain(format!(
                "expected {modality:?} frame, got {:?}",
                f.modality
            )));
        }
        let p = f.position(grid).expect("positional modality");
        if !seen.insert(p) {
            return Err(Error::Domain(format!(
                "two {modality:?} frames at position {p}"
            )));
        }
    }
    Ok(frames
        .iter()
        .map(|f| f.position(grid).expect("positional modality"))
        .collect())
}

/// One JSON object per line.
pub fn write_frames_jsonl(frames: &[ModalityFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}

/// Parses and validates JSON-lines frames; blank lines and `#` comment lines are skipped.
pub fn read_frames_jsonl(text: &str, grid: &FusionGrid) -> Result<Vec<ModalityFrame>> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: ModalityFrame = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        f.validate(grid)
            .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        frames.push(f);
    }
    Ok(frames)
}

/// A synthetic capture of one time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub camera: Vec<ModalityFrame>,
    pub lidar: Vec<ModalityFrame>,
    pub radar: ModalityFrame,
}

impl Scene {
    pub fn frames(&self) -> Vec<ModalityFrame> {
        let mut all = self.camera.clone();
        all.extend(self.lidar.iter().cloned());
        all.push(self.radar.clone());
        all
    }
}

/// Random scene: each camera cell is observed with probability `p_camera`, each lidar
/// voxel with probability `p_lidar`; both modalities always see at least one position.
pub fn synthetic_scene<R: Rng + ?Sized>(
    grid: &FusionGrid,
    feature_dim: usize,
    p_camera: f64,
    p_lidar: f64,
    rng: &mut R,
) -> Result<Scene> {
    grid.validate()?;
    for p in [p_camera, p_lidar] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!(
                "occupancy probability {p} outside [0, 1]"
            )));
        }
    }
    let features = |rng: &mut R| -> Vec<f64> { (0..feature_dim).map(|_| rng.random()).collect() };
    let mut camera = Vec::new();
    for x in 0..grid.rows {
        for y in 0..grid.cols {
            if rng.random::<f64>() < p_camera {
                camera.push(ModalityFrame {
                    modality: Modality::Camera2d,
                    coords: vec![x, y],
                    features: features(rng),
                });
            }
        }
    }
    if camera.is_empty() {
        camera.push(ModalityFrame {
            modality: Modality::Camera2d,
            coords: vec![0, 0],
            features: features(rng),
        });
    }
    let mut lidar = Vec::new();
    for x in 0..grid.rows {
        for y in 0..grid.cols {
            for z in 0..grid.depth {
                if rng.random::<f64>() < p_lidar {
                    lidar.push(ModalityFrame {
                        modality: Modality::Lidar3d,
                        coords: vec![x, y, z],
                        features: features(rng),
                    });
                }
            }
        }
    }
    if lidar.is_empty() {
        lidar.push(ModalityFrame {
            modality: Modality::Lidar3d,
            coords: vec![0, 0, 0],
            features: features(rng),
        });
    }
    let radar = ModalityFrame {
        modality: Modality::Radar,
        coords: Vec::new(),
        features: (0..4).map(|_| rng.random()).collect(),
    };
    let scene = Scene {
        camera,
        lidar,
        radar,
    };
    for f in scene.frames() {
        f.validate(grid)?;
    }
    Ok(scene)
}
