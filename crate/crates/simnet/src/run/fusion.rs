use std::path::Path;

use qv2x::fusion::{
    cross_fuse, entangle_align, phase_patch, self_attend, synthetic_scene, unfuse,
    write_frames_jsonl, Modality, ModalityFrame,
};
use qv2x::qcore::state_fidelity;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{finish, Check};
use crate::artifact::{num, Artifacts, RunLog};
use crate::config::ScenarioConfig;
use crate::error::Result;

/// Smallest round-trip fidelity of fuse followed by unfuse that still passes.
pub const MIN_ROUNDTRIP_FIDELITY: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug)]
pub struct FusionOutcome {
    /// Lowest fuse/unfuse round-trip fidelity per scene.
    pub min_fidelity: Vec<f64>,
    pub patched_cells: Vec<usize>,
    pub checks: Vec<Check>,
}

/// Generates random camera/lidar scenes, aligns and patches them on the camera grid,
/// then fuses each cell's attended camera state with its lidar semantics and undoes
/// the fusion again.
pub fn run_fusion_demo(cfg: &ScenarioConfig, out: &Path) -> Result<FusionOutcome> {
    let hash = cfg.hash();
    let mut artifacts = Artifacts::create(out, &hash)?;
    let mut log = RunLog::new("fusion-demo", &hash);
    let fc = &cfg.fusion;
    let grid = fc.grid;
    let projection = grid.drop_z_projection();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut rows = Vec::new();
    let mut min_fidelity = Vec::new();
    let mut patched_cells = Vec::new();
    for scene_idx in 0..fc.scenes {
        let scene = synthetic_scene(&grid, fc.feature_dim, fc.p_camera, fc.p_lidar, &mut rng)?;
        if scene_idx == 0 {
            artifacts.text("frames.jsonl", &write_frames_jsonl(&scene.frames()))?;
        }
        let pair = entangle_align(&scene.camera, &scene.lidar, &grid, &projection)?;
        let patched = phase_patch(&pair, &scene.camera, &scene.lidar, &projection)?;
        let overlap = pair.overlap_mask.iter().filter(|&&m| m).count();

        let mut worst = 1.0f64;
        let mut fused_cells = 0usize;
        for (cell, (camera, lidar)) in patched.camera.iter().zip(&patched.lidar).enumerate() {
            if camera.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (x, y) = grid.cell_coords(cell);
            let frame = ModalityFrame {
                modality: Modality::Camera2d,
                coords: vec![x, y],
                features: camera.clone(),
            };
            let state = self_attend(&frame, fc.k_keep)?;
            let (fused, handle) = cross_fuse(&state, lidar)?;
            let back = unfuse(&fused, &handle)?;
            worst = worst.min(state_fidelity(&state, &back)?);
            fused_cells += 1;
        }
        log.record("fuse", scene_idx as u64, "min_fidelity", worst);
        log.record(
            "patch",
            scene_idx as u64,
            "patched_cells",
            patched.patched_cells as f64,
        );
        rows.push(format!(
            "{scene_idx},{},{},{overlap},{},{fused_cells},{}",
            scene.camera.len(),
            scene.lidar.len(),
            patched.patched_cells,
            num(worst)
        ));
        min_fidelity.push(worst);
        patched_cells.push(patched.patched_cells);
    }
    artifacts.csv(
        "fusion_scenes.csv",
        "scene,camera_frames,lidar_frames,overlap_cells,patched_cells,fused_cells,min_fidelity",
        rows,
    )?;

    let lowest = min_fidelity.iter().copied().fold(1.0f64, f64::min);
    let checks = if fc.scenes == 0 {
        Vec::new()
    } else {
        vec![Check::new(
            "fusion is exactly reversible",
            lowest >= MIN_ROUNDTRIP_FIDELITY,
            format!(
                "lowest round-trip fidelity {lowest:.12} over {} scenes",
                fc.scenes
            ),
        )]
    };
    let mean_patched =
        patched_cells.iter().sum::<usize>() as f64 / patched_cells.len().max(1) as f64;
    let lines = vec![
        format!("config_hash: {hash}"),
        format!(
            "grid: {}×{}×{}, feature dim {}, k_keep {}",
            grid.rows, grid.cols, grid.depth, fc.feature_dim, fc.k_keep
        ),
        format!("scenes: {}", fc.scenes),
        format!(
            "mean patched cells per scene: {mean_patched:.2} of {}",
            grid.cells()
        ),
        format!("lowest round-trip fidelity: {lowest:.12}"),
    ];
    finish(&mut artifacts, &log, "fusion-demo", &lines, &checks)?;
    Ok(FusionOutcome {
        min_fidelity,
        patched_cells,
        checks,
    })
}
