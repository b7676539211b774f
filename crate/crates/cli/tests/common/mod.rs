#![allow(dead_code)]

use std::path::Path;

/// A scene small enough for end-to-end runs in seconds.
pub fn small_config(run_dir: &Path, schedule: &str, patience: usize) -> String {
    format!(
        r#"
seed = 3
run_dir = {run_dir:?}

[scene]
kind = "synthetic"
gaussians = 40
gaussian_scale = 0.2
target_stretch = [1.3, 0.9, 0.9]
recolor = 0.5

[views]
count = 4
radius = 3.5
elevation_deg = 20.0
focal_scale = 1.2
resolution = [32, 32]

[schedule]
{schedule}

[editor]
kind = "synthetic"
fos_scale = 0.05

[pipeline]
anneal_iters = 100
max_stage_iters = 100000

[pipeline.convergence]
window = 20
patience = {patience}
rel_tolerance = 1e-3

[pipeline.maintenance]
warmup_iters = 30
interval = 20
"#,
        run_dir = run_dir.display().to_string()
    )
}

pub fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}
