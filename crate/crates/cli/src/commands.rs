//! The four CLI commands as library functions.

use std::cell::Cell;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use proedit_core::io::write_atomic;
use proedit_core::pipeline::{
    load_snapshot, medium_aggressivity_level, preview as render_preview, select_aggressivity, ControlReceiver,
    Oracle, Pipeline, RunHandle, RunOutcome, Snapshot, SnapshotMetrics,
};
use proedit_core::scheduler::{plan, plan_preset, Schedule};
use proedit_core::splat::ply::sidecar_path;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, ScheduleConfig};
use crate::server::{self, AppState};
use crate::setup::{pipeline_config, Setup};

/// Runs the difficulty oracle and scheduler; writes `schedule.txt`.
pub fn decompose(cfg: &RunConfig) -> anyhow::Result<Schedule> {
    let setup = Setup::build(cfg)?;
    let schedule = plan_schedule(cfg, &setup)?;
    schedule.save(&setup.run_dir.schedule_path())?;
    write_atomic(
        &setup.run_dir.root().join("difficulty_cache.txt"),
        setup.estimator.cache().dump().as_bytes(),
    )?;
    Ok(schedule)
}

fn plan_schedule(cfg: &RunConfig, setup: &Setup) -> anyhow::Result<Schedule> {
    let est = &setup.estimator;
    let failed = Cell::new(None);
    let mut oracle = |a: f64, b: f64| {
        est.difficulty(a, b).inspect_err(|_| failed.set(Some((a, b))))
    };
    let limits = cfg.pipeline.limits;
    let res = match cfg.schedule {
        ScheduleConfig::Preset(p) => plan_preset(&mut oracle, p, &limits),
        ScheduleConfig::Threshold(t) => plan(&mut oracle, t, &limits),
    };
    res.map_err(|e| match failed.get() {
        Some((a, b)) => anyhow!(e).context(format!("difficulty oracle failed on interval [{a}, {b}]")),
        None => anyhow!(e),
    })
}

/// The ratio table printed by `decompose`.
pub fn schedule_table(s: &Schedule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "threshold {}  threshold_met {}", s.threshold, s.threshold_met);
    let _ = writeln!(out, "{:>5}  {:>10}  {:>10}", "i", "ratio", "d(prev)");
    for (i, r) in s.ratios.iter().enumerate() {
        let d = if i == 0 { "-".to_string() } else { format!("{:.6}", s.difficulties[i - 1]) };
        let _ = writeln!(out, "{i:>5}  {r:>10.6}  {d:>10}");
    }
    let _ = write!(out, "{} subtasks, {} stages", s.subtask_count(), s.stages().len());
    out
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub serve: Option<String>,
    pub deterministic: bool,
    pub resume: bool,
}

/// A run in progress: the pipeline is driven by [`PreparedRun::execute`].
pub struct PreparedRun {
    pub handle: Arc<RunHandle>,
    pub cameras: Vec<proedit_core::camera::Camera>,
    pipeline: Pipeline,
}

impl PreparedRun {
    pub fn new(cfg: &RunConfig, opts: &RunOptions) -> anyhow::Result<Self> {
        let setup = Setup::build(cfg)?;
        if let Some(e) = &setup.embeddings {
            log::info!("prompt embeddings loaded, dim {}", e.dim());
        }
        let saved = setup.run_dir.schedule_path();
        let schedule = if opts.resume && saved.exists() {
            Schedule::load(&saved)?
        } else {
            plan_schedule(cfg, &setup)?
        };
        let (handle, control): (Arc<RunHandle>, ControlReceiver) = RunHandle::new();
        let est = setup.estimator.clone();
        let oracle: Oracle = Box::new(move |a, b| est.difficulty(a, b));
        let pipeline = Pipeline::new(
            pipeline_config(cfg, opts.deterministic),
            schedule,
            setup.views,
            setup.editor,
            setup.source,
            setup.run_dir,
        )?
        .with_handle(handle.clone(), control)
        .with_oracle(oracle)
        .resuming(opts.resume);
        Ok(Self {
            handle,
            cameras: setup.cameras,
            pipeline,
        })
    }

    pub fn app_state(&self) -> AppState {
        AppState::new(self.handle.clone(), self.cameras.clone())
    }

    pub fn execute(self) -> anyhow::Result<RunOutcome> {
        Ok(self.pipeline.run()?)
    }
}

/// Full progressive edit. With `serve`, the control API stays up after the
/// run ends so the results can still be browsed.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    let prepared = PreparedRun::new(cfg, opts)?;
    let serve = opts.serve.clone().or_else(|| cfg.serve.clone());
    let server = match serve {
        Some(addr) => {
            let s = server::spawn(&addr, prepared.app_state())?;
            println!("serving control API on http://{}", s.addr());
            Some(s)
        }
        None => None,
    };
    let outcome = prepared.execute()?;
    if let Some(s) = server {
        println!("run finished; still serving (interrupt to exit)");
        s.wait();
    }
    Ok(outcome)
}

/// Which snapshot a read command addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotSel {
    Index(usize),
    Last,
    /// The snapshot after the first 40% of subtasks.
    Medium,
}

impl FromStr for SnapshotSel {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "last" => SnapshotSel::Last,
            "medium" => SnapshotSel::Medium,
            n => SnapshotSel::Index(n.parse().map_err(|_| anyhow!("snapshot must be an index, last or medium, got {n:?}"))?),
        })
    }
}

fn find_snapshot(cfg: &RunConfig, sel: SnapshotSel) -> anyhow::Result<Snapshot> {
    let run_dir = proedit_core::pipeline::RunDir::new(&cfg.run_dir);
    let snapshots = run_dir.load_manifest()?;
    if snapshots.is_empty() {
        bail!("no snapshots in {}", cfg.run_dir.display());
    }
    let level = match sel {
        SnapshotSel::Index(k) => k,
        SnapshotSel::Last => snapshots.len() - 1,
        SnapshotSel::Medium => {
            let schedule = Schedule::load(&run_dir.schedule_path())?;
            medium_aggressivity_level(schedule.subtask_count())
        }
    };
    Ok(select_aggressivity(&snapshots, level)?.clone())
}

/// Renders one snapshot from one configured view to a PNG.
pub fn preview(cfg: &RunConfig, sel: SnapshotSel, view: usize, out: &Path) -> anyhow::Result<()> {
    let cams = crate::setup::cameras(cfg)?;
    let cam = cams
        .get(view)
        .ok_or_else(|| anyhow!("unknown view id {view}; this config has {} views", cams.len()))?;
    let snapshot = find_snapshot(cfg, sel)?;
    let img = render_preview(&snapshot, cam)?;
    write_atomic(out, &img.to_png()?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub stage_index: usize,
    pub ratio: f64,
    pub ply: String,
    pub n_gaussians: usize,
    pub metrics: SnapshotMetrics,
}

/// Copies a snapshot's checkpoint and sidecar into `out_dir` with a manifest.
pub fn export(cfg: &RunConfig, sel: SnapshotSel, out_dir: &Path) -> anyhow::Result<ExportManifest> {
    let snapshot = find_snapshot(cfg, sel)?;
    let cloud = load_snapshot(&snapshot)?;
    let name = format!("{}.ply", snapshot.stage_index);
    let copy = |from: &Path, to: PathBuf| -> anyhow::Result<()> {
        let bytes = std::fs::read(from).with_context(|| format!("reading {}", from.display()))?;
        write_atomic(&to, &bytes)?;
        Ok(())
    };
    let ply = out_dir.join(&name);
    copy(&snapshot.checkpoint_path, ply.clone())?;
    copy(&sidecar_path(&snapshot.checkpoint_path), sidecar_path(&ply))?;
    let manifest = ExportManifest {
        stage_index: snapshot.stage_index,
        ratio: snapshot.ratio,
        ply: name,
        n_gaussians: cloud.len(),
        metrics: snapshot.metrics,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out_dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}
