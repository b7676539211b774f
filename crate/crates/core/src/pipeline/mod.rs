//! Progressive orchestration: per-stage iterative dataset update through an
//! edit buffer, convergence-gated advancement, snapshots, and live control.

mod buffer;
mod control;
mod rundir;

pub use buffer::{EditBuffer, Slot};
pub use control::{Command, ControlReceiver, Event, RunHandle, RunMode, RunStatus};
pub use rundir::{MetricsLog, RunDir, Snapshot, SnapshotMetrics};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, RecvTimeoutError, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive::{MaintenanceConfig, Maintainer};
use crate::camera::Camera;
use crate::editor::{Editor, StrengthSchedule};
use crate::embedding::Ratio;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scheduler::{ConvergenceConfig, DecomposeLimits, LossWindow, Schedule, Stage};
use crate::splat::ply::{load_checkpoint, save_checkpoint};
use crate::splat::{render, train_step, Adam, GaussianCloud, LearningRates, LossConfig};

/// A training view: its camera and the original capture.
#[derive(Clone, Debug)]
pub struct View {
    pub camera: Camera,
    pub original: Image,
}

/// What the producer feeds to the editor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditSource {
    #[default]
    CurrentRenders,
    OriginalCaptures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Single-threaded interleaving of edits and training steps.
    pub deterministic: bool,
    /// Training steps per edit.
    pub steps_per_edit: u64,
    pub edit_source: EditSource,
    pub strength: StrengthSchedule,
    /// Stage iterations over which the strength anneals from max to min.
    pub anneal_iters: u64,
    pub convergence: ConvergenceConfig,
    pub maintenance: MaintenanceConfig,
    pub learning_rates: LearningRates,
    pub loss: LossConfig,
    /// Hard stop for a stage that never latches convergence.
    pub max_stage_iters: u64,
    pub metrics_every: u64,
    /// Sampling weight of slots rewritten since the trainer last used them.
    pub fresh_weight: f64,
    pub buffer_debug: bool,
    pub limits: DecomposeLimits,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            deterministic: false,
            steps_per_edit: 20,
            edit_source: EditSource::CurrentRenders,
            strength: StrengthSchedule::default(),
            anneal_iters: 1000,
            convergence: ConvergenceConfig::default(),
            maintenance: MaintenanceConfig::default(),
            learning_rates: LearningRates::default(),
            loss: LossConfig::default(),
            max_stage_iters: 4000,
            metrics_every: 10,
            fresh_weight: 2.0,
            buffer_debug: false,
            limits: DecomposeLimits::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.strength.validate()?;
        let bad = |m: &str| Err(Error::Invalid(m.into()));
        if self.steps_per_edit == 0 || self.metrics_every == 0 || self.anneal_iters == 0 {
            return bad("steps_per_edit, metrics_every and anneal_iters must be >= 1");
        }
        if self.max_stage_iters < self.maintenance.warmup_iters + self.convergence.window as u64 {
            return bad("max_stage_iters must cover warmup plus one loss window");
        }
        if !(self.fresh_weight >= 1.0) {
            return bad("fresh_weight must be >= 1");
        }
        Ok(())
    }
}

/// Difficulty oracle used for on-the-fly schedule adjustment.
pub type Oracle = Box<dyn FnMut(f64, f64) -> Result<f64> + Send>;

pub struct RunOutcome {
    pub snapshots: Vec<Snapshot>,
    pub cloud: GaussianCloud,
    pub mode: RunMode,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    schedule: Schedule,
    views: Vec<View>,
    editor: Arc<dyn Editor>,
    initial: GaussianCloud,
    run_dir: RunDir,
    handle: Option<Arc<RunHandle>>,
    control: Option<ControlReceiver>,
    oracle: Option<Oracle>,
    resume: bool,
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        schedule: Schedule,
        views: Vec<View>,
        editor: Arc<dyn Editor>,
        initial: GaussianCloud,
        run_dir: RunDir,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        if views.len() < 2 {
            return Err(Error::Invalid(format!("pipeline needs at least 2 views, got {}", views.len())));
        }
        for (i, v) in views.iter().enumerate() {
            if v.original.resolution() != v.camera.resolution() {
                return Err(Error::Invalid(format!("view {i}: capture resolution differs from camera")));
            }
        }
        config.maintenance.validate(initial.len())?;
        Ok(Self {
            config,
            schedule,
            views,
            editor,
            initial,
            run_dir,
            handle: None,
            control: None,
            oracle: None,
            resume: false,
        })
    }

    /// Attaches a status/control handle (see [`RunHandle::new`]).
    pub fn with_handle(mut self, handle: Arc<RunHandle>, control: ControlReceiver) -> Self {
        handle.set_schedule(self.schedule.clone());
        self.handle = Some(handle);
        self.control = Some(control);
        self
    }

    pub fn with_oracle(mut self, oracle: Oracle) -> Self {
        self.oracle = Some(oracle);
        self
    }

    /// Continue after the last completed snapshot in the run directory.
    pub fn resuming(mut self, resume: bool) -> Self {
        self.resume = resume;
        self
    }

    pub fn run(self) -> Result<RunOutcome> {
        let Pipeline {
            config,
            schedule,
            views,
            editor,
            initial,
            run_dir,
            handle,
            control,
            oracle,
            resume,
        } = self;

        let (schedule, snapshots) = if resume && run_dir.schedule_path().exists() {
            (Schedule::load(&run_dir.schedule_path())?, run_dir.load_manifest()?)
        } else {
            (schedule, Vec::new())
        };
        schedule.save(&run_dir.schedule_path())?;
        run_dir.save_manifest(&snapshots)?;

        let (cloud, first_stage) = match snapshots.last() {
            Some(last) => (load_checkpoint(&last.checkpoint_path)?.0, last.stage_index + 1),
            None => (initial, 0),
        };
        let buffer = EditBuffer::new(views.len());
        match snapshots.last() {
            None => {
                for (i, v) in views.iter().enumerate() {
                    buffer.write(i, v.original.clone(), Ratio::ZERO)?;
                }
            }
            Some(last) => {
                let r = Ratio::new(last.ratio)?;
                for (i, v) in views.iter().enumerate() {
                    buffer.write(i, render(&cloud, &v.camera).image, r)?;
                }
            }
        }

        let shared = Shared {
            config: &config,
            views: &views,
            editor: editor.as_ref(),
            buffer: &buffer,
        };
        let global_iter = snapshots.last().map_or(0, |_| {
            snapshots.iter().map(|s| s.metrics.iterations).sum()
        });
        let mut run = RunState {
            opt: Adam::new(config.learning_rates, cloud.len()),
            maintainer: Maintainer::new(config.maintenance, config.seed ^ 0x6d61_696e),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            cloud,
            schedule,
            snapshots,
            metrics: MetricsLog::open(run_dir.metrics_path(), !resume)?,
            run_dir,
            handle,
            control,
            oracle,
            limits: config.limits,
            paused: false,
            stop_at: None,
            skip: false,
            consumed: vec![0; views.len()],
            next_view: 0,
            global_iter,
        };
        if let Some(h) = &run.handle {
            h.set_schedule(run.schedule.clone());
            h.set_snapshots(run.snapshots.clone());
            h.publish_cloud(Arc::new(run.cloud.clone()));
        }

        let mut k = first_stage;
        let result = loop {
            let stages = run.schedule.stages();
            if k >= stages.len() {
                break Ok(RunMode::Finished);
            }
            let stage = stages[k];
            if let Err(e) = run.execute_stage(&shared, stage) {
                break Err(e);
            }
            if run.stop_at.is_some_and(|s| s <= k) {
                break Ok(RunMode::Finished);
            }
            k += 1;
        };
        run.metrics.flush()?;
        let last_stage = k.min(run.schedule.stages().len().saturating_sub(1));
        match result {
            Ok(mode) => {
                run.emit(Event::Finished { stage: last_stage });
                run.set_mode(mode);
                Ok(RunOutcome {
                    snapshots: run.snapshots,
                    cloud: run.cloud,
                    mode,
                })
            }
            Err(e) => {
                run.emit(Event::Aborted {
                    stage: last_stage,
                    reason: e.to_string(),
                });
                run.set_mode(RunMode::Aborted);
                Err(e)
            }
        }
    }
}

/// Read-only state shared with the producer.
struct Shared<'a> {
    config: &'a PipelineConfig,
    views: &'a [View],
    editor: &'a dyn Editor,
    buffer: &'a EditBuffer,
}

impl Shared<'_> {
    /// Edits one view at `stage`'s ratio and strength and stores the result.
    fn produce(&self, view: usize, cloud: &GaussianCloud, ratio: Ratio, stage_iter: u64) -> Result<()> {
        let cfg = self.config;
        let u = (stage_iter as f64 / cfg.anneal_iters as f64).min(1.0);
        let strength = cfg.strength.at(u);
        let v = &self.views[view];
        let input = match cfg.edit_source {
            EditSource::CurrentRenders => render(cloud, &v.camera).image,
            EditSource::OriginalCaptures => v.original.clone(),
        };
        let edited = self.editor.edit(&input, view, ratio, strength)?;
        self.buffer.write(view, edited, ratio)?;
        Ok(())
    }
}

struct RunState {
    cloud: GaussianCloud,
    opt: Adam,
    maintainer: Maintainer,
    rng: ChaCha8Rng,
    schedule: Schedule,
    snapshots: Vec<Snapshot>,
    metrics: MetricsLog,
    run_dir: RunDir,
    handle: Option<Arc<RunHandle>>,
    control: Option<ControlReceiver>,
    oracle: Option<Oracle>,
    limits: DecomposeLimits,
    paused: bool,
    stop_at: Option<usize>,
    skip: bool,
    /// Slot version the trainer last sampled, per view.
    consumed: Vec<u64>,
    next_view: usize,
    global_iter: u64,
}

/// Handshake between the trainer and a concurrent producer.
struct ProducerLink {
    stop: AtomicBool,
    stage_iter: AtomicU64,
    cloud: Mutex<Arc<GaussianCloud>>,
    error: Mutex<Option<Error>>,
}

impl RunState {
    fn emit(&self, event: Event) {
        if let Some(h) = &self.handle {
            h.emit(event);
        }
    }

    fn mode(&self) -> RunMode {
        if self.paused {
            RunMode::Paused
        } else if let Some(s) = self.stop_at {
            RunMode::StoppingAt(s)
        } else {
            RunMode::Running
        }
    }

    fn set_mode(&self, mode: RunMode) {
        if let Some(h) = &self.handle {
            h.update_status(|s| s.mode = mode);
        }
    }

    fn status(&self, stage: &Stage, window: &LossWindow) -> RunStatus {
        RunStatus {
            mode: self.mode(),
            stage_index: stage.index,
            ratio: stage.ratio,
            iteration: window.count(),
            loss_running_mean: window.running_mean(),
            n_gaussians: self.cloud.len(),
            stage_count: self.schedule.stages().len(),
        }
    }

    fn publish_status(&self, stage: &Stage, window: &LossWindow) {
        if let Some(h) = &self.handle {
            h.set_status(self.status(stage, window));
        }
    }

    fn apply(&mut self, command: Command, stage: &Stage) -> Result<()> {
        match command {
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::SkipStage => self.skip = true,
            Command::StopAt(s) => {
                if s < stage.index {
                    return Err(Error::Rejected(format!(
                        "cannot stop at stage {s}: stage {} is already running",
                        stage.index
                    )));
                }
                self.stop_at = Some(s);
            }
            Command::Adjust(threshold) => {
                if !self.paused {
                    return Err(Error::Rejected("pause the run before adjusting the schedule".into()));
                }
                let oracle = self
                    .oracle
                    .as_mut()
                    .ok_or_else(|| Error::Rejected("this run has no difficulty oracle attached".into()))?;
                let adjusted = self.schedule.adjust_tail(stage.ratio_index, threshold, oracle, &self.limits)?;
                adjusted.save(&self.run_dir.schedule_path())?;
                self.schedule = adjusted;
                let stage_count = self.schedule.stages().len();
                if let Some(h) = &self.handle {
                    h.set_schedule(self.schedule.clone());
                }
                self.emit(Event::ScheduleAdjusted { threshold, stage_count });
            }
        }
        Ok(())
    }

    /// Applies queued commands; blocks while paused.
    fn poll_control(&mut self, stage: &Stage, window: &LossWindow, stall: &mut Duration) {
        let Some(control) = self.control.take() else {
            return;
        };
        loop {
            let msg = if self.paused {
                let t = Instant::now();
                let m = control.rx.recv_timeout(Duration::from_millis(20));
                *stall += t.elapsed();
                match m {
                    Ok(m) => m,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => {
                        self.paused = false;
                        break;
                    }
                }
            } else {
                match control.rx.try_recv() {
                    Ok(m) => m,
                    Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
                }
            };
            let outcome = self.apply(msg.command, stage);
            self.publish_status(stage, window);
            if let Some(reply) = msg.reply {
                let _ = reply.send(outcome.map(|_| self.status(stage, window)));
            }
        }
        self.control = Some(control);
    }

    /// Picks a view with fresh slots weighted up; `None` if no slot is ready.
    fn sample_view(&mut self, shared: &Shared) -> Result<Option<(usize, Slot)>> {
        let mut slots = Vec::with_capacity(shared.views.len());
        let mut total = 0.0;
        for v in 0..shared.views.len() {
            if let Some(slot) = shared.buffer.read(v)? {
                let w = if slot.version > self.consumed[v] {
                    shared.config.fresh_weight
                } else {
                    1.0
                };
                total += w;
                slots.push((v, slot, w));
            }
        }
        if slots.is_empty() {
            return Ok(None);
        }
        let mut pick = self.rng.random::<f64>() * total;
        let last = slots.len() - 1;
        for (i, (v, slot, w)) in slots.into_iter().enumerate() {
            if pick < w || i == last {
                self.consumed[v] = slot.version;
                return Ok(Some((v, slot)));
            }
            pick -= w;
        }
        unreachable!()
    }

    fn execute_stage(&mut self, shared: &Shared, stage: Stage) -> Result<()> {
        let ratio = Ratio::new(stage.ratio)?;
        self.skip = false;
        self.maintainer.begin_stage(&mut self.cloud, &mut self.opt);
        let mut window = LossWindow::new(shared.config.convergence)?;
        self.emit(Event::StageStarted {
            stage: stage.index,
            ratio: stage.ratio,
        });
        self.publish_status(&stage, &window);
        let started = Instant::now();
        let mut stall = Duration::ZERO;

        let iterations = if shared.config.deterministic {
            self.train_stage(shared, &stage, &mut window, &mut stall, None)?
        } else {
            let link = ProducerLink {
                stop: AtomicBool::new(false),
                stage_iter: AtomicU64::new(0),
                cloud: Mutex::new(Arc::new(self.cloud.clone())),
                error: Mutex::new(None),
            };
            let (ticket_tx, ticket_rx) = sync_channel::<()>(1);
            let n_views = shared.views.len();
            let mut next_view = self.next_view;
            let out = std::thread::scope(|s| {
                let link = &link;
                let producer = s.spawn(move || {
                    while !link.stop.load(Ordering::Acquire) {
                        match ticket_rx.recv_timeout(Duration::from_millis(5)) {
                            Ok(()) => {}
                            Err(RecvTimeoutError::Timeout) => continue,
                            Err(RecvTimeoutError::Disconnected) => break,
                        }
                        let cloud = link.cloud.lock().unwrap().clone();
                        let it = link.stage_iter.load(Ordering::Acquire);
                        if let Err(e) = shared.produce(next_view, &cloud, ratio, it) {
                            *link.error.lock().unwrap() = Some(e);
                            break;
                        }
                        next_view = (next_view + 1) % n_views;
                    }
                    next_view
                });
                let res = self.train_stage(shared, &stage, &mut window, &mut stall, Some((link, &ticket_tx)));
                link.stop.store(true, Ordering::Release);
                drop(ticket_tx);
                let nv = producer.join().expect("producer panicked");
                (res, nv)
            });
            self.next_view = out.1;
            let iterations = out.0?;
            if let Some(e) = link.error.lock().unwrap().take() {
                return Err(e);
            }
            iterations
        };

        let wall = started.elapsed();
        log::info!(
            "stage {} (r={}) done after {} iterations, {} gaussians, stall {:.2}% of {:.1}s",
            stage.index,
            stage.ratio,
            iterations,
            self.cloud.len(),
            100.0 * stall.as_secs_f64() / wall.as_secs_f64().max(1e-9),
            wall.as_secs_f64()
        );
        self.emit(Event::Converged {
            stage: stage.index,
            iterations,
            skipped: self.skip,
        });
        self.write_snapshot(shared, &stage, iterations, window.running_mean())
    }

    /// The trainer loop for one stage. Returns the number of iterations run.
    fn train_stage(
        &mut self,
        shared: &Shared,
        stage: &Stage,
        window: &mut LossWindow,
        stall: &mut Duration,
        link: Option<(&ProducerLink, &std::sync::mpsc::SyncSender<()>)>,
    ) -> Result<u64> {
        let cfg = shared.config;
        let ratio = Ratio::new(stage.ratio)?;
        let mut it = 0u64;
        loop {
            self.poll_control(stage, window, stall);
            if self.skip {
                return Ok(it);
            }
            if it % cfg.steps_per_edit == 0 {
                match link {
                    None => {
                        let v = self.next_view;
                        shared.produce(v, &self.cloud, ratio, it)?;
                        self.next_view = (v + 1) % shared.views.len();
                    }
                    Some((link, tickets)) => {
                        if link.error.lock().unwrap().is_some() {
                            return Ok(it);
                        }
                        link.stage_iter.store(it, Ordering::Release);
                        *link.cloud.lock().unwrap() = Arc::new(self.cloud.clone());
                        let _ = tickets.try_send(());
                    }
                }
                if let Some(h) = &self.handle {
                    h.publish_cloud(Arc::new(self.cloud.clone()));
                }
            }
            let t = Instant::now();
            let Some((v, slot)) = self.sample_view(shared)? else {
                std::thread::sleep(Duration::from_millis(1));
                *stall += t.elapsed();
                continue;
            };
            let cam = &shared.views[v].camera;
            let loss = train_step(&mut self.cloud, &slot.image, cam, &mut self.opt, &cfg.loss)?;
            it += 1;
            self.global_iter += 1;
            if let Some(report) = self.maintainer.after_step(&mut self.cloud, &mut self.opt)? {
                self.metrics.maintenance(stage.index, it, &report)?;
                self.emit(Event::Maintenance {
                    stage: stage.index,
                    iter: it,
                    report,
                });
            }
            let converged = window.update(loss)?;
            if it % cfg.metrics_every == 0 {
                self.metrics
                    .train(stage.index, it, loss, window.running_mean(), self.cloud.len())?;
            }
            self.publish_status(stage, window);
            if converged || it >= cfg.max_stage_iters {
                if !converged {
                    log::warn!("stage {} hit max_stage_iters={} before converging", stage.index, it);
                }
                return Ok(it);
            }
        }
    }

    fn write_snapshot(&mut self, shared: &Shared, stage: &Stage, iterations: u64, running_mean: f64) -> Result<()> {
        let path = self.run_dir.snapshot_path(stage.index);
        let counters = BTreeMap::from([
            ("stage_index".to_string(), stage.index as u64),
            ("iterations".to_string(), iterations),
            ("global_iter".to_string(), self.global_iter),
            ("n_gaussians".to_string(), self.cloud.len() as u64),
        ]);
        save_checkpoint(&self.cloud, &counters, &path)?;
        if shared.config.buffer_debug {
            for v in 0..shared.views.len() {
                if let Some(slot) = shared.buffer.read(v)? {
                    self.run_dir.save_buffer_debug(stage.index, v, &slot.image)?;
                }
            }
        }
        self.snapshots.push(Snapshot {
            stage_index: stage.index,
            ratio: stage.ratio,
            checkpoint_path: path.clone(),
            metrics: SnapshotMetrics {
                iterations,
                final_loss_mean: running_mean,
                n_gaussians: self.cloud.len(),
            },
        });
        self.run_dir.save_manifest(&self.snapshots)?;
        self.metrics.flush()?;
        if let Some(h) = &self.handle {
            h.set_snapshots(self.snapshots.clone());
            h.publish_cloud(Arc::new(self.cloud.clone()));
        }
        self.emit(Event::SnapshotWritten {
            stage: stage.index,
            path: path.display().to_string(),
        });
        Ok(())
    }
}

/// Index of the snapshot after completing ⌈0.4·n⌉ of `n` subtasks.
pub fn medium_aggressivity_level(subtasks: usize) -> usize {
    (0.4 * subtasks as f64).ceil() as usize
}

pub fn select_aggressivity(snapshots: &[Snapshot], level: usize) -> Result<&Snapshot> {
    snapshots.get(level).ok_or_else(|| {
        Error::Rejected(format!("aggressivity level {level} outside 0..{}", snapshots.len()))
    })
}

/// Loads a snapshot's checkpoint; a missing or damaged file is an integrity error.
pub fn load_snapshot(snapshot: &Snapshot) -> Result<GaussianCloud> {
    match load_checkpoint(&snapshot.checkpoint_path) {
        Ok((cloud, _)) => Ok(cloud),
        Err(Error::NotFound(p)) => Err(Error::Integrity(format!("snapshot checkpoint {} is missing", p.display()))),
        Err(e) => Err(e),
    }
}

pub fn preview(snapshot: &Snapshot, cam: &Camera) -> Result<Image> {
    Ok(render(&load_snapshot(snapshot)?, cam).image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Orbit;
    use crate::editor::FosParams;
    use crate::scene::{SceneSpec, SyntheticBench};
    use crate::scheduler::finalize;

    fn small_bench(fos_scale: f64, identity: bool) -> SyntheticBench {
        let spec = SceneSpec {
            gaussians: 40,
            gaussian_scale: 0.2,
            target_stretch: if identity { [1.0; 3] } else { [1.3, 0.9, 0.9] },
            recolor: if identity { 0.0 } else { 0.5 },
            ..SceneSpec::default()
        };
        let orbit = Orbit {
            count: 4,
            resolution: [32, 32],
            ..Orbit::default()
        };
        let fos = FosParams {
            fos_scale,
            ..FosParams::default()
        };
        SyntheticBench::new(&spec, &orbit, fos, 5).unwrap()
    }

    fn fast_config(deterministic: bool) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            deterministic,
            anneal_iters: 100,
            max_stage_iters: 400,
            convergence: ConvergenceConfig {
                window: 20,
                patience: 40,
                rel_tolerance: 1e-3,
            },
            seed: 11,
            ..PipelineConfig::default()
        };
        cfg.maintenance.warmup_iters = 30;
        cfg.maintenance.interval = 20;
        cfg
    }

    fn three_ratio_schedule() -> Schedule {
        finalize(vec![0.0, 0.5, 1.0], 0.5, vec![0.4, 0.4], true).unwrap()
    }

    fn pipeline(bench: &SyntheticBench, cfg: PipelineConfig, dir: &std::path::Path) -> Pipeline {
        Pipeline::new(
            cfg,
            three_ratio_schedule(),
            bench.views.clone(),
            bench.editor.clone(),
            bench.source.clone(),
            RunDir::new(dir),
        )
        .unwrap()
    }

    fn loss_column(dir: &std::path::Path) -> Vec<String> {
        std::fs::read_to_string(dir.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .filter(|l| l.contains("\"train\""))
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                format!("{:?}", v["loss"].as_f64().unwrap())
            })
            .collect()
    }

    #[test]
    fn aggressivity_levels() {
        assert_eq!(medium_aggressivity_level(8), 4);
        assert_eq!(medium_aggressivity_level(4), 2);
        assert_eq!(medium_aggressivity_level(5), 2);
        assert_eq!(medium_aggressivity_level(1), 1);
        assert!(matches!(select_aggressivity(&[], 0), Err(Error::Rejected(_))));
    }

    #[test]
    fn one_snapshot_per_stage_and_stages_respect_the_latch_floor() {
        let bench = small_bench(0.0, false);
        let dir = tempfile::tempdir().unwrap();
        let cfg = fast_config(true);
        let floor = cfg.maintenance.warmup_iters + cfg.convergence.window as u64;
        let out = pipeline(&bench, cfg, dir.path()).run().unwrap();
        assert_eq!(out.mode, RunMode::Finished);
        assert_eq!(out.snapshots.len(), three_ratio_schedule().stages().len());
        for (k, s) in out.snapshots.iter().enumerate() {
            assert_eq!(s.stage_index, k);
            assert!(s.metrics.iterations >= floor, "stage {k}: {} iterations", s.metrics.iterations);
            assert!(s.checkpoint_path.exists());
        }
        assert_eq!(RunDir::new(dir.path()).load_manifest().unwrap(), out.snapshots);
        let last = out.snapshots.last().unwrap();
        let cam = &bench.views[1].camera;
        assert_eq!(preview(last, cam).unwrap(), render(&out.cloud, cam).image);
        assert!(!loss_column(dir.path()).is_empty());
    }

    #[test]
    fn identity_edit_keeps_the_scene() {
        let bench = small_bench(0.0, true);
        let dir = tempfile::tempdir().unwrap();
        let out = pipeline(&bench, fast_config(true), dir.path()).run().unwrap();
        for v in &bench.views {
            let psnr = render(&out.cloud, &v.camera).image.psnr(&v.original).unwrap();
            assert!(psnr >= 35.0, "psnr {psnr}");
        }
    }

    #[test]
    fn deterministic_runs_are_bit_identical() {
        let bench = small_bench(0.05, false);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        pipeline(&bench, fast_config(true), a.path()).run().unwrap();
        pipeline(&bench, fast_config(true), b.path()).run().unwrap();
        assert_eq!(loss_column(a.path()), loss_column(b.path()));
        let rd = |d: &std::path::Path| RunDir::new(d);
        let last = three_ratio_schedule().stages().len() - 1;
        assert_eq!(
            std::fs::read(rd(a.path()).snapshot_path(last)).unwrap(),
            std::fs::read(rd(b.path()).snapshot_path(last)).unwrap()
        );
        assert_eq!(
            std::fs::read(rd(a.path()).schedule_path()).unwrap(),
            std::fs::read(rd(b.path()).schedule_path()).unwrap()
        );
    }

    #[test]
    fn stop_at_then_resume_completes_the_schedule() {
        let bench = small_bench(0.0, false);
        let dir = tempfile::tempdir().unwrap();
        let (h, rx) = RunHandle::new();
        h.send(Command::StopAt(1), Duration::from_millis(1)).ok();
        let p = pipeline(&bench, fast_config(true), dir.path()).with_handle(h.clone(), rx);
        let out = p.run().unwrap();
        // The command was queued before the first stage, so it applies there.
        assert_eq!(out.snapshots.len(), 2);
        assert_eq!(h.status().mode, RunMode::Finished);

        let resumed = pipeline(&bench, fast_config(true), dir.path()).resuming(true).run().unwrap();
        let idx: Vec<usize> = resumed.snapshots.iter().map(|s| s.stage_index).collect();
        assert_eq!(idx, (0..three_ratio_schedule().stages().len()).collect::<Vec<_>>());
    }

    #[test]
    fn live_control_pause_adjust_skip() {
        let bench = small_bench(0.0, false);
        let dir = tempfile::tempdir().unwrap();
        let (h, rx) = RunHandle::new();
        let est = Arc::new(bench.estimator(3).unwrap());
        let oracle: Oracle = Box::new(move |a, b| est.difficulty(a, b));
        let mut cfg = fast_config(false);
        cfg.max_stage_iters = 50_000;
        cfg.convergence.patience = 50_000;
        let p = pipeline(&bench, cfg, dir.path()).with_handle(h.clone(), rx).with_oracle(oracle);
        let (_, events) = h.subscribe();
        let t = Duration::from_secs(30);
        std::thread::scope(|s| {
            let run = s.spawn(move || p.run());
            // Stage 0 never converges with this patience; control drives it.
            let st = h.send(Command::SkipStage, t).unwrap();
            assert_eq!(st.stage_index, 0);
            assert!(matches!(h.send(Command::Adjust(0.3), t), Err(Error::Rejected(_))));
            assert_eq!(h.send(Command::Pause, t).unwrap().mode, RunMode::Paused);
            assert_eq!(h.status().mode, RunMode::Paused);
            let frozen = h.status().iteration;
            std::thread::sleep(Duration::from_millis(100));
            assert_eq!(h.status().iteration, frozen);
            let st = h.send(Command::Adjust(1e9), t).unwrap();
            let sched = h.schedule().unwrap();
            assert_eq!(*sched.ratios.last().unwrap(), 1.0);
            assert!(sched.ratios.len() <= three_ratio_schedule().ratios.len());
            let n_stages = sched.stages().len();
            h.send(Command::StopAt(n_stages - 1), t).unwrap();
            h.send(Command::Resume, t).unwrap();
            let _ = st;
            loop {
                let st = h.status();
                if st.mode == RunMode::Finished {
                    break;
                }
                if h.send(Command::SkipStage, t).is_err() {
                    break;
                }
                std::thread::sleep(Duration::from_millis(20));
            }
            let out = run.join().unwrap().unwrap();
            assert_eq!(out.snapshots.len(), n_stages);
        });
        let seen: Vec<Event> = events.try_iter().collect();
        assert!(seen.iter().any(|e| matches!(e, Event::ScheduleAdjusted { .. })));
        assert!(seen.iter().any(|e| matches!(e, Event::Converged { skipped: true, .. })));
        assert!(matches!(seen.last(), Some(Event::Finished { .. })));
        assert!(matches!(h.send(Command::Pause, t), Err(Error::Rejected(_))));
    }
}
