use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::rundir::Snapshot;
use crate::adaptive::MaintenanceReport;
use crate::error::{Error, Result};
use crate::scheduler::Schedule;
use crate::splat::GaussianCloud;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Running,
    Paused,
    StoppingAt(usize),
    Finished,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub mode: RunMode,
    pub stage_index: usize,
    pub ratio: f64,
    pub iteration: u64,
    pub loss_running_mean: f64,
    pub n_gaussians: usize,
    pub stage_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    StageStarted { stage: usize, ratio: f64 },
    Maintenance { stage: usize, iter: u64, report: MaintenanceReport },
    Converged { stage: usize, iterations: u64, skipped: bool },
    SnapshotWritten { stage: usize, path: String },
    ScheduleAdjusted { threshold: f64, stage_count: usize },
    Finished { stage: usize },
    Aborted { stage: usize, reason: String },
}

/// Control requests; `Adjust` carries a new threshold for the schedule tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Pause,
    Resume,
    SkipStage,
    StopAt(usize),
    Adjust(f64),
}

pub(crate) struct ControlMessage {
    pub command: Command,
    pub reply: Option<Sender<Result<RunStatus>>>,
}

/// Read-only view of a run plus the control queue into it. The pipeline is the
/// only writer of the state below; everyone else reads copies.
pub struct RunHandle {
    status: RwLock<RunStatus>,
    schedule: RwLock<Option<Schedule>>,
    snapshots: RwLock<Vec<Snapshot>>,
    latest_cloud: RwLock<Option<Arc<GaussianCloud>>>,
    subscribers: Mutex<Vec<Sender<Event>>>,
    history: Mutex<Vec<Event>>,
    control: Mutex<Sender<ControlMessage>>,
}

/// The pipeline side of a [`RunHandle`].
pub struct ControlReceiver {
    pub(crate) rx: Receiver<ControlMessage>,
}

impl RunHandle {
    pub fn new() -> (Arc<RunHandle>, ControlReceiver) {
        let (tx, rx) = mpsc::channel();
        let handle = RunHandle {
            status: RwLock::new(RunStatus {
                mode: RunMode::Running,
                stage_index: 0,
                ratio: 0.0,
                iteration: 0,
                loss_running_mean: 0.0,
                n_gaussians: 0,
                stage_count: 0,
            }),
            schedule: RwLock::new(None),
            snapshots: RwLock::new(Vec::new()),
            latest_cloud: RwLock::new(None),
            subscribers: Mutex::new(Vec::new()),
            history: Mutex::new(Vec::new()),
            control: Mutex::new(tx),
        };
        (Arc::new(handle), ControlReceiver { rx })
    }

    pub fn status(&self) -> RunStatus {
        self.status.read().unwrap().clone()
    }

    pub fn schedule(&self) -> Option<Schedule> {
        self.schedule.read().unwrap().clone()
    }

    pub fn snapshots(&self) -> Vec<Snapshot> {
        self.snapshots.read().unwrap().clone()
    }

    /// Most recently published immutable copy of the live cloud.
    pub fn latest_cloud(&self) -> Option<Arc<GaussianCloud>> {
        self.latest_cloud.read().unwrap().clone()
    }

    /// Events so far, then every future event on the returned channel.
    pub fn subscribe(&self) -> (Vec<Event>, Receiver<Event>) {
        let (tx, rx) = mpsc::channel();
        let history = self.history.lock().unwrap();
        self.subscribers.lock().unwrap().push(tx);
        (history.clone(), rx)
    }

    /// Queues `command` and waits up to `timeout` for the pipeline to apply it.
    pub fn send(&self, command: Command, timeout: Duration) -> Result<RunStatus> {
        let mode = self.status().mode;
        if matches!(mode, RunMode::Finished | RunMode::Aborted) {
            return Err(Error::Rejected(format!("run is no longer active ({mode:?})")));
        }
        let (tx, rx) = mpsc::channel();
        self.control
            .lock()
            .unwrap()
            .send(ControlMessage {
                command,
                reply: Some(tx),
            })
            .map_err(|_| Error::Rejected("run is no longer accepting commands".into()))?;
        rx.recv_timeout(timeout)
            .map_err(|_| Error::Rejected("run did not acknowledge the command in time".into()))?
    }

    pub(crate) fn set_status(&self, status: RunStatus) {
        *self.status.write().unwrap() = status;
    }

    pub(crate) fn update_status(&self, f: impl FnOnce(&mut RunStatus)) {
        f(&mut self.status.write().unwrap());
    }

    pub(crate) fn set_schedule(&self, schedule: Schedule) {
        *self.schedule.write().unwrap() = Some(schedule);
    }

    pub(crate) fn set_snapshots(&self, snapshots: Vec<Snapshot>) {
        *self.snapshots.write().unwrap() = snapshots;
    }

    pub(crate) fn publish_cloud(&self, cloud: Arc<GaussianCloud>) {
        *self.latest_cloud.write().unwrap() = Some(cloud);
    }

    pub(crate) fn emit(&self, event: Event) {
        let mut history = self.history.lock().unwrap();
        self.subscribers.lock().unwrap().retain(|s| s.send(event.clone()).is_ok());
        history.push(event);
    }
}
