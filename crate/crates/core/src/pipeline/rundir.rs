use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::MaintenanceReport;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub iterations: u64,
    pub final_loss_mean: f64,
    pub n_gaussians: usize,
}

/// A completed stage's checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub stage_index: usize,
    pub ratio: f64,
    pub checkpoint_path: PathBuf,
    pub metrics: SnapshotMetrics,
}

/// Layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn schedule_path(&self) -> PathBuf {
        self.root.join("schedule.txt")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("snapshots.json")
    }

    pub fn snapshot_path(&self, stage: usize) -> PathBuf {
        self.root.join("snapshots").join(format!("{stage}.ply"))
    }

    pub fn buffer_debug_path(&self, stage: usize, view: usize) -> PathBuf {
        self.root.join("buffer_debug").join(stage.to_string()).join(format!("{view}.png"))
    }

    pub fn save_manifest(&self, snapshots: &[Snapshot]) -> Result<()> {
        let json = serde_json::to_string_pretty(snapshots).map_err(|e| Error::Codec(e.to_string()))?;
        crate::io::write_atomic(&self.manifest_path(), json.as_bytes())
    }

    /// Completed snapshots, or an empty list for a fresh directory.
    pub fn load_manifest(&self) -> Result<Vec<Snapshot>> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = crate::io::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save_buffer_debug(&self, stage: usize, view: usize, image: &Image) -> Result<()> {
        image.save_png(&self.buffer_debug_path(stage, view))
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record<'a> {
    Train {
        stage: usize,
        iter: u64,
        loss: f64,
        running_mean: f64,
        n_gaussians: usize,
    },
    Maintenance {
        stage: usize,
        iter: u64,
        #[serde(flatten)]
        report: &'a MaintenanceReport,
    },
}

/// Append-only `metrics.jsonl` writer.
pub struct MetricsLog {
    out: Option<(PathBuf, BufWriter<File>)>,
}

impl MetricsLog {
    pub fn disabled() -> Self {
        Self { out: None }
    }

    /// Opens for appending; `truncate` starts a fresh log.
    pub fn open(path: PathBuf, truncate: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(!truncate)
            .write(true)
            .truncate(truncate)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: Some((path, BufWriter::new(file))),
        })
    }

    fn write(&mut self, record: &Record) -> Result<()> {
        if let Some((path, w)) = &mut self.out {
            let line = serde_json::to_string(record).map_err(|e| Error::Codec(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    pub fn train(&mut self, stage: usize, iter: u64, loss: f64, running_mean: f64, n_gaussians: usize) -> Result<()> {
        self.write(&Record::Train {
            stage,
            iter,
            loss,
            running_mean,
            n_gaussians,
        })
    }

    pub fn maintenance(&mut self, stage: usize, iter: u64, report: &MaintenanceReport) -> Result<()> {
        self.write(&Record::Maintenance { stage, iter, report })
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some((path, w)) = &mut self.out {
            w.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rd = RunDir::new(dir.path());
        assert!(rd.load_manifest().unwrap().is_empty());
        let snaps = vec![Snapshot {
            stage_index: 0,
            ratio: 0.0,
            checkpoint_path: rd.snapshot_path(0),
            metrics: SnapshotMetrics {
                iterations: 600,
                final_loss_mean: 0.01,
                n_gaussians: 200,
            },
        }];
        rd.save_manifest(&snaps).unwrap();
        assert_eq!(rd.load_manifest().unwrap(), snaps);
    }

    #[test]
    fn metrics_lines_are_tagged_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        {
            let mut log = MetricsLog::open(path.clone(), true).unwrap();
            log.train(1, 10, 0.5, 0.25, 200).unwrap();
            let report = MaintenanceReport {
                n_culled: 3,
                n_created: 5,
                n_total_after: 202,
                budget_used: 5,
            };
            log.maintenance(1, 400, &report).unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"type":"train","stage":1,"iter":10,"loss":0.5,"running_mean":0.25,"n_gaussians":200}"#
        );
        assert!(lines[1].contains(r#""type":"maintenance""#) && lines[1].contains(r#""n_culled":3"#));
    }
}
