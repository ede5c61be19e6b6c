//! Newline-delimited JSON metrics, one record per event, appended in time
//! order.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dist::{DistError, EpochSummary, Observer};
use crate::format::{EXAMPLE_PAYLOAD_BYTES, FRAME_OVERHEAD};
use crate::nn::{Adam, Model};

/// Environment variable naming the metrics file.
pub const METRICS_ENV: &str = "TOPOCLASS_METRICS";

/// Bytes one example occupies in a record file.
pub const RECORD_BYTES: u64 = (EXAMPLE_PAYLOAD_BYTES + FRAME_OVERHEAD) as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub stage: String,
    pub examples_per_sec: Option<f64>,
    pub bytes_per_sec: Option<f64>,
    pub epoch: Option<u32>,
    pub step: Option<u64>,
    pub loss: Option<f64>,
    pub lr: Option<f64>,
    pub worker_rank: Option<usize>,
}

impl MetricsRecord {
    pub fn new(stage: &str) -> Self {
        Self {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            stage: stage.to_string(),
            examples_per_sec: None,
            bytes_per_sec: None,
            epoch: None,
            step: None,
            loss: None,
            lr: None,
            worker_rank: None,
        }
    }

    /// Throughput over `seconds` for `examples` examples of `bytes` bytes
    /// in total.
    pub fn throughput(mut self, examples: u64, bytes: u64, seconds: f64) -> Self {
        if seconds > 0.0 {
            self.examples_per_sec = Some(examples as f64 / seconds);
            self.bytes_per_sec = Some(bytes as f64 / seconds);
        }
        self
    }

    /// Drops non-finite numbers so every emitted field is finite.
    fn sanitized(mut self) -> Self {
        let keep = |v: Option<f64>| v.filter(|x| x.is_finite());
        self.examples_per_sec = keep(self.examples_per_sec);
        self.bytes_per_sec = keep(self.bytes_per_sec);
        self.loss = keep(self.loss);
        self.lr = keep(self.lr);
        self
    }
}

/// Appends records to a file; a sink without a file discards them.
#[derive(Debug, Default)]
pub struct MetricsSink {
    file: Option<(PathBuf, File)>,
    rank: Option<usize>,
}

impl MetricsSink {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some((path.to_path_buf(), f)),
            rank: None,
        })
    }

    /// The file named by `TOPOCLASS_METRICS`, else `fallback`, else none.
    pub fn from_env(fallback: Option<&Path>) -> std::io::Result<Self> {
        match std::env::var_os(METRICS_ENV) {
            Some(p) if !p.is_empty() => Self::open(Path::new(&p)),
            _ => match fallback {
                Some(p) => Self::open(p),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = Some(rank);
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn emit(&mut self, record: MetricsRecord) -> std::io::Result<()> {
        let Some((_, f)) = self.file.as_mut() else {
            return Ok(());
        };
        let mut record = record.sanitized();
        if record.worker_rank.is_none() {
            record.worker_rank = self.rank;
        }
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        f.write_all(&line)?;
        f.flush()
    }
}

impl Observer for MetricsSink {
    fn on_epoch(
        &mut self,
        s: &EpochSummary,
        _model: &Model<f32>,
        adam: &Adam<f32>,
    ) -> Result<(), DistError> {
        let mut r = MetricsRecord::new("train").throughput(
            s.examples,
            s.examples * RECORD_BYTES,
            s.seconds,
        );
        r.epoch = Some(s.epoch);
        r.step = Some(adam.t);
        r.loss = Some(s.mean_loss);
        r.lr = Some(s.lr);
        self.emit(r)
            .map_err(|e| DistError::io("writing metrics", e))
    }
}
