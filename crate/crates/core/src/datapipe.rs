//! Training input pipeline over record files: round-robin interleaved
//! readers, a shuffle buffer, batching, background prefetch and an
//! in-memory cache of decoded examples.
//!
//! Every stage is deterministic in what it emits. Reader threads and the
//! prefetch thread only change when work happens, never the order.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, IntoIter, Receiver};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::format::{decode_example, Example, FormatError, RecordReader, FRAME_OVERHEAD};

const READ_BUFFER: usize = 1 << 20;
const READER_QUEUE: usize = 64;

#[derive(Debug, Error)]
pub enum PipeError {
    #[error("{path}: no such record file")]
    Missing { path: PathBuf },
    #[error("{path} at byte {offset}: {source}")]
    Record {
        path: PathBuf,
        offset: u64,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

pub type Item = Arc<Example>;
pub type Batch = Vec<Item>;

#[derive(Debug, Clone, PartialEq)]
pub struct PipeConfig {
    pub files: Vec<PathBuf>,
    pub interleave_width: usize,
    pub shuffle_buffer: usize,
    pub batch_size: usize,
    /// Batches prepared ahead on a background thread; 0 runs inline.
    pub prefetch_depth: usize,
    pub cache: bool,
    pub seed: u64,
    /// Advance the shuffle seed to `seed + epoch` every epoch.
    pub reshuffle_each_epoch: bool,
}

impl Default for PipeConfig {
    fn default() -> Self {
        Self {
            files: Vec::new(),
            interleave_width: 4,
            shuffle_buffer: 10_000,
            batch_size: 128,
            prefetch_depth: 4,
            cache: true,
            seed: 0,
            reshuffle_each_epoch: true,
        }
    }
}

impl PipeConfig {
    pub fn validate(&self) -> Result<(), PipeError> {
        if self.batch_size == 0 {
            return Err(PipeError::Config("batch_size must be at least 1".into()));
        }
        if self.shuffle_buffer == 0 {
            return Err(PipeError::Config(
                "shuffle_buffer must be at least 1".into(),
            ));
        }
        if self.interleave_width == 0 {
            return Err(PipeError::Config(
                "interleave_width must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Throughput counters shared with the metrics sink.
#[derive(Debug, Default)]
pub struct PipeStats {
    pub examples: AtomicU64,
    pub bytes: AtomicU64,
}

impl PipeStats {
    pub fn snapshot(&self) -> (u64, u64) {
        (
            self.examples.load(Ordering::Relaxed),
            self.bytes.load(Ordering::Relaxed),
        )
    }
}

type Shared = Arc<Mutex<Option<Arc<Vec<Item>>>>>;

pub struct Pipeline {
    cfg: PipeConfig,
    cached: Shared,
    epoch: u64,
    stats: Arc<PipeStats>,
}

/// Opens a pipeline over record files. Every file must exist.
pub fn open_pipeline(cfg: PipeConfig) -> Result<Pipeline, PipeError> {
    cfg.validate()?;
    for path in &cfg.files {
        if !path.is_file() {
            return Err(PipeError::Missing { path: path.clone() });
        }
    }
    Ok(Pipeline {
        cfg,
        cached: Arc::default(),
        epoch: 0,
        stats: Arc::default(),
    })
}

impl Pipeline {
    /// A pipeline over examples already in memory, treated as a populated
    /// cache. `cfg.files` is ignored.
    pub fn from_examples(examples: Vec<Item>, cfg: PipeConfig) -> Result<Self, PipeError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            cached: Arc::new(Mutex::new(Some(Arc::new(examples)))),
            epoch: 0,
            stats: Arc::default(),
        })
    }

    pub fn config(&self) -> &PipeConfig {
        &self.cfg
    }

    pub fn stats(&self) -> Arc<PipeStats> {
        self.stats.clone()
    }

    pub fn is_cached(&self) -> bool {
        self.cached.lock().unwrap().is_some()
    }

    /// Index of the next epoch [`Pipeline::next_epoch`] will produce.
    pub fn epoch_index(&self) -> u64 {
        self.epoch
    }

    /// Batches for the next full pass over the data.
    pub fn next_epoch(&mut self) -> Epoch {
        let epoch = self.epoch;
        self.epoch += 1;
        self.epoch_at(epoch)
    }

    fn epoch_at(&self, epoch: u64) -> Epoch {
        let cfg = &self.cfg;
        let cached = self.cached.lock().unwrap().clone();
        let source: Box<dyn Iterator<Item = Result<Item, PipeError>> + Send> = match cached {
            Some(items) => {
                let stats = self.stats.clone();
                Box::new((0..items.len()).map(move |i| {
                    stats.examples.fetch_add(1, Ordering::Relaxed);
                    Ok(items[i].clone())
                }))
            }
            None => {
                let inter =
                    Interleave::new(cfg.files.clone(), cfg.interleave_width, self.stats.clone());
                if cfg.cache {
                    Box::new(Caching {
                        inner: inter,
                        seen: Vec::new(),
                        slot: self.cached.clone(),
                        failed: false,
                    })
                } else {
                    Box::new(inter)
                }
            }
        };
        let seed = if cfg.reshuffle_each_epoch {
            cfg.seed.wrapping_add(epoch)
        } else {
            cfg.seed
        };
        let batches = Batches {
            inner: Shuffle::new(source, cfg.shuffle_buffer, seed),
            size: cfg.batch_size,
            done: false,
        };
        if cfg.prefetch_depth == 0 {
            Epoch::Inline(Box::new(batches))
        } else {
            let (tx, rx) = sync_channel(cfg.prefetch_depth);
            thread::spawn(move || {
                for b in batches {
                    if tx.send(b).is_err() {
                        break;
                    }
                }
            });
            Epoch::Prefetch(rx.into_iter())
        }
    }
}

/// One epoch of batches. The final batch may be short.
pub enum Epoch {
    Inline(Box<dyn Iterator<Item = Result<Batch, PipeError>> + Send>),
    Prefetch(IntoIter<Result<Batch, PipeError>>),
}

impl Iterator for Epoch {
    type Item = Result<Batch, PipeError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            Epoch::Inline(it) => it.next(),
            Epoch::Prefetch(it) => it.next(),
        }
    }
}

fn spawn_reader(path: PathBuf, stats: Arc<PipeStats>) -> Receiver<Result<Item, PipeError>> {
    let (tx, rx) = sync_channel(READER_QUEUE);
    thread::spawn(move || {
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(source) => {
                let _ = tx.send(Err(PipeError::Io { path, source }));
                return;
            }
        };
        let mut reader = RecordReader::new(BufReader::with_capacity(READ_BUFFER, file));
        loop {
            let offset = reader.offset();
            let fail = |source| PipeError::Record {
                path: path.clone(),
                offset,
                source,
            };
            let item = match reader.read_record() {
                Ok(None) => return,
                Ok(Some(bytes)) => {
                    stats
                        .bytes
                        .fetch_add((bytes.len() + FRAME_OVERHEAD) as u64, Ordering::Relaxed);
                    decode_example(&bytes).map(Arc::new).map_err(fail)
                }
                Err(e) => Err(fail(e)),
            };
            let stop = item.is_err();
            if item.is_ok() {
                stats.examples.fetch_add(1, Ordering::Relaxed);
            }
            if tx.send(item).is_err() || stop {
                return;
            }
        }
    });
    rx
}

/// Round-robin over up to `width` open files. When a file is exhausted its
/// slot takes the next unopened file, so the emitted order depends only on
/// the file contents.
struct Interleave {
    pending: std::vec::IntoIter<PathBuf>,
    slots: Vec<Receiver<Result<Item, PipeError>>>,
    cursor: usize,
    stats: Arc<PipeStats>,
    failed: bool,
}

impl Interleave {
    fn new(files: Vec<PathBuf>, width: usize, stats: Arc<PipeStats>) -> Self {
        let mut pending = files.into_iter();
        let slots = pending
            .by_ref()
            .take(width)
            .map(|p| spawn_reader(p, stats.clone()))
            .collect();
        Self {
            pending,
            slots,
            cursor: 0,
            stats,
            failed: false,
        }
    }
}

impl Iterator for Interleave {
    type Item = Result<Item, PipeError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.failed && !self.slots.is_empty() {
            match self.slots[self.cursor].recv() {
                Ok(item) => {
                    self.failed = item.is_err();
                    self.cursor = (self.cursor + 1) % self.slots.len();
                    return Some(item);
                }
                Err(_) => match self.pending.next() {
                    Some(p) => self.slots[self.cursor] = spawn_reader(p, self.stats.clone()),
                    None => {
                        self.slots.remove(self.cursor);
                        if self.cursor >= self.slots.len() {
                            self.cursor = 0;
                        }
                    }
                },
            }
        }
        None
    }
}

/// Records every item and publishes the full list once the source ends
/// cleanly.
struct Caching<I> {
    inner: I,
    seen: Vec<Item>,
    slot: Shared,
    failed: bool,
}

impl<I: Iterator<Item = Result<Item, PipeError>>> Iterator for Caching<I> {
    type Item = Result<Item, PipeError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.next() {
            Some(Ok(item)) => {
                self.seen.push(item.clone());
                Some(Ok(item))
            }
            Some(Err(e)) => {
                self.failed = true;
                Some(Err(e))
            }
            None => {
                if !self.failed {
                    let items = std::mem::take(&mut self.seen);
                    *self.slot.lock().unwrap() = Some(Arc::new(items));
                }
                None
            }
        }
    }
}

/// Shuffle buffer: keeps up to `capacity` items, emits a uniformly chosen
/// one and refills its place from the source. Capacity 1 is the identity.
pub struct Shuffle<I, T> {
    inner: I,
    buffer: Vec<T>,
    capacity: usize,
    rng: ChaCha8Rng,
    exhausted: bool,
}

impl<I, T> Shuffle<I, T> {
    pub fn new(inner: I, capacity: usize, seed: u64) -> Self {
        Self {
            inner,
            buffer: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            exhausted: false,
        }
    }
}

impl<I: Iterator<Item = Result<T, PipeError>>, T> Iterator for Shuffle<I, T> {
    type Item = Result<T, PipeError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.exhausted && self.buffer.len() < self.capacity {
            match self.inner.next() {
                Some(Ok(item)) => self.buffer.push(item),
                Some(Err(e)) => {
                    self.exhausted = true;
                    self.buffer.clear();
                    return Some(Err(e));
                }
                None => self.exhausted = true,
            }
        }
        if self.buffer.is_empty() {
            return None;
        }
        let j = self.rng.random_range(0..self.buffer.len());
        Some(Ok(self.buffer.swap_remove(j)))
    }
}

struct Batches<I> {
    inner: I,
    size: usize,
    done: bool,
}

impl<I: Iterator<Item = Result<Item, PipeError>>> Iterator for Batches<I> {
    type Item = Result<Batch, PipeError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut batch = Vec::with_capacity(self.size);
        while batch.len() < self.size {
            match self.inner.next() {
                Some(Ok(item)) => batch.push(item),
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                None => {
                    self.done = true;
                    break;
                }
            }
        }
        (!batch.is_empty()).then_some(Ok(batch))
    }
}

/// Reads every example of one record file in order.
pub fn read_examples(path: &Path) -> Result<Vec<Example>, PipeError> {
    let file = File::open(path).map_err(|source| PipeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = RecordReader::new(BufReader::with_capacity(READ_BUFFER, file));
    let mut out = Vec::new();
    loop {
        let offset = reader.offset();
        let fail = |source| PipeError::Record {
            path: path.to_path_buf(),
            offset,
            source,
        };
        match reader.read_record().map_err(fail)? {
            None => return Ok(out),
            Some(bytes) => out.push(decode_example(&bytes).map_err(fail)?),
        }
    }
}
