//! The preparation stage: raw events in, scaled train/test record shards and
//! a metadata sidecar out.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_scaler, class_counts, event_to_example, fit_scaler, shuffle_split, undersample,
    FeatureError, ScalerKind, ScalerParams, TriggerConfig,
};
use crate::format::{encode_example, read_raw_events, Example, RawEvent, RecordWriter};

pub const META_FILE: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub trigger: TriggerConfig,
    pub balance: bool,
    pub train_fraction: f64,
    pub seed: u64,
    pub scaler: ScalerKind,
    /// Record files written per split.
    pub shards: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            trigger: TriggerConfig::default(),
            balance: true,
            train_fraction: 0.8,
            seed: 0,
            scaler: ScalerKind::MinMax,
            shards: 8,
        }
    }
}

/// Sidecar describing a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub balance: bool,
    pub train_fraction: f64,
    pub pt_threshold: f64,
    pub iso_max: f64,
    pub n_events: usize,
    pub n_selected: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Per-class counts after the trigger (W, QCD, TTbar).
    pub selected_counts: [usize; 3],
    /// Per-class counts after balancing.
    pub class_counts: [usize; 3],
    pub train_counts: [usize; 3],
    pub test_counts: [usize; 3],
    /// Paths relative to the dataset directory.
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
    pub scaler: ScalerParams,
}

/// In-memory result of the preparation stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub scaler: ScalerParams,
    pub n_events: usize,
    pub selected_counts: [usize; 3],
    pub class_counts: [usize; 3],
}

/// Trigger, feature extraction, optional undersampling, shuffle, split and
/// scaling, all in memory. Deterministic for a given config regardless of
/// the thread count.
pub fn prepare_examples(
    events: &[RawEvent],
    cfg: &PrepareConfig,
) -> Result<Prepared, FeatureError> {
    let selected: Vec<Example> = events
        .par_iter()
        .filter_map(|e| event_to_example(e, &cfg.trigger))
        .collect();
    let selected_counts = class_counts(&selected);
    let balanced = if cfg.balance {
        undersample(selected, cfg.seed)?
    } else {
        selected
    };
    let class_counts = class_counts(&balanced);
    let (mut train, mut test) =
        shuffle_split(balanced, cfg.train_fraction, cfg.seed.wrapping_add(1))?;
    let scaler = fit_scaler(&train, cfg.scaler)?;
    train.par_iter_mut().for_each(|e| apply_scaler(&scaler, e));
    test.par_iter_mut().for_each(|e| apply_scaler(&scaler, e));
    Ok(Prepared {
        train,
        test,
        scaler,
        n_events: events.len(),
        selected_counts,
        class_counts,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_events(path: &Path) -> Result<Vec<RawEvent>, FeatureError> {
    let file = File::open(path).map_err(io_err(path))?;
    let fmt = |source| FeatureError::Format {
        path: path.to_path_buf(),
        source,
    };
    read_raw_events(BufReader::new(file))
        .map_err(fmt)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(fmt)
}

/// Writes `examples` round-robin into `shards` record files under `dir`.
/// Returns the file names relative to `dir.parent()`.
fn write_shards(
    examples: &[Example],
    dir: &Path,
    split: &str,
    shards: usize,
) -> Result<Vec<String>, FeatureError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let names: Vec<String> = (0..shards)
        .map(|k| format!("{split}/part-{k:05}-of-{shards:05}.rec"))
        .collect();
    let root = dir.parent().unwrap_or(Path::new("."));
    let mut writers = Vec::with_capacity(shards);
    for name in &names {
        let path = root.join(name);
        writers.push((
            RecordWriter::new(BufWriter::new(File::create(&path).map_err(io_err(&path))?)),
            path,
        ));
    }
    for (i, e) in examples.iter().enumerate() {
        let (w, path) = &mut writers[i % shards];
        w.write_record(&encode_example(e))
            .map_err(|source| FeatureError::Format {
                path: path.clone(),
                source,
            })?;
    }
    for (w, path) in writers {
        w.finish()
            .map_err(|source| FeatureError::Format { path, source })?;
    }
    Ok(names)
}

/// Runs the full preparation stage over `.hep` inputs and writes
/// `out/train/*.rec`, `out/test/*.rec` and `out/dataset.toml`.
pub fn prepare_files(
    inputs: &[PathBuf],
    out: &Path,
    cfg: &PrepareConfig,
) -> Result<DatasetMeta, FeatureError> {
    if cfg.shards == 0 {
        return Err(FeatureError::NoShards);
    }
    let mut events = Vec::new();
    for path in inputs {
        events.extend(read_events(path)?);
    }
    let prepared = prepare_examples(&events, cfg)?;
    drop(events);

    fs::create_dir_all(out).map_err(io_err(out))?;
    let train_files = write_shards(&prepared.train, &out.join("train"), "train", cfg.shards)?;
    let test_files = write_shards(&prepared.test, &out.join("test"), "test", cfg.shards)?;
    let meta = DatasetMeta {
        seed: cfg.seed,
        balance: cfg.balance,
        train_fraction: cfg.train_fraction,
        pt_threshold: cfg.trigger.pt_threshold,
        iso_max: cfg.trigger.iso_max,
        n_events: prepared.n_events,
        n_selected: prepared.selected_counts.iter().sum(),
        n_train: prepared.train.len(),
        n_test: prepared.test.len(),
        selected_counts: prepared.selected_counts,
        class_counts: prepared.class_counts,
        train_counts: class_counts(&prepared.train),
        test_counts: class_counts(&prepared.test),
        train_files,
        test_files,
        scaler: prepared.scaler,
    };
    let path = out.join(META_FILE);
    let text = toml::to_string(&meta).map_err(|e| FeatureError::Meta {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(meta)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, FeatureError> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    toml::from_str(&text).map_err(|e| FeatureError::Meta {
        path,
        message: e.to_string(),
    })
}

/// Sorted `.rec` files directly under `dir`.
pub fn list_records(dir: &Path) -> Result<Vec<PathBuf>, FeatureError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "rec"))
        .collect();
    files.sort();
    Ok(files)
}
