//! Grid search with k-fold cross-validation on a local thread pool.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{Item, PipeConfig, Pipeline};
use crate::dist::{run_rank, DistError, JobSpec, Local};
use crate::eval::{evaluate, EvalError};
use crate::features::shuffle;
use crate::format::Example;
use crate::nn::{Activation, ModelSpec, NnError};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("{0}")]
    Config(String),
    #[error("grid file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("candidate {index}: {source}")]
    Candidate {
        index: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// One axis value. Lists are layer widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(i64),
    Float(f64),
    Text(String),
    Widths(Vec<i64>),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Float(v) => write!(f, "{v}"),
            AxisValue::Text(v) => f.write_str(v),
            AxisValue::Widths(v) => {
                let s: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "{}", s.join("-"))
            }
        }
    }
}

/// Axes understood by [`Candidate::apply`].
pub const AXES: [&str; 11] = [
    "hidden",
    "layers",
    "units",
    "activation",
    "lr",
    "lr_decay",
    "batch",
    "epochs",
    "dropout",
    "gru_hidden",
    "head_width",
];

/// Named axes, each a nonempty list of values, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub axes: Vec<(String, Vec<AxisValue>)>,
}

#[derive(Deserialize)]
struct GridFile {
    axes: toml::Table,
}

impl GridSpace {
    /// Reads a `[axes]` table; axis order follows the document.
    pub fn from_toml(text: &str) -> Result<Self, TuneError> {
        let file: GridFile = toml::from_str(text)?;
        let axes = file
            .axes
            .into_iter()
            .map(|(name, v)| {
                let values: Vec<AxisValue> = match v {
                    toml::Value::Array(items) => items
                        .into_iter()
                        .map(|i| i.try_into::<AxisValue>().map_err(TuneError::Parse))
                        .collect::<Result<_, _>>()?,
                    other => vec![other.try_into().map_err(TuneError::Parse)?],
                };
                Ok((name, values))
            })
            .collect::<Result<_, TuneError>>()?;
        let space = GridSpace { axes };
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self, TuneError> {
        let text = std::fs::read_to_string(path).map_err(|source| TuneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Depth × width × learning rate, 200 candidates.
    pub fn default_grid() -> Self {
        let ints = |v: &[i64]| v.iter().map(|x| AxisValue::Int(*x)).collect();
        GridSpace {
            axes: vec![
                ("layers".into(), ints(&[1, 2, 3, 4, 5])),
                ("units".into(), ints(&[10, 20, 50, 100, 200])),
                (
                    "lr".into(),
                    [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2]
                        .iter()
                        .map(|x| AxisValue::Float(*x))
                        .collect(),
                ),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.axes.is_empty() {
            return Err(TuneError::Config("grid has no axes".into()));
        }
        for (i, (name, values)) in self.axes.iter().enumerate() {
            if !AXES.contains(&name.as_str()) {
                return Err(TuneError::Config(format!(
                    "unknown axis {name:?}; known axes are {AXES:?}"
                )));
            }
            if values.is_empty() {
                return Err(TuneError::Config(format!("axis {name:?} is empty")));
            }
            if self.axes[..i].iter().any(|(n, _)| n == name) {
                return Err(TuneError::Config(format!("axis {name:?} given twice")));
            }
        }
        self.size()?;
        Ok(())
    }

    pub fn size(&self) -> Result<usize, TuneError> {
        self.axes.iter().try_fold(1usize, |acc, (_, v)| {
            acc.checked_mul(v.len())
                .ok_or_else(|| TuneError::Config("grid size overflows".into()))
        })
    }

    /// Cartesian product in lexicographic order of value positions, the
    /// last axis varying fastest.
    pub fn expand(&self) -> Result<Vec<Candidate>, TuneError> {
        self.validate()?;
        let n = self.size()?;
        Ok((0..n)
            .map(|index| {
                let mut rem = index;
                let mut values = vec![AxisValue::Int(0); self.axes.len()];
                for (k, (_, vals)) in self.axes.iter().enumerate().rev() {
                    values[k] = vals[rem % vals.len()].clone();
                    rem /= vals.len();
                }
                Candidate {
                    index,
                    values: self
                        .axes
                        .iter()
                        .map(|(a, _)| a.clone())
                        .zip(values)
                        .collect(),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the expanded grid.
    pub index: usize,
    pub values: Vec<(String, AxisValue)>,
}

/// Training hyperparameters a candidate can override.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub model: ModelSpec,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: u32,
}

fn as_count(axis: &str, v: &AxisValue) -> Result<usize, TuneError> {
    match v {
        AxisValue::Int(i) if *i > 0 => Ok(*i as usize),
        other => Err(TuneError::Config(format!(
            "axis {axis}: expected a positive integer, got {other}"
        ))),
    }
}

fn as_float(axis: &str, v: &AxisValue) -> Result<f64, TuneError> {
    match v {
        AxisValue::Float(f) => Ok(*f),
        AxisValue::Int(i) => Ok(*i as f64),
        other => Err(TuneError::Config(format!(
            "axis {axis}: expected a number, got {other}"
        ))),
    }
}

impl Candidate {
    pub fn label(&self) -> String {
        self.values
            .iter()
            .map(|(a, v)| format!("{a}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn apply(&self, base: &Hyper) -> Result<Hyper, TuneError> {
        let mut h = base.clone();
        let (mut layers, mut units) = (None, None);
        for (axis, v) in &self.values {
            match axis.as_str() {
                "hidden" => match v {
                    AxisValue::Widths(w) if !w.is_empty() && w.iter().all(|x| *x > 0) => {
                        h.model.hidden = w.iter().map(|x| *x as usize).collect()
                    }
                    AxisValue::Int(_) => h.model.hidden = vec![as_count(axis, v)?],
                    other => {
                        return Err(TuneError::Config(format!(
                            "axis hidden: bad widths {other}"
                        )))
                    }
                },
                "layers" => layers = Some(as_count(axis, v)?),
                "units" => units = Some(as_count(axis, v)?),
                "activation" => match v {
                    AxisValue::Text(s) => {
                        h.model.activation = s
                            .parse::<Activation>()
                            .map_err(|e| TuneError::Config(e.to_string()))?
                    }
                    other => {
                        return Err(TuneError::Config(format!(
                            "axis activation: bad value {other}"
                        )))
                    }
                },
                "lr" => h.lr = as_float(axis, v)?,
                "lr_decay" => h.lr_decay = as_float(axis, v)?,
                "batch" => h.batch = as_count(axis, v)?,
                "epochs" => h.epochs = as_count(axis, v)? as u32,
                "dropout" => h.model.dropout = as_float(axis, v)?,
                "gru_hidden" => h.model.gru_hidden = as_count(axis, v)?,
                "head_width" => h.model.head_width = as_count(axis, v)?,
                other => return Err(TuneError::Config(format!("unknown axis {other:?}"))),
            }
        }
        if layers.is_some() || units.is_some() {
            let l = layers.unwrap_or(h.model.hidden.len().max(1));
            let u = units.unwrap_or(h.model.hidden.first().copied().unwrap_or(50));
            h.model.hidden = vec![u; l];
        }
        h.model
            .validate()
            .map_err(|e: NnError| TuneError::Config(format!("candidate {}: {e}", self.index)))?;
        Ok(h)
    }
}

/// `k` (train, validation) index pairs over a seeded permutation of
/// `0..n`. Validation folds partition the indices; the first `n % k`
/// folds hold one extra index.
pub fn kfold_split(
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, TuneError> {
    if k < 2 {
        return Err(TuneError::Config(format!("k = {k}; need at least 2 folds")));
    }
    if k > n {
        return Err(TuneError::Config(format!("{k} folds over {n} examples")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    shuffle(&mut perm, seed);
    let bounds = crate::dist::segment_bounds(n, k);
    Ok(bounds
        .iter()
        .map(|b| {
            let val = perm[b.clone()].to_vec();
            let train = perm[..b.start]
                .iter()
                .chain(&perm[b.end..])
                .copied()
                .collect();
            (train, val)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub folds: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub base: Hyper,
    pub shuffle_buffer: usize,
}

impl TuneConfig {
    pub fn new(base: Hyper) -> Self {
        Self {
            folds: 8,
            parallelism: 1,
            seed: 0,
            base,
            shuffle_buffer: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
    pub diverged: bool,
    /// 1 is best.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub axes: Vec<String>,
    pub folds: usize,
    pub parallelism: usize,
    /// In grid order.
    pub candidates: Vec<CandidateResult>,
    pub seconds: f64,
}

impl TuneResult {
    pub fn best(&self) -> &CandidateResult {
        self.candidates
            .iter()
            .find(|c| c.rank == 1)
            .expect("ranked results")
    }

    /// `index, <axes...>, fold_1..fold_k, mean_auc, diverged, rank`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index");
        for a in &self.axes {
            s.push(',');
            s.push_str(a);
        }
        for f in 1..=self.folds {
            let _ = write!(s, ",fold_{f}");
        }
        s.push_str(",mean_auc,diverged,rank\n");
        for c in &self.candidates {
            let _ = write!(s, "{}", c.candidate.index);
            for (_, v) in &c.candidate.values {
                let _ = write!(s, ",{v}");
            }
            for a in &c.fold_auc {
                let _ = write!(s, ",{a}");
            }
            let _ = writeln!(s, ",{},{},{}", c.mean_auc, c.diverged, c.rank);
        }
        s
    }
}

/// Outcome of one (candidate, fold) task: the validation macro AUC, or
/// `None` when training diverged.
fn run_task(
    hyper: &Hyper,
    cfg: &TuneConfig,
    candidate: usize,
    fold: usize,
    train: Vec<Item>,
    val: Vec<Item>,
) -> Result<Option<f64>, TuneError> {
    let wrap = |e: Box<dyn std::error::Error + Send + Sync>| TuneError::Candidate {
        index: candidate,
        source: e,
    };
    let mut spec = JobSpec::new(hyper.model.clone(), 1);
    spec.epochs = hyper.epochs;
    spec.per_worker_batch = hyper.batch;
    spec.base_lr = hyper.lr;
    spec.lr_decay = hyper.lr_decay;
    spec.seed = cfg.seed.wrapping_add(candidate as u64);
    spec.digest_every = 0;
    let pipe = PipeConfig {
        shuffle_buffer: cfg.shuffle_buffer,
        batch_size: hyper.batch,
        prefetch_depth: 0,
        seed: spec.seed.wrapping_mul(31).wrapping_add(fold as u64),
        ..PipeConfig::default()
    };
    let mut data = Pipeline::from_examples(train, pipe).map_err(|e| wrap(e.into()))?;
    let report = match run_rank(&spec, &mut data, &mut Local, &mut ()) {
        Ok(r) => r,
        Err(DistError::Nn(NnError::NonFinite { .. })) => return Ok(None),
        Err(e) => return Err(wrap(e.into())),
    };
    if report.epochs.iter().any(|e| !e.mean_loss.is_finite()) {
        return Ok(None);
    }
    let eval = evaluate(&report.model, val.chunks(512).map(|c| Ok(c.to_vec())));
    match eval {
        Ok(r) => Ok(Some(r.macro_auc())),
        // non-finite outputs surface as NaN scores
        Err(EvalError::Undefined(m)) if m.contains("NaN") => Ok(None),
        Err(e) => Err(wrap(e.into())),
    }
}

/// Trains every (candidate, fold) pair on a pool of `cfg.parallelism`
/// threads and ranks candidates by mean validation macro AUC. Results do
/// not depend on the pool size.
pub fn grid_search(
    space: &GridSpace,
    data: &[Example],
    cfg: &TuneConfig,
) -> Result<TuneResult, TuneError> {
    let started = Instant::now();
    let candidates = space.expand()?;
    let hypers: Vec<Hyper> = candidates
        .iter()
        .map(|c| c.apply(&cfg.base))
        .collect::<Result<_, _>>()?;
    if data.is_empty() {
        return Err(TuneError::Config("no examples to tune on".into()));
    }
    let folds = kfold_split(data.len(), cfg.folds, cfg.seed)?;
    let items: Vec<Item> = data.iter().cloned().map(Arc::new).collect();
    let tasks: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| TuneError::Config(e.to_string()))?;
    let outcomes: Vec<Option<f64>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, f)| {
                let pick =
                    |idx: &[usize]| idx.iter().map(|i| items[*i].clone()).collect::<Vec<_>>();
                run_task(&hypers[c], cfg, c, f, pick(&folds[f].0), pick(&folds[f].1))
            })
            .collect::<Result<_, _>>()
    })?;

    let k = folds.len();
    let mut results: Vec<CandidateResult> = candidates
        .into_iter()
        .enumerate()
        .map(|(c, candidate)| {
            let runs = &outcomes[c * k..(c + 1) * k];
            let diverged = runs.iter().any(Option::is_none);
            let fold_auc: Vec<f64> = runs.iter().map(|r| r.unwrap_or(0.0)).collect();
            let mean_auc = if diverged {
                0.0
            } else {
                fold_auc.iter().sum::<f64>() / k as f64
            };
            CandidateResult {
                candidate,
                fold_auc,
                mean_auc,
                diverged,
                rank: 0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|a, b| {
        results[*b]
            .mean_auc
            .total_cmp(&results[*a].mean_auc)
            .then(a.cmp(b))
    });
    for (rank, i) in order.into_iter().enumerate() {
        results[i].rank = rank + 1;
    }
    Ok(TuneResult {
        axes: space.axes.iter().map(|(a, _)| a.clone()).collect(),
        folds: k,
        parallelism: cfg.parallelism.max(1),
        candidates: results,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_last_axis_fastest() {
        let space =
            GridSpace::from_toml("[axes]\nunits = [1, 2]\nactivation = [\"relu\", \"tanh\"]\n")
                .unwrap();
        let labels: Vec<String> = space
            .expand()
            .unwrap()
            .iter()
            .map(Candidate::label)
            .collect();
        assert_eq!(
            labels,
            [
                "units=1 activation=relu",
                "units=1 activation=tanh",
                "units=2 activation=relu",
                "units=2 activation=tanh"
            ]
        );
    }

    #[test]
    fn default_grid_has_two_hundred_candidates() {
        assert_eq!(GridSpace::default_grid().expand().unwrap().len(), 200);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(GridSpace::from_toml("[axes]\nlr = []\n").is_err());
        assert!(GridSpace::from_toml("[axes]\noptimizer = [\"sgd\"]\n").is_err());
        assert!(GridSpace::from_toml("axes = 3\n").is_err());
    }

    #[test]
    fn parses_every_value_kind() {
        let space = GridSpace::from_toml(
            "[axes]\nhidden = [[50, 20, 10], [8]]\nlr = [0.001, 1]\nbatch = 64\nactivation = [\"sigmoid\"]\n",
        )
        .unwrap();
        let c = space.expand().unwrap();
        assert_eq!(c.len(), 4);
        let base = Hyper {
            model: ModelSpec::hlf(),
            lr: 0.5,
            lr_decay: 0.9,
            batch: 1,
            epochs: 1,
        };
        let h = c[1].apply(&base).unwrap();
        assert_eq!(h.model.hidden, vec![50, 20, 10]);
        assert_eq!(h.lr, 1.0);
        assert_eq!(h.batch, 64);
        assert_eq!(h.model.activation, Activation::Sigmoid);
        let h = GridSpace::default_grid().expand().unwrap()[199]
            .apply(&base)
            .unwrap();
        assert_eq!(h.model.hidden, vec![200; 5]);
        assert_eq!(h.lr, 2e-2);
    }

    #[test]
    fn kfold_sizes() {
        let f = kfold_split(10, 3, 1).unwrap();
        let sizes: Vec<usize> = f.iter().map(|(_, v)| v.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!(f.iter().all(|(t, v)| t.len() + v.len() == 10));
        let f = kfold_split(8, 8, 1).unwrap();
        assert!(f.iter().all(|(_, v)| v.len() == 1));
        assert!(kfold_split(3, 4, 0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
