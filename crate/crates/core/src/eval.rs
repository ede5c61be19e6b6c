//! One-vs-rest ROC curves, AUC, confusion matrices and held-out loss.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapipe::{Item, PipeError};
use crate::format::{Example, Label};
use crate::nn::{Batch, Model, NnError, CLASSES};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ROC undefined: {0}")]
    Undefined(String),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::Undefined(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::Undefined(format!(
            "{pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// ROC points for thresholds `+inf` followed by each distinct score in
/// descending order. Equal scores move together, so the curve runs from
/// (0, 0) to (1, 1) with one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Mann–Whitney U statistic over `pos · neg`, with tied scores given their
/// mid-rank so that a tied pair counts one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // twice the rank sum keeps mid-ranks integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the mid-rank (i + 1 + j) / 2
        let mid2 = (i + 1 + j) as u128;
        let hits = order[i..j].iter().filter(|k| labels[**k]).count() as u128;
        rank_sum2 += mid2 * hits;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    /// Mean cross-entropy over the evaluated examples.
    pub loss: f64,
    /// W, QCD, TTbar.
    pub classes: Vec<ClassReport>,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; CLASSES]; CLASSES],
    pub accuracy: f64,
}

impl EvalReport {
    pub fn macro_auc(&self) -> f64 {
        self.classes.iter().map(|c| c.auc).sum::<f64>() / self.classes.len() as f64
    }

    pub fn auc_of(&self, label: Label) -> f64 {
        self.classes[label.index()].auc
    }
}

/// Per-example class probabilities and labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scores {
    pub probs: Vec<[f32; CLASSES]>,
    pub labels: Vec<usize>,
}

impl Scores {
    /// One-vs-rest scores and binary labels for a class.
    pub fn one_vs_rest(&self, class: usize) -> (Vec<f64>, Vec<bool>) {
        (
            self.probs.iter().map(|p| p[class] as f64).collect(),
            self.labels.iter().map(|l| *l == class).collect(),
        )
    }
}

/// Runs the model over a stream of batches.
pub fn predict<I>(model: &Model<f32>, batches: I) -> Result<Scores, EvalError>
where
    I: IntoIterator<Item = Result<Vec<Item>, PipeError>>,
{
    let with_seq = model.spec().kind.uses_sequence();
    let mut out = Scores::default();
    for b in batches {
        let b = b?;
        if b.is_empty() {
            continue;
        }
        let batch = Batch::<f32>::from_examples(&b, with_seq);
        let probs = model.forward(&batch)?;
        if probs.cols() != CLASSES {
            return Err(EvalError::Shape(format!(
                "model emits {} classes, expected {CLASSES}",
                probs.cols()
            )));
        }
        for r in 0..probs.rows() {
            out.probs.push(probs.row(r).try_into().unwrap());
        }
        out.labels.extend(batch.labels);
    }
    Ok(out)
}

/// Builds the report from predicted probabilities.
pub fn report(scores: &Scores) -> Result<EvalReport, EvalError> {
    let n = scores.labels.len();
    if n == 0 {
        return Err(EvalError::Undefined("no examples to evaluate".into()));
    }
    let mut confusion = [[0u64; CLASSES]; CLASSES];
    let mut loss = 0.0f64;
    for (p, l) in scores.probs.iter().zip(&scores.labels) {
        confusion[*l][argmax(p)] += 1;
        loss -= (p[*l] as f64).max(f64::MIN_POSITIVE).ln();
    }
    let classes = Label::ALL
        .iter()
        .map(|label| {
            let (s, y) = scores.one_vs_rest(label.index());
            Ok(ClassReport {
                class: label.name().to_string(),
                auc: auc(&s, &y)?,
                roc: roc_curve(&s, &y)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let correct: u64 = (0..CLASSES).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        examples: n,
        loss: loss / n as f64,
        classes,
        confusion,
        accuracy: correct as f64 / n as f64,
    })
}

pub fn evaluate<I>(model: &Model<f32>, batches: I) -> Result<EvalReport, EvalError>
where
    I: IntoIterator<Item = Result<Vec<Item>, PipeError>>,
{
    report(&predict(model, batches)?)
}

/// Mean cross-entropy of the model on in-memory examples.
pub fn mean_loss(
    model: &Model<f32>,
    examples: &[Item],
    batch_size: usize,
) -> Result<f64, EvalError> {
    let with_seq = model.spec().kind.uses_sequence();
    let mut total = 0.0f64;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::<f32>::from_examples(chunk, with_seq);
        let probs = model.forward(&batch)?;
        for (r, l) in batch.labels.iter().enumerate() {
            total -= (probs.row(r)[*l] as f64).max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Convenience for examples already in memory.
pub fn evaluate_examples(
    model: &Model<f32>,
    examples: &[Example],
    batch_size: usize,
) -> Result<EvalReport, EvalError> {
    let items: Vec<Item> = examples.iter().cloned().map(Into::into).collect();
    evaluate(
        model,
        items.chunks(batch_size.max(1)).map(|c| Ok(c.to_vec())),
    )
}

/// Writes `roc_<class>.csv` for each class and `report.json` (without the
/// curves) into `dir`. Returns the written paths.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for c in &report.classes {
        let path = dir.join(format!("roc_{}.csv", c.class.to_lowercase()));
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &c.roc {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        fs::write(&path, s).map_err(io(&path))?;
        written.push(path);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        examples: usize,
        loss: f64,
        accuracy: f64,
        auc: serde_json::Map<String, serde_json::Value>,
        macro_auc: f64,
        classes: Vec<&'a str>,
        confusion: &'a [[u64; CLASSES]; CLASSES],
    }
    let summary = Summary {
        examples: report.examples,
        loss: report.loss,
        accuracy: report.accuracy,
        auc: report
            .classes
            .iter()
            .map(|c| (c.class.clone(), serde_json::json!(c.auc)))
            .collect(),
        macro_auc: report.macro_auc(),
        classes: report.classes.iter().map(|c| c.class.as_str()).collect(),
        confusion: &report.confusion,
    };
    let path = dir.join("report.json");
    let mut f = fs::File::create(&path).map_err(io(&path))?;
    serde_json::to_writer_pretty(&mut f, &summary)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(f))
        .map_err(io(&path))?;
    written.push(path);
    Ok(written)
}
