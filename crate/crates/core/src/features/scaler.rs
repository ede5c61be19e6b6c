use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::format::{Example, Llf, HLF_LEN, LLF_COLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    #[value(name = "minmax")]
    MinMax,
    Standard,
}

/// Per-column statistics: `(min, max)` for min-max scaling, `(mean, std)`
/// for standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub hlf: Vec<[f64; 2]>,
    pub llf: Vec<[f64; 2]>,
}

#[derive(Clone)]
struct Moments {
    n: u64,
    min: f64,
    max: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn new() -> Self {
        Self {
            n: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        self.n += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn params(&self, kind: ScalerKind) -> [f64; 2] {
        if self.n == 0 {
            return [0.0, 0.0];
        }
        match kind {
            ScalerKind::MinMax => [self.min, self.max],
            ScalerKind::Standard => {
                let mean = self.sum / self.n as f64;
                let var = (self.sum_sq / self.n as f64 - mean * mean).max(0.0);
                [mean, var.sqrt()]
            }
        }
    }
}

/// Fits per-column statistics on the training examples. Padding rows of the
/// LLF are excluded.
pub fn fit_scaler(train: &[Example], kind: ScalerKind) -> Result<ScalerParams, FeatureError> {
    if train.is_empty() {
        return Err(FeatureError::EmptyFit);
    }
    let mut hlf = vec![Moments::new(); HLF_LEN];
    let mut llf = vec![Moments::new(); LLF_COLS];
    for e in train {
        for (m, v) in hlf.iter_mut().zip(e.hlf) {
            m.push(v as f64);
        }
        for row in e
            .llf
            .stored_rows()
            .iter()
            .filter(|r| !Llf::is_padding_row(r))
        {
            for (m, v) in llf.iter_mut().zip(row) {
                m.push(*v as f64);
            }
        }
    }
    let mut params = ScalerParams {
        kind,
        hlf: hlf.iter().map(|m| m.params(kind)).collect(),
        llf: llf.iter().map(|m| m.params(kind)).collect(),
    };
    if kind == ScalerKind::Standard {
        // second pass: centered variance
        let mut var_h = vec![0.0f64; HLF_LEN];
        let mut var_l = vec![0.0f64; LLF_COLS];
        let (mut n_h, mut n_l) = (0u64, 0u64);
        for e in train {
            n_h += 1;
            for (j, v) in e.hlf.iter().enumerate() {
                var_h[j] += (*v as f64 - params.hlf[j][0]).powi(2);
            }
            for row in e
                .llf
                .stored_rows()
                .iter()
                .filter(|r| !Llf::is_padding_row(r))
            {
                n_l += 1;
                for (j, v) in row.iter().enumerate() {
                    var_l[j] += (*v as f64 - params.llf[j][0]).powi(2);
                }
            }
        }
        for (p, v) in params.hlf.iter_mut().zip(var_h) {
            p[1] = (v / n_h as f64).sqrt();
        }
        if n_l > 0 {
            for (p, v) in params.llf.iter_mut().zip(var_l) {
                p[1] = (v / n_l as f64).sqrt();
            }
        }
    }
    Ok(params)
}

fn scale(kind: ScalerKind, [a, b]: [f64; 2], x: f32) -> f32 {
    let x = x as f64;
    let y = match kind {
        ScalerKind::MinMax => {
            let range = b - a;
            if range > 0.0 {
                (x - a) / range
            } else {
                0.0
            }
        }
        ScalerKind::Standard => {
            if b > 0.0 {
                (x - a) / b
            } else {
                0.0
            }
        }
    };
    y as f32
}

/// Scales an example in place. LLF padding rows are left untouched.
pub fn apply_scaler(params: &ScalerParams, example: &mut Example) {
    for (v, p) in example.hlf.iter_mut().zip(&params.hlf) {
        *v = scale(params.kind, *p, *v);
    }
    for row in example.llf.stored_rows_mut() {
        if Llf::is_padding_row(row) {
            continue;
        }
        for (v, p) in row.iter_mut().zip(&params.llf) {
            *v = scale(params.kind, *p, *v);
        }
    }
}
