use std::borrow::Borrow;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{Gru, GruCache, SeqBatch};
use super::layers::{dropout, softmax, softmax_xent, Activation, Dense};
use super::tensor::{Real, Tensor};
use super::NnError;
use crate::format::{Example, Llf, COL_IS_PADDING, HLF_LEN, LLF_COLS, LLF_ROWS};

pub const CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum ModelKind {
    #[serde(rename = "hlf")]
    Hlf,
    #[serde(rename = "seq")]
    #[value(name = "seq", alias = "sequence")]
    Sequence,
    #[serde(rename = "inclusive")]
    Inclusive,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hlf => "hlf",
            ModelKind::Sequence => "seq",
            ModelKind::Inclusive => "inclusive",
        }
    }

    pub fn uses_sequence(self) -> bool {
        self != ModelKind::Hlf
    }
}

/// Architecture description. `hidden` lists the dense widths of the HLF
/// classifier; the recurrent models use `gru_hidden`, and the inclusive one
/// adds a `head_width` dense layer after concatenating the HLF vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hlf_dim: usize,
    pub llf_dim: usize,
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gru_hidden: usize,
    pub head_width: usize,
    pub dropout: f64,
    /// Input column flagging padding rows the recurrence skips.
    pub mask_column: Option<usize>,
}

impl ModelSpec {
    pub fn hlf() -> Self {
        Self {
            kind: ModelKind::Hlf,
            hlf_dim: HLF_LEN,
            llf_dim: LLF_COLS,
            steps: LLF_ROWS,
            hidden: vec![50, 20, 10],
            activation: Activation::Relu,
            gru_hidden: 50,
            head_width: 25,
            dropout: 0.5,
            mask_column: Some(COL_IS_PADDING),
        }
    }

    pub fn sequence() -> Self {
        Self {
            kind: ModelKind::Sequence,
            ..Self::hlf()
        }
    }

    pub fn inclusive() -> Self {
        Self {
            kind: ModelKind::Inclusive,
            ..Self::hlf()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::hlf()
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.hlf_dim == 0 || self.llf_dim == 0 || self.steps == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.hidden.contains(&0) || self.gru_hidden == 0 || self.head_width == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if let Some(c) = self.mask_column {
            if c >= self.llf_dim {
                return bad(format!(
                    "mask column {c} outside input dim {}",
                    self.llf_dim
                ));
            }
        }
        Ok(())
    }
}

/// Inputs and integer targets for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub hlf: Tensor<F>,
    pub seq: Option<SeqBatch<F>>,
    pub labels: Vec<usize>,
}

impl<F: Real> Batch<F> {
    pub fn from_examples<E: Borrow<Example>>(examples: &[E], with_seq: bool) -> Self {
        let mut hlf = Vec::with_capacity(examples.len() * HLF_LEN);
        let mut labels = Vec::with_capacity(examples.len());
        for e in examples {
            let e = e.borrow();
            hlf.extend(e.hlf.iter().map(|v| F::of(*v as f64)));
            labels.push(e.label.index());
        }
        let seq = with_seq.then(|| SeqBatch {
            steps: LLF_ROWS,
            dim: LLF_COLS,
            seqs: examples
                .iter()
                .map(|e| {
                    e.borrow()
                        .llf
                        .stored_rows()
                        .iter()
                        .flatten()
                        .map(|v| F::of(*v as f64))
                        .collect()
                })
                .collect(),
            pad: Llf::padding_row()
                .iter()
                .map(|v| F::of(*v as f64))
                .collect(),
        });
        Self {
            hlf: Tensor::from_vec(&[examples.len(), HLF_LEN], hlf),
            seq,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct Trace<F> {
    gru: Option<(GruCache<F>, Tensor<F>)>,
    dense_inputs: Vec<Tensor<F>>,
    logits: Tensor<F>,
}

/// A classifier over one flat parameter vector. Layer order inside the
/// vector is the construction order (recurrent layer first, output last)
/// and is the order gradients are returned in.
#[derive(Debug, Clone)]
pub struct Model<F> {
    spec: ModelSpec,
    gru: Option<Gru>,
    dense: Vec<Dense>,
    params: Vec<F>,
}

fn layers(spec: &ModelSpec) -> (Option<Gru>, Vec<Dense>, usize) {
    let mut offset = 0;
    let mut dense = Vec::new();
    let mut push = |name: String, i: usize, o: usize, offset: &mut usize| {
        let d = Dense::new(name, i, o, *offset);
        *offset = d.end();
        dense.push(d);
    };
    match spec.kind {
        ModelKind::Hlf => {
            let mut width = spec.hlf_dim;
            for (i, h) in spec.hidden.iter().enumerate() {
                push(format!("dense_{}", i + 1), width, *h, &mut offset);
                width = *h;
            }
            push("output".into(), width, CLASSES, &mut offset);
            (None, dense, offset)
        }
        ModelKind::Sequence | ModelKind::Inclusive => {
            let g = Gru::new("gru", spec.llf_dim, spec.gru_hidden, 0, spec.mask_column);
            offset = g.end();
            if spec.kind == ModelKind::Inclusive {
                push(
                    "head".into(),
                    spec.gru_hidden + spec.hlf_dim,
                    spec.head_width,
                    &mut offset,
                );
                push("output".into(), spec.head_width, CLASSES, &mut offset);
            } else {
                push("output".into(), spec.gru_hidden, CLASSES, &mut offset);
            }
            (Some(g), dense, offset)
        }
    }
}

/// Builds a model with seeded initialization. Values are drawn in double
/// precision and rounded, so `f32` and `f64` builds from the same seed agree.
pub fn build_model<F: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<F>, NnError> {
    spec.validate()?;
    let (gru, dense, total) = layers(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0f64; total];
    if let Some(g) = &gru {
        g.init(&mut rng, &mut params);
    }
    for d in &dense {
        d.init(&mut rng, &mut params);
    }
    Ok(Model {
        spec: spec.clone(),
        gru,
        dense,
        params: params.into_iter().map(F::of).collect(),
    })
}

impl<F: Real> Model<F> {
    pub fn from_params(spec: &ModelSpec, params: Vec<F>) -> Result<Self, NnError> {
        spec.validate()?;
        let (gru, dense, total) = layers(spec);
        if params.len() != total {
            return Err(NnError::Shape {
                layer: "model".into(),
                expected: format!("{total} parameters"),
                found: format!("{} parameters", params.len()),
            });
        }
        Ok(Self {
            spec: spec.clone(),
            gru,
            dense,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            spec: self.spec.clone(),
            gru: self.gru.clone(),
            dense: self.dense.clone(),
            params: self.params.iter().map(|v| G::of(v.f64())).collect(),
        }
    }

    /// Named parameter ranges in canonical order.
    pub fn layout(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        if let Some(g) = &self.gru {
            out.push((g.name.clone(), g.offset..g.end()));
        }
        for d in &self.dense {
            out.push((d.name.clone(), d.offset..d.end()));
        }
        out
    }

    fn run(
        &self,
        params: &[F],
        batch: &Batch<F>,
        dropout_seed: Option<u64>,
    ) -> Result<Trace<F>, NnError> {
        super::layers::check_shape(
            "hlf_input",
            &batch.hlf,
            Some(batch.len()),
            self.spec.hlf_dim,
        )?;
        let (first, gru) = match &self.gru {
            None => (batch.hlf.clone(), None),
            Some(g) => {
                let seq = batch.seq.as_ref().ok_or_else(|| NnError::Shape {
                    layer: g.name.clone(),
                    expected: "a sequence input".into(),
                    found: "none".into(),
                })?;
                if seq.len() != batch.len() {
                    return Err(NnError::Shape {
                        layer: g.name.clone(),
                        expected: format!("{} sequences", batch.len()),
                        found: format!("{} sequences", seq.len()),
                    });
                }
                let (h, cache) = g.forward(params, seq)?;
                if self.spec.kind == ModelKind::Inclusive {
                    let (h, mask) = dropout(
                        &h,
                        self.spec.dropout,
                        dropout_seed.is_some(),
                        dropout_seed.unwrap_or(0),
                    )?;
                    (concat(&h, &batch.hlf), Some((cache, mask)))
                } else {
                    (h, Some((cache, Tensor::zeros(&[0]))))
                }
            }
        };
        let mut inputs = vec![first];
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let mut y = d.forward(params, inputs.last().unwrap())?;
            if i < last {
                self.spec.activation.apply(&mut y);
                inputs.push(y);
            } else {
                return Ok(Trace {
                    gru,
                    dense_inputs: inputs,
                    logits: y,
                });
            }
        }
        unreachable!("a model always ends in the output layer")
    }

    /// Class probabilities in inference mode.
    pub fn forward(&self, batch: &Batch<F>) -> Result<Tensor<F>, NnError> {
        Ok(softmax(&self.run(&self.params, batch, None)?.logits))
    }

    /// Training-mode loss at arbitrary parameters.
    pub fn loss_at(&self, params: &[F], batch: &Batch<F>, dropout_seed: u64) -> Result<F, NnError> {
        let trace = self.run(params, batch, Some(dropout_seed))?;
        Ok(softmax_xent(&trace.logits, &batch.labels)?.1)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter,
    /// in canonical order.
    pub fn train_step(&self, batch: &Batch<F>, dropout_seed: u64) -> Result<(F, Vec<F>), NnError> {
        let params = &self.params;
        let trace = self.run(params, batch, Some(dropout_seed))?;
        let (_, loss, mut dy) = softmax_xent(&trace.logits, &batch.labels)?;
        let mut grad = vec![F::zero(); params.len()];
        for (i, d) in self.dense.iter().enumerate().rev() {
            let mut dx = d.backward(params, &trace.dense_inputs[i], &dy, &mut grad)?;
            if i > 0 {
                self.spec
                    .activation
                    .backward(&trace.dense_inputs[i], &mut dx);
            }
            dy = dx;
        }
        if let (Some(g), Some((cache, mask))) = (&self.gru, &trace.gru) {
            let dh = if self.spec.kind == ModelKind::Inclusive {
                let mut dh = take_cols(&dy, g.hidden);
                for (d, m) in dh.data_mut().iter_mut().zip(mask.data()) {
                    *d *= *m;
                }
                dh
            } else {
                dy
            };
            g.backward(params, cache, &dh, &mut grad)?;
        }
        Ok((loss, grad))
    }
}

fn concat<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (ca, cb) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(a.rows() * (ca + cb));
    for r in 0..a.rows() {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Tensor::from_vec(&[a.rows(), ca + cb], out)
}

fn take_cols<F: Real>(a: &Tensor<F>, cols: usize) -> Tensor<F> {
    let mut out = Vec::with_capacity(a.rows() * cols);
    for r in 0..a.rows() {
        out.extend_from_slice(&a.row(r)[..cols]);
    }
    Tensor::from_vec(&[a.rows(), cols], out)
}
