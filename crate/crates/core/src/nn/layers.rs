use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, matmul_nt_acc, matmul_tn_acc, Real, Tensor};
use super::NnError;

pub(crate) fn check_shape<F: Real>(
    layer: &str,
    t: &Tensor<F>,
    rows: Option<usize>,
    cols: usize,
) -> Result<(), NnError> {
    let ok = t.shape().len() == 2 && t.cols() == cols && rows.is_none_or(|r| r == t.rows());
    if ok {
        Ok(())
    } else {
        Err(NnError::Shape {
            layer: layer.to_string(),
            expected: match rows {
                Some(r) => format!("[{r}, {cols}]"),
                None => format!("[_, {cols}]"),
            },
            found: format!("{:?}", t.shape()),
        })
    }
}

/// Fully connected layer `y = x K + b` over a slice of the flat parameter
/// vector: kernel `K` (input x output, row-major) followed by bias `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Dense {
    pub fn new(name: impl Into<String>, input: usize, output: usize, offset: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            offset,
        }
    }

    pub fn param_len(&self) -> usize {
        self.input * self.output + self.output
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_len()
    }

    fn split<'a, F>(&self, p: &'a [F]) -> (&'a [F], &'a [F]) {
        let k = self.input * self.output;
        p[self.offset..self.end()].split_at(k)
    }

    pub fn forward<F: Real>(&self, params: &[F], x: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        check_shape(&self.name, x, None, self.input)?;
        let (kernel, bias) = self.split(params);
        let n = x.rows();
        let mut y = Tensor::zeros(&[n, self.output]);
        matmul(x.data(), kernel, n, self.input, self.output, y.data_mut());
        for r in 0..n {
            for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
                *v += *b;
            }
        }
        Ok(y)
    }

    /// Accumulates the kernel and bias gradients into `grad` (same layout as
    /// the parameters) and returns `dx`.
    pub fn backward<F: Real>(
        &self,
        params: &[F],
        x: &Tensor<F>,
        dy: &Tensor<F>,
        grad: &mut [F],
    ) -> Result<Tensor<F>, NnError> {
        check_shape(&self.name, x, None, self.input)?;
        check_shape(&self.name, dy, Some(x.rows()), self.output)?;
        let n = x.rows();
        let (kernel, _) = self.split(params);
        let k = self.input * self.output;
        let g = &mut grad[self.offset..self.end()];
        let (gk, gb) = g.split_at_mut(k);
        matmul_tn_acc(x.data(), dy.data(), n, self.input, self.output, gk);
        for r in 0..n {
            for (b, d) in gb.iter_mut().zip(dy.row(r)) {
                *b += *d;
            }
        }
        let mut dx = Tensor::zeros(&[n, self.input]);
        matmul_nt_acc(dy.data(), kernel, n, self.output, self.input, dx.data_mut());
        Ok(dx)
    }

    /// Glorot-uniform kernel, zero bias.
    pub(crate) fn init(&self, rng: &mut ChaCha8Rng, params: &mut [f64]) {
        let k = self.input * self.output;
        let p = &mut params[self.offset..self.end()];
        glorot_uniform(rng, self.input, self.output, &mut p[..k]);
        p[k..].fill(0.0);
    }
}

pub(crate) fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn apply<F: Real>(self, x: &mut Tensor<F>) {
        for v in x.data_mut() {
            *v = match self {
                Activation::Relu => v.max(F::zero()),
                Activation::Tanh => v.tanh(),
                Activation::Sigmoid => sigmoid(*v),
            };
        }
    }

    /// Gradient through the activation given its output `y`.
    pub fn backward<F: Real>(self, y: &Tensor<F>, dy: &mut Tensor<F>) {
        for (d, y) in dy.data_mut().iter_mut().zip(y.data()) {
            *d *= match self {
                Activation::Relu if *y > F::zero() => F::one(),
                Activation::Relu => F::zero(),
                Activation::Tanh => F::one() - *y * *y,
                Activation::Sigmoid => *y * (F::one() - *y),
            };
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, NnError> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            _ => Err(NnError::Config(format!("unknown activation {s:?}"))),
        }
    }
}

pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut y = x.clone();
    Activation::Relu.apply(&mut y);
    y
}

pub fn relu_backward<F: Real>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let mut dx = dy.clone();
    Activation::Relu.backward(y, &mut dx);
    dx
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Real>(z: &Tensor<F>) -> Tensor<F> {
    let mut p = z.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Softmax followed by categorical cross-entropy against integer labels.
/// Returns `(probs, mean loss, dloss/dlogits)`; the gradient is
/// `(p - onehot) / batch`.
pub fn softmax_xent<F: Real>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(Tensor<F>, F, Tensor<F>), NnError> {
    let classes = logits.cols();
    check_shape("softmax", logits, Some(labels.len()), classes)?;
    if let Some(bad) = labels.iter().find(|l| **l >= classes) {
        return Err(NnError::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let n = labels.len();
    let p = softmax(logits);
    let mut loss = F::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
        let lse = row.iter().map(|v| (*v - max).exp()).sum::<F>().ln() + max;
        loss += lse - row[y];
    }
    let inv = F::one() / F::of(n.max(1) as f64);
    let mut dz = p.clone();
    for (r, &y) in labels.iter().enumerate() {
        let row = dz.row_mut(r);
        row[y] -= F::one();
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((p, loss * inv, dz))
}

/// Inverted dropout. Returns the output and the per-element scale
/// (`0` or `1 / (1 - rate)`; all ones outside training).
pub fn dropout<F: Real>(
    x: &Tensor<F>,
    rate: f64,
    training: bool,
    seed: u64,
) -> Result<(Tensor<F>, Tensor<F>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    let mut mask = Tensor::from_vec(x.shape(), vec![F::one(); x.data().len()]);
    if training && rate > 0.0 {
        let keep = F::of(1.0 / (1.0 - rate));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in mask.data_mut() {
            *m = if rng.random::<f64>() < rate {
                F::zero()
            } else {
                keep
            };
        }
    }
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= *m;
    }
    Ok((y, mask))
}
