use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{glorot_uniform, sigmoid};
use super::tensor::{matmul, matmul_acc, matmul_nt_acc, matmul_tn_acc, Real, Tensor};
use super::NnError;

/// Variable-length sequences that conceptually continue up to `steps` rows
/// by repeating `pad`. Sequence `b` is `seqs[b]`, row-major with `dim`
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch<F> {
    pub steps: usize,
    pub dim: usize,
    pub seqs: Vec<Vec<F>>,
    pub pad: Vec<F>,
}

impl<F: Real> SeqBatch<F> {
    /// Dense sequences of exactly `steps` rows each.
    pub fn dense(steps: usize, dim: usize, seqs: Vec<Vec<F>>) -> Self {
        Self {
            steps,
            dim,
            seqs,
            pad: vec![F::zero(); dim],
        }
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    fn stored(&self, b: usize) -> usize {
        self.seqs[b].len() / self.dim
    }

    pub fn row(&self, b: usize, t: usize) -> &[F] {
        if t < self.stored(b) {
            &self.seqs[b][t * self.dim..(t + 1) * self.dim]
        } else {
            &self.pad
        }
    }

    fn validate(&self, layer: &str) -> Result<(), NnError> {
        let bad = |found: String| NnError::Shape {
            layer: layer.to_string(),
            expected: format!("sequences of at most {} x {}", self.steps, self.dim),
            found,
        };
        if self.pad.len() != self.dim {
            return Err(bad(format!("pad row of {}", self.pad.len())));
        }
        for (b, s) in self.seqs.iter().enumerate() {
            if s.len() % self.dim != 0 || s.len() / self.dim > self.steps {
                return Err(bad(format!("sequence {b} with {} values", s.len())));
            }
        }
        Ok(())
    }
}

/// Gated recurrent unit with the reset gate applied to the previous state
/// before the candidate product:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r * h) Uh + bh)
/// h' = (1 - z) * h + z * h~
/// ```
///
/// Parameter layout from `offset`: `W_zr` (input x 2H), `U_zr` (H x 2H),
/// `b_zr` (2H), `W_h` (input x H), `U_h` (H x H), `b_h` (H). Within the
/// `zr` blocks the update gate occupies the first H columns.
///
/// With `mask_column` set, a step whose input row has that column above 0.5
/// leaves the state of that sequence unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gru {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
    pub offset: usize,
    pub mask_column: Option<usize>,
}

struct Blocks<'a, F> {
    w_zr: &'a [F],
    u_zr: &'a [F],
    b_zr: &'a [F],
    w_h: &'a [F],
    u_h: &'a [F],
    b_h: &'a [F],
}

#[derive(Debug)]
struct Step<F> {
    rows: Vec<usize>,
    x: Vec<F>,
    h_prev: Vec<F>,
    zr: Vec<F>,
    hc: Vec<F>,
}

/// Forward state kept for backpropagation through time.
#[derive(Debug)]
pub struct GruCache<F> {
    batch: usize,
    steps: Vec<Step<F>>,
}

impl<F> GruCache<F> {
    /// Number of recurrent steps actually executed.
    pub fn executed_steps(&self) -> usize {
        self.steps.len()
    }
}

impl Gru {
    pub fn new(
        name: impl Into<String>,
        input: usize,
        hidden: usize,
        offset: usize,
        mask_column: Option<usize>,
    ) -> Self {
        Self {
            name: name.into(),
            input,
            hidden,
            offset,
            mask_column,
        }
    }

    pub fn param_len(&self) -> usize {
        3 * self.hidden * (self.input + self.hidden + 1)
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_len()
    }

    fn sizes(&self) -> [usize; 6] {
        let (i, h) = (self.input, self.hidden);
        [i * 2 * h, h * 2 * h, 2 * h, i * h, h * h, h]
    }

    fn blocks<'a, F>(&self, p: &'a [F]) -> Blocks<'a, F> {
        let [a, b, c, d, e, _] = self.sizes();
        let p = &p[self.offset..self.end()];
        let (w_zr, p) = p.split_at(a);
        let (u_zr, p) = p.split_at(b);
        let (b_zr, p) = p.split_at(c);
        let (w_h, p) = p.split_at(d);
        let (u_h, b_h) = p.split_at(e);
        Blocks {
            w_zr,
            u_zr,
            b_zr,
            w_h,
            u_h,
            b_h,
        }
    }

    fn masked<F: Real>(&self, row: &[F]) -> bool {
        self.mask_column.is_some_and(|c| row[c] > F::of(0.5))
    }

    /// Runs the recurrence over the batch and returns the final hidden
    /// states (batch x hidden) with the cache for [`Gru::backward`].
    pub fn forward<F: Real>(
        &self,
        params: &[F],
        x: &SeqBatch<F>,
    ) -> Result<(Tensor<F>, GruCache<F>), NnError> {
        if x.dim != self.input {
            return Err(NnError::Shape {
                layer: self.name.clone(),
                expected: format!("input dim {}", self.input),
                found: format!("input dim {}", x.dim),
            });
        }
        if let Some(c) = self.mask_column {
            if c >= self.input {
                return Err(NnError::Config(format!(
                    "{}: mask column {c} outside input dim {}",
                    self.name, self.input
                )));
            }
        }
        x.validate(&self.name)?;
        let (n_in, hd) = (self.input, self.hidden);
        let p = self.blocks(params);
        let batch = x.len();
        // once only padding remains and padding is masked, nothing can change
        let executed = if self.masked(&x.pad) {
            (0..batch).map(|b| x.stored(b)).max().unwrap_or(0)
        } else {
            x.steps
        };

        let mut h = vec![F::zero(); batch * hd];
        let mut steps = Vec::with_capacity(executed);
        for t in 0..executed {
            let rows: Vec<usize> = (0..batch).filter(|&b| !self.masked(x.row(b, t))).collect();
            if rows.is_empty() {
                continue;
            }
            let a = rows.len();
            let mut xs = Vec::with_capacity(a * n_in);
            let mut h_prev = Vec::with_capacity(a * hd);
            for &b in &rows {
                xs.extend_from_slice(x.row(b, t));
                h_prev.extend_from_slice(&h[b * hd..(b + 1) * hd]);
            }
            let mut zr = vec![F::zero(); a * 2 * hd];
            matmul(&xs, p.w_zr, a, n_in, 2 * hd, &mut zr);
            matmul_acc(&h_prev, p.u_zr, a, hd, 2 * hd, &mut zr);
            for r in 0..a {
                for (v, b) in zr[r * 2 * hd..(r + 1) * 2 * hd].iter_mut().zip(p.b_zr) {
                    *v = sigmoid(*v + *b);
                }
            }
            let mut rh = vec![F::zero(); a * hd];
            for r in 0..a {
                for j in 0..hd {
                    rh[r * hd + j] = zr[r * 2 * hd + hd + j] * h_prev[r * hd + j];
                }
            }
            let mut hc = vec![F::zero(); a * hd];
            matmul(&xs, p.w_h, a, n_in, hd, &mut hc);
            matmul_acc(&rh, p.u_h, a, hd, hd, &mut hc);
            for r in 0..a {
                for (v, b) in hc[r * hd..(r + 1) * hd].iter_mut().zip(p.b_h) {
                    *v = (*v + *b).tanh();
                }
            }
            for (r, &b) in rows.iter().enumerate() {
                for j in 0..hd {
                    let z = zr[r * 2 * hd + j];
                    h[b * hd + j] = (F::one() - z) * h_prev[r * hd + j] + z * hc[r * hd + j];
                }
            }
            steps.push(Step {
                rows,
                x: xs,
                h_prev,
                zr,
                hc,
            });
        }
        Ok((Tensor::from_vec(&[batch, hd], h), GruCache { batch, steps }))
    }

    /// Backpropagation through time from the gradient of the final hidden
    /// states. Parameter gradients accumulate into `grad`.
    pub fn backward<F: Real>(
        &self,
        params: &[F],
        cache: &GruCache<F>,
        dh_last: &Tensor<F>,
        grad: &mut [F],
    ) -> Result<(), NnError> {
        let hd = self.hidden;
        let n_in = self.input;
        super::layers::check_shape(&self.name, dh_last, Some(cache.batch), hd)?;
        let p = self.blocks(params);
        let [s_wzr, s_uzr, s_bzr, s_wh, s_uh, _] = self.sizes();
        let g = &mut grad[self.offset..self.end()];
        let (g_wzr, g) = g.split_at_mut(s_wzr);
        let (g_uzr, g) = g.split_at_mut(s_uzr);
        let (g_bzr, g) = g.split_at_mut(s_bzr);
        let (g_wh, g) = g.split_at_mut(s_wh);
        let (g_uh, g_bh) = g.split_at_mut(s_uh);

        let mut dh = dh_last.data().to_vec();
        for st in cache.steps.iter().rev() {
            let a = st.rows.len();
            let mut da_zr = vec![F::zero(); a * 2 * hd];
            let mut da_h = vec![F::zero(); a * hd];
            let mut dh_prev = vec![F::zero(); a * hd];
            let mut rh = vec![F::zero(); a * hd];
            for (r, &b) in st.rows.iter().enumerate() {
                for j in 0..hd {
                    let d = dh[b * hd + j];
                    let z = st.zr[r * 2 * hd + j];
                    let hc = st.hc[r * hd + j];
                    let hp = st.h_prev[r * hd + j];
                    da_zr[r * 2 * hd + j] = d * (hc - hp) * z * (F::one() - z);
                    da_h[r * hd + j] = d * z * (F::one() - hc * hc);
                    dh_prev[r * hd + j] = d * (F::one() - z);
                    rh[r * hd + j] = st.zr[r * 2 * hd + hd + j] * hp;
                }
            }
            let mut d_rh = vec![F::zero(); a * hd];
            matmul_nt_acc(&da_h, p.u_h, a, hd, hd, &mut d_rh);
            for r in 0..a {
                for j in 0..hd {
                    let rg = st.zr[r * 2 * hd + hd + j];
                    let hp = st.h_prev[r * hd + j];
                    da_zr[r * 2 * hd + hd + j] = d_rh[r * hd + j] * hp * rg * (F::one() - rg);
                    dh_prev[r * hd + j] += d_rh[r * hd + j] * rg;
                }
            }
            matmul_nt_acc(&da_zr, p.u_zr, a, 2 * hd, hd, &mut dh_prev);

            matmul_tn_acc(&st.x, &da_zr, a, n_in, 2 * hd, g_wzr);
            matmul_tn_acc(&st.h_prev, &da_zr, a, hd, 2 * hd, g_uzr);
            matmul_tn_acc(&st.x, &da_h, a, n_in, hd, g_wh);
            matmul_tn_acc(&rh, &da_h, a, hd, hd, g_uh);
            for r in 0..a {
                for (gb, d) in g_bzr.iter_mut().zip(&da_zr[r * 2 * hd..(r + 1) * 2 * hd]) {
                    *gb += *d;
                }
                for (gb, d) in g_bh.iter_mut().zip(&da_h[r * hd..(r + 1) * hd]) {
                    *gb += *d;
                }
            }
            for (r, &b) in st.rows.iter().enumerate() {
                dh[b * hd..(b + 1) * hd].copy_from_slice(&dh_prev[r * hd..(r + 1) * hd]);
            }
        }
        Ok(())
    }

    /// One step for a single sequence, written out element by element.
    pub fn cell<F: Real>(&self, params: &[F], x: &[F], h: &[F]) -> Vec<F> {
        let p = self.blocks(params);
        let hd = self.hidden;
        let pre = |w: &[F], u: &[F], hv: &[F], b: F, cols: usize, j: usize| {
            let mut s = b;
            for (i, xi) in x.iter().enumerate() {
                s += *xi * w[i * cols + j];
            }
            for (k, hk) in hv.iter().enumerate() {
                s += *hk * u[k * cols + j];
            }
            s
        };
        let z: Vec<F> = (0..hd)
            .map(|j| sigmoid(pre(p.w_zr, p.u_zr, h, p.b_zr[j], 2 * hd, j)))
            .collect();
        let r: Vec<F> = (0..hd)
            .map(|j| sigmoid(pre(p.w_zr, p.u_zr, h, p.b_zr[hd + j], 2 * hd, hd + j)))
            .collect();
        let rh: Vec<F> = r.iter().zip(h).map(|(a, b)| *a * *b).collect();
        (0..hd)
            .map(|j| {
                let hc = pre(p.w_h, p.u_h, &rh, p.b_h[j], hd, j).tanh();
                (F::one() - z[j]) * h[j] + z[j] * hc
            })
            .collect()
    }

    /// Glorot-uniform input kernels, orthogonal recurrent blocks, zero biases.
    pub(crate) fn init(&self, rng: &mut ChaCha8Rng, params: &mut [f64]) {
        let (n_in, hd) = (self.input, self.hidden);
        let [s_wzr, s_uzr, s_bzr, s_wh, s_uh, s_bh] = self.sizes();
        let p = &mut params[self.offset..self.end()];
        let (w_zr, p) = p.split_at_mut(s_wzr);
        let (u_zr, p) = p.split_at_mut(s_uzr);
        let (b_zr, p) = p.split_at_mut(s_bzr);
        let (w_h, p) = p.split_at_mut(s_wh);
        let (u_h, b_h) = p.split_at_mut(s_uh);
        debug_assert_eq!(b_h.len(), s_bh);
        glorot_uniform(rng, n_in, 3 * hd, w_zr);
        for gate in 0..2 {
            let q = orthogonal(rng, hd);
            for i in 0..hd {
                u_zr[i * 2 * hd + gate * hd..i * 2 * hd + (gate + 1) * hd]
                    .copy_from_slice(&q[i * hd..(i + 1) * hd]);
            }
        }
        glorot_uniform(rng, n_in, 3 * hd, w_h);
        u_h.copy_from_slice(&orthogonal(rng, hd));
        b_zr.fill(0.0);
        b_h.fill(0.0);
    }
}

/// Random `n x n` orthogonal matrix: modified Gram-Schmidt over the columns
/// of a standard Gaussian matrix.
pub(crate) fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..n {
        for k in 0..j {
            let (done, rest) = cols.split_at_mut(j);
            let proj: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (v, q) in rest[0].iter_mut().zip(&done[k]) {
                *v -= proj * q;
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut out = vec![0.0; n * n];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            out[i * n + j] = *v;
        }
    }
    out
}
