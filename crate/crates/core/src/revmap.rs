//! Reverse mapping: a one-hidden-layer GELU network that re-projects mapped
//! embeddings toward the text region, plus the reconstruction and relational
//! distillation losses that train it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

const GELU_K: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_C: f64 = 0.044_715;

/// Contrastive temperature used by the reconstruction loss.
pub const DEFAULT_TAU: f64 = 0.1;

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.02;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_K * (x + GELU_C * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = libm::tanh(GELU_K * (x + GELU_C * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// `y = W2 · gelu(W1 x + b1) + b2`, no residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseMapping {
    pub dim: usize,
    pub expansion: usize,
    /// hidden × dim
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// dim × hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevMapGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ReverseMapping {
    pub fn init(dim: usize, expansion: usize, seed: u64) -> Result<Self> {
        if dim == 0 || expansion == 0 {
            return Err(Error::InvalidArgument(
                "dim and expansion must be at least 1".into(),
            ));
        }
        let hidden = dim * expansion;
        let mut rng = Rng::seed_from_u64(seed);
        let w1 = rng.normal_matrix(hidden, dim).scale(INIT_STD);
        let w2 = rng.normal_matrix(dim, hidden).scale(INIT_STD);
        Ok(Self {
            dim,
            expansion,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dim],
        })
    }

    pub fn from_parts(
        dim: usize,
        expansion: usize,
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            dim,
            expansion,
            w1,
            b1,
            w2,
            b2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let shape_ok = self.dim > 0
            && self.w1.shape() == (h, self.dim)
            && self.b1.len() == h
            && self.w2.shape() == (self.dim, h)
            && self.b2.len() == self.dim;
        if !shape_ok {
            return Err(Error::Shape {
                expected: (h, self.dim),
                found: self.w1.shape(),
            });
        }
        let finite = self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "non-finite reverse-mapping weights".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::Shape {
                expected: (x.rows(), self.dim),
                found: x.shape(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Returns the output and the hidden pre-activations.
    fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_input(x)?;
        let n = x.rows();
        let h = self.hidden();
        let mut pre = Matrix::zeros(n, h);
        let mut out = Matrix::zeros(n, self.dim);
        let mut act = vec![0.0; h];
        for i in 0..n {
            let xi = x.row(i);
            let pre_i = pre.row_mut(i);
            for k in 0..h {
                pre_i[k] = linalg::dot(self.w1.row(k), xi) + self.b1[k];
                act[k] = gelu(pre_i[k]);
            }
            let yi = out.row_mut(i);
            for j in 0..self.dim {
                yi[j] = linalg::dot(self.w2.row(j), &act) + self.b2[j];
            }
        }
        Ok((out, pre))
    }

    /// Exact gradients of `Σ upstream ⊙ forward(x)` with respect to the
    /// weights and to `x`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(RevMapGrads, Matrix)> {
        let (_, pre) = self.forward_cached(x)?;
        if upstream.shape() != (x.rows(), self.dim) {
            return Err(Error::Shape {
                expected: (x.rows(), self.dim),
                found: upstream.shape(),
            });
        }
        let h = self.hidden();
        let mut g = RevMapGrads {
            w1: Matrix::zeros(h, self.dim),
            b1: vec![0.0; h],
            w2: Matrix::zeros(self.dim, h),
            b2: vec![0.0; self.dim],
        };
        let mut grad_x = Matrix::zeros(x.rows(), self.dim);
        let mut act = vec![0.0; h];
        let mut g_pre = vec![0.0; h];
        for i in 0..x.rows() {
            let up = upstream.row(i);
            let pre_i = pre.row(i);
            for k in 0..h {
                act[k] = gelu(pre_i[k]);
            }
            for j in 0..self.dim {
                g.b2[j] += up[j];
                for (gw, &a) in g.w2.row_mut(j).iter_mut().zip(&act) {
                    *gw += up[j] * a;
                }
            }
            for k in 0..h {
                let back: f64 = (0..self.dim).map(|j| self.w2[(j, k)] * up[j]).sum();
                g_pre[k] = back * gelu_grad(pre_i[k]);
            }
            let xi = x.row(i);
            let gx = grad_x.row_mut(i);
            for k in 0..h {
                let gk = g_pre[k];
                g.b1[k] += gk;
                for (gw, &xv) in g.w1.row_mut(k).iter_mut().zip(xi) {
                    *gw += gk * xv;
                }
                for (o, &w) in gx.iter_mut().zip(self.w1.row(k)) {
                    *o += gk * w;
                }
            }
        }
        Ok((g, grad_x))
    }
}

/// Cosine similarities between the rows of two matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    pub fn between(a: &Matrix, b: &Matrix) -> Result<Self> {
        let (ua, _) = unit_rows(a)?;
        let (ub, _) = unit_rows(b)?;
        Ok(Self {
            values: cross_dots(&ua, &ub),
        })
    }

    /// Internal similarity structure of one set.
    pub fn internal(a: &Matrix) -> Result<Self> {
        let (ua, _) = unit_rows(a)?;
        let mut values = ua.gram();
        for i in 0..values.rows() {
            values[(i, i)] = 1.0;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

fn cross_dots(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| linalg::dot(a.row(i), b.row(j)))
}

/// Row-normalized copy and the original norms.
pub(crate) fn unit_rows(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let n = linalg::norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateRow { row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient with respect to unit rows back to the raw rows.
fn unit_rows_backward(unit: &Matrix, norms: &[f64], grad_unit: &Matrix) -> Matrix {
    let mut out = grad_unit.clone();
    for i in 0..unit.rows() {
        let u = unit.row(i);
        let g = out.row_mut(i);
        let proj = linalg::dot(g, u);
        for (gv, &uv) in g.iter_mut().zip(u) {
            *gv = (*gv - proj * uv) / norms[i];
        }
    }
    out
}

/// A scalar loss and its gradient with respect to the first argument.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Matrix,
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    Ok(())
}

/// Mean of `1 − cos(pred_i, target_i)`.
pub fn cosine_loss(pred: &Matrix, target: &Matrix) -> Result<LossGrad> {
    check_same_shape(pred, target)?;
    let n = pred.rows();
    if n == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let (up, norms) = unit_rows(pred)?;
    let (ut, _) = unit_rows(target)?;
    let nf = n as f64;
    let mut value = 0.0;
    let mut grad_unit = Matrix::zeros(n, pred.cols());
    for i in 0..n {
        value += 1.0 - linalg::dot(up.row(i), ut.row(i));
        for (g, &t) in grad_unit.row_mut(i).iter_mut().zip(ut.row(i)) {
            *g = -t / nf;
        }
    }
    Ok(LossGrad {
        value: value / nf,
        grad: unit_rows_backward(&up, &norms, &grad_unit),
    })
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(xs.map(|x| libm::exp(x - m)).sum::<f64>())
}

/// Symmetric InfoNCE over the cosine similarities between `pred` rows and
/// `target` rows, matched pairs on the diagonal.
pub fn contrastive_loss(pred: &Matrix, target: &Matrix, tau: f64) -> Result<LossGrad> {
    check_same_shape(pred, target)?;
    let n = pred.rows();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: n,
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    let (up, norms) = unit_rows(pred)?;
    let (ut, _) = unit_rows(target)?;
    let logits = cross_dots(&up, &ut).scale(1.0 / tau);

    let row_lse: Vec<f64> = (0..n)
        .map(|i| log_sum_exp(logits.row(i).iter().copied()))
        .collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp((0..n).map(|i| logits[(i, j)])))
        .collect();
    let diag_sum: f64 = (0..n).map(|i| logits[(i, i)]).sum();
    let nf = n as f64;
    let row_term = (row_lse.iter().sum::<f64>() - diag_sum) / nf;
    let col_term = (col_lse.iter().sum::<f64>() - diag_sum) / nf;
    let value = 0.5 * (row_term + col_term);

    // ∂/∂S_ij = (P_row + P_col − 2I)_ij / (2nτ)
    let scale = 1.0 / (2.0 * nf * tau);
    let g_s = Matrix::from_fn(n, n, |i, j| {
        let pr = libm::exp(logits[(i, j)] - row_lse[i]);
        let pc = libm::exp(logits[(i, j)] - col_lse[j]);
        let eye = if i == j { 2.0 } else { 0.0 };
        scale * (pr + pc - eye)
    });
    let grad_unit = g_s.matmul(&ut)?;
    Ok(LossGrad {
        value,
        grad: unit_rows_backward(&up, &norms, &grad_unit),
    })
}

/// Cosine plus contrastive reconstruction loss.
pub fn recons_loss(pred: &Matrix, target: &Matrix, tau: f64) -> Result<ReconsLoss> {
    let cos = cosine_loss(pred, target)?;
    let cl = contrastive_loss(pred, target, tau)?;
    let grad = cos.grad.add(&cl.grad)?;
    Ok(ReconsLoss {
        cosine: cos.value,
        contrastive: cl.value,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconsLoss {
    pub cosine: f64,
    pub contrastive: f64,
    pub grad: Matrix,
}

impl ReconsLoss {
    pub fn total(&self) -> f64 {
        self.cosine + self.contrastive
    }
}

/// Off-diagonal row softmax of a similarity matrix at temperature `temp`,
/// returned as log-probabilities (diagonal entries are unused).
fn row_log_softmax_offdiag(s: &Matrix, temp: f64) -> Matrix {
    let n = s.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let lse = log_sum_exp((0..n).filter(|&j| j != i).map(|j| s[(i, j)] / temp));
        for j in (0..n).filter(|&j| j != i) {
            out[(i, j)] = s[(i, j)] / temp - lse;
        }
    }
    out
}

/// Mean row-wise `KL(softmax(S_source) ‖ softmax(S_mapped))` over internal
/// cosine similarities, diagonal excluded. Gradient flows to `mapped` only.
pub fn disti_loss(mapped: &Matrix, source: &Matrix, temp: f64) -> Result<LossGrad> {
    check_same_shape(mapped, source)?;
    let n = mapped.rows();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: n,
        });
    }
    if !(temp > 0.0) {
        return Err(Error::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    let (ua, norms) = unit_rows(mapped)?;
    let (ub, _) = unit_rows(source)?;
    let log_p = row_log_softmax_offdiag(&ua.gram(), temp);
    let log_q = row_log_softmax_offdiag(&ub.gram(), temp);

    let nf = n as f64;
    let mut value = 0.0;
    // ∂/∂A_ij = (p_ij − q_ij) / (nT)
    let mut g_a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let q = libm::exp(log_q[(i, j)]);
            let p = libm::exp(log_p[(i, j)]);
            value += q * (log_q[(i, j)] - log_p[(i, j)]);
            g_a[(i, j)] = (p - q) / (nf * temp);
        }
    }
    // A = Û Ûᵀ is symmetric in its dependence on the rows
    let g_sym = g_a.add(&g_a.transpose())?;
    let grad_unit = g_sym.matmul(&ua)?;
    Ok(LossGrad {
        value: value / nf,
        grad: unit_rows_backward(&ua, &norms, &grad_unit),
    })
}
