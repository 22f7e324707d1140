//! Multivariate Gaussian primitives: moments, jittered Cholesky,
//! reparameterized sampling, whitening and KL to the standard normal.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Divides by `n - 1`.
    Unbiased,
    /// Divides by `n`.
    Biased,
}

/// Sample mean and covariance of the rows of `rows`.
pub fn estimate_moments(rows: &Matrix, estimator: Estimator) -> Result<(Vec<f64>, Matrix)> {
    let n = rows.rows();
    let needed = match estimator {
        Estimator::Unbiased => 2,
        Estimator::Biased => 1,
    };
    if n < needed {
        return Err(Error::InsufficientData { needed, found: n });
    }
    let d = rows.cols();
    let mean = rows.column_means();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in rows.row_iter() {
        for ((c, &x), &m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let row = &mut cov.as_mut_slice()[i * d..i * d + i + 1];
            for (v, &cj) in row.iter_mut().zip(&centered[..=i]) {
                *v += ci * cj;
            }
        }
    }
    let denom = match estimator {
        Estimator::Unbiased => (n - 1) as f64,
        Estimator::Biased => n as f64,
    };
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
    cov.symmetrize_from_lower();
    Ok((mean, cov))
}

/// Multipliers of `max(1, tr(cov)/d)` tried in order until factorization
/// succeeds.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterPolicy {
    /// Walk [`JITTER_LADDER`].
    #[default]
    Ladder,
    /// Fail on the first non-positive pivot.
    None,
}

/// A Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    pub factor: Matrix,
    pub jitter: f64,
}

impl Cholesky {
    /// `ln det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.factor.rows())
            .map(|i| libm::log(self.factor[(i, i)]))
            .sum::<f64>()
    }
}

/// Factors `cov + λI = L Lᵀ` with the smallest λ from the ladder that works.
pub fn cholesky(cov: &Matrix, policy: JitterPolicy) -> Result<Cholesky> {
    let (r, c) = cov.shape();
    if r != c {
        return Err(Error::Shape {
            expected: (r, r),
            found: (r, c),
        });
    }
    if !cov.is_finite() {
        return Err(Error::InvalidArgument(
            "covariance has non-finite entries".into(),
        ));
    }
    let scale = cov.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..r {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::NotSymmetric { row: i, col: j });
            }
        }
    }
    let d = r.max(1) as f64;
    let base = (cov.trace() / d).max(1.0);
    let ladder: &[f64] = match policy {
        JitterPolicy::Ladder => &JITTER_LADDER,
        JitterPolicy::None => &JITTER_LADDER[..1],
    };
    let mut last_failure = (0, 0.0);
    for &mult in ladder {
        let lambda = mult * base;
        match factor_lower(cov, lambda) {
            Ok(factor) => {
                if lambda > 0.0 {
                    log::debug!("cholesky: applied jitter {lambda:e}");
                }
                return Ok(Cholesky {
                    factor,
                    jitter: lambda,
                });
            }
            Err(fail) => last_failure = fail,
        }
    }
    Err(Error::NotPositiveDefinite {
        pivot: last_failure.0,
        value: last_failure.1,
    })
}

/// Plain Cholesky–Banachiewicz on the lower triangle of `a + λI`.
fn factor_lower(a: &Matrix, lambda: f64) -> core::result::Result<Matrix, (usize, f64)> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = linalg::dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let pivot = a[(i, i)] + lambda - s;
                if !(pivot > 0.0) || !pivot.is_finite() {
                    return Err((i, pivot));
                }
                l[(i, i)] = libm::sqrt(pivot);
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Setting1,
    Setting2,
    Fitted,
    SyntheticTruth,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Setting1 => "setting1",
            Provenance::Setting2 => "setting2",
            Provenance::Fitted => "fitted",
            Provenance::SyntheticTruth => "synthetic-truth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "setting1" => Provenance::Setting1,
            "setting2" => Provenance::Setting2,
            "fitted" => Provenance::Fitted,
            "synthetic-truth" => Provenance::SyntheticTruth,
            _ => return None,
        })
    }
}

/// `N(μ, L Lᵀ)` with `L` lower triangular and a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    chol: Matrix,
    provenance: Provenance,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, chol: Matrix, provenance: Provenance) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if chol.shape() != (d, d) {
            return Err(Error::Shape {
                expected: (d, d),
                found: chol.shape(),
            });
        }
        if !chol.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite Gaussian parameters".into(),
            ));
        }
        for i in 0..d {
            if !(chol[(i, i)] > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cholesky diagonal {i} is {} (must be positive)",
                    chol[(i, i)]
                )));
            }
            for j in (i + 1)..d {
                if chol[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "cholesky factor has upper entry at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            mean,
            chol,
            provenance,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            chol: Matrix::identity(dim),
            provenance: Provenance::Fitted,
        }
    }

    /// Factors `cov` with the jitter ladder.
    pub fn from_moments(mean: Vec<f64>, cov: &Matrix, provenance: Provenance) -> Result<Self> {
        let c = cholesky(cov, JitterPolicy::Ladder)?;
        Self::new(mean, c.factor, provenance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// `Σ = L Lᵀ`.
    pub fn covariance(&self) -> Matrix {
        self.chol.gram()
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::Shape {
                expected: (0, self.dim()),
                found: (0, cols),
            });
        }
        Ok(())
    }
}

/// `row_i = L z_i + μ` for the given latent draws `z`.
pub fn reparameterize(params: &GaussianParams, latent: &Matrix) -> Result<Matrix> {
    params.check_dim(latent.cols())?;
    let mut out = Matrix::zeros(latent.rows(), latent.cols());
    for i in 0..latent.rows() {
        let row = out.row_mut(i);
        linalg::lower_mul_vec(&params.chol, latent.row(i), row);
        for (o, m) in row.iter_mut().zip(&params.mean) {
            *o += m;
        }
    }
    Ok(out)
}

/// Draws `n` rows from `N(μ, L Lᵀ)`.
pub fn sample_noise(params: &GaussianParams, n: usize, rng: &mut Rng) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let z = rng.normal_matrix(n, params.dim());
    reparameterize(params, &z)
}

/// Solves `L ε_i = δ_i − μ` row by row.
pub fn whiten(deltas: &Matrix, params: &GaussianParams) -> Result<Matrix> {
    params.check_dim(deltas.cols())?;
    let mut out = deltas.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (v, m) in row.iter_mut().zip(&params.mean) {
            *v -= m;
        }
        linalg::solve_lower_in_place(&params.chol, row);
    }
    Ok(out)
}

/// Closed-form `KL(N(mean, cov) ‖ N(0, I))`.
///
/// `cov` goes through the jitter ladder; when jitter is applied the KL of the
/// jittered distribution is returned, so the result stays non-negative.
pub fn kl_to_standard(mean: &[f64], cov: &Matrix) -> Result<f64> {
    let c = cholesky(cov, JitterPolicy::Ladder)?;
    Ok(kl_from_factor(mean, cov, &c))
}

pub(crate) fn kl_from_factor(mean: &[f64], cov: &Matrix, c: &Cholesky) -> f64 {
    let d = mean.len() as f64;
    let tr = cov.trace() + c.jitter * d;
    let mm = linalg::dot(mean, mean);
    0.5 * (tr + mm - d - c.log_det())
}
