//! The mapping module: estimating the image−text bias as a Gaussian, adding
//! that bias to text embeddings, and the whitened-KL objective used to fit
//! it when no paired data exists.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::emb::normalize_rows;
use crate::error::{Error, Result};
use crate::gauss::{
    self, cholesky, estimate_moments, kl_from_factor, Estimator, GaussianParams, JitterPolicy,
    Provenance,
};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MappingModule {
    params: GaussianParams,
    trainable: bool,
    pub renormalize_after_map: bool,
}

impl MappingModule {
    /// A frozen module. Only estimated or planted parameters may be frozen.
    pub fn fixed(params: GaussianParams) -> Result<Self> {
        match params.provenance() {
            Provenance::Setting1 | Provenance::Setting2 | Provenance::SyntheticTruth => Ok(Self {
                params,
                trainable: false,
                renormalize_after_map: false,
            }),
            Provenance::Fitted => Err(Error::InvalidArgument(
                "fitted parameters cannot back a frozen mapping module".into(),
            )),
        }
    }

    pub fn trainable(params: GaussianParams) -> Self {
        Self {
            params,
            trainable: true,
            renormalize_after_map: false,
        }
    }

    pub fn params(&self) -> &GaussianParams {
        &self.params
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_params(&mut self, params: GaussianParams) -> Result<()> {
        if !self.trainable {
            return Err(Error::InvalidArgument("mapping module is frozen".into()));
        }
        self.params = params;
        Ok(())
    }
}

/// Where a batch of bias vectors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasSource {
    /// image − text over aligned pairs
    Paired,
    /// web pairs after the corpus correction
    WebCorrected,
    /// image − text over independently drawn rows
    CrossUnpaired,
    /// mapped − reconstructed text
    Pseudo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasBatch {
    deltas: Matrix,
    source: BiasSource,
}

impl BiasBatch {
    pub fn new(deltas: Matrix, source: BiasSource) -> Result<Self> {
        if deltas.rows() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                found: deltas.rows(),
            });
        }
        Ok(Self { deltas, source })
    }

    pub fn deltas(&self) -> &Matrix {
        &self.deltas
    }

    pub fn source(&self) -> BiasSource {
        self.source
    }
}

fn paired_deltas(images: &Matrix, texts: &Matrix) -> Result<Matrix> {
    if images.shape() != texts.shape() {
        return Err(Error::Pairing(format!(
            "images {:?} vs texts {:?}",
            images.shape(),
            texts.shape()
        )));
    }
    images.sub(texts)
}

/// Mean and covariance of the paired differences `image_i − text_i`.
pub fn estimate_setting1(images: &Matrix, texts: &Matrix) -> Result<GaussianParams> {
    let deltas = paired_deltas(images, texts)?;
    if deltas.rows() <= deltas.cols() && deltas.rows() >= 2 {
        log::warn!(
            "setting 1: {} pairs for dimension {}; covariance is rank deficient",
            deltas.rows(),
            deltas.cols()
        );
    }
    let (mean, cov) = estimate_moments(&deltas, Estimator::Unbiased)?;
    GaussianParams::from_moments(mean, &cov, Provenance::Setting1)
}

/// How the web→corpus correction treats the covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceCorrection {
    /// `Σ = Σ_web + Σ_corpus + Σ_web_text`, treating the correction as the
    /// difference of two independent draws.
    #[default]
    IndependentSum,
    /// Keep `Σ_web`; only shift the mean.
    MeanOnly,
}

/// Web-pair bias corrected for the shift between web captions and the
/// target corpus.
pub fn estimate_setting2(
    web_images: &Matrix,
    web_texts: &Matrix,
    corpus_texts: &Matrix,
    correction: CovarianceCorrection,
) -> Result<GaussianParams> {
    let deltas = paired_deltas(web_images, web_texts)?;
    if corpus_texts.cols() != web_texts.cols() {
        return Err(Error::Pairing(format!(
            "corpus dim {} vs web dim {}",
            corpus_texts.cols(),
            web_texts.cols()
        )));
    }
    let (mu_web, cov_web) = estimate_moments(&deltas, Estimator::Unbiased)?;
    let (mu_corpus, cov_corpus) = estimate_moments(corpus_texts, Estimator::Unbiased)?;
    let (mu_web_text, cov_web_text) = estimate_moments(web_texts, Estimator::Unbiased)?;

    let mean: Vec<f64> = mu_web
        .iter()
        .zip(mu_corpus.iter().zip(&mu_web_text))
        .map(|(w, (c, t))| w - (c - t))
        .collect();
    let cov = match correction {
        CovarianceCorrection::IndependentSum => cov_web.add(&cov_corpus)?.add(&cov_web_text)?,
        CovarianceCorrection::MeanOnly => cov_web,
    };
    GaussianParams::from_moments(mean, &cov, Provenance::Setting2)
}

/// Adds a fresh Gaussian bias draw to every text row.
pub fn map_forward(texts: &Matrix, module: &MappingModule, rng: &mut Rng) -> Result<Matrix> {
    Ok(map_with_latent(texts, module.params(), module.renormalize_after_map, rng)?.0)
}

/// Like [`map_forward`] but also returns the latent standard-normal draws,
/// which the trainer needs to backpropagate into `μ` and `L`.
pub fn map_with_latent(
    texts: &Matrix,
    params: &GaussianParams,
    renormalize: bool,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix)> {
    if texts.cols() != params.dim() {
        return Err(Error::Shape {
            expected: (texts.rows(), params.dim()),
            found: texts.shape(),
        });
    }
    let latent = rng.normal_matrix(texts.rows(), texts.cols());
    let noise = gauss::reparameterize(params, &latent)?;
    let mut out = texts.add(&noise)?;
    if renormalize {
        out = normalize_rows(&out)?;
    }
    Ok((out, latent))
}

/// Unconstrained coordinates of a Gaussian: `L = strict_lower + diag(exp(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableGaussian {
    pub mean: Vec<f64>,
    /// Entries above and on the diagonal are ignored.
    pub lower: Matrix,
    pub log_diag: Vec<f64>,
}

impl TrainableGaussian {
    pub fn from_params(p: &GaussianParams) -> Self {
        let d = p.dim();
        let l = p.chol();
        let mut lower = l.clone();
        let mut log_diag = vec![0.0; d];
        for i in 0..d {
            log_diag[i] = libm::log(l[(i, i)]);
            lower[(i, i)] = 0.0;
        }
        Self {
            mean: p.mean().to_vec(),
            lower,
            log_diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            core::cmp::Ordering::Greater => self.lower[(i, j)],
            core::cmp::Ordering::Equal => libm::exp(self.log_diag[i]),
            core::cmp::Ordering::Less => 0.0,
        })
    }

    pub fn to_params(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.mean.clone(), self.chol(), Provenance::Fitted)
    }

    pub fn min_diag(&self) -> f64 {
        self.log_diag
            .iter()
            .map(|&s| libm::exp(s))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Value and gradients of the whitened-KL mapping loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LmapLoss {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    /// Strictly-lower entries are `∂/∂L_ij`; diagonal entries are
    /// `∂/∂ log L_ii`.
    pub grad_chol: Matrix,
    /// `∂/∂δ_i`, used when the deltas are themselves model outputs.
    pub grad_deltas: Matrix,
}

/// KL between the empirical moments of `L⁻¹(δ − μ)` and `N(0, I)`.
pub fn lmap_loss(batch: &BiasBatch, params: &GaussianParams) -> Result<LmapLoss> {
    let deltas = batch.deltas();
    let n = deltas.rows();
    let d = params.dim();
    let eps = gauss::whiten(deltas, params)?;
    let (m, s) = estimate_moments(&eps, Estimator::Biased)?;
    let c = cholesky(&s, JitterPolicy::Ladder)?;
    let loss = kl_from_factor(&m, &s, &c);

    // ∂loss/∂S = ½(I − S'⁻¹), S' = S + λI
    let s_inv = linalg::spd_inverse_from_cholesky(&c.factor);
    let mut g_s = s_inv.scale(-0.5);
    g_s.add_diag(0.5);

    let nf = n as f64;
    let l = params.chol();
    let mut grad_deltas = Matrix::zeros(n, d);
    let mut grad_mean = vec![0.0; d];
    let mut grad_l = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        let e = eps.row(i);
        for ((c, &x), &mm) in centered.iter_mut().zip(e).zip(&m) {
            *c = x - mm;
        }
        // g_i = (2/n) G_S (ε_i − m) + m/n, then h_i = L⁻ᵀ g_i
        let h = grad_deltas.row_mut(i);
        for k in 0..d {
            h[k] = 2.0 / nf * linalg::dot(g_s.row(k), &centered) + m[k] / nf;
        }
        linalg::solve_lower_transpose_in_place(l, h);
        for k in 0..d {
            grad_mean[k] -= h[k];
            for j in 0..=k {
                grad_l[(k, j)] -= h[k] * e[j];
            }
        }
    }
    for k in 0..d {
        grad_l[(k, k)] *= l[(k, k)];
    }
    Ok(LmapLoss {
        loss,
        grad_mean,
        grad_chol: grad_l,
        grad_deltas,
    })
}
