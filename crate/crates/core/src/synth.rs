//! Synthetic embeddings with a planted, known bias distribution.

use alloc::vec::Vec;

use crate::emb::normalize_rows;
use crate::error::{Error, Result};
use crate::gauss::{self, GaussianParams, Provenance};
use crate::linalg::{self, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub count: usize,
    pub clusters: usize,
    pub cluster_spread: f64,
    pub bias_mean_scale: f64,
    pub bias_cov_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dim: usize, count: usize, seed: u64) -> Self {
        Self {
            dim,
            count,
            clusters: 8,
            cluster_spread: 0.1,
            bias_mean_scale: 0.05,
            bias_cov_scale: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        if self.clusters == 0 || self.clusters > self.count {
            return Err(Error::InvalidArgument(
                "cluster count must be in 1..=count".into(),
            ));
        }
        if !(self.cluster_spread >= 0.0)
            || !(self.bias_mean_scale > 0.0)
            || !(self.bias_cov_scale > 0.0)
        {
            return Err(Error::InvalidArgument("scales must be positive".into()));
        }
        Ok(())
    }
}

/// Clustered unit-norm text embeddings with their ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTexts {
    pub embeddings: Matrix,
    pub labels: Vec<usize>,
    pub centers: Matrix,
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

pub fn gen_labeled_texts(spec: &SynthSpec) -> Result<LabeledTexts> {
    spec.validate()?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| unit_vector(spec.dim, &mut rng))
        .collect();
    let mut labels = Vec::with_capacity(spec.count);
    let mut rows = Matrix::zeros(spec.count, spec.dim);
    for i in 0..spec.count {
        let k = rng.below(spec.clusters);
        labels.push(k);
        for (v, c) in rows.row_mut(i).iter_mut().zip(&centers[k]) {
            *v = c + spec.cluster_spread * rng.normal();
        }
    }
    Ok(LabeledTexts {
        embeddings: normalize_rows(&rows)?,
        labels,
        centers: Matrix::from_rows(&centers),
    })
}

/// Clustered unit-norm "text" embeddings, deterministic per seed.
pub fn gen_text_embeddings(spec: &SynthSpec) -> Result<Matrix> {
    Ok(gen_labeled_texts(spec)?.embeddings)
}

/// Plants `N(μ*, Σ*)` with `‖μ*‖ = mean_scale·√d` and average per-coordinate
/// variance `cov_scale²`.
pub fn gen_bias_truth(
    dim: usize,
    bias_mean_scale: f64,
    bias_cov_scale: f64,
    seed: u64,
) -> Result<GaussianParams> {
    if dim == 0 || !(bias_mean_scale > 0.0) || !(bias_cov_scale > 0.0) {
        return Err(Error::InvalidArgument(
            "dim and scales must be positive".into(),
        ));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let d = dim as f64;
    let r = bias_mean_scale * libm::sqrt(d);
    let mean: Vec<f64> = unit_vector(dim, &mut rng).iter().map(|u| u * r).collect();

    let m = rng.normal_matrix(dim, dim);
    let mut shape = m.transpose().gram().scale(1.0 / d); // MᵀM / d
    shape.add_diag(1.0);
    let norm = shape.trace() / d;
    let cov = shape.scale(bias_cov_scale * bias_cov_scale / norm);
    GaussianParams::from_moments(mean, &cov, Provenance::SyntheticTruth)
}

/// `image_i = text_i + ε_i`, `ε_i ~ truth`.
pub fn gen_paired_images(
    texts: &Matrix,
    truth: &GaussianParams,
    rng: &mut Rng,
    renormalize: bool,
) -> Result<Matrix> {
    if texts.cols() != truth.dim() {
        return Err(Error::Shape {
            expected: (texts.rows(), truth.dim()),
            found: texts.shape(),
        });
    }
    if texts.rows() == 0 {
        return Ok(texts.clone());
    }
    let noise = gauss::sample_noise(truth, texts.rows(), rng)?;
    let images = texts.add(&noise)?;
    if renormalize {
        normalize_rows(&images)
    } else {
        Ok(images)
    }
}
