//! Multi-threaded retrieval and model evaluation. Worker count comes from
//! `GAPBRIDGE_THREADS` when set. Results do not depend on the thread count:
//! each query is scored independently and hits are summed as integers.

use gapbridge_core::eval::{self, retrieval_hit, retrieval_prepare, EvalReport};
use gapbridge_core::revmap::ReverseMapping;
use gapbridge_core::{GaussianParams, Matrix};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const THREADS_VAR: &str = "GAPBRIDGE_THREADS";

/// `None` lets rayon pick.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!(
                "{THREADS_VAR} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

pub fn retrieval_accuracy(
    pool: &rayon::ThreadPool,
    queries: &Matrix,
    targets: &Matrix,
    k: usize,
) -> Result<f64> {
    let (uq, ut) = retrieval_prepare(queries, targets, k)?;
    let hits: usize = pool.install(|| {
        (0..uq.rows())
            .into_par_iter()
            .filter(|&i| retrieval_hit(&uq, &ut, i, k))
            .count()
    });
    Ok(hits as f64 / uq.rows() as f64)
}

/// Same report as [`gapbridge_core::eval::evaluate_model`], with retrieval
/// spread over the pool.
pub fn evaluate_model(
    pool: &rayon::ThreadPool,
    reverse: &ReverseMapping,
    params: &GaussianParams,
    images: &Matrix,
    texts: &Matrix,
    disti_temp: f64,
) -> Result<EvalReport> {
    let recon = reverse.forward(images)?;
    let n = texts.rows();
    Ok(EvalReport {
        retrieval_at_1: retrieval_accuracy(pool, &recon, texts, 1)?,
        retrieval_at_5: retrieval_accuracy(pool, &recon, texts, 5.min(n))?,
        residual_kl: eval::residual_kl(images, texts, params)?,
        simmatrix_div: eval::simmatrix_divergence(&recon, texts, disti_temp)?,
        mean_pair_cosine: eval::mean_pair_cosine(&recon, texts)?,
        notes: format!("{n} pairs; queries = reverse(images), targets = texts"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gapbridge_core::Rng;

    #[test]
    fn matches_sequential() {
        let q = Rng::seed_from_u64(3).normal_matrix(200, 6);
        let t = q
            .add(&Rng::seed_from_u64(4).normal_matrix(200, 6).scale(0.8))
            .unwrap();
        for threads in [1, 3] {
            let pool = build_pool(Some(threads)).unwrap();
            for k in [1, 5] {
                assert_eq!(
                    retrieval_accuracy(&pool, &q, &t, k).unwrap(),
                    eval::retrieval_accuracy(&q, &t, k).unwrap()
                );
            }
        }
    }
}
