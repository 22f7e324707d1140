//! Randomized invariants of the core numerics.

mod support;

use gapbridge_core::emb::{EmbeddingMatrix, HEADER_LEN};
use gapbridge_core::eval::{
    export_residual_histograms, retrieval_accuracy, simmatrix_divergence, HistogramSeries,
};
use gapbridge_core::gapmap::{lmap_loss, BiasBatch, BiasSource};
use gapbridge_core::gauss::{
    cholesky, kl_to_standard, reparameterize, whiten, GaussianParams, JitterPolicy,
};
use gapbridge_core::optim::{adamw_step, AdamState, AdamWConfig};
use gapbridge_core::prompt::{extract_candidates, filter_candidates, NounLexicon};
use gapbridge_core::{Error, Matrix, Rng};
use proptest::prelude::*;
use support::{random_orthogonal, random_params, random_spd};

fn random_embeddings(count: usize, dim: usize, with_ids: bool, rng: &mut Rng) -> EmbeddingMatrix {
    let rows: Vec<f32> = (0..count * dim)
        .map(|_| (rng.normal() * 10f64.powi(rng.below(7) as i32 - 3)) as f32)
        .collect();
    let ids = with_ids.then(|| {
        (0..count)
            .map(|i| "é".repeat(rng.below(3)) + &i.to_string())
            .collect()
    });
    EmbeddingMatrix::new(count, dim, rows, false, ids).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emb1_round_trip_is_bitwise(seed: u64, count in 0usize..12, dim in 1usize..9, ids: bool) {
        let m = random_embeddings(count, dim, ids, &mut Rng::seed_from_u64(seed));
        let bytes = m.encode().unwrap();
        prop_assert_eq!(bytes.len(), m.encoded_len());
        let back = EmbeddingMatrix::decode(&bytes).unwrap();
        let same_bits = back.values().iter().zip(m.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same_bits);
        prop_assert_eq!(back, m);
    }

    #[test]
    fn emb1_rejects_truncation_and_trailing(seed: u64, count in 1usize..6, dim in 1usize..5, ids: bool) {
        let m = random_embeddings(count, dim, ids, &mut Rng::seed_from_u64(seed));
        let bytes = m.encode().unwrap();
        for cut in HEADER_LEN..bytes.len() {
            prop_assert!(EmbeddingMatrix::decode(&bytes[..cut]).is_err());
        }
        let mut long = bytes.clone();
        long.push(0);
        let trailing = matches!(EmbeddingMatrix::decode(&long), Err(Error::Corrupt { .. }));
        prop_assert!(trailing);
    }

    #[test]
    fn l2_normalize_is_idempotent(seed: u64, count in 1usize..20, dim in 1usize..17) {
        let m = random_embeddings(count, dim, false, &mut Rng::seed_from_u64(seed));
        prop_assume!(m.values().chunks(dim).all(|r| r.iter().any(|&v| v != 0.0)));
        let once = m.l2_normalize().unwrap();
        let twice = once.l2_normalize().unwrap();
        prop_assert_eq!(&once, &twice);
        for r in once.values().chunks(dim) {
            let n: f64 = r.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_is_non_negative(seed: u64, d in 1usize..9) {
        let mut rng = Rng::seed_from_u64(seed);
        let mean: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let cov = random_spd(d, &mut rng).scale(rng.uniform() + 0.05);
        prop_assert!(kl_to_standard(&mean, &cov).unwrap() >= -1e-10);
    }

    #[test]
    fn cholesky_reconstructs(seed: u64, d in 1usize..24) {
        let cov = random_spd(d, &mut Rng::seed_from_u64(seed));
        let c = cholesky(&cov, JitterPolicy::Ladder).unwrap();
        prop_assert_eq!(c.jitter, 0.0);
        let resid = c.factor.gram().sub(&cov).unwrap().frobenius_norm() / cov.frobenius_norm();
        prop_assert!(resid < 1e-12, "residual {}", resid);
    }

    #[test]
    fn whiten_inverts_sampling(seed: u64, d in 1usize..8, n in 1usize..20) {
        let mut rng = Rng::seed_from_u64(seed);
        let params = random_params(d, &mut rng);
        let z = rng.normal_matrix(n, d);
        let back = whiten(&reparameterize(&params, &z).unwrap(), &params).unwrap();
        prop_assert!(back.sub(&z).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn lmap_is_shift_equivariant(seed: u64, d in 1usize..6) {
        let mut rng = Rng::seed_from_u64(seed);
        let params = random_params(d, &mut rng);
        let deltas = reparameterize(&params, &rng.normal_matrix(16, d)).unwrap();
        let c: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let shifted_mean: Vec<f64> = params.mean().iter().zip(&c).map(|(m, c)| m + c).collect();
        let shifted = GaussianParams::new(shifted_mean, params.chol().clone(), params.provenance()).unwrap();
        let a = lmap_loss(&BiasBatch::new(deltas.clone(), BiasSource::Pseudo).unwrap(), &params).unwrap();
        let mut moved = deltas.clone();
        moved.add_row_vector(&c);
        let b = lmap_loss(&BiasBatch::new(moved, BiasSource::Pseudo).unwrap(), &shifted).unwrap();
        prop_assert!((a.loss - b.loss).abs() < 1e-9 * (1.0 + a.loss.abs()));
    }

    #[test]
    fn similarity_metrics_are_rotation_invariant(seed: u64, d in 2usize..8, n in 2usize..24) {
        let mut rng = Rng::seed_from_u64(seed);
        let a = rng.normal_matrix(n, d);
        let b = a.add(&rng.normal_matrix(n, d).scale(0.5)).unwrap();
        let q = random_orthogonal(d, &mut rng);
        let (qa, qb) = (a.matmul(&q).unwrap(), b.matmul(&q).unwrap());
        let div = simmatrix_divergence(&a, &b, 1.0).unwrap();
        prop_assert!((div - simmatrix_divergence(&qa, &qb, 1.0).unwrap()).abs() < 1e-10);
        prop_assert!(simmatrix_divergence(&qa, &a, 1.0).unwrap().abs() < 1e-10);
        for k in [1, n.min(3)] {
            prop_assert_eq!(
                retrieval_accuracy(&a, &b, k).unwrap(),
                retrieval_accuracy(&qa, &qb, k).unwrap()
            );
        }
    }

    #[test]
    fn adamw_without_signal_is_identity(seed: u64, len in 1usize..10, steps in 1usize..6) {
        let mut rng = Rng::seed_from_u64(seed);
        let start: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let mut p = start.clone();
        let mut st = AdamState::new(len);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        for _ in 0..steps {
            adamw_step(&mut p, &vec![0.0; len], &mut st, rng.uniform(), &cfg).unwrap();
        }
        prop_assert_eq!(p, start);
    }

    #[test]
    fn self_filtering_empties_candidates(words in proptest::collection::vec(0usize..8, 0..14)) {
        const VOCAB: [&str; 8] = ["a", "man", "dog", "on", "red", "bus", "street", "."];
        let lex = NounLexicon::new(["man", "dog", "red bus", "bus", "street", "bus street"]).unwrap();
        let gt: Vec<&str> = words.iter().map(|&w| VOCAB[w]).collect();
        let gt = gt.join(" ");
        prop_assert!(filter_candidates(&extract_candidates(&gt, &lex), &gt).is_empty());
    }
}

#[test]
fn retrieval_of_reversed_targets_is_near_zero() {
    let mut rng = Rng::seed_from_u64(11);
    let q = rng.normal_matrix(200, 16);
    let rev: Vec<usize> = (0..200).rev().collect();
    let t = q.select_rows(&rev);
    assert!(retrieval_accuracy(&q, &t, 1).unwrap() <= 0.01);
}

#[test]
fn histogram_counts_and_anisotropy() {
    let mut rng = Rng::seed_from_u64(5);
    let n = 20_000;
    let texts = Matrix::zeros(n, 3);
    // dim 1 carries ten times the variance of dim 0
    let images = Matrix::from_fn(n, 3, |_, j| rng.normal() * [1.0, 10f64.sqrt(), 0.3][j]);
    let rows = export_residual_histograms(&images, &texts, &[0, 1], 40).unwrap();
    assert_eq!(rows.len(), 3 * 40);
    let spread = |s: HistogramSeries| {
        let series: Vec<_> = rows.iter().filter(|r| r.series == s).collect();
        let total: u64 = series.iter().map(|r| r.count).sum();
        let mean = series
            .iter()
            .map(|r| r.count as f64 * 0.5 * (r.bin_left + r.bin_right))
            .sum::<f64>()
            / total as f64;
        let var = series
            .iter()
            .map(|r| r.count as f64 * (0.5 * (r.bin_left + r.bin_right) - mean).powi(2))
            .sum::<f64>()
            / total as f64;
        (total, var.sqrt())
    };
    let (n0, s0) = spread(HistogramSeries::Dim(0));
    let (n1, s1) = spread(HistogramSeries::Dim(1));
    let (ng, _) = spread(HistogramSeries::Global);
    assert_eq!((n0, n1, ng), (n as u64, n as u64, 2 * n as u64));
    let ratio = s1 / s0;
    assert!((2.5..=4.5).contains(&ratio), "std ratio {ratio}");
}

#[test]
fn histogram_identical_pairs_single_bin() {
    let t = Rng::seed_from_u64(1).normal_matrix(30, 4);
    let rows = export_residual_histograms(&t, &t, &[0], 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows
        .iter()
        .all(|r| r.count == 30 && r.bin_left <= 0.0 && r.bin_right >= 0.0));
    let rows = export_residual_histograms(&t, &t, &[2], 7).unwrap();
    let zero_bin: Vec<_> = rows.iter().filter(|r| r.count > 0).collect();
    assert_eq!(zero_bin.len(), 2);
    assert!(zero_bin
        .iter()
        .all(|r| r.bin_left <= 0.0 && 0.0 <= r.bin_right));
}
