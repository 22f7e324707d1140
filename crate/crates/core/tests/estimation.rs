//! Estimators against planted synthetic truth.

use gapbridge_core::eval::{param_recovery_error, residual_kl};
use gapbridge_core::gapmap::{estimate_setting1, estimate_setting2, CovarianceCorrection};
use gapbridge_core::gauss::{estimate_moments, Estimator, GaussianParams};
use gapbridge_core::synth::{
    gen_bias_truth, gen_labeled_texts, gen_paired_images, gen_text_embeddings, SynthSpec,
};
use gapbridge_core::{linalg, Matrix, Rng};

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn setting1_closes_the_oracle_loop() {
    for seed in 0..3 {
        let texts = gen_text_embeddings(&SynthSpec::new(16, 10_000, seed)).unwrap();
        let truth = gen_bias_truth(16, 0.05, 0.02, seed + 50).unwrap();
        let images =
            gen_paired_images(&texts, &truth, &mut Rng::seed_from_u64(seed), false).unwrap();
        let est = estimate_setting1(&images, &texts).unwrap();
        let (mean_err, cov_err) = param_recovery_error(&est, &truth).unwrap();
        assert!(
            mean_err < 0.02 * (1.0 + linf(truth.mean())),
            "seed {seed}: {mean_err}"
        );
        assert!(cov_err < 0.05, "seed {seed}: {cov_err}");
    }
}

#[test]
fn moments_converge_with_sample_size() {
    let truth = gen_bias_truth(6, 0.2, 0.3, 1).unwrap();
    let errs: Vec<f64> = [100, 1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let z =
                gapbridge_core::gauss::sample_noise(&truth, n, &mut Rng::seed_from_u64(2)).unwrap();
            let (m, c) = estimate_moments(&z, Estimator::Unbiased).unwrap();
            let est = GaussianParams::from_moments(m, &c, truth.provenance()).unwrap();
            let (a, b) = param_recovery_error(&est, &truth).unwrap();
            a + b
        })
        .collect();
    assert!(errs[3] < errs[0] / 5.0, "{errs:?}");
    assert!(errs[3] < 0.02, "{errs:?}");
}

#[test]
fn fitted_params_explain_residuals_better_than_null() {
    for seed in 0..4 {
        let texts = gen_text_embeddings(&SynthSpec::new(8, 1_000, seed)).unwrap();
        let truth = gen_bias_truth(8, 0.1, 0.05, seed).unwrap();
        let images =
            gen_paired_images(&texts, &truth, &mut Rng::seed_from_u64(seed), false).unwrap();
        let fitted = residual_kl(
            &images,
            &texts,
            &estimate_setting1(&images, &texts).unwrap(),
        )
        .unwrap();
        let null = residual_kl(&images, &texts, &GaussianParams::standard(8)).unwrap();
        assert!(fitted <= null, "seed {seed}: {fitted} > {null}");
        // only the n vs n-1 normalization separates the two covariances
        assert!(fitted.abs() < 1e-4, "{fitted}");
    }
}

#[test]
fn residual_kl_with_truth_and_null() {
    let texts = gen_text_embeddings(&SynthSpec::new(8, 10_000, 3)).unwrap();
    let truth = gen_bias_truth(8, 0.5, 0.05, 3).unwrap();
    let images = gen_paired_images(&texts, &truth, &mut Rng::seed_from_u64(3), false).unwrap();
    assert!(residual_kl(&images, &texts, &truth).unwrap() < 0.05);
    let mu2 = linalg::dot(truth.mean(), truth.mean());
    assert!(
        residual_kl(&images, &texts, &GaussianParams::standard(8)).unwrap() >= 0.5 * mu2 - 0.05
    );
    let same = residual_kl(&texts, &texts, &GaussianParams::standard(8)).unwrap();
    assert!(same.is_finite() && same > 1.0);
}

#[test]
fn setting2_removes_corpus_shift() {
    let d = 8;
    let web_texts = gen_text_embeddings(&SynthSpec::new(d, 10_000, 4)).unwrap();
    let truth = gen_bias_truth(d, 0.05, 0.02, 4).unwrap();
    let web_images =
        gen_paired_images(&web_texts, &truth, &mut Rng::seed_from_u64(4), false).unwrap();
    let c: Vec<f64> = (0..d)
        .map(|i| if i % 2 == 0 { 0.3 } else { -0.1 })
        .collect();
    let mut corpus = gen_text_embeddings(&SynthSpec::new(d, 10_000, 4)).unwrap();
    corpus.add_row_vector(&c);
    let web_mean = estimate_setting1(&web_images, &web_texts).unwrap();
    let est = estimate_setting2(
        &web_images,
        &web_texts,
        &corpus,
        CovarianceCorrection::IndependentSum,
    )
    .unwrap();
    let err = est
        .mean()
        .iter()
        .zip(web_mean.mean())
        .zip(&c)
        .map(|((e, w), c)| (e - (w - c)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-9, "{err}");
    let only_mean = estimate_setting2(
        &web_images,
        &web_texts,
        &corpus,
        CovarianceCorrection::MeanOnly,
    )
    .unwrap();
    assert_eq!(only_mean.mean(), est.mean());
    assert!(only_mean.covariance().trace() < est.covariance().trace());
}

#[test]
fn synthetic_labels_recoverable() {
    let t = gen_labeled_texts(&SynthSpec::new(16, 4096, 9)).unwrap();
    let hits = (0..4096)
        .filter(|&i| {
            let row = t.embeddings.row(i);
            let best = (0..t.centers.rows())
                .max_by(|&a, &b| {
                    linalg::dot(row, t.centers.row(a))
                        .total_cmp(&linalg::dot(row, t.centers.row(b)))
                })
                .unwrap();
            best == t.labels[i]
        })
        .count();
    assert!(hits as f64 >= 0.99 * 4096.0, "{hits}");
}

#[test]
fn truth_factor_reconstructs_covariance() {
    let p = gen_bias_truth(12, 0.05, 0.02, 8).unwrap();
    let cov: Matrix = p.covariance();
    let c =
        gapbridge_core::gauss::cholesky(&cov, gapbridge_core::gauss::JitterPolicy::Ladder).unwrap();
    let resid = c.factor.gram().sub(&cov).unwrap().frobenius_norm() / cov.frobenius_norm();
    assert!(resid < 1e-10);
}
