//! Training loops on synthetic data.

use gapbridge_core::eval::mean_pair_cosine;
use gapbridge_core::gapmap::{map_forward, MappingModule};
use gapbridge_core::gauss::Provenance;
use gapbridge_core::synth::{gen_bias_truth, gen_paired_images, gen_text_embeddings, SynthSpec};
use gapbridge_core::trainer::{
    train_fixed_mapping, train_setting3, train_setting4, window_mean, TrainConfig,
};
use gapbridge_core::{Error, Matrix, Rng};

fn split(all: &Matrix, at: usize) -> (Matrix, Matrix) {
    let head: Vec<usize> = (0..at).collect();
    let tail: Vec<usize> = (at..all.rows()).collect();
    (all.select_rows(&head), all.select_rows(&tail))
}

#[test]
fn fixed_mapping_reconstructs_held_out_texts() {
    let texts = gen_text_embeddings(&SynthSpec::new(16, 4096 + 512, 1)).unwrap();
    let (corpus, held) = split(&texts, 4096);
    let truth = gen_bias_truth(16, 0.05, 0.02, 2).unwrap();
    let cfg = TrainConfig {
        total_steps: 2000,
        seed: 1,
        ..Default::default()
    };
    let m = train_fixed_mapping(&corpus, &truth, &cfg).unwrap();
    assert_eq!(m.history.len(), 2000);

    let mapped = map_forward(
        &held,
        &MappingModule::fixed(truth).unwrap(),
        &mut Rng::seed_from_u64(3),
    )
    .unwrap();
    let cos = mean_pair_cosine(&m.reverse.forward(&mapped).unwrap(), &held).unwrap();
    assert!(cos > 0.9, "held-out cosine {cos}");

    let total: Vec<f64> = m
        .history
        .iter()
        .map(|h| h.loss_cosine.unwrap() + h.loss_cl.unwrap())
        .collect();
    assert!(window_mean(&total, total.len() - 50, 50) < window_mean(&total, 10, 50));
}

#[test]
fn setting3_recovers_planted_mean() {
    let texts = gen_text_embeddings(&SynthSpec::new(8, 4096 + 512, 5)).unwrap();
    let (corpus, other) = split(&texts, 4096);
    let truth = gen_bias_truth(8, 0.05, 0.02, 6).unwrap();
    let images = gen_paired_images(&other, &truth, &mut Rng::seed_from_u64(7), false).unwrap();
    let m = train_setting3(
        &corpus,
        &images,
        &TrainConfig {
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let err = m
        .mapping
        .params()
        .mean()
        .iter()
        .zip(truth.mean())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = 1.0 + truth.mean().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(err < 0.1 * scale, "mean error {err}");
    assert_eq!(m.mapping.params().provenance(), Provenance::Fitted);
}

#[test]
fn setting4_keeps_noise_alive() {
    let texts = gen_text_embeddings(&SynthSpec::new(8, 1024, 2)).unwrap();
    let cfg = TrainConfig {
        total_steps: 400,
        warmup_steps: 100,
        seed: 2,
        ..Default::default()
    };
    let m = train_setting4(&texts, &cfg).unwrap();
    for h in &m.history {
        assert!(h.min_chol_diag.unwrap() > 1e-4);
        assert!(h.loss_map.unwrap().is_finite() && h.loss_disti.unwrap().is_finite());
    }
}

#[test]
fn identical_runs_are_bitwise_equal() {
    let texts = gen_text_embeddings(&SynthSpec::new(6, 300, 3)).unwrap();
    let cfg = TrainConfig {
        total_steps: 60,
        warmup_steps: 10,
        seed: 8,
        ..Default::default()
    };
    assert_eq!(
        train_setting4(&texts, &cfg).unwrap(),
        train_setting4(&texts, &cfg).unwrap()
    );
    let other = TrainConfig { seed: 9, ..cfg };
    assert_ne!(
        train_setting4(&texts, &cfg).unwrap(),
        train_setting4(&texts, &other).unwrap()
    );
}

#[test]
fn divergent_run_aborts_naming_the_step() {
    let texts = gen_text_embeddings(&SynthSpec::new(4, 64, 0)).unwrap();
    let cfg = TrainConfig {
        total_steps: 20,
        warmup_steps: 1,
        peak_lr: 1e200,
        ..Default::default()
    };
    match train_setting4(&texts, &cfg) {
        Err(Error::NonFiniteLoss { step, .. } | Error::Diverged { step, .. }) => {
            assert!((1..=20).contains(&step), "{step}")
        }
        other => panic!("expected a divergence error, got {other:?}"),
    }
}
