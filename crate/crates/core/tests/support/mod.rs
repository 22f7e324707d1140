//! Test-only oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use gapbridge_core::Matrix;

/// Central finite difference of `f` with respect to every entry of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error, with an absolute floor so that
/// coordinates whose true gradient is ~0 compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn matrix_like(m: &Matrix, data: &[f64]) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), data.to_vec()).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

use gapbridge_core::gapmap::{lmap_loss, BiasBatch, BiasSource, TrainableGaussian};
use gapbridge_core::gauss::{GaussianParams, Provenance};
use gapbridge_core::revmap::{contrastive_loss, cosine_loss, disti_loss, ReverseMapping};
use gapbridge_core::Rng;

/// Random `N(μ, LLᵀ)` with a well-conditioned factor.
pub fn random_params(d: usize, rng: &mut Rng) -> GaussianParams {
    let mean: Vec<f64> = (0..d).map(|_| 0.5 * rng.normal()).collect();
    let chol = Matrix::from_fn(d, d, |i, j| {
        if i == j {
            (0.3 * rng.normal()).exp()
        } else if j < i {
            0.3 * rng.normal()
        } else {
            0.0
        }
    });
    GaussianParams::new(mean, chol, Provenance::Fitted).unwrap()
}

fn pack(t: &TrainableGaussian) -> Vec<f64> {
    let d = t.dim();
    let mut v = t.mean.clone();
    for i in 0..d {
        for j in 0..i {
            v.push(t.lower[(i, j)]);
        }
    }
    v.extend_from_slice(&t.log_diag);
    v
}

fn unpack(d: usize, v: &[f64]) -> TrainableGaussian {
    let mut lower = Matrix::zeros(d, d);
    let mut k = d;
    for i in 0..d {
        for j in 0..i {
            lower[(i, j)] = v[k];
            k += 1;
        }
    }
    TrainableGaussian {
        mean: v[..d].to_vec(),
        lower,
        log_diag: v[k..k + d].to_vec(),
    }
}

/// Max relative error of the mapping-loss gradients (parameters and deltas).
pub fn check_lmap(seed: u64, d: usize, n: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let params = random_params(d, &mut rng);
    let source = random_params(d, &mut rng);
    let deltas = gapbridge_core::gauss::sample_noise(&source, n, &mut rng).unwrap();
    let batch = BiasBatch::new(deltas.clone(), BiasSource::CrossUnpaired).unwrap();
    let out = lmap_loss(&batch, &params).unwrap();

    let t = TrainableGaussian::from_params(&params);
    let x0 = pack(&t);
    let numeric = central_diff(&x0, FD_STEP, |x| {
        let p = unpack(d, x).to_params().unwrap();
        lmap_loss(&batch, &p).unwrap().loss
    });
    let mut analytic = out.grad_mean.clone();
    for i in 0..d {
        for j in 0..i {
            analytic.push(out.grad_chol[(i, j)]);
        }
    }
    analytic.extend((0..d).map(|i| out.grad_chol[(i, i)]));
    let e_params = max_rel_err(&analytic, &numeric);

    let numeric_d = central_diff(deltas.as_slice(), FD_STEP, |x| {
        let b = BiasBatch::new(matrix_like(&deltas, x), BiasSource::CrossUnpaired).unwrap();
        lmap_loss(&b, &params).unwrap().loss
    });
    let e_deltas = max_rel_err(out.grad_deltas.as_slice(), &numeric_d);
    e_params.max(e_deltas)
}

type PairLoss = fn(&Matrix, &Matrix) -> (f64, Matrix);

fn check_pair_loss(seed: u64, n: usize, d: usize, loss: PairLoss) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let pred = rng.normal_matrix(n, d);
    let target = rng.normal_matrix(n, d);
    let (_, grad) = loss(&pred, &target);
    let numeric = central_diff(pred.as_slice(), FD_STEP, |x| {
        loss(&matrix_like(&pred, x), &target).0
    });
    max_rel_err(grad.as_slice(), &numeric)
}

pub fn check_cosine(seed: u64, n: usize, d: usize) -> f64 {
    check_pair_loss(seed, n, d, |p, t| {
        let l = cosine_loss(p, t).unwrap();
        (l.value, l.grad)
    })
}

pub fn check_contrastive(seed: u64, n: usize, d: usize) -> f64 {
    check_pair_loss(seed, n, d, |p, t| {
        let l = contrastive_loss(p, t, 0.1).unwrap();
        (l.value, l.grad)
    })
}

pub fn check_disti(seed: u64, n: usize, d: usize) -> f64 {
    check_pair_loss(seed, n, d, |p, t| {
        let l = disti_loss(p, t, 1.0).unwrap();
        (l.value, l.grad)
    })
}

/// Random network with weights large enough to exercise the nonlinearity.
pub fn random_revmap(d: usize, expansion: usize, rng: &mut Rng) -> ReverseMapping {
    let h = d * expansion;
    ReverseMapping::from_parts(
        d,
        expansion,
        rng.normal_matrix(h, d).scale(0.7),
        (0..h).map(|_| 0.3 * rng.normal()).collect(),
        rng.normal_matrix(d, h).scale(0.7),
        (0..d).map(|_| 0.3 * rng.normal()).collect(),
    )
    .unwrap()
}

/// Max relative error of reverse-mapping weight and input gradients for the
/// scalar `Σ upstream ⊙ forward(x)`.
pub fn check_revmap(seed: u64, n: usize, d: usize) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let net = random_revmap(d, 2, &mut rng);
    let x = rng.normal_matrix(n, d);
    let up = rng.normal_matrix(n, d);
    let (g, gx) = net.backward(&x, &up).unwrap();
    let objective = |net: &ReverseMapping, x: &Matrix| -> f64 {
        let y = net.forward(x).unwrap();
        y.as_slice()
            .iter()
            .zip(up.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut worst = max_rel_err(
        gx.as_slice(),
        &central_diff(x.as_slice(), FD_STEP, |v| {
            objective(&net, &matrix_like(&x, v))
        }),
    );
    let w1 = central_diff(net.w1.as_slice(), FD_STEP, |v| {
        let mut m = net.clone();
        m.w1 = matrix_like(&net.w1, v);
        objective(&m, &x)
    });
    worst = worst.max(max_rel_err(g.w1.as_slice(), &w1));
    let b1 = central_diff(&net.b1, FD_STEP, |v| {
        let mut m = net.clone();
        m.b1 = v.to_vec();
        objective(&m, &x)
    });
    worst = worst.max(max_rel_err(&g.b1, &b1));
    let w2 = central_diff(net.w2.as_slice(), FD_STEP, |v| {
        let mut m = net.clone();
        m.w2 = matrix_like(&net.w2, v);
        objective(&m, &x)
    });
    worst = worst.max(max_rel_err(g.w2.as_slice(), &w2));
    let b2 = central_diff(&net.b2, FD_STEP, |v| {
        let mut m = net.clone();
        m.b2 = v.to_vec();
        objective(&m, &x)
    });
    worst.max(max_rel_err(&g.b2, &b2))
}

/// `MᵀM + I` with standard-normal `M`.
pub fn random_spd(d: usize, rng: &mut Rng) -> Matrix {
    let m = rng.normal_matrix(d, d);
    let mut s = m.transpose().matmul(&m).unwrap();
    s.add_diag(1.0);
    s
}

/// Orthogonal matrix from Gram–Schmidt on Gaussian columns.
pub fn random_orthogonal(d: usize, rng: &mut Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_fn(d, d, |i, j| cols[j][i])
}
