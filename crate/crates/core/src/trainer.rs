//! Training loops for the mapping and reverse-mapping modules.
//!
//! Three regimes share one step routine:
//!
//! * fixed mapping (parameters estimated from paired data): only the reverse
//!   mapping learns, from the reconstruction loss;
//! * unpaired images: the mapping's `μ` and `L` additionally learn from the
//!   whitened-KL loss over image − text differences drawn independently;
//! * text only: the whitened-KL loss is applied to the pseudo bias
//!   `mapped − reconstructed`, and the relational distillation loss keeps the
//!   mapped set's similarity structure close to the text corpus.
//!
//! Gradients flow through the reparameterized noise `L z + μ`, so every loss
//! that sees a mapped embedding also trains the mapping parameters. The
//! text targets of the reconstruction and distillation losses are constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gapmap::{
    lmap_loss, map_with_latent, BiasBatch, BiasSource, MappingModule, TrainableGaussian,
};
use crate::gauss::GaussianParams;
use crate::linalg::Matrix;
use crate::optim::{adamw_step, AdamState, AdamWConfig, WarmupLinear};
use crate::revmap::{disti_loss, recons_loss, ReverseMapping};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub map: f64,
    pub recons: f64,
    pub disti: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            map: 1.0,
            recons: 1.0,
            disti: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Decoupled decay on the reverse mapping's weight matrices.
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub tau: f64,
    pub disti_temp: f64,
    pub loss_weights: LossWeights,
    /// Hidden width multiplier of the reverse mapping.
    pub expansion: usize,
    /// Initial `L = init_noise_scale · I` (with `μ = 0`) for trainable mappings.
    /// The default keeps the starting noise small next to unit-norm rows.
    pub init_noise_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            peak_lr: 5e-4,
            warmup_steps: 1250,
            total_steps: 3000,
            weight_decay: 0.1,
            betas: (0.9, 0.999),
            eps: 1e-8,
            tau: 0.1,
            disti_temp: 1.0,
            loss_weights: LossWeights::default(),
            expansion: 2,
            init_noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.warmup_steps > self.total_steps {
            return bad("warmup_steps must not exceed total_steps");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.peak_lr > 0.0)
            || !(self.tau > 0.0)
            || !(self.disti_temp > 0.0)
            || !(self.eps > 0.0)
        {
            return bad("learning rate, temperatures and eps must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad("betas must lie in [0, 1)");
        }
        let w = self.loss_weights;
        if !(w.map >= 0.0 && w.recons >= 0.0 && w.disti >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if self.expansion == 0 || !(self.init_noise_scale > 0.0) {
            return bad("expansion and init_noise_scale must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> WarmupLinear {
        WarmupLinear {
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.total_steps,
        }
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        self.schedule().lr_at(step)
    }

    fn adamw(&self, weight_decay: f64) -> AdamWConfig {
        AdamWConfig {
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
            weight_decay,
        }
    }
}

/// Loss values recorded at one optimizer step. Terms that the regime does
/// not use are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub step: usize,
    pub loss_map: Option<f64>,
    pub loss_cosine: Option<f64>,
    pub loss_cl: Option<f64>,
    pub loss_disti: Option<f64>,
    pub lr: f64,
    /// Smallest diagonal entry of `L` after the step (trainable mappings).
    pub min_chol_diag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub mapping: MappingModule,
    pub reverse: ReverseMapping,
    pub history: Vec<HistoryEntry>,
}

/// Shuffled passes over `0..n`, dropping the last partial batch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl EpochSampler {
    fn new(n: usize, batch: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: usize::MAX,
            batch: batch.min(n),
        }
    }

    fn next(&mut self, rng: &mut Rng) -> &[usize] {
        if self.pos == usize::MAX || self.pos + self.batch > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        out
    }
}

struct RevOptimizer {
    w1: AdamState,
    b1: AdamState,
    w2: AdamState,
    b2: AdamState,
}

impl RevOptimizer {
    fn new(r: &ReverseMapping) -> Self {
        Self {
            w1: AdamState::new(r.w1.as_slice().len()),
            b1: AdamState::new(r.b1.len()),
            w2: AdamState::new(r.w2.as_slice().len()),
            b2: AdamState::new(r.b2.len()),
        }
    }
}

struct MapOptimizer {
    mean: AdamState,
    lower: AdamState,
    log_diag: AdamState,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Regime {
    Fixed,
    UnpairedImages,
    TextOnly,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    regime: Regime,
    rng: Rng,
    reverse: ReverseMapping,
    rev_opt: RevOptimizer,
    mapping: TrainableGaussian,
    map_opt: Option<MapOptimizer>,
    fixed_params: Option<GaussianParams>,
}

/// Gradient of a loss with respect to the trainable mapping coordinates.
struct MapGrads {
    mean: Vec<f64>,
    lower: Matrix,
    log_diag: Vec<f64>,
}

impl MapGrads {
    fn zeros(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            lower: Matrix::zeros(d, d),
            log_diag: vec![0.0; d],
        }
    }

    /// Adds `w ·` the output of [`lmap_loss`], whose diagonal entries are
    /// already with respect to `log L_ii`.
    fn add_lmap(&mut self, w: f64, grad_mean: &[f64], grad_chol: &Matrix) {
        let d = self.mean.len();
        for i in 0..d {
            self.mean[i] += w * grad_mean[i];
            self.log_diag[i] += w * grad_chol[(i, i)];
            for j in 0..i {
                self.lower[(i, j)] += w * grad_chol[(i, j)];
            }
        }
    }

    /// Chain rule through `x_i = t_i + L z_i + μ`.
    fn add_through_noise(&mut self, grad_x: &Matrix, latent: &Matrix, chol: &Matrix) {
        let d = self.mean.len();
        for r in 0..grad_x.rows() {
            let g = grad_x.row(r);
            let z = latent.row(r);
            for i in 0..d {
                self.mean[i] += g[i];
                for j in 0..i {
                    self.lower[(i, j)] += g[i] * z[j];
                }
                self.log_diag[i] += g[i] * z[i] * chol[(i, i)];
            }
        }
    }
}

struct StepLosses {
    map: Option<f64>,
    cosine: f64,
    cl: f64,
    disti: Option<f64>,
}

impl<'a> Trainer<'a> {
    fn new(
        cfg: &'a TrainConfig,
        dim: usize,
        regime: Regime,
        fixed: Option<GaussianParams>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let reverse = ReverseMapping::init(dim, cfg.expansion, rng.next_u64())?;
        let rev_opt = RevOptimizer::new(&reverse);
        let init = match &fixed {
            Some(p) => p.clone(),
            None => GaussianParams::new(
                vec![0.0; dim],
                Matrix::identity(dim).scale(cfg.init_noise_scale),
                crate::gauss::Provenance::Fitted,
            )?,
        };
        let mapping = TrainableGaussian::from_params(&init);
        let map_opt = fixed.is_none().then(|| MapOptimizer {
            mean: AdamState::new(dim),
            lower: AdamState::new(dim * dim),
            log_diag: AdamState::new(dim),
        });
        Ok(Self {
            cfg,
            regime,
            rng,
            reverse,
            rev_opt,
            mapping,
            map_opt,
            fixed_params: fixed,
        })
    }

    fn diverged(&self) -> Option<&'static str> {
        let r = &self.reverse;
        let weights_ok =
            r.w1.is_finite() && r.w2.is_finite() && r.b1.iter().chain(&r.b2).all(|v| v.is_finite());
        if !weights_ok {
            return Some("reverse-mapping weights");
        }
        if self.map_opt.is_some() && self.mapping.to_params().is_err() {
            return Some("bias parameters");
        }
        None
    }

    fn current_params(&self) -> Result<GaussianParams> {
        match &self.fixed_params {
            Some(p) => Ok(p.clone()),
            None => self.mapping.to_params(),
        }
    }

    fn step(&mut self, texts: &Matrix, images: Option<&Matrix>, lr: f64) -> Result<StepLosses> {
        let w = self.cfg.loss_weights;
        let params = self.current_params()?;
        let d = params.dim();
        let (mapped, latent) = map_with_latent(texts, &params, false, &mut self.rng)?;
        let recon = self.reverse.forward(&mapped)?;

        let rec = recons_loss(&recon, texts, self.cfg.tau)?;
        let mut grad_recon = rec.grad.scale(w.recons);
        let mut grad_mapped = Matrix::zeros(mapped.rows(), d);
        let mut map_grads = MapGrads::zeros(d);
        let mut loss_map = None;
        let mut loss_disti = None;

        match self.regime {
            Regime::Fixed => {}
            Regime::UnpairedImages => {
                let images = images.expect("image batch");
                let batch = BiasBatch::new(images.sub(texts)?, BiasSource::CrossUnpaired)?;
                let l = lmap_loss(&batch, &params)?;
                map_grads.add_lmap(w.map, &l.grad_mean, &l.grad_chol);
                loss_map = Some(l.loss);
            }
            Regime::TextOnly => {
                let batch = BiasBatch::new(mapped.sub(&recon)?, BiasSource::Pseudo)?;
                let l = lmap_loss(&batch, &params)?;
                map_grads.add_lmap(w.map, &l.grad_mean, &l.grad_chol);
                let gd = l.grad_deltas.scale(w.map);
                grad_mapped = grad_mapped.add(&gd)?;
                grad_recon = grad_recon.sub(&gd)?;
                loss_map = Some(l.loss);

                let dl = disti_loss(&mapped, texts, self.cfg.disti_temp)?;
                grad_mapped = grad_mapped.add(&dl.grad.scale(w.disti))?;
                loss_disti = Some(dl.value);
            }
        }

        let (rev_grads, grad_from_recon) = self.reverse.backward(&mapped, &grad_recon)?;
        grad_mapped = grad_mapped.add(&grad_from_recon)?;

        let decay = self.cfg.adamw(self.cfg.weight_decay);
        let no_decay = self.cfg.adamw(0.0);
        let r = &mut self.reverse;
        let o = &mut self.rev_opt;
        adamw_step(
            r.w1.as_mut_slice(),
            rev_grads.w1.as_slice(),
            &mut o.w1,
            lr,
            &decay,
        )?;
        adamw_step(&mut r.b1, &rev_grads.b1, &mut o.b1, lr, &no_decay)?;
        adamw_step(
            r.w2.as_mut_slice(),
            rev_grads.w2.as_slice(),
            &mut o.w2,
            lr,
            &decay,
        )?;
        adamw_step(&mut r.b2, &rev_grads.b2, &mut o.b2, lr, &no_decay)?;

        if let Some(mo) = &mut self.map_opt {
            map_grads.add_through_noise(&grad_mapped, &latent, params.chol());
            let m = &mut self.mapping;
            adamw_step(&mut m.mean, &map_grads.mean, &mut mo.mean, lr, &no_decay)?;
            // entries on/above the diagonal of `lower` have zero gradient
            adamw_step(
                m.lower.as_mut_slice(),
                map_grads.lower.as_slice(),
                &mut mo.lower,
                lr,
                &no_decay,
            )?;
            adamw_step(
                &mut m.log_diag,
                &map_grads.log_diag,
                &mut mo.log_diag,
                lr,
                &no_decay,
            )?;
        }

        Ok(StepLosses {
            map: loss_map,
            cosine: rec.cosine,
            cl: rec.contrastive,
            disti: loss_disti,
        })
    }

    fn run(mut self, corpus: &Matrix, images: Option<&Matrix>) -> Result<FittedModel> {
        let n = corpus.rows();
        let mut sampler = EpochSampler::new(n, self.cfg.batch_size);
        let batch = self.cfg.batch_size.min(n);
        let mut history = Vec::with_capacity(self.cfg.total_steps);
        let schedule = self.cfg.schedule();
        for step in 1..=self.cfg.total_steps {
            let lr = schedule.lr_at(step)?;
            let (texts, image_batch) = match images {
                // unpaired regime: both sides drawn independently with replacement
                Some(pool) => {
                    let ti: Vec<usize> = (0..batch).map(|_| self.rng.below(n)).collect();
                    let ii: Vec<usize> = (0..batch).map(|_| self.rng.below(pool.rows())).collect();
                    (corpus.select_rows(&ti), Some(pool.select_rows(&ii)))
                }
                None => {
                    let idx = sampler.next(&mut self.rng).to_vec();
                    (corpus.select_rows(&idx), None)
                }
            };
            let losses = self.step(&texts, image_batch.as_ref(), lr)?;
            let terms = [
                ("map", losses.map),
                ("cosine", Some(losses.cosine)),
                ("contrastive", Some(losses.cl)),
                ("distillation", losses.disti),
            ];
            for (term, v) in terms {
                if matches!(v, Some(x) if !x.is_finite()) {
                    return Err(Error::NonFiniteLoss { step, term });
                }
            }
            if let Some(what) = self.diverged() {
                return Err(Error::Diverged { step, what });
            }
            history.push(HistoryEntry {
                step,
                loss_map: losses.map,
                loss_cosine: Some(losses.cosine),
                loss_cl: Some(losses.cl),
                loss_disti: losses.disti,
                lr,
                min_chol_diag: self.map_opt.as_ref().map(|_| self.mapping.min_diag()),
            });
        }
        let mapping = match self.fixed_params {
            Some(p) => MappingModule::fixed(p)?,
            None => MappingModule::trainable(self.mapping.to_params()?),
        };
        Ok(FittedModel {
            mapping,
            reverse: self.reverse,
            history,
        })
    }
}

fn check_corpus(corpus: &Matrix) -> Result<()> {
    if corpus.rows() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: corpus.rows(),
        });
    }
    Ok(())
}

/// Trains only the reverse mapping, under a frozen estimated bias.
pub fn train_fixed_mapping(
    corpus: &Matrix,
    params: &GaussianParams,
    cfg: &TrainConfig,
) -> Result<FittedModel> {
    check_corpus(corpus)?;
    MappingModule::fixed(params.clone())?;
    if params.dim() != corpus.cols() {
        return Err(Error::Shape {
            expected: (corpus.rows(), params.dim()),
            found: corpus.shape(),
        });
    }
    Trainer::new(cfg, corpus.cols(), Regime::Fixed, Some(params.clone()))?.run(corpus, None)
}

/// Fits `μ`, `L` and the reverse mapping from a text corpus and a pool of
/// images unrelated to it.
pub fn train_setting3(corpus: &Matrix, images: &Matrix, cfg: &TrainConfig) -> Result<FittedModel> {
    check_corpus(corpus)?;
    if images.rows() == 0 {
        return Err(Error::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    if images.cols() != corpus.cols() {
        return Err(Error::Shape {
            expected: (images.rows(), corpus.cols()),
            found: images.shape(),
        });
    }
    Trainer::new(cfg, corpus.cols(), Regime::UnpairedImages, None)?.run(corpus, Some(images))
}

/// Fits `μ`, `L` and the reverse mapping from text alone.
pub fn train_setting4(corpus: &Matrix, cfg: &TrainConfig) -> Result<FittedModel> {
    check_corpus(corpus)?;
    Trainer::new(cfg, corpus.cols(), Regime::TextOnly, None)?.run(corpus, None)
}

/// Mean of `values` over `[start, start + len)`, clamped to the slice.
pub fn window_mean(values: &[f64], start: usize, len: usize) -> f64 {
    let end = (start + len).min(values.len());
    let start = start.min(end);
    let w = &values[start..end];
    w.iter().sum::<f64>() / w.len().max(1) as f64
}
