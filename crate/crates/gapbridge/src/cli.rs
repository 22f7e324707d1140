//! The `gapbridge` command line. Every subcommand prints a one-line JSON
//! summary on stdout; logs go to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use gapbridge_core::eval::export_residual_histograms;
use gapbridge_core::gapmap::{self, CovarianceCorrection, MappingModule};
use gapbridge_core::gauss::Provenance;
use gapbridge_core::synth::{gen_bias_truth, gen_paired_images, gen_text_embeddings};
use gapbridge_core::trainer::{self, TrainConfig};
use gapbridge_core::{EmbeddingMatrix, Matrix, Rng};
use serde_json::{json, Value};

use crate::config::{read_synth_config, read_train_config};
use crate::embfile::{load_paired, read_embeddings, write_embeddings, PairManifest};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, SavedModel};
use crate::parallel;
use crate::params::{read_params, write_params};
use crate::prompts::{build_records, read_caption_pairs, read_lexicon, write_prompts};
use crate::report::{write_histograms, write_report};

#[derive(Debug, Parser)]
#[command(
    name = "gapbridge",
    version,
    about = "Model and bridge the image/text embedding gap"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Correction {
    IndependentSum,
    MeanOnly,
}

impl From<Correction> for CovarianceCorrection {
    fn from(c: Correction) -> Self {
        match c {
            Correction::IndependentSum => CovarianceCorrection::IndependentSum,
            Correction::MeanOnly => CovarianceCorrection::MeanOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate clustered texts, a planted bias and paired images.
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Estimate the bias Gaussian from paired (1) or web-paired (2) data.
    Estimate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        setting: u8,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        /// Setting 2: captions paired with --images (defaults to --texts).
        #[arg(long)]
        web_texts: Option<PathBuf>,
        /// Setting 2: the target text corpus.
        #[arg(long)]
        corpus_texts: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "independent-sum")]
        correction: Correction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reverse mapping, and for settings 3 and 4 the bias too.
    Fit {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        setting: u8,
        #[arg(long)]
        corpus: PathBuf,
        /// Setting 3: unpaired image pool.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Settings 1 and 2: frozen bias parameters from `estimate`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Add sampled bias to text embeddings.
    Map {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        texts: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        renormalize: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run embeddings through a fitted reverse mapping.
    Reverse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fitted model on held-out pairs.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Histograms of image − text per dimension plus a pooled series.
    Hist {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build caption-refinement prompts from rough/ground-truth pairs.
    Prompt {
        #[arg(long)]
        lexicon: PathBuf,
        /// TSV with columns rough, gt.
        #[arg(long, conflicts_with_all = ["rough", "gt"])]
        pairs: Option<PathBuf>,
        #[arg(long, requires = "gt")]
        rough: Option<String>,
        #[arg(long, requires = "rough")]
        gt: Option<String>,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn matrix(path: &Path) -> Result<(EmbeddingMatrix, Matrix)> {
    let e = read_embeddings(path)?;
    let m = e.to_matrix();
    Ok((e, m))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn execute(command: Command) -> Result<Value> {
    match command {
        Command::GenSynth { config, out_dir } => gen_synth(&config, &out_dir),
        Command::Estimate {
            setting,
            images,
            texts,
            web_texts,
            corpus_texts,
            correction,
            out,
        } => {
            if setting == 2 && corpus_texts.is_none() {
                return Err(Error::Usage("--setting 2 requires --corpus-texts".into()));
            }
            let (_, img) = matrix(&images)?;
            let params = if setting == 1 {
                if web_texts.is_some() || corpus_texts.is_some() {
                    return Err(Error::Usage(
                        "--web-texts and --corpus-texts only apply to --setting 2".into(),
                    ));
                }
                let (_, txt) = matrix(&texts)?;
                gapmap::estimate_setting1(&img, &txt)?
            } else {
                let (_, web) = matrix(web_texts.as_deref().unwrap_or(&texts))?;
                let (_, corpus) = matrix(corpus_texts.as_deref().expect("checked above"))?;
                gapmap::estimate_setting2(&img, &web, &corpus, correction.into())?
            };
            write_params(&params, &out)?;
            log::info!(
                "estimated {}-dim bias from {} pairs",
                params.dim(),
                img.rows()
            );
            Ok(json!({
                "command": "estimate",
                "setting": setting,
                "dim": params.dim(),
                "pairs": img.rows(),
                "mean_norm": gapbridge_core::linalg::norm(params.mean()),
                "cov_trace": params.covariance().trace(),
                "out": display(&out),
            }))
        }
        Command::Fit {
            setting,
            corpus,
            images,
            params,
            train_config,
            out_dir,
        } => fit(
            setting,
            &corpus,
            images.as_deref(),
            params.as_deref(),
            train_config.as_deref(),
            &out_dir,
        ),
        Command::Map {
            params,
            texts,
            seed,
            renormalize,
            out,
        } => {
            let p = read_params(&params)?;
            let mut module = match p.provenance() {
                Provenance::Fitted => MappingModule::trainable(p),
                _ => MappingModule::fixed(p)?,
            };
            module.renormalize_after_map = renormalize;
            let (src, t) = matrix(&texts)?;
            let mapped = gapmap::map_forward(&t, &module, &mut Rng::seed_from_u64(seed))?;
            write_embeddings(&carry_ids(&mapped, renormalize, &src)?, &out)?;
            Ok(json!({
                "command": "map",
                "rows": mapped.rows(),
                "dim": mapped.cols(),
                "seed": seed,
                "out": display(&out),
            }))
        }
        Command::Reverse { model, input, out } => {
            let saved = load_model(&model)?;
            let (src, x) = matrix(&input)?;
            let y = saved.model.reverse.forward(&x)?;
            write_embeddings(&carry_ids(&y, false, &src)?, &out)?;
            Ok(json!({
                "command": "reverse",
                "rows": y.rows(),
                "dim": y.cols(),
                "out": display(&out),
            }))
        }
        Command::Eval {
            model,
            pair,
            report,
        } => {
            let saved = load_model(&model)?;
            let (images, texts) = load_paired(&pair)?;
            let pool = parallel::build_pool(parallel::threads_from_env()?)?;
            let r = parallel::evaluate_model(
                &pool,
                &saved.model.reverse,
                saved.model.mapping.params(),
                &images.to_matrix(),
                &texts.to_matrix(),
                saved.config.disti_temp,
            )?;
            write_report(&r, &report)?;
            Ok(json!({
                "command": "eval",
                "retrieval_at_1": r.retrieval_at_1,
                "retrieval_at_5": r.retrieval_at_5,
                "residual_kl": r.residual_kl,
                "simmatrix_div": r.simmatrix_div,
                "mean_pair_cosine": r.mean_pair_cosine,
                "report": display(&report),
            }))
        }
        Command::Hist {
            pair,
            dims,
            bins,
            out,
        } => {
            let (images, texts) = load_paired(&pair)?;
            let rows =
                export_residual_histograms(&images.to_matrix(), &texts.to_matrix(), &dims, bins)?;
            write_histograms(&rows, &out)?;
            Ok(json!({
                "command": "hist",
                "series": dims.len() + 1,
                "bins": bins,
                "rows": rows.len(),
                "out": display(&out),
            }))
        }
        Command::Prompt {
            lexicon,
            pairs,
            rough,
            gt,
            p,
            seed,
            out,
        } => {
            let lex = read_lexicon(&lexicon)?;
            let pairs = match (pairs, rough, gt) {
                (Some(path), None, None) => read_caption_pairs(&path)?,
                (None, Some(r), Some(g)) => vec![(r, g)],
                _ => {
                    return Err(Error::Usage(
                        "give either --pairs or both --rough and --gt".into(),
                    ))
                }
            };
            let records = build_records(&pairs, &lex, p, seed)?;
            write_prompts(&records, &out)?;
            let padded = records.iter().filter(|r| r.serialized.is_padding()).count();
            Ok(json!({
                "command": "prompt",
                "records": records.len(),
                "padded": padded,
                "out": display(&out),
            }))
        }
    }
}

fn carry_ids(m: &Matrix, normalized: bool, src: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let e = EmbeddingMatrix::from_matrix(m, normalized)?;
    Ok(match src.ids() {
        Some(ids) => e.with_ids(ids.to_vec())?,
        None => e,
    })
}

fn gen_synth(config: &Path, out_dir: &Path) -> Result<Value> {
    let cfg = read_synth_config(config)?;
    let spec = cfg.spec();
    let texts = gen_text_embeddings(&spec)?;
    let truth = gen_bias_truth(
        spec.dim,
        spec.bias_mean_scale,
        spec.bias_cov_scale,
        spec.seed.wrapping_add(1),
    )?;
    let mut rng = Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let images = gen_paired_images(&texts, &truth, &mut rng, cfg.renormalize)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_embeddings(
        &EmbeddingMatrix::from_matrix(&texts, true)?,
        &out_dir.join("texts.emb"),
    )?;
    write_embeddings(
        &EmbeddingMatrix::from_matrix(&images, cfg.renormalize)?,
        &out_dir.join("images.emb"),
    )?;
    write_params(&truth, &out_dir.join("truth.json"))?;
    PairManifest::new("images.emb", "texts.emb").write(&out_dir.join("pair.json"))?;
    log::info!(
        "wrote {} synthetic pairs to {}",
        spec.count,
        out_dir.display()
    );
    Ok(json!({
        "command": "gen-synth",
        "count": spec.count,
        "dim": spec.dim,
        "seed": spec.seed,
        "out_dir": display(out_dir),
    }))
}

fn fit(
    setting: u8,
    corpus: &Path,
    images: Option<&Path>,
    params: Option<&Path>,
    train_config: Option<&Path>,
    out_dir: &Path,
) -> Result<Value> {
    let cfg = match train_config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    let (_, corpus) = matrix(corpus)?;
    let usage = |m: &str| Err(Error::Usage(m.into()));
    let model = match setting {
        1 | 2 => {
            if images.is_some() {
                return usage("--images only applies to --setting 3");
            }
            let Some(p) = params else {
                return usage("--setting 1 and 2 require --params");
            };
            trainer::train_fixed_mapping(&corpus, &read_params(p)?, &cfg)?
        }
        3 => {
            if params.is_some() {
                return usage("--params only applies to --setting 1 and 2");
            }
            let Some(img) = images else {
                return usage("--setting 3 requires --images");
            };
            let (_, img) = matrix(img)?;
            trainer::train_setting3(&corpus, &img, &cfg)?
        }
        _ => {
            if images.is_some() || params.is_some() {
                return usage("--setting 4 takes neither --images nor --params");
            }
            trainer::train_setting4(&corpus, &cfg)?
        }
    };
    let last = model.history.last().cloned();
    save_model(
        &SavedModel {
            setting,
            config: cfg.clone(),
            model,
        },
        out_dir,
    )?;
    log::info!(
        "trained {} steps, model in {}",
        cfg.total_steps,
        out_dir.display()
    );
    Ok(json!({
        "command": "fit",
        "setting": setting,
        "steps": cfg.total_steps,
        "final_loss_map": last.as_ref().and_then(|h| h.loss_map),
        "final_loss_cosine": last.as_ref().and_then(|h| h.loss_cosine),
        "final_loss_cl": last.as_ref().and_then(|h| h.loss_cl),
        "final_loss_disti": last.as_ref().and_then(|h| h.loss_disti),
        "out_dir": display(out_dir),
    }))
}
