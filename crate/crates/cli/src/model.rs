//! Commands that train or run the toy model.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ppk_core::annotation::Dataset;
use ppk_core::codec::{decode_png_rgb8, encode_pgm};
use ppk_core::ImageRecord;
use ppk_model::saliency::{export_saliency, to_gray8};
use ppk_model::train::{evaluate, lambda_additivity, load_run, select_entries, Additivity, CHECKPOINT_FILE};
use ppk_model::{Config, EpochMetrics, Trainer};
use serde::Serialize;
use serde_json::json;

use crate::data::quality_table;
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::{beside, emit, Outcome};

/// Configuration source shared by the training commands.
#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Config JSON with `model` and `train` sections; missing fields take defaults.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named configuration: toy, overfit or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Config::from_json(&text)?
            }
            (None, Some(name)) => Config::preset(name)?,
            (None, None) => Config::toy(),
        };
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            c.train.lr = lr;
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn log_epoch(m: &EpochMetrics) {
    let pq = m.train_pq.map_or_else(String::new, |p| format!(" train PQ {p:.6}"));
    eprintln!(
        "epoch {:>4} step {:>6} L_seg {:.6} L_cap {:.6} L_total {:.6} token acc {:.4}{pq}",
        m.epoch, m.step, m.l_seg, m.l_cap, m.l_total, m.token_acc
    );
}

/// Keeps only the first `limit` images of `split` so that the trainer sees them.
fn limited(ds: &Dataset, split: &str, limit: Option<usize>) -> Result<Dataset> {
    let mut ds = ds.clone();
    if let Some(k) = limit {
        if k == 0 {
            return Err(CliError::Usage("--limit must be positive".into()));
        }
        let keep: Vec<u64> = select_entries(&ds, split)?.iter().take(k).map(|e| e.id).collect();
        ds.annotations.images.retain(|e| (split != "all" && e.split.as_deref() != Some(split)) || keep.contains(&e.id));
    }
    Ok(ds)
}

#[derive(Args, Debug)]
pub struct TrainToy {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for config, vocabulary, checkpoints and metrics.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Train on the first this many images of the split only.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue the run in `--out` from its last checkpoint.
    #[arg(long, conflicts_with_all = ["config", "preset", "lambda", "lr", "seed"])]
    pub resume: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn train_toy(a: TrainToy) -> Result<Outcome> {
    let ds = limited(&Dataset::load(&a.data)?, &a.split, a.limit)?;
    let mut t = if a.resume {
        let mut t = Trainer::resume(&a.out, &ds, &a.split)?;
        if let Some(e) = a.cfg.epochs {
            t.config.train.epochs = e;
        }
        t
    } else {
        let mut c = a.cfg.resolve()?;
        if let Some(l) = a.lambda {
            c.train.lambda = l;
        }
        c.validate()?;
        Trainer::from_dataset(c, &ds, &a.split, &a.out)?
    };
    eprintln!(
        "{} images, {} parameters, epochs {}..{}",
        t.samples.len(),
        t.model.params.count(),
        t.epoch,
        t.config.train.epochs
    );
    let mut last = None;
    while t.epoch < t.config.train.epochs {
        let m = t.run_epoch()?;
        log_epoch(&m);
        last = Some(m);
    }
    emit(None, &(serde_json::to_string_pretty(&json!({ "epochs": t.epoch, "final": last }))? + "\n"))?;
    let mut m = Manifest::new(
        "train-toy",
        json!({ "split": a.split, "limit": a.limit, "resumed": a.resume, "resolved": t.config }),
    );
    m.input(&a.data)?;
    m.output(&a.out)?;
    Ok(Outcome { manifest: m, manifest_path: Some(a.out.join(MANIFEST_FILE)) })
}

#[derive(Args, Debug)]
pub struct Ablate {
    #[arg(long)]
    pub data: PathBuf,
    /// Caption-loss weights, one training run each.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.7,1.0,2.0,3.0")]
    pub lambdas: Vec<f64>,
    /// Directory receiving one run per weight and `ablation.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub train_split: String,
    /// Split scored after training; the training split when omitted.
    #[arg(long)]
    pub eval_split: Option<String>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub beam_size: usize,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Serialize)]
struct AblationRow {
    lambda: f64,
    run: String,
    pq: f64,
    sq: f64,
    rq: f64,
    bleu: Option<f64>,
    final_l_seg: f64,
    final_l_cap: f64,
    final_l_total: f64,
    additivity: Option<Additivity>,
}

fn lambda_dir(l: f64) -> String {
    format!("lambda-{l}")
}

pub fn ablate(a: Ablate) -> Result<Outcome> {
    if a.lambdas.is_empty() {
        return Err(CliError::Usage("--lambdas needs at least one value".into()));
    }
    if a.beam_size == 0 {
        return Err(CliError::Usage("--beam-size must be at least 1".into()));
    }
    let base = a.cfg.resolve()?;
    let eval_split = a.eval_split.clone().unwrap_or_else(|| a.train_split.clone());
    let ds = limited(&Dataset::load(&a.data)?, &a.train_split, a.limit)?;
    let mut rows = Vec::new();
    for &lambda in &a.lambdas {
        let mut c = base.clone();
        c.train.lambda = lambda;
        c.validate()?;
        let run = lambda_dir(lambda);
        let dir = a.out.join(&run);
        eprintln!("== lambda {lambda}: training into {}", dir.display());
        let mut t = Trainer::from_dataset(c, &ds, &a.train_split, &dir)?;
        let metrics = t.run()?;
        if let Some(m) = metrics.last() {
            log_epoch(m);
        }
        let eval_samples = if eval_split == a.train_split {
            t.samples.clone()
        } else {
            let entries = select_entries(&ds, &eval_split)?;
            ppk_model::train::load_samples(&ds, &entries, &t.model.vocab, t.config.model.max_caption_len)?
        };
        let ev = evaluate(&t.model, &eval_samples, a.beam_size)?;
        let additivity = t
            .samples
            .iter()
            .find_map(|s| s.captions.first().map(|c| (s, c)))
            .map(|(s, c)| lambda_additivity(&t.model, s, c, lambda))
            .transpose()?;
        let last = metrics.last();
        rows.push(AblationRow {
            lambda,
            run,
            pq: ev.pq.all.pq,
            sq: ev.pq.all.sq,
            rq: ev.pq.all.rq,
            bleu: ev.bleu.map(|b| b.score),
            final_l_seg: last.map_or(f64::NAN, |m| m.l_seg),
            final_l_cap: last.map_or(f64::NAN, |m| m.l_cap),
            final_l_total: last.map_or(f64::NAN, |m| m.l_total),
            additivity,
        });
        eprint!("{}", quality_table(&format!("lambda {lambda} on {eval_split}"), &ev.pq));
    }
    eprintln!("{:>8} {:>8} {:>8} {:>8} {:>8}", "lambda", "PQ", "SQ", "RQ", "BLEU");
    for r in &rows {
        let bleu = r.bleu.map_or_else(|| "-".to_string(), |b| format!("{b:.4}"));
        eprintln!("{:>8} {:>8.4} {:>8.4} {:>8.4} {:>8}", r.lambda, r.pq, r.sq, r.rq, bleu);
    }
    let report = json!({
        "train_split": a.train_split,
        "eval_split": eval_split,
        "beam_size": a.beam_size,
        "rows": rows,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    emit(Some(&a.out.join("ablation.json")), &text)?;
    emit(None, &text)?;
    let mut m = Manifest::new(
        "ablate",
        json!({
            "lambdas": a.lambdas,
            "train_split": a.train_split,
            "eval_split": eval_split,
            "limit": a.limit,
            "beam_size": a.beam_size,
            "resolved": base,
        }),
    );
    m.input(&a.data)?;
    m.output(&a.out)?;
    Ok(Outcome { manifest: m, manifest_path: Some(a.out.join(MANIFEST_FILE)) })
}

fn load_image(path: &Path) -> Result<ImageRecord> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (w, h, rgb) = decode_png_rgb8(&bytes)?;
    let id = path.file_stem().map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(ImageRecord::from_rgb8(id, w, h, &rgb)?)
}

#[derive(Args, Debug)]
pub struct Beam {
    /// Run directory written by train-toy.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// RGB PNG of the model's input size.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub beam_size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn beam(a: Beam) -> Result<Outcome> {
    if a.beam_size == 0 {
        return Err(CliError::Usage("--beam-size must be at least 1".into()));
    }
    let model = load_run(&a.ckpt)?;
    let image = load_image(&a.image)?;
    let inf = model.infer(&image)?;
    let h = model.caption(&inf.memory, a.beam_size)?;
    let words = model.caption_words(&h)?;
    eprintln!("{}", words.join(" "));
    let out = json!({
        "beam_size": a.beam_size,
        "caption": words.join(" "),
        "tokens": words,
        "log_prob": h.log_prob,
        "score": h.score(),
    });
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    let mut m = Manifest::new("beam", json!({ "beam_size": a.beam_size }));
    m.input(&a.ckpt.join(CHECKPOINT_FILE))?;
    m.input(&a.image)?;
    if let Some(o) = &a.out {
        m.output(o)?;
    }
    Ok(Outcome { manifest: m, manifest_path: beside(a.out.as_deref()) })
}

#[derive(Args, Debug)]
pub struct Saliency {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output PGM (binary, 8-bit).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn saliency(a: Saliency) -> Result<Outcome> {
    let model = load_run(&a.ckpt)?;
    let image = load_image(&a.image)?;
    let inf = model.infer(&image)?;
    let map = export_saliency(&inf.features, model.config.stride as usize)?;
    let pgm = encode_pgm(model.config.width, model.config.height, &to_gray8(&map));
    fs::write(&a.out, pgm).map_err(|e| CliError::io(&a.out, e))?;
    let mut m = Manifest::new("saliency", json!({ "stride": model.config.stride }));
    m.input(&a.ckpt.join(CHECKPOINT_FILE))?;
    m.input(&a.image)?;
    m.output(&a.out)?;
    Ok(Outcome { manifest: m, manifest_path: beside(Some(&a.out)) })
}
