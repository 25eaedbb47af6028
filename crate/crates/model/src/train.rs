//! Joint training loop, checkpoints and dataset evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ppk_autodiff::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Graph, Tensor, Var};
use ppk_core::annotation::{Dataset, ImageEntry};
use ppk_core::bleu::{effective_reference_length, report_from_stats, sentence_stats, BleuOptions, BleuReport, BleuStats};
use ppk_core::consistency::number_word;
use ppk_core::pq::{evaluate_dataset, PQReport};
use ppk_core::text::{default_lexicon, Vocabulary, PAD};
use ppk_core::{CategoryRegistry, ImageRecord, PanopticMap};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Config;
use crate::loss::{caption_targets, loss_cap, loss_seg, loss_total, GroundTruth, LossReport};
use crate::network::{Model, PIXEL_PREFIX};
use crate::params::Bound;
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.ppkt";
pub const LAST_GOOD_FILE: &str = "last_good.ppkt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CATEGORIES_FILE: &str = "categories.json";

/// One training or evaluation image with its targets.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageRecord,
    pub map: PanopticMap,
    pub gt: GroundTruth,
    /// Tokenized reference sentences.
    pub references: Vec<Vec<String>>,
    /// References encoded with the model vocabulary, truncated to the maximum length.
    /// Sentences with out-of-vocabulary words are left out.
    pub captions: Vec<Vec<usize>>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        image: ImageRecord,
        map: PanopticMap,
        references: Vec<Vec<String>>,
        vocab: &Vocabulary,
        reg: &CategoryRegistry,
        max_len: usize,
    ) -> Result<Self> {
        let id = id.into();
        let gt = GroundTruth::from_map(&map, reg)?;
        let mut captions = Vec::new();
        for r in &references {
            match vocab.encode(r) {
                Ok(mut c) => {
                    if c.len() > max_len {
                        warn!("image {id}: caption of {} tokens truncated to {max_len}", c.len());
                        c.truncate(max_len);
                    }
                    captions.push(c);
                }
                Err(e) => warn!("image {id}: caption skipped ({e})"),
            }
        }
        Ok(Sample { id, image, map, gt, references, captions })
    }
}

/// Caption words, the class lexicon and the number words one to twenty.
pub fn build_vocabulary<'a>(captions: impl IntoIterator<Item = &'a Vec<String>>) -> Vocabulary {
    let mut words: Vec<String> = captions.into_iter().flatten().cloned().collect();
    words.extend(default_lexicon());
    words.extend((1..=20).map(number_word));
    Vocabulary::from_words(words)
}

/// Entries of a split; `"all"` selects every image.
pub fn select_entries<'a>(ds: &'a Dataset, split: &str) -> Result<Vec<&'a ImageEntry>> {
    let entries: Vec<&ImageEntry> = if split == "all" { ds.images().iter().collect() } else { ds.split(split) };
    if entries.is_empty() {
        return Err(Error::Input(format!("{}: split {split:?} has no images", ds.root.display())));
    }
    Ok(entries)
}

pub fn load_samples(ds: &Dataset, entries: &[&ImageEntry], vocab: &Vocabulary, max_len: usize) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| {
            Sample::new(
                e.id.to_string(),
                ds.load_image(e)?,
                ds.load_map(e)?,
                ds.captions(e),
                vocab,
                &ds.registry,
                max_len,
            )
        })
        .collect()
}

/// Graph nodes of one forward pass.
pub struct Forward {
    pub l_seg: Var,
    pub l_cap: Var,
    pub logits: Option<Var>,
    pub targets: Vec<usize>,
}

/// Builds both task losses for `sample` on `g`. Without a caption, `L_cap` is the
/// constant 0.
pub fn forward(g: &mut Graph, model: &Model, p: &Bound, sample: &Sample, caption: Option<&[usize]>) -> Result<Forward> {
    let pix = model.pixel_module(g, p, &sample.image)?;
    let seg = model.segmentation_module(g, p, &pix)?;
    let (l_seg, _) = loss_seg(g, &seg, &sample.gt, &model.config)?;
    match caption {
        Some(c) => {
            let memory = model.caption_memory(g, p, pix.f)?;
            let logits = model.caption_logits(g, p, memory, &Model::teacher_input(c))?;
            let targets = caption_targets(c);
            let l_cap = loss_cap(g, logits, &targets)?;
            Ok(Forward { l_seg, l_cap, logits: Some(logits), targets })
        }
        None => Ok(Forward { l_seg, l_cap: g.constant(Tensor::scalar(0.0))?, logits: None, targets: Vec::new() }),
    }
}

/// `L_total` for `sample` with the parameters bound as `p`.
pub fn total_loss(
    g: &mut Graph,
    model: &Model,
    p: &Bound,
    sample: &Sample,
    caption: Option<&[usize]>,
    lambda: f64,
) -> Result<(Var, LossReport)> {
    let f = forward(g, model, p, sample, caption)?;
    loss_total(g, f.l_seg, f.l_cap, lambda)
}

/// Teacher-forced argmax hits over non-PAD targets.
pub fn token_hits(logits: &Tensor, targets: &[usize]) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for (t, &w) in targets.iter().enumerate() {
        if w == PAD {
            continue;
        }
        let row = logits.row(t);
        let arg = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        hits += usize::from(arg == w);
        total += 1;
    }
    (hits, total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub l_seg: f64,
    pub l_cap: f64,
    pub l_total: f64,
    pub lambda: f64,
    pub lr: f64,
    /// PQ of the current model on the training images; only on evaluation epochs.
    pub train_pq: Option<f64>,
    /// Teacher-forced next-token accuracy over the epoch.
    pub token_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub report: LossReport,
    pub hits: usize,
    pub tokens: usize,
}

/// Single-threaded trainer. All state needed to continue a run lives in the output
/// directory: `config.json`, `vocab.json`, `checkpoint.ppkt` and `metrics.jsonl`.
pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub adam: Adam,
    pub samples: Vec<Sample>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    out: PathBuf,
}

fn adam_config(c: &Config) -> AdamConfig {
    AdamConfig { lr: c.train.lr, beta1: c.train.beta1, beta2: c.train.beta2, eps: c.train.adam_eps }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Trainer {
    /// A fresh run writing to `out`. The model is initialized from the training seed.
    pub fn new(config: Config, registry: CategoryRegistry, vocab: Vocabulary, samples: Vec<Sample>, out: &Path) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::Input("no training samples".into()));
        }
        let most = samples.iter().map(|s| s.gt.len()).max().unwrap_or(0);
        if most > config.model.n_queries {
            return Err(Error::Config(format!(
                "{} queries cannot cover an image with {most} ground-truth segments",
                config.model.n_queries
            )));
        }
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_json(&out.join(CONFIG_FILE), &config)?;
        write_json(&out.join(VOCAB_FILE), &vocab)?;
        write_json(&out.join(CATEGORIES_FILE), &registry.categories())?;
        let metrics = out.join(METRICS_FILE);
        fs::write(&metrics, "").map_err(|e| Error::io(&metrics, e))?;
        let model = Model::new(config.model.clone(), registry, vocab, config.train.seed)?;
        let adam = Adam::new(adam_config(&config), model.params.tensors());
        Ok(Trainer { config, model, adam, samples, epoch: 0, step: 0, out: out.to_path_buf() })
    }

    /// Builds a fresh run from a dataset split, with the vocabulary taken from that
    /// split's captions.
    pub fn from_dataset(config: Config, ds: &Dataset, split: &str, out: &Path) -> Result<Self> {
        let entries = select_entries(ds, split)?;
        let refs: Vec<Vec<String>> = entries.iter().flat_map(|e| ds.captions(e)).collect();
        let vocab = build_vocabulary(&refs);
        let samples = load_samples(ds, &entries, &vocab, config.model.max_caption_len)?;
        Trainer::new(config, ds.registry.clone(), vocab, samples, out)
    }

    /// Continues the run in `out` from its last checkpoint.
    pub fn resume(out: &Path, ds: &Dataset, split: &str) -> Result<Self> {
        let config: Config = read_json(&out.join(CONFIG_FILE))?;
        config.validate()?;
        let vocab: Vocabulary = read_json(&out.join(VOCAB_FILE))?;
        let entries = select_entries(ds, split)?;
        let samples = load_samples(ds, &entries, &vocab, config.model.max_caption_len)?;
        let mut model = Model::new(config.model.clone(), ds.registry.clone(), vocab, config.train.seed)?;
        let named: BTreeMap<String, Tensor> = load_checkpoint(&out.join(CHECKPOINT_FILE))?.into_iter().collect();
        model.params.load_named(&named)?;
        let mut adam = Adam::new(adam_config(&config), model.params.tensors());
        for (k, name) in model.params.names().iter().enumerate() {
            for (slot, prefix) in [(&mut adam.m[k], "adam.m."), (&mut adam.v[k], "adam.v.")] {
                let t = named
                    .get(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Input(format!("checkpoint lacks {prefix}{name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Input(format!("checkpoint {prefix}{name} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        let scalar = |name: &str| -> Result<u64> {
            let t = named.get(name).ok_or_else(|| Error::Input(format!("checkpoint lacks {name}")))?;
            let v = t.data().first().copied().unwrap_or(-1.0);
            if t.len() != 1 || v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Input(format!("checkpoint {name} is not a counter")));
            }
            Ok(v as u64)
        };
        adam.t = scalar("adam.t")?;
        let epoch = scalar("train.epoch")? as usize;
        let step = scalar("train.step")?;

        let metrics = out.join(METRICS_FILE);
        let kept: Vec<String> = fs::read_to_string(&metrics)
            .unwrap_or_default()
            .lines()
            .filter(|l| {
                serde_json::from_str::<serde_json::Value>(l)
                    .ok()
                    .and_then(|v| v.get("epoch")?.as_u64())
                    .is_some_and(|e| e as usize <= epoch)
            })
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&metrics, kept.concat()).map_err(|e| Error::io(&metrics, e))?;
        info!("resuming {} at epoch {epoch}, step {step}", out.display());
        Ok(Trainer { config, model, adam, samples, epoch, step, out: out.to_path_buf() })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let mut named = self.model.params.named();
        for (k, name) in self.model.params.names().iter().enumerate() {
            named.push((format!("adam.m.{name}"), self.adam.m[k].clone()));
            named.push((format!("adam.v.{name}"), self.adam.v[k].clone()));
        }
        named.push(("adam.t".into(), Tensor::scalar(self.adam.t as f64)));
        named.push(("train.epoch".into(), Tensor::scalar(self.epoch as f64)));
        named.push(("train.step".into(), Tensor::scalar(self.step as f64)));
        named
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Ok(save_checkpoint(path, &self.state())?)
    }

    fn diverged(&self) -> Error {
        let last_good = self.out.join(LAST_GOOD_FILE);
        if let Err(e) = self.save_checkpoint(&last_good) {
            return e;
        }
        Error::Diverged { step: self.step, last_good }
    }

    /// One Adam step on `sample` with the given caption. A non-finite loss or
    /// gradient leaves the parameters untouched, writes them to `last_good.ppkt` and
    /// returns [`Error::Diverged`].
    pub fn train_step(&mut self, sample: usize, caption: Option<usize>) -> Result<StepStats> {
        let s = &self.samples[sample];
        let caption = caption.and_then(|k| s.captions.get(k)).map(Vec::as_slice);
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g)?;
        let attempt = (|| -> Result<_> {
            let f = forward(&mut g, &self.model, &p, s, caption)?;
            let (total, report) = loss_total(&mut g, f.l_seg, f.l_cap, self.config.train.lambda)?;
            if !report.l_total.is_finite() {
                return Err(ppk_autodiff::Error::Numeric { op: "loss" }.into());
            }
            let grads = g.backward(total)?;
            let mut grads: Vec<Tensor> =
                p.vars().iter().zip(self.model.params.tensors()).map(|(&v, t)| grads.wrt(v, t)).collect();
            if !grads.iter().all(Tensor::is_finite) {
                return Err(ppk_autodiff::Error::Numeric { op: "gradient" }.into());
            }
            if let Some(clip) = self.config.train.grad_clip {
                let norm = grads.iter().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt();
                if norm > clip {
                    for t in &mut grads {
                        t.data_mut().iter_mut().for_each(|x| *x *= clip / norm);
                    }
                }
            }
            let (hits, tokens) = f.logits.map_or((0, 0), |l| token_hits(g.value(l), &f.targets));
            Ok((grads, StepStats { report, hits, tokens }))
        })();
        let (grads, stats) = match attempt {
            Ok(x) => x,
            Err(e) if e.is_numeric() => return Err(self.diverged()),
            Err(e) => return Err(e),
        };
        let lr = self.config.train.lr_at(self.step);
        self.adam.step_with_lr(self.model.params.tensors_mut(), &grads, lr)?;
        self.step += 1;
        Ok(stats)
    }

    /// Image order for an epoch: a shuffle seeded by the run seed and epoch index.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        if self.config.train.shuffle {
            let seed = self.config.train.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }

    fn caption_index(&self, sample: usize, epoch: usize) -> Option<usize> {
        let n = self.samples[sample].captions.len();
        let used = match self.config.train.captions_used {
            0 => n,
            k => k.min(n),
        };
        (used > 0).then(|| epoch % used)
    }

    /// Runs one epoch, then logs metrics and checkpoints as configured.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let lr = self.config.train.lr_at(self.step);
        let (mut seg, mut cap, mut tot, mut hits, mut tokens) = (0.0, 0.0, 0.0, 0, 0);
        let order = self.epoch_order(epoch);
        for &i in &order {
            let s = self.train_step(i, self.caption_index(i, epoch))?;
            seg += s.report.l_seg;
            cap += s.report.l_cap;
            tot += s.report.l_total;
            hits += s.hits;
            tokens += s.tokens;
        }
        self.epoch += 1;
        let n = order.len() as f64;
        let last = self.epoch >= self.config.train.epochs;
        let train_pq = if self.epoch % self.config.train.eval_every == 0 || last {
            Some(evaluate_pq(&self.model, &self.samples)?.all.pq)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch: self.epoch,
            step: self.step,
            l_seg: seg / n,
            l_cap: cap / n,
            l_total: tot / n,
            lambda: self.config.train.lambda,
            lr,
            train_pq,
            token_acc: if tokens == 0 { 0.0 } else { hits as f64 / tokens as f64 },
        };
        let path = self.out.join(METRICS_FILE);
        let mut f = fs::OpenOptions::new().append(true).create(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(&m)?).map_err(|e| Error::io(&path, e))?;
        if self.epoch % self.config.train.checkpoint_every == 0 || last {
            self.save_checkpoint(&self.out.join(CHECKPOINT_FILE))?;
        }
        info!(
            "epoch {} step {}: l_seg {:.4} l_cap {:.4} l_total {:.4} token_acc {:.3}{}",
            m.epoch,
            m.step,
            m.l_seg,
            m.l_cap,
            m.l_total,
            m.token_acc,
            m.train_pq.map_or(String::new(), |pq| format!(" train_pq {pq:.4}"))
        );
        Ok(m)
    }

    /// Runs the remaining epochs up to `config.train.epochs`.
    pub fn run(&mut self) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.epoch < self.config.train.epochs {
            out.push(self.run_epoch()?);
        }
        Ok(out)
    }
}

/// The model saved in a run directory by [`Trainer`]: its config, vocabulary,
/// categories and latest checkpoint.
pub fn load_run(dir: &Path) -> Result<Model> {
    let config: Config = read_json(&dir.join(CONFIG_FILE))?;
    let vocab: Vocabulary = read_json(&dir.join(VOCAB_FILE))?;
    let categories: Vec<ppk_core::Category> = read_json(&dir.join(CATEGORIES_FILE))?;
    let mut model = Model::new(config.model, CategoryRegistry::new(categories)?, vocab, config.train.seed)?;
    let named: BTreeMap<String, Tensor> = load_checkpoint(&dir.join(CHECKPOINT_FILE))?.into_iter().collect();
    model.params.load_named(&named)?;
    Ok(model)
}

/// PQ of the model's panoptic predictions against the samples' maps.
pub fn evaluate_pq(model: &Model, samples: &[Sample]) -> Result<PQReport> {
    let mut preds = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for s in samples {
        preds.insert(s.id.clone(), model.infer(&s.image)?.map);
        gts.insert(s.id.clone(), s.map.clone());
    }
    Ok(evaluate_dataset(&preds, &gts, &model.registry, Some(1))?.report)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub pq: PQReport,
    /// Corpus BLEU-4 of the decoded captions against each image's references.
    pub bleu: Option<BleuReport>,
    pub captions: BTreeMap<String, Vec<String>>,
    pub maps: BTreeMap<String, PanopticMap>,
}

/// Panoptic predictions and decoded captions for every sample. Images without
/// references are left out of BLEU; an empty decoded caption counts with length 0.
pub fn evaluate(model: &Model, samples: &[Sample], beam_size: usize) -> Result<Evaluation> {
    let mut maps = BTreeMap::new();
    let mut gts = BTreeMap::new();
    let mut captions = BTreeMap::new();
    let mut stats = BleuStats::default();
    let mut scored = 0;
    let opts = BleuOptions::default();
    for s in samples {
        let inf = model.infer(&s.image)?;
        let words = model.caption_words(&model.caption(&inf.memory, beam_size)?)?;
        if !s.references.is_empty() {
            stats += if words.is_empty() {
                let lens: Vec<usize> = s.references.iter().map(Vec::len).collect();
                BleuStats { r: effective_reference_length(0, &lens), ..Default::default() }
            } else {
                sentence_stats(&words, &s.references, &opts)?
            };
            scored += 1;
        }
        maps.insert(s.id.clone(), inf.map);
        gts.insert(s.id.clone(), s.map.clone());
        captions.insert(s.id.clone(), words);
    }
    let pq = evaluate_dataset(&maps, &gts, &model.registry, Some(1))?.report;
    let bleu = (scored > 0).then(|| report_from_stats(&stats, &opts));
    Ok(Evaluation { pq, bleu, captions, maps })
}

/// Gradients of `L_seg`, `L_cap` and `L_total` on the shared pixel-module
/// parameters, each from its own graph.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Additivity {
    pub lambda: f64,
    /// `max |grad L_total - (grad L_seg + λ grad L_cap)|` over pixel parameters.
    pub max_abs_diff: f64,
    /// Euclidean norm of `grad L_cap` on the pixel parameters.
    pub cap_grad_norm: f64,
    pub seg_grad_norm: f64,
    pub coordinates: usize,
}

pub fn lambda_additivity(model: &Model, sample: &Sample, caption: &[usize], lambda: f64) -> Result<Additivity> {
    let pixel: Vec<usize> = model
        .params
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with(PIXEL_PREFIX))
        .map(|(k, _)| k)
        .collect();
    let grads = |which: u8| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g)?;
        let f = forward(&mut g, model, &p, sample, Some(caption))?;
        let loss = match which {
            0 => f.l_seg,
            1 => f.l_cap,
            _ => loss_total(&mut g, f.l_seg, f.l_cap, lambda)?.0,
        };
        let gr = g.backward(loss)?;
        Ok(pixel
            .iter()
            .flat_map(|&k| gr.wrt(p.vars()[k], &model.params.tensors()[k]).into_data())
            .collect())
    };
    let (gs, gc, gt) = (grads(0)?, grads(1)?, grads(2)?);
    let max_abs_diff = gt
        .iter()
        .zip(gs.iter().zip(&gc))
        .map(|(t, (s, c))| (t - (s + lambda * c)).abs())
        .fold(0.0, f64::max);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Additivity { lambda, max_abs_diff, cap_grad_norm: norm(&gc), seg_grad_norm: norm(&gs), coordinates: gt.len() })
}
