//! Commands that need no model: dataset generation, metrics, matching.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ppk_core::annotation::{AnnotationFile, Dataset, ANNOTATION_FILE};
use ppk_core::bleu::{corpus_bleu, report_from_stats, sentence_stats, BleuOptions, BleuReport};
use ppk_core::consistency::check_dataset;
use ppk_core::matching::{hungarian, CostMatrix};
use ppk_core::pq::{evaluate_dataset, PQReport};
use ppk_core::synth::{generate_dataset, SynthConfig};
use ppk_core::text::tokenize;
use ppk_model::audit::{run_audit, AuditConfig};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::{beside, emit, Outcome};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Data(format!("{}: not UTF-8", path.display())))
}

#[derive(Args, Debug)]
pub struct GenSynth {
    /// Number of images.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene generator settings as JSON (defaults otherwise).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn gen_synth(a: GenSynth, _threads: Option<usize>) -> Result<Outcome> {
    let cfg: SynthConfig = match &a.config {
        Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    cfg.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let ds = generate_dataset(a.n, a.seed, &cfg, &a.out)?;
    let train = ds.split("train").len();
    eprintln!("wrote {} images ({train} train, {} test) to {}", a.n, a.n - train, a.out.display());
    let mut m = Manifest::new("gen-synth", json!({ "n": a.n, "seed": a.seed, "synth": cfg }));
    m.output(&a.out)?;
    emit(None, &serde_json::to_string_pretty(&json!({ "images": a.n, "train": train, "test": a.n - train }))?)?;
    println!();
    Ok(Outcome { manifest: m, manifest_path: Some(a.out.join(MANIFEST_FILE)) })
}

#[derive(Args, Debug)]
pub struct PqEval {
    /// Dataset directory with predicted maps.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory with ground-truth maps.
    #[arg(long)]
    pub gt: PathBuf,
    /// Report path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn quality_table(title: &str, r: &PQReport) -> String {
    let mut s = format!("{title}\n{:<8} {:>8} {:>8} {:>8}\n", "", "PQ", "SQ", "RQ");
    for (name, q) in [("all", &r.all), ("things", &r.things), ("stuff", &r.stuff)] {
        s += &format!("{name:<8} {:>8.4} {:>8.4} {:>8.4}\n", q.pq, q.sq, q.rq);
    }
    s
}

pub fn pq_eval(a: PqEval, threads: Option<usize>) -> Result<Outcome> {
    let gt = Dataset::load(&a.gt)?;
    let pred = Dataset::load(&a.pred)?;
    let ev = evaluate_dataset(&pred.load_maps()?, &gt.load_maps()?, &gt.registry, threads)?;
    for w in &ev.warnings {
        eprintln!("warning: {w}");
    }
    eprint!("{}", quality_table("panoptic quality", &ev.report));
    emit(a.out.as_deref(), &ev.report.to_json())?;
    let mut m = Manifest::new("pq-eval", json!({ "threads": threads }));
    m.input(&a.pred)?;
    m.input(&a.gt)?;
    if let Some(out) = &a.out {
        m.output(out)?;
    }
    m.warnings = ev.warnings;
    Ok(Outcome { manifest: m, manifest_path: beside(a.out.as_deref()) })
}

#[derive(Args, Debug)]
pub struct Bleu {
    /// Candidate sentences, one per line.
    #[arg(long)]
    pub cand: PathBuf,
    /// Reference files, each with one line per candidate; empty lines are skipped.
    #[arg(long, required = true, num_args = 1..)]
    pub refs: Vec<PathBuf>,
    /// One score per candidate line.
    #[arg(long, conflicts_with = "corpus")]
    pub sentence: bool,
    /// A single corpus-level score (the default).
    #[arg(long)]
    pub corpus: bool,
    /// Count every candidate n-gram found in any reference.
    #[arg(long)]
    pub unclipped: bool,
    /// Replace zero precisions by `eps / total` (eps defaults to 0.1).
    #[arg(long, num_args = 0..=1, default_missing_value = "0.1")]
    pub smooth: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BleuOutput {
    mode: &'static str,
    clipped: bool,
    smoothing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", flatten)]
    corpus: Option<BleuReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<BleuReport>>,
}

pub fn bleu(a: Bleu) -> Result<Outcome> {
    if a.smooth.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
        return Err(CliError::Usage("--smooth needs a positive epsilon".into()));
    }
    let cands: Vec<Vec<String>> = read_text(&a.cand)?.lines().map(tokenize).collect();
    if let Some(k) = cands.iter().position(Vec::is_empty) {
        return Err(CliError::Usage(format!("{}: candidate line {} is empty", a.cand.display(), k + 1)));
    }
    if cands.is_empty() {
        return Err(CliError::Usage(format!("{}: no candidates", a.cand.display())));
    }
    let mut refs: Vec<Vec<Vec<String>>> = vec![Vec::new(); cands.len()];
    for path in &a.refs {
        let lines: Vec<Vec<String>> = read_text(path)?.lines().map(tokenize).collect();
        if lines.len() != cands.len() {
            return Err(CliError::Usage(format!(
                "{} has {} lines for {} candidates",
                path.display(),
                lines.len(),
                cands.len()
            )));
        }
        for (set, r) in refs.iter_mut().zip(lines) {
            if !r.is_empty() {
                set.push(r);
            }
        }
    }
    if let Some(k) = refs.iter().position(Vec::is_empty) {
        return Err(CliError::Usage(format!("candidate line {} has no non-empty reference", k + 1)));
    }
    let opts = BleuOptions { clipped: !a.unclipped, smoothing: a.smooth };
    let out = if a.sentence {
        let reports = cands
            .iter()
            .zip(&refs)
            .map(|(c, r)| Ok(report_from_stats(&sentence_stats(c, r, &opts)?, &opts)))
            .collect::<Result<Vec<_>>>()?;
        for (k, r) in reports.iter().enumerate() {
            eprintln!("{:>5} {:.6}", k + 1, r.score);
        }
        BleuOutput { mode: "sentence", clipped: opts.clipped, smoothing: opts.smoothing, corpus: None, sentences: Some(reports) }
    } else {
        let r = corpus_bleu(&cands, &refs, &opts)?;
        eprintln!("BLEU-4 {:.6} (bp {:.6}, c {}, r {})", r.score, r.bp, r.c, r.r);
        BleuOutput { mode: "corpus", clipped: opts.clipped, smoothing: opts.smoothing, corpus: Some(r), sentences: None }
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    let mut m = Manifest::new(
        "bleu",
        json!({ "mode": out.mode, "clipped": opts.clipped, "smoothing": opts.smoothing }),
    );
    m.input(&a.cand)?;
    for r in &a.refs {
        m.input(r)?;
    }
    if let Some(o) = &a.out {
        m.output(o)?;
    }
    Ok(Outcome { manifest: m, manifest_path: beside(a.out.as_deref()) })
}

#[derive(Args, Debug)]
pub struct Consistency {
    /// Captions: a dataset directory, an annotation file, or a JSON object mapping
    /// image ids to sentence lists.
    #[arg(long)]
    pub captions: PathBuf,
    /// Dataset directory whose maps are checked.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load_captions(path: &Path) -> Result<BTreeMap<String, Vec<Vec<String>>>> {
    if path.is_dir() {
        return Ok(Dataset::load(path)?.annotations.tokenized_captions());
    }
    let bytes = read(path)?;
    if let Ok(a) = AnnotationFile::from_json(&bytes) {
        return Ok(a.tokenized_captions());
    }
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("{}: neither {ANNOTATION_FILE} nor a caption map: {e}", path.display())))?;
    Ok(raw.into_iter().map(|(k, v)| (k, v.iter().map(|s| tokenize(s)).collect())).collect())
}

pub fn consistency(a: Consistency) -> Result<Outcome> {
    let captions = load_captions(&a.captions)?;
    let ds = Dataset::load(&a.maps)?;
    let report = check_dataset(&captions, &ds.load_maps()?, &ds.registry);
    let bad = report.images.values().filter(|v| !v.consistent).count();
    eprintln!(
        "consistency rate (proposed metric) {:.6}: {} of {} images consistent",
        report.rate,
        report.images.len() - bad,
        report.images.len()
    );
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let mut m = Manifest::new("consistency", json!({}));
    m.input(&a.captions)?;
    m.input(&a.maps)?;
    if let Some(o) = &a.out {
        m.output(o)?;
    }
    Ok(Outcome { manifest: m, manifest_path: beside(a.out.as_deref()) })
}

#[derive(Args, Debug)]
pub struct Match {
    /// Cost matrix JSON: `[[..], ..]` or `{"rows": [[..], ..], "targets": k}`.
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn matching(a: Match) -> Result<Outcome> {
    let cost = CostMatrix::from_json(&read(&a.cost)?)?;
    let m = hungarian(&cost)?;
    let total = m.total_cost(&cost);
    eprintln!("{}x{} matrix, total cost {total}", cost.size(), cost.size());
    let out = json!({
        "sigma": m.sigma,
        "prediction_to_target": m.target_of_prediction(),
        "targets": cost.targets(),
        "total_cost": total,
    });
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))?;
    let mut man = Manifest::new("match", json!({}));
    man.input(&a.cost)?;
    if let Some(o) = &a.out {
        man.output(o)?;
    }
    Ok(Outcome { manifest: man, manifest_path: beside(a.out.as_deref()) })
}

#[derive(Args, Debug)]
pub struct AuditMatching {
    #[arg(long, default_value_t = 500)]
    pub instances: usize,
    /// Largest query count; instances draw 1..=this queries.
    #[arg(long, default_value_t = 6)]
    pub max_queries: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub pixels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn audit(a: AuditMatching) -> Result<Outcome> {
    if a.max_queries == 0 || a.max_queries > 8 || a.classes == 0 || a.pixels == 0 {
        return Err(CliError::Usage("need 1..=8 queries and positive class and pixel counts".into()));
    }
    let cfg = AuditConfig {
        instances: a.instances,
        max_queries: a.max_queries,
        classes: a.classes,
        pixels: a.pixels,
        seed: a.seed,
        ..Default::default()
    };
    let r = run_audit(&cfg)?;
    eprintln!(
        "cost minimizer is also the loss minimizer on {} of {} instances (rate {:.4}); largest loss gap {:.6}",
        r.coincident, cfg.instances, r.rate, r.max_loss_gap
    );
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&r)? + "\n"))?;
    let mut m = Manifest::new("audit-matching", serde_json::to_value(&cfg)?);
    if let Some(o) = &a.out {
        m.output(o)?;
    }
    Ok(Outcome { manifest: m, manifest_path: beside(a.out.as_deref()) })
}
