use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppk_core::annotation::Dataset;
use ppk_core::codec::encode_png_rgb8;
use ppk_core::synth::SynthConfig;
use ppk_model::beam::{beam_search, greedy_decode};
use ppk_model::infer::ModelScorer;
use ppk_model::train::{load_run, CHECKPOINT_FILE, LAST_GOOD_FILE, METRICS_FILE};
use ppk_model::{Config, ModelConfig, TrainConfig};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppk")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn tiny_synth(dir: &Path) -> PathBuf {
    let synth = SynthConfig {
        width: 16,
        height: 16,
        glyph_min: 4,
        glyph_max: 5,
        max_things: 2,
        min_gap: 1,
        max_zones: 1,
        train_fraction: 1.0,
        ..Default::default()
    };
    let p = dir.join("synth.json");
    fs::write(&p, serde_json::to_string(&synth).unwrap()).unwrap();
    p
}

fn tiny_config(dir: &Path, pos_enc: bool) -> PathBuf {
    let c = Config {
        model: ModelConfig {
            height: 16,
            width: 16,
            stride: 4,
            c_f: 8,
            c_e: 8,
            c_q: 8,
            n_queries: 6,
            seg_layers: 1,
            cap_layers: 1,
            heads: 2,
            max_caption_len: 16,
            pos_enc,
            ..Default::default()
        },
        train: TrainConfig { epochs: 2, lr: 1e-2, seed: 1, ..Default::default() },
    };
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string(&c).unwrap()).unwrap();
    p
}

fn tiny_dataset(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("data");
    let synth = tiny_synth(dir);
    ok(&["gen-synth", "--n", &n.to_string(), "--seed", "2", "--config", s(&synth), "--out", s(&data)]);
    data
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["match", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["gen-synth", "--n", "1", "--out", "/tmp/x", "--threads", "0"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cand = dir.path().join("cand.txt");
    let refs = dir.path().join("refs.txt");
    fs::write(&cand, "a plane\n\n").unwrap();
    fs::write(&refs, "a plane\na jet\n").unwrap();
    assert_eq!(run(&["bleu", "--cand", s(&cand), "--refs", s(&refs)]).status.code(), Some(2));
}

#[test]
fn io_and_data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(run(&["pq-eval", "--pred", s(&missing), "--gt", s(&missing)]).status.code(), Some(3));

    let bad = dir.path().join("cost.json");
    fs::write(&bad, "[[1, 2], [3").unwrap();
    assert_eq!(run(&["match", "--cost", s(&bad)]).status.code(), Some(3));

    let file = dir.path().join("file");
    fs::write(&file, "").unwrap();
    assert_eq!(run(&["gen-synth", "--n", "1", "--out", s(&file.join("sub"))]).status.code(), Some(3));
}

#[test]
fn gen_synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-synth", "--n", "3", "--seed", "5", "--out", s(&a)]);
    ok(&["gen-synth", "--n", "3", "--seed", "5", "--out", s(&b)]);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());
    let m: Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(m["command"], "gen-synth");
    assert!(!m["outputs"].as_array().unwrap().is_empty());
}

#[test]
fn pq_eval_matches_hand_computed_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let pred = fixture("pq/pred");
    let gt = fixture("pq/gt");
    ok(&["pq-eval", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(fixture("pq/expected.json")).unwrap());
    assert!(dir.path().join("report.json.manifest.json").exists());
}

#[test]
fn pq_eval_warns_on_mismatched_images() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    fs::create_dir_all(gt.join("panoptic")).unwrap();
    fs::copy(fixture("pq/gt/panoptic/1.pidm"), gt.join("panoptic/1.pidm")).unwrap();
    let mut ann: Value = serde_json::from_slice(&fs::read(fixture("pq/gt/annotations.json")).unwrap()).unwrap();
    ann["images"].as_array_mut().unwrap().retain(|e| e["id"] != 2);
    ann["captions"].as_array_mut().map(|c| c.retain(|e| e["image_id"] != 2));
    fs::write(gt.join("annotations.json"), ann.to_string()).unwrap();

    let pred = fixture("pq/pred");
    let out = run(&["pq-eval", "--pred", s(&pred), "--gt", s(&gt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "{stderr}");
}

#[test]
fn bleu_of_identical_files_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("c.txt");
    fs::write(&f, "a small plane near the runway\nthree jets on grass\n").unwrap();
    let corpus = ok(&["bleu", "--cand", s(&f), "--refs", s(&f)]);
    assert_eq!(corpus["mode"], "corpus");
    assert_eq!(corpus["bleu4"].as_f64(), Some(1.0));
    let sentence = ok(&["bleu", "--cand", s(&f), "--refs", s(&f), "--sentence"]);
    let rows = sentence["sentences"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["bleu4"].as_f64() == Some(1.0)));
}

#[test]
fn match_reports_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let cost = dir.path().join("cost.json");
    fs::write(&cost, "[[4, 1, 3], [2, 0, 5], [3, 2, 2]]").unwrap();
    let out = run(&["match", "--cost", s(&cost)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total_cost"].as_f64(), Some(5.0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest: {"));
}

#[test]
fn train_resume_beam_and_saliency() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 3);
    let cfg = tiny_config(dir.path(), false);
    let runs = dir.path().join("run");
    ok(&["train-toy", "--data", s(&data), "--config", s(&cfg), "--epochs", "1", "--out", s(&runs)]);
    assert_eq!(fs::read_to_string(runs.join(METRICS_FILE)).unwrap().lines().count(), 1);
    let v = ok(&["train-toy", "--data", s(&data), "--resume", "--epochs", "2", "--out", s(&runs)]);
    assert_eq!(v["epochs"], 2);
    assert_eq!(fs::read_to_string(runs.join(METRICS_FILE)).unwrap().lines().count(), 2);
    assert!(runs.join(CHECKPOINT_FILE).exists());
    assert_eq!(run(&["train-toy", "--data", s(&data), "--resume", "--lr", "1", "--out", s(&runs)]).status.code(), Some(2));

    let ds = Dataset::load(&data).unwrap();
    let entry = &ds.images()[0];
    let image = data.join(&entry.file_name);
    let one = ok(&["beam", "--ckpt", s(&runs), "--image", s(&image), "--beam-size", "1"]);
    let three = ok(&["beam", "--ckpt", s(&runs), "--image", s(&image), "--beam-size", "3"]);
    assert!(three["score"].as_f64().unwrap() >= one["score"].as_f64().unwrap() - 1e-12);

    let model = load_run(&runs).unwrap();
    let inf = model.infer(&ds.load_image(entry).unwrap()).unwrap();
    let opts = model.decode_options();
    let greedy = greedy_decode(&mut ModelScorer { model: &model, memory: &inf.memory }, &opts).unwrap();
    let beam1 = beam_search(&mut ModelScorer { model: &model, memory: &inf.memory }, 1, &opts).unwrap();
    assert_eq!(beam1.tokens, greedy.tokens);
    let words: Vec<String> = serde_json::from_value(one["tokens"].clone()).unwrap();
    assert_eq!(words, model.caption_words(&greedy).unwrap());

    let flat = dir.path().join("flat.png");
    fs::write(&flat, encode_png_rgb8(16, 16, &[90u8; 16 * 16 * 3]).unwrap()).unwrap();
    let pgm = dir.path().join("sal.pgm");
    ok(&["saliency", "--ckpt", s(&runs), "--image", s(&flat), "--out", s(&pgm)]);
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5"));
    let pixels = &bytes[bytes.len() - 256..];
    assert!(pixels.iter().all(|&p| p == 0));
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path(), 2);
    let cfg = tiny_config(dir.path(), true);
    let runs = dir.path().join("run");
    let out = run(&["train-toy", "--data", s(&data), "--config", s(&cfg), "--lr", "1e300", "--out", s(&runs)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(runs.join(LAST_GOOD_FILE).exists());
}
