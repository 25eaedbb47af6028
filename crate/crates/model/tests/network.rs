use ppk_autodiff::{grad_check_on, Fault, GradCheckOptions, Graph, Tensor};
use ppk_core::synth::{caption_sentences, generate_scene, SynthConfig};
use ppk_core::text::{tokenize, Vocabulary};
use ppk_core::{Category, CategoryRegistry, ImageRecord};
use ppk_model::network::PIXEL_PREFIX;
use ppk_model::train::{build_vocabulary, lambda_additivity, total_loss, Sample};
use ppk_model::params::Bound;
use ppk_model::{Error, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seven_classes() -> CategoryRegistry {
    let cats = (1..=7).map(|i| Category::new(i, format!("c{i}"), i <= 4)).collect();
    CategoryRegistry::new(cats).unwrap()
}

fn words() -> Vocabulary {
    Vocabulary::from_words(["a", "b", "c", "d", "plane", "on", "the", "land"])
}

fn textured(w: u32, h: u32) -> ImageRecord {
    let px = (0..w * h).map(|k| [((k * 7) % 11) as f64 / 10.0, ((k * 3) % 5) as f64 / 4.0, ((k / w) % 2) as f64]).collect();
    ImageRecord::new("t", w, h, px).unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        stride: 4,
        c_f: 8,
        c_e: 8,
        c_q: 8,
        n_queries: 6,
        seg_layers: 2,
        cap_layers: 1,
        heads: 2,
        max_caption_len: 12,
        ..Default::default()
    }
}

#[test]
fn toy_shapes() {
    let m = Model::new(ModelConfig::default(), seven_classes(), words(), 1).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let pix = m.pixel_module(&mut g, &p, &textured(64, 64)).unwrap();
    assert_eq!(m.feature_map(&g, &pix).unwrap().shape(), &[32, 8, 8]);
    assert_eq!(g.shape(pix.e), &[32, 64 * 64]);
    let seg = m.segmentation_module(&mut g, &p, &pix).unwrap();
    assert_eq!(seg.layers.len(), 2);
    for layer in &seg.layers {
        assert_eq!(g.shape(layer.logits), &[10, 8]);
        assert_eq!(g.shape(layer.masks), &[10, 64 * 64]);
        assert_eq!(g.shape(layer.mask_embed), &[10, 32]);
        let probs = g.value(layer.log_probs).map(f64::exp);
        for i in 0..10 {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(g.value(layer.masks).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn bad_dimensions_rejected() {
    let cfg = ModelConfig { height: 60, ..Default::default() };
    assert!(matches!(Model::new(cfg, seven_classes(), words(), 0), Err(Error::Config(_))));
    let m = Model::new(ModelConfig::default(), seven_classes(), words(), 0).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let err = m.pixel_module(&mut g, &p, &textured(32, 32)).unwrap_err();
    assert!(matches!(err, Error::Core(ppk_core::Error::Shape(_))), "{err}");
}

fn feature_rows(m: &Model, image: &ImageRecord) -> Tensor {
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let pix = m.pixel_module(&mut g, &p, image).unwrap();
    g.value(pix.f).clone()
}

#[test]
fn constant_image_features() {
    let flat = ImageRecord::new("c", 64, 64, vec![[0.3, 0.6, 0.2]; 64 * 64]).unwrap();
    let no_pe = ModelConfig { pos_enc: false, ..Default::default() };
    let f = feature_rows(&Model::new(no_pe, seven_classes(), words(), 4).unwrap(), &flat);
    for r in 1..64 {
        assert_eq!(f.row(r), f.row(0), "cell {r}");
    }
    let f = feature_rows(&Model::new(ModelConfig::default(), seven_classes(), words(), 4).unwrap(), &flat);
    assert!((1..64).any(|r| f.row(r) != f.row(0)), "positional terms make cells differ");
}

fn seg_values(m: &Model) -> (Tensor, Tensor) {
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let pix = m.pixel_module(&mut g, &p, &textured(16, 16)).unwrap();
    let seg = m.segmentation_module(&mut g, &p, &pix).unwrap();
    (g.value(seg.last().logits).clone(), g.value(seg.last().masks).clone())
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn query_permutation_equivariance() {
    let m = Model::new(small_config(), seven_classes(), words(), 9).unwrap();
    let (logits, masks) = seg_values(&m);
    let perm = [2, 0, 5, 3, 1, 4];
    let mut q = m.clone();
    for name in ["seg.queries", "seg.query_pos"] {
        let t = permute_rows(q.params.get(name).unwrap(), &perm);
        *q.params.get_mut(name).unwrap() = t;
    }
    let (pl, pm) = seg_values(&q);
    assert!(pl.max_abs_diff(&permute_rows(&logits, &perm)) < 1e-12);
    assert!(pm.max_abs_diff(&permute_rows(&masks, &perm)) < 1e-12);
}

#[test]
fn identical_queries_identical_outputs() {
    let mut m = Model::new(small_config(), seven_classes(), words(), 2).unwrap();
    for name in ["seg.queries", "seg.query_pos"] {
        let t = m.params.get_mut(name).unwrap();
        let c = t.shape()[1];
        let first: Vec<f64> = t.row(0).to_vec();
        t.data_mut()[c..2 * c].copy_from_slice(&first);
    }
    let (logits, masks) = seg_values(&m);
    assert_eq!(logits.row(0), logits.row(1));
    assert_eq!(masks.row(0), masks.row(1));
    assert_ne!(logits.row(0), logits.row(2));
}

fn caption_probs(m: &Model, tokens: &[usize]) -> Tensor {
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let pix = m.pixel_module(&mut g, &p, &textured(16, 16)).unwrap();
    let mem = m.caption_memory(&mut g, &p, pix.f).unwrap();
    let logits = m.caption_logits(&mut g, &p, mem, tokens).unwrap();
    let ls = g.log_softmax(logits).unwrap();
    g.value(ls).map(f64::exp)
}

#[test]
fn caption_decoder_is_causal() {
    let m = Model::new(small_config(), seven_classes(), words(), 5).unwrap();
    let base = [0, 3, 4, 5, 6, 7];
    let p = caption_probs(&m, &base);
    for r in 0..base.len() {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for t in 1..base.len() {
        let mut changed = base;
        changed[t] = if base[t] == 9 { 8 } else { 9 };
        let q = caption_probs(&m, &changed);
        for r in 0..t {
            let d = p.row(r).iter().zip(q.row(r)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-12, "position {r} moved by {d} after changing token {t}");
        }
        assert_ne!(p.row(t), q.row(t));
    }
}

#[test]
fn out_of_vocabulary_token() {
    let m = Model::new(small_config(), seven_classes(), words(), 5).unwrap();
    let mut g = Graph::new();
    let p = m.params.bind(&mut g).unwrap();
    let pix = m.pixel_module(&mut g, &p, &textured(16, 16)).unwrap();
    let mem = m.caption_memory(&mut g, &p, pix.f).unwrap();
    let w = m.vocab.len();
    assert!(matches!(m.caption_logits(&mut g, &p, mem, &[0, w]), Err(Error::Vocab { index, size }) if index == w && size == w));
}

fn synthetic_sample(cfg: &ModelConfig, seed: u64) -> (Sample, Vocabulary) {
    let synth = SynthConfig {
        width: cfg.width,
        height: cfg.height,
        glyph_min: 5,
        glyph_max: 6,
        max_things: 2,
        min_gap: 1,
        ..Default::default()
    };
    let (scene, map, spec) = generate_scene(seed, &synth).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = scene.pixels().iter().map(|p| p.map(|v| 0.5 * v + 0.5 * rng.gen::<f64>())).collect();
    let image = ImageRecord::new("0", cfg.width, cfg.height, px).unwrap();
    let refs: Vec<Vec<String>> = caption_sentences(&spec, 2).iter().map(|s| tokenize(s)).collect();
    let vocab = build_vocabulary(&refs);
    let s = Sample::new("0", image, map, refs, &vocab, &CategoryRegistry::fine_grip(), cfg.max_caption_len).unwrap();
    (s, vocab)
}

fn module_loss(
    g: &mut Graph,
    model: &Model,
    p: &Bound,
    sample: &Sample,
    caption: &[usize],
    which: &str,
) -> ppk_model::Result<ppk_autodiff::Var> {
    match which {
        "pixel" => {
            let pix = model.pixel_module(g, p, &sample.image)?;
            let wf = g.constant(Tensor::from_fn(g.shape(pix.f), |k| ((k % 13) as f64 - 6.0) / 7.0))?;
            let we = g.constant(Tensor::from_fn(g.shape(pix.e), |k| ((k % 17) as f64 - 8.0) / 9.0))?;
            let a = g.mul(pix.f, wf)?;
            let b = g.mul(pix.e, we)?;
            let (a, b) = (g.sum(a)?, g.sum(b)?);
            Ok(g.add(a, b)?)
        }
        "caption" => {
            let pix = model.pixel_module(g, p, &sample.image)?;
            let mem = model.caption_memory(g, p, pix.f)?;
            let logits = model.caption_logits(g, p, mem, &Model::teacher_input(caption))?;
            ppk_model::loss::loss_cap(g, logits, &ppk_model::loss::caption_targets(caption))
        }
        _ => Ok(total_loss(g, model, p, sample, Some(caption), 1.0)?.0),
    }
}

/// Checks the derivative of the loss along a random direction `v` through all
/// parameters: the single input is `t` in `params + t v`, evaluated at `t = 0`.
fn directional_check(seed: u64, which: &str) -> f64 {
    directional_check_on(Graph::new(), seed, which)
}

fn directional_check_on(graph: Graph, seed: u64, which: &str) -> f64 {
    let cfg = small_config();
    let (sample, vocab) = synthetic_sample(&cfg, seed);
    let model = Model::new(cfg, CategoryRegistry::fine_grip(), vocab, seed).unwrap();
    let caption = sample.captions[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1);
    let dirs: Vec<Tensor> =
        model.params.tensors().iter().map(|t| Tensor::from_fn(&[t.len(), 1], |_| rng.gen_range(-1.0..1.0))).collect();
    let f = |g: &mut Graph, vars: &[ppk_autodiff::Var]| {
        let fail = |e: Error| ppk_autodiff::Error::Input(e.to_string());
        let mut moved = Vec::with_capacity(dirs.len());
        for (x, v) in model.params.tensors().iter().zip(&dirs) {
            let v = g.constant(v.clone())?;
            let step = g.matmul(v, vars[0])?;
            let step = g.reshape(step, x.shape())?;
            let x = g.constant(x.clone())?;
            moved.push(g.add(x, step)?);
        }
        let p = model.params.bound_from(moved).map_err(fail)?;
        module_loss(g, &model, &p, &sample, &caption, which).map_err(fail)
    };
    let r = grad_check_on(graph, f, &[Tensor::zeros(&[1, 1])], &GradCheckOptions::default()).unwrap();
    assert_eq!(r.probes, 1);
    let w = r.worst.unwrap();
    assert!(w.analytic.abs() > 1e-3, "{which}: direction too flat ({})", w.analytic);
    r.max_rel_error
}

#[test]
fn pixel_module_gradients() {
    for seed in [11, 12, 13] {
        let e = directional_check(seed, "pixel");
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn caption_loss_gradients() {
    for seed in [21, 22, 23] {
        let e = directional_check(seed, "caption");
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn total_loss_gradients() {
    for seed in [31, 32, 33] {
        let e = directional_check(seed, "total");
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn directional_check_catches_corrupted_backward() {
    for fault in [Fault::Softmax, Fault::LayerNorm, Fault::MatMul] {
        let e = directional_check_on(Graph::with_fault(fault), 31, "total");
        assert!(e > 1e-2, "{fault:?}: relative error only {e}");
    }
}

#[test]
fn lambda_gradient_additivity() {
    let cfg = small_config();
    let (sample, vocab) = synthetic_sample(&cfg, 21);
    let model = Model::new(cfg, CategoryRegistry::fine_grip(), vocab, 3).unwrap();
    for lambda in [0.0, 0.5, 1.0, 3.0] {
        let a = lambda_additivity(&model, &sample, &sample.captions[0], lambda).unwrap();
        assert!(a.max_abs_diff <= 1e-10, "lambda {lambda}: {}", a.max_abs_diff);
        assert!(a.cap_grad_norm > 1e-6, "caption gradient must reach {PIXEL_PREFIX} parameters");
        assert!(a.coordinates > 0);
    }
}

#[test]
fn beam_one_equals_greedy_on_model() {
    let cfg = small_config();
    let (sample, vocab) = synthetic_sample(&cfg, 31);
    let model = Model::new(cfg, CategoryRegistry::fine_grip(), vocab, 8).unwrap();
    let inf = model.infer(&sample.image).unwrap();
    let greedy = ppk_model::beam::greedy_decode(
        &mut ppk_model::infer::ModelScorer { model: &model, memory: &inf.memory },
        &model.decode_options(),
    )
    .unwrap();
    assert_eq!(model.caption(&inf.memory, 1).unwrap(), greedy);
    for k in [3, 5] {
        assert!(model.caption(&inf.memory, k).unwrap().score() >= greedy.score());
    }
}
