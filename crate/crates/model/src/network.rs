//! The joint network: pixel module, query-based segmentation module and caption
//! module sharing the pixel features `F`.

use ppk_autodiff::{Graph, Tensor, Var};
use ppk_core::text::{Vocabulary, START};
use ppk_core::{CategoryRegistry, ImageRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::layers::{self, causal_mask, sinusoid, sinusoid_2d};
use crate::params::{Bound, ParamStore};
use crate::{Error, Result};

/// Prefix of parameters belonging to the shared pixel module.
pub const PIXEL_PREFIX: &str = "pixel.";
/// Prefix of caption-only parameters.
pub const CAPTION_PREFIX: &str = "cap.";
/// Prefix of segmentation-only parameters.
pub const SEGMENT_PREFIX: &str = "seg.";

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub registry: CategoryRegistry,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

/// `F` as `[cells, C_F]` (row-major grid cells) and `E` as `[C_E, H*W]`.
#[derive(Clone, Copy, Debug)]
pub struct PixelOutput {
    pub f: Var,
    pub e: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// `[N, C+1]`, last column is no-object.
    pub logits: Var,
    pub log_probs: Var,
    /// `Q_mask`, `[N, C_E]`.
    pub mask_embed: Var,
    /// `sigmoid(Q_mask E)`, `[N, H*W]`.
    pub masks: Var,
}

/// Per-decoder-layer outputs; the last entry is the final prediction.
#[derive(Clone, Debug)]
pub struct SegOutput {
    pub layers: Vec<LayerOutput>,
}

impl SegOutput {
    pub fn last(&self) -> &LayerOutput {
        self.layers.last().expect("at least one decoder layer")
    }
}

/// Plain values of one layer's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// `[N, C+1]` rows summing to 1.
    pub probs: Tensor,
    /// `[N, H*W]` in `(0, 1)`.
    pub masks: Tensor,
    pub height: u32,
    pub width: u32,
}

impl PredictionSet {
    pub fn from_layer(g: &Graph, layer: &LayerOutput, height: u32, width: u32) -> Self {
        PredictionSet { probs: g.value(layer.log_probs).map(f64::exp), masks: g.value(layer.masks).clone(), height, width }
    }
}

impl Model {
    /// A freshly initialized model. Class `k` of the heads is the registry's `k`-th
    /// category; index `C` is no-object.
    pub fn new(config: ModelConfig, registry: CategoryRegistry, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if registry.is_empty() {
            return Err(Error::Config("empty category registry".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let s = c.stride as usize;
        let (gh, gw) = c.grid();
        let classes = registry.len() + 1;

        layers::init_linear(&mut p, "pixel.patch", s * s * 3, c.c_f, &mut rng);
        layers::init_encoder_block(&mut p, "pixel.enc", c.c_f, c.ffn_mult, &mut rng);
        layers::init_encoder_block(&mut p, "pixel.dec", c.c_f, c.ffn_mult, &mut rng);
        layers::init_linear(&mut p, "pixel.up", c.c_f, s * s * c.c_e, &mut rng);
        if c.color_skip {
            layers::init_linear(&mut p, "pixel.rgb1", 3, c.c_e, &mut rng);
            layers::init_linear(&mut p, "pixel.rgb2", c.c_e, c.c_e, &mut rng);
        }

        p.add_glorot("seg.queries", c.n_queries, c.c_q, &mut rng);
        if c.pos_enc {
            p.add("seg.query_pos", sinusoid(c.n_queries, c.c_q));
        }
        for l in 0..c.seg_layers {
            layers::init_decoder_block(&mut p, &format!("seg.layer{l}"), c.c_q, c.c_f, c.ffn_mult, &mut rng);
        }
        layers::init_linear(&mut p, "seg.class", c.c_q, classes, &mut rng);
        layers::init_linear(&mut p, "seg.mask1", c.c_q, c.c_q, &mut rng);
        layers::init_linear(&mut p, "seg.mask2", c.c_q, c.c_e, &mut rng);

        layers::init_attention(&mut p, "cap.fattn", c.c_f, c.c_f, c.c_f, &mut rng);
        layers::init_linear(&mut p, "cap.lin1", c.c_f, c.c_f, &mut rng);
        layers::init_linear(&mut p, "cap.lin2", c.c_f, c.c_f, &mut rng);
        p.add_glorot("cap.embed", vocab.len(), c.c_f, &mut rng);
        for l in 0..c.cap_layers {
            layers::init_decoder_block(&mut p, &format!("cap.layer{l}"), c.c_f, c.c_f, c.ffn_mult, &mut rng);
        }
        layers::init_linear(&mut p, "cap.out", c.c_f, vocab.len(), &mut rng);

        debug_assert!(gh * gw > 0);
        Ok(Model { config, registry, vocab, params: p })
    }

    pub fn num_classes(&self) -> usize {
        self.registry.len()
    }

    fn check_image(&self, image: &ImageRecord) -> Result<()> {
        if (image.width(), image.height()) != (self.config.width, self.config.height) {
            return Err(ppk_core::Error::Shape(format!(
                "image is {}x{}, model expects {}x{}",
                image.width(),
                image.height(),
                self.config.width,
                self.config.height
            ))
            .into());
        }
        Ok(())
    }

    /// Patch embedding and one encoder block give `F`; a second block on `F`, a
    /// learned per-cell upsampling to `S x S` pixels and (optionally) a two-layer
    /// per-pixel color MLP give `E`. With positional encodings on, a fixed pixel-level
    /// encoding is added to `E` before it is normalized over channels at every pixel.
    pub fn pixel_module(&self, g: &mut Graph, p: &Bound, image: &ImageRecord) -> Result<PixelOutput> {
        self.check_image(image)?;
        let c = &self.config;
        let s = c.stride as usize;
        let (w, h) = (c.width as usize, c.height as usize);
        let (gh, gw) = c.grid();
        let px = image.pixels();

        let patches = Tensor::from_fn(&[gh * gw, s * s * 3], |k| {
            let (cell, rest) = (k / (s * s * 3), k % (s * s * 3));
            let (within, ch) = (rest / 3, rest % 3);
            let y = (cell / gw) * s + within / s;
            let x = (cell % gw) * s + within % s;
            px[y * w + x][ch]
        });
        let patches = g.constant(patches)?;
        let mut f0 = layers::linear(g, p, "pixel.patch", patches)?;
        if c.pos_enc {
            let pe = g.constant(sinusoid_2d(gh, gw, c.c_f))?;
            f0 = g.add(f0, pe)?;
        }
        let f = layers::encoder_block(g, p, "pixel.enc", f0, c.heads, c.layer_norm_eps)?;

        let d = layers::encoder_block(g, p, "pixel.dec", f, c.heads, c.layer_norm_eps)?;
        let up = layers::linear(g, p, "pixel.up", d)?;
        let block = s * s * c.c_e;
        let index = (0..c.c_e * h * w)
            .map(|k| {
                let (ch, pix) = (k / (h * w), k % (h * w));
                let (y, x) = (pix / w, pix % w);
                let cell = (y / s) * gw + x / s;
                let within = (y % s) * s + x % s;
                cell * block + within * c.c_e + ch
            })
            .collect();
        let mut e = g.gather(up, index, &[c.c_e, h * w])?;
        if c.color_skip {
            let rgb = g.constant(Tensor::from_fn(&[h * w, 3], |k| px[k / 3][k % 3]))?;
            let hid = layers::linear(g, p, "pixel.rgb1", rgb)?;
            let hid = g.relu(hid)?;
            let skip = layers::linear(g, p, "pixel.rgb2", hid)?;
            let skip = g.transpose(skip)?;
            e = g.add(e, skip)?;
        }
        let mut et = g.transpose(e)?;
        if c.pos_enc {
            let pe = g.constant(sinusoid_2d(h, w, c.c_e))?;
            et = g.add(et, pe)?;
        }
        let et = g.layer_norm(et, c.layer_norm_eps)?;
        let e = g.transpose(et)?;
        Ok(PixelOutput { f, e })
    }

    /// Query decoder without attention masking. Every layer's queries go through the
    /// shared class and mask heads. `Q_mask` rows are normalized and scaled by
    /// `mask_scale / C_E`, which keeps every mask logit within `mask_scale` of the
    /// constant offset `logit(mask_prior)`.
    pub fn segmentation_module(&self, g: &mut Graph, p: &Bound, pix: &PixelOutput) -> Result<SegOutput> {
        let c = &self.config;
        let mut q = p.var("seg.queries");
        let pos = c.pos_enc.then(|| p.var("seg.query_pos"));
        let prior = (c.mask_prior / (1.0 - c.mask_prior)).ln();
        let mut layers_out = Vec::with_capacity(c.seg_layers);
        for l in 0..c.seg_layers {
            q = layers::decoder_block(g, p, &format!("seg.layer{l}"), q, pix.f, pos, None, c.heads, c.layer_norm_eps)?;
            let logits = layers::linear(g, p, "seg.class", q)?;
            let log_probs = g.log_softmax(logits)?;
            let m = layers::linear(g, p, "seg.mask1", q)?;
            let m = g.relu(m)?;
            let m = layers::linear(g, p, "seg.mask2", m)?;
            let m = g.layer_norm(m, c.layer_norm_eps)?;
            let mask_embed = g.scale(m, c.mask_scale / c.c_e as f64)?;
            let mask_logits = g.matmul(mask_embed, pix.e)?;
            let mask_logits = g.add_scalar(mask_logits, prior)?;
            let masks = g.sigmoid(mask_logits)?;
            layers_out.push(LayerOutput { logits, log_probs, mask_embed, masks });
        }
        Ok(SegOutput { layers: layers_out })
    }

    /// `F' = MHA(F, F, F)`, `F^ = relu(Lin(relu(Lin F')) + F')`.
    pub fn caption_memory(&self, g: &mut Graph, p: &Bound, f: Var) -> Result<Var> {
        let fp = layers::attention(g, p, "cap.fattn", f, f, f, self.config.heads, None)?;
        let h = layers::linear(g, p, "cap.lin1", fp)?;
        let h = g.relu(h)?;
        let h = layers::linear(g, p, "cap.lin2", h)?;
        let r = g.add(h, fp)?;
        Ok(g.relu(r)?)
    }

    /// Next-token logits `[T, W]` for the input tokens (START first). Row `t`
    /// depends only on tokens `0..=t`.
    pub fn caption_logits(&self, g: &mut Graph, p: &Bound, memory: Var, tokens: &[usize]) -> Result<Var> {
        let c = &self.config;
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab.len()) {
            return Err(Error::Vocab { index: bad, size: self.vocab.len() });
        }
        if tokens.is_empty() {
            return Err(Error::Input("caption decoder needs at least the START token".into()));
        }
        let n = tokens.len();
        let mut x = g.embedding(p.var("cap.embed"), tokens)?;
        if c.pos_enc {
            let pe = g.constant(sinusoid(n, c.c_f))?;
            x = g.add(x, pe)?;
        }
        let mask = causal_mask(n);
        for l in 0..c.cap_layers {
            x = layers::decoder_block(g, p, &format!("cap.layer{l}"), x, memory, None, Some(&mask), c.heads, c.layer_norm_eps)?;
        }
        layers::linear(g, p, "cap.out", x)
    }

    /// Teacher-forced decoder input for a caption: START followed by the words.
    pub fn teacher_input(caption: &[usize]) -> Vec<usize> {
        std::iter::once(START).chain(caption.iter().copied()).collect()
    }

    /// `F` rearranged to `[C_F, gh, gw]` values.
    pub fn feature_map(&self, g: &Graph, pix: &PixelOutput) -> Result<Tensor> {
        let (gh, gw) = self.config.grid();
        Ok(g.value(pix.f).transposed()?.reshaped(&[self.config.c_f, gh, gw])?)
    }
}
