//! Forward passes without training: panoptic prediction, captioning and features.

use ppk_autodiff::{Graph, Tensor};
use ppk_core::text::{END, PAD, START};
use ppk_core::{ImageRecord, PanopticMap};

use crate::beam::{beam_search, greedy_decode, DecodeOptions, Hypothesis, StepScorer};
use crate::network::{Model, PredictionSet, CAPTION_PREFIX};
use crate::predict::{predict_panoptic, Thresholds};
use crate::Result;

/// Everything the model says about one image, minus the caption.
#[derive(Clone, Debug)]
pub struct Inference {
    pub prediction: PredictionSet,
    pub map: PanopticMap,
    /// `F` as `[C_F, gh, gw]`.
    pub features: Tensor,
    /// Caption memory `F^` as `[cells, C_F]`.
    pub memory: Tensor,
}

impl Model {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds { cls: self.config.cls_threshold, mask: self.config.mask_threshold, area: self.config.area_threshold }
    }

    pub fn infer(&self, image: &ImageRecord) -> Result<Inference> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g)?;
        let pix = self.pixel_module(&mut g, &p, image)?;
        let seg = self.segmentation_module(&mut g, &p, &pix)?;
        let memory = self.caption_memory(&mut g, &p, pix.f)?;
        let prediction = PredictionSet::from_layer(&g, seg.last(), self.config.height, self.config.width);
        let map = predict_panoptic(&prediction, &self.registry, &self.thresholds())?;
        Ok(Inference { features: self.feature_map(&g, &pix)?, memory: g.value(memory).clone(), prediction, map })
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions { end: END, banned: vec![START, PAD], max_len: self.config.max_caption_len + 1 }
    }

    /// Beam search over the caption decoder (`beam_size == 1` is greedy).
    pub fn caption(&self, memory: &Tensor, beam_size: usize) -> Result<Hypothesis> {
        let mut scorer = ModelScorer { model: self, memory };
        let opts = self.decode_options();
        if beam_size <= 1 {
            greedy_decode(&mut scorer, &opts)
        } else {
            beam_search(&mut scorer, beam_size, &opts)
        }
    }

    /// Caption words for a decoded hypothesis.
    pub fn caption_words(&self, h: &Hypothesis) -> Result<Vec<String>> {
        Ok(self.vocab.decode(&h.tokens)?)
    }
}

/// Next-token log-probabilities from the caption decoder for fixed memory.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub memory: &'a Tensor,
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.model.params.bind_prefixed(&mut g, &[CAPTION_PREFIX])?;
        let mem = g.constant(self.memory.clone())?;
        let input = Model::teacher_input(prefix);
        let logits = self.model.caption_logits(&mut g, &p, mem, &input)?;
        let ls = g.log_softmax(logits)?;
        Ok(g.value(ls).row(input.len() - 1).to_vec())
    }
}
