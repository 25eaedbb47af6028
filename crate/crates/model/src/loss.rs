//! Segmentation, caption and joint losses.

use ppk_autodiff::{Graph, Tensor, Var};
use ppk_core::matching::{match_sets, Matching, PredictedSegment, TargetSegment};
use ppk_core::text::{END, PAD};
use ppk_core::{CategoryRegistry, PanopticMap};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::network::{LayerOutput, SegOutput};
use crate::{Error, Result};

/// Ground-truth segments of one image: class index (registry position) and hard mask
/// over `H*W` pixels. Stuff is canonicalized first, so each stuff class is one target.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub classes: Vec<usize>,
    pub masks: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn from_map(map: &PanopticMap, reg: &CategoryRegistry) -> Result<Self> {
        let map = map.canonicalize_stuff(reg)?;
        let mut gt = GroundTruth { classes: Vec::new(), masks: Vec::new() };
        for s in map.segments() {
            let class = reg
                .position(s.category_id)
                .ok_or_else(|| ppk_core::Error::Category(format!("unknown category {}", s.category_id)))?;
            gt.classes.push(class);
            gt.masks.push(map.pixels().iter().map(|&p| f64::from(p == s.id)).collect());
        }
        Ok(gt)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn targets(&self) -> Vec<TargetSegment> {
        self.classes
            .iter()
            .zip(&self.masks)
            .map(|(&class, mask)| TargetSegment { class, mask: mask.clone() })
            .collect()
    }
}

/// Optimal assignment for one layer's current predictions.
pub fn layer_matching(probs: &Tensor, masks: &Tensor, gt: &GroundTruth) -> Result<Matching> {
    let (n, _) = probs.dims2()?;
    let preds: Vec<PredictedSegment> = (0..n)
        .map(|i| PredictedSegment { probs: probs.row(i).to_vec(), mask: masks.row(i).to_vec() })
        .collect();
    Ok(match_sets(&preds, &gt.targets())?)
}

fn dice_loss_value(m: &[f64], g: &[f64], eps: f64) -> f64 {
    let inter: f64 = m.iter().zip(g).map(|(a, b)| a * b).sum();
    let total: f64 = m.iter().sum::<f64>() + g.iter().sum::<f64>();
    1.0 - (2.0 * inter + eps) / (total + eps)
}

/// The segmentation loss of one layer for a given assignment, on plain values:
/// `Σ_j [-w_j log p_σ(j)(c_j) + 1{c_j ≠ ∅} DiceLoss(m_σ(j), g_j)]`, where padding
/// slots have class ∅ and weight `no_object_weight`.
pub fn seg_loss_value(
    probs: &[Vec<f64>],
    masks: &[Vec<f64>],
    gt: &GroundTruth,
    sigma: &Matching,
    dice_eps: f64,
    no_object_weight: f64,
) -> f64 {
    let no_object = probs.first().map_or(0, Vec::len).saturating_sub(1);
    sigma
        .sigma
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            if j < gt.len() {
                -probs[i][gt.classes[j]].ln() + dice_loss_value(&masks[i], &gt.masks[j], dice_eps)
            } else {
                -no_object_weight * probs[i][no_object].ln()
            }
        })
        .sum()
}

/// Graph version of [`seg_loss_value`] for one layer.
pub fn loss_seg_layer(
    g: &mut Graph,
    layer: &LayerOutput,
    gt: &GroundTruth,
    sigma: &Matching,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (n, classes) = g.value(layer.log_probs).dims2()?;
    if sigma.sigma.len() != n || sigma.targets != gt.len() {
        return Err(Error::Input(format!(
            "matching over {} slots with {} targets does not fit {n} predictions and {} ground-truth segments",
            sigma.sigma.len(),
            sigma.targets,
            gt.len()
        )));
    }
    let no_object = classes - 1;
    let picks: Vec<usize> = sigma
        .sigma
        .iter()
        .enumerate()
        .map(|(j, &i)| i * classes + if j < gt.len() { gt.classes[j] } else { no_object })
        .collect();
    let weights = Tensor::from_fn(&[n], |j| if j < gt.len() { 1.0 } else { cfg.no_object_weight });
    let lp = g.gather(layer.log_probs, picks, &[n])?;
    let w = g.constant(weights)?;
    let weighted = g.mul(lp, w)?;
    let s = g.sum(weighted)?;
    let ce = g.neg(s)?;
    if gt.is_empty() {
        return Ok(ce);
    }

    let m = gt.len();
    let hw = g.shape(layer.masks)[1];
    let rows: Vec<usize> = sigma.sigma[..m].iter().flat_map(|&i| (i * hw)..(i + 1) * hw).collect();
    let sel = g.gather(layer.masks, rows, &[m, hw])?;
    let target = g.constant(Tensor::new(&[m, hw], gt.masks.concat())?)?;
    let prod = g.mul(sel, target)?;
    let inter = g.sum_axis(prod, 1)?;
    let num = g.scale(inter, 2.0)?;
    let num = g.add_scalar(num, cfg.dice_eps)?;
    let sp = g.sum_axis(sel, 1)?;
    let sg = Tensor::from_fn(&[m, 1], |j| gt.masks[j].iter().sum::<f64>() + cfg.dice_eps);
    let sg = g.constant(sg)?;
    let den = g.add(sp, sg)?;
    let ratio = g.div(num, den)?;
    let rs = g.sum(ratio)?;
    let neg = g.neg(rs)?;
    let dice = g.add_scalar(neg, m as f64)?;
    Ok(g.add(ce, dice)?)
}

/// Segmentation loss averaged over decoder layers, each with its own matching.
pub fn loss_seg(g: &mut Graph, seg: &SegOutput, gt: &GroundTruth, cfg: &ModelConfig) -> Result<(Var, Vec<Matching>)> {
    let mut total = None;
    let mut matchings = Vec::with_capacity(seg.layers.len());
    for layer in &seg.layers {
        let probs = g.value(layer.log_probs).map(f64::exp);
        let sigma = layer_matching(&probs, g.value(layer.masks), gt)?;
        let l = loss_seg_layer(g, layer, gt, &sigma, cfg)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
        matchings.push(sigma);
    }
    let total = total.ok_or_else(|| Error::Input("no decoder layers".into()))?;
    Ok((g.scale(total, 1.0 / seg.layers.len() as f64)?, matchings))
}

/// `-Σ_t log p_t(target_t)` over non-PAD targets.
pub fn loss_cap(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let (t, v) = g.value(logits).dims2()?;
    if targets.len() != t {
        return Err(Error::Input(format!("{t} decoder steps but {} targets", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&w| w >= v) {
        return Err(Error::Vocab { index: bad, size: v });
    }
    let picks: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != PAD)
        .map(|(i, &w)| i * v + w)
        .collect();
    let ls = g.log_softmax(logits)?;
    let n = picks.len();
    let lp = g.gather(ls, picks, &[n])?;
    let s = g.sum(lp)?;
    Ok(g.neg(s)?)
}

/// Teacher-forcing targets: the words followed by END.
pub fn caption_targets(caption: &[usize]) -> Vec<usize> {
    caption.iter().copied().chain(std::iter::once(END)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub l_seg: f64,
    pub l_cap: f64,
    pub l_total: f64,
    pub lambda: f64,
}

/// `L_total = L_seg + λ L_cap`.
pub fn loss_total(g: &mut Graph, l_seg: Var, l_cap: Var, lambda: f64) -> Result<(Var, LossReport)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Input(format!("lambda must be non-negative, got {lambda}")));
    }
    let wc = g.scale(l_cap, lambda)?;
    let total = g.add(l_seg, wc)?;
    let report = LossReport {
        l_seg: g.value(l_seg).item(),
        l_cap: g.value(l_cap).item(),
        l_total: g.value(total).item(),
        lambda,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt1(mask: Vec<f64>, class: usize) -> GroundTruth {
        GroundTruth { classes: vec![class], masks: vec![mask] }
    }

    #[test]
    fn perfect_prediction() {
        let gt = gt1(vec![1.0, 1.0, 0.0, 0.0], 0);
        let probs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let masks = vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0; 4]];
        let sigma = Matching::new(vec![0, 1], 1).unwrap();
        assert_eq!(seg_loss_value(&probs, &masks, &gt, &sigma, 1.0, 1.0), 0.0);
    }

    #[test]
    fn half_probability_on_no_object_pair() {
        let gt = GroundTruth { classes: vec![], masks: vec![] };
        let probs = vec![vec![0.5, 0.5]];
        let sigma = Matching::new(vec![0], 0).unwrap();
        let l = seg_loss_value(&probs, &[vec![0.3; 4]], &gt, &sigma, 1.0, 1.0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn disjoint_dice() {
        for k in [1usize, 3, 10] {
            let m: Vec<f64> = (0..2 * k).map(|i| f64::from(i < k)).collect();
            let g: Vec<f64> = (0..2 * k).map(|i| f64::from(i >= k)).collect();
            let eps = 1.0;
            let expect = 1.0 - eps / (2.0 * k as f64 + eps);
            assert!((dice_loss_value(&m, &g, eps) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_matches_values() {
        let cfg = ModelConfig { no_object_weight: 0.4, ..Default::default() };
        let logits = Tensor::from_fn(&[3, 3], |k| ((k * 7 % 5) as f64 - 2.0) * 0.4);
        let mlog = Tensor::from_fn(&[3, 4], |k| ((k * 3 % 7) as f64 - 3.0) * 0.5);
        let gt = GroundTruth { classes: vec![1, 0], masks: vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]] };
        let mut g = Graph::new();
        let l = g.param(logits).unwrap();
        let log_probs = g.log_softmax(l).unwrap();
        let ml = g.param(mlog).unwrap();
        let masks = g.sigmoid(ml).unwrap();
        let layer = LayerOutput { logits: l, log_probs, mask_embed: ml, masks };
        let sigma = Matching::new(vec![2, 0, 1], 2).unwrap();
        let v = loss_seg_layer(&mut g, &layer, &gt, &sigma, &cfg).unwrap();
        let probs: Vec<Vec<f64>> = (0..3).map(|i| g.value(log_probs).row(i).iter().map(|x| x.exp()).collect()).collect();
        let mv: Vec<Vec<f64>> = (0..3).map(|i| g.value(masks).row(i).to_vec()).collect();
        let expect = seg_loss_value(&probs, &mv, &gt, &sigma, cfg.dice_eps, cfg.no_object_weight);
        assert!((g.value(v).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn caption_loss_examples() {
        let mut g = Graph::new();
        let w = 7;
        let logits = g.constant(Tensor::zeros(&[4, w])).unwrap();
        let l = loss_cap(&mut g, logits, &[3, 4, 5, END]).unwrap();
        assert!((g.value(l).item() - 4.0 * (w as f64).ln()).abs() < 1e-12);
        let l = loss_cap(&mut g, logits, &[3, 4, END, PAD]).unwrap();
        assert!((g.value(l).item() - 3.0 * (w as f64).ln()).abs() < 1e-12);
        assert!(matches!(loss_cap(&mut g, logits, &[3, 4, 9, END]), Err(Error::Vocab { index: 9, .. })));

        let sharp = g.constant(Tensor::from_fn(&[2, 3], |k| if k == 1 || k == 5 { 800.0 } else { 0.0 })).unwrap();
        let l = loss_cap(&mut g, sharp, &[1, 2]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn total_loss() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::scalar(2.0)).unwrap();
        let c = g.constant(Tensor::scalar(3.0)).unwrap();
        assert_eq!(loss_total(&mut g, s, c, 1.0).unwrap().1.l_total, 5.0);
        assert_eq!(loss_total(&mut g, s, c, 0.0).unwrap().1.l_total, 2.0);
        assert!(matches!(loss_total(&mut g, s, c, -0.1), Err(Error::Input(_))));
    }
}
