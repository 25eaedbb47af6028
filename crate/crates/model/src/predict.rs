//! Soft predictions to a panoptic map.

use std::collections::BTreeMap;

use ppk_core::panoptic::VOID;
use ppk_core::{CategoryRegistry, PanopticMap};

use crate::network::PredictionSet;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Minimum top-class probability for a query to be kept.
    pub cls: f64,
    /// Minimum mask value of the winning query for a pixel to be labeled.
    pub mask: f64,
    /// Segments with fewer pixels are dropped to void.
    pub area: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { cls: 0.5, mask: 0.5, area: 4 }
    }
}

/// Keeps queries whose top class is not no-object with confidence `>= cls`, then
/// labels each pixel with the kept query maximizing `p_i(c_i) * m_i[x]`, provided
/// that query's mask value reaches `mask`. Small segments become void and stuff is
/// merged per class. Query `i` becomes segment `i + 1` before merging.
pub fn predict_panoptic(pred: &PredictionSet, reg: &CategoryRegistry, t: &Thresholds) -> Result<PanopticMap> {
    let (n, classes) = pred.probs.dims2()?;
    let hw = pred.height as usize * pred.width as usize;
    let no_object = classes - 1;
    let mut kept: Vec<(usize, u32, f64)> = Vec::new();
    for i in 0..n {
        let row = pred.probs.row(i);
        let (c, &score) = row
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if c == no_object || score < t.cls {
            continue;
        }
        if let Some(cat) = reg.by_position(c) {
            kept.push((i, cat.id, score));
        }
    }

    let mut pixels = vec![VOID; hw];
    for (x, px) in pixels.iter_mut().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &(i, _, score) in &kept {
            let v = score * pred.masks.get2(i, x);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            if pred.masks.get2(i, x) >= t.mask {
                *px = i as u32 + 1;
            }
        }
    }

    let mut area: BTreeMap<u32, u64> = BTreeMap::new();
    for &p in &pixels {
        if p != VOID {
            *area.entry(p).or_insert(0) += 1;
        }
    }
    for p in pixels.iter_mut() {
        if *p != VOID && area[p] < t.area {
            *p = VOID;
        }
    }
    let cat_of: BTreeMap<u32, u32> = kept.iter().map(|&(i, cat, _)| (i as u32 + 1, cat)).collect();
    let map = PanopticMap::from_raster(pred.width, pred.height, pixels, |id| cat_of.get(&id).copied())?;
    Ok(map.canonicalize_stuff(reg)?)
}
