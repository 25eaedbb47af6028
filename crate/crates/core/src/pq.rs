//! Panoptic Quality evaluation.
//!
//! A predicted and a ground-truth segment form a true positive when they share a
//! category and their IoU is strictly above 0.5, which makes matches unique. Pixels
//! that are void in the ground truth are removed from a prediction's area when
//! computing the union. Per class:
//!
//! ```text
//! PQ = Σ IoU / (TP + FP/2 + FN/2)    SQ = Σ IoU / TP    RQ = TP / (TP + FP/2 + FN/2)
//! ```
//!
//! Aggregates are unweighted means over classes with at least one TP, FP or FN.

use std::collections::{BTreeMap, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::panoptic::{CategoryRegistry, PanopticMap, VOID};
use crate::{Error, Result};

pub const MATCH_IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
    }
}

/// TP/FP/FN counts and IoU sums per category id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PQAccumulator {
    pub per_class: BTreeMap<u32, ClassCounts>,
}

impl PQAccumulator {
    pub fn class_mut(&mut self, category_id: u32) -> &mut ClassCounts {
        self.per_class.entry(category_id).or_default()
    }
}

impl std::ops::AddAssign<&PQAccumulator> for PQAccumulator {
    fn add_assign(&mut self, o: &PQAccumulator) {
        for (&c, counts) in &o.per_class {
            *self.class_mut(c) += *counts;
        }
    }
}

impl std::ops::Add<&PQAccumulator> for PQAccumulator {
    type Output = PQAccumulator;
    fn add(mut self, o: &PQAccumulator) -> PQAccumulator {
        self += o;
        self
    }
}

/// Matches the segments of one image pair. Both maps are stuff-canonicalized first.
pub fn match_segments(pred: &PanopticMap, gt: &PanopticMap, reg: &CategoryRegistry) -> Result<PQAccumulator> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let pred = pred.canonicalize_stuff(reg)?;
    let gt = gt.canonicalize_stuff(reg)?;

    let pred_area = pred.areas();
    let gt_area = gt.areas();
    let mut inter: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pred_on_void: HashMap<u32, u64> = HashMap::new();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        if p == VOID {
            continue;
        }
        if g == VOID {
            *pred_on_void.entry(p).or_default() += 1;
        } else {
            *inter.entry((p, g)).or_default() += 1;
        }
    }

    let mut acc = PQAccumulator::default();
    let mut pred_matched: BTreeMap<u32, bool> = pred_area.keys().map(|&k| (k, false)).collect();
    let mut gt_matched: BTreeMap<u32, bool> = gt_area.keys().map(|&k| (k, false)).collect();
    let mut pairs: Vec<_> = inter.into_iter().collect();
    pairs.sort_unstable_by_key(|&(k, _)| k);
    for ((p, g), i) in pairs {
        let (pc, gc) = (pred.category_of(p).unwrap(), gt.category_of(g).unwrap());
        if pc != gc {
            continue;
        }
        let union = pred_area[&p] + gt_area[&g] - i - pred_on_void.get(&p).copied().unwrap_or(0);
        let iou = i as f64 / union as f64;
        if iou > MATCH_IOU_THRESHOLD {
            let pm = pred_matched.get_mut(&p).unwrap();
            let gm = gt_matched.get_mut(&g).unwrap();
            assert!(!*pm && !*gm, "segment matched twice ({p}, {g})");
            *pm = true;
            *gm = true;
            let c = acc.class_mut(gc);
            c.tp += 1;
            c.iou_sum += iou;
        }
    }
    for (g, matched) in gt_matched {
        if !matched {
            acc.class_mut(gt.category_of(g).unwrap()).fn_ += 1;
        }
    }
    for (p, matched) in pred_matched {
        if !matched {
            acc.class_mut(pred.category_of(p).unwrap()).fp += 1;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quality {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub category_id: u32,
    pub name: String,
    pub is_thing: bool,
    pub quality: Quality,
    pub counts: ClassCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PQReport {
    /// Only classes that occur in the prediction or the ground truth.
    pub per_class: Vec<ClassReport>,
    pub all: Quality,
    pub things: Quality,
    pub stuff: Quality,
}

pub fn class_quality(c: &ClassCounts) -> Quality {
    let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
    if denom == 0.0 {
        return Quality::default();
    }
    let sq = if c.tp == 0 { 0.0 } else { c.iou_sum / c.tp as f64 };
    Quality { pq: c.iou_sum / denom, sq, rq: c.tp as f64 / denom }
}

fn mean<'a>(qs: impl Iterator<Item = &'a Quality>) -> Quality {
    let (mut sum, mut n) = (Quality::default(), 0usize);
    for q in qs {
        sum.pq += q.pq;
        sum.sq += q.sq;
        sum.rq += q.rq;
        n += 1;
    }
    if n == 0 {
        return sum;
    }
    let n = n as f64;
    Quality { pq: sum.pq / n, sq: sum.sq / n, rq: sum.rq / n }
}

pub fn compute_report(acc: &PQAccumulator, reg: &CategoryRegistry) -> Result<PQReport> {
    let mut per_class = Vec::new();
    for (&id, counts) in &acc.per_class {
        if counts.tp + counts.fp + counts.fn_ == 0 {
            continue;
        }
        let cat = reg
            .get(id)
            .ok_or_else(|| Error::Category(format!("unknown category {id} in accumulator")))?;
        per_class.push(ClassReport {
            category_id: id,
            name: cat.name.clone(),
            is_thing: cat.is_thing,
            quality: class_quality(counts),
            counts: *counts,
        });
    }
    let all = mean(per_class.iter().map(|c| &c.quality));
    let things = mean(per_class.iter().filter(|c| c.is_thing).map(|c| &c.quality));
    let stuff = mean(per_class.iter().filter(|c| !c.is_thing).map(|c| &c.quality));
    Ok(PQReport { per_class, all, things, stuff })
}

#[derive(Clone, Debug)]
pub struct DatasetEvaluation {
    pub report: PQReport,
    pub accumulator: PQAccumulator,
    pub warnings: Vec<String>,
}

/// Evaluates every ground-truth image. A missing prediction counts as an all-void map;
/// predictions for unknown images are ignored. Both cases produce warnings.
///
/// Images are processed in parallel on `threads` workers (rayon's global pool when
/// `None`), but accumulators are always summed in image-id order so the result does
/// not depend on scheduling.
pub fn evaluate_dataset(
    preds: &BTreeMap<String, PanopticMap>,
    gts: &BTreeMap<String, PanopticMap>,
    reg: &CategoryRegistry,
    threads: Option<usize>,
) -> Result<DatasetEvaluation> {
    let mut warnings = Vec::new();
    for id in preds.keys().filter(|k| !gts.contains_key(*k)) {
        warnings.push(format!("prediction for unknown image {id:?} ignored"));
    }
    for id in gts.keys().filter(|k| !preds.contains_key(*k)) {
        warnings.push(format!("missing prediction for image {id:?}; treated as empty"));
    }
    for w in &warnings {
        warn!("{w}");
    }

    let work = || -> Result<Vec<PQAccumulator>> {
        gts.par_iter()
            .map(|(id, gt)| match preds.get(id) {
                Some(p) => match_segments(p, gt, reg),
                None => match_segments(&PanopticMap::void(gt.width(), gt.height()), gt, reg),
            })
            .collect()
    };
    let per_image = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut accumulator = PQAccumulator::default();
    for acc in &per_image {
        accumulator += acc;
    }
    let report = compute_report(&accumulator, reg)?;
    Ok(DatasetEvaluation { report, accumulator, warnings })
}

fn fixed6(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{x:.6}")).expect("formatted float is valid json")
}

#[derive(Serialize)]
struct JsonQuality {
    pq: Box<RawValue>,
    sq: Box<RawValue>,
    rq: Box<RawValue>,
}

impl From<&Quality> for JsonQuality {
    fn from(q: &Quality) -> Self {
        JsonQuality { pq: fixed6(q.pq), sq: fixed6(q.sq), rq: fixed6(q.rq) }
    }
}

#[derive(Serialize)]
struct JsonClass {
    pq: Box<RawValue>,
    sq: Box<RawValue>,
    rq: Box<RawValue>,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    per_class: BTreeMap<&'a str, JsonClass>,
    all: JsonQuality,
    things: JsonQuality,
    stuff: JsonQuality,
}

impl PQReport {
    /// Pretty JSON with every float printed to 6 decimals.
    pub fn to_json(&self) -> String {
        let per_class = self
            .per_class
            .iter()
            .map(|c| {
                let q = &c.quality;
                (c.name.as_str(), JsonClass {
                    pq: fixed6(q.pq),
                    sq: fixed6(q.sq),
                    rq: fixed6(q.rq),
                    tp: c.counts.tp,
                    fp: c.counts.fp,
                    fn_: c.counts.fn_,
                })
            })
            .collect();
        let r = JsonReport {
            per_class,
            all: (&self.all).into(),
            things: (&self.things).into(),
            stuff: (&self.stuff).into(),
        };
        serde_json::to_string_pretty(&r).expect("report serializes")
    }

    pub fn class(&self, category_id: u32) -> Option<&ClassReport> {
        self.per_class.iter().find(|c| c.category_id == category_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panoptic::{Category, Segment};

    fn reg() -> CategoryRegistry {
        CategoryRegistry::new(vec![Category::new(1, "A1", true), Category::new(2, "Land", false)]).unwrap()
    }

    fn map(w: u32, px: Vec<u32>, segs: &[(u32, u32)]) -> PanopticMap {
        let h = px.len() as u32 / w;
        let segs = segs.iter().map(|&(id, category_id)| Segment { id, category_id }).collect();
        PanopticMap::new(w, h, px, segs).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let gt = map(2, vec![1, 1, 2, 3], &[(1, 2), (2, 1), (3, 1)]);
        let acc = match_segments(&gt, &gt, &reg()).unwrap();
        assert_eq!(acc.per_class[&1], ClassCounts { tp: 2, fp: 0, fn_: 0, iou_sum: 2.0 });
        let r = compute_report(&acc, &reg()).unwrap();
        assert_eq!(r.all, Quality { pq: 1.0, sq: 1.0, rq: 1.0 });
    }

    #[test]
    fn low_iou_thing_is_fp_and_fn() {
        // GT: thing on the top row, Land on the bottom row.
        let gt = map(2, vec![1, 1, 2, 2], &[(1, 1), (2, 2)]);
        // Prediction: thing covers one GT-thing pixel and one Land pixel.
        let pred = map(2, vec![1, 2, 1, 2], &[(1, 1), (2, 2)]);
        let acc = match_segments(&pred, &gt, &reg()).unwrap();
        assert_eq!(acc.per_class[&1], ClassCounts { tp: 0, fp: 1, fn_: 1, iou_sum: 0.0 });
        assert_eq!(acc.per_class[&2].tp + acc.per_class[&2].fp + acc.per_class[&2].fn_, 2);
    }

    #[test]
    fn spurious_segment_adds_one_fp() {
        let gt = map(3, vec![2, 2, 2, 1, 1, 2], &[(1, 1), (2, 2)]);
        let pred = map(3, vec![2, 2, 5, 1, 1, 2], &[(1, 1), (2, 2), (5, 1)]);
        let base = match_segments(&gt, &gt, &reg()).unwrap();
        let acc = match_segments(&pred, &gt, &reg()).unwrap();
        assert_eq!(acc.per_class[&1].fp, base.per_class[&1].fp + 1);
        assert_eq!(acc.per_class[&1].tp, 1);
    }

    #[test]
    fn void_gt_pixels_leave_union() {
        let gt = map(4, vec![1, 1, 0, 0], &[(1, 1)]);
        let pred = map(4, vec![1, 1, 1, 0], &[(1, 1)]);
        let acc = match_segments(&pred, &gt, &reg()).unwrap();
        assert_eq!(acc.per_class[&1].iou_sum, 1.0);
    }

    #[test]
    fn formula_example() {
        let mut acc = PQAccumulator::default();
        *acc.class_mut(1) = ClassCounts { tp: 1, fp: 0, fn_: 1, iou_sum: 0.8 };
        let r = compute_report(&acc, &reg()).unwrap();
        let q = r.class(1).unwrap().quality;
        assert!((q.pq - 0.8 / 1.5).abs() < 1e-15);
        assert!((q.sq - 0.8).abs() < 1e-15);
        assert!((q.rq - 1.0 / 1.5).abs() < 1e-15);
        assert!((q.pq - q.sq * q.rq).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = map(2, vec![1, 1, 2, 2], &[(1, 1), (2, 2)]);
        let acc = match_segments(&PanopticMap::void(2, 2), &gt, &reg()).unwrap();
        let r = compute_report(&acc, &reg()).unwrap();
        assert_eq!(r.all.pq, 0.0);
        assert_eq!(r.all.sq, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = PanopticMap::void(2, 2);
        let b = PanopticMap::void(2, 3);
        assert!(matches!(match_segments(&a, &b, &reg()), Err(Error::Shape(_))));
    }

    #[test]
    fn dataset_missing_prediction_warns() {
        let gt = map(2, vec![1, 1, 2, 2], &[(1, 1), (2, 2)]);
        let gts: BTreeMap<_, _> = [("a".to_string(), gt.clone()), ("b".to_string(), gt.clone())].into();
        let preds: BTreeMap<_, _> = [("a".to_string(), gt.clone()), ("z".to_string(), gt)].into();
        let ev = evaluate_dataset(&preds, &gts, &reg(), Some(2)).unwrap();
        assert_eq!(ev.warnings.len(), 2);
        assert_eq!(ev.report.class(1).unwrap().counts.fn_, 1);
    }

    #[test]
    fn json_uses_six_decimals() {
        let gt = map(2, vec![1, 1, 2, 2], &[(1, 1), (2, 2)]);
        let acc = match_segments(&gt, &gt, &reg()).unwrap();
        let json = compute_report(&acc, &reg()).unwrap().to_json();
        assert!(json.contains("\"pq\": 1.000000"), "{json}");
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["per_class"]["A1"]["tp"], 1);
        assert_eq!(v["stuff"]["rq"].as_f64(), Some(1.0));
    }
}
