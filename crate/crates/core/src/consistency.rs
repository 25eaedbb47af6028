//! Caption ↔ segmentation consistency.
//!
//! Captions are scanned for `(count, class)` pairs: a number word (`one`..`twenty`)
//! or digit literal followed, possibly after other words, by a thing class name.
//! A class named without a number counts once, and repeated mentions accumulate.
//! The resulting claim is compared with the thing instances of the panoptic map.
//!
//! The dataset-level rate (fraction of images whose every caption agrees with the
//! map) is a proposed metric, not an established one.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::panoptic::{CategoryRegistry, PanopticMap};
use crate::text::tokenize;

const NUMBER_WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
    "twenty",
];

pub fn number_word(n: u32) -> String {
    match n {
        1..=20 => NUMBER_WORDS[n as usize - 1].to_string(),
        _ => n.to_string(),
    }
}

pub fn parse_number(token: &str) -> Option<u32> {
    NUMBER_WORDS
        .iter()
        .position(|w| *w == token)
        .map(|i| i as u32 + 1)
        .or_else(|| token.parse().ok())
}

/// Per-class instance counts, keyed by category display name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CountClaim {
    pub counts: BTreeMap<String, u32>,
    /// Stuff classes mentioned, in order of appearance.
    pub stuff_mentions: Vec<String>,
    /// Set when a caption names no thing class at all.
    pub warning: bool,
}

pub fn parse_caption<S: AsRef<str>>(tokens: &[S], reg: &CategoryRegistry) -> CountClaim {
    let mut claim = CountClaim::default();
    let mut pending: Option<u32> = None;
    for tok in tokens {
        let tok = tok.as_ref().to_lowercase();
        if let Some(n) = parse_number(&tok) {
            pending = Some(n);
            continue;
        }
        match reg.by_name(&tok) {
            Some(c) if c.is_thing => {
                let n = claim.counts.entry(c.name.clone()).or_insert(0);
                *n = n.saturating_add(pending.take().unwrap_or(1));
            }
            Some(c) => {
                if !claim.stuff_mentions.contains(&c.name) {
                    claim.stuff_mentions.push(c.name.clone());
                }
            }
            None => {}
        }
    }
    claim.counts.retain(|_, n| *n > 0);
    claim.warning = claim.counts.is_empty();
    claim
}

pub fn parse_caption_text(sentence: &str, reg: &CategoryRegistry) -> CountClaim {
    parse_caption(&tokenize(sentence), reg)
}

/// Number of distinct thing segments per class.
pub fn instance_counts(map: &PanopticMap, reg: &CategoryRegistry) -> CountClaim {
    let mut claim = CountClaim::default();
    for s in map.segments() {
        if let Some(c) = reg.get(s.category_id).filter(|c| c.is_thing) {
            *claim.counts.entry(c.name.clone()).or_insert(0) += 1;
        }
    }
    claim
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffKind {
    /// Claimed more instances than present (including classes absent from the map).
    OverClaimed,
    /// Mentioned with fewer instances than present.
    UnderClaimed,
    /// Present in the map but never mentioned.
    Missing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Discrepancy {
    pub class: String,
    pub kind: DiffKind,
    pub claimed: u32,
    pub actual: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub consistent: bool,
    pub matched: Vec<String>,
    pub diffs: Vec<Discrepancy>,
}

pub fn check_consistency(claim: &CountClaim, truth: &CountClaim) -> Verdict {
    let mut v = Verdict::default();
    let classes: std::collections::BTreeSet<&String> = claim.counts.keys().chain(truth.counts.keys()).collect();
    for class in classes {
        let c = claim.counts.get(class).copied().unwrap_or(0);
        let t = truth.counts.get(class).copied().unwrap_or(0);
        let kind = match (c, t) {
            _ if c == t => {
                v.matched.push(class.clone());
                continue;
            }
            (0, _) => DiffKind::Missing,
            _ if c > t => DiffKind::OverClaimed,
            _ => DiffKind::UnderClaimed,
        };
        v.diffs.push(Discrepancy { class: class.clone(), kind, claimed: c, actual: t });
    }
    v.consistent = v.diffs.is_empty();
    v
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SentenceDiff {
    pub sentence: usize,
    #[serde(flatten)]
    pub diff: Discrepancy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ImageConsistency {
    pub consistent: bool,
    pub diffs: Vec<SentenceDiff>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rate: f64,
    pub images: BTreeMap<String, ImageConsistency>,
    /// Always true: marks the rate as a proposed metric.
    pub proposed_metric: bool,
}

/// Checks every image that has both captions and a map. An image is consistent when
/// every one of its captions agrees with its map.
pub fn check_dataset(
    captions: &BTreeMap<String, Vec<Vec<String>>>,
    maps: &BTreeMap<String, PanopticMap>,
    reg: &CategoryRegistry,
) -> ConsistencyReport {
    let mut images = BTreeMap::new();
    for (id, map) in maps {
        let Some(sentences) = captions.get(id) else { continue };
        let truth = instance_counts(map, reg);
        let mut diffs = Vec::new();
        for (i, s) in sentences.iter().enumerate() {
            let verdict = check_consistency(&parse_caption(s, reg), &truth);
            diffs.extend(verdict.diffs.into_iter().map(|diff| SentenceDiff { sentence: i, diff }));
        }
        images.insert(id.clone(), ImageConsistency { consistent: diffs.is_empty(), diffs });
    }
    let ok = images.values().filter(|v| v.consistent).count();
    let rate = if images.is_empty() { 0.0 } else { ok as f64 / images.len() as f64 };
    ConsistencyReport { rate, images, proposed_metric: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panoptic::Segment;

    fn counts(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn huge_repeated_counts_saturate() {
        let reg = CategoryRegistry::fine_grip();
        let c = parse_caption_text("4000000000 f-22 and 4000000000 f-22", &reg);
        assert_eq!(c.counts, counts(&[("F-22", u32::MAX)]));
    }

    #[test]
    fn parses_grammar_examples() {
        let reg = CategoryRegistry::fine_grip();
        let c = parse_caption_text("two b-52 and one f-16 are parked on the parking-apron .", &reg);
        assert_eq!(c.counts, counts(&[("B-52", 2), ("F-16", 1)]));
        assert_eq!(c.stuff_mentions, ["Parking-apron"]);
        assert!(!c.warning);

        let c = parse_caption_text("a large airport .", &reg);
        assert!(c.counts.is_empty());
        assert!(c.warning);

        let c = parse_caption_text("three su-35 near the runway and three su-35 on the hardstand .", &reg);
        assert_eq!(c.counts, counts(&[("SU-35", 6)]));
        assert_eq!(c.stuff_mentions, ["Runway", "Hardstand"]);
    }

    #[test]
    fn defaults_and_digits() {
        let reg = CategoryRegistry::fine_grip();
        assert_eq!(parse_caption_text("an e-3 beside 12 c-17", &reg).counts, counts(&[("E-3", 1), ("C-17", 12)]));
    }

    #[test]
    fn instance_counts_ignore_stuff() {
        let reg = CategoryRegistry::fine_grip();
        // two A8 (B-52), one A5 (F-16), two Land fragments
        let px = vec![1, 1, 2, 3, 4, 5];
        let segs = vec![
            Segment { id: 1, category_id: 8 },
            Segment { id: 2, category_id: 8 },
            Segment { id: 3, category_id: 5 },
            Segment { id: 4, category_id: 21 },
            Segment { id: 5, category_id: 21 },
        ];
        let m = PanopticMap::new(6, 1, px, segs).unwrap();
        let truth = instance_counts(&m, &reg);
        assert_eq!(truth.counts, counts(&[("B-52", 2), ("F-16", 1)]));
        assert_eq!(instance_counts(&m.canonicalize_stuff(&reg).unwrap(), &reg), truth);

        let stuff_only = PanopticMap::new(1, 1, vec![1], vec![Segment { id: 1, category_id: 22 }]).unwrap();
        assert!(instance_counts(&stuff_only, &reg).counts.is_empty());
    }

    #[test]
    fn verdicts() {
        let truth = CountClaim { counts: counts(&[("B-52", 3)]), ..Default::default() };
        assert!(check_consistency(&truth, &truth).consistent);

        let under = CountClaim { counts: counts(&[("B-52", 2)]), ..Default::default() };
        let v = check_consistency(&under, &truth);
        assert_eq!(v.diffs, [Discrepancy { class: "B-52".into(), kind: DiffKind::UnderClaimed, claimed: 2, actual: 3 }]);

        let extra = CountClaim { counts: counts(&[("B-52", 3), ("F-16", 1)]), ..Default::default() };
        let v = check_consistency(&extra, &truth);
        assert_eq!(v.matched, ["B-52"]);
        assert_eq!(v.diffs[0].kind, DiffKind::OverClaimed);

        let v = check_consistency(&CountClaim::default(), &truth);
        assert_eq!(v.diffs[0].kind, DiffKind::Missing);
    }
}
