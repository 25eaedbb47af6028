//! Deterministic synthetic airport scenes.
//!
//! A scene is a Land background, a few axis-aligned stuff zones, and non-overlapping
//! aircraft glyphs. Each thing class has its own polygon (vertex count and star
//! ratio indexed by class) and its own saturated color, so classes are separable
//! from pixels alone. Captions are produced from the instance list with five
//! paraphrase templates.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{save_image_png, AnnotationFile, Dataset, ImageEntry};
use crate::codec::{save_panoptic_map, RasterFormat};
use crate::consistency::number_word;
use crate::panoptic::{
    CaptionRecord, CategoryRegistry, ImageRecord, PanopticMap, DEFAULT_MAX_CAPTION_LEN,
    FINE_GRIP_THINGS, MAX_SENTENCES_PER_IMAGE,
};
use crate::text::tokenize;
use crate::{Error, Result};

const N_THINGS: usize = FINE_GRIP_THINGS.len();
const LAND: u32 = 21;
const ZONE_CLASSES: [u32; 4] = [22, 23, 24, 25];
const RUNWAY: u32 = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub min_things: usize,
    pub max_things: usize,
    pub glyph_min: u32,
    pub glyph_max: u32,
    /// Minimum free pixels between glyph bounding boxes.
    pub min_gap: u32,
    pub max_zones: usize,
    /// Relative frequency of A1..A20; `None` gives a Zipf-like long tail.
    pub class_weights: Option<Vec<f64>>,
    pub max_attempts: usize,
    pub train_fraction: f64,
    pub captions_per_image: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 64,
            height: 64,
            min_things: 1,
            max_things: 4,
            glyph_min: 9,
            glyph_max: 14,
            min_gap: 2,
            max_zones: 2,
            class_weights: None,
            max_attempts: 200,
            train_fraction: 0.34,
            captions_per_image: MAX_SENTENCES_PER_IMAGE,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.glyph_min < 3 || self.glyph_min > self.glyph_max {
            return bad(format!("glyph sizes {}..={} are invalid", self.glyph_min, self.glyph_max));
        }
        if self.glyph_max > self.width || self.glyph_max > self.height {
            return bad(format!(
                "glyph size {} does not fit a {}x{} image",
                self.glyph_max, self.width, self.height
            ));
        }
        if self.min_things > self.max_things || self.max_things > 8 {
            return bad(format!("thing count range {}..={} is invalid (max 8)", self.min_things, self.max_things));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train fraction {} outside [0, 1]", self.train_fraction));
        }
        if !(1..=MAX_SENTENCES_PER_IMAGE).contains(&self.captions_per_image) {
            return bad(format!("captions per image must be 1..={MAX_SENTENCES_PER_IMAGE}"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != N_THINGS || w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return bad(format!("class weights need {N_THINGS} finite non-negative entries with positive sum"));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.class_weights
            .clone()
            .unwrap_or_else(|| (0..N_THINGS).map(|k| 1.0 / (k as f64 + 1.0)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThingInstance {
    pub category_id: u32,
    /// Top-left corner of the glyph box.
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StuffZone {
    pub category_id: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub things: Vec<ThingInstance>,
    /// Painted in order over Land.
    pub zones: Vec<StuffZone>,
    /// Stuff class under most glyph pixels; used as the caption location.
    pub location: u32,
}

impl SceneSpec {
    pub fn counts(&self) -> BTreeMap<u32, u32> {
        let mut out = BTreeMap::new();
        for t in &self.things {
            *out.entry(t.category_id).or_insert(0) += 1;
        }
        out
    }
}

/// Class-indexed glyph color, fully saturated so it never collides with stuff.
pub fn thing_color(category_id: u32) -> [f64; 3] {
    let k = (category_id - 1) as f64;
    let v = if category_id % 2 == 0 { 0.7 } else { 1.0 };
    hsv(k / N_THINGS as f64, 0.9, v)
}

pub fn stuff_color(category_id: u32) -> [f64; 3] {
    match category_id {
        LAND => [0.42, 0.36, 0.25],
        22 => [0.22, 0.22, 0.24],
        23 => [0.55, 0.55, 0.52],
        24 => [0.38, 0.42, 0.50],
        _ => [0.70, 0.62, 0.55],
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Glyph polygon for a thing class inside a `size`-pixel box, in box coordinates.
/// Class `k` (0-based) gets `3 + k % 5` spikes and inner radius ratio by `k / 5`.
pub fn glyph_polygon(category_id: u32, size: u32) -> Vec<(f64, f64)> {
    let k = (category_id - 1) as usize;
    let spikes = 3 + k % 5;
    let ratio = [1.0, 0.75, 0.55, 0.4][(k / 5) % 4];
    let c = size as f64 / 2.0;
    let r = c - 0.25;
    let rot = k as f64 * 0.31;
    (0..2 * spikes)
        .map(|m| {
            let a = rot + PI * m as f64 / spikes as f64;
            let rad = if m % 2 == 0 { r } else { r * ratio };
            (c + rad * a.cos(), c + rad * a.sin())
        })
        .collect()
}

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Pixels of a glyph in box coordinates. The box center pixel is always included.
pub fn glyph_pixels(category_id: u32, size: u32) -> Vec<(u32, u32)> {
    let poly = glyph_polygon(category_id, size);
    let mut out = Vec::new();
    for y in 0..size {
        for x in 0..size {
            if (x, y) == (size / 2, size / 2) || inside(&poly, x as f64 + 0.5, y as f64 + 0.5) {
                out.push((x, y));
            }
        }
    }
    out
}

fn sample_layout(seed: u64, cfg: &SynthConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);

    let n_zones = rng.gen_range(0..=cfg.max_zones);
    let mut zones = Vec::with_capacity(n_zones);
    for _ in 0..n_zones {
        let category_id = ZONE_CLASSES[rng.gen_range(0..ZONE_CLASSES.len())];
        let zone = if category_id == RUNWAY {
            let zh = rng.gen_range((h / 6).max(1)..=(h / 4).max(1));
            let y0 = rng.gen_range(0..=h - zh);
            StuffZone { category_id, x0: 0, y0, x1: w, y1: y0 + zh }
        } else {
            let zw = rng.gen_range((w / 4).max(1)..=(w / 2).max(1));
            let zh = rng.gen_range((h / 4).max(1)..=(h / 2).max(1));
            let x0 = rng.gen_range(0..=w - zw);
            let y0 = rng.gen_range(0..=h - zh);
            StuffZone { category_id, x0, y0, x1: x0 + zw, y1: y0 + zh }
        };
        zones.push(zone);
    }

    let classes = WeightedIndex::new(cfg.weights()).map_err(|e| Error::Input(e.to_string()))?;
    let n_things = rng.gen_range(cfg.min_things..=cfg.max_things);
    let mut things: Vec<ThingInstance> = Vec::with_capacity(n_things);
    for index in 0..n_things {
        let category_id = classes.sample(&mut rng) as u32 + 1;
        let size = rng.gen_range(cfg.glyph_min..=cfg.glyph_max);
        let mut placed = None;
        for _ in 0..cfg.max_attempts {
            let x = rng.gen_range(0..=w - size);
            let y = rng.gen_range(0..=h - size);
            let g = cfg.min_gap;
            let clear = things.iter().all(|t| {
                x + size + g <= t.x || t.x + t.size + g <= x || y + size + g <= t.y || t.y + t.size + g <= y
            });
            if clear {
                placed = Some(ThingInstance { category_id, x, y, size });
                break;
            }
        }
        things.push(placed.ok_or(Error::Placement { index, attempts: cfg.max_attempts })?);
    }

    let stuff = stuff_labels(w, h, &zones);
    let mut under: BTreeMap<u32, usize> = BTreeMap::new();
    for t in &things {
        for (gx, gy) in glyph_pixels(t.category_id, t.size) {
            *under.entry(stuff[((t.y + gy) * w + t.x + gx) as usize]).or_insert(0) += 1;
        }
    }
    // ties resolve to the lowest category id
    let location = under
        .iter()
        .max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c)))
        .map(|(c, _)| *c)
        .unwrap_or_else(|| zones.first().map_or(LAND, |z| z.category_id));
    Ok(SceneSpec { seed, width: w, height: h, things, zones, location })
}

fn stuff_labels(w: u32, h: u32, zones: &[StuffZone]) -> Vec<u32> {
    let mut out = vec![LAND; (w * h) as usize];
    for z in zones {
        for y in z.y0..z.y1 {
            for x in z.x0..z.x1 {
                out[(y * w + x) as usize] = z.category_id;
            }
        }
    }
    out
}

/// Rasterizes a scene. Stuff segments get ids `1..` in category order, things follow
/// in instance order; every pixel is labeled.
pub fn render_scene(spec: &SceneSpec, image_id: impl Into<String>) -> Result<(ImageRecord, PanopticMap)> {
    let (w, h) = (spec.width, spec.height);
    let stuff = stuff_labels(w, h, &spec.zones);
    let mut cats: Vec<u32> = stuff.clone();
    cats.sort_unstable();
    cats.dedup();
    let stuff_id: BTreeMap<u32, u32> = cats.iter().enumerate().map(|(i, c)| (*c, i as u32 + 1)).collect();
    let mut category_of: BTreeMap<u32, u32> = stuff_id.iter().map(|(c, id)| (*id, *c)).collect();

    let mut ids: Vec<u32> = stuff.iter().map(|c| stuff_id[c]).collect();
    let mut colors: Vec<[f64; 3]> = stuff.iter().map(|c| stuff_color(*c)).collect();
    for (i, t) in spec.things.iter().enumerate() {
        let id = cats.len() as u32 + 1 + i as u32;
        category_of.insert(id, t.category_id);
        let color = thing_color(t.category_id);
        for (gx, gy) in glyph_pixels(t.category_id, t.size) {
            let p = ((t.y + gy) * w + t.x + gx) as usize;
            ids[p] = id;
            colors[p] = color;
        }
    }
    let map = PanopticMap::from_raster(w, h, ids, |id| category_of.get(&id).copied())?;
    let image = ImageRecord::new(image_id, w, h, colors)?;
    Ok((image, map))
}

pub fn generate_scene(seed: u64, cfg: &SynthConfig) -> Result<(ImageRecord, PanopticMap, SceneSpec)> {
    let spec = sample_layout(seed, cfg)?;
    let (image, map) = render_scene(&spec, seed.to_string())?;
    Ok((image, map, spec))
}

const TEMPLATES: [&str; 5] = [
    "there are {L} parked on the {S} .",
    "{L} can be seen on the {S} .",
    "on the {S} , we can see {L} .",
    "this airport image shows {L} near the {S} .",
    "the {S} contains {L} .",
];

const EMPTY_TEMPLATES: [&str; 5] = [
    "there are no aircraft .",
    "no aircraft can be seen on the {S} .",
    "the {S} is empty .",
    "this airport image shows the {S} without aircraft .",
    "nothing is parked on the {S} .",
];

fn count_list(counts: &BTreeMap<u32, u32>, reg: &CategoryRegistry) -> String {
    let parts: Vec<String> = counts
        .iter()
        .map(|(c, n)| format!("{} {}", number_word(*n), reg.get(*c).map_or("?".into(), |c| c.name.to_lowercase())))
        .collect();
    match parts.len() {
        0 => String::new(),
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(" , "), parts[n - 1]),
    }
}

/// Raw sentences for a scene, one per template, in template order.
pub fn caption_sentences(spec: &SceneSpec, k: usize) -> Vec<String> {
    let reg = CategoryRegistry::fine_grip();
    let counts = spec.counts();
    let place = reg.get(spec.location).map_or("land".into(), |c| c.name.to_lowercase());
    let list = count_list(&counts, &reg);
    let templates = if counts.is_empty() { &EMPTY_TEMPLATES } else { &TEMPLATES };
    templates
        .iter()
        .take(k.min(MAX_SENTENCES_PER_IMAGE))
        .map(|t| t.replace("{L}", &list).replace("{S}", &place))
        .collect()
}

pub fn generate_captions(spec: &SceneSpec, k: usize) -> Result<CaptionRecord> {
    let tokens = caption_sentences(spec, k).iter().map(|s| tokenize(s)).collect();
    CaptionRecord::new(spec.seed.to_string(), tokens, DEFAULT_MAX_CAPTION_LEN)
}

/// Writes `n_images` scenes under `out` and returns the loaded dataset. Image `i`
/// uses seed `seed ^ i`. The first `ceil(train_fraction * n)` images of a seeded
/// shuffle are tagged `train`, the rest `test`.
pub fn generate_dataset(n_images: usize, seed: u64, cfg: &SynthConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    for sub in ["images", "panoptic"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut order: Vec<usize> = (0..n_images).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (cfg.train_fraction * n_images as f64).ceil() as usize;
    let mut split = vec!["test"; n_images];
    for &i in &order[..n_train.min(n_images)] {
        split[i] = "train";
    }

    let entries = (0..n_images)
        .into_par_iter()
        .map(|i| {
            let spec = sample_layout(seed ^ i as u64, cfg)?;
            let (image, map) = render_scene(&spec, i.to_string())?;
            let file_name = format!("images/{i:05}.png");
            let panoptic_file = format!("panoptic/{i:05}.pidm");
            save_image_png(&image, &out.join(&file_name))?;
            save_panoptic_map(&map, &out.join(&panoptic_file), RasterFormat::RawPidm)?;
            let entry = ImageEntry {
                id: i as u64,
                width: cfg.width,
                height: cfg.height,
                file_name,
                panoptic_file,
                segments_info: map.segments().to_vec(),
                split: Some(split[i].to_string()),
            };
            Ok((entry, caption_sentences(&spec, cfg.captions_per_image)))
        })
        .collect::<Result<Vec<_>>>()?;

    let reg = CategoryRegistry::fine_grip();
    let mut annotations = AnnotationFile { categories: reg.categories().to_vec(), ..Default::default() };
    for (entry, sentences) in entries {
        annotations.captions.insert(entry.id.to_string(), sentences);
        annotations.images.push(entry);
    }
    let ds = Dataset { root: out.to_path_buf(), annotations, registry: reg };
    ds.save_annotations()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consistency::{check_dataset, instance_counts, parse_caption};
    use crate::pq::evaluate_dataset;

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SynthConfig::default();
        for seed in 0..5 {
            let a = generate_scene(seed, &cfg).unwrap();
            let b = generate_scene(seed, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_things_gives_stuff_only_map() {
        let cfg = SynthConfig { min_things: 0, max_things: 0, ..Default::default() };
        let reg = CategoryRegistry::fine_grip();
        let (_, map, spec) = generate_scene(3, &cfg).unwrap();
        assert!(spec.things.is_empty());
        assert!(map.segments().iter().all(|s| !reg.is_thing(s.category_id).unwrap()));
        assert_eq!(map.void_count(), 0);
        let caps = caption_sentences(&spec, 5);
        assert_eq!(caps[0], "there are no aircraft .");
    }

    #[test]
    fn rendered_counts_match_spec() {
        let reg = CategoryRegistry::fine_grip();
        let cfg = SynthConfig { max_things: 8, min_things: 4, ..Default::default() };
        for seed in 0..40 {
            let (_, map, spec) = generate_scene(seed, &cfg).unwrap();
            let truth = instance_counts(&map, &reg);
            let expect: BTreeMap<String, u32> = spec
                .counts()
                .iter()
                .map(|(c, n)| (reg.get(*c).unwrap().name.clone(), *n))
                .collect();
            assert_eq!(truth.counts, expect, "seed {seed}");
            assert_eq!(map.void_count(), 0);
            assert!(map.is_stuff_canonical(&reg));
        }
    }

    #[test]
    fn glyphs_are_distinct_and_inside_their_box() {
        let shapes: Vec<Vec<(u32, u32)>> = (1..=20).map(|c| glyph_pixels(c, 14)).collect();
        for (i, s) in shapes.iter().enumerate() {
            assert!(s.len() > 10, "class {} glyph too small", i + 1);
            assert!(s.iter().all(|&(x, y)| x < 14 && y < 14));
        }
        let colors: Vec<[u8; 3]> = (1..=20).map(|c| thing_color(c).map(|v| (v * 255.0).round() as u8)).collect();
        for i in 0..20 {
            for j in i + 1..20 {
                assert_ne!(colors[i], colors[j]);
            }
        }
    }

    #[test]
    fn templates_round_trip_counts() {
        let reg = CategoryRegistry::fine_grip();
        let spec = SceneSpec {
            seed: 0,
            width: 64,
            height: 64,
            things: vec![
                ThingInstance { category_id: 8, x: 0, y: 0, size: 9 },
                ThingInstance { category_id: 8, x: 20, y: 0, size: 9 },
                ThingInstance { category_id: 5, x: 40, y: 0, size: 9 },
            ],
            zones: vec![],
            location: 24,
        };
        let sentences = caption_sentences(&spec, 5);
        assert_eq!(sentences[0], "there are one f-16 and two b-52 parked on the parking-apron .");
        let distinct: std::collections::BTreeSet<_> = sentences.iter().collect();
        assert_eq!(distinct.len(), 5);
        let rec = generate_captions(&spec, 5).unwrap();
        for s in &rec.sentences {
            let c = parse_caption(s, &reg);
            assert_eq!(c.counts, BTreeMap::from([("B-52".to_string(), 2), ("F-16".to_string(), 1)]));
        }
    }

    #[test]
    fn dataset_layout_and_self_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default();
        let ds = generate_dataset(10, 7, &cfg, dir.path()).unwrap();
        assert_eq!(ds.images().len(), 10);
        assert_eq!(ds.annotations.captions.values().map(Vec::len).sum::<usize>(), 50);
        assert_eq!(ds.split("train").len(), 4);

        let loaded = Dataset::load(dir.path()).unwrap();
        let maps = loaded.load_maps().unwrap();
        let ev = evaluate_dataset(&maps, &maps, &loaded.registry, Some(2)).unwrap();
        assert_eq!(ev.report.all.pq, 1.0);
        let rep = check_dataset(&loaded.annotations.tokenized_captions(), &maps, &loaded.registry);
        assert_eq!(rep.rate, 1.0);

        let first = fs::read(dir.path().join("panoptic/00003.pidm")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        generate_dataset(10, 7, &cfg, dir2.path()).unwrap();
        assert_eq!(fs::read(dir2.path().join("panoptic/00003.pidm")).unwrap(), first);
        assert_eq!(
            fs::read(dir.path().join("annotations.json")).unwrap(),
            fs::read(dir2.path().join("annotations.json")).unwrap()
        );
    }

    #[test]
    fn crowded_config_reports_placement_failure() {
        let cfg = SynthConfig {
            width: 16,
            height: 16,
            glyph_min: 14,
            glyph_max: 14,
            min_things: 2,
            max_things: 2,
            max_attempts: 5,
            ..Default::default()
        };
        assert!(matches!(generate_scene(0, &cfg), Err(Error::Placement { index: 1, attempts: 5 })));
        assert!(generate_scene(0, &SynthConfig { glyph_max: 80, ..Default::default() }).is_err());
    }
}
