//! Panoptic domain types: categories, id rasters, binary masks and image records.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Segment id reserved for unlabeled pixels.
pub const VOID: u32 = 0;

/// Default maximum caption length in tokens.
pub const DEFAULT_MAX_CAPTION_LEN: usize = 30;

/// Maximum number of reference sentences kept per image.
pub const MAX_SENTENCES_PER_IMAGE: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    pub is_thing: bool,
}

impl Category {
    pub fn new(id: u32, name: impl Into<String>, is_thing: bool) -> Self {
        Category { id, name: name.into(), is_thing }
    }
}

/// The category universe, partitioned into things and stuff.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryRegistry {
    categories: Vec<Category>,
    index: HashMap<u32, usize>,
}

/// Fine-grained aircraft types, in the order A1..A20.
pub const FINE_GRIP_THINGS: [&str; 20] = [
    "SU-35", "C-130", "C-17", "C-5", "F-16", "TU-160", "E-3", "B-52", "P-3C", "B-1B", "E-8",
    "TU-22", "F-15", "KC-135", "F-22", "FA-18", "TU-95", "KC-10", "SU-34", "SU-24",
];

/// Background classes. `Land` is the catch-all.
pub const FINE_GRIP_STUFF: [&str; 5] = ["Land", "Runway", "Hardstand", "Parking-apron", "Building"];

impl CategoryRegistry {
    /// Builds a registry, sorted by id. Ids must be unique and nonzero, names unique
    /// (case-insensitively).
    pub fn new(mut categories: Vec<Category>) -> Result<Self> {
        categories.sort_by_key(|c| c.id);
        let mut names = BTreeSet::new();
        let mut index = HashMap::with_capacity(categories.len());
        for (i, c) in categories.iter().enumerate() {
            if c.id == VOID {
                return Err(Error::Category("category id 0 is reserved for void".into()));
            }
            if index.insert(c.id, i).is_some() {
                return Err(Error::Category(format!("duplicate category id {}", c.id)));
            }
            if !names.insert(c.name.to_lowercase()) {
                return Err(Error::Category(format!("duplicate category name {:?}", c.name)));
            }
        }
        Ok(CategoryRegistry { categories, index })
    }

    /// The FineGrip inventory: 20 aircraft things (ids 1..=20) followed by 5 stuff
    /// classes (ids 21..=25).
    pub fn fine_grip() -> Self {
        let things = FINE_GRIP_THINGS
            .iter()
            .enumerate()
            .map(|(i, n)| Category::new(i as u32 + 1, *n, true));
        let stuff = FINE_GRIP_STUFF
            .iter()
            .enumerate()
            .map(|(i, n)| Category::new(i as u32 + 21, *n, false));
        CategoryRegistry::new(things.chain(stuff).collect()).expect("static inventory is valid")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Category> {
        self.index.get(&id).map(|&i| &self.categories[i])
    }

    /// Dense 0-based position of a category id, used as a class index by models.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn by_position(&self, pos: usize) -> Option<&Category> {
        self.categories.get(pos)
    }

    /// Case-insensitive lookup by display name.
    pub fn by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn is_thing(&self, id: u32) -> Option<bool> {
        self.get(id).map(|c| c.is_thing)
    }

    pub fn things(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| c.is_thing)
    }

    pub fn stuff(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| !c.is_thing)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub id: u32,
    pub category_id: u32,
}

/// A per-pixel segment-id raster plus the registry mapping segment ids to categories.
///
/// Invariants, enforced by every constructor: the raster has `width * height` entries;
/// segment ids are unique and nonzero; every nonzero pixel refers to a listed segment;
/// every listed segment covers at least one pixel. `segments` is kept sorted by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticMap {
    width: u32,
    height: u32,
    pixels: Vec<u32>,
    segments: Vec<Segment>,
}

impl PanopticMap {
    pub fn new(width: u32, height: u32, pixels: Vec<u32>, mut segments: Vec<Segment>) -> Result<Self> {
        let n = width as usize * height as usize;
        if pixels.len() != n {
            return Err(Error::Shape(format!(
                "raster has {} pixels, expected {width}x{height}",
                pixels.len()
            )));
        }
        segments.sort();
        let mut area: BTreeMap<u32, u64> = BTreeMap::new();
        for s in &segments {
            if s.id == VOID {
                return Err(Error::Input("segment id 0 is reserved for void".into()));
            }
            if area.insert(s.id, 0).is_some() {
                return Err(Error::Input(format!("segment id {} listed twice", s.id)));
            }
        }
        for (i, &p) in pixels.iter().enumerate() {
            if p == VOID {
                continue;
            }
            match area.get_mut(&p) {
                Some(a) => *a += 1,
                None => {
                    return Err(Error::Input(format!("pixel {i} refers to unknown segment {p}")))
                }
            }
        }
        if let Some((id, _)) = area.iter().find(|(_, &a)| a == 0) {
            return Err(Error::Input(format!("segment {id} covers no pixels")));
        }
        Ok(PanopticMap { width, height, pixels, segments })
    }

    /// Builds a map from a raster and a segment→category lookup, registering exactly
    /// the ids that occur in the raster.
    pub fn from_raster(
        width: u32,
        height: u32,
        pixels: Vec<u32>,
        category_of: impl Fn(u32) -> Option<u32>,
    ) -> Result<Self> {
        let ids: BTreeSet<u32> = pixels.iter().copied().filter(|&p| p != VOID).collect();
        let segments = ids
            .into_iter()
            .map(|id| {
                category_of(id)
                    .map(|category_id| Segment { id, category_id })
                    .ok_or_else(|| Error::Input(format!("no category for segment {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PanopticMap::new(width, height, pixels, segments)
    }

    /// An all-void map.
    pub fn void(width: u32, height: u32) -> Self {
        PanopticMap {
            width,
            height,
            pixels: vec![VOID; width as usize * height as usize],
            segments: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: u32) -> Option<&Segment> {
        self.segments
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.segments[i])
    }

    pub fn category_of(&self, segment_id: u32) -> Option<u32> {
        self.segment(segment_id).map(|s| s.category_id)
    }

    /// Category at a pixel, `None` for void.
    pub fn category_at(&self, x: u32, y: u32) -> Option<u32> {
        let id = self.pixels[(y * self.width + x) as usize];
        self.category_of(id)
    }

    /// Pixel count per segment id.
    pub fn areas(&self) -> BTreeMap<u32, u64> {
        let mut out: BTreeMap<u32, u64> = self.segments.iter().map(|s| (s.id, 0)).collect();
        for &p in &self.pixels {
            if p != VOID {
                *out.get_mut(&p).expect("validated raster") += 1;
            }
        }
        out
    }

    pub fn void_count(&self) -> u64 {
        self.pixels.iter().filter(|&&p| p == VOID).count() as u64
    }

    pub fn segment_mask(&self, id: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.pixels.iter().map(|&p| p == id && id != VOID).collect(),
        }
    }

    /// Fails with a category error if any segment's category is not registered.
    pub fn check_categories(&self, reg: &CategoryRegistry) -> Result<()> {
        for s in &self.segments {
            if reg.get(s.category_id).is_none() {
                return Err(Error::Category(format!(
                    "segment {} has unknown category {}",
                    s.id, s.category_id
                )));
            }
        }
        Ok(())
    }

    /// Merges every stuff class into a single segment carrying the lowest of its
    /// segment ids. Thing segments are left untouched.
    pub fn canonicalize_stuff(&self, reg: &CategoryRegistry) -> Result<PanopticMap> {
        self.check_categories(reg)?;
        let mut keep: BTreeMap<u32, u32> = BTreeMap::new();
        for s in &self.segments {
            if !reg.is_thing(s.category_id).unwrap_or(true) {
                keep.entry(s.category_id).or_insert(s.id);
            }
        }
        let relabel: HashMap<u32, u32> = self
            .segments
            .iter()
            .filter_map(|s| keep.get(&s.category_id).map(|&k| (s.id, k)))
            .filter(|(from, to)| from != to)
            .collect();
        if relabel.is_empty() {
            return Ok(self.clone());
        }
        let pixels = self
            .pixels
            .iter()
            .map(|p| relabel.get(p).copied().unwrap_or(*p))
            .collect();
        let segments = self
            .segments
            .iter()
            .filter(|s| !relabel.contains_key(&s.id))
            .copied()
            .collect();
        Ok(PanopticMap { width: self.width, height: self.height, pixels, segments })
    }

    /// True if no stuff class has more than one segment.
    pub fn is_stuff_canonical(&self, reg: &CategoryRegistry) -> bool {
        let mut seen = BTreeSet::new();
        self.segments
            .iter()
            .filter(|s| reg.is_thing(s.category_id) == Some(false))
            .all(|s| seen.insert(s.category_id))
    }
}

/// A hard 0/1 mask over an image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "mask has {} bits, expected {width}x{height}",
                bits.len()
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        BinaryMask { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y));
        BinaryMask { width, height, bits: bits.collect() }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn overlap(&self, other: &BinaryMask) -> Result<u64> {
        self.same_shape(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count() as u64)
    }
}

/// Intersection over union. Two empty masks score 0 so they can never form a match.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.overlap(b)?;
    let union = a.count() + b.count() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// `2|a∩b| / (|a|+|b|)`. Two empty masks agree perfectly and score 1.
pub fn dice_coefficient(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.overlap(b)?;
    let total = a.count() + b.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Pixel-wise AND, used to fuse two independent segmentations of the same target.
pub fn fuse_masks_intersection(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    a.same_shape(b)?;
    Ok(BinaryMask {
        width: a.width,
        height: a.height,
        bits: a.bits.iter().zip(&b.bits).map(|(x, y)| *x && *y).collect(),
    })
}

/// An RGB image with channel values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    width: u32,
    height: u32,
    pixels: Vec<[f64; 3]>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be at least 1x1".into()));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "image has {} pixels, expected {width}x{height}",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("channel values must lie in [0, 1]".into()));
        }
        Ok(ImageRecord { image_id: image_id.into(), width, height, pixels })
    }

    pub fn from_rgb8(image_id: impl Into<String>, width: u32, height: u32, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape(format!("expected {} RGB bytes, got {}", width * height * 3, rgb.len())));
        }
        let pixels = rgb
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        ImageRecord::new(image_id, width, height, pixels)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Tokenized reference captions for one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub sentences: Vec<Vec<String>>,
}

impl CaptionRecord {
    /// Validates 1..=5 sentences of at most `max_len` tokens each.
    pub fn new(image_id: impl Into<String>, sentences: Vec<Vec<String>>, max_len: usize) -> Result<Self> {
        if sentences.is_empty() || sentences.len() > MAX_SENTENCES_PER_IMAGE {
            return Err(Error::Input(format!(
                "expected 1..={MAX_SENTENCES_PER_IMAGE} sentences, got {}",
                sentences.len()
            )));
        }
        if let Some(s) = sentences.iter().find(|s| s.len() > max_len) {
            return Err(Error::Input(format!("sentence of {} tokens exceeds limit {max_len}", s.len())));
        }
        Ok(CaptionRecord { image_id: image_id.into(), sentences })
    }
}
