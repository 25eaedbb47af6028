//! Dataset annotation file and on-disk layout.
//!
//! A dataset directory holds `annotations.json` plus the files it names, with paths
//! relative to the directory:
//!
//! ```text
//! annotations.json
//! images/<name>.png       8-bit RGB
//! panoptic/<name>.pidm    or .png in the RGB id encoding
//! ```
//!
//! Each image entry may carry `segments_info` (segment id → category id) and a
//! `split` tag. Rasters store only segment ids, so without `segments_info` a map
//! cannot be attached to categories; loaders therefore require it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{self, RasterFormat};
use crate::panoptic::{Category, CategoryRegistry, ImageRecord, PanopticMap, Segment};
use crate::text::tokenize;
use crate::{Error, Result};

pub const ANNOTATION_FILE: &str = "annotations.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    pub panoptic_file: String,
    #[serde(default)]
    pub segments_info: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub categories: Vec<Category>,
    pub images: Vec<ImageEntry>,
    /// Raw sentences keyed by the decimal image id.
    #[serde(default)]
    pub captions: BTreeMap<String, Vec<String>>,
}

impl AnnotationFile {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let a: AnnotationFile = serde_json::from_slice(bytes)?;
        a.validate()?;
        Ok(a)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn registry(&self) -> Result<CategoryRegistry> {
        CategoryRegistry::new(self.categories.clone())
    }

    /// Checks category ids, unique image ids, and that every segment refers to a
    /// known category.
    pub fn validate(&self) -> Result<()> {
        let reg = self.registry()?;
        let mut seen = std::collections::BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.id) {
                return Err(Error::Input(format!("image id {} listed twice", img.id)));
            }
            if let Some(s) = img.segments_info.iter().find(|s| reg.get(s.category_id).is_none()) {
                return Err(Error::Category(format!(
                    "image {}: segment {} has unknown category {}",
                    img.id, s.id, s.category_id
                )));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Tokenized captions per image id.
    pub fn tokenized_captions(&self) -> BTreeMap<String, Vec<Vec<String>>> {
        self.captions
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|s| tokenize(s)).collect()))
            .collect()
    }
}

/// An annotation file bound to its directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub annotations: AnnotationFile,
    pub registry: CategoryRegistry,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(ANNOTATION_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let annotations = AnnotationFile::from_json(&bytes)?;
        let registry = annotations.registry()?;
        Ok(Dataset { root, annotations, registry })
    }

    pub fn save_annotations(&self) -> Result<PathBuf> {
        let path = self.root.join(ANNOTATION_FILE);
        fs::write(&path, self.annotations.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.annotations.images
    }

    pub fn split(&self, name: &str) -> Vec<&ImageEntry> {
        self.images().iter().filter(|i| i.split.as_deref() == Some(name)).collect()
    }

    pub fn load_map(&self, entry: &ImageEntry) -> Result<PanopticMap> {
        let path = self.root.join(&entry.panoptic_file);
        let format = RasterFormat::from_path(&path)
            .ok_or_else(|| Error::Input(format!("{}: unknown raster extension", path.display())))?;
        let map = codec::load_panoptic_map(&path, format, &entry.segments_info)?;
        if (map.width(), map.height()) != (entry.width, entry.height) {
            return Err(Error::Shape(format!(
                "{}: raster is {}x{}, annotation says {}x{}",
                path.display(),
                map.width(),
                map.height(),
                entry.width,
                entry.height
            )));
        }
        Ok(map)
    }

    pub fn load_image(&self, entry: &ImageEntry) -> Result<ImageRecord> {
        let path = self.root.join(&entry.file_name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (w, h, rgb) = codec::decode_png_rgb8(&bytes)?;
        if (w, h) != (entry.width, entry.height) {
            return Err(Error::Shape(format!(
                "{}: image is {w}x{h}, annotation says {}x{}",
                path.display(),
                entry.width,
                entry.height
            )));
        }
        ImageRecord::from_rgb8(entry.id.to_string(), w, h, &rgb)
    }

    pub fn captions(&self, entry: &ImageEntry) -> Vec<Vec<String>> {
        self.annotations
            .captions
            .get(&entry.id.to_string())
            .map(|v| v.iter().map(|s| tokenize(s)).collect())
            .unwrap_or_default()
    }

    /// All maps keyed by the decimal image id.
    pub fn load_maps(&self) -> Result<BTreeMap<String, PanopticMap>> {
        self.images().iter().map(|e| Ok((e.id.to_string(), self.load_map(e)?))).collect()
    }
}

pub fn save_image_png(image: &ImageRecord, path: &Path) -> Result<()> {
    let bytes = codec::encode_png_rgb8(image.width(), image.height(), &image.to_rgb8())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
