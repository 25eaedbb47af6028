//! Raster codecs.
//!
//! Two interchange formats carry a panoptic id raster:
//!
//! * raw `PIDM`: the bytes `PIDM`, width (u32 LE), height (u32 LE), then
//!   `width * height` segment ids (u32 LE, row-major).
//! * RGB-PNG: 8-bit RGB where `id = R + 256 G + 65536 B` (COCO panoptic convention).
//!
//! Neither format stores categories; callers pair the raster with the segment list
//! from the annotation file.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::panoptic::{PanopticMap, Segment, VOID};
use crate::{Error, Result};

pub const PIDM_MAGIC: &[u8; 4] = b"PIDM";
const PIDM_HEADER: usize = 12;

/// Largest id representable in the RGB encoding.
pub const MAX_RGB_ID: u32 = (1 << 24) - 1;

/// Refuse rasters larger than this many pixels when decoding.
pub const MAX_PIXELS: u64 = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterFormat {
    RawPidm,
    RgbPng,
}

impl RasterFormat {
    /// Picks the format from a file extension (`.pidm` or `.png`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pidm" => Some(RasterFormat::RawPidm),
            "png" => Some(RasterFormat::RgbPng),
            _ => None,
        }
    }
}

/// A decoded id raster, not yet paired with categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdRaster {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
}

pub fn encode_id_rgb(segment_id: u32) -> Result<[u8; 3]> {
    if segment_id > MAX_RGB_ID {
        return Err(Error::Overflow(segment_id as u64));
    }
    Ok([
        (segment_id % 256) as u8,
        ((segment_id / 256) % 256) as u8,
        ((segment_id / 65536) % 256) as u8,
    ])
}

pub fn decode_id_rgb(rgb: [u8; 3]) -> u32 {
    rgb[0] as u32 + 256 * rgb[1] as u32 + 65536 * rgb[2] as u32
}

fn pixel_count(width: u32, height: u32, offset: u64) -> Result<usize> {
    let n = width as u64 * height as u64;
    if n > MAX_PIXELS {
        return Err(Error::format(offset, format!("{width}x{height} raster exceeds size limit")));
    }
    Ok(n as usize)
}

pub fn encode_pidm(raster: &IdRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(PIDM_HEADER + raster.ids.len() * 4);
    out.extend_from_slice(PIDM_MAGIC);
    out.extend_from_slice(&raster.width.to_le_bytes());
    out.extend_from_slice(&raster.height.to_le_bytes());
    for id in &raster.ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out
}

pub fn decode_pidm(bytes: &[u8]) -> Result<IdRaster> {
    if bytes.len() < 4 || &bytes[..4] != PIDM_MAGIC {
        return Err(Error::format(0, "missing PIDM magic"));
    }
    if bytes.len() < PIDM_HEADER {
        return Err(Error::format(bytes.len() as u64, "truncated PIDM header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (width, height) = (word(4), word(8));
    let n = pixel_count(width, height, 4)?;
    let expected = PIDM_HEADER + n * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            PIDM_HEADER as u64,
            format!("{width}x{height} raster needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let ids = bytes[PIDM_HEADER..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(IdRaster { width, height, ids })
}

pub fn encode_rgb_png(raster: &IdRaster) -> Result<Vec<u8>> {
    let mut rgb = Vec::with_capacity(raster.ids.len() * 3);
    for &id in &raster.ids {
        rgb.extend_from_slice(&encode_id_rgb(id)?);
    }
    encode_png_rgb8(raster.width, raster.height, &rgb)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<IdRaster> {
    let (width, height, rgb) = decode_png_rgb8(bytes)?;
    let ids = rgb.chunks_exact(3).map(|c| decode_id_rgb([c[0], c[1], c[2]])).collect();
    Ok(IdRaster { width, height, ids })
}

/// Encodes an 8-bit RGB buffer as PNG.
pub fn encode_png_rgb8(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() as u64 != width as u64 * height as u64 * 3 {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB image", rgb.len())));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::format(None, e.to_string()))?;
        w.write_image_data(rgb).map_err(|e| Error::format(None, e.to_string()))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB PNG. Other color types and bit depths are rejected so that
/// id rasters never pass through a lossy conversion.
pub fn decode_png_rgb8(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let limits = png::Limits { bytes: (MAX_PIXELS * 3) as usize };
    let decoder = png::Decoder::new_with_limits(Cursor::new(bytes), limits);
    let mut reader = decoder.read_info().map_err(|e| Error::format(None, format!("png: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(Error::format(None, format!("expected 8-bit RGB png, got {color:?}/{depth:?}")));
    }
    let info = reader.info();
    let (width, height) = (info.width, info.height);
    pixel_count(width, height, 16)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(None, "png too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(None, format!("png: {e}")))?;
    buf.truncate(frame.buffer_size());
    let row = width as usize * 3;
    if frame.line_size != row {
        // strip any per-row padding the decoder may leave
        buf = buf.chunks(frame.line_size).flat_map(|r| r[..row].to_vec()).collect();
    }
    Ok((width, height, buf))
}

/// Plain 8-bit grayscale PGM (`P5`).
pub fn encode_pgm(width: u32, height: u32, gray: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Pairs a decoded raster with its segment list, checking every pixel refers to a
/// listed segment. `pixel_stride`/`data_offset` map a pixel index back to a byte
/// offset for error messages.
fn assemble(raster: IdRaster, segments: &[Segment], data_offset: u64, pixel_stride: u64) -> Result<PanopticMap> {
    let mut known: Vec<u32> = segments.iter().map(|s| s.id).collect();
    known.sort_unstable();
    for (i, &id) in raster.ids.iter().enumerate() {
        if id != VOID && known.binary_search(&id).is_err() {
            return Err(Error::format(
                data_offset + i as u64 * pixel_stride,
                format!("unknown segment id {id}"),
            ));
        }
    }
    PanopticMap::new(raster.width, raster.height, raster.ids, segments.to_vec())
        .map_err(|e| Error::format(None, e.to_string()))
}

/// Decodes a map from in-memory bytes. For RGB-PNG, error offsets index the decoded
/// RGB pixel data rather than the compressed file.
pub fn decode_panoptic_map(bytes: &[u8], format: RasterFormat, segments: &[Segment]) -> Result<PanopticMap> {
    match format {
        RasterFormat::RawPidm => assemble(decode_pidm(bytes)?, segments, PIDM_HEADER as u64, 4),
        RasterFormat::RgbPng => assemble(decode_rgb_png(bytes)?, segments, 0, 3),
    }
}

pub fn encode_panoptic_map(map: &PanopticMap, format: RasterFormat) -> Result<Vec<u8>> {
    let raster = IdRaster { width: map.width(), height: map.height(), ids: map.pixels().to_vec() };
    match format {
        RasterFormat::RawPidm => Ok(encode_pidm(&raster)),
        RasterFormat::RgbPng => encode_rgb_png(&raster),
    }
}

pub fn load_panoptic_map(path: &Path, format: RasterFormat, segments: &[Segment]) -> Result<PanopticMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_panoptic_map(&bytes, format, segments)
}

pub fn save_panoptic_map(map: &PanopticMap, path: &Path, format: RasterFormat) -> Result<()> {
    let bytes = encode_panoptic_map(map, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
