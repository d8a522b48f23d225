//! Pixel-level inputs: images, superpixel label maps, dense feature or
//! probability fields, and panoptic ground truth.
//!
//! Everything is row-major. Pixel adjacency is 4-connectivity throughout.
//!
//! Besides PNG and PPM the module reads and writes a small raw tensor format:
//! the magic bytes `CSEG1`, one line of JSON
//! `{"dims":[H,W,D],"dtype":"f32"|"u16","probability":bool}` terminated by
//! `\n`, then a little-endian row-major payload.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid;

/// Class value that excludes a pixel from unaries and metrics.
pub const IGNORE: u32 = 255;

/// Instance encoding factor for 16-bit panoptic PNGs (`class * 1000 + instance`).
pub const PANOPTIC_DIVISOR: u32 = 1000;

const TENSOR_MAGIC: &[u8; 5] = b"CSEG1";
const PROBABILITY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel {pixel} probabilities sum to {sum}, expected 1 within 1e-4")]
    NotNormalized { pixel: usize, sum: f64 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

pub type Result<T> = std::result::Result<T, RasterError>;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read access to a per-pixel feature vector, implemented by images and
/// dense fields alike.
pub trait PixelFeatures {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn depth(&self) -> usize;
    fn pixel(&self, index: usize) -> &[f32];
}

/// An image with channel values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(RasterError::ShapeMismatch(format!(
                "{}x{}x{} image with {} values",
                width,
                height,
                channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a plane from 8-bit samples, mapping `v` to `v / 255`.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&v| f32::from(v) / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

impl PixelFeatures for ImagePlane {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        self.channels
    }
    fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

/// Decodes a PNG (8-bit gray or RGB) or binary PPM (P6) image.
pub fn decode_image(bytes: &[u8]) -> Result<ImagePlane> {
    let format = if bytes.starts_with(b"\x89PNG") {
        ImageFormat::Png
    } else if bytes.starts_with(b"P6") {
        ImageFormat::Pnm
    } else {
        return Err(RasterError::UnsupportedFormat(
            "expected PNG or binary PPM (P6)".into(),
        ));
    };
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| RasterError::CorruptFile(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => ImagePlane::from_u8(w, h, 1, buf.as_raw()),
        DynamicImage::ImageRgb8(buf) => ImagePlane::from_u8(w, h, 3, buf.as_raw()),
        other => Err(RasterError::UnsupportedFormat(format!(
            "{:?}; only 8-bit gray or RGB images are accepted",
            other.color()
        ))),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    decode_image(&read_file(path.as_ref())?)
}

pub fn encode_png_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Vec<u8> {
    let img = match channels {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(width as u32, height as u32, bytes.to_vec())
                .expect("buffer size checked by caller"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(width as u32, height as u32, bytes.to_vec())
                .expect("buffer size checked by caller"),
        ),
        4 => DynamicImage::ImageRgba8(
            image::RgbaImage::from_raw(width as u32, height as u32, bytes.to_vec())
                .expect("buffer size checked by caller"),
        ),
        _ => unreachable!("unsupported channel count {channels}"),
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn encode_png_u16(width: usize, height: usize, values: &[u16]) -> Vec<u8> {
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        width as u32,
        height as u32,
        values.to_vec(),
    )
    .expect("buffer size checked by caller");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(img)
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn save_image(plane: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    if plane.channels != 1 && plane.channels != 3 {
        return Err(RasterError::UnsupportedFormat(format!(
            "cannot save {} channels as PNG",
            plane.channels
        )));
    }
    let png = encode_png_u8(plane.width, plane.height, plane.channels, &plane.to_u8());
    write_file(path.as_ref(), &png)
}

/// Decodes a grayscale PNG of either bit depth into raw integer values.
fn decode_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u32>)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| RasterError::CorruptFile(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(RasterError::UnsupportedFormat(format!(
                "{:?}; label maps must be 8- or 16-bit grayscale",
                other.color()
            )))
        }
    };
    Ok((w, h, values))
}

// ---------------------------------------------------------------------------
// Raw tensor format

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorDtype {
    F32,
    U16,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U16(Vec<u16>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    dims: [usize; 3],
    dtype: TensorDtype,
    probability: bool,
}

/// An `H×W×D` tensor in the raw on-disk format.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub probability: bool,
    pub data: TensorData,
}

impl RawTensor {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(TENSOR_MAGIC.as_slice())
            .ok_or_else(|| RasterError::UnsupportedFormat("missing CSEG1 magic".into()))?;
        let newline = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| RasterError::CorruptFile("tensor header not terminated".into()))?;
        let header: TensorHeader = serde_json::from_slice(&rest[..newline])
            .map_err(|e| RasterError::CorruptFile(format!("tensor header: {e}")))?;
        let [h, w, d] = header.dims;
        let count = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(d))
            .ok_or_else(|| RasterError::CorruptFile("tensor dims overflow".into()))?;
        let payload = &rest[newline + 1..];
        let data = match header.dtype {
            TensorDtype::F32 => {
                if payload.len() != count * 4 {
                    return Err(RasterError::ShapeMismatch(format!(
                        "dims {:?} need {} payload bytes, found {}",
                        header.dims,
                        count * 4,
                        payload.len()
                    )));
                }
                TensorData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            TensorDtype::U16 => {
                if payload.len() != count * 2 {
                    return Err(RasterError::ShapeMismatch(format!(
                        "dims {:?} need {} payload bytes, found {}",
                        header.dims,
                        count * 2,
                        payload.len()
                    )));
                }
                TensorData::U16(
                    payload
                        .chunks_exact(2)
                        .map(|c| u16::from_le_bytes([c[0], c[1]]))
                        .collect(),
                )
            }
        };
        Ok(Self {
            height: h,
            width: w,
            depth: d,
            probability: header.probability,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        debug_assert_eq!(self.data.len(), self.height * self.width * self.depth);
        let header = TensorHeader {
            dims: [self.height, self.width, self.depth],
            dtype: match self.data {
                TensorData::F32(_) => TensorDtype::F32,
                TensorData::U16(_) => TensorDtype::U16,
            },
            probability: self.probability,
        };
        let mut out = TENSOR_MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }
}

// ---------------------------------------------------------------------------
// Dense fields

/// A per-pixel vector field: DCNN features or a class probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFieldMap {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub values: Vec<f32>,
    pub probability: bool,
}

impl DenseFieldMap {
    /// Validates shape and, for probability maps, per-pixel normalization.
    pub fn new(
        width: usize,
        height: usize,
        depth: usize,
        values: Vec<f32>,
        probability: bool,
    ) -> Result<Self> {
        if depth == 0 || values.len() != width * height * depth {
            return Err(RasterError::ShapeMismatch(format!(
                "{}x{}x{} field with {} values",
                width,
                height,
                depth,
                values.len()
            )));
        }
        if probability {
            for (pixel, slice) in values.chunks_exact(depth).enumerate() {
                let sum: f64 = slice.iter().map(|&v| f64::from(v)).sum();
                let in_range = slice.iter().all(|&v| (0.0..=1.0).contains(&v));
                if !in_range || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(RasterError::NotNormalized { pixel, sum });
                }
            }
        }
        Ok(Self {
            width,
            height,
            depth,
            values,
            probability,
        })
    }

    /// Interprets a decoded tensor. `expect_probability` forces the
    /// normalization check even if the header does not flag it.
    pub fn from_tensor(t: RawTensor, expect_probability: bool) -> Result<Self> {
        let values = match t.data {
            TensorData::F32(v) => v,
            TensorData::U16(v) => v.into_iter().map(f32::from).collect(),
        };
        Self::new(
            t.width,
            t.height,
            t.depth,
            values,
            expect_probability || t.probability,
        )
    }

    pub fn to_tensor(&self) -> RawTensor {
        RawTensor {
            height: self.height,
            width: self.width,
            depth: self.depth,
            probability: self.probability,
            data: TensorData::F32(self.values.clone()),
        }
    }
}

impl PixelFeatures for DenseFieldMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn depth(&self) -> usize {
        self.depth
    }
    fn pixel(&self, index: usize) -> &[f32] {
        &self.values[index * self.depth..(index + 1) * self.depth]
    }
}

pub fn decode_field(bytes: &[u8], expect_probability: bool) -> Result<DenseFieldMap> {
    DenseFieldMap::from_tensor(RawTensor::decode(bytes)?, expect_probability)
}

pub fn load_field(path: impl AsRef<Path>, expect_probability: bool) -> Result<DenseFieldMap> {
    decode_field(&read_file(path.as_ref())?, expect_probability)
}

// ---------------------------------------------------------------------------
// Superpixels

/// Dense superpixel label map whose every id is a 4-connected pixel set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Accepts arbitrary labels. If the labels are already dense and every
    /// label is 4-connected they are kept; otherwise every 4-connected
    /// component becomes its own superpixel, numbered in raster order.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(RasterError::ShapeMismatch(format!(
                "{}x{} label map with {} values",
                width,
                height,
                labels.len()
            )));
        }
        let max = *labels.iter().max().expect("non-empty") as usize;
        let (comp, comp_count) = grid::label_components(width, height, &labels);
        if comp_count == max + 1 {
            // One component per id and comp_count ids in use implies density.
            let mut seen = vec![false; max + 1];
            for &l in &labels {
                seen[l as usize] = true;
            }
            if seen.iter().all(|&s| s) {
                return Ok(Self {
                    width,
                    height,
                    ids: labels,
                    count: comp_count,
                });
            }
        }
        Ok(Self {
            width,
            height,
            ids: comp,
            count: comp_count,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn pixel_count(&self) -> usize {
        self.ids.len()
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(RasterError::DimensionMismatch {
                expected: (self.width, self.height),
                found: (width, height),
            });
        }
        Ok(())
    }

    /// Pixel indices grouped by superpixel id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.count];
        for (p, &id) in self.ids.iter().enumerate() {
            members[id as usize].push(p);
        }
        members
    }

    pub fn to_png(&self) -> Vec<u8> {
        let values: Vec<u16> = self.ids.iter().map(|&v| v.min(u16::MAX as u32) as u16).collect();
        encode_png_u16(self.width, self.height, &values)
    }
}

/// Accepts a 16-bit (or 8-bit) grayscale PNG or a `u16` raw tensor.
pub fn decode_superpixels(bytes: &[u8]) -> Result<SuperpixelMap> {
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = RawTensor::decode(bytes)?;
        if t.depth != 1 {
            return Err(RasterError::ShapeMismatch(format!(
                "superpixel tensor depth {} (expected 1)",
                t.depth
            )));
        }
        let labels = match t.data {
            TensorData::U16(v) => v.into_iter().map(u32::from).collect(),
            TensorData::F32(v) => v.into_iter().map(|x| x as u32).collect(),
        };
        return SuperpixelMap::from_labels(t.width, t.height, labels);
    }
    if !bytes.starts_with(b"\x89PNG") {
        return Err(RasterError::UnsupportedFormat(
            "superpixel maps must be PNG or CSEG1 tensors".into(),
        ));
    }
    let (w, h, labels) = decode_gray_png(bytes)?;
    SuperpixelMap::from_labels(w, h, labels)
}

pub fn load_superpixels(path: impl AsRef<Path>) -> Result<SuperpixelMap> {
    decode_superpixels(&read_file(path.as_ref())?)
}

/// Near-square tiling with at least `target_count` tiles (clamped to the
/// pixel count).
///
/// Columns = ⌈√(target·w/h)⌉ clamped to `[1, min(w, target)]`, rows =
/// ⌈target/columns⌉ clamped to `[1, h]`; tile `c` spans
/// `[⌊c·w/cols⌋, ⌊(c+1)·w/cols⌋)`.
pub fn grid_superpixels(width: usize, height: usize, target_count: usize) -> SuperpixelMap {
    let width = width.max(1);
    let height = height.max(1);
    let target = target_count.max(1);
    let ideal = ((target as f64) * (width as f64) / (height as f64)).sqrt().ceil() as usize;
    let cols = ideal.clamp(1, width.min(target));
    let rows = target.div_ceil(cols).clamp(1, height);
    let mut ids = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = y * rows / height;
        for x in 0..width {
            let col = x * cols / width;
            ids.push((row * cols + col) as u32);
        }
    }
    SuperpixelMap {
        width,
        height,
        ids,
        count: rows * cols,
    }
}

// ---------------------------------------------------------------------------
// Ground truth

/// Per-pixel class and instance ground truth. `IGNORE` pixels are excluded
/// from every metric; stuff pixels carry instance 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanopticTruth {
    pub width: usize,
    pub height: usize,
    pub class_ids: Vec<u32>,
    pub instance_ids: Vec<u32>,
}

impl PanopticTruth {
    pub fn new(
        width: usize,
        height: usize,
        class_ids: Vec<u32>,
        instance_ids: Vec<u32>,
    ) -> Result<Self> {
        let n = width * height;
        if class_ids.len() != n || instance_ids.len() != n {
            return Err(RasterError::ShapeMismatch(format!(
                "{}x{} truth with {} classes / {} instances",
                width,
                height,
                class_ids.len(),
                instance_ids.len()
            )));
        }
        Ok(Self {
            width,
            height,
            class_ids,
            instance_ids,
        })
    }

    /// Splits `class * 1000 + instance` codes (plain class codes below 1000).
    pub fn from_panoptic_codes(width: usize, height: usize, codes: &[u32]) -> Result<Self> {
        let (classes, instances) = codes
            .iter()
            .map(|&v| {
                if v >= PANOPTIC_DIVISOR {
                    (v / PANOPTIC_DIVISOR, v % PANOPTIC_DIVISOR)
                } else {
                    (v, 0)
                }
            })
            .unzip();
        Self::new(width, height, classes, instances)
    }

    pub fn is_ignored(&self, pixel: usize) -> bool {
        self.class_ids[pixel] == IGNORE
    }
}

/// Encodes class/instance maps as 16-bit `class * 1000 + instance` codes.
pub fn panoptic_codes(class_ids: &[u32], instance_ids: &[u32]) -> Vec<u16> {
    class_ids
        .iter()
        .zip(instance_ids)
        .map(|(&c, &i)| {
            if i == 0 {
                c as u16
            } else {
                (c * PANOPTIC_DIVISOR + i).min(u16::MAX as u32) as u16
            }
        })
        .collect()
}

/// Reads truth (or a prediction in the same layout).
///
/// * 8-bit PNG: class ids, no instances.
/// * 16-bit PNG: `class * 1000 + instance` codes; values below 1000 are plain
///   class ids.
/// * `u16` tensor with depth 1 (codes as above) or depth 2 (class, instance).
pub fn decode_truth(bytes: &[u8]) -> Result<PanopticTruth> {
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = RawTensor::decode(bytes)?;
        let values: Vec<u32> = match t.data {
            TensorData::U16(v) => v.into_iter().map(u32::from).collect(),
            TensorData::F32(v) => v.into_iter().map(|x| x as u32).collect(),
        };
        return match t.depth {
            1 => PanopticTruth::from_panoptic_codes(t.width, t.height, &values),
            2 => {
                let (c, i) = values.chunks_exact(2).map(|p| (p[0], p[1])).unzip();
                PanopticTruth::new(t.width, t.height, c, i)
            }
            d => Err(RasterError::ShapeMismatch(format!(
                "truth tensor depth {d} (expected 1 or 2)"
            ))),
        };
    }
    if !bytes.starts_with(b"\x89PNG") {
        return Err(RasterError::UnsupportedFormat(
            "truth maps must be PNG or CSEG1 tensors".into(),
        ));
    }
    let (w, h, values) = decode_gray_png(bytes)?;
    PanopticTruth::from_panoptic_codes(w, h, &values)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<PanopticTruth> {
    decode_truth(&read_file(path.as_ref())?)
}
