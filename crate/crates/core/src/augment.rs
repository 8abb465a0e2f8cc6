//! Frame augmentations used to probe motion replication and to check that
//! copy descriptors survive common edits.
//!
//! All resampling is nearest-neighbour and every vacated pixel is black, so
//! each operation is plain integer index arithmetic and fully deterministic.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_format::EmbeddingSet;
use crate::similarity::{self, SimilarityError};

// Absorbs representation error in fraction * size products before flooring.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid {op} parameter: {reason}")]
    InvalidParam { op: &'static str, reason: String },
    #[error("crop of {width}x{height} pixels is empty")]
    CropTooSmall { width: usize, height: usize },
    #[error("two specs produce the variant name {0:?}")]
    DuplicateVariant(String),
    #[error("no descriptor for {0:?}")]
    MissingDescriptor(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, AugmentError> {
        if width == 0 || height == 0 {
            return Err(AugmentError::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(AugmentError::InvalidImage(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, AugmentError> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Lossless PNG encoding.
    pub fn to_png(&self) -> Result<Vec<u8>, AugmentError> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out).write_image(
            &self.pixels,
            self.width as u32,
            self.height as u32,
            ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, AugmentError> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }

    /// Loads any format the image codecs understand, converted to RGB8.
    pub fn open(path: &Path) -> Result<Self, AugmentError> {
        let bytes = fs::read(path).map_err(|source| AugmentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_png(&bytes)
    }
}

fn floor_px(fraction: f64, size: usize) -> i64 {
    (fraction * size as f64 + FLOOR_SLACK).floor() as i64
}

/// Horizontal mirror.
pub fn flip(img: &FrameImage) -> FrameImage {
    let mut out = FrameImage::black(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            out.set_pixel(img.width - 1 - x, y, img.pixel(x, y));
        }
    }
    out
}

/// Central crop to `fraction` of each side, scaled back to the original size.
pub fn crop(img: &FrameImage, fraction: f64) -> Result<FrameImage, AugmentError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AugmentError::InvalidParam {
            op: "crop",
            reason: format!("fraction {fraction} outside (0, 1]"),
        });
    }
    let cw = floor_px(fraction, img.width) as usize;
    let ch = floor_px(fraction, img.height) as usize;
    if cw == 0 || ch == 0 {
        return Err(AugmentError::CropTooSmall {
            width: cw,
            height: ch,
        });
    }
    let x0 = (img.width - cw) / 2;
    let y0 = (img.height - ch) / 2;
    let mut out = FrameImage::black(img.width, img.height);
    for y in 0..img.height {
        let sy = y0 + y * ch / img.height;
        for x in 0..img.width {
            let sx = x0 + x * cw / img.width;
            out.set_pixel(x, y, img.pixel(sx, sy));
        }
    }
    Ok(out)
}

/// Pixel bounds `(x0, y0, x1, y1)` (exclusive ends) of the centered occluder.
pub fn occlusion_rect(width: usize, height: usize, fraction: f64) -> (usize, usize, usize, usize) {
    let rw = (floor_px(fraction, width) as usize).clamp(1, width);
    let rh = (floor_px(fraction, height) as usize).clamp(1, height);
    let x0 = (width - rw) / 2;
    let y0 = (height - rh) / 2;
    (x0, y0, x0 + rw, y0 + rh)
}

/// Blacks out a centered rectangle covering `fraction` of each side.
pub fn occlude(img: &FrameImage, fraction: f64) -> Result<FrameImage, AugmentError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AugmentError::InvalidParam {
            op: "occlusion",
            reason: format!("fraction {fraction} outside (0, 1)"),
        });
    }
    let (x0, y0, x1, y1) = occlusion_rect(img.width, img.height, fraction);
    let mut out = img.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            out.set_pixel(x, y, [0, 0, 0]);
        }
    }
    Ok(out)
}

/// Shifts content by floor(dx·width), floor(dy·height) pixels; positive
/// values move right and down.
pub fn translate(img: &FrameImage, dx: f64, dy: f64) -> Result<FrameImage, AugmentError> {
    if !(dx.abs() < 1.0 && dy.abs() < 1.0) {
        return Err(AugmentError::InvalidParam {
            op: "translation",
            reason: format!("shift ({dx}, {dy}) must satisfy |d| < 1"),
        });
    }
    let sx = floor_px(dx, img.width);
    let sy = floor_px(dy, img.height);
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = FrameImage::black(img.width, img.height);
    for y in 0..h {
        let src_y = y - sy;
        if !(0..h).contains(&src_y) {
            continue;
        }
        for x in 0..w {
            let src_x = x - sx;
            if (0..w).contains(&src_x) {
                out.set_pixel(
                    x as usize,
                    y as usize,
                    img.pixel(src_x as usize, src_y as usize),
                );
            }
        }
    }
    Ok(out)
}

fn cos_sin(degrees: f64) -> (f64, f64) {
    // Quarter turns use exact values so that four 90° turns are lossless.
    if degrees.rem_euclid(90.0) == 0.0 {
        match degrees.rem_euclid(360.0) as i64 {
            0 => (1.0, 0.0),
            90 => (0.0, 1.0),
            180 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = degrees.to_radians();
        (r.cos(), r.sin())
    }
}

/// Counter-clockwise rotation (as displayed) about the image center.
pub fn rotate(img: &FrameImage, degrees: f64) -> Result<FrameImage, AugmentError> {
    if !(degrees > -180.0 && degrees <= 180.0) {
        return Err(AugmentError::InvalidParam {
            op: "rotation",
            reason: format!("angle {degrees} outside (-180, 180]"),
        });
    }
    let (c, s) = cos_sin(degrees);
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = FrameImage::black(img.width, img.height);
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let src_x = (cx + c * dx - s * dy).round() as i64;
            let src_y = (cy + s * dx + c * dy).round() as i64;
            if (0..w).contains(&src_x) && (0..h).contains(&src_y) {
                out.set_pixel(x, y, img.pixel(src_x as usize, src_y as usize));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum AugmentSpec {
    Flip,
    Crop { fraction: f64 },
    Occlusion { fraction: f64 },
    Translation { dx: f64, dy: f64 },
    Rotation { degrees: f64 },
}

impl AugmentSpec {
    /// Flip, crop 0.8, occlusion 0.2, translation (0.1, 0.1), rotation 15°.
    pub fn defaults() -> Vec<AugmentSpec> {
        vec![
            AugmentSpec::Flip,
            AugmentSpec::Crop { fraction: 0.8 },
            AugmentSpec::Occlusion { fraction: 0.2 },
            AugmentSpec::Translation { dx: 0.1, dy: 0.1 },
            AugmentSpec::Rotation { degrees: 15.0 },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AugmentSpec::Flip => "flip",
            AugmentSpec::Crop { .. } => "crop",
            AugmentSpec::Occlusion { .. } => "occlusion",
            AugmentSpec::Translation { .. } => "translation",
            AugmentSpec::Rotation { .. } => "rotation",
        }
    }

    pub fn apply(&self, img: &FrameImage) -> Result<FrameImage, AugmentError> {
        match *self {
            AugmentSpec::Flip => Ok(flip(img)),
            AugmentSpec::Crop { fraction } => crop(img, fraction),
            AugmentSpec::Occlusion { fraction } => occlude(img, fraction),
            AugmentSpec::Translation { dx, dy } => translate(img, dx, dy),
            AugmentSpec::Rotation { degrees } => rotate(img, degrees),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeVariant {
    pub name: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<AugmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub stem: String,
    pub width: usize,
    pub height: usize,
    pub variants: Vec<ProbeVariant>,
}

/// Encoded probe outputs, in write order: original, one PNG per spec, then
/// `<stem>_probe.json`.
pub fn probe_files(
    img: &FrameImage,
    specs: &[AugmentSpec],
    stem: &str,
) -> Result<Vec<(String, Vec<u8>)>, AugmentError> {
    let mut seen = HashSet::new();
    let mut files = Vec::with_capacity(specs.len() + 2);
    let mut variants = Vec::with_capacity(specs.len() + 1);
    let orig = format!("{stem}_orig.png");
    files.push((orig.clone(), img.to_png()?));
    variants.push(ProbeVariant {
        name: "orig".into(),
        file: orig,
        spec: None,
    });
    for spec in specs {
        if !seen.insert(spec.name()) {
            return Err(AugmentError::DuplicateVariant(spec.name().into()));
        }
        let file = format!("{stem}_{}.png", spec.name());
        files.push((file.clone(), spec.apply(img)?.to_png()?));
        variants.push(ProbeVariant {
            name: spec.name().into(),
            file,
            spec: Some(*spec),
        });
    }
    let manifest = ProbeManifest {
        stem: stem.into(),
        width: img.width,
        height: img.height,
        variants,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("probe manifest serializes");
    text.push('\n');
    files.push((format!("{stem}_probe.json"), text.into_bytes()));
    Ok(files)
}

/// Writes the original frame and its variants into `out_dir`; returns the
/// image paths (the manifest is written alongside).
pub fn probe_set(
    img: &FrameImage,
    specs: &[AugmentSpec],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, AugmentError> {
    let files = probe_files(img, specs, stem)?;
    let mut paths = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|source| AugmentError::Io {
            path: path.clone(),
            source,
        })?;
        if name.ends_with(".png") {
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Source of descriptors for the robustness check.
pub trait DescriptorProvider {
    /// Descriptor for the named variant (`orig`, `flip`, ..., `random`).
    fn descriptor(&self, variant: &str, frame: &FrameImage) -> Option<Vec<f32>>;
}

/// Descriptors computed elsewhere, keyed by variant name.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedDescriptors(pub HashMap<String, Vec<f32>>);

impl PrecomputedDescriptors {
    /// Uses the set's ids as variant names.
    pub fn from_set(set: &EmbeddingSet) -> Self {
        Self(
            set.ids()
                .iter()
                .cloned()
                .zip(set.rows().map(<[f32]>::to_vec))
                .collect(),
        )
    }
}

impl DescriptorProvider for PrecomputedDescriptors {
    fn descriptor(&self, variant: &str, _frame: &FrameImage) -> Option<Vec<f32>> {
        self.0.get(variant).cloned()
    }
}

/// Stand-in descriptor: the frame downsampled to `side` x `side` by nearest
/// neighbour and flattened.
#[derive(Debug, Clone, Copy)]
pub struct RasterDescriptor {
    pub side: usize,
}

impl DescriptorProvider for RasterDescriptor {
    fn descriptor(&self, _variant: &str, frame: &FrameImage) -> Option<Vec<f32>> {
        let mut out = Vec::with_capacity(self.side * self.side * 3);
        for y in 0..self.side {
            let sy = y * frame.height / self.side;
            for x in 0..self.side {
                let sx = x * frame.width / self.side;
                out.extend(frame.pixel(sx, sy).iter().map(|&v| f32::from(v)));
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

fn column_label(name: &str) -> String {
    match name {
        "exact" => "1:1".into(),
        other => {
            let mut c = other.chars();
            c.next()
                .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
                .unwrap_or_default()
        }
    }
}

impl RobustnessTable {
    pub fn score(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.score)
    }

    /// One-row table with a column per variant.
    pub fn to_markdown(&self) -> String {
        let header: Vec<String> = self.rows.iter().map(|r| column_label(&r.label)).collect();
        let scores: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{:.4}", r.score))
            .collect();
        let mut out = String::new();
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        out.push_str(&format!("| {} |\n", scores.join(" | ")));
        out.push_str(
            "\nHigher scores on augmented copies mean the descriptor still recognises the copy; \
             the random column should stay low.\n",
        );
        out
    }
}

/// Similarity of the original frame's descriptor to itself, to each
/// augmented variant and to an unrelated frame.
pub fn robustness_table(
    provider: &dyn DescriptorProvider,
    img: &FrameImage,
    specs: &[AugmentSpec],
    unrelated: &FrameImage,
) -> Result<RobustnessTable, AugmentError> {
    let fetch = |name: &str, frame: &FrameImage| {
        provider
            .descriptor(name, frame)
            .ok_or_else(|| AugmentError::MissingDescriptor(name.into()))
    };
    let orig = fetch("orig", img)?;
    let mut rows = vec![RobustnessRow {
        label: "exact".into(),
        score: similarity::cosine(&orig, &orig)?,
    }];
    for spec in specs {
        let variant = spec.apply(img)?;
        let d = fetch(spec.name(), &variant)?;
        rows.push(RobustnessRow {
            label: spec.name().into(),
            score: similarity::cosine(&orig, &d)?,
        });
    }
    let random = fetch("random", unrelated)?;
    rows.push(RobustnessRow {
        label: "random".into(),
        score: similarity::cosine(&orig, &random)?,
    });
    Ok(RobustnessTable { rows })
}
