//! PGM ingestion and block-mean down-sampling.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::Template;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM data: expected {expected} samples, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("block size must be at least 1x1")]
    InvalidBlock,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<FeatureError>,
    },
}

/// Row-major grayscale image with 8- or 16-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self, FeatureError> {
        if width * height != pixels.len() {
            return Err(FeatureError::MalformedHeader(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        if maxval == 0 || pixels.iter().any(|&p| p > maxval) {
            return Err(FeatureError::MalformedHeader("sample exceeds maxval".into()));
        }
        Ok(Self { width, height, maxval, pixels })
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_h: usize,
    pub block_w: usize,
}

impl BlockSpec {
    pub fn new(block_h: usize, block_w: usize) -> Result<Self, FeatureError> {
        if block_h == 0 || block_w == 0 {
            return Err(FeatureError::InvalidBlock);
        }
        Ok(Self { block_h, block_w })
    }

    /// Number of features produced for a `height × width` image.
    pub fn output_dim(&self, height: usize, width: usize) -> usize {
        height.div_ceil(self.block_h) * width.div_ceil(self.block_w)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, FeatureError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FeatureError::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FeatureError::MalformedHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary (P5) or ASCII (P2) PGM image.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, FeatureError> {
    let ascii = match bytes.get(..2) {
        Some(b"P5") => false,
        Some(b"P2") => true,
        _ => return Err(FeatureError::MalformedHeader("expected P2 or P5 magic".into())),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(FeatureError::MalformedHeader(format!("maxval {maxval} not in 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| FeatureError::MalformedHeader("image size overflows".into()))?;

    let pixels = if ascii {
        let mut pixels = Vec::with_capacity(count.min(1 << 24));
        for found in 0..count {
            cur.skip_space_and_comments();
            if cur.pos >= bytes.len() {
                return Err(FeatureError::TruncatedData { expected: count, found });
            }
            pixels.push(cur.number("sample")?);
        }
        pixels
    } else {
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(FeatureError::MalformedHeader("missing raster separator".into())),
        }
        let raster = &bytes[cur.pos..];
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let found = raster.len() / width_bytes;
        if found < count {
            return Err(FeatureError::TruncatedData { expected: count, found });
        }
        if width_bytes == 1 {
            raster[..count].iter().map(|&b| b as usize).collect()
        } else {
            raster[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
                .collect()
        }
    };

    if pixels.iter().any(|&p| p > maxval) {
        return Err(FeatureError::MalformedHeader(format!("sample exceeds maxval {maxval}")));
    }
    Ok(GrayImage {
        width,
        height,
        maxval: maxval as u16,
        pixels: pixels.into_iter().map(|p| p as u16).collect(),
    })
}

/// Mean raw intensity of each non-overlapping block, in row-major block
/// order. Boundary blocks average over the pixels they actually cover.
pub fn block_means(img: &GrayImage, spec: BlockSpec) -> Result<Vec<f64>, FeatureError> {
    if img.width == 0 || img.height == 0 {
        return Err(FeatureError::EmptyImage);
    }
    if spec.block_h == 0 || spec.block_w == 0 {
        return Err(FeatureError::InvalidBlock);
    }
    let mut out = Vec::with_capacity(spec.output_dim(img.height, img.width));
    for r0 in (0..img.height).step_by(spec.block_h) {
        let r1 = (r0 + spec.block_h).min(img.height);
        for c0 in (0..img.width).step_by(spec.block_w) {
            let c1 = (c0 + spec.block_w).min(img.width);
            let sum: u64 = (r0..r1)
                .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                .map(|(r, c)| img.get(r, c) as u64)
                .sum();
            out.push(sum as f64 / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Ok(out)
}

/// Block-mean feature vector with intensities scaled to `[0, 1]` by
/// `maxval`, optionally scaled to unit L2 norm. The zero vector is left as is.
pub fn downsample(img: &GrayImage, spec: BlockSpec, normalize: bool) -> Result<Vec<f64>, FeatureError> {
    let scale = img.maxval as f64;
    let mut v: Vec<f64> = block_means(img, spec)?.into_iter().map(|m| m / scale).collect();
    if normalize {
        let norm = crate::numeric::norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
    Ok(v)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, FeatureError> {
    let io = |source| FeatureError::Io { path: dir.to_path_buf(), source };
    let mut entries = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    entries.sort();
    Ok(entries)
}

fn is_pgm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Walks `root/<client_id>/<sample>.pgm` and down-samples every image.
///
/// Output order is lexicographic by client directory, then by file name.
pub fn extract_dataset(root: &Path, spec: BlockSpec, normalize: bool) -> Result<Vec<Template>, FeatureError> {
    let mut jobs = Vec::new();
    for client_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let client_id = client_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for file in sorted_entries(&client_dir)?.into_iter().filter(|p| is_pgm(p)) {
            jobs.push((client_id.clone(), file));
        }
    }

    jobs.into_par_iter()
        .map(|(client_id, path)| {
            let bytes = fs::read(&path).map_err(|source| FeatureError::Io { path: path.clone(), source })?;
            let values = load_pgm(&bytes)
                .and_then(|img| downsample(&img, spec, normalize))
                .map_err(|e| FeatureError::File { path: path.clone(), source: Box::new(e) })?;
            let sample_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(Template { client_id, sample_id, values })
        })
        .collect()
}
