//! File formats: 8-bit PGM/PNG images and class-code masks with their JSON
//! sidecars, plus content digests.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::maskops::LabeledMask;

/// Sidecar stored next to every mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub scale_um_per_px: f64,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette_um: Option<f64>,
}

impl MaskSidecar {
    pub fn new(scale_um_per_px: f64, source_id: impl Into<String>) -> Self {
        Self {
            scale_um_per_px,
            source_id: source_id.into(),
            section: None,
            z_um: None,
            silhouette_um: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Strips `.mask.pgm`, `.mask.png`, `.pgm` or `.png` from a file name.
pub fn mask_stem(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    [".mask.pgm", ".mask.png", ".pgm", ".png"]
        .iter()
        .find_map(|suffix| name.strip_suffix(suffix))
        .map(str::to_owned)
}

/// `dir/stem.meta.json` for a mask at `dir/stem.mask.pgm`.
pub fn sidecar_path(mask_path: &Path) -> PathBuf {
    let stem = mask_stem(mask_path).unwrap_or_else(|| "mask".into());
    mask_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .expect("in-memory PGM encoding");
    buf
}

pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    buf
}

/// Writes `bytes` to `path`, creating parent directories; returns the digest.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<V: serde::de::DeserializeOwned>(path: &Path) -> Result<V> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

/// Writes a grayscale image as PNG when the extension says so, PGM otherwise.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<String> {
    let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        encode_png(img)
    } else {
        encode_pgm(img)
    };
    write_bytes(path, &bytes)
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Image {
        path: path.into(),
        source: e,
    })?;
    Ok(img.into_luma8())
}

pub fn mask_to_gray(mask: &LabeledMask) -> GrayImage {
    GrayImage::from_raw(mask.width(), mask.height(), mask.codes()).expect("mask buffer size")
}

/// Writes the class-code image and its sidecar; returns both digests.
pub fn write_mask(path: &Path, mask: &LabeledMask, sidecar: &MaskSidecar) -> Result<(String, String)> {
    let img_digest = write_gray(path, &mask_to_gray(mask))?;
    let meta_digest = write_json(&sidecar_path(path), sidecar)?;
    Ok((img_digest, meta_digest))
}

/// Reads a class-code image; the scale comes from the sidecar when present,
/// 1 μm/px otherwise.
pub fn read_mask(path: &Path) -> Result<(LabeledMask, Option<MaskSidecar>)> {
    let img = read_gray(path)?;
    let side = sidecar_path(path);
    let sidecar: Option<MaskSidecar> = if side.exists() {
        Some(read_json(&side)?)
    } else {
        None
    };
    let scale = sidecar.as_ref().map_or(1.0, |s| s.scale_um_per_px);
    let mask = LabeledMask::from_codes(img.width(), img.height(), img.as_raw(), scale)?;
    Ok((mask, sidecar))
}

/// Decodes an in-memory PGM/PNG into a grayscale image.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io("<memory>", e))?
        .decode()
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            source: e,
        })?;
    Ok(img.into_luma8())
}
