//! File IO: PNG (8/16-bit gray or RGB) and the raw-float planar format.
//!
//! Raw-float payloads are little-endian `f32`, row-major, one plane after
//! another, with a JSON sidecar next to the payload (`foo.f32` -> `foo.json`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FlowField, Image};
use crate::error::{Error, Result};

/// Sidecar header for images and flow fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Write a planar float payload plus its JSON sidecar.
pub fn write_planes<H: Serialize>(path: &Path, header: &H, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(header)?;
    json.push('\n');
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

/// Read a planar float payload and its sidecar.
pub fn read_planes<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f32>)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: H = serde_json::from_str(&text)?;
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{}: payload of {} bytes is not a whole number of f32 samples",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

fn read_planes_checked(path: &Path) -> Result<(PlaneHeader, Vec<f32>)> {
    let (h, data): (PlaneHeader, Vec<f32>) = read_planes(path)?;
    let expected = h.width * h.height * h.channels;
    if data.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}: header says {}x{}x{} ({} samples), payload has {}",
            path.display(),
            h.width,
            h.height,
            h.channels,
            expected,
            data.len()
        )));
    }
    Ok((h, data))
}

/// Read an image from `.png` or raw-float `.f32`.
pub fn read_image(path: &Path) -> Result<Image> {
    match extension(path).as_str() {
        "png" => read_png(path),
        "f32" => {
            let (h, data) = read_planes_checked(path)?;
            Image::from_planar(h.width, h.height, h.channels, data)
        }
        other => Err(Error::Unsupported(format!("image extension '{other}'"))),
    }
}

/// Write an image as 8-bit `.png` or raw-float `.f32`.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    match extension(path).as_str() {
        "png" => write_png(img, path, png::BitDepth::Eight),
        "f32" => write_planes(
            path,
            &PlaneHeader {
                width: img.width(),
                height: img.height(),
                channels: img.channels(),
            },
            img.data(),
        ),
        other => Err(Error::Unsupported(format!("image extension '{other}'"))),
    }
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let (h, mut data) = read_planes_checked(path)?;
    if h.channels != 2 {
        return Err(Error::DimensionMismatch(format!(
            "{}: flow needs 2 planes, header says {}",
            path.display(),
            h.channels
        )));
    }
    let dy = data.split_off(h.width * h.height);
    FlowField::from_planes(h.width, h.height, data, dy)
}

pub fn write_flow(flow: &FlowField, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(flow.dx().len() * 2);
    data.extend_from_slice(flow.dx());
    data.extend_from_slice(flow.dy());
    write_planes(
        path,
        &PlaneHeader {
            width: flow.width(),
            height: flow.height(),
            channels: 2,
        },
        &data,
    )
}

fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Unsupported("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Unsupported(format!("png color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let n = w * h;
    let mut data = vec![0f32; n * channels];
    match info.bit_depth {
        png::BitDepth::Eight => {
            for y in 0..h {
                let row = &buf[y * info.line_size..];
                for x in 0..w {
                    for c in 0..channels {
                        data[c * n + y * w + x] = row[x * channels + c] as f32 / 255.0;
                    }
                }
            }
        }
        png::BitDepth::Sixteen => {
            for y in 0..h {
                let row = &buf[y * info.line_size..];
                for x in 0..w {
                    for c in 0..channels {
                        let k = 2 * (x * channels + c);
                        let v = u16::from_be_bytes([row[k], row[k + 1]]);
                        data[c * n + y * w + x] = v as f32 / 65535.0;
                    }
                }
            }
        }
        other => return Err(Error::Unsupported(format!("png bit depth {other:?}"))),
    }
    Image::from_planar(w, h, channels, data)
}

/// Quantize a unit-interval sample, rounding half away from zero.
#[inline]
pub(crate) fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

pub(crate) fn write_png(img: &Image, path: &Path, depth: png::BitDepth) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(depth);
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut bytes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let v = img.get(x, y, c);
                match depth {
                    png::BitDepth::Sixteen => {
                        bytes.extend_from_slice(&(quantize(v, 65535.0) as u16).to_be_bytes())
                    }
                    _ => bytes.push(quantize(v, 255.0) as u8),
                }
            }
        }
    }
    let mut writer = enc.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Write a 16-bit PNG.
pub fn write_png16(img: &Image, path: &Path) -> Result<()> {
    write_png(img, path, png::BitDepth::Sixteen)
}
