//! Portable float maps, single channel. Rows are stored bottom to top; the sign of the
//! scale field gives the byte order.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

use super::DepthMap;

/// Read a `Pf` map as `(width, height, values)` in top-to-bottom row order.
pub fn read_pfm_raw(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).at(path)?;
    let err = |offset: usize, m: &str| Error::Parse { file: path.to_path_buf(), offset: offset as u64, message: m.into() };
    let mut pos = 0;
    let mut tokens = Vec::new();
    // magic, width, height, scale: whitespace separated, one whitespace byte before the data
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "truncated header"));
        }
        tokens.push((start, std::str::from_utf8(&bytes[start..pos]).map_err(|_| err(start, "header is not ASCII"))?));
    }
    pos += 1;
    match tokens[0].1 {
        "Pf" => {}
        "PF" => return Err(err(0, "three-channel PFM is not a depth map")),
        _ => return Err(err(0, "missing Pf magic")),
    }
    let num = |(at, t): (usize, &str)| t.parse::<usize>().map_err(|_| err(at, "bad dimension"));
    let (w, h) = (num(tokens[1])?, num(tokens[2])?);
    let scale: f32 = tokens[3].1.parse().map_err(|_| err(tokens[3].0, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(err(tokens[3].0, "scale must be nonzero"));
    }
    let n = w.checked_mul(h).ok_or_else(|| err(tokens[1].0, "dimensions overflow"))?;
    if bytes.len() < pos || bytes.len() - pos != n * 4 {
        return Err(err(pos.min(bytes.len()), "data size does not match dimensions"));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; n];
    for (k, c) in bytes[pos..].chunks_exact(4).enumerate() {
        let a: [u8; 4] = c.try_into().unwrap();
        let v = if little { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) };
        let (row_from_bottom, col) = (k / w, k % w);
        data[(h - 1 - row_from_bottom) * w + col] = v;
    }
    Ok((w, h, data))
}

pub fn write_pfm_raw(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::InvalidInput("PFM data does not match dimensions".into()));
    }
    let mut out = Vec::with_capacity(32 + data.len() * 4);
    write!(out, "Pf\n{width} {height}\n-1.0\n").unwrap();
    for row in (0..height).rev() {
        for v in &data[row * width..(row + 1) * width] {
            out.extend(v.to_le_bytes());
        }
    }
    fs::write(path, out).at(path)
}

pub fn read_pfm(path: &Path, camera: u32) -> Result<DepthMap> {
    let (w, h, data) = read_pfm_raw(path)?;
    DepthMap::new(camera, w, h, data.into_iter().map(f64::from).collect())
}

/// Invalid pixels are written as 0.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let data: Vec<f32> = depth.data.iter().zip(&depth.valid).map(|(v, ok)| if *ok { *v as f32 } else { 0.0 }).collect();
    write_pfm_raw(path, depth.width, depth.height, &data)
}
