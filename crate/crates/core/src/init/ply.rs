//! PLY point clouds and the common Gaussian-splat PLY layout.
//!
//! Only the first element (`vertex`) is read. Vertex list properties are rejected.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::gaussians::GaussianCloud;
use crate::math::Vec3;
use crate::pointcloud::PointCloud;
use crate::scalar::Real;
use crate::sh::sh_coeff_count;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
    BinaryBigEndian,
}

impl PlyFormat {
    fn keyword(self) -> &'static str {
        match self {
            Self::Ascii => "ascii",
            Self::BinaryLittleEndian => "binary_little_endian",
            Self::BinaryBigEndian => "binary_big_endian",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! get {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => get!(i16, 2),
            Self::U16 => get!(u16, 2),
            Self::I32 => get!(i32, 4),
            Self::U32 => get!(u32, 4),
            Self::F32 => get!(f32, 4),
            Self::F64 => get!(f64, 8),
        }
    }
}

struct Header {
    format: PlyFormat,
    count: usize,
    props: Vec<(String, Scalar)>,
    body: usize,
}

fn perr(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { file: path.to_path_buf(), offset: offset as u64, message: message.into() }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    if !bytes.starts_with(b"ply") {
        return Err(perr(path, 0, "missing 'ply' magic"));
    }
    let mut pos = 0;
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut seen_element = false;
    loop {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|b| *b == b'\n').ok_or_else(|| perr(path, pos, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| perr(path, pos, "header is not UTF-8"))?.trim();
        let at = pos;
        pos += nl + 1;
        let w: Vec<&str> = line.split_whitespace().collect();
        match w.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(perr(path, at, format!("unknown format '{other}'"))),
                });
            }
            ["element", name, n] => {
                if !seen_element {
                    if *name != "vertex" {
                        return Err(perr(path, at, format!("first element is '{name}', expected 'vertex'")));
                    }
                    count = Some(n.parse().map_err(|_| perr(path, at, format!("bad vertex count '{n}'")))?);
                    in_vertex = true;
                } else {
                    in_vertex = false;
                }
                seen_element = true;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(perr(path, at, "list properties on vertices are not supported"));
            }
            ["property", ty, name] => {
                if in_vertex {
                    let s = Scalar::parse(ty).ok_or_else(|| perr(path, at, format!("unknown property type '{ty}'")))?;
                    props.push((name.to_string(), s));
                }
            }
            ["property", ..] if !in_vertex => {}
            ["end_header"] => break,
            _ => return Err(perr(path, at, format!("unexpected header line '{line}'"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| perr(path, 0, "missing format line"))?,
        count: count.ok_or_else(|| perr(path, 0, "missing vertex element"))?,
        props,
        body: pos,
    })
}

/// Vertex table as rows of `f64`, plus the property names.
fn read_vertices(path: &Path) -> Result<(Vec<(String, Scalar)>, Vec<Vec<f64>>)> {
    let bytes = fs::read(path).at(path)?;
    let h = parse_header(&bytes, path)?;
    let mut rows = Vec::with_capacity(h.count.min(1 << 24));
    match h.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[h.body..]).map_err(|_| perr(path, h.body, "body is not UTF-8"))?;
            let mut off = h.body;
            let mut lines = text.split_inclusive('\n');
            while rows.len() < h.count {
                let line = lines.next().ok_or_else(|| perr(path, off, "fewer vertices than declared"))?;
                let here = off;
                off += line.len();
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| perr(path, here, format!("bad number '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() != h.props.len() {
                    return Err(perr(path, here, format!("expected {} values, found {}", h.props.len(), vals.len())));
                }
                rows.push(vals);
            }
        }
        fmt => {
            let big = fmt == PlyFormat::BinaryBigEndian;
            let stride: usize = h.props.iter().map(|(_, s)| s.size()).sum();
            let need = stride
                .checked_mul(h.count)
                .filter(|n| h.body + n <= bytes.len())
                .ok_or_else(|| perr(path, bytes.len(), "fewer vertices than declared"))?;
            for r in bytes[h.body..h.body + need].chunks_exact(stride.max(1)).take(h.count) {
                let mut o = 0;
                let row = h
                    .props
                    .iter()
                    .map(|(_, s)| {
                        let v = s.decode(&r[o..], big);
                        o += s.size();
                        v
                    })
                    .collect();
                rows.push(row);
            }
        }
    }
    Ok((h.props, rows))
}

fn column(names: &[(String, Scalar)], name: &str) -> Option<usize> {
    names.iter().position(|(n, _)| n == name)
}

fn require(names: &[(String, Scalar)], name: &str, path: &Path) -> Result<usize> {
    column(names, name).ok_or_else(|| perr(path, 0, format!("missing vertex property '{name}'")))
}

/// Points with colors from `red`/`green`/`blue` (integers are divided by 255) and an
/// optional `confidence`. Other properties are ignored.
pub fn read_ply_points<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let (names, rows) = read_vertices(path)?;
    let xyz = [require(&names, "x", path)?, require(&names, "y", path)?, require(&names, "z", path)?];
    let rgb = [require(&names, "red", path)?, require(&names, "green", path)?, require(&names, "blue", path)?];
    let color_scale = rgb.map(|c| match names[c].1 {
        Scalar::F32 | Scalar::F64 => 1.0,
        Scalar::U16 | Scalar::I16 => 1.0 / 65535.0,
        _ => 1.0 / 255.0,
    });
    let conf = column(&names, "confidence");
    let mut pc = PointCloud::new(
        rows.iter().map(|r| Vec3::new(T::lit(r[xyz[0]]), T::lit(r[xyz[1]]), T::lit(r[xyz[2]]))).collect(),
        rows.iter().map(|r| [0, 1, 2].map(|k| T::lit(r[rgb[k]] * color_scale[k]))).collect(),
    )?;
    pc.confidences = conf.map(|c| rows.iter().map(|r| T::lit(r[c])).collect());
    pc.validate()?;
    Ok(pc)
}

fn header(out: &mut Vec<u8>, format: PlyFormat, n: usize, props: &[(&str, &str)]) {
    writeln!(out, "ply\nformat {} 1.0\nelement vertex {n}", format.keyword()).unwrap();
    for (ty, name) in props {
        writeln!(out, "property {ty} {name}").unwrap();
    }
    out.extend_from_slice(b"end_header\n");
}

fn put_f32(out: &mut Vec<u8>, v: f32, format: PlyFormat) {
    match format {
        PlyFormat::BinaryBigEndian => out.extend(v.to_be_bytes()),
        _ => out.extend(v.to_le_bytes()),
    }
}

/// Colors are written as `uchar`; confidences, when present, as `float`.
pub fn write_ply_points<T: Real>(path: &Path, pc: &PointCloud<T>, format: PlyFormat) -> Result<()> {
    pc.validate()?;
    let mut props = vec![("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];
    if pc.confidences.is_some() {
        props.push(("float", "confidence"));
    }
    let mut out = Vec::new();
    header(&mut out, format, pc.len(), &props);
    let byte = |c: T| (c.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    for i in 0..pc.len() {
        let p = pc.positions[i];
        let c = pc.colors[i].map(byte);
        let conf = pc.confidences.as_ref().map(|v| v[i].as_f64() as f32);
        if format == PlyFormat::Ascii {
            write!(out, "{} {} {} {} {} {}", p.x.as_f64() as f32, p.y.as_f64() as f32, p.z.as_f64() as f32, c[0], c[1], c[2])
                .unwrap();
            if let Some(v) = conf {
                write!(out, " {v}").unwrap();
            }
            out.push(b'\n');
        } else {
            for v in [p.x, p.y, p.z] {
                put_f32(&mut out, v.as_f64() as f32, format);
            }
            out.extend(c);
            if let Some(v) = conf {
                put_f32(&mut out, v, format);
            }
        }
    }
    fs::write(path, out).at(path)
}

fn gaussian_props(rest: usize) -> Vec<String> {
    let mut p: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    p.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    p.push("opacity".into());
    p.extend((0..3).map(|i| format!("scale_{i}")));
    p.extend((0..4).map(|i| format!("rot_{i}")));
    p
}

/// Binary little-endian float PLY with `f_rest` stored channel-major, log scales and
/// opacity logits, the layout most splat viewers read.
pub fn write_gaussian_ply<T: Real>(path: &Path, cloud: &GaussianCloud<T>) -> Result<()> {
    cloud.check_lengths()?;
    let stride = cloud.sh_stride();
    let rest = stride - 1;
    let names = gaussian_props(rest);
    let props: Vec<(&str, &str)> = names.iter().map(|n| ("float", n.as_str())).collect();
    let mut out = Vec::new();
    header(&mut out, PlyFormat::BinaryLittleEndian, cloud.len(), &props);
    let f = |out: &mut Vec<u8>, v: T| out.extend((v.as_f64() as f32).to_le_bytes());
    for i in 0..cloud.len() {
        let m = cloud.means[i];
        for v in [m.x, m.y, m.z, T::zero(), T::zero(), T::zero()] {
            f(&mut out, v);
        }
        let sh = cloud.sh_of(i);
        for c in 0..3 {
            f(&mut out, sh[0][c]);
        }
        for c in 0..3 {
            for coeff in sh.iter().skip(1) {
                f(&mut out, coeff[c]);
            }
        }
        f(&mut out, cloud.opacity_logits[i]);
        let s = cloud.log_scales[i];
        for v in [s.x, s.y, s.z] {
            f(&mut out, v);
        }
        for v in cloud.rotations[i] {
            f(&mut out, v);
        }
    }
    fs::write(path, out).at(path)
}

/// Inverse of [`write_gaussian_ply`]; the SH degree is inferred from the `f_rest` count.
pub fn read_gaussian_ply<T: Real>(path: &Path) -> Result<GaussianCloud<T>> {
    let (names, rows) = read_vertices(path)?;
    let rest3 = names.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    if rest3 % 3 != 0 {
        return Err(perr(path, 0, format!("{rest3} f_rest properties is not a multiple of 3")));
    }
    let rest = rest3 / 3;
    let degree = (0..=4)
        .find(|d| sh_coeff_count(*d) == rest + 1)
        .ok_or_else(|| perr(path, 0, format!("{rest3} f_rest properties match no SH degree")))?;
    let col = |n: &str| require(&names, n, path);
    let xyz = [col("x")?, col("y")?, col("z")?];
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let rest_cols: Vec<usize> = (0..rest3).map(|i| col(&format!("f_rest_{i}"))).collect::<Result<_>>()?;
    let op = col("opacity")?;
    let sc = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let mut cloud = GaussianCloud::with_capacity(degree, rows.len())?;
    let mut sh = vec![[T::zero(); 3]; rest + 1];
    for r in &rows {
        let v = |c: usize| T::lit(r[c]);
        sh[0] = dc.map(v);
        for k in 0..rest {
            for c in 0..3 {
                sh[k + 1][c] = v(rest_cols[c * rest + k]);
            }
        }
        cloud.push(
            Vec3::new(v(xyz[0]), v(xyz[1]), v(xyz[2])),
            Vec3::new(v(sc[0]), v(sc[1]), v(sc[2])),
            rot.map(v),
            v(op),
            &sh,
        )?;
    }
    cloud.check_finite()?;
    Ok(cloud)
}
