//! COLMAP sparse models (`cameras`, `images`, `points3D`) in text and binary form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::camera::Camera;
use crate::error::{Error, IoContext, Result};
use crate::math::{quat_to_mat, Vec3};
use crate::pointcloud::PointCloud;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: String,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    /// `(x, y, point3D id)`; id −1 when unmatched.
    pub points2d: Vec<(f64, f64, i64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    /// `(image id, point2D index)`.
    pub track: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColmapModel {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    /// Sorted by image id.
    pub images: Vec<ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

const MODELS: [(&str, usize); 11] = [
    ("SIMPLE_PINHOLE", 3),
    ("PINHOLE", 4),
    ("SIMPLE_RADIAL", 4),
    ("RADIAL", 5),
    ("OPENCV", 8),
    ("OPENCV_FISHEYE", 8),
    ("FULL_OPENCV", 12),
    ("FOV", 5),
    ("SIMPLE_RADIAL_FISHEYE", 4),
    ("RADIAL_FISHEYE", 5),
    ("THIN_PRISM_FISHEYE", 12),
];

fn model_param_count(name: &str) -> Option<usize> {
    MODELS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c)
}

impl ColmapCamera {
    /// `(fx, fy, cx, cy)`. Distortion models are accepted only when every
    /// distortion coefficient is zero.
    pub fn pinhole(&self) -> Result<[f64; 4]> {
        let p = &self.params;
        let zero_tail = |from: usize| p[from..].iter().all(|v| *v == 0.0);
        match self.model.as_str() {
            "SIMPLE_PINHOLE" => Ok([p[0], p[0], p[1], p[2]]),
            "PINHOLE" => Ok([p[0], p[1], p[2], p[3]]),
            "SIMPLE_RADIAL" | "RADIAL" if zero_tail(3) => Ok([p[0], p[0], p[1], p[2]]),
            "OPENCV" | "FULL_OPENCV" if zero_tail(4) => Ok([p[0], p[1], p[2], p[3]]),
            _ => Err(Error::UnsupportedCameraModel(self.model.clone())),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { file: self.file.to_path_buf(), offset: self.pos as u64, message: message.into() }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos = end;
        Ok(s.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn count(&mut self, record_min: usize) -> Result<usize> {
        let n = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(record_min as u64) > left {
            return Err(self.err(format!("count {n} exceeds the remaining {left} bytes")));
        }
        Ok(n as usize)
    }

    fn cstr(&mut self) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|b| *b == 0).ok_or_else(|| self.err("unterminated image name"))?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| self.err("image name is not UTF-8"))?;
        self.pos += end + 1;
        Ok(s.to_string())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).at(path)
}

fn id32(v: i64, r: &Reader<'_>) -> Result<u32> {
    u32::try_from(v).map_err(|_| r.err(format!("id {v} out of range")))
}

fn read_cameras_bin(path: &Path) -> Result<BTreeMap<u32, ColmapCamera>> {
    let bytes = read_file(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, file: path };
    let n = r.count(24)?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let id = r.i32()?;
        let id = id32(id as i64, &r)?;
        let model_id = r.i32()?;
        let (name, count) = usize::try_from(model_id)
            .ok()
            .and_then(|m| MODELS.get(m))
            .copied()
            .ok_or_else(|| r.err(format!("unknown camera model id {model_id}")))?;
        let width = r.u64()?;
        let height = r.u64()?;
        let params = (0..count).map(|_| r.f64()).collect::<Result<_>>()?;
        out.insert(id, ColmapCamera { id, model: name.to_string(), width, height, params });
    }
    r.done()?;
    Ok(out)
}

fn read_images_bin(path: &Path) -> Result<Vec<ColmapImage>> {
    let bytes = read_file(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, file: path };
    let n = r.count(64)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.i32()?;
        let id = id32(id as i64, &r)?;
        let qvec = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let tvec = [r.f64()?, r.f64()?, r.f64()?];
        let cam = r.i32()?;
        let camera_id = id32(cam as i64, &r)?;
        let name = r.cstr()?;
        let np = r.count(24)?;
        let mut points2d = Vec::with_capacity(np);
        for _ in 0..np {
            points2d.push((r.f64()?, r.f64()?, r.i64()?));
        }
        out.push(ColmapImage { id, qvec, tvec, camera_id, name, points2d });
    }
    r.done()?;
    out.sort_by_key(|i| i.id);
    Ok(out)
}

fn read_points_bin(path: &Path) -> Result<Vec<ColmapPoint>> {
    let bytes = read_file(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, file: path };
    let n = r.count(43)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64()?;
        let xyz = [r.f64()?, r.f64()?, r.f64()?];
        let rgb = [r.u8()?, r.u8()?, r.u8()?];
        let error = r.f64()?;
        let nt = r.count(8)?;
        let mut track = Vec::with_capacity(nt);
        for _ in 0..nt {
            track.push((r.u32()?, r.u32()?));
        }
        out.push(ColmapPoint { id, xyz, rgb, error, track });
    }
    r.done()?;
    Ok(out)
}

/// Non-comment lines with their byte offsets.
fn text_lines(path: &Path) -> Result<(String, Vec<(usize, usize)>)> {
    let text = fs::read_to_string(path).at(path)?;
    let mut spans = Vec::new();
    let mut off = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            spans.push((off, off + line.trim_end().len()));
        }
        off += line.len();
    }
    Ok((text, spans))
}

struct Fields<'a> {
    it: std::str::SplitWhitespace<'a>,
    file: &'a Path,
    offset: usize,
}

impl<'a> Fields<'a> {
    fn new(text: &'a str, span: (usize, usize), file: &'a Path) -> Self {
        Self { it: text[span.0..span.1].split_whitespace(), file, offset: span.0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { file: self.file.to_path_buf(), offset: self.offset as u64, message: message.into() }
    }

    fn word(&mut self) -> Result<&'a str> {
        self.it.next().ok_or_else(|| self.err("missing field"))
    }

    fn parse<V: std::str::FromStr>(&mut self, what: &str) -> Result<V> {
        let w = self.word()?;
        w.parse().map_err(|_| self.err(format!("bad {what} '{w}'")))
    }

    fn rest(&mut self) -> Vec<&'a str> {
        self.it.by_ref().collect()
    }
}

fn read_cameras_txt(path: &Path) -> Result<BTreeMap<u32, ColmapCamera>> {
    let (text, lines) = text_lines(path)?;
    let mut out = BTreeMap::new();
    for span in lines {
        let mut f = Fields::new(&text, span, path);
        let id = f.parse("camera id")?;
        let model = f.word()?.to_string();
        let width = f.parse("width")?;
        let height = f.parse("height")?;
        let params: Vec<f64> = f
            .rest()
            .iter()
            .map(|w| w.parse().map_err(|_| f.err(format!("bad camera parameter '{w}'"))))
            .collect::<Result<_>>()?;
        match model_param_count(&model) {
            Some(c) if c == params.len() => {}
            Some(c) => return Err(f.err(format!("{model} takes {c} parameters, found {}", params.len()))),
            None => return Err(Error::UnsupportedCameraModel(model)),
        }
        out.insert(id, ColmapCamera { id, model, width, height, params });
    }
    Ok(out)
}

fn read_images_txt(path: &Path) -> Result<Vec<ColmapImage>> {
    let (text, lines) = text_lines(path)?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let mut f = Fields::new(&text, lines[i], path);
        let id = f.parse("image id")?;
        let qvec = [f.parse("qw")?, f.parse("qx")?, f.parse("qy")?, f.parse("qz")?];
        let tvec = [f.parse("tx")?, f.parse("ty")?, f.parse("tz")?];
        let camera_id = f.parse("camera id")?;
        let name = f.rest().join(" ");
        if name.is_empty() {
            return Err(f.err("missing image name"));
        }
        // The observation line may be empty, in which case text_lines dropped it.
        let mut points2d = Vec::new();
        if let Some(&next) = lines.get(i + 1) {
            let line = &text[next.0..next.1];
            let words: Vec<&str> = line.split_whitespace().collect();
            let looks_like_header = words.len() >= 10 && !words.len().is_multiple_of(3);
            if !looks_like_header && words.len().is_multiple_of(3) && !words.is_empty() && !is_image_header(line) {
                let g = Fields::new(&text, next, path);
                for c in words.chunks(3) {
                    let x = c[0].parse().map_err(|_| g.err(format!("bad x '{}'", c[0])))?;
                    let y = c[1].parse().map_err(|_| g.err(format!("bad y '{}'", c[1])))?;
                    let pid = c[2].parse().map_err(|_| g.err(format!("bad point id '{}'", c[2])))?;
                    points2d.push((x, y, pid));
                }
                i += 1;
            }
        }
        out.push(ColmapImage { id, qvec, tvec, camera_id, name, points2d });
        i += 1;
    }
    out.sort_by_key(|im| im.id);
    Ok(out)
}

/// An image header has an integer id, seven floats and an integer camera id before the name.
fn is_image_header(line: &str) -> bool {
    let w: Vec<&str> = line.split_whitespace().collect();
    w.len() >= 10
        && w[0].parse::<u32>().is_ok()
        && w[1..8].iter().all(|v| v.parse::<f64>().is_ok())
        && w[8].parse::<u32>().is_ok()
        && w[9].parse::<f64>().is_err()
}

fn read_points_txt(path: &Path) -> Result<Vec<ColmapPoint>> {
    let (text, lines) = text_lines(path)?;
    let mut out = Vec::with_capacity(lines.len());
    for span in lines {
        let mut f = Fields::new(&text, span, path);
        let id = f.parse("point id")?;
        let xyz = [f.parse("x")?, f.parse("y")?, f.parse("z")?];
        let rgb = [f.parse("red")?, f.parse("green")?, f.parse("blue")?];
        let error = f.parse("error")?;
        let rest = f.rest();
        if !rest.len().is_multiple_of(2) {
            return Err(f.err("track has an odd number of entries"));
        }
        let track = rest
            .chunks(2)
            .map(|c| match (c[0].parse(), c[1].parse()) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(f.err("bad track entry")),
            })
            .collect::<Result<_>>()?;
        out.push(ColmapPoint { id, xyz, rgb, error, track });
    }
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same value
    format!("{v:?}")
}

impl ColmapModel {
    /// Read `cameras`, `images` and `points3D`, preferring `.bin` files when present.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let bin = dir.join("cameras.bin");
        if bin.exists() {
            Self::read_binary(dir)
        } else if dir.join("cameras.txt").exists() {
            Self::read_text(dir)
        } else {
            Err(Error::InvalidInput(format!("no COLMAP model (cameras.bin or cameras.txt) in {}", dir.display())))
        }
    }

    pub fn read_binary(dir: &Path) -> Result<Self> {
        Ok(Self {
            cameras: read_cameras_bin(&dir.join("cameras.bin"))?,
            images: read_images_bin(&dir.join("images.bin"))?,
            points: read_points_bin(&dir.join("points3D.bin"))?,
        })
    }

    pub fn read_text(dir: &Path) -> Result<Self> {
        Ok(Self {
            cameras: read_cameras_txt(&dir.join("cameras.txt"))?,
            images: read_images_txt(&dir.join("images.txt"))?,
            points: read_points_txt(&dir.join("points3D.txt"))?,
        })
    }

    pub fn write_text(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let mut s = String::from("# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
        for c in self.cameras.values() {
            let p: Vec<String> = c.params.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(s, "{} {} {} {} {}", c.id, c.model, c.width, c.height, p.join(" ")).unwrap();
        }
        write(&dir.join("cameras.txt"), s.as_bytes())?;

        let mut s = String::from("# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n");
        for im in &self.images {
            let q: Vec<String> = im.qvec.iter().chain(&im.tvec).map(|v| fmt_f64(*v)).collect();
            writeln!(s, "{} {} {} {}", im.id, q.join(" "), im.camera_id, im.name).unwrap();
            let p: Vec<String> =
                im.points2d.iter().map(|(x, y, id)| format!("{} {} {id}", fmt_f64(*x), fmt_f64(*y))).collect();
            writeln!(s, "{}", p.join(" ")).unwrap();
        }
        write(&dir.join("images.txt"), s.as_bytes())?;

        let mut s = String::from("# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
        for p in &self.points {
            let t: Vec<String> = p.track.iter().map(|(a, b)| format!("{a} {b}")).collect();
            writeln!(
                s,
                "{} {} {} {} {} {} {} {} {}",
                p.id,
                fmt_f64(p.xyz[0]),
                fmt_f64(p.xyz[1]),
                fmt_f64(p.xyz[2]),
                p.rgb[0],
                p.rgb[1],
                p.rgb[2],
                fmt_f64(p.error),
                t.join(" ")
            )
            .unwrap();
        }
        write(&dir.join("points3D.txt"), s.as_bytes())
    }

    pub fn write_binary(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let mut b = Vec::new();
        b.extend((self.cameras.len() as u64).to_le_bytes());
        for c in self.cameras.values() {
            let model = MODELS
                .iter()
                .position(|(n, _)| *n == c.model)
                .ok_or_else(|| Error::UnsupportedCameraModel(c.model.clone()))?;
            b.extend((c.id as i32).to_le_bytes());
            b.extend((model as i32).to_le_bytes());
            b.extend(c.width.to_le_bytes());
            b.extend(c.height.to_le_bytes());
            for p in &c.params {
                b.extend(p.to_le_bytes());
            }
        }
        write(&dir.join("cameras.bin"), &b)?;

        let mut b = Vec::new();
        b.extend((self.images.len() as u64).to_le_bytes());
        for im in &self.images {
            b.extend((im.id as i32).to_le_bytes());
            for v in im.qvec.iter().chain(&im.tvec) {
                b.extend(v.to_le_bytes());
            }
            b.extend((im.camera_id as i32).to_le_bytes());
            b.extend(im.name.as_bytes());
            b.push(0);
            b.extend((im.points2d.len() as u64).to_le_bytes());
            for (x, y, id) in &im.points2d {
                b.extend(x.to_le_bytes());
                b.extend(y.to_le_bytes());
                b.extend(id.to_le_bytes());
            }
        }
        write(&dir.join("images.bin"), &b)?;

        let mut b = Vec::new();
        b.extend((self.points.len() as u64).to_le_bytes());
        for p in &self.points {
            b.extend(p.id.to_le_bytes());
            for v in &p.xyz {
                b.extend(v.to_le_bytes());
            }
            b.extend(p.rgb);
            b.extend(p.error.to_le_bytes());
            b.extend((p.track.len() as u64).to_le_bytes());
            for (a, c) in &p.track {
                b.extend(a.to_le_bytes());
                b.extend(c.to_le_bytes());
            }
        }
        write(&dir.join("points3D.bin"), &b)
    }

    /// One pinhole [`Camera`] per image (id = image id), sorted by image name.
    pub fn to_cameras<T: Real>(&self) -> Result<Vec<Camera<T>>> {
        let mut images: Vec<&ColmapImage> = self.images.iter().collect();
        images.sort_by(|a, b| a.name.cmp(&b.name).then(a.id.cmp(&b.id)));
        images
            .into_iter()
            .map(|im| {
                let c = self.cameras.get(&im.camera_id).ok_or_else(|| {
                    Error::InvalidInput(format!("image {} refers to missing camera {}", im.id, im.camera_id))
                })?;
                let [fx, fy, cx, cy] = c.pinhole()?;
                let q = im.qvec.map(T::lit);
                Camera::new(
                    im.id,
                    T::lit(fx),
                    T::lit(fy),
                    T::lit(cx),
                    T::lit(cy),
                    c.width as usize,
                    c.height as usize,
                    quat_to_mat(&q),
                    Vec3::from_array(im.tvec.map(T::lit)),
                )
            })
            .collect()
    }

    pub fn point_cloud<T: Real>(&self) -> Result<PointCloud<T>> {
        PointCloud::new(
            self.points.iter().map(|p| Vec3::from_array(p.xyz.map(T::lit))).collect(),
            self.points.iter().map(|p| p.rgb.map(|c| T::lit(c as f64 / 255.0))).collect(),
        )
    }

    /// Image names keyed by image id.
    pub fn image_names(&self) -> BTreeMap<u32, String> {
        self.images.iter().map(|im| (im.id, im.name.clone())).collect()
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).at(path)
}

/// Pinhole cameras sorted by image name, the SfM points, and image names by id.
pub fn load_colmap_sparse<T: Real>(dir: &Path) -> Result<(Vec<Camera<T>>, PointCloud<T>, BTreeMap<u32, String>)> {
    let model = ColmapModel::read_dir(dir)?;
    Ok((model.to_cameras()?, model.point_cloud()?, model.image_names()))
}

/// Locate the sparse model inside a scene directory (`sparse/0`, `sparse`, or the directory itself).
pub fn find_sparse_dir(scene: &Path) -> Result<PathBuf> {
    for cand in [scene.join("sparse").join("0"), scene.join("sparse"), scene.to_path_buf()] {
        if cand.join("cameras.bin").exists() || cand.join("cameras.txt").exists() {
            return Ok(cand);
        }
    }
    Err(Error::InvalidInput(format!("no COLMAP sparse model under {}", scene.display())))
}
