//! PPM/PFM/PGM rasters, camera records and the dataset manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::geometry::{Aabb, Camera, Intrinsics, Pose, Vec3};
use crate::image::{DepthMap, Image, LabelMap};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Netpbm-style header tokenizer that tracks byte offsets.
struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Result<(&'a str, usize)> {
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(self.name, start, "unexpected end of header"));
        }
        let s = std::str::from_utf8(&self.buf[start..self.pos]).map_err(|_| Error::parse(self.name, start, "non-ASCII header"))?;
        Ok((s, start))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<(T, usize)> {
        let (s, at) = self.token()?;
        let v = s.parse().map_err(|_| Error::parse(self.name, at, format!("bad {what} '{s}'")))?;
        Ok((v, at))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn end(&mut self) -> Result<usize> {
        if self.pos >= self.buf.len() || !self.buf[self.pos].is_ascii_whitespace() {
            return Err(Error::parse(self.name, self.pos, "header must end with one whitespace byte"));
        }
        Ok(self.pos + 1)
    }
}

fn pnm_header<'a>(buf: &'a [u8], name: &'a str, magic: &str) -> Result<(usize, usize, usize)> {
    let mut h = Header { buf, pos: 0, name };
    let (m, _) = h.token()?;
    if m != magic {
        return Err(Error::parse(name, 0, format!("expected magic {magic}, found '{m}'")));
    }
    let (w, _): (usize, _) = h.number("width")?;
    let (hgt, _): (usize, _) = h.number("height")?;
    let (maxval, at): (u32, _) = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(name, at, format!("only maxval 255 is supported, found {maxval}")));
    }
    let body = h.end()?;
    let want = body + w * hgt * if magic == "P6" { 3 } else { 1 };
    if buf.len() != want {
        return Err(Error::parse(name, body, format!("expected {want} bytes, found {}", buf.len())));
    }
    Ok((w, hgt, body))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255).
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    write_file(path, &out)
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let buf = read_file(path)?;
    let name = path.display().to_string();
    let (w, h, body) = pnm_header(&buf, &name, "P6")?;
    Ok(Image { width: w, height: h, data: buf[body..].iter().map(|&b| b as f32 / 255.0).collect() })
}

/// Binary PGM (P5, maxval 255) of class ids.
pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width, labels.height).into_bytes();
    out.extend_from_slice(&labels.data);
    write_file(path, &out)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let buf = read_file(path)?;
    let name = path.display().to_string();
    let (w, h, body) = pnm_header(&buf, &name, "P5")?;
    Ok(LabelMap { width: w, height: h, data: buf[body..].to_vec() })
}

/// Little-endian PFM (scale −1), rows stored bottom to top.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            out.extend_from_slice(&depth.get(x, y).to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let buf = read_file(path)?;
    let name = path.display().to_string();
    let mut h = Header { buf: &buf, pos: 0, name: &name };
    let (m, _) = h.token()?;
    if m != "Pf" {
        return Err(Error::parse(&name, 0, format!("expected magic Pf, found '{m}'")));
    }
    let (w, _): (usize, _) = h.number("width")?;
    let (hgt, _): (usize, _) = h.number("height")?;
    let (scale, at): (f64, _) = h.number("scale")?;
    if scale >= 0.0 {
        return Err(Error::parse(&name, at, "only little-endian PFM (negative scale) is supported"));
    }
    let body = h.end()?;
    let want = body + 4 * w * hgt;
    if buf.len() != want {
        return Err(Error::parse(&name, body, format!("expected {want} bytes, found {}", buf.len())));
    }
    let mut d = DepthMap::new(w, hgt);
    let mut chunks = buf[body..].chunks_exact(4);
    for y in (0..hgt).rev() {
        for x in 0..w {
            let c = chunks.next().expect("size checked");
            d.set(x, y, f32::from_le_bytes(c.try_into().expect("4 bytes")));
        }
    }
    Ok(d)
}

/// One record per camera: id fx fy cx cy width height, then the 12 row-major
/// world→camera pose entries.
pub fn write_cameras(path: &Path, cams: &[(usize, Camera)]) -> Result<()> {
    let mut s = String::from("# id fx fy cx cy width height r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2\n");
    for (id, c) in cams {
        let k = &c.intrinsics;
        write!(s, "{id} {:?} {:?} {:?} {:?} {} {}", k.fx, k.fy, k.cx, k.cy, k.width, k.height).expect("string write");
        for v in c.pose.to_row_major() {
            write!(s, " {v:?}").expect("string write");
        }
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_cameras(path: &Path) -> Result<Vec<(usize, Camera)>> {
    let buf = read_file(path)?;
    let name = path.display().to_string();
    let text = String::from_utf8(buf).map_err(|e| Error::parse(&name, e.utf8_error().valid_up_to(), "not UTF-8"))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = body.split_whitespace().collect();
        if f.len() != 19 {
            return Err(Error::parse(&name, at, format!("camera record needs 19 fields, found {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| Error::parse(&name, at, format!("bad number '{}'", f[i])));
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| Error::parse(&name, at, format!("bad integer '{}'", f[i])));
        let id = int(0)?;
        let k = Intrinsics::new(num(1)?, num(2)?, num(3)?, num(4)?, int(5)?, int(6)?).map_err(|e| Error::parse(&name, at, e.to_string()))?;
        let mut rm = [0.0; 12];
        for (j, v) in rm.iter_mut().enumerate() {
            *v = num(7 + j)?;
        }
        let pose = Pose::from_row_major(&rm).map_err(|e| Error::parse(&name, at, e.to_string()))?;
        out.push((id, Camera { intrinsics: k, pose }));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// A posed frame with its optional ground truth.
#[derive(Clone, Debug)]
pub struct Frame {
    pub id: usize,
    pub timestamp: f64,
    pub split: Split,
    pub camera: Camera,
    pub image: Image,
    pub depth: Option<DepthMap>,
    pub labels: Option<LabelMap>,
}

/// A posed image sequence plus the reconstruction volume.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub spec: GridSpec,
    /// Semantic classes including free space (class 0).
    pub num_classes: usize,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == Split::Train).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].split == Split::Test).collect()
    }

    fn rel(i: usize, dir: &str, ext: &str) -> String {
        format!("{dir}/{i:03}.{ext}")
    }

    /// Writes images, optional depths/labels, cameras.txt and manifest.txt.
    pub fn save(&self, root: &Path) -> Result<()> {
        for d in ["images", "depths", "labels"] {
            let p = root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let b = &self.spec.bounds;
        let mut m = String::from("# sdfocc dataset manifest v1\n");
        writeln!(
            m,
            "bounds {:?} {:?} {:?} {:?} {:?} {:?}",
            b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
        )
        .expect("string write");
        writeln!(m, "voxel_size {:?}", self.spec.voxel_size).expect("string write");
        writeln!(m, "classes {}", self.num_classes).expect("string write");
        for (i, f) in self.frames.iter().enumerate() {
            let img = Self::rel(i, "images", "ppm");
            write_ppm(&root.join(&img), &f.image)?;
            let depth = match &f.depth {
                Some(d) => {
                    let r = Self::rel(i, "depths", "pfm");
                    write_pfm(&root.join(&r), d)?;
                    r
                }
                None => "-".into(),
            };
            let labels = match &f.labels {
                Some(l) => {
                    let r = Self::rel(i, "labels", "pgm");
                    write_pgm(&root.join(&r), l)?;
                    r
                }
                None => "-".into(),
            };
            writeln!(m, "frame {} {:?} {} {img} {depth} {labels}", f.id, f.timestamp, f.split.as_str()).expect("string write");
        }
        let cams: Vec<(usize, Camera)> = self.frames.iter().map(|f| (f.id, f.camera)).collect();
        write_cameras(&root.join("cameras.txt"), &cams)?;
        write_file(&root.join("manifest.txt"), m.as_bytes())
    }

    pub fn load(root: &Path) -> Result<Dataset> {
        let mpath = root.join("manifest.txt");
        let name = mpath.display().to_string();
        let text = String::from_utf8(read_file(&mpath)?).map_err(|e| Error::parse(&name, e.utf8_error().valid_up_to(), "not UTF-8"))?;
        let cams = read_cameras(&root.join("cameras.txt"))?;
        let mut bounds = None;
        let mut voxel = None;
        let mut classes = 0usize;
        let mut frames = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = body.split_whitespace().collect();
            let err = |msg: String| Error::parse(&name, at, msg);
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(&name, at, format!("bad number '{s}'")));
            match f[0] {
                "bounds" if f.len() == 7 => {
                    let v: Vec<f64> = f[1..].iter().map(|s| num(s)).collect::<Result<_>>()?;
                    let b = Aabb::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])).map_err(|e| err(e.to_string()))?;
                    bounds = Some(b);
                }
                "voxel_size" if f.len() == 2 => voxel = Some(num(f[1])?),
                "classes" if f.len() == 2 => classes = f[1].parse().map_err(|_| err(format!("bad class count '{}'", f[1])))?,
                "frame" if f.len() == 7 => {
                    let id: usize = f[1].parse().map_err(|_| err(format!("bad frame id '{}'", f[1])))?;
                    let timestamp = num(f[2])?;
                    let split = match f[3] {
                        "train" => Split::Train,
                        "test" => Split::Test,
                        s => return Err(err(format!("unknown split '{s}'"))),
                    };
                    let camera = cams
                        .iter()
                        .find(|(cid, _)| *cid == id)
                        .map(|c| c.1)
                        .ok_or_else(|| err(format!("frame {id} has no camera record")))?;
                    let image = read_ppm(&root.join(f[4]))?;
                    if image.width != camera.intrinsics.width || image.height != camera.intrinsics.height {
                        return Err(err(format!("image of frame {id} does not match its intrinsics")));
                    }
                    let depth = if f[5] == "-" { None } else { Some(read_pfm(&root.join(f[5]))?) };
                    let labels = if f[6] == "-" { None } else { Some(read_pgm(&root.join(f[6]))?) };
                    if let Some(prev) = frames.last().map(|fr: &Frame| fr.timestamp) {
                        if !(timestamp > prev) {
                            return Err(err("timestamps must increase strictly".into()));
                        }
                    }
                    frames.push(Frame { id, timestamp, split, camera, image, depth, labels });
                }
                _ => return Err(err(format!("unrecognized manifest line '{body}'"))),
            }
        }
        let bounds = bounds.ok_or_else(|| Error::parse(&name, 0, "manifest lacks a bounds line"))?;
        let voxel = voxel.ok_or_else(|| Error::parse(&name, 0, "manifest lacks a voxel_size line"))?;
        let res = bounds.extent().0.map(|e| (e / voxel).round() as usize);
        let spec = GridSpec::new(bounds, res).map_err(|e| Error::parse(&name, 0, e.to_string()))?;
        if frames.is_empty() {
            return Err(Error::parse(&name, 0, "manifest lists no frames"));
        }
        Ok(Dataset { root: root.to_path_buf(), spec, num_classes: classes, frames })
    }
}
