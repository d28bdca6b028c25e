//! On-disk formats: DPF1 depth rasters, binary PPM, ASCII PLY, corner CSV,
//! board JSON, and the capture-bundle directory that groups them.
//!
//! DPF1 layout: `b"DPF1"`, then width, height and a reserved word as
//! little-endian `u32`, then `width * height` little-endian `f32` pixels in
//! row-major order. NaN marks invalid depth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde_json::{Map, Value};

use crate::camera::{DepthMap, Raster, RgbImage};
use crate::error::{Error, Result};
use crate::metadata::{parse_meta, CaptureMeta};
use crate::pose::Correspondence;

pub const DPF1_MAGIC: &[u8; 4] = b"DPF1";
pub const DPF1_HEADER_LEN: usize = 16;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(DPF1_HEADER_LEN + 4 * d.values().len());
    out.extend_from_slice(DPF1_MAGIC);
    out.extend_from_slice(&(d.width() as u32).to_le_bytes());
    out.extend_from_slice(&(d.height() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in d.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let bad = |reason: String| Error::format("depth.f32", reason);
    if bytes.len() < DPF1_HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != DPF1_MAGIC {
        return Err(bad("missing DPF1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let expected = DPF1_HEADER_LEN + 4 * w * h;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{w}x{h} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values = bytes[DPF1_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthMap::new(Raster::from_vec(w, h, values)?)
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_depth(&read_file(path.as_ref())?)
}

pub fn write_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    write_file(path.as_ref(), &encode_depth(d))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(3 * img.data.len());
    for px in &img.data {
        out.extend_from_slice(px);
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |reason: &str| Error::format("rgb.ppm", reason);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    // exactly one whitespace byte separates the header from the pixels
    let start = pos + 1;
    if bytes.len() != start + 3 * w * h {
        return Err(bad("pixel payload size does not match the header"));
    }
    let data = bytes[start..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Raster::from_vec(w, h, data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&read_file(path.as_ref())?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img))
}

pub fn encode_ply(points: &[Point3<f64>]) -> String {
    let mut s = String::with_capacity(64 + points.len() * 32);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
    }
    s
}

pub fn decode_ply(text: &str) -> Result<Vec<Point3<f64>>> {
    let bad = |reason: String| Error::format("cloud.ply", reason);
    let mut lines = text.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format ascii 1.0") {
        return Err(bad("expected an ASCII PLY header".into()));
    }
    let mut count = None;
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad(format!("bad vertex count {n:?}")))?);
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut pts = Vec::with_capacity(count);
    for (i, line) in lines.take(count).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("vertex {i} is not numeric")))?;
        if v.len() != 3 {
            return Err(bad(format!("vertex {i} has {} fields", v.len())));
        }
        pts.push(Point3::new(v[0], v[1], v[2]));
    }
    if pts.len() != count {
        return Err(bad(format!("header promises {count} vertices, found {}", pts.len())));
    }
    Ok(pts)
}

pub fn write_ply(path: impl AsRef<Path>, points: &[Point3<f64>]) -> Result<()> {
    write_file(path.as_ref(), encode_ply(points).as_bytes())
}

/// A detected corner before it is matched with the board.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerObservation {
    pub id: u32,
    pub u: f64,
    pub v: f64,
}

pub fn encode_corners(corners: &[CornerObservation]) -> String {
    let mut s = String::from("id,u,v\n");
    for c in corners {
        let _ = writeln!(s, "{},{},{}", c.id, c.u, c.v);
    }
    s
}

pub fn decode_corners(text: &str) -> Result<Vec<CornerObservation>> {
    let bad = |reason: String| Error::format("corners.csv", reason);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("id,u,v") {
        return Err(bad("header must be `id,u,v`".into()));
    }
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad(format!("row {} has {} fields", n + 1, f.len())));
        }
        let id = f[0].parse().map_err(|_| bad(format!("row {}: bad id {:?}", n + 1, f[0])))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("row {}: bad coordinate {s:?}", n + 1)))
        };
        if !ids.insert(id) {
            return Err(bad(format!("duplicate corner id {id}")));
        }
        out.push(CornerObservation {
            id,
            u: num(f[1])?,
            v: num(f[2])?,
        });
    }
    Ok(out)
}

pub fn read_corners(path: impl AsRef<Path>) -> Result<Vec<CornerObservation>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    decode_corners(&String::from_utf8_lossy(&bytes))
}

pub fn write_corners(path: impl AsRef<Path>, corners: &[CornerObservation]) -> Result<()> {
    write_file(path.as_ref(), encode_corners(corners).as_bytes())
}

/// Board corner positions in meters on the `z = 0` plane, keyed by id.
pub type BoardLayout = BTreeMap<u32, (f64, f64)>;

pub fn encode_board(board: &BoardLayout) -> String {
    let mut m = Map::new();
    for (id, &(x, y)) in board {
        m.insert(id.to_string(), serde_json::json!([x, y]));
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("board serializes");
    s.push('\n');
    s
}

pub fn decode_board(text: &[u8]) -> Result<BoardLayout> {
    let bad = |reason: String| Error::format("board.json", reason);
    let v: Value = serde_json::from_slice(text)?;
    let obj = v.as_object().ok_or_else(|| bad("expected an object of id -> [x, y]".into()))?;
    let mut out = BoardLayout::new();
    for (k, v) in obj {
        let id = k.parse::<u32>().map_err(|_| bad(format!("key {k:?} is not a corner id")))?;
        let xy = v
            .as_array()
            .filter(|a| a.len() == 2)
            .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
            .ok_or_else(|| bad(format!("corner {id} must be [x, y]")))?;
        out.insert(id, xy);
    }
    Ok(out)
}

pub fn read_board(path: impl AsRef<Path>) -> Result<BoardLayout> {
    decode_board(&read_file(path.as_ref())?)
}

pub fn write_board(path: impl AsRef<Path>, board: &BoardLayout) -> Result<()> {
    write_file(path.as_ref(), encode_board(board).as_bytes())
}

/// Pairs observations with board positions by id, in observation order.
pub fn match_corners(obs: &[CornerObservation], board: &BoardLayout) -> Result<Vec<Correspondence>> {
    obs.iter()
        .map(|o| {
            let &(x, y) = board
                .get(&o.id)
                .ok_or_else(|| Error::format("corners.csv", format!("corner id {} is not on the board", o.id)))?;
            Ok(Correspondence {
                id: o.id,
                board_point: Point3::new(x, y, 0.0),
                pixel: (o.u, o.v),
            })
        })
        .collect()
}

pub const META_FILE: &str = "meta.json";
pub const DEPTH_FILE: &str = "depth.f32";
pub const RGB_FILE: &str = "rgb.ppm";
pub const CORNERS_FILE: &str = "corners.csv";
pub const BOARD_FILE: &str = "board.json";

/// One capture on disk: metadata, depth, and optionally color, corners and board.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureBundle {
    pub meta: CaptureMeta,
    pub depth: DepthMap,
    pub rgb: Option<RgbImage>,
    pub corners: Option<Vec<CornerObservation>>,
    pub board: Option<BoardLayout>,
}

impl CaptureBundle {
    /// Reads a bundle; `depth.f32` and `meta.json` are required.
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let opt = |name: &str| -> Option<PathBuf> {
            let p = dir.join(name);
            p.is_file().then_some(p)
        };
        let meta = parse_meta(&read_file(&dir.join(META_FILE))?)?;
        let depth = read_depth(dir.join(DEPTH_FILE))?;
        Ok(CaptureBundle {
            meta,
            depth,
            rgb: opt(RGB_FILE).map(read_ppm).transpose()?,
            corners: opt(CORNERS_FILE).map(read_corners).transpose()?,
            board: opt(BOARD_FILE).map(read_board).transpose()?,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.meta.write(dir.join(META_FILE))?;
        write_depth(dir.join(DEPTH_FILE), &self.depth)?;
        if let Some(rgb) = &self.rgb {
            write_ppm(dir.join(RGB_FILE), rgb)?;
        }
        if let Some(c) = &self.corners {
            write_corners(dir.join(CORNERS_FILE), c)?;
        }
        if let Some(b) = &self.board {
            write_board(dir.join(BOARD_FILE), b)?;
        }
        Ok(())
    }

    /// Corner/board correspondences, if both files are present.
    pub fn correspondences(&self) -> Result<Vec<Correspondence>> {
        match (&self.corners, &self.board) {
            (Some(c), Some(b)) => match_corners(c, b),
            _ => Err(Error::format("bundle", "corners.csv and board.json are both required")),
        }
    }
}
