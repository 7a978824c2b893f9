//! File formats: ASCII XYZ clouds, a minimal ASCII PLY subset, 8/16-bit
//! binary PGM with JSON sidecars, and JSON records for correspondences and
//! transforms. All writers go through a temp-file + rename so readers never
//! observe partial output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::raster::{GridSpec, Raster};
use crate::register::{CorrespondenceSet, RigidTransform};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Write bytes atomically: temp file in the destination directory, then
/// rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read an ASCII XYZ cloud: one "x y z" per line, mm. Blank lines and
/// `#` comments are skipped.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let f = BufReader::new(File::open(path)?);
    let mut points = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(parse_err(i + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let mut v = [0.0f64; 3];
        for (j, field) in fields[..3].iter().enumerate() {
            v[j] = field
                .parse()
                .map_err(|_| parse_err(i + 1, format!("invalid number '{field}'")))?;
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(parse_err(i + 1, "non-finite coordinate"));
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
    }
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    Ok(PointCloud::new(points, source))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = String::with_capacity(cloud.points.len() * 32);
    for p in &cloud.points {
        buf.push_str(&format!("{:.6} {:.6} {:.6}\n", p.x, p.y, p.z));
    }
    atomic_write(path, buf.as_bytes())
}

/// Read the supported ASCII PLY subset: a vertex element with float
/// properties x, y, z (extra properties are skipped).
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let f = BufReader::new(File::open(path)?);
    let mut lines = f.lines().enumerate();
    let mut expect = |want: &str, lineno: &mut usize| -> Result<String> {
        match lines.next() {
            Some((i, line)) => {
                *lineno = i + 1;
                let line = line?;
                if want.is_empty() || line.trim().starts_with(want) {
                    Ok(line)
                } else {
                    Err(parse_err(i + 1, format!("expected '{want}', got '{}'", line.trim())))
                }
            }
            None => Err(parse_err(*lineno, "unexpected end of file")),
        }
    };
    let mut ln = 0usize;
    expect("ply", &mut ln)?;
    let fmt = expect("format", &mut ln)?;
    if !fmt.contains("ascii") {
        return Err(parse_err(ln, "only ascii PLY is supported"));
    }
    let mut n_vertices: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = expect("", &mut ln)?;
        let t = line.trim().to_string();
        if t == "end_header" {
            break;
        }
        if t.starts_with("comment") {
            continue;
        }
        if let Some(rest) = t.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let name = it.next().unwrap_or("");
            let count: usize = it
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| parse_err(ln, "bad element count"))?;
            if name == "vertex" {
                n_vertices = Some(count);
            } else if count != 0 {
                return Err(parse_err(ln, format!("unsupported element '{name}'")));
            }
        } else if let Some(rest) = t.strip_prefix("property ") {
            let name = rest.split_whitespace().last().unwrap_or("").to_string();
            props.push(name);
        }
    }
    let n = n_vertices.ok_or_else(|| parse_err(ln, "missing vertex element"))?;
    let ix = props.iter().position(|p| p == "x");
    let iy = props.iter().position(|p| p == "y");
    let iz = props.iter().position(|p| p == "z");
    let (ix, iy, iz) = match (ix, iy, iz) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(ln, "vertex element lacks x/y/z properties")),
    };
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let line = expect("", &mut ln)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < props.len() {
            return Err(parse_err(ln, "short vertex line"));
        }
        let get = |k: usize| -> Result<f64> {
            fields[k]
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid number '{}'", fields[k])))
        };
        points.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
    }
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cloud")
        .to_string();
    Ok(PointCloud::new(points, source))
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = String::new();
    buf.push_str("ply\nformat ascii 1.0\n");
    buf.push_str(&format!("element vertex {}\n", cloud.points.len()));
    buf.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in &cloud.points {
        buf.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    atomic_write(path, buf.as_bytes())
}

/// Read a cloud by extension: `.ply` or anything else treated as XYZ.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

/// Sidecar metadata stored next to every PGM raster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterSidecar {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub origin: [f64; 2],
    /// Depth range mapped onto the integer span, when the PGM holds depth.
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
    pub channel: String,
    #[serde(default)]
    pub config: Option<crate::config::PipelineConfig>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

fn pgm_header(magic: &str, w: usize, h: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes()
}

/// Write the gray channel as 8-bit binary PGM (values clamped to [0,1])
/// with a JSON sidecar.
pub fn write_pgm8(path: &Path, raster: &Raster, config: Option<&crate::config::PipelineConfig>) -> Result<()> {
    let gray = raster.gray.as_ref().ok_or(Error::EmptyInput("gray channel"))?;
    let mut bytes = pgm_header("P5", raster.grid.width, raster.grid.height, 255);
    bytes.extend(gray.iter().map(|g| (g.clamp(0.0, 1.0) * 255.0).round() as u8));
    atomic_write(path, &bytes)?;
    let sc = RasterSidecar {
        width: raster.grid.width,
        height: raster.grid.height,
        pitch: raster.grid.pitch,
        origin: [raster.grid.origin.x, raster.grid.origin.y],
        d_min: None,
        d_max: None,
        channel: "gray".into(),
        config: config.cloned(),
    };
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sc)?.as_bytes())
}

/// Write the depth channel as 16-bit binary PGM (big-endian, range mapped
/// to the full span) with a JSON sidecar carrying d_min/d_max.
pub fn write_pgm16_depth(
    path: &Path,
    raster: &Raster,
    config: Option<&crate::config::PipelineConfig>,
) -> Result<()> {
    let depth = raster.depth.as_ref().ok_or(Error::EmptyInput("depth channel"))?;
    let fg: Vec<f64> = depth
        .iter()
        .zip(&raster.mask)
        .filter(|(_, m)| **m)
        .map(|(d, _)| *d)
        .collect();
    if fg.is_empty() {
        return Err(Error::EmptyOutput);
    }
    let d_min = fg.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = fg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (d_max - d_min).max(1e-300);
    let mut bytes = pgm_header("P5", raster.grid.width, raster.grid.height, 65535);
    for (d, m) in depth.iter().zip(&raster.mask) {
        let v = if *m {
            (((d - d_min) / span) * 65535.0).round() as u16
        } else {
            0
        };
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    atomic_write(path, &bytes)?;
    let sc = RasterSidecar {
        width: raster.grid.width,
        height: raster.grid.height,
        pitch: raster.grid.pitch,
        origin: [raster.grid.origin.x, raster.grid.origin.y],
        d_min: Some(d_min),
        d_max: Some(d_max),
        channel: "depth".into(),
        config: config.cloned(),
    };
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sc)?.as_bytes())
}

/// Read a binary PGM written by this module; the sidecar restores the grid
/// geometry (identity grid assumed when absent).
pub fn read_pgm(path: &Path) -> Result<Raster> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    // header: magic, dims, maxval separated by whitespace, then raster
    let mut pos = 0usize;
    let token = |data: &[u8], pos: &mut usize| -> Result<String> {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            while *pos < data.len() && data[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        }
        let start = *pos;
        while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err(1, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
    };
    let magic = token(&data, &mut pos)?;
    if magic != "P5" {
        return Err(parse_err(1, format!("unsupported PGM magic '{magic}'")));
    }
    let w: usize = token(&data, &mut pos)?
        .parse()
        .map_err(|_| parse_err(1, "bad width"))?;
    let h: usize = token(&data, &mut pos)?
        .parse()
        .map_err(|_| parse_err(1, "bad height"))?;
    let maxval: u32 = token(&data, &mut pos)?
        .parse()
        .map_err(|_| parse_err(1, "bad maxval"))?;
    pos += 1; // single whitespace after maxval
    let n = w * h;
    let sc: Option<RasterSidecar> = File::open(sidecar_path(path))
        .ok()
        .and_then(|f| serde_json::from_reader(BufReader::new(f)).ok());
    let grid = GridSpec {
        width: w,
        height: h,
        pitch: sc.as_ref().map(|s| s.pitch).unwrap_or(1.0),
        origin: sc
            .as_ref()
            .map(|s| nalgebra::Vector2::new(s.origin[0], s.origin[1]))
            .unwrap_or_else(nalgebra::Vector2::zeros),
    };
    let values: Vec<f64> = if maxval <= 255 {
        if data.len() < pos + n {
            return Err(parse_err(1, "truncated PGM data"));
        }
        data[pos..pos + n].iter().map(|b| *b as f64 / 255.0).collect()
    } else {
        if data.len() < pos + 2 * n {
            return Err(parse_err(1, "truncated PGM data"));
        }
        (0..n)
            .map(|i| {
                let v = u16::from_be_bytes([data[pos + 2 * i], data[pos + 2 * i + 1]]);
                v as f64 / 65535.0
            })
            .collect()
    };
    let is_depth = sc.as_ref().map(|s| s.channel == "depth").unwrap_or(false);
    let mask = vec![true; n];
    let raster = if is_depth {
        let (d_min, d_max) = sc
            .as_ref()
            .and_then(|s| s.d_min.zip(s.d_max))
            .unwrap_or((0.0, 1.0));
        let depth: Vec<f64> = values.iter().map(|v| d_min + v * (d_max - d_min)).collect();
        Raster {
            grid,
            gray: None,
            depth: Some(depth),
            pos: None,
            mask,
            interpolated: vec![false; n],
            count: vec![1; n],
        }
    } else {
        Raster {
            grid,
            gray: Some(values),
            depth: None,
            pos: None,
            mask,
            interpolated: vec![false; n],
            count: vec![1; n],
        }
    };
    Ok(raster)
}

/// Flat binary position map (little-endian f64 x,y,z per pixel, NaN for
/// background) with a JSON header alongside.
pub fn write_pos_map(path: &Path, raster: &Raster) -> Result<()> {
    let pos = raster.pos.as_ref().ok_or(Error::EmptyInput("pos channel"))?;
    let mut bytes = Vec::with_capacity(pos.len() * 24);
    for (p, m) in pos.iter().zip(&raster.mask) {
        let v = if *m { *p } else { Vector3::repeat(f64::NAN) };
        for c in [v.x, v.y, v.z] {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)?;
    let sc = RasterSidecar {
        width: raster.grid.width,
        height: raster.grid.height,
        pitch: raster.grid.pitch,
        origin: [raster.grid.origin.x, raster.grid.origin.y],
        d_min: None,
        d_max: None,
        channel: "pos".into(),
        config: None,
    };
    atomic_write(&sidecar_path(path), serde_json::to_string_pretty(&sc)?.as_bytes())
}

pub fn read_pos_map(path: &Path) -> Result<(Vec<Option<Vector3<f64>>>, RasterSidecar)> {
    let sc: RasterSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    let n = sc.width * sc.height;
    if data.len() != n * 24 {
        return Err(parse_err(1, "pos map size mismatch"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = |j: usize| -> f64 {
            f64::from_le_bytes(data[i * 24 + j * 8..i * 24 + j * 8 + 8].try_into().unwrap())
        };
        let v = Vector3::new(f(0), f(1), f(2));
        out.push(if v.x.is_nan() { None } else { Some(v) });
    }
    Ok((out, sc))
}

pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(set)?.as_bytes())
}

pub fn read_transform(path: &Path) -> Result<RigidTransform> {
    let t: RigidTransform = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    t.validate()?;
    Ok(t)
}

pub fn write_transform(path: &Path, t: &RigidTransform) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(t)?.as_bytes())
}

/// Pair file for 2D-3D registration: `{"pairs":[{"px":[u,v],"xyz":[x,y,z]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFile {
    pub pairs: Vec<crate::crossmodal::Pair2D3D>,
}

pub fn read_pairs(path: &Path) -> Result<PairFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_pairs(path: &Path, pairs: &PairFile) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(pairs)?.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())
}
