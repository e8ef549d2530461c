//! Point-cloud and grid file formats.
//!
//! * XYZ: one `x y z` line per point, written with 9 significant digits.
//! * PLY: `binary_little_endian 1.0` with a single vertex element holding
//!   float `x`, `y`, `z` and nothing else.
//! * Grid: magic `GRDD`, u32 version, u32 resolution `N`, then `N^3`
//!   little-endian f32 values in flat-index order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Point3, PointCloud, Resolution, ScalarGrid};

const GRID_MAGIC: &[u8; 4] = b"GRDD";
const GRID_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (a, f) in fields.iter().enumerate() {
            p[a] = f.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("'{f}' is not a number"),
            })?;
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        out.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p[0], p[1], p[2]));
    }
    out
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::format(format!("{} is not UTF-8 text", path.display())))?;
    parse_xyz(text)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, format_xyz(cloud).as_bytes())
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format("PLY header has no end_header line"))?
        + END.len();
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format("PLY header is not ASCII"))?;
    let mut lines = header
        .lines()
        .filter(|l| !l.starts_with("comment") && !l.starts_with("obj_info"));
    let mut expect = |want: &str| -> Result<Vec<String>> {
        let line = lines.next().unwrap_or("").trim();
        let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if words.first().map(String::as_str) != Some(want) {
            return Err(Error::format(format!(
                "unsupported PLY layout: expected '{want}' line, found '{line}'"
            )));
        }
        Ok(words)
    };
    expect("ply")?;
    let format = expect("format")?;
    if format[1..] != ["binary_little_endian", "1.0"] {
        return Err(Error::format(format!(
            "unsupported PLY format '{}'; only binary_little_endian 1.0",
            format[1..].join(" ")
        )));
    }
    let element = expect("element")?;
    let count: usize = match &element[..] {
        [_, name, n] if name == "vertex" => n
            .parse()
            .map_err(|_| Error::format(format!("bad vertex count '{n}'")))?,
        _ => {
            return Err(Error::format(format!(
                "unsupported PLY layout: element '{}'",
                element[1..].join(" ")
            )))
        }
    };
    for axis in ["x", "y", "z"] {
        let prop = expect("property")?;
        if prop.len() != 3 || !matches!(prop[1].as_str(), "float" | "float32") || prop[2] != axis {
            return Err(Error::format(format!(
                "unsupported PLY layout: expected 'property float {axis}', found '{}'",
                prop.join(" ")
            )));
        }
    }
    let tail = expect("end_header");
    if tail.is_err() {
        return Err(Error::format(
            "unsupported PLY layout: only float x, y, z vertex properties are allowed",
        ));
    }
    let body = &bytes[end..];
    if body.len() != count * 12 {
        return Err(Error::format(format!(
            "PLY body has {} bytes, {count} vertices need {}",
            body.len(),
            count * 12
        )));
    }
    let points = body
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    PointCloud::new(points)
}

pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    let mut out = header.into_bytes();
    for p in cloud.points() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    parse_ply(&read_bytes(path)?)
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, &encode_ply(cloud))
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

/// Reads PLY for a `.ply` extension and XYZ otherwise.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(path)
    } else {
        read_xyz(path)
    }
}

/// Writes PLY for a `.ply` extension and XYZ otherwise.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if is_ply(path) {
        write_ply(path, cloud)
    } else {
        write_xyz(path, cloud)
    }
}

pub fn encode_grid(grid: &ScalarGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * grid.values().len());
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.resolution().get() as u32).to_le_bytes());
    for &v in grid.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<ScalarGrid> {
    if bytes.len() < 12 {
        return Err(Error::format(format!(
            "grid file truncated: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..4] != GRID_MAGIC {
        return Err(Error::format("not a grid file (bad magic)"));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = word(4);
    if version != GRID_VERSION {
        return Err(Error::format(format!("unsupported grid version {version}")));
    }
    let n = word(8) as usize;
    let res = Resolution::new(n).map_err(|e| Error::format(format!("bad grid resolution: {e}")))?;
    let expected = res
        .vertex_count()
        .checked_mul(4)
        .ok_or_else(|| Error::format(format!("grid resolution {n} is too large")))?;
    let payload = &bytes[12..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "grid payload has {} bytes, resolution {n} needs {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ScalarGrid::new(res, values).map_err(|e| Error::format(format!("bad grid values: {e}")))
}

pub fn read_grid(path: &Path) -> Result<ScalarGrid> {
    decode_grid(&read_bytes(path)?)
}

pub fn write_grid(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_bytes(path, &encode_grid(grid))
}

/// Moves every coordinate into the open cube, keeping a `1e-6` margin.
pub fn clamp_to_cube(points: &[Point3]) -> Vec<Point3> {
    const LIMIT: f64 = 1.0 - 1e-6;
    points
        .iter()
        .map(|p| p.map(|c| c.clamp(-LIMIT, LIMIT)))
        .collect()
}
