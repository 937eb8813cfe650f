use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFormat {
    XyzAscii,
    PlyAscii,
}

impl CloudFormat {
    /// Guesses the format from a file extension (`.ply` vs anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::XyzAscii,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz_ascii" => Ok(CloudFormat::XyzAscii),
            "ply" | "ply_ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(Error::InvalidArgument(format!("unknown cloud format {other:?}"))),
        }
    }
}

/// Reads a cloud from disk without normalizing it.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    let cloud = match format {
        CloudFormat::XyzAscii => parse_xyz_ascii(&text, path)?,
        CloudFormat::PlyAscii => parse_ply_ascii(&text, path)?,
    };
    Ok(cloud.with_tag(path.display().to_string()))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

fn parse_xyz_row(row: &str, path: &Path, line: usize) -> Result<Point3> {
    let mut fields = row.split_whitespace();
    let mut coords = [0.0; 3];
    for (axis, c) in coords.iter_mut().enumerate() {
        let tok = fields
            .next()
            .ok_or_else(|| parse_err(path, line, format!("expected 3 coordinates, found {axis}")))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(path, line, format!("invalid number {tok:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line, "non-finite coordinate"));
        }
        *c = v;
    }
    Ok(Point3::new(coords[0], coords[1], coords[2]))
}

fn check_count(points: &[Point3]) -> Result<()> {
    if points.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            found: points.len(),
            required: MIN_POINTS,
        });
    }
    Ok(())
}

/// One point per line; extra columns are ignored, blank lines and `#` comments skipped.
pub fn parse_xyz_ascii(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        points.push(parse_xyz_row(row, path, i + 1)?);
    }
    check_count(&points)?;
    Ok(PointCloud::new(points))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// ASCII PLY 1.0; only the `vertex` element's x/y/z are read.
pub fn parse_ply_ascii(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut body_start = None;
    for (i, raw) in lines.by_ref() {
        let line_no = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("format") => {
                let fmt = toks.next().unwrap_or("");
                if fmt != "ascii" {
                    return Err(parse_err(path, line_no, format!("unsupported PLY format {fmt:?}")));
                }
            }
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| parse_err(path, line_no, "element without name"))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(path, line_no, "element without count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, line_no, "property before element"))?;
                // `property list <count> <item> <name>` or `property <type> <name>`
                let name = toks.last().unwrap_or("").to_string();
                el.properties.push(name);
            }
            Some("end_header") => {
                body_start = Some(line_no);
                break;
            }
            _ => {}
        }
    }
    let header_end =
        body_start.ok_or_else(|| parse_err(path, text.lines().count(), "missing end_header"))?;

    let mut points = Vec::new();
    for el in &elements {
        let axes = if el.name == "vertex" {
            let find = |n: &str| el.properties.iter().position(|p| p == n);
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => return Err(parse_err(path, header_end, "vertex element lacks x/y/z")),
            }
        } else {
            None
        };
        for _ in 0..el.count {
            let (i, raw) = lines
                .next()
                .ok_or_else(|| parse_err(path, text.lines().count(), "unexpected end of file"))?;
            let Some(axes) = axes else { continue };
            let line_no = i + 1;
            let vals: Vec<&str> = raw.split_whitespace().collect();
            let mut coords = [0.0; 3];
            for (c, &col) in coords.iter_mut().zip(&axes) {
                let tok = vals
                    .get(col)
                    .ok_or_else(|| parse_err(path, line_no, "vertex row too short"))?;
                *c = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, format!("invalid number {tok:?}")))?;
            }
            points.push(Point3::new(coords[0], coords[1], coords[2]));
        }
    }
    check_count(&points)?;
    Ok(PointCloud::new(points))
}
