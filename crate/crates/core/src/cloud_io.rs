//! Scan files and pose lists.
//!
//! * `.bin`: consecutive little-endian f32 triplets `x y z`.
//! * `.xyz`: ASCII, one `x y z` per line, `#` comments.
//! * poses: ASCII `id theta x y` per line, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{PointCloud, Pose2};

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: byte length {len} is not a multiple of 12")]
    BadLength { path: String, len: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: unsupported extension")]
    UnknownFormat { path: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CloudIoError + '_ {
    move |source| CloudIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 12);
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_bin(bytes: &[u8]) -> Option<PointCloud> {
    if bytes.len() % 12 != 0 {
        return None;
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap()) as f64;
    Some(PointCloud::new(
        bytes
            .chunks_exact(12)
            .map(|c| [f(&c[0..4]), f(&c[4..8]), f(&c[8..12])])
            .collect(),
    ))
}

fn parse_floats(path: &Path, line_no: usize, line: &str, n: usize) -> Result<Vec<f64>, CloudIoError> {
    let parse_err = |msg: String| CloudIoError::Parse {
        path: path.display().to_string(),
        line: line_no,
        msg,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != n {
        return Err(parse_err(format!("expected {n} fields, found {}", fields.len())));
    }
    fields
        .iter()
        .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}"))))
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud, CloudIoError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => {
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            decode_bin(&bytes).ok_or(CloudIoError::BadLength {
                path: path.display().to_string(),
                len: bytes.len(),
            })
        }
        Some("xyz") | Some("txt") => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let mut points = Vec::new();
            for (n, line) in content_lines(&text) {
                let v = parse_floats(path, n, line, 3)?;
                points.push([v[0], v[1], v[2]]);
            }
            Ok(PointCloud::new(points))
        }
        _ => Err(CloudIoError::UnknownFormat {
            path: path.display().to_string(),
        }),
    }
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), CloudIoError> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => encode_bin(cloud),
        Some("xyz") | Some("txt") => {
            let mut s = String::new();
            for p in &cloud.points {
                let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
            }
            s.into_bytes()
        }
        _ => {
            return Err(CloudIoError::UnknownFormat {
                path: path.display().to_string(),
            })
        }
    };
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub const POSES_HEADER: &str = "# id theta x y\n";

pub fn format_poses(poses: &[(u64, Pose2)]) -> String {
    let mut s = String::from(POSES_HEADER);
    for (id, p) in poses {
        // round-trip exact: Rust prints the shortest representation
        let _ = writeln!(s, "{id} {} {} {}", p.theta, p.x, p.y);
    }
    s
}

pub fn parse_poses(path: &Path, text: &str) -> Result<Vec<(u64, Pose2)>, CloudIoError> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let mut fields = line.splitn(2, char::is_whitespace);
        let id_str = fields.next().unwrap_or("");
        let id = id_str.parse::<u64>().map_err(|e| CloudIoError::Parse {
            path: path.display().to_string(),
            line: n,
            msg: format!("id {id_str:?}: {e}"),
        })?;
        let v = parse_floats(path, n, fields.next().unwrap_or(""), 3)?;
        out.push((id, Pose2::new(v[0], v[1], v[2])));
    }
    Ok(out)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<(u64, Pose2)>, CloudIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_poses(path, &text)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[(u64, Pose2)]) -> Result<(), CloudIoError> {
    let path = path.as_ref();
    std::fs::write(path, format_poses(poses)).map_err(io_err(path))
}

/// Scan file name for an id: `{id:06}.bin`.
pub fn scan_file_name(id: u64) -> String {
    format!("{id:06}.bin")
}
