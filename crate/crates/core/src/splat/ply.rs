//! Binary little-endian PLY checkpoints with a text sidecar.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::gaussian::{Gaussian, GaussianCloud};
use crate::error::{Error, Result};

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red",
    "green", "blue",
];

/// Counters stored next to a checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub scene_extent: f64,
    pub counters: BTreeMap<String, u64>,
}

pub fn sidecar_path(ply: &Path) -> PathBuf {
    ply.with_extension("txt")
}

pub fn encode_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for p in PROPERTIES {
        out.push_str(&format!("property double {p}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    for g in cloud.gaussians() {
        for v in g.params() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn decode_ply(bytes: &[u8], scene_extent: f64, path: &Path) -> Result<GaussianCloud> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err(1, "missing end_header".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|e| parse_err(1, e.to_string()))?;

    let mut count = None;
    let mut props: Vec<(String, usize)> = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] | ["end_header"] | [] => {}
            ["comment", ..] => {}
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(parse_err(i + 1, format!("unsupported format {fmt}")));
                }
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| parse_err(i + 1, e.to_string()))?);
            }
            ["element", other, ..] => return Err(parse_err(i + 1, format!("unexpected element {other}"))),
            ["property", ty, name] => {
                let size = match *ty {
                    "double" | "float64" => 8,
                    "float" | "float32" => 4,
                    _ => return Err(parse_err(i + 1, format!("unsupported property type {ty}"))),
                };
                props.push((name.to_string(), size));
            }
            _ => return Err(parse_err(i + 1, format!("unrecognized header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| parse_err(1, "missing vertex element".into()))?;
    let index_of = |name: &str| props.iter().position(|(p, _)| p == name);
    let columns: Vec<usize> = PROPERTIES
        .iter()
        .map(|p| index_of(p).ok_or_else(|| parse_err(1, format!("missing property {p}"))))
        .collect::<Result<_>>()?;
    let stride: usize = props.iter().map(|(_, s)| s).sum();
    let mut col_offset = Vec::with_capacity(props.len());
    let mut acc = 0;
    for (_, s) in &props {
        col_offset.push(acc);
        acc += s;
    }
    let body = &bytes[header_end..];
    if body.len() < stride * count {
        return Err(Error::Integrity(format!(
            "{}: truncated body ({} bytes, expected {})",
            path.display(),
            body.len(),
            stride * count
        )));
    }
    let mut gaussians = Vec::with_capacity(count);
    for v in 0..count {
        let row = &body[v * stride..(v + 1) * stride];
        let mut params = [0.0; 14];
        for (k, &col) in columns.iter().enumerate() {
            let off = col_offset[col];
            params[k] = match props[col].1 {
                8 => f64::from_le_bytes(row[off..off + 8].try_into().unwrap()),
                _ => f32::from_le_bytes(row[off..off + 4].try_into().unwrap()) as f64,
            };
        }
        let mut g = Gaussian::isotropic([0.0; 3], 1.0, 0.5, [0.0; 3]);
        g.set_params(&params);
        gaussians.push(g);
    }
    GaussianCloud::new(gaussians, scene_extent)
}

pub fn encode_sidecar(s: &Sidecar) -> String {
    let mut out = format!("scene_extent={:?}\n", s.scene_extent);
    for (k, v) in &s.counters {
        out.push_str(&format!("{k}={v}\n"));
    }
    out
}

pub fn decode_sidecar(text: &str, path: &Path) -> Result<Sidecar> {
    let mut s = Sidecar::default();
    let mut extent = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        let bad = |e: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e,
        };
        if k == "scene_extent" {
            extent = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?);
        } else {
            s.counters.insert(k.to_string(), v.parse::<u64>().map_err(|e| bad(e.to_string()))?);
        }
    }
    s.scene_extent = extent.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing scene_extent".into(),
    })?;
    Ok(s)
}

/// Writes `<path>` and its sidecar atomically.
pub fn save_checkpoint(cloud: &GaussianCloud, counters: &BTreeMap<String, u64>, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode_ply(cloud))?;
    let side = Sidecar {
        scene_extent: cloud.scene_extent(),
        counters: counters.clone(),
    };
    crate::io::write_atomic(&sidecar_path(path), encode_sidecar(&side).as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(GaussianCloud, Sidecar)> {
    let side_path = sidecar_path(path);
    let side = decode_sidecar(&crate::io::read_to_string(&side_path)?, &side_path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = decode_ply(&bytes, side.scene_extent, path)?;
    Ok((cloud, side))
}
