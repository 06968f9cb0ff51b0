use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Mesh, SegmentationMap, Topology, Vec3};
use crate::error::{Error, Result};

/// Reads a triangle mesh. When `topology` is given the file's faces must
/// match it exactly and the returned mesh shares that handle.
pub fn load_mesh(path: impl AsRef<Path>, topology: Option<&Arc<Topology>>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, topology)
}

pub fn parse_obj(text: &str, topology: Option<&Arc<Topology>>) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut tok = raw.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| {
                        t.parse::<f64>().map_err(|e| Error::Parse {
                            line,
                            msg: format!("bad coordinate {t:?}: {e}"),
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "vertex needs three coordinates".into(),
                    });
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        match head.parse::<usize>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(Error::Parse {
                                line,
                                msg: format!("bad face index {t:?}"),
                            }),
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("face has {} vertices, only triangles are supported", idx.len()),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    let topology = match topology {
        Some(t) => {
            if vertices.len() != t.vertex_count() {
                return Err(Error::CountMismatch {
                    expected: t.vertex_count(),
                    found: vertices.len(),
                });
            }
            if faces.as_slice() != t.faces() {
                return Err(Error::Correspondence(format!(
                    "{} faces in file, {} in topology",
                    faces.len(),
                    t.faces().len()
                )));
            }
            Arc::clone(t)
        }
        None => Arc::new(Topology::new(vertices.len(), faces)?),
    };
    Mesh::new(topology, vertices)
}

/// `%.9g`-style rendering.
fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_sig9(v.x), fmt_sig9(v.y), fmt_sig9(v.z));
    }
    for f in mesh.topology().faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &Mesh) -> Result<()> {
    write_obj_commented(path, mesh, None)
}

/// Like [`write_obj`], with an optional leading `#` comment line.
pub fn write_obj_commented(path: impl AsRef<Path>, mesh: &Mesh, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let body = format_obj(mesh);
    let text = match comment {
        Some(c) => format!("# {c}\n{body}"),
        None => body,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_segmentation(path: impl AsRef<Path>, topology: &Topology) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segmentation(&text, topology)
}

pub fn parse_segmentation(text: &str, topology: &Topology) -> Result<SegmentationMap> {
    let labels: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: n + 1,
                msg: format!("bad part index: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    if labels.len() != topology.vertex_count() {
        return Err(Error::CountMismatch {
            expected: topology.vertex_count(),
            found: labels.len(),
        });
    }
    SegmentationMap::new(labels)
}

pub fn write_segmentation(path: impl AsRef<Path>, seg: &SegmentationMap) -> Result<()> {
    write_segmentation_commented(path, seg, None)
}

pub fn write_segmentation_commented(
    path: impl AsRef<Path>,
    seg: &SegmentationMap,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = comment.map_or_else(String::new, |c| format!("# {c}\n"));
    for p in seg.labels() {
        let _ = writeln!(out, "{p}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One corpus entry; `file` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub identity_label: u32,
    pub pose_label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";

    #[test]
    fn minimal_triangle_parses() {
        let m = parse_obj(TRIANGLE, None).unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.topology().faces().len(), 1);
    }

    #[test]
    fn face_mismatch_against_topology_is_reported() {
        let m = parse_obj(TRIANGLE, None).unwrap();
        let other = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 3 2\n";
        assert!(matches!(
            parse_obj(other, Some(m.topology())),
            Err(Error::Correspondence(_))
        ));
    }

    #[test]
    fn quads_are_rejected() {
        let q = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert!(matches!(parse_obj(q, None), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn tetrahedron_file_gives_degree_three() {
        let t = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
        let m = parse_obj(t, None).unwrap();
        assert_eq!(m.topology().degrees(), vec![3; 4]);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.123456789123), "0.123456789");
        assert_eq!(fmt_sig9(-1.5), "-1.5");
        assert_eq!(fmt_sig9(1234.56789012), "1234.56789");
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(2.5e-7), "2.50000000e-7");
    }

    #[test]
    fn segmentation_counts_must_match() {
        let m = parse_obj(TRIANGLE, None).unwrap();
        assert_eq!(parse_segmentation("0\n0\n0\n", m.topology()).unwrap().part_count(), 1);
        assert!(matches!(
            parse_segmentation("0\n0\n", m.topology()),
            Err(Error::CountMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn written_mesh_reads_back() {
        let m = parse_obj("v 0.1 0.2 0.3\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", None).unwrap();
        let back = parse_obj(&format_obj(&m), Some(m.topology())).unwrap();
        assert_eq!(back.vertices, m.vertices);
    }
}
