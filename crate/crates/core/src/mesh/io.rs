//! ASCII OBJ and PLY reading/writing.
//!
//! OBJ: only `v` and `f` records are interpreted; faces must be triangles.
//! PLY: `format ascii 1.0` with an `x y z` vertex element and a
//! `vertex_indices` face list. Binary PLY is rejected.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so save→load reproduces vertices bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::TriMesh;
use crate::error::{Error, Result};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_deref() {
        Some("obj") => read_obj(&lossy(&text), path),
        Some("ply") => {
            if !text.starts_with(b"ply") {
                return Err(Error::parse(path, 1, "missing 'ply' magic"));
            }
            read_ply(&lossy(&text), path)
        }
        other => Err(Error::parse(
            path,
            0,
            format!("unsupported mesh extension {other:?} (expected .obj or .ply)"),
        )),
    }
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match extension(path).as_deref() {
        Some("obj") => write_obj(mesh),
        Some("ply") => write_ply(mesh),
        other => {
            return Err(Error::parse(
                path,
                0,
                format!("unsupported mesh extension {other:?} (expected .obj or .ply)"),
            ))
        }
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize, what: &str) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad {what} '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite {what}")));
    }
    Ok(v)
}

pub fn read_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<([i64; 3], usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, line_no, "x coordinate")?;
                let y = parse_f64(toks.next(), path, line_no, "y coordinate")?;
                let z = parse_f64(toks.next(), path, line_no, "z coordinate")?;
                vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("face has {} vertices; only triangles are supported", idx.len()),
                    ));
                }
                let mut tri = [0i64; 3];
                for (slot, tok) in tri.iter_mut().zip(&idx) {
                    let first = tok.split('/').next().unwrap_or("");
                    *slot = first.parse().map_err(|_| {
                        Error::parse(path, line_no, format!("bad face index '{tok}'"))
                    })?;
                }
                faces.push((tri, line_no));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::with_capacity(faces.len());
    for (f, line_no) in faces {
        let mut tri = [0usize; 3];
        for (slot, &ix) in tri.iter_mut().zip(&f) {
            // 1-based, negative = relative to the end
            let zero_based = if ix > 0 { ix - 1 } else { n + ix };
            if ix == 0 || zero_based < 0 || zero_based >= n {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("face index {ix} out of range"),
                ));
            }
            *slot = zero_based as usize;
        }
        triangles.push(tri);
    }
    TriMesh::new(vertices, triangles)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

#[derive(Debug)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

#[derive(Debug)]
struct PlyProperty {
    name: String,
    is_list: bool,
}

pub fn read_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut last_line = 0;
    loop {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, last_line + 1, "unterminated header"))?;
        last_line = line_no;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("ply") if line_no == 1 => {}
            _ if line_no == 1 => return Err(Error::parse(path, 1, "missing 'ply' magic")),
            Some("format") => {
                match toks.next() {
                    Some("ascii") => {}
                    Some(f) => {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("unsupported PLY format '{f}' (only ascii is read)"),
                        ))
                    }
                    None => return Err(Error::parse(path, line_no, "missing format")),
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = toks
                    .next()
                    .ok_or_else(|| Error::parse(path, line_no, "element without name"))?;
                let count = toks
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, line_no, "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, line_no, "property before element"))?;
                let rest: Vec<&str> = toks.collect();
                let prop = match rest.as_slice() {
                    ["list", _, _, name] => PlyProperty {
                        name: name.to_string(),
                        is_list: true,
                    },
                    [_, name] => PlyProperty {
                        name: name.to_string(),
                        is_list: false,
                    },
                    _ => return Err(Error::parse(path, line_no, "malformed property")),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown header keyword '{other}'"),
                ))
            }
        }
    }
    if !saw_format {
        return Err(Error::parse(path, last_line, "missing format line"));
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        let prop_pos = |n: &str| el.properties.iter().position(|p| p.name == n);
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = if is_vertex {
            match (prop_pos("x"), prop_pos("y"), prop_pos("z")) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                _ => {
                    return Err(Error::parse(
                        path,
                        last_line,
                        "vertex element lacks x/y/z properties",
                    ))
                }
            }
        } else {
            None
        };
        let face_prop = if is_face {
            Some(
                prop_pos("vertex_indices")
                    .or_else(|| prop_pos("vertex_index"))
                    .ok_or_else(|| {
                        Error::parse(path, last_line, "face element lacks vertex_indices")
                    })?,
            )
        } else {
            None
        };
        for _ in 0..el.count {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, last_line + 1, "unexpected end of file"))?;
            last_line = line_no;
            let toks: Vec<&str> = line.split_whitespace().collect();
            // Split the record into per-property token slices.
            let mut cursor = 0;
            let mut fields: Vec<&[&str]> = Vec::with_capacity(el.properties.len());
            for p in &el.properties {
                if p.is_list {
                    let n: usize = toks
                        .get(cursor)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(path, line_no, "bad list length"))?;
                    let end = cursor + 1 + n;
                    if end > toks.len() {
                        return Err(Error::parse(path, line_no, "truncated list"));
                    }
                    fields.push(&toks[cursor + 1..end]);
                    cursor = end;
                } else {
                    if cursor >= toks.len() {
                        return Err(Error::parse(path, line_no, "truncated record"));
                    }
                    fields.push(&toks[cursor..cursor + 1]);
                    cursor += 1;
                }
            }
            if let Some([x, y, z]) = xyz {
                let c = |i: usize, w: &str| parse_f64(fields[i].first().copied(), path, line_no, w);
                vertices.push(Vector3::new(c(x, "x")?, c(y, "y")?, c(z, "z")?));
            }
            if let Some(fp) = face_prop {
                let idx = fields[fp];
                if idx.len() != 3 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        format!("face has {} vertices; only triangles are supported", idx.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (slot, tok) in tri.iter_mut().zip(idx) {
                    *slot = tok.parse().map_err(|_| {
                        Error::parse(path, line_no, format!("bad face index '{tok}'"))
                    })?;
                }
                triangles.push((tri, line_no));
            }
        }
    }
    for &(t, line_no) in &triangles {
        if t.iter().any(|&i| i >= vertices.len()) {
            return Err(Error::parse(path, line_no, "face index out of range"));
        }
    }
    TriMesh::new(vertices, triangles.into_iter().map(|(t, _)| t).collect())
}

pub fn write_ply(mesh: &TriMesh) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    for v in mesh.vertices() {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s
}
