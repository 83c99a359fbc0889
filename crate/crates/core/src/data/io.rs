//! Point and mesh file formats: XYZ text clouds, OFF and ASCII PLY meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Result};
use crate::geom::{Point3, PointCloud, TriMesh};

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

/// Reads an XYZ cloud. Columns after the third (normals, colors) are
/// ignored; blank lines and `#` comments are skipped.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&read_text(path)?, path)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split_whitespace();
        let mut p = [0.0; 3];
        for (axis, v) in p.iter_mut().enumerate() {
            let tok = cols
                .next()
                .ok_or_else(|| parse_error(path, no + 1, format!("expected 3 coordinates, found {axis}")))?;
            *v = tok
                .parse()
                .map_err(|_| parse_error(path, no + 1, format!("invalid number {tok:?}")))?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(parse_error(path, 0, "no points"));
    }
    PointCloud::new(points).map_err(|e| parse_error(path, 0, e.to_string()))
}

/// Formats a cloud as XYZ text. Seventeen significant digits make the
/// round trip exact.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 72);
    for p in cloud.points() {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
    }
    out
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud)).map_err(|e| DataError::io(path, e))
}

/// Reads an OFF or ASCII PLY mesh, chosen by the file's first token.
/// Polygons are fan-triangulated.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let first = text.split_whitespace().next().unwrap_or("");
    if first.starts_with("OFF") {
        parse_off(&text, path)
    } else if first == "ply" {
        parse_ply(&text, path)
    } else {
        Err(parse_error(path, 1, format!("unknown mesh header {first:?}")))
    }
}

fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn build_mesh(path: &Path, vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<TriMesh> {
    TriMesh::new(vertices, faces).map_err(|e| parse_error(path, 0, e.to_string()))
}

/// Non-empty lines with comments removed, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_error(path, line, "unexpected end of line"))?;
    tok.parse()
        .map_err(|_| parse_error(path, line, format!("invalid number {tok:?}")))
}

pub fn parse_off(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    let (no, header) = lines.next().ok_or_else(|| parse_error(path, 0, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_error(path, no, "missing OFF header"))?
        .trim();
    let (no, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| parse_error(path, no, "missing element counts"))?
    } else {
        (no, rest)
    };
    let mut toks = counts.split_whitespace();
    let nv: usize = parse_num(path, no, toks.next())?;
    let nf: usize = parse_num(path, no, toks.next())?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, line) = lines.next().ok_or_else(|| parse_error(path, 0, "truncated vertex list"))?;
        let mut t = line.split_whitespace();
        vertices.push([
            parse_num(path, no, t.next())?,
            parse_num(path, no, t.next())?,
            parse_num(path, no, t.next())?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, line) = lines.next().ok_or_else(|| parse_error(path, 0, "truncated face list"))?;
        let mut t = line.split_whitespace();
        let k: usize = parse_num(path, no, t.next())?;
        let poly = (0..k)
            .map(|_| parse_num(path, no, t.next()))
            .collect::<Result<Vec<usize>>>()?;
        if k < 3 {
            return Err(parse_error(path, no, format!("face with {k} vertices")));
        }
        fan(&poly, &mut faces);
    }
    build_mesh(path, vertices, faces)
}

struct PlyElement {
    name: String,
    count: usize,
    /// Scalar property names; `None` marks a list property.
    props: Vec<Option<String>>,
}

pub fn parse_ply(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (no, line) in lines.by_ref() {
        let mut t = line.split_whitespace();
        match t.next() {
            Some("ply") | Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                if t.next() != Some("ascii") {
                    return Err(parse_error(path, no, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                let name = t.next().unwrap_or("").to_string();
                if name != "vertex" && name != "face" {
                    return Err(parse_error(path, no, format!("unsupported element {name:?}")));
                }
                elements.push(PlyElement {
                    name,
                    count: parse_num(path, no, t.next())?,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, no, "property before any element"))?;
                let kind = t.next();
                let name = t.last().unwrap_or("").to_string();
                el.props.push(if kind == Some("list") { None } else { Some(name) });
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_error(path, no, format!("unknown header line {other:?}"))),
        }
    }
    if !header_done {
        return Err(parse_error(path, 0, "missing end_header"));
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (no, line) = body
                .next()
                .ok_or_else(|| parse_error(path, 0, format!("truncated {} list", el.name)))?;
            let mut toks = line.split_whitespace();
            let mut p = [0.0; 3];
            let mut poly = Vec::new();
            for prop in &el.props {
                match prop {
                    Some(name) => {
                        let v: f64 = parse_num(path, no, toks.next())?;
                        match name.as_str() {
                            "x" => p[0] = v,
                            "y" => p[1] = v,
                            "z" => p[2] = v,
                            _ => {}
                        }
                    }
                    None => {
                        let k: usize = parse_num(path, no, toks.next())?;
                        poly = (0..k)
                            .map(|_| parse_num(path, no, toks.next()))
                            .collect::<Result<Vec<usize>>>()?;
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(p);
            } else {
                if poly.len() < 3 {
                    return Err(parse_error(path, no, format!("face with {} vertices", poly.len())));
                }
                fan(&poly, &mut faces);
            }
        }
    }
    build_mesh(path, vertices, faces)
}

pub fn format_off(mesh: &TriMesh) -> String {
    let mut out = format!("OFF\n{} {} 0\n", mesh.vertices().len(), mesh.faces().len());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn write_off(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_off(mesh)).map_err(|e| DataError::io(path, e))
}
