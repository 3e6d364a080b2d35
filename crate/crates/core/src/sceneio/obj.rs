//! Minimal Wavefront OBJ subset: `v` and `f` records.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Face, Mesh};

/// Formats `x` with 9 significant digits, switching to scientific
/// notation for very small or very large magnitudes.
fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    if !(-4..9).contains(&e) {
        return format!("{x:.8e}");
    }
    let s = format!("{:.*}", (8 - e).max(0) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn obj_string(mesh: &Mesh) -> Result<String> {
    if mesh.num_vertices() == 0 || mesh.num_faces() == 0 {
        return Err(Error::config("cannot export an empty mesh"));
    }
    let mut out = String::with_capacity(40 * mesh.num_vertices() + 20 * mesh.num_faces());
    for v in &mesh.vertices {
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(Error::Numeric(format!("non-finite vertex {v:?}")));
        }
        writeln!(out, "v {} {} {}", sig9(v.x), sig9(v.y), sig9(v.z)).unwrap();
    }
    for f in mesh.faces.iter() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    Ok(out)
}

pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<()> {
    let s = obj_string(mesh)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parses `v` and `f` records. Polygons are fan-triangulated, texture and
/// normal references (`a/b/c`) are ignored and negative indices count
/// from the end. Everything else is skipped.
pub fn parse_obj(text: &str, entry: &str) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<Face> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let bad = |what: &str| Error::load(format!("{entry}:{}", ln + 1), what.to_string());
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("malformed vertex"))?;
                if xyz.len() != 3 || xyz.iter().any(|c| !c.is_finite()) {
                    return Err(bad("vertex needs three finite coordinates"));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad("malformed face index"))?;
                    let n = vertices.len() as i64;
                    let k = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || k < 0 || k >= n {
                        return Err(bad("face index out of range"));
                    }
                    idx.push(k as usize);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                for j in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[j], idx[j + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::load(entry, "no vertices or faces"));
    }
    Mesh::new(vertices, faces).map_err(|e| Error::load(entry, e.to_string()))
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}
