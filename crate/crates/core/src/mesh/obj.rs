//! Wavefront-style ASCII meshes (`v`, `vt`, `f` records) and the JSON label
//! sidecar stored next to them as `<stem>.labels.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Mesh, Vec2, Vec3, FACIAL_AREA_RADIUS};
use crate::error::{Error, Result};

/// Rounds to 9 significant digits and prints the shortest exact form.
pub fn format_float(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".to_string();
    }
    format!("{rounded}")
}

fn labels_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("labels.json")
}

/// Loads a mesh and, if present, its label sidecar.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut mesh = parse_obj(&text, path)?;
    let lp = labels_path(path);
    if lp.exists() {
        let raw = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let labels: BTreeMap<String, Vec<usize>> =
            serde_json::from_str(&raw).map_err(|e| Error::Format(format!("{}: {e}", lp.display())))?;
        for (name, idx) in labels {
            mesh.set_label(name, idx)?;
        }
        mesh.ensure_facial_area(FACIAL_AREA_RADIUS);
    }
    Ok(mesh)
}

fn parse_index(tok: &str, count: usize, path: &Path, line: usize) -> Result<usize> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let raw: i64 = tok.parse().map_err(|_| err(format!("bad index '{tok}'")))?;
    let idx = if raw < 0 { count as i64 + raw } else { raw - 1 };
    if idx < 0 {
        return Err(err(format!("index {raw} out of range")));
    }
    Ok(idx as usize)
}

/// Parses OBJ text. `path` is only used in error messages.
pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut texcoords: Vec<Vec2> = Vec::new();
    let mut faces = Vec::new();
    let mut face_uv: Vec<[usize; 3]> = Vec::new();
    let mut any_uv_ref = false;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(err(format!("expected {n} numbers")));
            }
            rest[..n]
                .iter()
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number '{t}'"))))
                .collect()
        };
        match tag {
            "v" => {
                let c = floats(3)?;
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = floats(2)?;
                texcoords.push(Vec2::new(c[0], c[1]));
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(format!("non-triangular face with {} vertices", rest.len())));
                }
                let mut f = [0usize; 3];
                let mut t = [usize::MAX; 3];
                for (k, tok) in rest.iter().enumerate() {
                    let mut parts = tok.split('/');
                    f[k] = parse_index(parts.next().unwrap_or(""), vertices.len(), path, line_no)?;
                    if let Some(vt) = parts.next().filter(|s| !s.is_empty()) {
                        t[k] = parse_index(vt, texcoords.len(), path, line_no)?;
                        any_uv_ref = true;
                    }
                }
                faces.push(f);
                face_uv.push(t);
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut mesh = Mesh::new(vertices, faces.clone())?;
    if !texcoords.is_empty() {
        let mut uv = vec![Vec2::zeros(); n];
        if any_uv_ref {
            let mut seen = vec![false; n];
            for (f, t) in faces.iter().zip(&face_uv) {
                for k in 0..3 {
                    if t[k] == usize::MAX {
                        continue;
                    }
                    let coord = *texcoords
                        .get(t[k])
                        .ok_or_else(|| Error::Format(format!("texture index {} out of range", t[k] + 1)))?;
                    uv[f[k]] = coord;
                    seen[f[k]] = true;
                }
            }
            if seen.iter().any(|s| !s) && texcoords.len() == n {
                uv = texcoords;
            }
        } else if texcoords.len() == n {
            uv = texcoords;
        } else {
            return Err(Error::Format(format!(
                "{} texture coordinates for {n} vertices without face references",
                texcoords.len()
            )));
        }
        mesh = mesh.with_uv(uv)?;
    }
    Ok(mesh)
}

/// Writes canonical OBJ text: per-vertex UVs share the vertex index.
pub fn write_obj(mesh: &Mesh, out: &mut impl Write) -> std::io::Result<()> {
    for p in mesh.vertices() {
        writeln!(
            out,
            "v {} {} {}",
            format_float(p.x),
            format_float(p.y),
            format_float(p.z)
        )?;
    }
    if let Some(uv) = mesh.uv() {
        for t in uv {
            writeln!(out, "vt {} {}", format_float(t.x), format_float(t.y))?;
        }
        for f in mesh.faces() {
            writeln!(
                out,
                "f {a}/{a} {b}/{b} {c}/{c}",
                a = f[0] + 1,
                b = f[1] + 1,
                c = f[2] + 1
            )?;
        }
    } else {
        for f in mesh.faces() {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    Ok(())
}

/// Saves the mesh and, when it has labels, the label sidecar.
pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    if !mesh.labels().is_empty() {
        save_labels(mesh, labels_path(path))?;
    }
    Ok(())
}

pub fn save_labels(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(mesh.labels()).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}
