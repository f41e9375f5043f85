//! OBJ and OFF triangle-mesh readers (vertices and triangular faces only).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Mesh, Vec3};

/// Reads a mesh, dispatching on the file extension (`.obj` / `.off`).
pub fn read_mesh(path: &Path) -> Result<Mesh> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => read_obj(path),
        Some("off") => read_off(path),
        other => Err(Error::Parse(format!("unknown mesh extension {other:?}"))),
    }
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let coords: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Parse(format!("obj line {}: bad vertex", ln + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::Parse(format!("obj line {}: short vertex", ln + 1)));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                // Accept `f v`, `f v/vt`, `f v/vt/vn`, `f v//vn` references.
                let idx: Vec<usize> = tok
                    .map(|t| {
                        let v = t.split('/').next().unwrap_or("");
                        v.parse::<i64>()
                            .ok()
                            .filter(|&i| i > 0)
                            .map(|i| (i - 1) as usize)
                            .ok_or_else(|| {
                                Error::Parse(format!("obj line {}: bad face index {t}", ln + 1))
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::InvalidMesh(format!(
                        "obj line {}: only triangular faces supported, got {} vertices",
                        ln + 1,
                        idx.len()
                    )));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            // Normals, texcoords, groups, materials: ignored.
            _ => {}
        }
    }
    let mesh = Mesh { vertices, faces };
    mesh.validate()?;
    Ok(mesh)
}

pub fn read_off(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens.next().ok_or_else(|| Error::Parse("empty off file".into()))?;
    if magic != "OFF" {
        return Err(Error::Parse("missing OFF magic".into()));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse(format!("off: bad {what}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _ne = next_usize("edge count")?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .skip(4);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0f64; 3];
        for slot in &mut c {
            *slot = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse("off: bad vertex".into()))?;
        }
        vertices.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let arity: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("off: bad face".into()))?;
        if arity != 3 {
            return Err(Error::InvalidMesh(format!(
                "off: only triangular faces supported, got {arity}"
            )));
        }
        let mut f = [0usize; 3];
        for slot in &mut f {
            *slot = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse("off: bad face index".into()))?;
        }
        faces.push(f);
    }
    let mesh = Mesh { vertices, faces };
    mesh.validate()?;
    Ok(mesh)
}
