//! PLY reader/writer for point clouds.
//!
//! Vertex properties understood: `x`, `y`, `z` (float32), optional
//! `nx`, `ny`, `nz` (float32), `gt` (uint8), `region` (int32), and the
//! export-only channels `score`, `salience` (float32) and `rank` (int32).
//! Unknown scalar properties are skipped; elements after `vertex` are
//! ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

/// Optional per-point export channels carried alongside the cloud.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyExtras {
    pub score: Option<Vec<f32>>,
    pub salience: Option<Vec<f32>>,
    pub rank: Option<Vec<i32>>,
}

impl PlyExtras {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl Scalar {
    fn parse(name: &str) -> Result<Scalar> {
        Ok(match name {
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            "uchar" | "uint8" => Scalar::U8,
            "char" | "int8" => Scalar::I8,
            "ushort" | "uint16" => Scalar::U16,
            "short" | "int16" => Scalar::I16,
            "uint" | "uint32" => Scalar::U32,
            "int" | "int32" => Scalar::I32,
            other => return Err(Error::Parse(format!("unsupported ply type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 | Scalar::I8 => 1,
            Scalar::U16 | Scalar::I16 => 2,
            Scalar::F32 | Scalar::U32 | Scalar::I32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_binary(self, buf: &[u8]) -> f64 {
        match self {
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf[..8].try_into().unwrap()),
            Scalar::U8 => buf[0] as f64,
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U16 => u16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
            Scalar::I16 => i16::from_le_bytes(buf[..2].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        }
    }
}

struct Property {
    name: String,
    ty: Scalar,
}

pub fn write_ply(
    path: &Path,
    cloud: &PointCloud,
    extras: &PlyExtras,
    format: PlyFormat,
) -> Result<()> {
    let n = cloud.len();
    for (label, len) in [
        ("score", extras.score.as_ref().map(Vec::len)),
        ("salience", extras.salience.as_ref().map(Vec::len)),
        ("rank", extras.rank.as_ref().map(Vec::len)),
    ] {
        if let Some(len) = len {
            if len != n {
                return Err(Error::ShapeMismatch(format!("{label} length {len} != {n}")));
            }
        }
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "ply")?;
    match format {
        PlyFormat::Ascii => writeln!(w, "format ascii 1.0")?,
        PlyFormat::BinaryLittleEndian => writeln!(w, "format binary_little_endian 1.0")?,
    }
    writeln!(w, "element vertex {n}")?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if cloud.normals.is_some() {
        writeln!(w, "property float nx")?;
        writeln!(w, "property float ny")?;
        writeln!(w, "property float nz")?;
    }
    if cloud.gt_label.is_some() {
        writeln!(w, "property uchar gt")?;
    }
    if cloud.region_id.is_some() {
        writeln!(w, "property int region")?;
    }
    if extras.salience.is_some() {
        writeln!(w, "property float salience")?;
    }
    if extras.rank.is_some() {
        writeln!(w, "property int rank")?;
    }
    if extras.score.is_some() {
        writeln!(w, "property float score")?;
    }
    writeln!(w, "end_header")?;

    for i in 0..n {
        let p = cloud.points[i];
        let mut floats: Vec<f32> = vec![p.x as f32, p.y as f32, p.z as f32];
        if let Some(normals) = &cloud.normals {
            let nv = normals[i];
            floats.extend([nv.x as f32, nv.y as f32, nv.z as f32]);
        }
        let gt = cloud.gt_label.as_ref().map(|v| v[i]);
        let region = cloud.region_id.as_ref().map(|v| v[i]);
        let salience = extras.salience.as_ref().map(|v| v[i]);
        let rank = extras.rank.as_ref().map(|v| v[i]);
        let score = extras.score.as_ref().map(|v| v[i]);
        match format {
            PlyFormat::Ascii => {
                let mut cols: Vec<String> = floats.iter().map(|f| format!("{f}")).collect();
                if let Some(gt) = gt {
                    cols.push(format!("{gt}"));
                }
                if let Some(region) = region {
                    cols.push(format!("{region}"));
                }
                if let Some(s) = salience {
                    cols.push(format!("{s}"));
                }
                if let Some(r) = rank {
                    cols.push(format!("{r}"));
                }
                if let Some(s) = score {
                    cols.push(format!("{s}"));
                }
                writeln!(w, "{}", cols.join(" "))?;
            }
            PlyFormat::BinaryLittleEndian => {
                for f in &floats {
                    w.write_all(&f.to_le_bytes())?;
                }
                if let Some(gt) = gt {
                    w.write_all(&[gt])?;
                }
                if let Some(region) = region {
                    w.write_all(&region.to_le_bytes())?;
                }
                if let Some(s) = salience {
                    w.write_all(&s.to_le_bytes())?;
                }
                if let Some(r) = rank {
                    w.write_all(&r.to_le_bytes())?;
                }
                if let Some(s) = score {
                    w.write_all(&s.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<(PointCloud, PlyExtras)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Parse("missing ply magic".into()));
    }
    let mut format: Option<PlyFormat> = None;
    let mut props: Vec<Property> = Vec::new();
    let mut count: usize = 0;
    let mut in_vertex = false;
    let mut saw_vertex = false;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Parse("unexpected end of header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::Parse(format!("unsupported ply format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = n
                    .parse()
                    .map_err(|_| Error::Parse("bad vertex count".into()))?;
                in_vertex = true;
                saw_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(Error::Parse("list property on vertex element".into()));
                }
            }
            ["property", ty, name] => {
                if in_vertex {
                    props.push(Property {
                        name: (*name).to_string(),
                        ty: Scalar::parse(ty)?,
                    });
                }
            }
            ["end_header"] => break,
            _ => return Err(Error::Parse(format!("bad header line: {}", line.trim()))),
        }
    }
    let format = format.ok_or_else(|| Error::Parse("missing format line".into()))?;
    if !saw_vertex {
        return Err(Error::Parse("no vertex element".into()));
    }
    for needed in ["x", "y", "z"] {
        if !props.iter().any(|p| p.name == needed) {
            return Err(Error::Parse(format!("missing property {needed}")));
        }
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(count); props.len()];
    match format {
        PlyFormat::Ascii => {
            let mut read_rows = 0;
            for text in reader.lines() {
                let text = text?;
                if text.trim().is_empty() {
                    continue;
                }
                let mut fields = text.split_whitespace();
                for col in columns.iter_mut() {
                    let field = fields
                        .next()
                        .ok_or_else(|| Error::Parse("short vertex row".into()))?;
                    col.push(
                        field
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad number {field}")))?,
                    );
                }
                read_rows += 1;
                if read_rows == count {
                    break;
                }
            }
            if read_rows != count {
                return Err(Error::Parse("vertex rows truncated".into()));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let row_size: usize = props.iter().map(|p| p.ty.size()).sum();
            let mut row = vec![0u8; row_size];
            for _ in 0..count {
                reader.read_exact(&mut row)?;
                let mut offset = 0;
                for (pi, prop) in props.iter().enumerate() {
                    columns[pi].push(prop.ty.read_binary(&row[offset..]));
                    offset += prop.ty.size();
                }
            }
        }
    }

    let col = |name: &str| -> Option<&Vec<f64>> {
        props
            .iter()
            .position(|p| p.name == name)
            .map(|i| &columns[i])
    };
    let xs = col("x").unwrap();
    let ys = col("y").unwrap();
    let zs = col("z").unwrap();
    let points: Vec<Vec3> = (0..count)
        .map(|i| Vec3::new(xs[i], ys[i], zs[i]))
        .collect();
    let normals = match (col("nx"), col("ny"), col("nz")) {
        (Some(nx), Some(ny), Some(nz)) => Some(
            (0..count)
                .map(|i| Vec3::new(nx[i], ny[i], nz[i]))
                .collect(),
        ),
        _ => None,
    };
    let gt_label = col("gt").map(|v| v.iter().map(|&x| x as u8).collect());
    let region_id = col("region").map(|v| v.iter().map(|&x| x as i32).collect());
    let extras = PlyExtras {
        score: col("score").map(|v| v.iter().map(|&x| x as f32).collect()),
        salience: col("salience").map(|v| v.iter().map(|&x| x as f32).collect()),
        rank: col("rank").map(|v| v.iter().map(|&x| x as i32).collect()),
    };
    let cloud = PointCloud {
        points,
        normals,
        gt_label,
        region_id,
    };
    Ok((cloud, extras))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cloud() -> PointCloud {
        PointCloud {
            points: vec![
                Vec3::new(0.125, -1.5, 3.25),
                Vec3::new(2.0, 0.5, -0.75),
                Vec3::new(-4.5, 2.25, 1.0),
            ],
            normals: Some(vec![Vec3::z(), Vec3::x(), Vec3::y()]),
            gt_label: Some(vec![0, 1, 0]),
            region_id: Some(vec![0, 1, 0]),
        }
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = sample_cloud();
        write_ply(&path, &cloud, &PlyExtras::none(), PlyFormat::BinaryLittleEndian).unwrap();
        let (back, extras) = read_ply(&path).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(extras, PlyExtras::none());
    }

    #[test]
    fn ascii_round_trip_with_extras() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let cloud = sample_cloud();
        let extras = PlyExtras {
            score: Some(vec![0.25, 0.5, 0.75]),
            salience: Some(vec![1.0, 2.0, 3.0]),
            rank: Some(vec![3, 1, 2]),
        };
        write_ply(&path, &cloud, &extras, PlyFormat::Ascii).unwrap();
        let (back, back_extras) = read_ply(&path).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(back_extras, extras);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "not a ply\n").unwrap();
        assert!(read_ply(&path).is_err());
    }
}
