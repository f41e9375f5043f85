//! Versioned binary checkpoints and the loss-history CSV.
//!
//! Layout (all little-endian): 8-byte magic `A3DCKPT\x01`, format version
//! (u32), model configuration, step count (u64), then named tensors as
//! `name_len u32 | name | rows u32 | cols u32 | f32 payload`, followed by an
//! optimizer flag and, when present, the two Adam moment tensor lists in the
//! same layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Adam, ModelConfig, ModelParams, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"A3DCKPT\x01";
const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    optimizer: Option<&Adam>,
    step: usize,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_config(&mut w, &params.config)?;
    w.write_all(&(step as u64).to_le_bytes())?;
    write_tensor_list(&mut w, params)?;
    match optimizer {
        Some(adam) => {
            w.write_all(&[1u8])?;
            write_tensor_list(&mut w, &adam.m)?;
            write_tensor_list(&mut w, &adam.v)?;
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint; parameters come back f32-rounded by construction.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<Adam>, usize)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let config = read_config(&mut r)?;
    config.validate()?;
    let step = read_u64(&mut r)? as usize;
    let mut params = ModelParams::zeros(&config);
    read_tensor_list(&mut r, &mut params)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = if flag[0] == 1 {
        let mut adam = Adam::new(&config);
        read_tensor_list(&mut r, &mut adam.m)?;
        read_tensor_list(&mut r, &mut adam.v)?;
        Some(adam)
    } else {
        None
    };
    Ok((params, optimizer, step))
}

fn write_config(w: &mut impl Write, c: &ModelConfig) -> Result<()> {
    for v in [
        c.d,
        c.enc_layers,
        c.dec_layers,
        c.heads,
        c.mlp_ratio,
        c.k,
        c.n_centers,
        c.embed_hidden,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&(c.mask_ratio as f32).to_le_bytes())?;
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<ModelConfig> {
    let mut vals = [0usize; 8];
    for v in vals.iter_mut() {
        *v = read_u32(r)? as usize;
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(ModelConfig {
        d: vals[0],
        enc_layers: vals[1],
        dec_layers: vals[2],
        heads: vals[3],
        mlp_ratio: vals[4],
        k: vals[5],
        n_centers: vals[6],
        embed_hidden: vals[7],
        mask_ratio: f32::from_le_bytes(buf) as f64,
    })
}

fn write_tensor_list(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.rows as u32).to_le_bytes())?;
        w.write_all(&(t.cols as u32).to_le_bytes())?;
        for &v in &t.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_tensor_list(r: &mut impl Read, params: &mut ModelParams) -> Result<()> {
    let count = read_u32(r)? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(Error::Parse(format!(
            "checkpoint holds {count} tensors, model expects {}",
            slots.len()
        )));
    }
    for (expected_name, t) in slots.iter_mut() {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Parse("bad tensor name".into()))?;
        if &name != expected_name {
            return Err(Error::Parse(format!(
                "tensor order mismatch: {name} where {expected_name} expected"
            )));
        }
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        if rows != t.rows || cols != t.cols {
            return Err(Error::ShapeMismatch(format!(
                "{name}: checkpoint {rows}x{cols}, model {}x{}",
                t.rows, t.cols
            )));
        }
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            t.data[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Loss history as `step,loss` rows (steps numbered from 1).
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "step,loss")?;
    for (i, loss) in losses.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, loss)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(dead_code)]
fn shape_of(t: &Tensor) -> (usize, usize) {
    (t.rows, t.cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_preserves_f32_rounded_params() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let cfg = ModelConfig::tiny();
        let mut params = init_params(&cfg, 77).unwrap();
        params.round_to_f32();
        let adam = Adam::new(&cfg);
        save_checkpoint(&path, &params, Some(&adam), 42).unwrap();
        let (back, opt, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 42);
        assert!(opt.is_some());
        assert_eq!(back, params);
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&a, &params, None, 7).unwrap();
        save_checkpoint(&b, &params, None, 7).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTCKPT\x01rest").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn loss_csv_row_count_matches_steps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(&path, &[0.5, 0.25, 0.125]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "step,loss");
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1], "1,0.5");
    }
}
