//! Binary parameter checkpoints.
//!
//! Layout: the magic `ANYS1`, then per entry (in construction order):
//! `u32` name length, UTF-8 name, `u32` rank, `rank` × `u32` extents,
//! and the elements as `f32`. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::nn::Param;
use crate::real::Real;

pub const MAGIC: &[u8; 5] = b"ANYS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| TensorError::Checkpoint(format!("{what} {n} exceeds u32")))
}

pub fn write_entries(mut w: impl Write, entries: &[Entry]) -> Result<()> {
    w.write_all(MAGIC)?;
    for e in entries {
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(TensorError::Checkpoint(format!("entry {} has inconsistent shape", e.name)));
        }
        w.write_all(&u32_of(e.name.len(), "name length")?)?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&u32_of(e.shape.len(), "rank")?)?;
        for &d in &e.shape {
            w.write_all(&u32_of(d, "extent")?)?;
        }
        for v in &e.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| TensorError::Checkpoint(format!("truncated {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_entries(mut r: impl Read) -> Result<Vec<Entry>> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| TensorError::Checkpoint("missing header".into()))?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let mut entries = Vec::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut first[1..])
            .map_err(|_| TensorError::Checkpoint("truncated name length".into()))?;
        let name_len = u32::from_le_bytes(first) as usize;
        if name_len > 4096 {
            return Err(TensorError::Checkpoint(format!("implausible name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| TensorError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 8 {
            return Err(TensorError::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(&mut r, "extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|_| TensorError::Checkpoint(format!("{name}: truncated data")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn entries_of<T: Real>(params: &[&Param<T>]) -> Vec<Entry> {
    params
        .iter()
        .map(|p| Entry {
            name: p.name().to_string(),
            shape: p.shape(),
            data: p.to_vec().iter().map(|v| v.as_f64() as f32).collect(),
        })
        .collect()
}

pub fn save<T: Real>(path: impl AsRef<Path>, params: &[&Param<T>]) -> Result<()> {
    let f = File::create(path)?;
    write_entries(BufWriter::new(f), &entries_of(params))
}

/// Loads every parameter by name. Missing, extra or reshaped entries are
/// errors.
pub fn load_into<T: Real>(entries: Vec<Entry>, params: &[&Param<T>]) -> Result<()> {
    if entries.len() != params.len() {
        return Err(TensorError::Checkpoint(format!(
            "expected {} entries, found {}",
            params.len(),
            entries.len()
        )));
    }
    let mut by_name: std::collections::HashMap<String, Entry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    for p in params {
        let e = by_name
            .remove(p.name())
            .ok_or_else(|| TensorError::Checkpoint(format!("missing entry {}", p.name())))?;
        if e.shape != p.shape() {
            return Err(TensorError::Checkpoint(format!(
                "{}: shape {:?} does not match {:?}",
                p.name(),
                e.shape,
                p.shape()
            )));
        }
        p.set(e.data.iter().map(|v| T::lit(*v as f64)).collect())?;
    }
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>, params: &[&Param<T>]) -> Result<()> {
    let f = File::open(path)?;
    load_into(read_entries(BufReader::new(f))?, params)
}
