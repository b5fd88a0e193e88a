//! `STCV` tensor container: magic, `u32` version, `u32` rank, `rank × u32`
//! extents, then the values as little-endian binary64 in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"STCV";
pub const VERSION: u32 = 1;

const MAX_RANK: u32 = 16;

pub fn write_tensor_to<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let rank = u32::try_from(t.rank())
        .map_err(|_| Error::ExtentOverflow(format!("rank {} does not fit u32", t.rank())))?;
    w.write_all(&rank.to_le_bytes())?;
    for &e in t.shape() {
        let e = u32::try_from(e)
            .map_err(|_| Error::ExtentOverflow(format!("extent {e} does not fit u32")))?;
        w.write_all(&e.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_tensor_to(BufWriter::new(File::create(path)?), t)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rank = read_u32(&mut r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::ExtentOverflow(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        let e = read_u32(&mut r)?;
        if e == 0 {
            return Err(Error::ExtentOverflow("zero extent".into()));
        }
        shape.push(e as usize);
    }
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::ExtentOverflow(format!("extents {shape:?} overflow")))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let found = payload.len() / 8;
    if payload.len() != expected * 8 {
        if found < expected || payload.len() % 8 != 0 {
            return Err(Error::TruncatedPayload { expected, found });
        }
        return Err(Error::ExtentOverflow(format!(
            "{} trailing bytes after {expected} values",
            payload.len() - expected * 8
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_from(BufReader::new(File::open(path)?))
}
