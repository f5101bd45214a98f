//! Binary tensor container.
//!
//! Single-tensor layout (little-endian throughout):
//!
//! ```text
//! 4 bytes  magic "JGL1"
//! 1 byte   rank (<= 4)
//! 8 bytes  per dim, u64
//! 4 bytes  per element, f32, row-major
//! ```
//!
//! Round-trips are bit-exact, including negative zero and subnormals.
//!
//! The named container wraps an index over such records for checkpoints and
//! embedding bundles:
//!
//! ```text
//! 4 bytes  magic "JGLC"
//! 2 bytes  version, u16
//! 4 bytes  entry count, u32
//! entries: 2-byte name length, UTF-8 name, single-tensor record
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"JGL1";
pub const CONTAINER_MAGIC: &[u8; 4] = b"JGLC";
pub const CONTAINER_VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

pub fn write_tensor(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_tensor_to(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let t = read_tensor_from(&mut r)?;
    // trailing garbage means the file is not a bare tensor record
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(t),
        _ => Err(Error::Format("trailing bytes after tensor record".into())),
    }
}

pub fn write_tensor_to<W: Write>(w: &mut W, tensor: &Tensor<f32>) -> Result<()> {
    if tensor.rank() > MAX_RANK {
        return Err(Error::Format(format!(
            "rank {} exceeds maximum {MAX_RANK}",
            tensor.rank()
        )));
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[tensor.rank() as u8])?;
    for &d in &tensor.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in &tensor.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_from<R: Read>(r: &mut R) -> Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, TENSOR_MAGIC
        )));
    }
    let mut rank_byte = [0u8; 1];
    read_exact(r, &mut rank_byte, "rank")?;
    let rank = rank_byte[0] as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds maximum {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: u128 = 1;
    for i in 0..rank {
        let mut dim = [0u8; 8];
        read_exact(r, &mut dim, "dims")?;
        let d = u64::from_le_bytes(dim);
        numel = numel.saturating_mul(d as u128);
        if numel > usize::MAX as u128 / 4 {
            return Err(Error::Format(format!("dim overflow at axis {i}: {d}")));
        }
        shape.push(d as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, "payload")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(&shape, data))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
}

/// On-disk size of a single-tensor record.
pub fn tensor_record_size(tensor: &Tensor<f32>) -> usize {
    4 + 1 + 8 * tensor.rank() + 4 * tensor.numel()
}

pub fn write_named(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("entry name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor_to(&mut w, tensor)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_named(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "container magic")?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Format(format!(
            "bad container magic {:?}, expected {:?}",
            magic, CONTAINER_MAGIC
        )));
    }
    let mut ver = [0u8; 2];
    read_exact(&mut r, &mut ver, "version")?;
    let version = u16::from_le_bytes(ver);
    if version != CONTAINER_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CONTAINER_VERSION,
        });
    }
    let mut count = [0u8; 4];
    read_exact(&mut r, &mut count, "entry count")?;
    let count = u32::from_le_bytes(count) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact(&mut r, &mut len, "name length")?;
        let len = u16::from_le_bytes(len) as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("entry name is not valid UTF-8".into()))?;
        let tensor = read_tensor_from(&mut r)?;
        entries.push((name, tensor));
    }
    Ok(entries)
}

/// On-disk size of a named container with the given entries.
pub fn named_container_size(entries: &[(String, Tensor<f32>)]) -> usize {
    4 + 2 + 4
        + entries
            .iter()
            .map(|(n, t)| 2 + n.len() + tensor_record_size(t))
            .sum::<usize>()
}
