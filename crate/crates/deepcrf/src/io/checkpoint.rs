//! Parameter checkpoints: a flat container of named f64 arrays.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes "DCKP"
//! version u16     currently 1
//! count   u32     number of entries
//! entry (repeated, sorted by name):
//!   name_len u16, name utf-8
//!   ndim     u8,  dims u32 x ndim
//!   data     f64 x prod(dims), IEEE-754 little-endian
//! ```
//!
//! Entries are written in name order, so identical parameter sets produce
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use autodiff::Tensor;

use crate::error::{FormatError, Result};

pub const MAGIC: [u8; 4] = *b"DCKP";
pub const VERSION: u16 = 1;

pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sorted.len() as u32).to_le_bytes())?;
    for (name, tensor) in sorted {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "checkpoint magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        }
        .into());
    }
    let mut v2 = [0u8; 2];
    read_exact(&mut r, &mut v2, "checkpoint version")?;
    let version = u16::from_le_bytes(v2);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let mut v4 = [0u8; 4];
    read_exact(&mut r, &mut v4, "entry count")?;
    let count = u32::from_le_bytes(v4);

    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        read_exact(&mut r, &mut v2, "name length")?;
        let name_len = u16::from_le_bytes(v2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| FormatError::Malformed {
            context: format!("entry {} name", i),
            detail: "invalid utf-8".into(),
        })?;
        let mut v1 = [0u8; 1];
        read_exact(&mut r, &mut v1, "ndim")?;
        let ndim = v1[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            read_exact(&mut r, &mut v4, "dim")?;
            shape.push(u32::from_le_bytes(v4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f64; n];
        let mut v8 = [0u8; 8];
        for slot in data.iter_mut() {
            read_exact(&mut r, &mut v8, "array data")?;
            *slot = f64::from_le_bytes(v8);
        }
        entries.push((
            name,
            Tensor::new(shape, data).map_err(|e| FormatError::Malformed {
                context: format!("entry {}", i),
                detail: e.to_string(),
            })?,
        ));
    }
    let mut extra = Vec::new();
    r.read_to_end(&mut extra)?;
    if !extra.is_empty() {
        return Err(FormatError::TrailingBytes(extra.len() as u64).into());
    }
    Ok(entries)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated {
                needed: buf.len(),
                context: context.to_string(),
            }
            .into()
        } else {
            crate::error::Error::Io(e)
        }
    })
}
