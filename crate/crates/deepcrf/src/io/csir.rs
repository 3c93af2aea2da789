//! The `CSIR` binary record container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic   4 bytes  "CSIR"
//! version u16      currently 1
//! count   u64      number of records
//! record (426 bytes, repeated `count` times):
//!   device_id   u16
//!   position_id u8
//!   rx_index    u8
//!   channel_tag u8
//!   reserved    u8 (zero)
//!   snr_db      f32 (NaN = unknown)
//!   csi         52 x (re f32, im f32)
//! ```
//!
//! The declared count must match the bytes present; trailing bytes are an
//! error. Values cross this boundary in single precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{FormatError, Result};
use crate::signal::{CsiRecord, Subcarriers52};

pub const MAGIC: [u8; 4] = *b"CSIR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 14;
pub const RECORD_LEN: u64 = 426;

fn encode_record(rec: &CsiRecord, buf: &mut [u8; RECORD_LEN as usize]) {
    buf[0..2].copy_from_slice(&rec.device_id.to_le_bytes());
    buf[2] = rec.position_id;
    buf[3] = rec.rx_index;
    buf[4] = rec.channel_tag;
    buf[5] = 0;
    let snr = rec.snr_db.unwrap_or(f32::NAN);
    buf[6..10].copy_from_slice(&snr.to_le_bytes());
    let mut off = 10;
    for v in rec.csi.iter() {
        buf[off..off + 4].copy_from_slice(&(v.re as f32).to_le_bytes());
        buf[off + 4..off + 8].copy_from_slice(&(v.im as f32).to_le_bytes());
        off += 8;
    }
}

fn decode_record(buf: &[u8; RECORD_LEN as usize]) -> Result<CsiRecord> {
    let device_id = u16::from_le_bytes([buf[0], buf[1]]);
    let position_id = buf[2];
    let rx_index = buf[3];
    let channel_tag = buf[4];
    let snr = f32::from_le_bytes([buf[6], buf[7], buf[8], buf[9]]);
    let snr_db = if snr.is_nan() { None } else { Some(snr) };
    let mut values = [Complex64::new(0.0, 0.0); 52];
    let mut off = 10;
    for v in values.iter_mut() {
        let re = f32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]);
        let im = f32::from_le_bytes([buf[off + 4], buf[off + 5], buf[off + 6], buf[off + 7]]);
        *v = Complex64::new(re as f64, im as f64);
        off += 8;
    }
    Ok(CsiRecord {
        csi: Subcarriers52::new(values)?,
        device_id,
        position_id,
        rx_index,
        snr_db,
        channel_tag,
    })
}

/// Streaming writer. The header count is patched on [`CsirWriter::finish`];
/// an unfinished file is detectable as a count mismatch.
pub struct CsirWriter {
    file: BufWriter<File>,
    written: u64,
    finished: bool,
}

impl CsirWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(&MAGIC)?;
        file.write_all(&VERSION.to_le_bytes())?;
        file.write_all(&0u64.to_le_bytes())?;
        Ok(CsirWriter {
            file,
            written: 0,
            finished: false,
        })
    }

    pub fn write_record(&mut self, rec: &CsiRecord) -> Result<()> {
        let mut buf = [0u8; RECORD_LEN as usize];
        encode_record(rec, &mut buf);
        self.file.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Patch the header count and flush. Must be called for a valid file.
    pub fn finish(mut self) -> Result<u64> {
        self.file.flush()?;
        let inner = self.file.get_mut();
        inner.seek(SeekFrom::Start(6))?;
        inner.write_all(&self.written.to_le_bytes())?;
        inner.flush()?;
        self.finished = true;
        Ok(self.written)
    }
}

impl Drop for CsirWriter {
    fn drop(&mut self) {
        if !self.finished {
            log::warn!(
                "CsirWriter dropped without finish(); file declares 0 of {} records",
                self.written
            );
        }
    }
}

/// Streaming reader with O(1) memory per record.
pub struct CsirReader {
    file: BufReader<File>,
    declared: u64,
    yielded: u64,
}

impl CsirReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let total_len = file.metadata()?.len();
        let mut reader = BufReader::new(file);

        let mut magic = [0u8; 4];
        read_exact_or(&mut reader, &mut magic, "header magic")?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: magic,
            }
            .into());
        }
        let mut v = [0u8; 2];
        read_exact_or(&mut reader, &mut v, "header version")?;
        let version = u16::from_le_bytes(v);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let mut c = [0u8; 8];
        read_exact_or(&mut reader, &mut c, "header count")?;
        let declared = u64::from_le_bytes(c);

        let expected_len = HEADER_LEN + declared * RECORD_LEN;
        if total_len < expected_len {
            let missing = expected_len - total_len;
            // Distinguish a short record tail from whole missing records.
            let actual_records = (total_len - HEADER_LEN.min(total_len)) / RECORD_LEN;
            if (total_len - HEADER_LEN) % RECORD_LEN != 0 {
                return Err(FormatError::Truncated {
                    needed: missing as usize,
                    context: format!("record {}", actual_records),
                }
                .into());
            }
            return Err(FormatError::CountMismatch {
                declared,
                actual: actual_records,
            }
            .into());
        }
        if total_len > expected_len {
            return Err(FormatError::TrailingBytes(total_len - expected_len).into());
        }
        Ok(CsirReader {
            file: reader,
            declared,
            yielded: 0,
        })
    }

    pub fn record_count(&self) -> u64 {
        self.declared
    }

    /// Read everything into memory (small files only).
    pub fn read_all(path: &Path) -> Result<Vec<CsiRecord>> {
        let reader = CsirReader::open(path)?;
        let declared = reader.declared as usize;
        let mut out = Vec::with_capacity(declared);
        for rec in reader {
            out.push(rec?);
        }
        Ok(out)
    }
}

impl Iterator for CsirReader {
    type Item = Result<CsiRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.yielded >= self.declared {
            return None;
        }
        let mut buf = [0u8; RECORD_LEN as usize];
        if let Err(e) = read_exact_or(&mut self.file, &mut buf, "record body") {
            return Some(Err(e));
        }
        self.yielded += 1;
        Some(decode_record(&buf))
    }
}

fn read_exact_or(reader: &mut impl Read, buf: &mut [u8], context: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
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

/// Write a full record list and finish the file.
pub fn write_all(path: &Path, records: &[CsiRecord]) -> Result<u64> {
    let mut w = CsirWriter::create(path)?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{forward_csi, plant_fingerprint, NoiseSpec};
    use crate::channel::{sample_channel, ChannelModel, ChannelModelSpec};
    use crate::error::Error;

    fn sample_records(n: usize) -> Vec<CsiRecord> {
        let fp = plant_fingerprint(1, 0.02, 3).unwrap();
        let ch = sample_channel(&ChannelModelSpec::of(ChannelModel::C, false), 5).unwrap();
        (0..n)
            .map(|i| {
                forward_csi(&fp, &ch, &NoiseSpec::new(20.0, i as u64).unwrap())
                    .with_position(2)
                    .with_rx_index((i % 4) as u8)
            })
            .collect()
    }

    #[test]
    fn roundtrip_preserves_bytes_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csir");
        let p2 = dir.path().join("b.csir");
        let records = sample_records(3);
        write_all(&p1, &records).unwrap();

        let loaded = CsirReader::read_all(&p1).unwrap();
        assert_eq!(loaded.len(), 3);
        for (orig, back) in records.iter().zip(&loaded) {
            assert_eq!(orig.device_id, back.device_id);
            assert_eq!(orig.position_id, back.position_id);
            assert_eq!(orig.rx_index, back.rx_index);
            assert_eq!(orig.channel_tag, back.channel_tag);
            for (a, b) in orig.csi.iter().zip(back.csi.iter()) {
                assert!((a.re as f32 - b.re as f32).abs() == 0.0);
                assert!((a.im as f32 - b.im as f32).abs() == 0.0);
            }
        }

        // Byte-exact: writing what was read reproduces the file.
        write_all(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csir");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match CsirReader::open(&p) {
            Err(Error::Format(FormatError::BadMagic { .. })) => {}
            other => panic!("expected BadMagic, got {:?}", other.err()),
        }
    }

    #[test]
    fn truncation_is_distinct_not_a_short_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csir");
        write_all(&p, &sample_records(2)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // Cut into the middle of the second record.
        std::fs::write(&p, &bytes[..bytes.len() - 100]).unwrap();
        match CsirReader::open(&p) {
            Err(Error::Format(FormatError::Truncated { .. })) => {}
            other => panic!("expected Truncated, got {:?}", other.err()),
        }
    }

    #[test]
    fn count_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csir");
        write_all(&p, &sample_records(3)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // Remove exactly one record's bytes: declared 3, present 2.
        std::fs::write(&p, &bytes[..bytes.len() - RECORD_LEN as usize]).unwrap();
        match CsirReader::open(&p) {
            Err(Error::Format(FormatError::CountMismatch { declared, actual })) => {
                assert_eq!((declared, actual), (3, 2));
            }
            other => panic!("expected CountMismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn trailing_bytes_are_forbidden() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csir");
        write_all(&p, &sample_records(1)).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.extend_from_slice(&[0u8; 7]);
        std::fs::write(&p, &bytes).unwrap();
        match CsirReader::open(&p) {
            Err(Error::Format(FormatError::TrailingBytes(7))) => {}
            other => panic!("expected TrailingBytes, got {:?}", other.err()),
        }
    }

    #[test]
    fn streaming_read_of_a_large_file() {
        // 100k records (~43 MB) consumed through the iterator without
        // materializing; only counters accumulate.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.csir");
        let rec = sample_records(1).remove(0);
        let mut w = CsirWriter::create(&p).unwrap();
        for _ in 0..100_000 {
            w.write_record(&rec).unwrap();
        }
        w.finish().unwrap();

        let reader = CsirReader::open(&p).unwrap();
        assert_eq!(reader.record_count(), 100_000);
        let mut count = 0u64;
        let mut checksum = 0.0f64;
        for r in reader {
            let r = r.unwrap();
            checksum += r.csi[0].re;
            count += 1;
        }
        assert_eq!(count, 100_000);
        assert!(checksum.is_finite());
    }
}
