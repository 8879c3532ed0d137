//! Detector-output trace files.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `FLTR`                            |
//! | 4      | 4    | version, u32 = 1                        |
//! | 8      | 8    | sample_rate_hz, f64                     |
//! | 16     | 8    | sample_count, u64                       |
//! | 24     | 16   | front-end hash, ASCII hex               |
//! | 40     | 4·n  | samples, f32                            |

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::buffer::RealBuffer;

use super::HarnessError;

pub const TRACE_MAGIC: &[u8; 4] = b"FLTR";
pub const TRACE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;
const HASH_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub buffer: RealBuffer,
    pub frontend_hash: String,
}

pub fn write_trace<W: Write>(mut w: W, buffer: &RealBuffer, frontend_hash: &str) -> Result<(), HarnessError> {
    if frontend_hash.len() != HASH_LEN || !frontend_hash.is_ascii() {
        return Err(HarnessError::Runtime(format!("front-end hash '{frontend_hash}' must be {HASH_LEN} ASCII characters")));
    }
    w.write_all(TRACE_MAGIC)?;
    w.write_u32::<LittleEndian>(TRACE_VERSION)?;
    w.write_f64::<LittleEndian>(buffer.sample_rate_hz)?;
    w.write_u64::<LittleEndian>(buffer.len() as u64)?;
    w.write_all(frontend_hash.as_bytes())?;
    let mut bytes = Vec::with_capacity(4 * buffer.len());
    for &v in &buffer.samples {
        bytes.write_f32::<LittleEndian>(v as f32)?;
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R, name: &str) -> Result<Trace, HarnessError> {
    let bad = |msg: String| HarnessError::Data {
        context: name.to_string(),
        msg,
    };
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.is_empty() {
        return Err(bad("empty trace file".into()));
    }
    if all.len() < HEADER_LEN {
        return Err(bad(format!("truncated header: {} of {HEADER_LEN} bytes", all.len())));
    }
    if &all[..4] != TRACE_MAGIC {
        return Err(bad("not a trace file (bad magic)".into()));
    }
    let mut h = &all[4..HEADER_LEN];
    let version = h.read_u32::<LittleEndian>()?;
    if version != TRACE_VERSION {
        return Err(bad(format!("unsupported trace version {version}")));
    }
    let rate = h.read_f64::<LittleEndian>()?;
    let count = h.read_u64::<LittleEndian>()? as usize;
    let hash = String::from_utf8(h[..HASH_LEN].to_vec()).map_err(|_| bad("front-end hash is not ASCII".into()))?;
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(bad(format!("invalid sample rate {rate}")));
    }
    if count == 0 {
        return Err(bad("trace holds no samples".into()));
    }
    let body = &all[HEADER_LEN..];
    if body.len() != 4 * count {
        return Err(bad(format!("header promises {count} samples, file holds {} bytes of data", body.len())));
    }
    let mut samples = Vec::with_capacity(count);
    let mut b = body;
    for _ in 0..count {
        let v = b.read_f32::<LittleEndian>()? as f64;
        if !v.is_finite() {
            return Err(bad("non-finite sample".into()));
        }
        samples.push(v);
    }
    Ok(Trace {
        buffer: RealBuffer::new(rate, samples),
        frontend_hash: hash,
    })
}

pub fn load_trace(path: &Path) -> Result<Trace, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Data {
        context: path.display().to_string(),
        msg: e.to_string(),
    })?;
    read_trace(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn save_trace(path: &Path, buffer: &RealBuffer, frontend_hash: &str) -> Result<(), HarnessError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_trace(&mut w, buffer, frontend_hash)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact_in_f32() {
        let buf = RealBuffer::new(1.92e6, vec![0.5, -1.25, 3.0e-7, 0.0]);
        let mut out = Vec::new();
        write_trace(&mut out, &buf, "0123456789abcdef").unwrap();
        assert_eq!(out.len(), HEADER_LEN + 16);
        assert_eq!(&out[..4], b"FLTR");
        let t = read_trace(out.as_slice(), "t").unwrap();
        assert_eq!(t.frontend_hash, "0123456789abcdef");
        assert_eq!(t.buffer.sample_rate_hz, 1.92e6);
        for (a, b) in t.buffer.samples.iter().zip(&buf.samples) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn malformed_files_are_errors() {
        assert!(read_trace(&b""[..], "t").unwrap_err().to_string().contains("empty"));
        assert!(read_trace(&b"FLTR"[..], "t").is_err());
        let buf = RealBuffer::new(1.92e6, vec![1.0; 3]);
        let mut out = Vec::new();
        write_trace(&mut out, &buf, "0123456789abcdef").unwrap();
        out.pop();
        assert!(read_trace(out.as_slice(), "t").is_err());
    }
}
