//! Binary tensor container used for all checkpoints.
//!
//! Layout: magic string, one version byte, then per entry: name length (u32
//! LE), UTF-8 name bytes, shape as four u32 LE, raw f32 LE values. Entries
//! run to end of file. Round trips are bit-exact. Model files prepend a
//! single text header line (terminated by '\n') describing the architecture.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 6] = b"RKTNSR";
const VERSION: u8 = 1;

pub fn write_tensors<W: Write>(mut w: W, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let s = t.shape();
        for d in [s.n, s.c, s.h, s.w] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver)?;
    if ver[0] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ver[0])));
    }
    let mut entries = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("non-UTF8 parameter name".into()))?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::Checkpoint(format!("zero dim in shape of {name}")));
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let mut data = vec![0f32; shape.numel()];
        for v in &mut data {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(entries)
}

pub fn save_tensors(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    read_tensors(BufReader::new(File::open(path)?))
}

/// Write a checkpoint with a leading text header line.
pub fn save_with_header(
    path: &Path,
    header: &str,
    entries: &[(String, Tensor<f32>)],
) -> Result<()> {
    debug_assert!(!header.contains('\n'));
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    write_tensors(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

/// Read a header-line checkpoint; returns (header, tensors).
pub fn load_with_header(path: &Path) -> Result<(String, Vec<(String, Tensor<f32>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Checkpoint("missing header line".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        if header.len() > 4096 {
            return Err(Error::Checkpoint("header line too long".into()));
        }
        header.push(byte[0]);
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::Checkpoint("non-UTF8 header".into()))?;
    let tensors = read_tensors(r)?;
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        let entries = vec![
            (
                "g.enc1.w".to_string(),
                Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1.5, -0.25, 3.75e-9, 4.0, 5.0, f32::MIN_POSITIVE]).unwrap(),
            ),
            ("g.enc1.b".to_string(), Tensor::zeros(Shape::new(1, 2, 1, 1))),
        ];
        save_tensors(&path, &entries).unwrap();
        let back = load_tensors(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            let b0: Vec<u32> = t0.data().iter().map(|v| v.to_bits()).collect();
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b0, b1);
        }
    }

    #[test]
    fn header_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let entries = vec![("w".to_string(), Tensor::scalar(1.0f32))];
        save_with_header(&path, "rainnet depth=5 base=16", &entries).unwrap();
        let (hdr, back) = load_with_header(&path).unwrap();
        assert_eq!(hdr, "rainnet depth=5 base=16");
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let data = b"NOTMAGIC".to_vec();
        assert!(read_tensors(&data[..]).is_err());
    }
}
