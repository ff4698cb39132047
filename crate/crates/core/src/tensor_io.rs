//! Binary container for named f64 tensors, shared by checkpoint payloads and
//! cached backbone weights. All integers little-endian; f64 as raw LE bits,
//! so round-trips are bit-exact.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::nn::NamedTensor;

const WEIGHTS_MAGIC: &[u8; 4] = b"HPWT";
const WEIGHTS_VERSION: u32 = 1;

pub(crate) fn write_tensors(w: &mut impl Write, tensors: &[NamedTensor]) -> io::Result<()> {
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let expected: usize = t.shape.iter().product();
        debug_assert_eq!(expected, t.data.len());
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_tensors(r: &mut impl Read) -> io::Result<Vec<NamedTensor>> {
    let count = read_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 4096 {
            return Err(bad_data("tensor name unreasonably long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad_data("tensor name not utf-8"))?;
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(bad_data("tensor rank unreasonably large"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn bad_data(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

/// Write a standalone weights file (magic + version + tensor payload).
pub fn write_tensor_file(path: &Path, tensors: &[NamedTensor]) -> io::Result<()> {
    let mut file = io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(WEIGHTS_MAGIC)?;
    file.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    write_tensors(&mut file, tensors)?;
    file.flush()
}

pub fn read_tensor_file(path: &Path) -> io::Result<Vec<NamedTensor>> {
    let mut file = io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(bad_data("not a weights container"));
    }
    let version = read_u32(&mut file)?;
    if version != WEIGHTS_VERSION {
        return Err(bad_data("unsupported weights container version"));
    }
    read_tensors(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.hpw");
        let tensors = vec![
            NamedTensor {
                name: "a".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 1e300],
            },
            NamedTensor {
                name: "b".into(),
                shape: vec![1],
                data: vec![-0.0],
            },
        ];
        write_tensor_file(&path, &tensors).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (orig, read) in tensors.iter().zip(&back) {
            assert_eq!(orig.name, read.name);
            assert_eq!(orig.shape, read.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&orig.data), bits(&read.data));
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.hpw");
        let tensors = vec![NamedTensor {
            name: "a".into(),
            shape: vec![4],
            data: vec![1.0, 2.0, 3.0, 4.0],
        }];
        write_tensor_file(&path, &tensors).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(read_tensor_file(&path).is_err());
    }
}
