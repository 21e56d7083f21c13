//! Binary file formats: the tensor container (checkpoints, datasets,
//! reducers) and the feature bank file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::reduce::{FeatureBank, RowLabel, Split};

pub const CONTAINER_MAGIC: &[u8; 4] = b"D2CK";
pub const CONTAINER_VERSION: u32 = 1;
pub const BANK_MAGIC: &[u8; 4] = b"D2FB";
pub const BANK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn f32(name: &str, shape: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::F32(data),
        }
    }

    pub fn f64(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: TensorData::F64(data),
        }
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::F64(_) => Err(Error::Data(format!("tensor `{}` is f64, expected f32", self.name))),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Data(format!("tensor `{}` is f32, expected f64", self.name))),
        }
    }
}

/// JSON header plus named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new(header: Value) -> Self {
        Self {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Validation(format!("container lacks tensor `{name}`")))
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("kind").and_then(Value::as_str)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Validation(format!("expected a `{kind}` container, found {other:?}"))),
        }
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Data("file truncated".into())
    } else {
        Error::Io(e)
    }
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    // Grow as data arrives so a corrupt length cannot force a huge allocation.
    let mut out = Vec::new();
    r.take(n as u64).read_to_end(&mut out)?;
    if out.len() != n {
        return Err(Error::Data("file truncated".into()));
    }
    Ok(out)
}

/// Layout: magic, u32 version, u64 header length, JSON header, u32 tensor
/// count, then per tensor: u32 name length, name, u8 dtype (0 = f32,
/// 1 = f64), u32 rank, u64 extents, little-endian values.
pub fn write_container(w: &mut impl Write, c: &Container) -> Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    put_u32(w, CONTAINER_VERSION)?;
    let header = serde_json::to_vec(&c.header)?;
    put_u64(w, header.len() as u64)?;
    w.write_all(&header)?;
    put_u32(w, c.tensors.len() as u32)?;
    for t in &c.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::dims("container tensor", &t.shape, &[t.data.len()]));
        }
        put_u32(w, t.name.len() as u32)?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[matches!(t.data, TensorData::F64(_)) as u8])?;
        put_u32(w, t.shape.len() as u32)?;
        for &d in &t.shape {
            put_u64(w, d as u64)?;
        }
        match &t.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_container(r: &mut impl Read) -> Result<Container> {
    let magic = get_bytes(r, 4)?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::Data("not a tensor container (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != CONTAINER_VERSION {
        return Err(Error::Data(format!("unsupported container version {version}")));
    }
    let hlen = get_u64(r)? as usize;
    let header: Value = serde_json::from_slice(&get_bytes(r, hlen)?)?;
    let count = get_u32(r)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let nlen = get_u32(r)? as usize;
        let name = String::from_utf8(get_bytes(r, nlen)?).map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        let dtype = get_bytes(r, 1)?[0];
        let rank = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(get_u64(r)? as usize);
        }
        let n: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Data("tensor extent overflow".into()))?;
        let data = match dtype {
            0 => TensorData::F32(
                get_bytes(r, n.checked_mul(4).ok_or_else(|| Error::Data("tensor too large".into()))?)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            ),
            1 => TensorData::F64(
                get_bytes(r, n.checked_mul(8).ok_or_else(|| Error::Data("tensor too large".into()))?)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
            ),
            other => return Err(Error::Data(format!("unknown tensor dtype {other}"))),
        };
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(Container { header, tensors })
}

pub fn save_container(path: &Path, c: &Container) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, c)?;
    w.flush()?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<Container> {
    read_container(&mut BufReader::new(File::open(path)?))
}

/// Layout: magic "D2FB", u32 version, u64 rows, u32 dim, u32 segment count,
/// u32 per segment, row-major f32 data, then identity, camera, domain and
/// split (train 0, query 1, gallery 2) as i32 per row. Little-endian.
pub fn write_bank(w: &mut impl Write, bank: &FeatureBank) -> Result<()> {
    w.write_all(BANK_MAGIC)?;
    put_u32(w, BANK_VERSION)?;
    put_u64(w, bank.len() as u64)?;
    put_u32(w, bank.dim() as u32)?;
    put_u32(w, bank.segments().len() as u32)?;
    for &s in bank.segments() {
        put_u32(w, s as u32)?;
    }
    for v in bank.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in bank.labels() {
        for v in [l.identity as i32, l.camera as i32, l.domain as i32, l.split.code()] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_bank(r: &mut impl Read) -> Result<FeatureBank> {
    if get_bytes(r, 4)? != BANK_MAGIC {
        return Err(Error::Data("not a feature bank (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != BANK_VERSION {
        return Err(Error::Data(format!("unsupported feature bank version {version}")));
    }
    let rows = get_u64(r)? as usize;
    let dim = get_u32(r)? as usize;
    let nseg = get_u32(r)? as usize;
    let mut segments = Vec::with_capacity(nseg.min(1024));
    for _ in 0..nseg {
        segments.push(get_u32(r)? as usize);
    }
    let n = rows.checked_mul(dim).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::Data("bank too large".into()))?;
    let data: Vec<f32> = get_bytes(r, n)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let raw = get_bytes(r, rows.checked_mul(16).ok_or_else(|| Error::Data("bank too large".into()))?)?;
    let mut labels = Vec::with_capacity(rows);
    for chunk in raw.chunks_exact(16) {
        let v: Vec<i32> = chunk.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        if v[..3].iter().any(|&x| x < 0) {
            return Err(Error::Data("negative label in feature bank".into()));
        }
        labels.push(RowLabel {
            identity: v[0] as u32,
            camera: v[1] as u32,
            domain: v[2] as u32,
            split: Split::from_code(v[3])?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Data("trailing bytes after feature bank".into()));
    }
    FeatureBank::new(dim, data, labels, segments).map_err(|e| Error::Data(e.to_string()))
}

pub fn save_bank(path: &Path, bank: &FeatureBank) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bank(&mut w, bank)?;
    w.flush()?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<FeatureBank> {
    read_bank(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bank() -> FeatureBank {
        let labels = vec![
            RowLabel { identity: 3, camera: 1, domain: 2, split: Split::Query },
            RowLabel { identity: 4, camera: 0, domain: 2, split: Split::Gallery },
        ];
        FeatureBank::new(3, vec![1.0, -2.5, 0.0, f32::MIN_POSITIVE, 7.0, 1e-30], labels, vec![1, 2]).unwrap()
    }

    #[test]
    fn bank_bytes_layout() {
        let mut buf = Vec::new();
        write_bank(&mut buf, &sample_bank()).unwrap();
        assert_eq!(&buf[..4], b"D2FB");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 4 + 4 + 8 + 4 + 4 + 8 + 6 * 4 + 2 * 16);
        let split = i32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
        assert_eq!(split, 2);
        assert_eq!(read_bank(&mut buf.as_slice()).unwrap(), sample_bank());
    }

    #[test]
    fn bank_rejects_corruption() {
        let mut buf = Vec::new();
        write_bank(&mut buf, &sample_bank()).unwrap();
        assert!(read_bank(&mut &buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_bank(&mut extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_bank(&mut bad.as_slice()), Err(Error::Data(_))));
    }

    #[test]
    fn container_round_trip() {
        let mut c = Container::new(serde_json::json!({"kind": "test", "n": 2}));
        c.push(NamedTensor::f32("a.weight", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        c.push(NamedTensor::f64("mean", &[3], vec![0.1, 0.2, 0.3]));
        let mut buf = Vec::new();
        write_container(&mut buf, &c).unwrap();
        let back = read_container(&mut buf.as_slice()).unwrap();
        assert_eq!(back, c);
        assert!(back.expect_kind("test").is_ok());
        assert!(back.expect_kind("ensemble").is_err());
        assert!(back.get("mean").unwrap().as_f32().is_err());
        assert!(read_container(&mut &buf[..buf.len() - 3]).is_err());
    }
}
