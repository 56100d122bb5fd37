//! Binary containers: `DTF1` tensors, `MSK1` masks and `MDL1` models.
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mask::ObservationMask;
use crate::model::{CpModel, Model, TtModel, TuckerModel};
use crate::tensor::{num_entries, DenseTensor};

const TENSOR_MAGIC: &[u8; 4] = b"DTF1";
const MASK_MAGIC: &[u8; 4] = b"MSK1";
const MODEL_MAGIC: &[u8; 4] = b"MDL1";

const KIND_CP: u32 = 0;
const KIND_TUCKER: u32 = 1;
const KIND_TT: u32 = 2;

/// Refuse headers that would allocate absurd amounts of memory.
const MAX_ENTRIES: usize = 1 << 34;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize(r: &mut impl Read) -> Result<usize> {
    usize::try_from(get_u64(r)?).map_err(|_| Error::Format("size does not fit in usize".into()))
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&b)
        )));
    }
    Ok(())
}

fn put_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    put_u32(w, shape.len() as u32)?;
    for &d in shape {
        put_u64(w, d as u64)?;
    }
    Ok(())
}

fn get_shape(r: &mut impl Read) -> Result<Vec<usize>> {
    let order = get_u32(r)? as usize;
    if order == 0 || order > 64 {
        return Err(Error::Format(format!("implausible tensor order {order}")));
    }
    let shape = (0..order).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
    let mut total: usize = 1;
    for &d in &shape {
        total = total
            .checked_mul(d)
            .filter(|&t| t <= MAX_ENTRIES)
            .ok_or_else(|| Error::Format(format!("shape {shape:?} is too large")))?;
    }
    if total == 0 {
        return Err(Error::Format(format!("shape {shape:?} has a zero dimension")));
    }
    Ok(shape)
}

pub fn write_tensor_to(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    put_shape(w, t.shape())?;
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_from(r: &mut impl Read) -> Result<DenseTensor> {
    expect_magic(r, TENSOR_MAGIC)?;
    let shape = get_shape(r)?;
    let mut bytes = vec![0u8; num_entries(&shape) * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::new(shape, data)
}

pub fn write_mask_to(w: &mut impl Write, m: &ObservationMask) -> Result<()> {
    w.write_all(MASK_MAGIC)?;
    put_shape(w, m.shape())?;
    put_u64(w, m.len() as u64)?;
    for &i in m.indices() {
        put_u64(w, i as u64)?;
    }
    Ok(())
}

pub fn read_mask_from(r: &mut impl Read) -> Result<ObservationMask> {
    expect_magic(r, MASK_MAGIC)?;
    let shape = get_shape(r)?;
    let count = get_usize(r)?;
    if count > num_entries(&shape) {
        return Err(Error::Format(format!("mask lists {count} entries for shape {shape:?}")));
    }
    let indices = (0..count).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("mask indices are not strictly ascending".into()));
    }
    ObservationMask::new(shape, indices)
}

pub fn write_model_to(w: &mut impl Write, model: &Model) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    match model {
        Model::Cp(m) => {
            put_u32(w, KIND_CP)?;
            put_u32(w, m.factors.len() as u32)?;
            put_u64(w, m.rank() as u64)?;
            write_tensor_to(w, &DenseTensor::new(vec![m.rank()], m.weights.clone())?)?;
            for f in &m.factors {
                write_tensor_to(w, &DenseTensor::from_matrix(f))?;
            }
        }
        Model::Tucker(m) => {
            put_u32(w, KIND_TUCKER)?;
            put_u32(w, m.factors.len() as u32)?;
            for &r in m.ranks() {
                put_u64(w, r as u64)?;
            }
            write_tensor_to(w, &m.core)?;
            for f in &m.factors {
                write_tensor_to(w, &DenseTensor::from_matrix(f))?;
            }
        }
        Model::Tt(m) => {
            put_u32(w, KIND_TT)?;
            put_u32(w, m.order() as u32)?;
            for r in m.ranks() {
                put_u64(w, r as u64)?;
            }
            for c in &m.cores {
                write_tensor_to(w, c)?;
            }
        }
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read, cols: usize) -> Result<DMatrix<f64>> {
    let t = read_tensor_from(r)?;
    if t.order() != 2 || t.shape()[1] != cols {
        return Err(Error::Format(format!(
            "expected a matrix with {cols} columns, found shape {:?}",
            t.shape()
        )));
    }
    t.to_matrix()
}

pub fn read_model_from(r: &mut impl Read) -> Result<Model> {
    expect_magic(r, MODEL_MAGIC)?;
    let kind = get_u32(r)?;
    let order = get_u32(r)? as usize;
    if order == 0 || order > 64 {
        return Err(Error::Format(format!("implausible model order {order}")));
    }
    match kind {
        KIND_CP => {
            let rank = get_usize(r)?;
            let weights = read_tensor_from(r)?;
            if weights.shape() != [rank] {
                return Err(Error::Format("CP weight vector does not match the rank".into()));
            }
            let factors = (0..order).map(|_| read_matrix(r, rank)).collect::<Result<Vec<_>>>()?;
            Ok(Model::Cp(CpModel::new(weights.into_data(), factors)?))
        }
        KIND_TUCKER => {
            let ranks = (0..order).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
            let core = read_tensor_from(r)?;
            if core.shape() != ranks.as_slice() {
                return Err(Error::Format("Tucker core does not match the ranks".into()));
            }
            let factors = ranks.iter().map(|&c| read_matrix(r, c)).collect::<Result<Vec<_>>>()?;
            Ok(Model::Tucker(TuckerModel::new(core, factors)?))
        }
        KIND_TT => {
            let ranks = (0..=order).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
            let cores = (0..order).map(|_| read_tensor_from(r)).collect::<Result<Vec<_>>>()?;
            let model = TtModel::new(cores)?;
            if model.ranks() != ranks {
                return Err(Error::Format("TT cores do not match the stored ranks".into()));
            }
            Ok(Model::Tt(model))
        }
        other => Err(Error::Format(format!("unknown model kind tag {other}"))),
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor_from(&mut BufReader::new(File::open(path)?))
}

pub fn write_mask(path: impl AsRef<Path>, m: &ObservationMask) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mask_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<ObservationMask> {
    read_mask_from(&mut BufReader::new(File::open(path)?))
}

pub fn write_model(path: impl AsRef<Path>, m: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_layout_is_exact() {
        let t = DenseTensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        let mut expected = b"DTF1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1.5f64.to_le_bytes());
        expected.extend((-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
        assert_eq!(read_tensor_from(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn mask_round_trip_and_layout() {
        let m = ObservationMask::new(vec![3, 3], vec![7, 0, 4]).unwrap();
        let mut buf = Vec::new();
        write_mask_to(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"MSK1");
        assert_eq!(buf.len(), 4 + 4 + 16 + 8 + 24);
        assert_eq!(&buf[32..40], &0u64.to_le_bytes());
        assert_eq!(read_mask_from(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn unsorted_mask_file_rejected() {
        let mut buf = b"MSK1".to_vec();
        buf.extend(1u32.to_le_bytes());
        buf.extend(5u64.to_le_bytes());
        buf.extend(2u64.to_le_bytes());
        buf.extend(3u64.to_le_bytes());
        buf.extend(1u64.to_le_bytes());
        assert!(matches!(read_mask_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(read_tensor_from(&mut &b"XXXX"[..]), Err(Error::Format(_))));
        let t = DenseTensor::zeros(vec![4]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_tensor_from(&mut buf.as_slice()), Err(Error::Io(_))));
    }

    #[test]
    fn models_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = [
            Model::Cp(CpModel::random(&[3, 4, 2], 2, &mut rng).unwrap()),
            Model::Tucker(TuckerModel::random(&[3, 4, 2], &[2, 3, 1], &mut rng).unwrap()),
            Model::Tt(TtModel::random(&[3, 4, 2], &[2, 2], &mut rng).unwrap()),
        ];
        for m in &models {
            let mut buf = Vec::new();
            write_model_to(&mut buf, m).unwrap();
            assert_eq!(&buf[..4], b"MDL1");
            let back = read_model_from(&mut buf.as_slice()).unwrap();
            assert_eq!(&back, m);
        }
    }

    #[test]
    fn files_on_disk() {
        let dir = std::env::temp_dir().join(format!("tensor-lift-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let t = DenseTensor::from_fn(vec![2, 3], |i| (i[0] * 3 + i[1]) as f64).unwrap();
        write_tensor(dir.join("t.dtf"), &t).unwrap();
        assert_eq!(read_tensor(dir.join("t.dtf")).unwrap(), t);
        assert!(matches!(read_tensor(dir.join("missing.dtf")), Err(Error::Io(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
