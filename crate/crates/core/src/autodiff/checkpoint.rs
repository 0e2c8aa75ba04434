//! Flat binary parameter container.
//!
//! Layout (little-endian): magic `MMAR`, format version `u32`, parameter
//! count `u32`; then per parameter a `u16` name length, the UTF-8 name, a
//! `u8` rank, `rank` dimensions as `u64`, and the `f64` payload.

use std::io::{Read, Write};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMAR";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len()).map_err(|_| Error::Checkpoint("too many parameters".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Checkpoint(format!("rank too high: {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(buf)
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamSet> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?);
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(read_array(&mut r)?);
            shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        params.push(name, Tensor::new(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.push(
            "a.w",
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, f64::MIN_POSITIVE, 1e300, -0.0]).unwrap(),
        )
        .unwrap();
        p.push("b", Tensor::new(vec![1], vec![std::f64::consts::PI]).unwrap())
            .unwrap();
        p.push("scalar", Tensor::scalar(4.0)).unwrap();
        p
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_params(&sample(), &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"MMAR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes(buf[12..14].try_into().unwrap()), 3);
        assert_eq!(&buf[14..17], b"a.w");
        assert_eq!(buf[17], 2);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_params(&sample(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_params(bad.as_slice()).is_err());
        assert!(read_params(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_params(long.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(values in prop::collection::vec(any::<f64>(), 1..40), split in 1usize..8) {
            let mut p = ParamSet::new();
            let head = split.min(values.len());
            p.push("head", Tensor::new(vec![head], values[..head].to_vec()).unwrap()).unwrap();
            p.push("tail", Tensor::new(vec![1, values.len() - head], values[head..].to_vec()).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_params(&p, &mut buf).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert!(back.same_layout(&p));
            for ((_, a), (_, b)) in back.iter().zip(p.iter()) {
                let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
