//! `S2E1` tensor container.
//!
//! Layout: the 4-byte magic `S2E1`, then records until end of file. Each
//! record is `u32` name length, UTF-8 name, `u32` rank, `rank × u32`
//! extents and `numel × f32` values; all integers and floats little-endian.

use std::io::{self, Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"S2E1";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn write_records<W: Write>(mut out: W, records: &[TensorRecord]) -> Result<()> {
    out.write_all(MAGIC)?;
    for rec in records {
        let name = rec.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(rec.tensor.rank() as u32).to_le_bytes())?;
        for &e in rec.tensor.shape() {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(rec.tensor.numel() * 4);
        for v in rec.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| truncated(e, "u32"))?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format(format!("truncated record while reading {what}"))
    } else {
        Error::Io(e)
    }
}

pub fn read_records<R: Read>(mut input: R) -> Result<Vec<TensorRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing S2E1 magic".into()));
    }
    let mut cur = io::Cursor::new(&bytes[4..]);
    let total = bytes.len() as u64 - 4;
    let mut records = Vec::new();
    while cur.position() < total {
        let name_len = read_u32(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(|e| truncated(e, "name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
        let rank = read_u32(&mut cur)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut cur).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let remaining = (total - cur.position()) as usize;
        if numel.checked_mul(4).is_none_or(|n| n > remaining) {
            return Err(Error::Format(format!("record {name} claims {numel} values past end of file")));
        }
        let mut raw = vec![0u8; numel * 4];
        cur.read_exact(&mut raw).map_err(|e| truncated(e, "values"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        records.push(TensorRecord { name, tensor: Tensor::new(shape, data)? });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let rec = TensorRecord { name: "ab".into(), tensor: Tensor::new([1, 2], vec![1.0, -2.5]).unwrap() };
        let mut buf = Vec::new();
        write_records(&mut buf, &[rec]).unwrap();
        let mut expect = b"S2E1".to_vec();
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(b"ab");
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(read_records(&b"S2E0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        let rec = TensorRecord { name: "x".into(), tensor: Tensor::zeros([3]) };
        write_records(&mut buf, &[rec]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_records(&buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(proptest::num::f32::ANY, 0..40),
            name in "[a-z.]{0,12}",
        ) {
            let n = values.len();
            let rec = TensorRecord { name, tensor: Tensor::new([n], values).unwrap() };
            let mut buf = Vec::new();
            write_records(&mut buf, std::slice::from_ref(&rec)).unwrap();
            let back = read_records(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].name, &rec.name);
            let a: Vec<u32> = back[0].tensor.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = rec.tensor.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
