use crate::{NnError, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

const MAGIC: &[u8; 4] = b"LDNW";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Little-endian binary archive: magic, count, then per tensor its name,
    /// rank, dims and raw `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.numel() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.values) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Overwrites every parameter with the archived values. Names and shapes
    /// must match the store exactly, in order.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Archive("bad magic".into()));
        }
        let count = r.u32()? as usize;
        if count != self.values.len() {
            return Err(NnError::Archive(format!(
                "archive holds {count} tensors, model expects {}",
                self.values.len()
            )));
        }
        for i in 0..count {
            let name_len = r.u32()? as usize;
            let name =
                std::str::from_utf8(r.take(name_len)?).map_err(|_| NnError::Archive("non-utf8 tensor name".into()))?;
            if name != self.names[i] {
                return Err(NnError::Archive(format!(
                    "tensor {i}: archive has `{name}`, model expects `{}`",
                    self.names[i]
                )));
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            if shape != self.values[i].shape() {
                return Err(NnError::Archive(format!(
                    "tensor `{name}`: archive shape {shape:?}, model shape {:?}",
                    self.values[i].shape()
                )));
            }
            let dst = self.values[i].data_mut();
            for v in dst.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(NnError::Archive("trailing bytes after last tensor".into()));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NnError::Archive("unexpected end of archive".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, -7.25]).unwrap(),
        );
        s.add("a.bias", Tensor::full(&[2], 0.125));
        s
    }

    #[test]
    fn archive_round_trip_is_bit_exact() {
        let src = store();
        let mut dst = store();
        for id in dst.clone().ids() {
            dst.get_mut(id).data_mut().fill(9.0);
        }
        dst.load_bytes(&src.to_bytes()).unwrap();
        assert_eq!(src, dst);
    }

    #[test]
    fn rejects_mismatched_layout() {
        let bytes = store().to_bytes();
        let mut other = ParamStore::new();
        other.add("a.weight", Tensor::zeros(&[3, 2]));
        other.add("a.bias", Tensor::zeros(&[2]));
        assert!(other.load_bytes(&bytes).is_err());
        assert!(store().load_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
