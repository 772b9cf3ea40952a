//! Flat binary checkpoint: magic tag, model kind, scalar hyperparameters,
//! then named row-major tensors. All integers and floats little-endian.
//!
//! ```text
//! b"BKRCKPT1"
//! u32 len, kind bytes
//! u32 count, { u32 len, name bytes, f64 value }*
//! u32 count, { u32 len, name bytes, u8 dtype (0=f64, 1=u64), u32 rank, u64 dim*, data }*
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const MAGIC: &[u8; 8] = b"BKRCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub hparams: BTreeMap<String, f64>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn hparam(&mut self, name: &str, v: f64) -> &mut Self {
        self.hparams.insert(name.to_string(), v);
        self
    }

    pub fn get_hparam(&self, name: &str) -> Result<f64> {
        self.hparams
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing hyperparameter {name}")))
    }

    pub fn put_mat(&mut self, name: &str, m: &Mat) {
        self.tensors.insert(
            name.to_string(),
            Tensor {
                shape: vec![m.rows, m.cols],
                data: TensorData::F64(m.data.clone()),
            },
        );
    }

    pub fn put_vec(&mut self, name: &str, v: &[f64]) {
        self.tensors.insert(
            name.to_string(),
            Tensor {
                shape: vec![v.len()],
                data: TensorData::F64(v.to_vec()),
            },
        );
    }

    pub fn put_indices(&mut self, name: &str, v: &[usize]) {
        self.tensors.insert(
            name.to_string(),
            Tensor {
                shape: vec![v.len()],
                data: TensorData::U64(v.iter().map(|&x| x as u64).collect()),
            },
        );
    }

    /// Ragged lists stored as `<name>.offsets` and `<name>.values`.
    pub fn put_lists(&mut self, name: &str, lists: &[Vec<usize>]) {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut values = Vec::new();
        for l in lists {
            values.extend_from_slice(l);
            offsets.push(values.len());
        }
        self.put_indices(&format!("{name}.offsets"), &offsets);
        self.put_indices(&format!("{name}.values"), &values);
    }

    /// Ragged weighted lists: `<name>.offsets`, `<name>.values`, `<name>.weights`.
    pub fn put_weighted_lists(&mut self, name: &str, lists: &[Vec<(usize, f64)>]) {
        let idx: Vec<Vec<usize>> = lists
            .iter()
            .map(|l| l.iter().map(|x| x.0).collect())
            .collect();
        self.put_lists(name, &idx);
        let w: Vec<f64> = lists.iter().flat_map(|l| l.iter().map(|x| x.1)).collect();
        self.put_vec(&format!("{name}.weights"), &w);
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn get_mat(&self, name: &str) -> Result<Mat> {
        let t = self.tensor(name)?;
        match (&t.data, t.shape.as_slice()) {
            (TensorData::F64(d), [r, c]) => Ok(Mat::from_vec(*r, *c, d.clone())),
            _ => Err(Error::Checkpoint(format!("{name} is not an f64 matrix"))),
        }
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        match &self.tensor(name)?.data {
            TensorData::F64(d) => Ok(d.clone()),
            _ => Err(Error::Checkpoint(format!("{name} is not f64"))),
        }
    }

    pub fn get_indices(&self, name: &str) -> Result<Vec<usize>> {
        match &self.tensor(name)?.data {
            TensorData::U64(d) => Ok(d.iter().map(|&x| x as usize).collect()),
            _ => Err(Error::Checkpoint(format!("{name} is not u64"))),
        }
    }

    pub fn get_lists(&self, name: &str) -> Result<Vec<Vec<usize>>> {
        let offsets = self.get_indices(&format!("{name}.offsets"))?;
        let values = self.get_indices(&format!("{name}.values"))?;
        if offsets.last().copied().unwrap_or(0) != values.len()
            || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Checkpoint(format!("{name}: inconsistent offsets")));
        }
        Ok(offsets
            .windows(2)
            .map(|w| values[w[0]..w[1]].to_vec())
            .collect())
    }

    pub fn get_weighted_lists(&self, name: &str) -> Result<Vec<Vec<(usize, f64)>>> {
        let lists = self.get_lists(name)?;
        let w = self.get_vec(&format!("{name}.weights"))?;
        let mut it = w.into_iter();
        lists
            .into_iter()
            .map(|l| {
                l.into_iter()
                    .map(|i| {
                        it.next()
                            .map(|x| (i, x))
                            .ok_or_else(|| Error::Checkpoint(format!("{name}: short weights")))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.hparams.len() as u32).to_le_bytes());
        for (k, v) in &self.hparams {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (k, t) in &self.tensors {
            put_str(&mut out, k);
            out.push(match t.data {
                TensorData::F64(_) => 0,
                TensorData::U64(_) => 1,
            });
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F64(d) => d
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U64(d) => d
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic tag".into()));
        }
        let kind = r.string()?;
        let mut hparams = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            hparams.insert(k, f64::from_le_bytes(r.array()?));
        }
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.array().map(|b| u64::from_le_bytes(b) as usize))
                .collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(Error::Checkpoint(format!("{name}: truncated data")));
            }
            let data = match dtype {
                0 => TensorData::F64(
                    (0..n)
                        .map(|_| r.array().map(f64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                1 => TensorData::U64(
                    (0..n)
                        .map(|_| r.array().map(u64::from_le_bytes))
                        .collect::<Result<_>>()?,
                ),
                d => return Err(Error::Checkpoint(format!("{name}: unknown dtype {d}"))),
            };
            tensors.insert(name, Tensor { shape, data });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            hparams,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("sized slice"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-UTF-8 name".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(
            vals in proptest::collection::vec(-1e6f64..1e6, 0..30),
            lists in proptest::collection::vec(proptest::collection::vec(0usize..100, 0..5), 0..6),
            h in -10.0f64..10.0,
        ) {
            let mut c = Checkpoint::new("als");
            c.hparam("reg", h);
            c.put_vec("v", &vals);
            c.put_lists("l", &lists);
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.get_lists("l").unwrap(), lists);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::new("x").to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
