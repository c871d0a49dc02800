//! Binary checkpoint container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "IIPR" | version u32 | array count u32 |
//!   per array: name_len u16 | name utf-8 | dtype u8 (0=f32, 1=f64) | rank u8 |
//!              dims u32 × rank | row-major data
//! ```

use super::net::{Activation, DenseNet, Layer};
use super::real::{Dtype, Real};
use crate::error::{Error, Result};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"IIPR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<u32>, data: ArrayData) {
        self.arrays.push(NamedArray {
            name: name.into(),
            dims,
            data,
        });
    }

    pub fn push_f64(&mut self, name: impl Into<String>, values: Vec<f64>) {
        let dims = vec![values.len() as u32];
        self.push(name, dims, ArrayData::F64(values));
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            let name = a.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            let tag = match a.data {
                ArrayData::F32(_) => Dtype::F32,
                ArrayData::F64(_) => Dtype::F64,
            };
            out.push(tag as u8);
            out.push(a.dims.len() as u8);
            for d in &a.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &a.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("array name is not utf-8".into()))?
                .to_string();
            let tag = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| Error::Checkpoint("dims overflow".into()))?;
            let data = match tag {
                0 => {
                    let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size".into()))?)?;
                    ArrayData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                1 => {
                    let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size".into()))?)?;
                    ArrayData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                }
                t => return Err(Error::Checkpoint(format!("unknown dtype tag {t}"))),
            };
            arrays.push(NamedArray { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Stores a network as `{section}.{i}.weight`, `{section}.{i}.bias` and a
    /// `{section}.activations` tag array.
    pub fn push_net<T: Real>(&mut self, section: &str, net: &DenseNet<T>) {
        let wrap = |v: &[T]| match T::DTYPE {
            Dtype::F32 => ArrayData::F32(v.iter().map(|x| x.as_f64() as f32).collect()),
            Dtype::F64 => ArrayData::F64(v.iter().map(|x| x.as_f64()).collect()),
        };
        for (i, l) in net.layers().iter().enumerate() {
            self.push(
                format!("{section}.{i}.weight"),
                vec![l.outputs as u32, l.inputs as u32],
                wrap(&l.weight),
            );
            self.push(format!("{section}.{i}.bias"), vec![l.outputs as u32], wrap(&l.bias));
        }
        let tags: Vec<T> = net
            .layers()
            .iter()
            .map(|l| T::of_f64(l.activation.tag() as f64))
            .collect();
        self.push(
            format!("{section}.activations"),
            vec![tags.len() as u32],
            wrap(&tags),
        );
    }

    pub fn read_net<T: Real>(&self, section: &str) -> Result<DenseNet<T>> {
        let unwrap = |a: &NamedArray| -> Result<Vec<T>> {
            match (&a.data, T::DTYPE) {
                (ArrayData::F32(v), Dtype::F32) => Ok(v.iter().map(|&x| T::of_f64(x as f64)).collect()),
                (ArrayData::F64(v), Dtype::F64) => Ok(v.iter().map(|&x| T::of_f64(x)).collect()),
                _ => Err(Error::Checkpoint(format!("{}: dtype mismatch", a.name))),
            }
        };
        let tags = unwrap(self.require(&format!("{section}.activations"))?)?;
        let mut layers = Vec::with_capacity(tags.len());
        for (i, tag) in tags.iter().enumerate() {
            let activation = Activation::from_tag(tag.as_f64() as u8)
                .ok_or_else(|| Error::Checkpoint(format!("{section}: bad activation tag")))?;
            let w = self.require(&format!("{section}.{i}.weight"))?;
            let b = self.require(&format!("{section}.{i}.bias"))?;
            if w.dims.len() != 2 {
                return Err(Error::Checkpoint(format!("{}: expected rank 2", w.name)));
            }
            layers.push(Layer::new(
                unwrap(w)?,
                unwrap(b)?,
                w.dims[1] as usize,
                activation,
            )?);
        }
        DenseNet::new(layers)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new();
        ck.push("ab", vec![2], ArrayData::F32(vec![1.0, -2.0]));
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[0..4], b"IIPR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &2u16.to_le_bytes());
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(bytes[16], 0);
        assert_eq!(bytes[17], 1);
        assert_eq!(&bytes[18..22], &2u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn net_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::<f32>::init(&[7, 9, 3], Activation::Relu, &mut rng);
        let mut ck = Checkpoint::new();
        ck.push_net("q_online", &net);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let restored: DenseNet<f32> = back.read_net("q_online").unwrap();
        assert_eq!(restored, net);
        assert!(back.read_net::<f64>("q_online").is_err());
    }

    #[test]
    fn truncated_and_corrupt_inputs_rejected() {
        let mut ck = Checkpoint::new();
        ck.push_f64("x", vec![1.0, 2.0, 3.0]);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(
            arrays in prop::collection::vec(
                ("[a-z_.]{0,12}", prop::collection::vec(any::<u32>(), 0..20), any::<bool>()),
                0..5,
            )
        ) {
            let mut ck = Checkpoint::new();
            for (name, raw, wide) in arrays {
                let data = if wide {
                    ArrayData::F64(raw.iter().map(|&b| f64::from_bits((b as u64) << 20 | b as u64)).collect())
                } else {
                    ArrayData::F32(raw.iter().map(|&b| f32::from_bits(b)).collect())
                };
                ck.push(name, vec![raw.len() as u32], data);
            }
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
