//! Named collections of trainable tensors.
//!
//! On disk a [`ParamStore`] is written as
//!
//! ```text
//! "MCGPARAM" | version: u32 = 1 | count: u64
//! count × { name: u64 len + utf-8 | rank: u32 | dims: u64 × rank | data: f64 × Π dims }
//! sha256 of everything above (32 bytes)
//! ```
//!
//! All integers and floats are little-endian. Entries keep insertion order,
//! so saving the same store twice yields identical bytes.

use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MCGPARAM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces the tensor at `i`; the shape must not change.
    pub fn set(&mut self, i: usize, t: Tensor) -> Result<()> {
        if t.shape() != self.tensors[i].shape() {
            return Err(Error::dim("ParamStore::set", self.tensors[i].shape(), t.shape()));
        }
        self.tensors[i] = t;
        Ok(())
    }

    pub fn set_named(&mut self, name: &str, t: Tensor) -> Result<()> {
        let i = self.index_of(name).ok_or_else(|| Error::contract(format!("missing parameter `{name}`")))?;
        self.set(i, t)
    }

    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    /// Records every tensor as a differentiable leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Records every tensor as a constant, in store order.
    pub fn bind_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Euclidean norm of all entries taken together.
    pub fn norm2(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_abs()))
    }

    pub(crate) fn encode_into(&self, w: &mut Writer) {
        w.u64(self.len() as u64);
        for (name, t) in self.iter() {
            w.str(name);
            w.tensor(t);
        }
    }

    pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.u64()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let t = r.tensor()?;
            store.insert(name, t).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let store = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::matrix(2, 2, vec![1., -2., 3.5, 0.]).unwrap()).unwrap();
        s.insert("b", Tensor::vector(vec![0.25]).unwrap()).unwrap();
        s
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(ParamStore::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(ParamStore::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = sample();
        assert!(s.insert("w", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut s = sample();
        assert!(s.set(1, Tensor::zeros(vec![2])).is_err());
    }
}
