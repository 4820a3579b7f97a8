//! Named parameters and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian): magic `GSMP`, version `u32`, then
//! records until end of file, each `name_len: u32`, `name: [u8]` (UTF-8),
//! `rank: u32`, `dims: [u64; rank]`, `values: [f64; prod(dims)]`.

use std::collections::HashMap;
use std::io::{ErrorKind, Read, Write};

use super::shape::numel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {:?}", name)));
        }
        if values.len() != numel(shape) {
            return Err(Error::dim(format!(
                "parameter {:?}: shape {:?} needs {} values, got {}",
                name,
                shape,
                numel(shape),
                values.len()
            )));
        }
        self.params.push(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            trainable,
        });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.values.len()).sum()
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.params
            .iter()
            .map(|p| Record {
                name: p.name.clone(),
                dims: p.shape.clone(),
                values: p.values.iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect()
    }

    /// Overwrites parameter values from matching records; every parameter must be present.
    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        for p in &mut self.params {
            let r = records
                .iter()
                .find(|r| r.name == p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {:?}", p.name)))?;
            if r.dims != p.shape {
                return Err(Error::Format(format!(
                    "parameter {:?}: checkpoint shape {:?}, model shape {:?}",
                    p.name, r.dims, p.shape
                )));
            }
            p.values = r.values.iter().map(|&v| T::lit(v)).collect();
        }
        Ok(())
    }
}

/// One named tensor in a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"GSMP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, records: &[Record]) -> Result<()> {
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for r in records {
        if r.values.len() != numel(&r.dims) {
            return Err(Error::dim(format!("record {:?} has inconsistent size", r.name)));
        }
        let name = r.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(r.dims.len() as u32).to_le_bytes())?;
        for &d in &r.dims {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(r.values.len() * 8);
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Vec<Record>> {
    let mut head = [0u8; 8];
    input.read_exact(&mut head)?;
    if head[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(head[4..].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let mut out = Vec::new();
    loop {
        let mut b4 = [0u8; 4];
        match input.read_exact(&mut b4) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        input.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b8 = [0u8; 8];
            input.read_exact(&mut b8)?;
            dims.push(u64::from_le_bytes(b8) as usize);
        }
        let mut raw = vec![0u8; numel(&dims) * 8];
        input.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Record { name, dims, values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", &[2], vec![1.0, 2.0], true).unwrap();
        assert!(s.add("w", &[1], vec![0.0], true).is_err());
        assert!(s.add("b", &[3], vec![0.0], true).is_err());
        assert_eq!(s.find("w").unwrap().index(), 0);
    }

    #[test]
    fn checkpoint_roundtrip_and_layout() {
        let mut s = ParamStore::<f64>::new();
        s.add("enc.w", &[2, 3], (0..6).map(f64::from).collect(), true).unwrap();
        s.add("bn.mean", &[3], vec![0.5; 3], false).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s.to_records()).unwrap();
        assert_eq!(&bytes[..4], b"GSMP");
        // header + (4 + 5 + 4 + 16 + 48) + (4 + 7 + 4 + 8 + 24)
        assert_eq!(bytes.len(), 8 + 77 + 47);
        let recs = read_checkpoint(&mut bytes.as_slice()).unwrap();
        let mut t = s.clone();
        t.get_mut(ParamId(0)).values = vec![0.0; 6];
        t.load_records(&recs).unwrap();
        assert_eq!(t, s);
        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        assert!(read_checkpoint(&mut truncated.as_slice()).is_err());
    }
}
