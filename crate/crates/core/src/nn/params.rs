//! Named parameter storage and the `LPCK` checkpoint container.

use std::collections::HashMap;

use super::graph::Matrix;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn index_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn value(&self, idx: usize) -> &Matrix {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for &d in &r.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<Record>, String> {
    struct Cursor<'a>(&'a [u8]);
    impl Cursor<'_> {
        fn take(&mut self, n: usize) -> Result<&[u8], String> {
            if self.0.len() < n {
                return Err("checkpoint is truncated".into());
            }
            let (head, tail) = self.0.split_at(n);
            self.0 = tail;
            Ok(head)
        }
        fn u32(&mut self) -> Result<usize, String> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
        }
    }
    let mut cur = Cursor(bytes);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic, expected \"LPCK\"".into());
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let mut records = Vec::new();
    while !cur.0.is_empty() {
        let len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| "record name is not UTF-8".to_string())?
            .to_string();
        let rank = cur.u32()?;
        if rank > 8 {
            return Err(format!("record {name}: implausible rank {rank}"));
        }
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("record {name}: dimensions overflow"))?;
        let raw = cur.take(count.checked_mul(4).ok_or("record too large")?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok(records)
}
