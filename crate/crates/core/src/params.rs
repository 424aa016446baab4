//! Named parameter storage shared by the segmentation and fusion networks,
//! plus the binary checkpoint format.
//!
//! A checkpoint holds a text metadata block and any number of named sections,
//! each a list of `group/param -> shape + f64 values`. All integers are
//! little-endian; values are written as raw IEEE-754 bits so a round trip is
//! byte-stable.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use autograd::{Graph, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    /// `group/param`.
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn group(&self) -> &str {
        self.name.split_once('/').map_or(self.name.as_str(), |(g, _)| g)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}: data does not fit shape");
        assert!(name.contains('/'), "{name}: parameter names are group/param");
        let prev = self.index.insert(name.clone(), self.params.len());
        assert!(prev.is_none(), "{name}: duplicate parameter");
        self.params.push(Param { name, shape: shape.to_vec(), data });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    /// Group names in first-appearance order.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.iter().any(|g| g == p.group()) {
                out.push(p.group().to_string());
            }
        }
        out
    }

    pub fn group_numel(&self, group: &str) -> usize {
        self.params.iter().filter(|p| p.group() == group).map(|p| p.data.len()).sum()
    }

    /// FNV-1a over the bit patterns of every value in `group`.
    pub fn checksum(&self, group: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| p.group() == group) {
            for b in p.name.bytes().chain(p.data.iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Same layout, all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        let mut out = self.clone();
        for p in &mut out.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Creates graph leaves for every parameter. Parameters for which
    /// `track` returns false become constants.
    pub fn bind(&self, graph: &Graph, track: impl Fn(&Param) -> bool) -> Bound<'_> {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                if track(p) {
                    Tensor::leaf(graph, p.data.clone(), &p.shape, true).expect("shape checked on push")
                } else {
                    Tensor::constant(p.data.clone(), &p.shape).expect("shape checked on push")
                }
            })
            .collect();
        Bound { store: self, tensors }
    }

    /// Binds every parameter as a constant.
    pub fn constants(&self) -> Bound<'_> {
        self.bind(&Graph::new(), |_| false)
    }

    /// Registers `name.w [fan_in, fan_out]` drawn from N(0, 1/fan_in) and a zero `name.b`.
    pub fn init_linear(&mut self, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) {
        self.push(format!("{name}.w"), &[fan_in, fan_out], normal_vec(rng, fan_in * fan_out, fan_in));
        self.push(format!("{name}.b"), &[fan_out], vec![0.0; fan_out]);
    }

    pub fn init_conv(&mut self, rng: &mut impl Rng, name: &str, cin: usize, cout: usize) {
        self.push(format!("{name}.w"), &[cout, cin, 3, 3], normal_vec(rng, cout * cin * 9, cin * 9));
        self.push(format!("{name}.b"), &[cout], vec![0.0; cout]);
    }

    pub fn init_layer_norm(&mut self, name: &str, d: usize) {
        self.push(format!("{name}.g"), &[d], vec![1.0; d]);
        self.push(format!("{name}.b"), &[d], vec![0.0; d]);
    }
}

pub fn normal_vec(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Graph handles for every parameter of a store, addressable by name.
#[derive(Clone)]
pub struct Bound<'a> {
    pub store: &'a ParamStore,
    pub tensors: Vec<Tensor>,
}

impl<'a> Bound<'a> {
    pub fn t(&self, name: &str) -> &Tensor {
        let i = self.store.index_of(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.tensors[i]
    }

    /// Tensors whose parameter satisfies `pick`, with their store indices.
    pub fn select(&self, pick: impl Fn(&Param) -> bool) -> Vec<(usize, &Tensor)> {
        self.store
            .params
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .filter(|(_, (p, _))| pick(p))
            .map(|(i, (_, t))| (i, t))
            .collect()
    }

    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Bound<'a> {
        assert_eq!(tensors.len(), self.tensors.len());
        Bound { store: self.store, tensors }
    }

    /// Current values as a detached store.
    pub fn to_store(&self) -> ParamStore {
        let mut out = self.store.clone();
        for (p, t) in out.params.iter_mut().zip(&self.tensors) {
            p.data = t.to_vec();
        }
        out
    }
}

const MAGIC: &[u8; 8] = b"ADSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Free-form `key value` metadata, one pair per line.
    pub meta: Vec<(String, String)>,
    pub sections: Vec<(String, ParamStore)>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&ParamStore> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
        put_str(&mut out, &meta);
        out.extend((self.sections.len() as u32).to_le_bytes());
        for (name, store) in &self.sections {
            put_str(&mut out, name);
            out.extend((store.len() as u32).to_le_bytes());
            for p in store.params() {
                put_str(&mut out, &p.name);
                out.extend((p.shape.len() as u32).to_le_bytes());
                for &d in &p.shape {
                    out.extend((d as u64).to_le_bytes());
                }
                for v in &p.data {
                    out.extend(v.to_bits().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta = r
            .string()?
            .lines()
            .map(|l| {
                let (k, v) = l.split_once(' ').unwrap_or((l, ""));
                (k.to_string(), v.to_string())
            })
            .collect();
        let mut sections = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let mut store = ParamStore::new();
            for _ in 0..r.u32()? {
                let pname = r.string()?;
                if !pname.contains('/') || store.index_of(&pname).is_some() {
                    return Err(format!("bad parameter name {pname:?}"));
                }
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
                store.push(pname, &shape, data);
            }
            sections.push((name, store));
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after last section".into());
        }
        Ok(Checkpoint { meta, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Checkpoint::from_bytes(&bytes).map_err(|reason| Error::Checkpoint { path: path.to_path_buf(), reason })
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8 in checkpoint".to_string())
    }
}
