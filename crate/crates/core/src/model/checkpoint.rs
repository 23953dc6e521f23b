//! Binary checkpoints.
//!
//! Layout, all little-endian: the magic `HEEG1`; `u32` format version; the
//! toolkit version and the model config as `u32`-length-prefixed UTF-8 (the
//! config as JSON); a `u32` array count followed by, per array, its name,
//! `u32` rank, `u64` dims and row-major `f64` payload; a `u32` domain count
//! followed by, per domain, `u32` id, `u64` step counter and the train mean,
//! train variance, test mean and test variance as `f64`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::IxDyn;

use super::{HeegnetModel, ModelConfig};
use crate::alignment::DomainTrack;
use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::manifold::LorentzPoint;

pub const MAGIC: &[u8; 5] = b"HEEG1";
const FORMAT_VERSION: u32 = 1;

fn io(e: std::io::Error) -> Error {
    Error::Io { path: "<checkpoint stream>".into(), source: e }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if n > 1 << 24 {
        return Err(Error::Parse(format!("implausible string length {n} in checkpoint")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(io)?;
    String::from_utf8(b).map_err(|_| Error::Parse("checkpoint string is not UTF-8".into()))
}

fn arrays(m: &HeegnetModel) -> Vec<(String, Array)> {
    let mut v: Vec<(String, Array)> = m.params.named().into_iter().map(|(n, a)| (n, a.clone())).collect();
    for (name, bn) in [("bn1", &m.bn1), ("bn2", &m.bn2)] {
        v.push((format!("{name}.running_mean"), Array::from_shape_vec(IxDyn(&[bn.running_mean.len()]), bn.running_mean.clone()).unwrap()));
        v.push((format!("{name}.running_var"), Array::from_shape_vec(IxDyn(&[bn.running_var.len()]), bn.running_var.clone()).unwrap()));
    }
    v
}

pub fn write_checkpoint<W: Write>(w: &mut W, m: &HeegnetModel) -> Result<()> {
    let config = serde_json::to_string(&m.config).expect("config serializes");
    let mut body = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        put_str(w, crate::VERSION)?;
        put_str(w, &config)?;
        let arrs = arrays(m);
        w.write_u32::<LittleEndian>(arrs.len() as u32)?;
        for (name, a) in &arrs {
            put_str(w, name)?;
            w.write_u32::<LittleEndian>(a.ndim() as u32)?;
            for &d in a.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &x in a.as_standard_layout().iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.write_u32::<LittleEndian>(m.stats.tracks.len() as u32)?;
        for (&d, t) in &m.stats.tracks {
            w.write_u32::<LittleEndian>(d)?;
            w.write_u64::<LittleEndian>(t.steps)?;
            for x in t.train_mean.ambient() {
                w.write_f64::<LittleEndian>(*x)?;
            }
            w.write_f64::<LittleEndian>(t.train_var)?;
            for x in t.test_mean.ambient() {
                w.write_f64::<LittleEndian>(*x)?;
            }
            w.write_f64::<LittleEndian>(t.test_var)?;
        }
        w.flush()
    };
    body().map_err(io)
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<HeegnetModel> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint format version {version}")));
    }
    let _toolkit = get_str(r)?;
    let config: ModelConfig = serde_json::from_str(&get_str(r)?).map_err(|e| Error::Parse(format!("checkpoint config: {e}")))?;
    let mut m = HeegnetModel::new(config)?;
    let n = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..n {
        let name = get_str(r)?;
        let rank = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        if rank > 8 {
            return Err(Error::Parse(format!("array {name}: implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
        let len: usize = dims.iter().product();
        if len > 1 << 28 {
            return Err(Error::Parse(format!("array {name}: implausible size {len}")));
        }
        let mut data = vec![0f64; len];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
        loaded.insert(name, Array::from_shape_vec(IxDyn(&dims), data).unwrap());
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<Array> {
        let a = loaded.remove(name).ok_or_else(|| Error::Parse(format!("checkpoint lacks array {name}")))?;
        if a.shape() != shape {
            return Err(Error::Parse(format!("array {name} has shape {:?}, expected {shape:?}", a.shape())));
        }
        Ok(a)
    };
    for (name, dst) in m.params.named_mut() {
        let shape = dst.shape().to_vec();
        *dst = take(&name, &shape)?;
    }
    for (name, bn) in [("bn1", &mut m.bn1), ("bn2", &mut m.bn2)] {
        let c = bn.running_mean.len();
        bn.running_mean = take(&format!("{name}.running_mean"), &[c])?.into_raw_vec_and_offset().0;
        bn.running_var = take(&format!("{name}.running_var"), &[c])?.into_raw_vec_and_offset().0;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Parse(format!("checkpoint has unknown array {extra}")));
    }
    let nd = r.read_u32::<LittleEndian>().map_err(io)?;
    let dim = m.stats.dim;
    let k = m.stats.curvature;
    let point = |r: &mut R| -> Result<LorentzPoint> {
        let mut c = vec![0f64; dim + 1];
        r.read_f64_into::<LittleEndian>(&mut c).map_err(io)?;
        LorentzPoint::new(c, k)
    };
    for _ in 0..nd {
        let d = r.read_u32::<LittleEndian>().map_err(io)?;
        let steps = r.read_u64::<LittleEndian>().map_err(io)?;
        let train_mean = point(r)?;
        let train_var = r.read_f64::<LittleEndian>().map_err(io)?;
        let test_mean = point(r)?;
        let test_var = r.read_f64::<LittleEndian>().map_err(io)?;
        m.stats.tracks.insert(d, DomainTrack { train_mean, train_var, test_mean, test_var, steps });
    }
    Ok(m)
}

pub fn save_checkpoint(path: &Path, m: &HeegnetModel) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_checkpoint(&mut w, m).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<HeegnetModel> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}
