//! Checkpoint files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SFMK1\n"
//! manifest length, manifest bytes (key = value text)
//! tensor count
//! per tensor: name length, name bytes, rank, extents, f32 values
//! ```
//!
//! Batch-norm running statistics are stored as `<layer>.running_mean` and
//! `<layer>.running_var`.

use std::io::{Read, Write};
use std::path::Path;

use super::{Arch, DepthNet, EgoNet, NetConfig, ParamSet, RunningStats};
use crate::error::{Error, Result};
use crate::ndiff::Array;
use crate::pipeline::config::KeyValues;

pub const MAGIC: &[u8; 6] = b"SFMK1\n";

const MAX_NAME: usize = 4096;
const MAX_RANK: usize = 8;

fn write_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialise a manifest and named tensors.
pub fn encode(manifest: &KeyValues, tensors: &[(String, Array)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let text = manifest.to_text();
    write_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    write_u32(&mut out, tensors.len())?;
    for (name, a) in tensors {
        write_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        write_u32(&mut out, a.ndim())?;
        for &d in a.shape() {
            write_u32(&mut out, d)?;
        }
        for &v in a.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<(KeyValues, Vec<(String, Array)>)> {
    let mut r = Reader { buf: bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let n = r.u32()?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let manifest = KeyValues::parse(text)?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()?;
        if len > MAX_NAME {
            return Err(Error::Checkpoint(format!("tensor name of {len} bytes")));
        }
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= r.buf.len()))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: shape {shape:?} exceeds file")))?;
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push((name, Array::from_vec(&shape, data)?));
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    Ok((manifest, tensors))
}

pub fn save(path: &Path, manifest: &KeyValues, tensors: &[(String, Array)]) -> Result<()> {
    let bytes = encode(manifest, tensors)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(KeyValues, Vec<(String, Array)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Parameters and running statistics as named tensors.
pub fn param_tensors(ps: &ParamSet) -> Vec<(String, Array)> {
    let mut out: Vec<(String, Array)> = ps.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
    for (name, rs) in ps.stats() {
        out.push((format!("{name}.running_mean"), rs.mean.clone()));
        out.push((format!("{name}.running_var"), rs.var.clone()));
    }
    out
}

/// Overwrite every parameter and statistic of `ps` from `tensors`. Every
/// entry of `ps` must be present with a matching shape.
pub fn restore(ps: &mut ParamSet, tensors: &[(String, Array)]) -> Result<()> {
    let find = |name: &str| -> Result<&Array> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    for p in ps.params_mut() {
        let a = find(&p.name)?;
        if a.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: stored {:?}, expected {:?}",
                p.name,
                a.shape(),
                p.value.shape()
            )));
        }
        p.value = a.clone();
    }
    let names: Vec<String> = ps.stats().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let mean = find(&format!("{name}.running_mean"))?.clone();
        let var = find(&format!("{name}.running_var"))?.clone();
        ps.set_running_stats(&name, RunningStats { mean, var })
            .map_err(|_| Error::Checkpoint(format!("{name}: running statistics shape")))?;
    }
    Ok(())
}

/// A trained depth/ego pair plus run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub depth: DepthNet,
    pub ego: EgoNet,
    pub learn_intrinsics: bool,
    /// Extra manifest entries (training config, epoch, ...).
    pub extra: KeyValues,
}

impl ModelBundle {
    pub fn manifest(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("format", "sfmk-model");
        kv.set("depth_arch", self.depth.arch);
        kv.set("ego_arch", self.ego.arch);
        kv.set("learn_intrinsics", self.learn_intrinsics);
        self.depth.cfg.to_kv(&mut kv, "net.");
        for (k, v) in self.extra.entries() {
            if kv.get(k).is_none() {
                kv.set(k.clone(), v);
            }
        }
        kv
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = param_tensors(&self.depth.params);
        tensors.extend(param_tensors(&self.ego.params));
        save(path, &self.manifest(), &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (kv, tensors) = load(path)?;
        let depth_arch: Arch = kv.require::<String>("depth_arch")?.parse()?;
        let ego_arch: Arch = kv.require::<String>("ego_arch")?.parse()?;
        let learn_intrinsics = kv.get_parsed("learn_intrinsics")?.unwrap_or(false);
        let cfg = NetConfig::desk().from_kv(&kv, "net.")?;
        let mut depth = DepthNet::new(depth_arch, cfg.clone(), 0)?;
        let mut ego = EgoNet::new(ego_arch, cfg, 0)?;
        restore(&mut depth.params, &tensors)?;
        restore(&mut ego.params, &tensors)?;
        let mut extra = KeyValues::default();
        for (k, v) in kv.entries() {
            let known = ["format", "depth_arch", "ego_arch", "learn_intrinsics"].contains(&k.as_str())
                || k.starts_with("net.");
            if !known {
                extra.set(k.clone(), v);
            }
        }
        Ok(Self { depth, ego, learn_intrinsics, extra })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let mut kv = KeyValues::default();
        kv.set("a", 1);
        let t = vec![("w".to_string(), Array::from_vec(&[2, 1], vec![0.5, -2.0]).unwrap())];
        let (kv2, t2) = decode(&encode(&kv, &t).unwrap()).unwrap();
        assert_eq!(kv2, kv);
        assert_eq!(t2, t);
    }

    #[test]
    fn corrupt_input_is_an_error() {
        assert!(decode(b"NOPE").is_err());
        let bytes = encode(&KeyValues::default(), &[("x".into(), Array::zeros(&[3]))]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 2]).is_err());
    }
}
