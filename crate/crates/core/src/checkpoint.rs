//! Binary checkpoint format.
//!
//! ```text
//! "EDAS" | version u32 | spec_len u32 | spec JSON
//! repeated: name_len u32 | name | rank u32 | dims u32 × rank | f32 × Π dims
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::arch::{parse_spec, serialize_spec, ArchitectureSpec};
use crate::error::{Error, Result};
use crate::network::Network;

pub const MAGIC: &[u8; 4] = b"EDAS";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &Network<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = serialize_spec(net.spec());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
        for &d in &p.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes (not an EDAS checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let spec = parse_spec(r.string("spec")?)?;

    let mut records: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    while !r.done() {
        let name = r.string("parameter name")?.to_owned();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4, &name)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, dims, values));
    }

    let num_classes = records
        .iter()
        .find(|(n, _, _)| n == "head.conv.bias")
        .map(|(_, d, _)| d[0])
        .ok_or_else(|| Error::Checkpoint("missing parameter head.conv.bias".into()))?;
    let mut net = Network::skeleton(&spec, num_classes)?;
    let mut params = net.params_mut();
    if records.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter records, found {}",
            params.len(),
            records.len()
        )));
    }
    for (p, (name, dims, values)) in params.iter_mut().zip(records) {
        if p.name != name {
            return Err(Error::Checkpoint(format!("expected parameter {}, found {name}", p.name)));
        }
        if p.dims != dims {
            return Err(Error::Checkpoint(format!(
                "{name}: dims {:?} do not match spec-derived {:?}",
                dims, p.dims
            )));
        }
        p.value.data_mut().copy_from_slice(&values);
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and insists that its embedded spec equals `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchitectureSpec) -> Result<Network<f32>> {
    let net = load_checkpoint(path)?;
    if net.spec() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds architecture `{}` but `{}` was requested",
            net.spec().name,
            expected.name
        )));
    }
    Ok(net)
}
