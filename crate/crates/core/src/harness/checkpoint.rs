//! Binary checkpoints: named, shape-annotated f64 arrays plus metadata.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BACKPT\0\0" | version u32 | fingerprint [u8; 32] | kind str | update u64
//! metadata: count u32, then (key str, value str) sorted by key
//! arrays:   count u32, then (name str, rows u64, cols u64, rows*cols f64)
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"BACKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_MAP: &str = "beam-map";
pub const KIND_AGENT: &str = "agent";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: [u8; 32],
    pub kind: String,
    pub update: u64,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: &str, fingerprint: [u8; 32], update: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            fingerprint,
            kind: kind.to_string(),
            update,
            metadata: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("metadata {key:?} is malformed")))
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every array of `store` under `prefix/`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, t) in store.iter() {
            self.arrays.push((format!("{prefix}/{name}"), t.clone()));
        }
    }

    /// Rebuilds the arrays under `prefix/`, in stored order.
    pub fn store(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let lead = format!("{prefix}/");
        for (name, t) in &self.arrays {
            if let Some(rest) = name.strip_prefix(&lead) {
                store.add(rest, t.clone())?;
            }
        }
        if store.is_empty() {
            return Err(Error::Checkpoint(format!("no arrays under {prefix:?}")));
        }
        Ok(store)
    }

    /// Stores the optimizer moments of `params` under `prefix.m/` and `prefix.v/`.
    pub fn push_adam(&mut self, prefix: &str, adam: &Adam, params: &ParamStore) {
        self.set_meta(&format!("{prefix}.t"), adam.t);
        self.set_meta(&format!("{prefix}.lr"), adam.config.lr);
        for ((_, name, _), (m, v)) in params.iter().zip(adam.m.iter().zip(&adam.v)) {
            self.arrays.push((format!("{prefix}.m/{name}"), m.clone()));
            self.arrays.push((format!("{prefix}.v/{name}"), v.clone()));
        }
    }

    pub fn adam(&self, prefix: &str, params: &ParamStore) -> Result<Adam> {
        let lr = self.meta_parse(&format!("{prefix}.lr"))?;
        let mut adam = Adam::new(params, AdamConfig { lr, ..AdamConfig::default() });
        adam.t = self.meta_parse(&format!("{prefix}.t"))?;
        for (i, (_, name, t)) in params.iter().enumerate() {
            for (slot, tag) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let key = format!("{prefix}.{tag}/{name}");
                let src = self.array(&key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                if src.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!("{key} has shape {:?}", src.shape())));
                }
                *slot = src.clone();
            }
        }
        Ok(adam)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.fingerprint);
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&self.update.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let kind = r.string()?;
        let update = r.u64()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("array {name:?} overruns the file")))?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            arrays.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { version, fingerprint, kind, update, metadata, arrays })
    }

    /// Writes through a temporary sibling and a rename, so a crash never
    /// leaves a torn file under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
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
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(KIND_AGENT, [7; 32], 42);
        c.set_meta("n_rx", 4);
        c.set_meta("a", "b=c");
        c.arrays.push(("w".into(), Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()));
        c.arrays.push(("empty".into(), Tensor::zeros(0, 3)));
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.array("w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut future = bytes;
        future[8] = 9;
        assert!(Checkpoint::from_bytes(&future).is_err());
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        sample().save(&p1).unwrap();
        Checkpoint::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(
            vals in proptest::collection::vec(any::<f64>(), 0..40),
            update in any::<u64>(),
            key in "[a-z.]{1,12}",
        ) {
            let mut c = Checkpoint::new(KIND_MAP, [1; 32], update);
            c.set_meta(&key, "x");
            c.arrays.push(("p".into(), Tensor::from_vec(1, vals.len(), vals.clone()).unwrap()));
            let bytes = c.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back.update, update);
        }
    }
}
