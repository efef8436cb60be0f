//! On-disk container for one backend's traces of one model.
//!
//! Layout: 8-byte magic `AFTRACE\0`, `u32` LE format version, `u64` LE
//! manifest length, UTF-8 JSON manifest, then a blob region of
//! little-endian `f32` values. Every blob is addressed by byte offset into
//! the blob region. See `docs/trace-format.md` for the full contract.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFTRACE\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Nan,
    Crash(String),
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Nan => "nan",
            Outcome::Crash(_) => "crash",
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMeta {
    pub id: usize,
    pub kind: String,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub loss_output: f32,
    pub loss_gradient: Tensor<f32>,
}

/// Traces of one training step on one backend.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub backend_id: String,
    pub model_id: String,
    pub outcome: Outcome,
    pub precision: String,
    /// Loss kind name (`mean_squared_error`, ...), when known.
    pub loss: Option<String>,
    pub nodes: Vec<NodeMeta>,
    /// Node outputs, batch-major.
    pub fc: BTreeMap<usize, Tensor<f32>>,
    pub lc: Option<LossTrace>,
    /// Loss gradients with respect to each node's inputs (see the format
    /// document for the stacking rule).
    pub bc: BTreeMap<usize, Tensor<f32>>,
}

impl TraceBundle {
    /// A bundle for a run that produced nothing but a failure message.
    pub fn crash(backend_id: &str, model_id: &str, nodes: Vec<NodeMeta>, message: &str) -> Self {
        Self {
            backend_id: backend_id.into(),
            model_id: model_id.into(),
            outcome: Outcome::Crash(message.into()),
            precision: "float32".into(),
            loss: None,
            nodes,
            fc: BTreeMap::new(),
            lc: None,
            bc: BTreeMap::new(),
        }
    }

    /// Checks the structural invariants of the bundle.
    pub fn check(&self) -> Result<(), String> {
        let ids: Vec<usize> = self.nodes.iter().map(|n| n.id).collect();
        for (section, map) in [("fc", &self.fc), ("bc", &self.bc)] {
            for (id, t) in map {
                if !ids.contains(id) {
                    return Err(format!("{section} entry for unknown node {id}"));
                }
                if t.shape.iter().product::<usize>() != t.data.len() {
                    return Err(format!("{section} entry for node {id} has inconsistent shape"));
                }
            }
        }
        match &self.outcome {
            Outcome::Ok => {
                if self.fc.len() != ids.len() || self.bc.len() != ids.len() {
                    return Err("ok outcome needs fc and bc for every node".into());
                }
                if self.lc.is_none() {
                    return Err("ok outcome needs a loss section".into());
                }
            }
            Outcome::Crash(m) if m.is_empty() => return Err("crash outcome needs a message".into()),
            _ => {}
        }
        Ok(())
    }

    /// Equality that compares tensors by bit pattern (NaN payloads included).
    pub fn bitwise_eq(&self, other: &TraceBundle) -> bool {
        fn same(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
            a.shape == b.shape
                && a.data.len() == b.data.len()
                && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn same_map(a: &BTreeMap<usize, Tensor<f32>>, b: &BTreeMap<usize, Tensor<f32>>) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|((ia, ta), (ib, tb))| ia == ib && same(ta, tb))
        }
        let lc = match (&self.lc, &other.lc) {
            (None, None) => true,
            (Some(a), Some(b)) => {
                a.loss_output.to_bits() == b.loss_output.to_bits() && same(&a.loss_gradient, &b.loss_gradient)
            }
            _ => false,
        };
        self.backend_id == other.backend_id
            && self.model_id == other.model_id
            && self.outcome == other.outcome
            && self.precision == other.precision
            && self.loss == other.loss
            && self.nodes == other.nodes
            && lc
            && same_map(&self.fc, &other.fc)
            && same_map(&self.bc, &other.bc)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a trace file")]
    BadMagic,
    #[error("unsupported trace format version {0}")]
    Version(u32),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("blob length mismatch: {0}")]
    BlobLength(String),
    #[error("inconsistent bundle: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node: Option<usize>,
    offset: u64,
    length: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LossEntry {
    loss_output: BlobEntry,
    loss_gradient: BlobEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    backend_id: String,
    model_id: String,
    outcome: Outcome,
    precision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loss: Option<String>,
    nodes: Vec<NodeMeta>,
    fc: Vec<BlobEntry>,
    lc: Option<LossEntry>,
    bc: Vec<BlobEntry>,
}

struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn put(&mut self, node: Option<usize>, shape: &[usize], data: &[f32]) -> BlobEntry {
        let offset = self.bytes.len() as u64;
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        BlobEntry { node, offset, length: (data.len() * 4) as u64, shape: shape.to_vec() }
    }
}

/// Serializes a bundle to bytes.
pub fn encode(t: &TraceBundle) -> Result<Vec<u8>, TraceError> {
    t.check().map_err(TraceError::Inconsistent)?;
    let mut blobs = BlobWriter { bytes: Vec::new() };
    let fc = t.fc.iter().map(|(&id, x)| blobs.put(Some(id), &x.shape, &x.data)).collect();
    let lc = t.lc.as_ref().map(|l| LossEntry {
        loss_output: blobs.put(None, &[], &[l.loss_output]),
        loss_gradient: blobs.put(None, &l.loss_gradient.shape, &l.loss_gradient.data),
    });
    let bc = t.bc.iter().map(|(&id, x)| blobs.put(Some(id), &x.shape, &x.data)).collect();
    let manifest = Manifest {
        backend_id: t.backend_id.clone(),
        model_id: t.model_id.clone(),
        outcome: t.outcome.clone(),
        precision: t.precision.clone(),
        loss: t.loss.clone(),
        nodes: t.nodes.clone(),
        fc,
        lc,
        bc,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| TraceError::Manifest(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blobs.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blobs.bytes);
    Ok(out)
}

fn read_blob(region: &[u8], e: &BlobEntry, what: &str) -> Result<Tensor<f32>, TraceError> {
    let n: usize = e.shape.iter().product();
    if e.length != (n * 4) as u64 {
        return Err(TraceError::BlobLength(format!("{what}: {} bytes declared for shape {:?}", e.length, e.shape)));
    }
    let end = e.offset.checked_add(e.length).filter(|&end| end <= region.len() as u64).ok_or_else(|| {
        TraceError::BlobLength(format!(
            "{what}: blob at {}+{} exceeds {} bytes of data",
            e.offset,
            e.length,
            region.len()
        ))
    })?;
    let bytes = &region[e.offset as usize..end as usize];
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor::from_vec(e.shape.clone(), data))
}

/// Parses and validates a serialized bundle.
pub fn decode(bytes: &[u8]) -> Result<TraceBundle, TraceError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(TraceError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(TraceError::Manifest("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(TraceError::Version(version));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let mend = (HEADER_LEN as u64)
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| TraceError::Manifest(format!("manifest length {mlen} exceeds file")))? as usize;
    let m: Manifest =
        serde_json::from_slice(&bytes[HEADER_LEN..mend]).map_err(|e| TraceError::Manifest(e.to_string()))?;
    let region = &bytes[mend..];
    let mut fc = BTreeMap::new();
    for e in &m.fc {
        let id = e.node.ok_or_else(|| TraceError::Manifest("fc entry without node".into()))?;
        fc.insert(id, read_blob(region, e, &format!("fc[{id}]"))?);
    }
    let mut bc = BTreeMap::new();
    for e in &m.bc {
        let id = e.node.ok_or_else(|| TraceError::Manifest("bc entry without node".into()))?;
        bc.insert(id, read_blob(region, e, &format!("bc[{id}]"))?);
    }
    let lc = match &m.lc {
        None => None,
        Some(l) => {
            let lo = read_blob(region, &l.loss_output, "loss_output")?;
            if lo.data.len() != 1 {
                return Err(TraceError::Inconsistent("loss output must be a scalar".into()));
            }
            Some(LossTrace {
                loss_output: lo.data[0],
                loss_gradient: read_blob(region, &l.loss_gradient, "loss_gradient")?,
            })
        }
    };
    let t = TraceBundle {
        backend_id: m.backend_id,
        model_id: m.model_id,
        outcome: m.outcome,
        precision: m.precision,
        loss: m.loss,
        nodes: m.nodes,
        fc,
        lc,
        bc,
    };
    t.check().map_err(TraceError::Inconsistent)?;
    Ok(t)
}

pub fn write_trace(t: &TraceBundle, path: &Path) -> Result<(), TraceError> {
    let bytes = encode(t)?;
    let io = |e| TraceError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io)?;
        }
    }
    fs::write(path, bytes).map_err(io)
}

pub fn read_trace(path: &Path) -> Result<TraceBundle, TraceError> {
    let bytes = fs::read(path).map_err(|e| TraceError::Io { path: path.to_path_buf(), source: e })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(n: usize) -> Vec<NodeMeta> {
        (0..n)
            .map(|i| NodeMeta { id: i, kind: "Dense".into(), inputs: if i == 0 { vec![] } else { vec![i - 1] } })
            .collect()
    }

    fn ok_bundle() -> TraceBundle {
        let mut fc = BTreeMap::new();
        let mut bc = BTreeMap::new();
        for i in 0..3 {
            fc.insert(i, Tensor::from_vec(vec![2, 2], vec![i as f32, f32::NAN, f32::NEG_INFINITY, -0.0]));
            bc.insert(i, Tensor::from_vec(vec![1, 2, 2], vec![1.0, 2.0, 3.0, f32::from_bits(0x7fc0_0001)]));
        }
        TraceBundle {
            backend_id: "naive".into(),
            model_id: "m00000".into(),
            outcome: Outcome::Ok,
            precision: "float32".into(),
            loss: Some("mean_squared_error".into()),
            nodes: meta(3),
            fc,
            lc: Some(LossTrace { loss_output: 0.25, loss_gradient: Tensor::from_vec(vec![2, 2], vec![0.0; 4]) }),
            bc,
        }
    }

    #[test]
    fn round_trip_keeps_bits() {
        let t = ok_bundle();
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert!(back.bitwise_eq(&t));
    }

    #[test]
    fn crash_bundle_round_trips() {
        let t = TraceBundle::crash("reordered", "m00001", vec![], "boom");
        let back = decode(&encode(&t).unwrap()).unwrap();
        assert_eq!(back.outcome, Outcome::Crash("boom".into()));
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&ok_bundle()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(TraceError::BlobLength(_))));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(decode(&v), Err(TraceError::Version(9))));
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(decode(&m), Err(TraceError::BadMagic)));
        let mut j = bytes;
        j[HEADER_LEN] = b'[';
        assert!(matches!(decode(&j), Err(TraceError::Manifest(_))));
        let mut bad = ok_bundle();
        bad.fc.remove(&1);
        assert!(matches!(encode(&bad), Err(TraceError::Inconsistent(_))));
    }
}
