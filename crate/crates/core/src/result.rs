//! Mining output shared by every strategy, plus its JSON and binary forms.
//!
//! Negative sets are not stored: they are the complement of the positive and
//! ambiguous sets within the candidate range and are rebuilt on demand.
//!
//! Binary layout (little-endian), framed like the feature container:
//!
//! ```text
//! magic "PPAPMINE" | u32 version | u64 candidates | u64 anchors | u8 flags
//! u32 len + strategy JSON
//! per anchor: u32 anchor | u32 |P| | u32 |A| | P indices | A indices
//!             [diagnostics: f64 phi, psi, proxy_norm | u32 D | D f64 proxy
//!              | u32 steps | per step: f64 phi, psi, psi_unclamped, shift | u64 positives]
//! [row map: u64 len | u32 entries]
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::baselines::{KmeansConfig, KnnConfig};
use crate::error::{Error, Result};
use crate::mining::{complement, MiningConfig, StepRecord};

pub const RESULT_MAGIC: &[u8; 8] = b"PPAPMINE";
const RESULT_VERSION: u32 = 1;
const FLAG_DIAGNOSTICS: u8 = 0b01;
const FLAG_ROW_MAP: u8 = 0b10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum StrategyConfig {
    Ppap(MiningConfig),
    Knn(KnnConfig),
    Kmeans(KmeansConfig),
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Ppap(_) => "ppap",
            StrategyConfig::Knn(_) => "knn",
            StrategyConfig::Kmeans(_) => "kmeans",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorDiagnostics {
    pub proxy: Vec<f64>,
    pub phi: f64,
    pub psi: f64,
    pub proxy_norm: f64,
    pub trajectory: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSets {
    pub anchor: u32,
    pub positives: Vec<u32>,
    pub ambiguous: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<AnchorDiagnostics>,
}

impl AnchorSets {
    pub fn negatives(&self, candidates: usize) -> Vec<u32> {
        complement(candidates, &self.positives, &self.ambiguous)
    }

    pub fn negative_count(&self, candidates: usize) -> usize {
        candidates - self.positives.len() - self.ambiguous.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    /// Size of the candidate set the anchors were mined against.
    pub candidates: usize,
    pub config: StrategyConfig,
    pub anchors: Vec<AnchorSets>,
    /// When mining ran on a subsample: original row of each candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_map: Option<Vec<u32>>,
}

impl MiningResult {
    pub fn new(candidates: usize, config: StrategyConfig, anchors: Vec<AnchorSets>) -> Self {
        Self {
            candidates,
            config,
            anchors,
            row_map: None,
        }
    }

    pub fn find(&self, anchor: usize) -> Option<&AnchorSets> {
        // Anchors are usually mined in row order.
        if let Some(s) = self.anchors.get(anchor) {
            if s.anchor as usize == anchor {
                return Some(s);
            }
        }
        self.anchors.iter().find(|s| s.anchor as usize == anchor)
    }

    /// Checks that indices are sorted, in range and that P and A are disjoint.
    pub fn validate(&self) -> Result<()> {
        let n = self.candidates as u32;
        for s in &self.anchors {
            let bad = |what: &str| {
                Err(Error::DimensionMismatch(format!(
                    "anchor {}: {what}",
                    s.anchor
                )))
            };
            if s.anchor >= n {
                return bad("anchor index out of range");
            }
            for set in [&s.positives, &s.ambiguous] {
                if set.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("index set not strictly increasing");
                }
                if set.last().is_some_and(|&x| x >= n) {
                    return bad("index out of range");
                }
            }
            let mut a = s.ambiguous.iter().peekable();
            for p in &s.positives {
                while a.next_if(|&x| x < p).is_some() {}
                if a.peek() == Some(&p) {
                    return bad("positive and ambiguous sets overlap");
                }
            }
        }
        if let Some(map) = &self.row_map {
            if map.len() != self.candidates {
                return Err(Error::DimensionMismatch(format!(
                    "row map has {} entries for {} candidates",
                    map.len(),
                    self.candidates
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&JsonView::from(self))
            .map_err(|e| Error::InvalidConfig(format!("json encode: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let view: JsonView = serde_json::from_str(text)
            .map_err(|e| Error::MalformedHeader(format!("mining result json: {e}")))?;
        let r = view.into_result();
        r.validate()?;
        Ok(r)
    }

    pub fn encode_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_binary(self, &mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn decode_binary(bytes: &[u8]) -> Result<Self> {
        let r = read_binary(&mut Cursor::new(bytes)).map_err(|e| match e {
            Error::IoFailure(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::MalformedHeader("mining result truncated".into())
            }
            other => other,
        })?;
        r.validate()?;
        Ok(r)
    }

    /// Writes JSON when the extension is `.json`, the binary form otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            fs::write(path, self.to_json()?)?;
        } else {
            fs::write(path, self.encode_binary())?;
        }
        Ok(())
    }

    /// Detects the format from the leading bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(RESULT_MAGIC) {
            Self::decode_binary(&bytes)
        } else {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::MalformedHeader("neither binary nor utf-8 json".into()))?;
            Self::from_json(text)
        }
    }
}

/// On-disk JSON shape: adds per-anchor negative counts, which are derived.
#[derive(Serialize, Deserialize)]
struct JsonView {
    candidates: usize,
    config: StrategyConfig,
    anchors: Vec<JsonAnchor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_map: Option<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct JsonAnchor {
    anchor: u32,
    positives: Vec<u32>,
    ambiguous: Vec<u32>,
    negative_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<AnchorDiagnostics>,
}

impl From<&MiningResult> for JsonView {
    fn from(r: &MiningResult) -> Self {
        Self {
            candidates: r.candidates,
            config: r.config.clone(),
            anchors: r
                .anchors
                .iter()
                .map(|s| JsonAnchor {
                    anchor: s.anchor,
                    positives: s.positives.clone(),
                    ambiguous: s.ambiguous.clone(),
                    negative_count: s.negative_count(r.candidates),
                    diagnostics: s.diagnostics.clone(),
                })
                .collect(),
            row_map: r.row_map.clone(),
        }
    }
}

impl JsonView {
    fn into_result(self) -> MiningResult {
        MiningResult {
            candidates: self.candidates,
            config: self.config,
            anchors: self
                .anchors
                .into_iter()
                .map(|a| AnchorSets {
                    anchor: a.anchor,
                    positives: a.positives,
                    ambiguous: a.ambiguous,
                    diagnostics: a.diagnostics,
                })
                .collect(),
            row_map: self.row_map,
        }
    }
}

fn write_u32_list(out: &mut Vec<u8>, xs: &[u32]) -> std::io::Result<()> {
    for &x in xs {
        out.write_u32::<LittleEndian>(x)?;
    }
    Ok(())
}

fn write_binary(r: &MiningResult, out: &mut Vec<u8>) -> std::io::Result<()> {
    let has_diag = !r.anchors.is_empty() && r.anchors.iter().all(|s| s.diagnostics.is_some());
    let mut flags = 0u8;
    if has_diag {
        flags |= FLAG_DIAGNOSTICS;
    }
    if r.row_map.is_some() {
        flags |= FLAG_ROW_MAP;
    }
    out.write_all(RESULT_MAGIC)?;
    out.write_u32::<LittleEndian>(RESULT_VERSION)?;
    out.write_u64::<LittleEndian>(r.candidates as u64)?;
    out.write_u64::<LittleEndian>(r.anchors.len() as u64)?;
    out.write_u8(flags)?;
    let cfg = serde_json::to_vec(&r.config).expect("strategy config serializes");
    out.write_u32::<LittleEndian>(cfg.len() as u32)?;
    out.write_all(&cfg)?;
    for s in &r.anchors {
        out.write_u32::<LittleEndian>(s.anchor)?;
        out.write_u32::<LittleEndian>(s.positives.len() as u32)?;
        out.write_u32::<LittleEndian>(s.ambiguous.len() as u32)?;
        write_u32_list(out, &s.positives)?;
        write_u32_list(out, &s.ambiguous)?;
        if has_diag {
            let d = s.diagnostics.as_ref().expect("checked above");
            out.write_f64::<LittleEndian>(d.phi)?;
            out.write_f64::<LittleEndian>(d.psi)?;
            out.write_f64::<LittleEndian>(d.proxy_norm)?;
            out.write_u32::<LittleEndian>(d.proxy.len() as u32)?;
            for &x in &d.proxy {
                out.write_f64::<LittleEndian>(x)?;
            }
            out.write_u32::<LittleEndian>(d.trajectory.len() as u32)?;
            for rec in &d.trajectory {
                out.write_f64::<LittleEndian>(rec.phi)?;
                out.write_f64::<LittleEndian>(rec.psi)?;
                out.write_f64::<LittleEndian>(rec.psi_unclamped)?;
                out.write_f64::<LittleEndian>(rec.shift)?;
                out.write_u64::<LittleEndian>(rec.positives as u64)?;
            }
        }
    }
    if let Some(map) = &r.row_map {
        out.write_u64::<LittleEndian>(map.len() as u64)?;
        write_u32_list(out, map)?;
    }
    Ok(())
}

fn read_u32_list(cur: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u32>> {
    let remaining = cur.get_ref().len() as u64 - cur.position();
    if (len as u64) * 4 > remaining {
        return Err(Error::MalformedHeader("index list exceeds file".into()));
    }
    let mut v = Vec::with_capacity(len);
    for _ in 0..len {
        v.push(cur.read_u32::<LittleEndian>()?);
    }
    Ok(v)
}

fn read_binary(cur: &mut Cursor<&[u8]>) -> Result<MiningResult> {
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != RESULT_MAGIC {
        return Err(Error::MalformedHeader("bad mining result magic".into()));
    }
    let version = cur.read_u32::<LittleEndian>()?;
    if version != RESULT_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let candidates = cur.read_u64::<LittleEndian>()? as usize;
    let count = cur.read_u64::<LittleEndian>()? as usize;
    let flags = cur.read_u8()?;
    if flags & !(FLAG_DIAGNOSTICS | FLAG_ROW_MAP) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#04x}")));
    }
    let cfg_len = cur.read_u32::<LittleEndian>()? as usize;
    let mut cfg = vec![0u8; cfg_len.min(1 << 20)];
    cur.read_exact(&mut cfg)?;
    let config: StrategyConfig = serde_json::from_slice(&cfg)
        .map_err(|e| Error::MalformedHeader(format!("strategy config: {e}")))?;

    let mut anchors = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let anchor = cur.read_u32::<LittleEndian>()?;
        let np = cur.read_u32::<LittleEndian>()? as usize;
        let na = cur.read_u32::<LittleEndian>()? as usize;
        let positives = read_u32_list(cur, np)?;
        let ambiguous = read_u32_list(cur, na)?;
        let diagnostics = if flags & FLAG_DIAGNOSTICS != 0 {
            let phi = cur.read_f64::<LittleEndian>()?;
            let psi = cur.read_f64::<LittleEndian>()?;
            let proxy_norm = cur.read_f64::<LittleEndian>()?;
            let dim = cur.read_u32::<LittleEndian>()? as usize;
            let mut proxy = Vec::with_capacity(dim.min(1 << 16));
            for _ in 0..dim {
                proxy.push(cur.read_f64::<LittleEndian>()?);
            }
            let steps = cur.read_u32::<LittleEndian>()? as usize;
            let mut trajectory = Vec::with_capacity(steps.min(1 << 16));
            for _ in 0..steps {
                trajectory.push(StepRecord {
                    phi: cur.read_f64::<LittleEndian>()?,
                    psi: cur.read_f64::<LittleEndian>()?,
                    psi_unclamped: cur.read_f64::<LittleEndian>()?,
                    shift: cur.read_f64::<LittleEndian>()?,
                    positives: cur.read_u64::<LittleEndian>()? as usize,
                });
            }
            Some(AnchorDiagnostics {
                proxy,
                phi,
                psi,
                proxy_norm,
                trajectory,
            })
        } else {
            None
        };
        anchors.push(AnchorSets {
            anchor,
            positives,
            ambiguous,
            diagnostics,
        });
    }
    let row_map = if flags & FLAG_ROW_MAP != 0 {
        let len = cur.read_u64::<LittleEndian>()? as usize;
        Some(read_u32_list(cur, len)?)
    } else {
        None
    };
    if (cur.position() as usize) != cur.get_ref().len() {
        return Err(Error::DimensionMismatch("trailing bytes after mining result".into()));
    }
    Ok(MiningResult {
        candidates,
        config,
        anchors,
        row_map,
    })
}
