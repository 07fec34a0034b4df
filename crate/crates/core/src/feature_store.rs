//! Feature batches: the frozen per-patch feature matrix that mining runs on.
//!
//! Batches are stored in a fixed-header little-endian container:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "PPAPFEAT"
//!      8     4  u32 version (1)
//!     12     8  u64 n (rows)
//!     20     4  u32 D (columns)
//!     24     1  u8 float width (4 | 8)
//!     25     1  u8 flags (bit0 = normalized, bit1 = has labels)
//!     26   n*D  row-major payload of f32 or f64
//!      …    4n  optional u32 labels
//! ```

use std::fmt;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::norm;

pub const FEATURE_MAGIC: &[u8; 8] = b"PPAPFEAT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 26;
const FLAG_NORMALIZED: u8 = 0b01;
const FLAG_LABELS: u8 = 0b10;

/// Maximum deviation of a row norm from 1 for a batch flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Storage width of a batch. Arithmetic is always carried out in 64 bits;
/// a 32-bit batch holds values that are exactly representable as `f32`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn width(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_width(width: u8) -> Option<Self> {
        match width {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }

    #[inline]
    fn round(self, x: f64) -> f64 {
        match self {
            Precision::F32 => x as f32 as f64,
            Precision::F64 => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    labels: Option<Vec<u32>>,
    normalized: bool,
    precision: Precision,
}

impl FeatureBatch {
    /// Builds a 64-bit batch from a row-major buffer.
    pub fn new(data: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::DimensionMismatch(format!(
                "batch needs at least one row and one column, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not fill a {rows}x{dim} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            data,
            rows,
            dim,
            labels: None,
            normalized: false,
            precision: Precision::F64,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), dim)
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.rows
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Re-expresses the batch at the given storage width. Narrowing to 32 bits
    /// rounds every value to the nearest `f32`.
    pub fn with_precision(mut self, precision: Precision) -> Self {
        if precision != self.precision {
            for x in &mut self.data {
                *x = precision.round(*x);
            }
            self.precision = precision;
        }
        self
    }

    /// Flags the batch as normalized after checking every row norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        self.check_unit_rows()?;
        self.normalized = true;
        Ok(self)
    }

    fn check_unit_rows(&self) -> Result<()> {
        for i in 0..self.rows {
            let n = norm(self.row(i));
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has norm {n}, expected unit norm"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Copies the given rows (and their labels) into a new batch.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::DimensionMismatch(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(data, indices.len(), self.dim)?;
        out.labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        out.normalized = self.normalized;
        out.precision = self.precision;
        Ok(out)
    }
}

/// Scales every row to unit L2 norm.
pub fn normalize(batch: &FeatureBatch) -> Result<FeatureBatch> {
    let mut data = Vec::with_capacity(batch.data.len());
    for i in 0..batch.rows {
        let row = batch.row(i);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroVector(i));
        }
        data.extend(row.iter().map(|&x| batch.precision.round(x / n)));
    }
    Ok(FeatureBatch {
        data,
        normalized: true,
        ..batch.clone()
    })
}

pub fn save_batch(batch: &FeatureBatch, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_batch(batch);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<FeatureBatch> {
    let bytes = fs::read(path)?;
    decode_batch(&bytes)
}

pub fn encode_batch(batch: &FeatureBatch) -> Vec<u8> {
    let width = batch.precision.width() as usize;
    let label_bytes = batch.labels.as_ref().map_or(0, |l| 4 * l.len());
    let mut out = Vec::with_capacity(HEADER_LEN + batch.data.len() * width + label_bytes);
    let mut flags = 0u8;
    if batch.normalized {
        flags |= FLAG_NORMALIZED;
    }
    if batch.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    // Writes into a Vec cannot fail.
    out.write_all(FEATURE_MAGIC).unwrap();
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u64::<LittleEndian>(batch.rows as u64).unwrap();
    out.write_u32::<LittleEndian>(batch.dim as u32).unwrap();
    out.write_u8(batch.precision.width()).unwrap();
    out.write_u8(flags).unwrap();
    match batch.precision {
        Precision::F32 => {
            for &x in &batch.data {
                out.write_f32::<LittleEndian>(x as f32).unwrap();
            }
        }
        Precision::F64 => {
            for &x in &batch.data {
                out.write_f64::<LittleEndian>(x).unwrap();
            }
        }
    }
    if let Some(labels) = &batch.labels {
        for &l in labels {
            out.write_u32::<LittleEndian>(l).unwrap();
        }
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Result<FeatureBatch> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    let version = cur.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let rows = cur.read_u64::<LittleEndian>()?;
    let dim = cur.read_u32::<LittleEndian>()? as usize;
    let width = cur.read_u8()?;
    let flags = cur.read_u8()?;
    let precision = Precision::from_width(width)
        .ok_or_else(|| Error::MalformedHeader(format!("float width {width}")))?;
    if flags & !(FLAG_NORMALIZED | FLAG_LABELS) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#04x}")));
    }
    let rows = usize::try_from(rows)
        .map_err(|_| Error::DimensionMismatch(format!("row count {rows} too large")))?;
    if rows == 0 || dim == 0 {
        return Err(Error::DimensionMismatch(format!("empty shape {rows}x{dim}")));
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let expected = rows
        .checked_mul(dim)
        .and_then(|v| v.checked_mul(width as usize))
        .and_then(|v| v.checked_add(if has_labels { rows * 4 } else { 0 }))
        .ok_or_else(|| Error::DimensionMismatch("shape overflows".into()))?;
    let found = bytes.len() - HEADER_LEN;
    if found < expected {
        return Err(Error::TruncatedPayload { expected, found });
    }
    if found > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            found - expected
        )));
    }

    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows * dim {
        let x = match precision {
            Precision::F32 => cur.read_f32::<LittleEndian>()? as f64,
            Precision::F64 => cur.read_f64::<LittleEndian>()?,
        };
        data.push(x);
    }
    let mut batch = FeatureBatch::new(data, rows, dim)?;
    batch.precision = precision;
    if has_labels {
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            labels.push(cur.read_u32::<LittleEndian>()?);
        }
        batch.labels = Some(labels);
    }
    if flags & FLAG_NORMALIZED != 0 {
        batch = batch.assume_normalized()?;
    }
    Ok(batch)
}

/// Reads a small hand-made fixture: one feature per line, comma separated.
/// An optional header line is recognised when it does not parse as numbers;
/// if its last field is `label`, the last column holds integer labels.
pub fn load_csv(path: impl AsRef<Path>) -> Result<FeatureBatch> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<FeatureBatch> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut has_labels = false;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            has_labels = record.iter().next_back() == Some("label");
            continue;
        }
        let fields: Vec<&str> = record.iter().collect();
        let (values, label) = if has_labels {
            let (last, rest) = fields.split_last().ok_or(Error::Csv {
                line,
                msg: "empty record".into(),
            })?;
            let label = last.parse::<u32>().map_err(|e| Error::Csv {
                line,
                msg: format!("label {last:?}: {e}"),
            })?;
            (rest, Some(label))
        } else {
            (&fields[..], None)
        };
        let row = values
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Csv {
                    line,
                    msg: format!("value {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
        if let Some(l) = label {
            labels.push(l);
        }
    }
    let batch = FeatureBatch::from_rows(&rows)?;
    if has_labels {
        batch.with_labels(labels)
    } else {
        Ok(batch)
    }
}

/// A subsampling fraction `num / den`, kept exact so that the selected
/// row count does not depend on floating-point rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RatioRepr", into = "String")]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num > den {
            return Err(Error::InvalidConfig(format!(
                "ratio {num}/{den} must lie in (0, 1]"
            )));
        }
        Ok(Self { num, den })
    }

    /// `floor(self * n)`
    pub fn apply(self, n: usize) -> usize {
        ((n as u128 * self.num as u128) / self.den as u128) as usize
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> Self {
        r.to_string()
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("cannot parse ratio {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let num = a.trim().parse().map_err(|_| bad())?;
            let den = b.trim().parse().map_err(|_| bad())?;
            return Ratio::new(num, den);
        }
        // Decimal form: "0.25" -> 25/100.
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Ratio::new(num, den)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RatioRepr {
    Text(String),
    Float(f64),
}

impl TryFrom<RatioRepr> for Ratio {
    type Error = Error;

    fn try_from(r: RatioRepr) -> Result<Self> {
        match r {
            RatioRepr::Text(s) => s.parse(),
            RatioRepr::Float(x) => format!("{x}").parse(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    pub ratio: Ratio,
    pub seed: u64,
}

/// Draws `floor(ratio * n)` distinct rows uniformly at random. The returned
/// index array is sorted and maps subsample rows back to original rows.
pub fn subsample(batch: &FeatureBatch, spec: &SubsampleSpec) -> Result<(FeatureBatch, Vec<usize>)> {
    let n = batch.rows();
    let m = spec.ratio.apply(n);
    if m == 0 {
        return Err(Error::InvalidConfig(format!(
            "ratio {} keeps no rows of {n}",
            spec.ratio
        )));
    }
    let indices = sample_indices(n, m, spec.seed);
    let sub = batch.select_rows(&indices)?;
    Ok((sub, indices))
}

/// Fisher-Yates prefix draw of `m` out of `n` indices, returned sorted.
pub(crate) fn sample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m.min(n) {
        let j = rng.random_range(i as u64..n as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_batch() -> FeatureBatch {
        FeatureBatch::from_rows(&[
            [1.0, 2.0, 3.0],
            [0.5, -1.0, 0.25],
            [0.0, 0.0, 1.0],
            [-3.0, 4.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_without_labels() {
        let b = sample_batch();
        let decoded = decode_batch(&encode_batch(&b)).unwrap();
        assert_eq!(decoded.rows(), 4);
        assert_eq!(decoded.dim(), 3);
        assert!(decoded.labels().is_none());
        assert_eq!(decoded, b);
    }

    #[test]
    fn round_trip_labels_and_f32() {
        let b = normalize(&sample_batch())
            .unwrap()
            .with_precision(Precision::F32)
            .with_labels(vec![0, 3, 3, 7])
            .unwrap();
        let decoded = decode_batch(&encode_batch(&b)).unwrap();
        assert_eq!(decoded.labels(), Some(&[0, 3, 3, 7][..]));
        assert!(decoded.is_normalized());
        assert_eq!(decoded.precision(), Precision::F32);
        assert_eq!(decoded, b);
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = encode_batch(&sample_batch());
        bytes.truncate(bytes.len() - 3 * 8);
        assert!(matches!(
            decode_batch(&bytes),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = encode_batch(&sample_batch());
        let off = HEADER_LEN + 8 * 4;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            decode_batch(&bytes),
            Err(Error::NonFiniteValue { row: 1, col: 1 })
        ));
    }

    #[test]
    fn header_errors() {
        let good = encode_batch(&sample_batch());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_batch(&bad_magic), Err(Error::MalformedHeader(_))));
        let mut bad_width = good.clone();
        bad_width[24] = 2;
        assert!(matches!(decode_batch(&bad_width), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_batch(&good[..10]), Err(Error::MalformedHeader(_))));
        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(decode_batch(&trailing), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unwritable_path() {
        let err = save_batch(&sample_batch(), "/nonexistent-dir/x/y.ppf").unwrap_err();
        assert!(matches!(err, Error::IoFailure(_)));
    }

    #[test]
    fn normalize_examples() {
        let b = FeatureBatch::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = normalize(&b).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-15);
        assert!(n.is_normalized());

        let again = normalize(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-7);
        }

        let z = FeatureBatch::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(normalize(&z), Err(Error::ZeroVector(1))));
    }

    #[test]
    fn normalize_keeps_labels() {
        let b = sample_batch().with_labels(vec![1, 2, 3, 4]).unwrap();
        assert_eq!(normalize(&b).unwrap().labels(), Some(&[1, 2, 3, 4][..]));
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("1/4".parse::<Ratio>().unwrap(), Ratio::new(1, 4).unwrap());
        assert_eq!("0.25".parse::<Ratio>().unwrap().apply(16), 4);
        assert_eq!("1".parse::<Ratio>().unwrap(), Ratio::new(1, 1).unwrap());
        assert!("0".parse::<Ratio>().is_err());
        assert!("5/4".parse::<Ratio>().is_err());
        assert!("abc".parse::<Ratio>().is_err());
    }

    #[test]
    fn subsample_identity_at_full_ratio() {
        let b = sample_batch();
        let (sub, idx) = subsample(&b, &SubsampleSpec { ratio: Ratio::ONE, seed: 9 }).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert_eq!(sub, b);
    }

    #[test]
    fn subsample_quarter_is_stable() {
        let rows: Vec<[f64; 1]> = (0..16).map(|i| [i as f64 + 1.0]).collect();
        let b = FeatureBatch::from_rows(&rows).unwrap();
        let spec = SubsampleSpec {
            ratio: Ratio::new(1, 4).unwrap(),
            seed: 42,
        };
        let (sub, idx) = subsample(&b, &spec).unwrap();
        assert_eq!(idx.len(), 4);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&b, &spec).unwrap().1, idx);
        for (r, &i) in idx.iter().enumerate() {
            assert_eq!(sub.row(r), b.row(i));
        }
    }

    #[test]
    fn subsample_seeds_differ() {
        let rows: Vec<[f64; 1]> = (0..100).map(|i| [i as f64 + 1.0]).collect();
        let b = FeatureBatch::from_rows(&rows).unwrap();
        let ratio = Ratio::new(1, 4).unwrap();
        let differing = (0..100u64)
            .filter(|&s| {
                let a = subsample(&b, &SubsampleSpec { ratio, seed: 2 * s }).unwrap().1;
                let c = subsample(&b, &SubsampleSpec { ratio, seed: 2 * s + 1 }).unwrap().1;
                a != c
            })
            .count();
        assert!(differing >= 99, "only {differing} of 100 seed pairs differ");
    }

    #[test]
    fn subsample_empty_is_rejected() {
        let b = sample_batch();
        let spec = SubsampleSpec {
            ratio: Ratio::new(1, 16).unwrap(),
            seed: 0,
        };
        assert!(matches!(subsample(&b, &spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn csv_with_labels() {
        let b = parse_csv("x,y,label\n3,4,1\n1,0,0\n").unwrap();
        assert_eq!(b.rows(), 2);
        assert_eq!(b.dim(), 2);
        assert_eq!(b.labels(), Some(&[1, 0][..]));
        let plain = parse_csv("1,2\n3,4\n").unwrap();
        assert!(plain.labels().is_none());
        assert_eq!(plain.row(1), &[3.0, 4.0]);
        assert!(matches!(parse_csv("1,2\n3,x\n"), Err(Error::Csv { .. })));
    }
}
