//! On-disk checkpoint container and in-memory model of a set of named tensors.
//!
//! The file layout (all integers little-endian):
//!
//! ```text
//! magic "AODE" | version u32 = 1 | tensor_count u64
//! per tensor: name_len u32 | name utf-8 | dtype u8 (0=f32, 1=f64)
//!             | rank u32 | rank x dim u64 | payload (row-major IEEE-754 LE)
//! trailer:    meta_count u64 | per entry: key_len u32, key, val_len u32, val
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AODE";
pub const FORMAT_VERSION: u32 = 1;

/// Element type of a tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub const fn element_bytes(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    pub const fn tag(self) -> u8 {
        match self {
            Self::F32 => 0,
            Self::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::F32),
            1 => Some(Self::F64),
            _ => None,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::F32 => write!(f, "f32"),
            Self::F64 => write!(f, "f64"),
        }
    }
}

/// Flat row-major payload, kept in the tensor's native precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32,
            Self::F64(_) => DType::F64,
        }
    }

    /// Element at `i` widened to f64 (exact for both dtypes).
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            Self::F32(v) => f64::from(v[i]),
            Self::F64(v) => v[i],
        }
    }

    pub fn iter_f64(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            Self::F32(v) => Box::new(v.iter().map(|&x| f64::from(x))),
            Self::F64(v) => Box::new(v.iter().copied()),
        }
    }

    /// Bit-level equality; distinguishes -0.0 from 0.0 and is total on NaNs.
    pub fn bits_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::F32(a), Self::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Self::F64(a), Self::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            Self::F32(v) => v.iter().position(|x| !x.is_finite()),
            Self::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    name: String,
    shape: Vec<u64>,
    data: TensorData,
}

impl TensorRecord {
    /// Builds a record, checking the structural invariants: non-empty name,
    /// dims all >= 1, and payload length equal to the shape product
    /// (the empty shape denotes a scalar with exactly one element).
    pub fn new(
        name: impl Into<String>,
        shape: Vec<u64>,
        data: TensorData,
    ) -> Result<Self, CheckpointError> {
        let name = name.into();
        if name.is_empty() {
            return Err(CheckpointError::EmptyTensorName);
        }
        if let Some(&dim) = shape.iter().find(|&&d| d == 0) {
            return Err(CheckpointError::ZeroDimension { name, dim });
        }
        let expected = shape.iter().product::<u64>();
        if data.len() as u64 != expected {
            return Err(CheckpointError::LengthMismatch {
                name,
                expected,
                actual: data.len() as u64,
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.name == other.name && self.shape == other.shape && self.data.bits_eq(&other.data)
    }
}

/// Ordered collection of uniquely named tensors plus free-form metadata.
///
/// The tensor iteration order is the on-disk order. Checkpoints are immutable
/// after construction apart from metadata edits, and safe to share across
/// threads for reading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: Vec<TensorRecord>,
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(tensors: Vec<TensorRecord>) -> Result<Self, CheckpointError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &tensors {
            if !seen.insert(t.name()) {
                return Err(CheckpointError::DuplicateName {
                    name: t.name().to_string(),
                });
            }
        }
        Ok(Self {
            tensors,
            metadata: BTreeMap::new(),
        })
    }

    pub fn tensors(&self) -> &[TensorRecord] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name() == name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.metadata == other.metadata
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bits_eq(b))
    }

    /// Name of the first tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.first_non_finite().is_some())
            .map(|t| t.name())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected \"AODE\", found {found:02x?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated file: {context}")]
    TruncatedFile { context: String },
    #[error("duplicate tensor name {name:?}")]
    DuplicateName { name: String },
    #[error("tensor {name:?} contains a non-finite value")]
    NonFiniteValue { name: String },
    #[error("tensor name is empty")]
    EmptyTensorName,
    #[error("tensor name is not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown dtype tag {tag} for tensor {name:?}")]
    UnknownDtype { name: String, tag: u8 },
    #[error("tensor {name:?} has a zero-sized dimension {dim}")]
    ZeroDimension { name: String, dim: u64 },
    #[error("tensor {name:?} payload length {actual} does not match shape product {expected}")]
    LengthMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("declared size {claimed} bytes for {context} exceeds remaining file size {remaining}")]
    OversizedField {
        context: String,
        claimed: u64,
        remaining: u64,
    },
    #[error("trailing {0} unread bytes after metadata block")]
    TrailingBytes(u64),
    #[error("compatibility check requires at least 2 checkpoints, got {0}")]
    TooFewCheckpoints(usize),
}

impl CheckpointError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// What the reader does when a payload holds NaN or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    /// Reject the file (default).
    #[default]
    Error,
    /// Accept the file and report offending tensor names as warnings.
    Warn,
}

/// Writes `ckpt` to `path` in the container format. Refuses checkpoints that
/// contain non-finite values: averaging a NaN would silently poison any merge
/// downstream.
pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    if let Some(name) = ckpt.first_non_finite() {
        return Err(CheckpointError::NonFiniteValue {
            name: name.to_string(),
        });
    }
    let file = File::create(path).map_err(|e| CheckpointError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, bytes: &[u8]| {
        w.write_all(bytes).map_err(|e| CheckpointError::io(path, e))
    };

    emit(&mut w, &MAGIC)?;
    emit(&mut w, &FORMAT_VERSION.to_le_bytes())?;
    emit(&mut w, &(ckpt.tensors.len() as u64).to_le_bytes())?;
    for t in &ckpt.tensors {
        emit(&mut w, &(t.name.len() as u32).to_le_bytes())?;
        emit(&mut w, t.name.as_bytes())?;
        emit(&mut w, &[t.dtype().tag()])?;
        emit(&mut w, &(t.shape.len() as u32).to_le_bytes())?;
        for &dim in &t.shape {
            emit(&mut w, &dim.to_le_bytes())?;
        }
        match &t.data {
            TensorData::F32(v) => {
                for x in v {
                    emit(&mut w, &x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    emit(&mut w, &x.to_le_bytes())?;
                }
            }
        }
    }
    emit(&mut w, &(ckpt.metadata.len() as u64).to_le_bytes())?;
    for (k, v) in &ckpt.metadata {
        emit(&mut w, &(k.len() as u32).to_le_bytes())?;
        emit(&mut w, k.as_bytes())?;
        emit(&mut w, &(v.len() as u32).to_le_bytes())?;
        emit(&mut w, v.as_bytes())?;
    }
    w.flush().map_err(|e| CheckpointError::io(path, e))
}

/// Reads a checkpoint, rejecting non-finite payloads.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint_with(path, NonFinitePolicy::Error).map(|(c, _)| c)
}

/// Reads a checkpoint with an explicit non-finite policy. Under
/// [`NonFinitePolicy::Warn`] the returned vector lists the offending tensors.
pub fn read_checkpoint_with(
    path: impl AsRef<Path>,
    policy: NonFinitePolicy,
) -> Result<(Checkpoint, Vec<String>), CheckpointError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CheckpointError::io(path, e))?;
    let remaining = file
        .metadata()
        .map_err(|e| CheckpointError::io(path, e))?
        .len();
    let mut r = Cursor {
        inner: BufReader::new(file),
        path,
        remaining,
    };
    decode(&mut r, policy)
}

/// Decodes a checkpoint from an in-memory buffer. Never panics on malformed
/// input; every failure maps to a structured [`CheckpointError`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Cursor {
        inner: bytes,
        path: Path::new("<memory>"),
        remaining: bytes.len() as u64,
    };
    decode(&mut r, NonFinitePolicy::Error).map(|(c, _)| c)
}

/// Bounded reader: every length field is validated against the bytes that are
/// actually left, so hostile counts cannot trigger huge allocations.
struct Cursor<'a, R> {
    inner: R,
    path: &'a Path,
    remaining: u64,
}

impl<R: Read> Cursor<'_, R> {
    fn take(&mut self, n: u64, context: &str) -> Result<Vec<u8>, CheckpointError> {
        if n > self.remaining {
            return Err(CheckpointError::TruncatedFile {
                context: format!(
                    "{context}: need {n} bytes, only {} left",
                    self.remaining
                ),
            });
        }
        let mut buf = vec![0u8; n as usize];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| CheckpointError::io(self.path, e))?;
        self.remaining -= n;
        Ok(buf)
    }

    fn check_claim(&self, claimed: u64, context: &str) -> Result<(), CheckpointError> {
        if claimed > self.remaining {
            return Err(CheckpointError::OversizedField {
                context: context.to_string(),
                claimed,
                remaining: self.remaining,
            });
        }
        Ok(())
    }

    fn u8(&mut self, context: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, context: &str) -> Result<u64, CheckpointError> {
        let b = self.take(8, context)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: u64, context: &str) -> Result<String, CheckpointError> {
        let bytes = self.take(len, context)?;
        String::from_utf8(bytes).map_err(|_| CheckpointError::InvalidUtf8)
    }
}

fn decode<R: Read>(
    r: &mut Cursor<'_, R>,
    policy: NonFinitePolicy,
) -> Result<(Checkpoint, Vec<String>), CheckpointError> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic.try_into().expect("4 bytes"),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let tensor_count = r.u64("tensor count")?;
    // Each record occupies at least name_len + dtype + rank = 9 bytes.
    r.check_claim(tensor_count.saturating_mul(9), "tensor count")?;

    let mut tensors = Vec::with_capacity(tensor_count as usize);
    let mut warnings = Vec::new();
    for i in 0..tensor_count {
        let name_len = r.u32(&format!("tensor {i} name length"))?;
        let name = r.string(u64::from(name_len), &format!("tensor {i} name"))?;
        if name.is_empty() {
            return Err(CheckpointError::EmptyTensorName);
        }
        let tag = r.u8(&format!("tensor {name:?} dtype"))?;
        let dtype = DType::from_tag(tag).ok_or(CheckpointError::UnknownDtype {
            name: name.clone(),
            tag,
        })?;
        let rank = r.u32(&format!("tensor {name:?} rank"))?;
        r.check_claim(u64::from(rank) * 8, &format!("tensor {name:?} rank"))?;
        let mut shape = Vec::with_capacity(rank as usize);
        for d in 0..rank {
            shape.push(r.u64(&format!("tensor {name:?} dim {d}"))?);
        }
        if let Some(&dim) = shape.iter().find(|&&d| d == 0) {
            return Err(CheckpointError::ZeroDimension { name, dim });
        }
        let count = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::OversizedField {
                context: format!("tensor {name:?} shape product"),
                claimed: u64::MAX,
                remaining: r.remaining,
            })?;
        let payload_bytes = count
            .checked_mul(dtype.element_bytes() as u64)
            .ok_or_else(|| CheckpointError::OversizedField {
                context: format!("tensor {name:?} payload"),
                claimed: u64::MAX,
                remaining: r.remaining,
            })?;
        let raw = r.take(payload_bytes, &format!("tensor {name:?} payload"))?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        if data.first_non_finite().is_some() {
            match policy {
                NonFinitePolicy::Error => {
                    return Err(CheckpointError::NonFiniteValue { name })
                }
                NonFinitePolicy::Warn => warnings.push(name.clone()),
            }
        }
        tensors.push(TensorRecord { name, shape, data });
    }

    let meta_count = r.u64("metadata count")?;
    r.check_claim(meta_count.saturating_mul(8), "metadata count")?;
    let mut metadata = BTreeMap::new();
    for i in 0..meta_count {
        let key_len = r.u32(&format!("metadata {i} key length"))?;
        let key = r.string(u64::from(key_len), &format!("metadata {i} key"))?;
        let val_len = r.u32(&format!("metadata {key:?} value length"))?;
        let val = r.string(u64::from(val_len), &format!("metadata {key:?} value"))?;
        metadata.insert(key, val);
    }
    if r.remaining != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining));
    }

    let mut ckpt = Checkpoint::new(tensors)?;
    ckpt.metadata = metadata;
    Ok((ckpt, warnings))
}

/// One structural difference found during a compatibility check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub tensor: String,
    pub reason: MismatchReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MismatchReason {
    Missing,
    Shape,
    Dtype,
}

impl std::fmt::Display for MismatchReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Missing => write!(f, "missing"),
            Self::Shape => write!(f, "shape"),
            Self::Dtype => write!(f, "dtype"),
        }
    }
}

/// Result of [`validate_compat`]: `compatible` holds exactly when
/// `mismatches` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatReport {
    pub mismatches: Vec<Mismatch>,
}

impl CompatReport {
    pub fn compatible(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Checks that every checkpoint carries exactly the same tensor names with
/// identical shapes and dtypes. The report is symmetric in the arguments up
/// to mismatch ordering.
pub fn validate_compat(ckpts: &[&Checkpoint]) -> Result<CompatReport, CheckpointError> {
    if ckpts.len() < 2 {
        return Err(CheckpointError::TooFewCheckpoints(ckpts.len()));
    }
    // Union of names in first-seen order keeps the report stable.
    let mut names: Vec<&str> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for c in ckpts {
        for t in c.tensors() {
            if seen.insert(t.name()) {
                names.push(t.name());
            }
        }
    }

    let mut mismatches = Vec::new();
    for name in names {
        let records: Vec<Option<&TensorRecord>> = ckpts.iter().map(|c| c.get(name)).collect();
        if records.iter().any(|r| r.is_none()) {
            mismatches.push(Mismatch {
                tensor: name.to_string(),
                reason: MismatchReason::Missing,
            });
            continue;
        }
        let first = records[0].expect("present");
        if records
            .iter()
            .any(|r| r.expect("present").shape() != first.shape())
        {
            mismatches.push(Mismatch {
                tensor: name.to_string(),
                reason: MismatchReason::Shape,
            });
        } else if records
            .iter()
            .any(|r| r.expect("present").dtype() != first.dtype())
        {
            mismatches.push(Mismatch {
                tensor: name.to_string(),
                reason: MismatchReason::Dtype,
            });
        }
    }
    Ok(CompatReport { mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ckpt(tensors: Vec<(&str, Vec<u64>, TensorData)>) -> Checkpoint {
        Checkpoint::new(
            tensors
                .into_iter()
                .map(|(n, s, d)| TensorRecord::new(n, s, d).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.aode");
        let mut c = ckpt(vec![
            ("w", vec![2, 2], TensorData::F32(vec![1.0, 2.0, 3.0, 4.0])),
            ("b", vec![2], TensorData::F64(vec![-0.5, 0.25])),
            ("scalar", vec![], TensorData::F64(vec![7.0])),
        ]);
        c.set_metadata("origin", "unit-test");
        write_checkpoint(&c, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert!(back.bits_eq(&c));
    }

    #[test]
    fn nan_refused_on_write() {
        let dir = tempdir().unwrap();
        let c = ckpt(vec![("w", vec![2], TensorData::F64(vec![1.0, f64::NAN]))]);
        let err = write_checkpoint(&c, dir.path().join("nan.aode")).unwrap_err();
        assert!(matches!(err, CheckpointError::NonFiniteValue { .. }));
    }

    #[test]
    fn non_finite_policy_warn_returns_names() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("inf.aode");
        // Bypass the write guard by patching bytes of a valid file.
        let c = ckpt(vec![("w", vec![1], TensorData::F64(vec![1.0]))]);
        write_checkpoint(&c, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let payload_at = bytes.len() - 8 - 8; // meta_count trailer + one f64
        bytes[payload_at..payload_at + 8].copy_from_slice(&f64::INFINITY.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();

        assert!(matches!(
            read_checkpoint(&path).unwrap_err(),
            CheckpointError::NonFiniteValue { .. }
        ));
        let (_, warnings) = read_checkpoint_with(&path, NonFinitePolicy::Warn).unwrap();
        assert_eq!(warnings, vec!["w".to_string()]);
    }

    #[test]
    fn tensor_order_is_preserved_per_file() {
        let dir = tempdir().unwrap();
        let a = ckpt(vec![
            ("w", vec![1], TensorData::F32(vec![1.0])),
            ("b", vec![1], TensorData::F32(vec![2.0])),
        ]);
        let b = ckpt(vec![
            ("b", vec![1], TensorData::F32(vec![2.0])),
            ("w", vec![1], TensorData::F32(vec![1.0])),
        ]);
        let pa = dir.path().join("a.aode");
        let pb = dir.path().join("b.aode");
        write_checkpoint(&a, &pa).unwrap();
        write_checkpoint(&b, &pb).unwrap();
        assert_ne!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        let names = |c: &Checkpoint| {
            c.tensors()
                .iter()
                .map(|t| t.name().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(&read_checkpoint(&pa).unwrap()), vec!["w", "b"]);
        assert_eq!(names(&read_checkpoint(&pb).unwrap()), vec!["b", "w"]);
    }

    #[test]
    fn bad_magic_detected() {
        let mut bytes = b"NOPE".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            CheckpointError::BadMagic { .. }
        ));
    }

    #[test]
    fn truncation_detected_mid_payload() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.aode");
        let c = ckpt(vec![("w", vec![4], TensorData::F64(vec![1.0; 4]))]);
        write_checkpoint(&c, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Header is 16 bytes, record header 4 + 1 + 1 + 4 + 8 = 18; cut inside
        // the 32-byte payload.
        let cut = 16 + 18 + 13;
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, CheckpointError::TruncatedFile { .. }), "{err}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = || TensorRecord::new("w", vec![1], TensorData::F32(vec![0.0])).unwrap();
        assert!(matches!(
            Checkpoint::new(vec![r(), r()]).unwrap_err(),
            CheckpointError::DuplicateName { .. }
        ));
    }

    #[test]
    fn oversized_count_rejected_without_allocation() {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            CheckpointError::OversizedField { .. }
        ));
    }

    #[test]
    fn compat_reports_shape_dtype_and_missing() {
        let a = ckpt(vec![
            ("w", vec![2, 2], TensorData::F32(vec![0.0; 4])),
            ("b", vec![2], TensorData::F32(vec![0.0; 2])),
        ]);
        let b = ckpt(vec![("w", vec![2, 3], TensorData::F32(vec![0.0; 6]))]);
        let report = validate_compat(&[&a, &b]).unwrap();
        assert!(!report.compatible());
        let mut found = report
            .mismatches
            .iter()
            .map(|m| (m.tensor.as_str(), m.reason))
            .collect::<Vec<_>>();
        found.sort();
        assert_eq!(
            found,
            vec![("b", MismatchReason::Missing), ("w", MismatchReason::Shape)]
        );

        let sym = validate_compat(&[&b, &a]).unwrap();
        let mut found_sym = sym
            .mismatches
            .iter()
            .map(|m| (m.tensor.as_str(), m.reason))
            .collect::<Vec<_>>();
        found_sym.sort();
        assert_eq!(found, found_sym);
    }

    #[test]
    fn compat_identical_structures() {
        let a = ckpt(vec![("w", vec![2], TensorData::F64(vec![1.0, 2.0]))]);
        let b = ckpt(vec![("w", vec![2], TensorData::F64(vec![9.0, 8.0]))]);
        assert!(validate_compat(&[&a, &b]).unwrap().compatible());
        assert!(validate_compat(&[&a]).is_err());
    }

    #[test]
    fn dtype_mismatch_detected() {
        let a = ckpt(vec![("w", vec![2], TensorData::F32(vec![0.0; 2]))]);
        let b = ckpt(vec![("w", vec![2], TensorData::F64(vec![0.0; 2]))]);
        let report = validate_compat(&[&a, &b]).unwrap();
        assert_eq!(report.mismatches[0].reason, MismatchReason::Dtype);
    }
}
