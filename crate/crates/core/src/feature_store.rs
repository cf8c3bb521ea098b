//! Labeled feature-vector datasets and their on-disk format.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "FSOS" | u32 version=1 | u32 D | u64 N | u32 C
//! N x ( u32 label | D x f32 )
//! u32 CRC32 of the N records
//! ```
//!
//! Class names and the split assignment live in a JSON sidecar next to the
//! binary file (`<path>.meta.json`), so splits can be re-cut without
//! rewriting the vectors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FSOS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Base, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Split::Base),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// JSON sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub class_names: Vec<String>,
    pub splits: BTreeMap<Split, Vec<usize>>,
}

/// Immutable table of D-dimensional float32 vectors with dense class labels
/// and a per-class split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    vectors: Array2<f32>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    split_of_class: Vec<Split>,
    members: Vec<Vec<usize>>,
}

impl FeatureSet {
    /// Builds a feature set, checking every invariant eagerly.
    pub fn new(
        vectors: Array2<f32>,
        labels: Vec<u32>,
        class_names: Vec<String>,
        split_of_class: Vec<Split>,
    ) -> Result<Self> {
        let (n, dim) = vectors.dim();
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {} vectors", labels.len(), n)));
        }
        let n_classes = class_names.len();
        if split_of_class.len() != n_classes {
            return Err(Error::Metadata(format!("{} split entries for {} classes", split_of_class.len(), n_classes)));
        }
        for (index, row) in vectors.outer_iter().enumerate() {
            if let Some(component) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index, component });
            }
        }
        let mut members = vec![Vec::new(); n_classes];
        for (index, &label) in labels.iter().enumerate() {
            if label as usize >= n_classes {
                return Err(Error::LabelOutOfRange { index, label, classes: n_classes as u32 });
            }
            members[label as usize].push(index);
        }
        if let Some(class) = members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass { class });
        }
        Ok(Self { vectors, labels, class_names, split_of_class, members })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> ArrayView1<'_, f32> {
        self.vectors.row(index)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split_of_class(&self, class: usize) -> Split {
        self.split_of_class[class]
    }

    /// Instance indices of `class`, in storage order.
    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// Class ids assigned to `split`, ascending.
    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_classes()).filter(|&c| self.split_of_class[c] == split).collect()
    }

    pub fn meta(&self) -> StoreMeta {
        let mut splits: BTreeMap<Split, Vec<usize>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
        for (class, &split) in self.split_of_class.iter().enumerate() {
            splits.entry(split).or_default().push(class);
        }
        StoreMeta { class_names: self.class_names.clone(), splits }
    }

    /// Vectors (as f64) and split-local dense labels of every instance whose
    /// class belongs to `split`. Local label `i` is the i-th class of
    /// [`FeatureSet::classes_in`].
    pub fn split_view(&self, split: Split) -> (Array2<f64>, Vec<usize>) {
        let classes = self.classes_in(split);
        let rows: usize = classes.iter().map(|&c| self.members[c].len()).sum();
        let mut out = Array2::zeros((rows, self.dim()));
        let mut labels = Vec::with_capacity(rows);
        let mut r = 0;
        for (local, &class) in classes.iter().enumerate() {
            for &idx in &self.members[class] {
                out.row_mut(r).assign(&self.vectors.row(idx).mapv(f64::from));
                labels.push(local);
                r += 1;
            }
        }
        (out, labels)
    }
}

/// Arithmetic mean of every vector whose class is in the base split.
pub fn base_mean(fs: &FeatureSet) -> Result<Array1<f64>> {
    let mut sum = Array1::<f64>::zeros(fs.dim());
    let mut count = 0usize;
    for class in fs.classes_in(Split::Base) {
        for &idx in fs.members(class) {
            sum.zip_mut_with(&fs.vector(idx), |s, &v| *s += f64::from(v));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientData("no base-split vectors".into()));
    }
    Ok(sum / count as f64)
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub(crate) fn encode(vectors: &Array2<f32>, labels: &[u32], n_classes: u32) -> Vec<u8> {
    let (n, dim) = vectors.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + n * (4 + 4 * dim) + 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&n_classes.to_le_bytes());
    for (row, &label) in vectors.outer_iter().zip(labels) {
        buf.extend_from_slice(&label.to_le_bytes());
        for &v in row.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf[HEADER_LEN..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Decoded binary payload, before metadata is attached.
pub(crate) struct Payload {
    pub vectors: Array2<f32>,
    pub labels: Vec<u32>,
    pub n_classes: u32,
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Payload> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Shape(format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
    }
    let dim = u32_at(bytes, 8) as usize;
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let n_classes = u32_at(bytes, 20);
    if dim == 0 {
        return Err(Error::Shape("header declares dimension 0 at byte offset 8".into()));
    }
    let record_len = 4 + 4 * dim as u64;
    let body = (bytes.len() - HEADER_LEN) as u64;
    // The last 4 bytes are the checksum.
    let expected = n
        .checked_mul(record_len)
        .and_then(|p| p.checked_add(4))
        .ok_or_else(|| Error::Shape("header record count overflows".into()))?;
    if body < expected {
        let complete = body.saturating_sub(4) / record_len;
        let record = (complete + 1).min(n.max(1));
        return Err(Error::Truncated { record, expected: n, offset: HEADER_LEN as u64 + complete * record_len });
    }
    if body > expected {
        return Err(Error::TrailingBytes { offset: HEADER_LEN as u64 + expected, extra: body - expected });
    }
    let payload_end = bytes.len() - 4;
    let stored = u32_at(bytes, payload_end);
    let computed = crc32fast::hash(&bytes[HEADER_LEN..payload_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let n = n as usize;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    let mut off = HEADER_LEN;
    for _ in 0..n {
        labels.push(u32_at(bytes, off));
        off += 4;
        for _ in 0..dim {
            data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
    }
    let vectors = Array2::from_shape_vec((n, dim), data).expect("shape checked above");
    Ok(Payload { vectors, labels, n_classes })
}

fn split_assignment(meta: &StoreMeta, n_classes: usize) -> Result<Vec<Split>> {
    let mut out: Vec<Option<Split>> = vec![None; n_classes];
    for (&split, ids) in &meta.splits {
        for &id in ids {
            let slot = out.get_mut(id).ok_or_else(|| {
                Error::Metadata(format!(
                    "split {} references class {id}, but there are {n_classes} classes",
                    split.as_str()
                ))
            })?;
            if let Some(prev) = slot {
                return Err(Error::Metadata(format!(
                    "class {id} assigned to both {} and {}",
                    prev.as_str(),
                    split.as_str()
                )));
            }
            *slot = Some(split);
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(id, s)| s.ok_or_else(|| Error::Metadata(format!("class {id} has no split"))))
        .collect()
}

pub fn load_feature_store(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let payload = decode(&bytes)?;
    let mpath = meta_path(path);
    let meta_text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: StoreMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::Metadata(format!("{}: {e}", mpath.display())))?;
    if meta.class_names.len() != payload.n_classes as usize {
        return Err(Error::Metadata(format!(
            "header declares {} classes, sidecar names {}",
            payload.n_classes,
            meta.class_names.len()
        )));
    }
    let splits = split_assignment(&meta, meta.class_names.len())?;
    FeatureSet::new(payload.vectors, payload.labels, meta.class_names, splits)
}

pub fn save_feature_store(fs_: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // A FeatureSet cannot be built with an empty class, but re-check before
    // touching the disk.
    if let Some(class) = fs_.members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class });
    }
    let bytes = encode(&fs_.vectors, &fs_.labels, fs_.n_classes() as u32);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mpath = meta_path(path);
    let meta = serde_json::to_string_pretty(&fs_.meta())?;
    fs::write(&mpath, meta).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Builds a feature set from CSV rows `label,f0,...,f{D-1}` (no header) and
/// a split file with the sidecar's schema. `class_names` in the split file
/// may be omitted, in which case classes are named `class_<id>`.
pub fn from_csv(csv_path: &Path, splits_path: &Path) -> Result<FeatureSet> {
    #[derive(Deserialize)]
    struct SplitFile {
        #[serde(default)]
        class_names: Option<Vec<String>>,
        splits: BTreeMap<Split, Vec<usize>>,
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::Metadata(format!("{}: {e}", csv_path.display())))?;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let d = record.len().saturating_sub(1);
        if d == 0 {
            return Err(Error::Shape(format!("CSV row {row} has no feature columns")));
        }
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Shape(format!("CSV row {row} has {d} features, expected {expected}")))
            }
            _ => {}
        }
        let label: u32 =
            record[0].parse().map_err(|_| Error::Shape(format!("CSV row {row}: bad label {:?}", &record[0])))?;
        labels.push(label);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::Shape(format!("CSV row {row}, column {}: bad value {field:?}", col + 1)))?;
            data.push(v);
        }
    }
    let dim = dim.ok_or_else(|| Error::Shape("CSV file has no rows".into()))?;
    let vectors = Array2::from_shape_vec((labels.len(), dim), data).map_err(|e| Error::Shape(e.to_string()))?;

    let text = fs::read_to_string(splits_path).map_err(|e| Error::io(splits_path, e))?;
    let split_file: SplitFile =
        serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", splits_path.display())))?;
    let n_classes = match &split_file.class_names {
        Some(names) => names.len(),
        None => labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0),
    };
    let class_names = split_file.class_names.unwrap_or_else(|| (0..n_classes).map(|c| format!("class_{c}")).collect());
    let meta = StoreMeta { class_names, splits: split_file.splits };
    let splits = split_assignment(&meta, n_classes)?;
    FeatureSet::new(vectors, labels, meta.class_names, splits)
}
