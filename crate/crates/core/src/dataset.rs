//! Embedding and label ingestion, imbalanced split construction, and the
//! ground-truth labeling oracle.
//!
//! Two embedding file formats are supported:
//!
//! - CSV with header `id,f0,...,f{D-1}`, one row per point, decimal floats;
//! - raw-f32: a 16-byte header (magic `SDE1`, then `N`, `D` and `flags` as
//!   unsigned 32-bit little-endian, flag bit 0 = rows are unit-normalized)
//!   followed by `N * D` little-endian 32-bit floats, row-major. Raw files
//!   carry no ids; rows are assigned ids `0..N-1`.
//!
//! Labels come from a CSV `id,class_id,attr1;attr2;...` where the attribute
//! field is optional (used for slice discovery, e.g. a language tag).

use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::derive_seed;
use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

const RAW_MAGIC: &[u8; 4] = b"SDE1";
const RAW_FLAG_NORMALIZED: u32 = 1;

/// Supported embedding file formats.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    Csv,
    RawF32,
}

/// A dense matrix of feature vectors with stable point identifiers. Immutable
/// after construction; safe to share across threads.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    ids: Vec<PointId>,
    data: Array2<f64>,
    normalized: bool,
    index: HashMap<PointId, usize>,
}

impl EmbeddingStore {
    /// Builds a store, validating that ids are unique, every entry is finite,
    /// and (when `normalized` is claimed) every row has unit Euclidean norm
    /// within 1e-6.
    pub fn new(ids: Vec<PointId>, data: Array2<f64>, normalized: bool) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} ids for {} rows",
                ids.len(),
                data.nrows()
            )));
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Data("embedding store must be non-empty".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(Error::Data(format!("duplicate point id {id}")));
            }
        }
        for (i, row) in data.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite entry in row {i}")));
            }
            if normalized {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Data(format!(
                        "row {i} claims normalized but has norm {norm}"
                    )));
                }
            }
        }
        Ok(Self {
            ids,
            data,
            normalized,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn index_of(&self, id: PointId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownId(id))
    }

    pub fn row(&self, id: PointId) -> Result<ArrayView1<'_, f64>> {
        Ok(self.data.row(self.index_of(id)?))
    }

    pub fn row_by_index(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Rescales every row to unit Euclidean norm.
    pub fn normalize(mut self) -> Result<Self> {
        for (i, mut row) in self.data.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::Data(format!("zero-norm row {i}")));
            }
            row.mapv_inplace(|v| v / norm);
        }
        self.normalized = true;
        Ok(self)
    }

    /// Replaces the feature matrix while keeping ids (used when an external
    /// provider refreshes embeddings between rounds).
    pub fn with_data(&self, data: Array2<f64>, normalized: bool) -> Result<Self> {
        Self::new(self.ids.clone(), data, normalized)
    }
}

/// Loads an embedding store from a file in the given format.
pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingStore> {
    match format {
        EmbeddingFormat::Csv => load_embeddings_csv(path),
        EmbeddingFormat::RawF32 => load_embeddings_raw(path),
    }
}

fn load_embeddings_csv(path: &Path) -> Result<EmbeddingStore> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if headers.len() < 2 || &headers[0] != "id" {
        return Err(Error::Format(format!(
            "{}: expected header id,f0,...,f{{D-1}}",
            path.display()
        )));
    }
    for (k, name) in headers.iter().skip(1).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::Format(format!(
                "{}: expected column f{k}, found {name}",
                path.display()
            )));
        }
    }
    let dim = headers.len() - 1;
    let mut ids = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() != dim + 1 {
            return Err(Error::Format(format!(
                "{}: row {row_idx} has {} fields, expected {}",
                path.display(),
                record.len(),
                dim + 1
            )));
        }
        let id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {row_idx}: bad id", path.display())))?;
        ids.push(PointId(id));
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("{}: row {row_idx}: bad float", path.display()))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite entry in row {row_idx}",
                    path.display()
                )));
            }
            values.push(v);
        }
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let n = ids.len();
    let data = Array2::from_shape_vec((n, dim), values)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
    EmbeddingStore::new(ids, data, false)
}

fn load_embeddings_raw(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: truncated header ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..4] != RAW_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, expected SDE1",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let flags = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = 16 + n * dim * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for N={n}, D={dim}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    if n == 0 || dim == 0 {
        return Err(Error::Data(format!("{}: empty matrix", path.display())));
    }
    let mut values = Vec::with_capacity(n * dim);
    for (k, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite entry in row {}",
                path.display(),
                k / dim
            )));
        }
        values.push(v);
    }
    let ids = (0..n as u32).map(PointId).collect();
    let data = Array2::from_shape_vec((n, dim), values)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))?;
    EmbeddingStore::new(ids, data, flags & RAW_FLAG_NORMALIZED != 0)
}

/// Writes a store in the raw-f32 format. Values are narrowed to f32; the
/// normalized flag is propagated into the header.
pub fn save_embeddings_raw(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + store.len() * store.dim() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    let flags = if store.is_normalized() {
        RAW_FLAG_NORMALIZED
    } else {
        0
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in store.data().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Ground-truth class plus optional attribute tags (e.g. a language tag when
/// discovering slices).
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub class_id: u32,
    pub attributes: Vec<String>,
}

impl ConceptLabel {
    pub fn new(class_id: u32, attributes: Vec<String>) -> Result<Self> {
        for a in &attributes {
            if a.is_empty() {
                return Err(Error::Data("empty attribute string".into()));
            }
            if a.contains([';', ':', '=', ',']) || a.chars().any(char::is_control) {
                return Err(Error::Data(format!(
                    "attribute {a:?} contains a reserved character"
                )));
            }
        }
        Ok(Self {
            class_id,
            attributes,
        })
    }

    pub fn of_class(class_id: u32) -> Self {
        Self {
            class_id,
            attributes: Vec::new(),
        }
    }

    pub fn key(&self) -> ConceptKey {
        ConceptKey {
            class_id: self.class_id,
            attributes: self.attributes.clone(),
        }
    }
}

/// Identity of a concept: a class id plus an ordered attribute tuple. Plain
/// class discovery uses an empty tuple; slice discovery keys on
/// (class, attributes), e.g. `5:ka` for digit 5 in Kannada.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ConceptKey {
    pub class_id: u32,
    pub attributes: Vec<String>,
}

impl ConceptKey {
    pub fn of_class(class_id: u32) -> Self {
        Self {
            class_id,
            attributes: Vec::new(),
        }
    }
}

impl fmt::Display for ConceptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.attributes.is_empty() {
            write!(f, "{}", self.class_id)
        } else {
            write!(f, "{}:{}", self.class_id, self.attributes.join(";"))
        }
    }
}

impl FromStr for ConceptKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (class_part, attrs) = match s.split_once(':') {
            Some((c, a)) => (c, a.split(';').map(str::to_owned).collect()),
            None => (s, Vec::new()),
        };
        let class_id = class_part
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad concept key {s:?}")))?;
        for a in &attrs {
            if a.is_empty() {
                return Err(Error::Format(format!("bad concept key {s:?}")));
            }
        }
        Ok(Self {
            class_id,
            attributes: attrs,
        })
    }
}

impl Serialize for ConceptKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConceptKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Loads a label file: CSV `id,class_id,attr1;attr2;...` with the attribute
/// column optional.
pub fn load_labels(path: &Path) -> Result<BTreeMap<PointId, ConceptLabel>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut labels = BTreeMap::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() < 2 {
            return Err(Error::Format(format!(
                "{}: row {row_idx} needs at least id,class_id",
                path.display()
            )));
        }
        let id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {row_idx}: bad id", path.display())))?;
        let class_id: u32 = record[1].trim().parse().map_err(|_| {
            Error::Format(format!("{}: row {row_idx}: bad class id", path.display()))
        })?;
        let attributes = match record.get(2) {
            Some(field) if !field.trim().is_empty() => field
                .trim()
                .split(';')
                .map(str::to_owned)
                .collect::<Vec<_>>(),
            _ => Vec::new(),
        };
        let label = ConceptLabel::new(class_id, attributes)
            .map_err(|e| Error::Data(format!("{}: row {row_idx}: {e}", path.display())))?;
        if labels.insert(PointId(id), label).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate label for id {id}",
                path.display()
            )));
        }
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{}: empty label file", path.display())));
    }
    Ok(labels)
}

/// Recipe for an imbalanced labeled/unlabeled split.
///
/// The unlabeled pool holds `per_known_count` points per known concept and
/// `per_unknown_count` per unknown concept, tied by the imbalance factor
/// `rho = per_known_count / per_unknown_count`. The labeled pool holds
/// `labeled_per_known` points per known concept and nothing else.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub known_concepts: BTreeSet<ConceptKey>,
    pub unknown_concepts: BTreeSet<ConceptKey>,
    pub rho: f64,
    pub labeled_per_known: usize,
    pub per_known_count: usize,
    pub per_unknown_count: usize,
    pub seed: u64,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.known_concepts.is_empty() {
            return Err(Error::Argument("no known concepts".into()));
        }
        if !self.known_concepts.is_disjoint(&self.unknown_concepts) {
            return Err(Error::Argument(
                "known and unknown concept sets overlap".into(),
            ));
        }
        if self.rho < 1.0 {
            return Err(Error::Argument(format!(
                "imbalance factor rho={} must be >= 1",
                self.rho
            )));
        }
        if self.per_known_count == 0 || self.per_unknown_count == 0 || self.labeled_per_known == 0 {
            return Err(Error::Argument("per-concept counts must be positive".into()));
        }
        let implied = self.rho * self.per_unknown_count as f64;
        if (self.per_known_count as f64 - implied).abs() >= 1.0 {
            return Err(Error::Argument(format!(
                "per_known_count={} is not rho*per_unknown_count (~{implied:.1}) within rounding",
                self.per_known_count
            )));
        }
        Ok(())
    }
}

/// A labeled/unlabeled partition of the ground set together with the
/// ground-truth label map that serves as the labeling oracle.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    labeled: BTreeSet<PointId>,
    unlabeled: BTreeSet<PointId>,
    concepts: BTreeMap<PointId, ConceptLabel>,
    known_concepts: BTreeSet<ConceptKey>,
    unknown_concepts: BTreeSet<ConceptKey>,
}

impl DatasetSplit {
    pub fn labeled(&self) -> &BTreeSet<PointId> {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<PointId> {
        &self.unlabeled
    }

    pub fn known_concepts(&self) -> &BTreeSet<ConceptKey> {
        &self.known_concepts
    }

    pub fn unknown_concepts(&self) -> &BTreeSet<ConceptKey> {
        &self.unknown_concepts
    }

    /// Ground-truth label of a point. The oracle is omniscient: it answers
    /// for unknown-concept points too.
    pub fn oracle_label(&self, id: PointId) -> Result<&ConceptLabel> {
        self.concepts.get(&id).ok_or(Error::UnknownId(id))
    }

    pub fn is_unknown_concept(&self, id: PointId) -> Result<bool> {
        Ok(self.unknown_concepts.contains(&self.oracle_label(id)?.key()))
    }

    /// Number of unlabeled points whose concept is unknown (the discovery
    /// target pool).
    pub fn unknown_pool_size(&self) -> usize {
        self.unlabeled
            .iter()
            .filter(|id| self.is_unknown_concept(**id).unwrap_or(false))
            .count()
    }
}

/// Builds the imbalanced discovery split by seeded sampling without
/// replacement. Per-concept draws use independent counter-derived streams, so
/// the result does not depend on map iteration or insertion order.
pub fn build_discovery_split(
    labels: &BTreeMap<PointId, ConceptLabel>,
    spec: &ImbalanceSpec,
) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut by_concept: BTreeMap<ConceptKey, Vec<PointId>> = BTreeMap::new();
    for (id, label) in labels {
        by_concept.entry(label.key()).or_default().push(*id);
    }

    let mut labeled = BTreeSet::new();
    let mut unlabeled = BTreeSet::new();

    let draw = |key: &ConceptKey, needed: usize, stream: u64| -> Result<Vec<PointId>> {
        let mut pool = by_concept.get(key).cloned().unwrap_or_default();
        if pool.len() < needed {
            return Err(Error::Capacity {
                concept: key.to_string(),
                needed,
                available: pool.len(),
            });
        }
        pool.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "split", stream));
        pool.shuffle(&mut rng);
        pool.truncate(needed);
        Ok(pool)
    };

    for (k, key) in spec.known_concepts.iter().enumerate() {
        let take = spec.labeled_per_known + spec.per_known_count;
        let picked = draw(key, take, k as u64)?;
        labeled.extend(&picked[..spec.labeled_per_known]);
        unlabeled.extend(&picked[spec.labeled_per_known..]);
    }
    for (k, key) in spec.unknown_concepts.iter().enumerate() {
        let picked = draw(key, spec.per_unknown_count, (1 << 32) | k as u64)?;
        unlabeled.extend(picked);
    }

    Ok(DatasetSplit {
        labeled,
        unlabeled,
        concepts: labels.clone(),
        known_concepts: spec.known_concepts.clone(),
        unknown_concepts: spec.unknown_concepts.clone(),
    })
}

/// Reads labeled ids one per line (ASCII decimal) from a reader; used by the
/// external embedding-provider protocol.
pub fn read_id_lines<R: Read>(mut reader: R) -> Result<Vec<PointId>> {
    let mut buf = String::new();
    reader
        .read_to_string(&mut buf)
        .map_err(|e| Error::Format(format!("reading id list: {e}")))?;
    let mut out = Vec::new();
    for (k, line) in buf.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: u32 = line
            .parse()
            .map_err(|_| Error::Format(format!("bad id on line {k}: {line:?}")))?;
        out.push(PointId(id));
    }
    Ok(out)
}
