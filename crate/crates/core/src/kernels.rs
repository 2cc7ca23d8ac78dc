//! Pairwise similarity kernels.
//!
//! Classification kernels are cosine similarities between unit-normalized
//! feature vectors, rectified into `[0, 1]`. Detection kernels score image
//! pairs at the object level: a rectified cosine map between ground-truth box
//! features and region-proposal features is reduced by a global max (query
//! mode) or a min over per-box maxima (conditioning mode).
//!
//! Kernels are dense and immutable once built; row computation is parallel
//! with a single-writer assembly.

use crate::dataset::EmbeddingStore;
use crate::error::{Error, Result};
use crate::ids::PointId;
use crate::derive_seed;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// How raw cosine values in `[-1, 1]` are mapped into `[0, 1]`.
///
/// `Clamp` zeroes negative cosines and perturbs ReLU-style features the
/// least; `Shift` maps through `(1 + cos) / 2`, preserving the ordering of
/// general embeddings.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectifyPolicy {
    #[default]
    Clamp,
    Shift,
}

impl RectifyPolicy {
    #[inline]
    pub fn apply(self, cos: f64) -> f64 {
        match self {
            RectifyPolicy::Clamp => cos.clamp(0.0, 1.0),
            RectifyPolicy::Shift => ((1.0 + cos) / 2.0).clamp(0.0, 1.0),
        }
    }
}

/// A dense pairwise-similarity matrix with row-set and column-set identity.
/// All entries are finite and in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Kernel {
    row_ids: Vec<PointId>,
    col_ids: Vec<PointId>,
    values: Array2<f64>,
    symmetric: bool,
    row_index: HashMap<PointId, usize>,
    col_index: HashMap<PointId, usize>,
}

impl Kernel {
    /// Builds a kernel, validating entries and detecting symmetry (same id
    /// lists and values symmetric within 1e-9).
    pub fn new(row_ids: Vec<PointId>, col_ids: Vec<PointId>, values: Array2<f64>) -> Result<Self> {
        for v in values.iter() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Data(format!("kernel entry {v} outside [0, 1]")));
            }
        }
        let symmetric = row_ids == col_ids && {
            let n = row_ids.len();
            (0..n).all(|i| (i + 1..n).all(|j| (values[[i, j]] - values[[j, i]]).abs() <= 1e-9))
        };
        Self::from_parts(row_ids, col_ids, values, symmetric)
    }

    fn from_parts(
        row_ids: Vec<PointId>,
        col_ids: Vec<PointId>,
        values: Array2<f64>,
        symmetric: bool,
    ) -> Result<Self> {
        if row_ids.len() != values.nrows() || col_ids.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "kernel ids ({} x {}) do not match values ({} x {})",
                row_ids.len(),
                col_ids.len(),
                values.nrows(),
                values.ncols()
            )));
        }
        let mut row_index = HashMap::with_capacity(row_ids.len());
        for (i, id) in row_ids.iter().enumerate() {
            if row_index.insert(*id, i).is_some() {
                return Err(Error::Data(format!("duplicate kernel row id {id}")));
            }
        }
        let mut col_index = HashMap::with_capacity(col_ids.len());
        for (j, id) in col_ids.iter().enumerate() {
            if col_index.insert(*id, j).is_some() {
                return Err(Error::Data(format!("duplicate kernel column id {id}")));
            }
        }
        Ok(Self {
            row_ids,
            col_ids,
            values,
            symmetric,
            row_index,
            col_index,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_ids(&self) -> &[PointId] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[PointId] {
        &self.col_ids
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn row(&self, row: usize) -> ArrayView1<'_, f64> {
        self.values.row(row)
    }

    pub fn row_index_of(&self, id: PointId) -> Result<usize> {
        self.row_index.get(&id).copied().ok_or(Error::UnknownId(id))
    }

    pub fn col_index_of(&self, id: PointId) -> Result<usize> {
        self.col_index.get(&id).copied().ok_or(Error::UnknownId(id))
    }

    /// Maximum over rows, per column. Returns zeros when there are no rows.
    pub fn col_max(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for row in self.values.rows() {
            for (m, v) in out.iter_mut().zip(row.iter()) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        out
    }

    /// Sum over rows, per column.
    pub fn col_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for row in self.values.rows() {
            for (s, v) in out.iter_mut().zip(row.iter()) {
                *s += *v;
            }
        }
        out
    }

    /// Extracts a sub-kernel by id lists.
    pub fn submatrix(&self, rows: &[PointId], cols: &[PointId]) -> Result<Kernel> {
        let ri: Vec<usize> = rows
            .iter()
            .map(|id| self.row_index_of(*id))
            .collect::<Result<_>>()?;
        let ci: Vec<usize> = cols
            .iter()
            .map(|id| self.col_index_of(*id))
            .collect::<Result<_>>()?;
        let values = Array2::from_shape_fn((ri.len(), ci.len()), |(a, b)| {
            self.values[[ri[a], ci[b]]]
        });
        Kernel::new(rows.to_vec(), cols.to_vec(), values)
    }
}

fn gather_rows(store: &EmbeddingStore, ids: &[PointId]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((ids.len(), store.dim()));
    for (k, id) in ids.iter().enumerate() {
        out.row_mut(k).assign(&store.row(*id)?);
    }
    Ok(out)
}

/// Builds the rectified-cosine kernel between two views of normalized
/// embedding stores. When both views are the same store and id list the
/// result is exactly symmetric with unit diagonal.
pub fn cosine_kernel(
    row_store: &EmbeddingStore,
    row_ids: &[PointId],
    col_store: &EmbeddingStore,
    col_ids: &[PointId],
    rectify: RectifyPolicy,
) -> Result<Kernel> {
    if row_store.dim() != col_store.dim() {
        return Err(Error::Shape(format!(
            "row dim {} != col dim {}",
            row_store.dim(),
            col_store.dim()
        )));
    }
    if !row_store.is_normalized() || !col_store.is_normalized() {
        return Err(Error::Data(
            "cosine_kernel requires normalized embeddings".into(),
        ));
    }
    let symmetric = std::ptr::eq(row_store, col_store) && row_ids == col_ids;
    let a = gather_rows(row_store, row_ids)?;
    let b = gather_rows(col_store, col_ids)?;
    let bt = b.t();

    let n_rows = a.nrows();
    let n_cols = b.nrows();
    let mut values = Array2::zeros((n_rows, n_cols));
    // parallel over row blocks, each worker writing its own slice
    let block = 256.max(n_rows / (4 * rayon::current_num_threads().max(1)) + 1);
    values
        .axis_chunks_iter_mut(ndarray::Axis(0), block)
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk_idx, mut out_chunk)| {
            let start = chunk_idx * block;
            let end = (start + out_chunk.nrows()).min(n_rows);
            let prod = a.slice(ndarray::s![start..end, ..]).dot(&bt);
            out_chunk.assign(&prod.mapv(|c| rectify.apply(c)));
        });

    if symmetric {
        // mirror the upper triangle so symmetry is exact
        for i in 0..n_rows {
            for j in (i + 1)..n_cols {
                let v = values[[i, j]];
                values[[j, i]] = v;
            }
        }
    }
    Kernel::from_parts(row_ids.to_vec(), col_ids.to_vec(), values, symmetric)
}

/// Which reduction turns an object-level score map into one similarity.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Global maximum: the best matching (GT box, proposal) pair.
    Query,
    /// Min over per-GT-box maxima: the worst matching GT-proposal pair.
    Conditioning,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxKind {
    GroundTruth,
    Proposal,
}

/// Per-image object features: one row per ground-truth box or region
/// proposal. Rows are unit-normalized at construction.
#[derive(Clone, Debug)]
pub struct ObjectFeatureSet {
    pub image_id: PointId,
    boxes: Array2<f64>,
    pub kind: BoxKind,
}

impl ObjectFeatureSet {
    pub fn new(image_id: PointId, mut boxes: Array2<f64>, kind: BoxKind) -> Result<Self> {
        if boxes.nrows() == 0 {
            return Err(Error::Data(format!("image {image_id}: empty box list")));
        }
        for (k, mut row) in boxes.rows_mut().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "image {image_id}: non-finite feature in box {k}"
                )));
            }
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::Data(format!(
                    "image {image_id}: zero-norm feature in box {k}"
                )));
            }
            row.mapv_inplace(|v| v / norm);
        }
        Ok(Self {
            image_id,
            boxes,
            kind,
        })
    }

    pub fn boxes(&self) -> ArrayView2<'_, f64> {
        self.boxes.view()
    }

    pub fn dim(&self) -> usize {
        self.boxes.ncols()
    }
}

/// Object-level similarity between one ground-truth image and one unlabeled
/// image: the T x R rectified cosine score map reduced per `mode`.
pub fn detection_similarity(
    gt: &ObjectFeatureSet,
    unlabeled: &ObjectFeatureSet,
    mode: DetectionMode,
    rectify: RectifyPolicy,
) -> Result<f64> {
    if gt.kind != BoxKind::GroundTruth {
        return Err(Error::Argument(format!(
            "image {} is not a ground-truth feature set",
            gt.image_id
        )));
    }
    if unlabeled.kind != BoxKind::Proposal {
        return Err(Error::Argument(format!(
            "image {} is not a proposal feature set",
            unlabeled.image_id
        )));
    }
    if gt.dim() != unlabeled.dim() {
        return Err(Error::Shape(format!(
            "box feature dims differ: {} vs {}",
            gt.dim(),
            unlabeled.dim()
        )));
    }
    let score_map = gt.boxes.dot(&unlabeled.boxes.t());
    Ok(reduce_score_map(&score_map, mode, rectify))
}

fn reduce_score_map(map: &Array2<f64>, mode: DetectionMode, rectify: RectifyPolicy) -> f64 {
    match mode {
        DetectionMode::Query => map
            .iter()
            .map(|c| rectify.apply(*c))
            .fold(0.0f64, f64::max),
        DetectionMode::Conditioning => map
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|c| rectify.apply(*c)).fold(0.0f64, f64::max))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Builds the image-level detection kernel: one row per ground-truth image,
/// one column per unlabeled image.
pub fn detection_kernel(
    gt_images: &[ObjectFeatureSet],
    unlabeled_images: &[ObjectFeatureSet],
    mode: DetectionMode,
    rectify: RectifyPolicy,
) -> Result<Kernel> {
    let rows: Vec<Vec<f64>> = gt_images
        .par_iter()
        .map(|gt| {
            unlabeled_images
                .iter()
                .map(|u| detection_similarity(gt, u, mode, rectify))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut values = Array2::zeros((gt_images.len(), unlabeled_images.len()));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Kernel::new(
        gt_images.iter().map(|g| g.image_id).collect(),
        unlabeled_images.iter().map(|u| u.image_id).collect(),
        values,
    )
}

/// One line of a detection feature manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionManifestEntry {
    pub image_id: PointId,
    pub path: PathBuf,
    pub kind: BoxKind,
    /// Per-box class ids; required for ground-truth images, empty for
    /// proposals.
    pub box_classes: Vec<u32>,
}

/// Loads a detection manifest CSV: `image_id,path,kind,classes` where kind is
/// `gt` or `proposal` and classes is a `;`-separated list for GT images.
pub fn load_detection_manifest(path: &Path) -> Result<Vec<DetectionManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if record.len() < 3 {
            return Err(Error::Format(format!(
                "{}: row {row_idx} needs image_id,path,kind",
                path.display()
            )));
        }
        let image_id: u32 = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{}: row {row_idx}: bad image id", path.display())))?;
        let kind = match record[2].trim() {
            "gt" | "ground_truth" => BoxKind::GroundTruth,
            "proposal" => BoxKind::Proposal,
            other => {
                return Err(Error::Format(format!(
                    "{}: row {row_idx}: unknown kind {other:?}",
                    path.display()
                )))
            }
        };
        let box_classes = match record.get(3) {
            Some(field) if !field.trim().is_empty() => field
                .trim()
                .split(';')
                .map(|c| {
                    c.trim().parse::<u32>().map_err(|_| {
                        Error::Format(format!("{}: row {row_idx}: bad class id", path.display()))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        if kind == BoxKind::GroundTruth && box_classes.is_empty() {
            return Err(Error::Format(format!(
                "{}: row {row_idx}: ground-truth image without box classes",
                path.display()
            )));
        }
        out.push(DetectionManifestEntry {
            image_id: PointId(image_id),
            path: PathBuf::from(record[1].trim()),
            kind,
            box_classes,
        });
    }
    Ok(out)
}

/// Loads one image's box features (raw-f32 file, boxes as rows). Relative
/// manifest paths resolve against `base_dir`.
pub fn load_object_features(
    entry: &DetectionManifestEntry,
    base_dir: &Path,
) -> Result<ObjectFeatureSet> {
    let path = if entry.path.is_absolute() {
        entry.path.clone()
    } else {
        base_dir.join(&entry.path)
    };
    let store = crate::dataset::load_embeddings(&path, crate::dataset::EmbeddingFormat::RawF32)?;
    if entry.kind == BoxKind::GroundTruth && entry.box_classes.len() != store.len() {
        return Err(Error::Data(format!(
            "image {}: {} box classes for {} boxes",
            entry.image_id,
            entry.box_classes.len(),
            store.len()
        )));
    }
    ObjectFeatureSet::new(entry.image_id, store.data().to_owned(), entry.kind)
}

/// Splits ids into `parts` disjoint lists whose sizes differ by at most one.
/// Membership is a seeded shuffle; `parts == 1` returns the input unchanged.
pub fn partition_ground_set(
    ids: &[PointId],
    parts: usize,
    seed: u64,
) -> Result<Vec<Vec<PointId>>> {
    if parts == 0 {
        return Err(Error::Argument("parts must be >= 1".into()));
    }
    if parts > ids.len() {
        return Err(Error::Argument(format!(
            "parts={parts} exceeds {} ids",
            ids.len()
        )));
    }
    if parts == 1 {
        return Ok(vec![ids.to_vec()]);
    }
    let mut pool = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "partition", parts as u64));
    pool.shuffle(&mut rng);
    let base = pool.len() / parts;
    let extra = pool.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut cursor = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(pool[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(out)
}

/// Shared handle used when several functions reference the same kernel.
pub type KernelHandle = Arc<Kernel>;
