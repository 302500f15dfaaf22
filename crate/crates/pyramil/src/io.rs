//! On-disk formats: pyramid directories, dataset indices, and model
//! checkpoints. Every format is a small TOML manifest next to raw
//! little-endian `f32` blobs, so saves are deterministic byte-for-byte and
//! round-trips are bit-exact.
//!
//! A pyramid directory holds `manifest.toml` plus `level_1.bin` through
//! `level_M.bin` (level file names are 1-based; APIs index levels from 0).
//! A dataset is a directory of pyramid directories plus `index.toml`
//! recording labels and train/val/test membership. A checkpoint directory
//! holds `checkpoint.toml` (hyperparameters and the tensor layout) plus
//! `params.bin` (all parameters concatenated in declared order).

use crate::model::{ModelError, ZoomConfig, ZoomModel};
use crate::pyramid::{FeaturePyramid, PatchDims, PatchPyramid, PyramidError};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Version written into every manifest this build produces.
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse {path}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("could not serialize manifest: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{path} has format version {found}; this build supports {supported}")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("unsupported dtype {found:?} (expected \"f32le\")")]
    Dtype { found: String },
    #[error("{path}: short read, expected {expected} bytes, found {found}")]
    ShortRead {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("manifest kind {found:?} does not match expected {expected:?}")]
    Kind { found: String, expected: String },
    #[error("sample {id}: index and manifest disagree ({detail})")]
    Inconsistent { id: String, detail: String },
    #[error("checkpoint layout mismatch: {detail}")]
    Layout { detail: String },
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- raw f32 blobs ----

fn write_f32_bin(path: &Path, values: impl Iterator<Item = f32>) -> Result<(), FormatError> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_f32_bin(path: &Path, expected_count: usize) -> Result<Vec<f32>, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = expected_count as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(FormatError::ShortRead {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    toml::from_str(&text).map_err(|source| FormatError::Parse {
        path: path.to_path_buf(),
        source: Box::new(source),
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), FormatError> {
    if found != FORMAT_VERSION {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            found,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

fn check_dtype(dtype: &str) -> Result<(), FormatError> {
    if dtype != DTYPE {
        return Err(FormatError::Dtype {
            found: dtype.to_string(),
        });
    }
    Ok(())
}

// ---- pyramid directories ----

#[derive(Debug, Serialize, Deserialize)]
struct PyramidManifest {
    version: u32,
    kind: String,
    id: String,
    label: usize,
    dtype: String,
    level_rows: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    feature_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    patch: Option<PatchDims>,
}

fn level_file(dir: &Path, level: usize) -> PathBuf {
    dir.join(format!("level_{}.bin", level + 1))
}

fn save_levels(dir: &Path, levels: &[Array2<f32>]) -> Result<(), FormatError> {
    for (m, level) in levels.iter().enumerate() {
        write_f32_bin(&level_file(dir, m), level.iter().copied())?;
    }
    Ok(())
}

fn load_levels(
    dir: &Path,
    level_rows: &[usize],
    width: usize,
) -> Result<Vec<Array2<f32>>, FormatError> {
    let mut levels = Vec::with_capacity(level_rows.len());
    for (m, &rows) in level_rows.iter().enumerate() {
        let path = level_file(dir, m);
        let values = read_f32_bin(&path, rows * width)?;
        let level = Array2::from_shape_vec((rows, width), values)
            .expect("shape matches the value count by construction");
        levels.push(level);
    }
    Ok(levels)
}

/// Writes `manifest.toml` plus one `level_<m>.bin` per level into `dir`
/// (created if missing).
pub fn save_feature_pyramid(pyramid: &FeaturePyramid, dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = PyramidManifest {
        version: FORMAT_VERSION,
        kind: "features".to_string(),
        id: pyramid.id().to_string(),
        label: pyramid.label(),
        dtype: DTYPE.to_string(),
        level_rows: pyramid.level_rows(),
        feature_dim: Some(pyramid.feature_dim()),
        patch: None,
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, toml::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    save_levels(dir, pyramid.levels())
}

/// Loads a feature pyramid saved by [`save_feature_pyramid`], re-validating
/// the shape contract (4x level ratio, finite values).
pub fn load_feature_pyramid(dir: &Path) -> Result<FeaturePyramid, FormatError> {
    let path = dir.join("manifest.toml");
    let manifest: PyramidManifest = parse_toml(&path)?;
    check_version(&path, manifest.version)?;
    check_dtype(&manifest.dtype)?;
    if manifest.kind != "features" {
        return Err(FormatError::Kind {
            found: manifest.kind,
            expected: "features".to_string(),
        });
    }
    let width = manifest.feature_dim.ok_or_else(|| FormatError::Layout {
        detail: "feature manifest lacks feature_dim".to_string(),
    })?;
    let levels = load_levels(dir, &manifest.level_rows, width)?;
    Ok(FeaturePyramid::new(manifest.id, manifest.label, levels)?)
}

/// Writes a raw-patch pyramid in the same directory layout.
pub fn save_patch_pyramid(pyramid: &PatchPyramid, dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = PyramidManifest {
        version: FORMAT_VERSION,
        kind: "patches".to_string(),
        id: pyramid.id().to_string(),
        label: pyramid.label(),
        dtype: DTYPE.to_string(),
        level_rows: pyramid.level_rows(),
        feature_dim: None,
        patch: Some(pyramid.dims()),
    };
    let path = dir.join("manifest.toml");
    fs::write(&path, toml::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    save_levels(dir, pyramid.levels())
}

pub fn load_patch_pyramid(dir: &Path) -> Result<PatchPyramid, FormatError> {
    let path = dir.join("manifest.toml");
    let manifest: PyramidManifest = parse_toml(&path)?;
    check_version(&path, manifest.version)?;
    check_dtype(&manifest.dtype)?;
    if manifest.kind != "patches" {
        return Err(FormatError::Kind {
            found: manifest.kind,
            expected: "patches".to_string(),
        });
    }
    let dims = manifest.patch.ok_or_else(|| FormatError::Layout {
        detail: "patch manifest lacks patch dimensions".to_string(),
    })?;
    let levels = load_levels(dir, &manifest.level_rows, dims.len())?;
    Ok(PatchPyramid::new(manifest.id, manifest.label, dims, levels)?)
}

// ---- dataset index ----

/// Dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One sample's entry in the dataset index. `informative_parents` records
/// where the generator planted signal, for attention-map evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub informative_parents: Vec<usize>,
}

/// Index of a dataset directory: class count and per-sample membership.
/// Each sample's pyramid lives in a subdirectory named by its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub num_classes: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetIndex {
    pub fn new(num_classes: usize, samples: Vec<SampleRecord>) -> Self {
        Self {
            version: FORMAT_VERSION,
            num_classes,
            samples,
        }
    }

    /// Samples in `split`, in index order.
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

pub fn save_dataset_index(index: &DatasetIndex, root: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let path = root.join("index.toml");
    fs::write(&path, toml::to_string_pretty(index)?).map_err(io_err(&path))
}

pub fn load_dataset_index(root: &Path) -> Result<DatasetIndex, FormatError> {
    let path = root.join("index.toml");
    let index: DatasetIndex = parse_toml(&path)?;
    check_version(&path, index.version)?;
    Ok(index)
}

/// Loads the index and every listed feature pyramid (index order),
/// cross-checking each sample's label against its manifest.
pub fn load_feature_dataset(
    root: &Path,
) -> Result<(DatasetIndex, Vec<FeaturePyramid>), FormatError> {
    let index = load_dataset_index(root)?;
    let mut pyramids = Vec::with_capacity(index.samples.len());
    for record in &index.samples {
        let pyramid = load_feature_pyramid(&root.join(&record.id))?;
        check_record(record, pyramid.id(), pyramid.label())?;
        pyramids.push(pyramid);
    }
    Ok((index, pyramids))
}

/// Patch-pyramid counterpart of [`load_feature_dataset`].
pub fn load_patch_dataset(root: &Path) -> Result<(DatasetIndex, Vec<PatchPyramid>), FormatError> {
    let index = load_dataset_index(root)?;
    let mut pyramids = Vec::with_capacity(index.samples.len());
    for record in &index.samples {
        let pyramid = load_patch_pyramid(&root.join(&record.id))?;
        check_record(record, pyramid.id(), pyramid.label())?;
        pyramids.push(pyramid);
    }
    Ok((index, pyramids))
}

fn check_record(record: &SampleRecord, id: &str, label: usize) -> Result<(), FormatError> {
    if record.id != id {
        return Err(FormatError::Inconsistent {
            id: record.id.clone(),
            detail: format!("manifest id is {id:?}"),
        });
    }
    if record.label != label {
        return Err(FormatError::Inconsistent {
            id: record.id.clone(),
            detail: format!("index label {} vs manifest label {label}", record.label),
        });
    }
    Ok(())
}

// ---- checkpoints ----

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    dtype: String,
    config: ZoomConfig,
    tensors: Vec<TensorRecord>,
}

/// Saves hyperparameters plus all parameters (declared tensor order) into
/// `dir/checkpoint.toml` and `dir/params.bin`.
pub fn save_checkpoint(model: &ZoomModel<f32>, dir: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tensors = model.named_tensors();
    let manifest = CheckpointManifest {
        version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        config: model.config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, slice)| TensorRecord {
                name: name.clone(),
                len: slice.len(),
            })
            .collect(),
    };
    let path = dir.join("checkpoint.toml");
    fs::write(&path, toml::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    write_f32_bin(
        &dir.join("params.bin"),
        tensors.iter().flat_map(|(_, slice)| slice.iter().copied()),
    )
}

/// Loads a checkpoint saved by [`save_checkpoint`], validating the version,
/// dtype, configuration, and tensor layout.
pub fn load_checkpoint(dir: &Path) -> Result<ZoomModel<f32>, FormatError> {
    let path = dir.join("checkpoint.toml");
    let manifest: CheckpointManifest = parse_toml(&path)?;
    check_version(&path, manifest.version)?;
    check_dtype(&manifest.dtype)?;
    let mut model = ZoomModel::<f32>::zeros(manifest.config)?;

    let expected: Vec<(String, usize)> = model
        .named_tensors()
        .iter()
        .map(|(n, s)| (n.clone(), s.len()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(FormatError::Layout {
            detail: format!(
                "{} tensors on disk, model expects {}",
                manifest.tensors.len(),
                expected.len()
            ),
        });
    }
    for ((name, len), record) in expected.iter().zip(&manifest.tensors) {
        if name != &record.name || *len != record.len {
            return Err(FormatError::Layout {
                detail: format!(
                    "tensor {:?} ({} values) on disk where model expects {:?} ({} values)",
                    record.name, record.len, name, len
                ),
            });
        }
    }

    let total: usize = expected.iter().map(|(_, len)| len).sum();
    let values = read_f32_bin(&dir.join("params.bin"), total)?;
    let mut offset = 0;
    for (_, slice) in model.named_tensors_mut() {
        slice.copy_from_slice(&values[offset..offset + slice.len()]);
        offset += slice.len();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Real;
    use crate::rng::{Seed, StreamId};
    use ndarray::Array2;
    use tempfile::tempdir;

    fn random_feature_pyramid(id: &str, label: usize, seed: u64) -> FeaturePyramid {
        let mut rng = Seed(seed).stream(StreamId::Scratch(7));
        let levels = (0..2)
            .map(|m| {
                Array2::from_shape_simple_fn((4 * 4usize.pow(m), 8), || {
                    f32::standard_normal(&mut rng)
                })
            })
            .collect();
        FeaturePyramid::new(id, label, levels).unwrap()
    }

    #[test]
    fn feature_pyramid_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let pyramid = random_feature_pyramid("s0", 2, 1);
        save_feature_pyramid(&pyramid, dir.path()).unwrap();
        let loaded = load_feature_pyramid(dir.path()).unwrap();
        assert_eq!(loaded, pyramid);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let pyramid = random_feature_pyramid("s0", 2, 1);
        save_feature_pyramid(&pyramid, dir_a.path()).unwrap();
        save_feature_pyramid(&pyramid, dir_b.path()).unwrap();
        for file in ["manifest.toml", "level_1.bin", "level_2.bin"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(file)).unwrap(),
                std::fs::read(dir_b.path().join(file)).unwrap(),
                "{file} differs between identical saves"
            );
        }
    }

    #[test]
    fn patch_pyramid_round_trips() {
        let dir = tempdir().unwrap();
        let mut rng = Seed(2).stream(StreamId::Scratch(0));
        let dims = PatchDims {
            height: 2,
            width: 2,
            channels: 1,
        };
        let levels = (0..2)
            .map(|m| {
                Array2::from_shape_simple_fn((4 * 4usize.pow(m), 4), || {
                    f32::standard_normal(&mut rng)
                })
            })
            .collect();
        let pyramid = PatchPyramid::new("p1", 0, dims, levels).unwrap();
        save_patch_pyramid(&pyramid, dir.path()).unwrap();
        assert_eq!(load_patch_pyramid(dir.path()).unwrap(), pyramid);
    }

    #[test]
    fn truncated_level_file_reports_short_read() {
        let dir = tempdir().unwrap();
        let pyramid = random_feature_pyramid("s0", 0, 3);
        save_feature_pyramid(&pyramid, dir.path()).unwrap();
        let victim = dir.path().join("level_2.bin");
        let bytes = std::fs::read(&victim).unwrap();
        std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
        match load_feature_pyramid(dir.path()) {
            Err(FormatError::ShortRead { path, expected, found }) => {
                assert_eq!(path, victim);
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(found, bytes.len() as u64 - 4);
            }
            other => panic!("expected short read, got {other:?}"),
        }
    }

    #[test]
    fn manifest_violating_level_ratio_is_rejected() {
        let dir = tempdir().unwrap();
        let manifest = r#"
version = 1
kind = "features"
id = "bad"
label = 0
dtype = "f32le"
level_rows = [4, 10]
feature_dim = 2
"#;
        std::fs::write(dir.path().join("manifest.toml"), manifest).unwrap();
        std::fs::write(dir.path().join("level_1.bin"), vec![0u8; 4 * 2 * 4]).unwrap();
        std::fs::write(dir.path().join("level_2.bin"), vec![0u8; 10 * 2 * 4]).unwrap();
        match load_feature_pyramid(dir.path()) {
            Err(FormatError::Pyramid(PyramidError::BadRatio { level: 1, rows: 10, expected: 16 })) => {}
            other => panic!("expected level-ratio error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_and_dtype_are_rejected() {
        let dir = tempdir().unwrap();
        let pyramid = random_feature_pyramid("s0", 0, 4);
        save_feature_pyramid(&pyramid, dir.path()).unwrap();
        let path = dir.path().join("manifest.toml");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("version = 1", "version = 9")).unwrap();
        assert!(matches!(
            load_feature_pyramid(dir.path()),
            Err(FormatError::Version { found: 9, supported: 1, .. })
        ));
        std::fs::write(
            &path,
            text.replace("dtype = \"f32le\"", "dtype = \"f64be\""),
        )
        .unwrap();
        assert!(matches!(
            load_feature_pyramid(dir.path()),
            Err(FormatError::Dtype { .. })
        ));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let pyramid = random_feature_pyramid("s0", 0, 5);
        save_feature_pyramid(&pyramid, dir.path()).unwrap();
        assert!(matches!(
            load_patch_pyramid(dir.path()),
            Err(FormatError::Kind { .. })
        ));
    }

    #[test]
    fn dataset_index_round_trips_and_filters_splits() {
        let dir = tempdir().unwrap();
        let index = DatasetIndex::new(
            3,
            vec![
                SampleRecord {
                    id: "a".into(),
                    label: 0,
                    split: Split::Train,
                    informative_parents: vec![3, 7],
                },
                SampleRecord {
                    id: "b".into(),
                    label: 2,
                    split: Split::Test,
                    informative_parents: vec![0, 1],
                },
            ],
        );
        save_dataset_index(&index, dir.path()).unwrap();
        let loaded = load_dataset_index(dir.path()).unwrap();
        assert_eq!(loaded, index);
        let train: Vec<_> = loaded.in_split(Split::Train).map(|s| s.id.as_str()).collect();
        assert_eq!(train, vec!["a"]);
    }

    #[test]
    fn dataset_load_returns_samples_in_index_order() {
        let dir = tempdir().unwrap();
        let first = random_feature_pyramid("first", 1, 6);
        let second = random_feature_pyramid("second", 0, 7);
        save_feature_pyramid(&first, &dir.path().join("first")).unwrap();
        save_feature_pyramid(&second, &dir.path().join("second")).unwrap();
        let index = DatasetIndex::new(
            2,
            vec![
                SampleRecord {
                    id: "second".into(),
                    label: 0,
                    split: Split::Train,
                    informative_parents: vec![],
                },
                SampleRecord {
                    id: "first".into(),
                    label: 1,
                    split: Split::Val,
                    informative_parents: vec![],
                },
            ],
        );
        save_dataset_index(&index, dir.path()).unwrap();
        let (loaded_index, pyramids) = load_feature_dataset(dir.path()).unwrap();
        assert_eq!(loaded_index, index);
        assert_eq!(pyramids[0].id(), "second");
        assert_eq!(pyramids[1].id(), "first");
    }

    #[test]
    fn label_disagreement_is_reported() {
        let dir = tempdir().unwrap();
        let pyramid = random_feature_pyramid("x", 1, 8);
        save_feature_pyramid(&pyramid, &dir.path().join("x")).unwrap();
        let index = DatasetIndex::new(
            2,
            vec![SampleRecord {
                id: "x".into(),
                label: 0,
                split: Split::Train,
                informative_parents: vec![],
            }],
        );
        save_dataset_index(&index, dir.path()).unwrap();
        assert!(matches!(
            load_feature_dataset(dir.path()),
            Err(FormatError::Inconsistent { .. })
        ));
    }

    fn small_model(seed: u64) -> ZoomModel<f32> {
        let mut rng = Seed(seed).stream(StreamId::ModelInit);
        let mut config = ZoomConfig::new(2, 6, 3, vec![2]);
        config.attn_hidden = 3;
        ZoomModel::init(config, &mut rng).unwrap()
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let model = small_model(9);
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.config, model.config);
        for ((name_a, a), (name_b, b)) in
            loaded.named_tensors().iter().zip(model.named_tensors().iter())
        {
            assert_eq!(name_a, name_b);
            assert_eq!(a, b, "tensor {name_a} changed across the round trip");
        }
    }

    #[test]
    fn checkpoint_saves_are_deterministic() {
        let dir_a = tempdir().unwrap();
        let dir_b = tempdir().unwrap();
        let model = small_model(10);
        save_checkpoint(&model, dir_a.path()).unwrap();
        save_checkpoint(&model, dir_b.path()).unwrap();
        for file in ["checkpoint.toml", "params.bin"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(file)).unwrap(),
                std::fs::read(dir_b.path().join(file)).unwrap(),
                "{file} differs between identical saves"
            );
        }
    }

    #[test]
    fn truncated_checkpoint_blob_is_rejected() {
        let dir = tempdir().unwrap();
        let model = small_model(11);
        save_checkpoint(&model, dir.path()).unwrap();
        let blob = dir.path().join("params.bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(FormatError::ShortRead { .. })
        ));
    }

    #[test]
    fn tensor_layout_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let model = small_model(12);
        save_checkpoint(&model, dir.path()).unwrap();
        let path = dir.path().join("checkpoint.toml");
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("pool_attn.0.v", "pool_attn.9.v")).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(FormatError::Layout { .. })
        ));
    }
}
