//! Multi-magnification containers and the parent/child index contract.
//!
//! A pyramid holds one array per magnification level, ordered from coarsest
//! (level index 0) to finest (level index `M - 1`). Adjacent levels are tied
//! by a fixed branching factor of four: row `i` at level `m` covers rows
//! `4 * i .. 4 * i + 4` at level `m + 1`, stored contiguously and in parent
//! order. All selection, expansion, and lazy-encoding logic in the crate
//! leans on that contract, so it is validated at construction time.

use ndarray::Array2;
use std::ops::Range;
use thiserror::Error;

/// Children per parent between adjacent magnification levels.
pub const BRANCHING: usize = 4;

/// Violations of the pyramid shape contract.
#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("pyramid must have at least one level")]
    Empty,
    #[error("level {level} has no rows")]
    EmptyLevel { level: usize },
    #[error("level {level} has {rows} rows; expected {expected} (4x the previous level)")]
    BadRatio {
        level: usize,
        rows: usize,
        expected: usize,
    },
    #[error("level {level} has row width {width}; expected {expected} to match level 0")]
    MixedWidth {
        level: usize,
        width: usize,
        expected: usize,
    },
    #[error("non-finite value at level {level}, row {row}, column {col}")]
    NonFinite {
        level: usize,
        row: usize,
        col: usize,
    },
    #[error("level index {level} out of range for a pyramid with {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("parent index {parent} out of range at level {level} with {rows} rows")]
    ParentOutOfRange {
        parent: usize,
        level: usize,
        rows: usize,
    },
    #[error("patch width mismatch: level rows have {width} values but patch dims give {expected}")]
    PatchDims { width: usize, expected: usize },
}

/// Row range covered by `parent` after descending `level_gap` levels.
///
/// With a branching factor of four, a parent at row `i` covers rows
/// `i * 4^gap .. (i + 1) * 4^gap` at the deeper level. A gap of zero is the
/// patch itself. Bounds against a concrete pyramid are checked by
/// [`FeaturePyramid::children_of`] / [`PatchPyramid::children_of`]; this is
/// the raw arithmetic.
pub fn child_range(parent: usize, level_gap: u32) -> Range<usize> {
    let span = BRANCHING.pow(level_gap);
    parent * span..(parent + 1) * span
}

fn validate_levels(levels: &[Array2<f32>]) -> Result<(), PyramidError> {
    if levels.is_empty() {
        return Err(PyramidError::Empty);
    }
    let width = levels[0].ncols();
    for (m, level) in levels.iter().enumerate() {
        if level.nrows() == 0 {
            return Err(PyramidError::EmptyLevel { level: m });
        }
        if level.ncols() != width {
            return Err(PyramidError::MixedWidth {
                level: m,
                width: level.ncols(),
                expected: width,
            });
        }
        if m > 0 {
            let expected = levels[m - 1].nrows() * BRANCHING;
            if level.nrows() != expected {
                return Err(PyramidError::BadRatio {
                    level: m,
                    rows: level.nrows(),
                    expected,
                });
            }
        }
        for ((row, col), &value) in level.indexed_iter() {
            if !value.is_finite() {
                return Err(PyramidError::NonFinite { level: m, row, col });
            }
        }
    }
    Ok(())
}

fn checked_child_range(
    levels: &[Array2<f32>],
    level: usize,
    parent: usize,
    level_gap: u32,
) -> Result<Range<usize>, PyramidError> {
    let target = level + level_gap as usize;
    if target >= levels.len() {
        return Err(PyramidError::LevelOutOfRange {
            level: target,
            levels: levels.len(),
        });
    }
    let rows = levels[level].nrows();
    if parent >= rows {
        return Err(PyramidError::ParentOutOfRange {
            parent,
            level,
            rows,
        });
    }
    Ok(child_range(parent, level_gap))
}

/// Precomputed per-patch feature vectors at every magnification level.
///
/// Level `m` is an `[N_m, D]` matrix; row `i` is the embedding of patch `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    id: String,
    label: usize,
    levels: Vec<Array2<f32>>,
}

impl FeaturePyramid {
    /// Builds a pyramid after checking the shape contract: at least one
    /// level, equal feature width everywhere, a 4x row ratio between adjacent
    /// levels, and finite values only.
    pub fn new(
        id: impl Into<String>,
        label: usize,
        levels: Vec<Array2<f32>>,
    ) -> Result<Self, PyramidError> {
        validate_levels(&levels)?;
        Ok(Self {
            id: id.into(),
            label,
            levels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.levels[0].ncols()
    }

    /// Rows per level, coarsest first.
    pub fn level_rows(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.nrows()).collect()
    }

    /// Feature matrix at `level` (0 = coarsest). Panics if out of range.
    pub fn level(&self, level: usize) -> &Array2<f32> {
        &self.levels[level]
    }

    pub fn levels(&self) -> &[Array2<f32>] {
        &self.levels
    }

    /// Validated child row range for `parent` at `level`, descending `level_gap`.
    pub fn children_of(
        &self,
        level: usize,
        parent: usize,
        level_gap: u32,
    ) -> Result<Range<usize>, PyramidError> {
        checked_child_range(&self.levels, level, parent, level_gap)
    }
}

/// Height, width, and channel count of one raw patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PatchDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl PatchDims {
    /// Values per flattened patch.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw patch pixels at every magnification level.
///
/// Level `m` is an `[N_m, H * W * C]` matrix; row `i` is patch `i` flattened
/// in row-major height, width, channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPyramid {
    id: String,
    label: usize,
    dims: PatchDims,
    levels: Vec<Array2<f32>>,
}

impl PatchPyramid {
    /// Builds a patch pyramid, checking the same shape contract as
    /// [`FeaturePyramid::new`] plus agreement between row width and `dims`.
    pub fn new(
        id: impl Into<String>,
        label: usize,
        dims: PatchDims,
        levels: Vec<Array2<f32>>,
    ) -> Result<Self, PyramidError> {
        validate_levels(&levels)?;
        if levels[0].ncols() != dims.len() {
            return Err(PyramidError::PatchDims {
                width: levels[0].ncols(),
                expected: dims.len(),
            });
        }
        Ok(Self {
            id: id.into(),
            label,
            dims,
            levels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn dims(&self) -> PatchDims {
        self.dims
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_rows(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.nrows()).collect()
    }

    /// Flattened patches at `level` (0 = coarsest). Panics if out of range.
    pub fn level(&self, level: usize) -> &Array2<f32> {
        &self.levels[level]
    }

    pub fn levels(&self) -> &[Array2<f32>] {
        &self.levels
    }

    /// Validated child row range for `parent` at `level`, descending `level_gap`.
    pub fn children_of(
        &self,
        level: usize,
        parent: usize,
        level_gap: u32,
    ) -> Result<Range<usize>, PyramidError> {
        checked_child_range(&self.levels, level, parent, level_gap)
    }
}
