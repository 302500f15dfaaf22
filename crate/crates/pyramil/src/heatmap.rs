//! Spatial layout of pyramid patches and attention-map rendering.
//!
//! Patch indices follow quadtree order: parent `p`'s children at the next
//! level are `4p .. 4p+4`, laid out as the four quadrants (top-left,
//! top-right, bottom-left, bottom-right) of the parent's cell. The
//! coarsest level is arranged row-major in a near-square grid. Heatmaps
//! are written as binary portable graymaps (P5), which are dependency-free
//! and byte-exactly reproducible.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("patch index {index} out of range for level {level} ({available} patches)")]
    IndexOutOfRange {
        index: usize,
        level: usize,
        available: usize,
    },
    #[error("attention weight for patch {index} is not finite")]
    NonFiniteWeight { index: usize },
    #[error("coarsest level must have at least one patch")]
    EmptyLevel,
    #[error("scale factor must be at least 1")]
    ZeroScale,
}

/// Row-major grid shape of the coarsest level: the narrowest near-square
/// grid that fits `n1` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

pub fn level0_grid(n1: usize) -> Result<GridLayout, HeatmapError> {
    if n1 == 0 {
        return Err(HeatmapError::EmptyLevel);
    }
    let cols = (n1 as f64).sqrt().ceil() as usize;
    let rows = n1.div_ceil(cols);
    Ok(GridLayout { rows, cols })
}

/// Pixel grid position of patch `index` at `level` (0 = coarsest), where
/// each level doubles the grid along both axes. The index's base-4 digits
/// below the coarsest level select quadrants from the top of the subtree
/// downward.
pub fn patch_position(
    index: usize,
    level: usize,
    layout: GridLayout,
) -> Result<(usize, usize), HeatmapError> {
    let n1 = layout.rows * layout.cols;
    let parents = index >> (2 * level);
    if parents >= n1 {
        return Err(HeatmapError::IndexOutOfRange {
            index,
            level,
            available: n1 << (2 * level),
        });
    }
    let mut row = parents / layout.cols;
    let mut col = parents % layout.cols;
    for j in (0..level).rev() {
        let digit = (index >> (2 * j)) & 3;
        row = 2 * row + (digit >> 1);
        col = 2 * col + (digit & 1);
    }
    Ok((row, col))
}

/// A grayscale image with one byte per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Heatmap {
    /// Serializes as a binary portable graymap (magic `P5`, max value 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.pixels);
        bytes
    }

    /// Integer upscaling by pixel replication, for viewability without
    /// touching the values.
    pub fn scaled(&self, factor: usize) -> Result<Heatmap, HeatmapError> {
        if factor == 0 {
            return Err(HeatmapError::ZeroScale);
        }
        let width = self.width * factor;
        let height = self.height * factor;
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(self.pixels[(r / factor) * self.width + c / factor]);
            }
        }
        Ok(Heatmap {
            width,
            height,
            pixels,
        })
    }
}

/// Renders per-patch attention onto the level's grid. Weights are
/// normalized by their maximum so the brightest patch is white; cells
/// without a weight (outside the inference working set) stay black.
pub fn render_attention(
    n1: usize,
    level: usize,
    weights: &[(usize, f32)],
) -> Result<Heatmap, HeatmapError> {
    let layout = level0_grid(n1)?;
    let width = layout.cols << level;
    let height = layout.rows << level;
    let mut values = vec![0.0f64; width * height];
    let mut max = 0.0f64;
    for &(index, weight) in weights {
        if !weight.is_finite() {
            return Err(HeatmapError::NonFiniteWeight { index });
        }
        let (row, col) = patch_position(index, level, layout)?;
        let v = f64::from(weight).max(0.0);
        values[row * width + col] = v;
        max = max.max(v);
    }
    let pixels = values
        .iter()
        .map(|&v| {
            if max > 0.0 {
                (v / max * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(Heatmap {
        width,
        height,
        pixels,
    })
}

/// Renders the attention CSV: one row per scored patch with its grid
/// position, in patch-index order.
pub fn attention_csv(
    n1: usize,
    level: usize,
    weights: &[(usize, f32)],
) -> Result<String, HeatmapError> {
    let layout = level0_grid(n1)?;
    let mut rows: Vec<(usize, f32)> = weights.to_vec();
    rows.sort_by_key(|(index, _)| *index);
    let mut out = String::from("patch_index,row,col,weight\n");
    for (index, weight) in rows {
        if !weight.is_finite() {
            return Err(HeatmapError::NonFiniteWeight { index });
        }
        let (row, col) = patch_position(index, level, layout)?;
        writeln!(out, "{index},{row},{col},{weight}").expect("string writes cannot fail");
    }
    Ok(out)
}
