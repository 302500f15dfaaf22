//! Synthetic pyramid generator with planted multi-scale signals, plus a
//! deterministic patch encoder.
//!
//! Each sample is a patch pyramid of Gaussian texture. A few level-0
//! parents are "informative": they carry a class-agnostic localization cue,
//! and their finest-level descendants carry one of `C` mutually orthogonal
//! class motifs. Because the cue says *where* to look but not *what class*,
//! and the motif is invisible at low magnification, a model can only solve
//! the task by learning to zoom into the cued parents — which is exactly
//! the capability the ablation harness measures.
//!
//! Intermediate levels carry no signal, so the default zoom schedule keeps
//! all children after the first selection step (a pass-through) rather than
//! winnowing on noise.

use crate::io::{
    save_dataset_index, save_patch_pyramid, DatasetIndex, FormatError, SampleRecord, Split,
};
use crate::model::{EncodeError, PatchEncoder};
use crate::pyramid::{child_range, PatchDims, PatchPyramid, BRANCHING};
use crate::real::Real;
use crate::rng::{sorted_subset, Seed, StreamId};
use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("informative fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("signal strength {0} must be non-negative")]
    NegativeStrength(f64),
    #[error("noise standard deviation {0} must be non-negative")]
    NegativeNoise(f64),
    #[error("patch has {len} values; {needed} orthogonal patterns need at least that many")]
    PatchTooSmall { len: usize, needed: usize },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("pyramid geometry invalid: {0} levels or {1} first-level rows")]
    BadGeometry(usize, usize),
    #[error("every split needs at least one sample (train {train}, val {val}, test {test})")]
    EmptySplit {
        train: usize,
        val: usize,
        test: usize,
    },
}

/// Generator settings. The defaults give the desk-scale task used across
/// the examples: 16 coarse patches, 3 levels, 3 classes, 2 informative
/// parents per sample, and a 600/100/300 stratified split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Patches at the coarsest level (`N_1`).
    pub first_level_rows: usize,
    /// Pyramid depth `M`.
    pub num_levels: usize,
    /// Classes `C`.
    pub num_classes: usize,
    /// Fraction of level-0 parents carrying signal; the count is the
    /// ceiling of `fraction * N_1`.
    pub informative_fraction: f64,
    /// Raw patch shape.
    pub patch: PatchDims,
    /// Encoder output width `D`.
    pub feature_dim: usize,
    /// Amplitude of the class-agnostic cue at level 0.
    pub cue_strength: f64,
    /// Amplitude of the class motif on finest-level descendants.
    pub motif_strength: f64,
    /// Standard deviation of the background texture.
    pub noise_std: f64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            first_level_rows: 16,
            num_levels: 3,
            num_classes: 3,
            informative_fraction: 2.0 / 16.0,
            patch: PatchDims {
                height: 8,
                width: 8,
                channels: 1,
            },
            feature_dim: 64,
            cue_strength: 3.0,
            motif_strength: 3.0,
            noise_std: 0.5,
            train_samples: 600,
            val_samples: 100,
            test_samples: 300,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return Err(SynthError::BadFraction(self.informative_fraction));
        }
        for strength in [self.cue_strength, self.motif_strength] {
            if strength < 0.0 {
                return Err(SynthError::NegativeStrength(strength));
            }
        }
        if self.noise_std < 0.0 {
            return Err(SynthError::NegativeNoise(self.noise_std));
        }
        if self.num_classes < 2 {
            return Err(SynthError::TooFewClasses(self.num_classes));
        }
        if self.patch.len() < self.num_classes + 1 {
            return Err(SynthError::PatchTooSmall {
                len: self.patch.len(),
                needed: self.num_classes + 1,
            });
        }
        if self.num_levels == 0 || self.first_level_rows == 0 || self.feature_dim == 0 {
            return Err(SynthError::BadGeometry(
                self.num_levels,
                self.first_level_rows,
            ));
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 {
            return Err(SynthError::EmptySplit {
                train: self.train_samples,
                val: self.val_samples,
                test: self.test_samples,
            });
        }
        Ok(())
    }

    /// Informative parents per sample: `ceil(fraction * N_1)`, at most `N_1`.
    pub fn informative_count(&self) -> usize {
        ((self.informative_fraction * self.first_level_rows as f64).ceil() as usize)
            .min(self.first_level_rows)
    }

    pub fn total_samples(&self) -> usize {
        self.train_samples + self.val_samples + self.test_samples
    }
}

/// The planted patterns: one cue plus `C` class motifs, all unit-norm and
/// mutually orthogonal in patch space.
#[derive(Debug, Clone)]
pub struct SignalPatterns {
    /// Class-agnostic localization cue, `[P]`.
    pub cue: Array1<f32>,
    /// Class motifs, `[C, P]`.
    pub motifs: Array2<f32>,
}

/// Draws `C + 1` Gaussian vectors and orthonormalizes them (modified
/// Gram-Schmidt in 64-bit). Row 0 becomes the cue, the rest the motifs.
pub fn signal_patterns(config: &SynthConfig) -> Result<SignalPatterns, SynthError> {
    config.validate()?;
    let p = config.patch.len();
    let count = config.num_classes + 1;
    let mut rng = Seed(config.seed).stream(StreamId::Patterns);
    let mut raw: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..p).map(|_| f64::standard_normal(&mut rng)).collect())
        .collect();
    for i in 0..count {
        for j in 0..i {
            let dot: f64 = raw[i].iter().zip(&raw[j]).map(|(a, b)| a * b).sum();
            for q in 0..p {
                raw[i][q] -= dot * raw[j][q];
            }
        }
        let norm: f64 = raw[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            norm > 1e-8,
            "degenerate pattern draw; Gaussian vectors are independent almost surely"
        );
        for v in &mut raw[i] {
            *v /= norm;
        }
    }
    let cue = Array1::from_iter(raw[0].iter().map(|&v| v as f32));
    let mut motifs = Array2::zeros((config.num_classes, p));
    for c in 0..config.num_classes {
        for q in 0..p {
            motifs[(c, q)] = raw[c + 1][q] as f32;
        }
    }
    Ok(SignalPatterns { cue, motifs })
}

/// A generated dataset: patch pyramids plus the index describing labels,
/// splits, and where the signal was planted.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub index: DatasetIndex,
    pub pyramids: Vec<PatchPyramid>,
}

/// Generates the full dataset. Samples are ordered train, then val, then
/// test; within a split, labels cycle through the classes so each split is
/// stratified to within one sample. Each sample draws from its own RNG
/// stream, so generation parallelizes without changing the output.
pub fn generate_dataset(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let patterns = signal_patterns(config)?;

    let mut records = Vec::with_capacity(config.total_samples());
    let mut metadata = Vec::with_capacity(config.total_samples());
    let mut global = 0u64;
    for (split, count) in [
        (Split::Train, config.train_samples),
        (Split::Val, config.val_samples),
        (Split::Test, config.test_samples),
    ] {
        for i in 0..count {
            let label = i % config.num_classes;
            let id = format!("{split}_{i:04}");
            metadata.push((global, id, label, split));
            global += 1;
        }
    }

    let generated: Vec<(PatchPyramid, Vec<usize>)> = metadata
        .par_iter()
        .map(|(stream_index, id, label, _)| {
            generate_sample(config, &patterns, *stream_index, id, *label)
        })
        .collect();

    let mut pyramids = Vec::with_capacity(generated.len());
    for ((_, id, label, split), (pyramid, parents)) in metadata.iter().zip(generated) {
        records.push(SampleRecord {
            id: id.clone(),
            label: *label,
            split: *split,
            informative_parents: parents,
        });
        pyramids.push(pyramid);
    }

    Ok(SynthDataset {
        config: config.clone(),
        index: DatasetIndex::new(config.num_classes, records),
        pyramids,
    })
}

/// Builds one sample. Draw order on the sample's stream: informative
/// parents, then the texture of every level coarsest-first (row-major).
fn generate_sample(
    config: &SynthConfig,
    patterns: &SignalPatterns,
    stream_index: u64,
    id: &str,
    label: usize,
) -> (PatchPyramid, Vec<usize>) {
    let mut rng = Seed(config.seed).stream(StreamId::Sample(stream_index));
    let p = config.patch.len();
    let parents = sorted_subset(
        config.first_level_rows,
        config.informative_count(),
        &mut rng,
    );

    let noise = config.noise_std as f32;
    let mut levels: Vec<Array2<f32>> = (0..config.num_levels)
        .map(|m| {
            let rows = config.first_level_rows * BRANCHING.pow(m as u32);
            Array2::from_shape_simple_fn((rows, p), || noise * f32::standard_normal(&mut rng))
        })
        .collect();

    let cue = config.cue_strength as f32;
    for &parent in &parents {
        let mut row = levels[0].row_mut(parent);
        row.zip_mut_with(&patterns.cue, |x, &c| *x += cue * c);
    }
    if config.num_levels > 1 {
        let gap = (config.num_levels - 1) as u32;
        let motif = patterns.motifs.row(label);
        let strength = config.motif_strength as f32;
        let finest = levels.last_mut().expect("at least one level");
        for &parent in &parents {
            for child in child_range(parent, gap) {
                let mut row = finest.row_mut(child);
                row.zip_mut_with(&motif, |x, &m| *x += strength * m);
            }
        }
    }

    let pyramid = PatchPyramid::new(id, label, config.patch, levels)
        .expect("generator emits structurally valid pyramids");
    (pyramid, parents)
}

/// Deterministic patch encoder: a seeded random projection followed by
/// tanh. Stands in for a pretrained CNN at desk scale.
#[derive(Debug, Clone)]
pub struct SynthEncoder {
    weights: Array2<f32>,
}

impl SynthEncoder {
    /// Rebuilds the encoder for a generator config (same seed, same
    /// weights — checkpoints and datasets only need to carry the config).
    pub fn from_config(config: &SynthConfig) -> Self {
        let p = config.patch.len();
        let bound = 1.0 / (p as f64).sqrt();
        let mut rng = Seed(config.seed).stream(StreamId::Encoder);
        let weights = Array2::from_shape_simple_fn((config.feature_dim, p), || {
            f32::symmetric_uniform(&mut rng, bound as f32)
        });
        Self { weights }
    }
}

impl PatchEncoder for SynthEncoder {
    fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn patch_len(&self) -> usize {
        self.weights.ncols()
    }

    fn flops_per_patch(&self) -> u64 {
        (2 * self.weights.ncols() * self.weights.nrows() + self.weights.nrows()) as u64
    }

    fn encode(&self, patches: ArrayView2<f32>) -> Result<Array2<f32>, EncodeError> {
        if patches.ncols() != self.weights.ncols() {
            return Err(EncodeError {
                reason: format!(
                    "patch width {} does not match encoder input width {}",
                    patches.ncols(),
                    self.weights.ncols()
                ),
            });
        }
        Ok(patches.dot(&self.weights.t()).mapv(f32::tanh))
    }
}

/// Encodes every level of a patch pyramid into a feature pyramid.
pub fn encode_pyramid(
    pyramid: &PatchPyramid,
    encoder: &dyn PatchEncoder,
) -> Result<crate::pyramid::FeaturePyramid, EncodeError> {
    let levels = pyramid
        .levels()
        .iter()
        .map(|l| encoder.encode(l.view()))
        .collect::<Result<Vec<_>, _>>()?;
    crate::pyramid::FeaturePyramid::new(pyramid.id(), pyramid.label(), levels).map_err(|e| {
        EncodeError {
            reason: format!("encoded pyramid failed validation: {e}"),
        }
    })
}

/// Encodes a whole dataset in parallel, preserving order.
pub fn encode_dataset(
    pyramids: &[PatchPyramid],
    encoder: &dyn PatchEncoder,
) -> Result<Vec<crate::pyramid::FeaturePyramid>, EncodeError> {
    pyramids
        .par_iter()
        .map(|p| encode_pyramid(p, encoder))
        .collect()
}

/// Writes the dataset directory: `index.toml`, `generator.toml` (the
/// config, from which the encoder is reconstructed), and one pyramid
/// directory per sample.
pub fn save_dataset(dataset: &SynthDataset, root: &Path) -> Result<(), FormatError> {
    save_dataset_index(&dataset.index, root)?;
    let generator_path = root.join("generator.toml");
    let text = toml::to_string_pretty(&dataset.config)?;
    fs::write(&generator_path, text).map_err(|source| FormatError::Io {
        path: generator_path.clone(),
        source,
    })?;
    for pyramid in &dataset.pyramids {
        save_patch_pyramid(pyramid, &root.join(pyramid.id()))?;
    }
    Ok(())
}

/// Reads back the generator config written by [`save_dataset`].
pub fn load_generator_config(root: &Path) -> Result<SynthConfig, FormatError> {
    let path = root.join("generator.toml");
    let text = fs::read_to_string(&path).map_err(|source| FormatError::Io {
        path: path.clone(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| FormatError::Parse {
        path,
        source: Box::new(source),
    })
}
