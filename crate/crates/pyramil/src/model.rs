//! The zoom model: per-level gated attention, differentiable zoom
//! selection between levels, and a two-layer classifier head.
//!
//! Two execution modes share one parameter set:
//!
//! * **Training** (`train_forward` / `train_backward`): every level's full
//!   feature matrix is available. Selection uses the smoothed Top-K, so the
//!   "selected" rows at deeper levels are convex mixtures of true rows and
//!   gradients flow back into the selection scores.
//! * **Inference** (`infer`): selection is a hard Top-K. Only the coarsest
//!   level is read in full; deeper levels are gathered (or lazily encoded
//!   from raw patches) just for the children of selected parents.
//!
//! Levels are indexed from 0 (coarsest) to `M - 1` (finest). Zoom step `j`
//! scores the working set at level `j` and selects `schedule[j]` rows of it;
//! their children form the working set at level `j + 1`.

use crate::attention::{ga_backward, ga_forward, AttentionError, GaOutput, GatedAttention};
use crate::bench::{aggregation_flops, classifier_flops, ga_flops, FlopLedger};
use crate::pyramid::{child_range, FeaturePyramid, PatchPyramid, BRANCHING};
use crate::real::Real;
use crate::topk::{
    collapse_expanded_grad, expand_indicator, hard_topk, perturbed_topk_backward,
    perturbed_topk_forward_with_noise, select_rows, IndicatorMatrix, TopKCache, TopKConfig,
    TopKError,
};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How zoom targets are chosen from the selection scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Smoothed Top-K during training, hard Top-K at inference.
    DiffTopK,
    /// Hard Top-K in both modes; no gradient reaches the selection scores.
    NonDiffTopK,
    /// Uniform random selection, resampled per training forward and fixed
    /// per sample at inference.
    RandomK,
}

/// Whether selection has its own attention head per level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Separate heads: one pools each level, one scores the zoom targets.
    Dual,
    /// One head per level serves both pooling and zoom scoring.
    Single,
}

/// How per-level pooled embeddings combine into the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Elementwise sum across levels.
    Sum,
    /// Concatenation, widening the classifier input to `M * D`.
    Concat,
    /// Only the finest level's pooled embedding.
    HighestOnly,
}

/// Model errors: invalid configuration, mismatched inputs, or failures
/// propagated from the kernels.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model needs at least one level, got {0}")]
    NoLevels(usize),
    #[error("classification needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("feature dim and attention hidden dim must be positive")]
    ZeroWidth,
    #[error("zoom schedule has {got} entries; expected {expected} (levels - 1)")]
    ScheduleLength { got: usize, expected: usize },
    #[error("schedule step {step} selects {k} of at most {available} working rows")]
    ScheduleTooWide {
        step: usize,
        k: usize,
        available: usize,
    },
    #[error("dropout probability {0} outside [0, 1)")]
    BadDropout(f64),
    #[error("sigma {sigma} or sample count {samples} invalid for smoothed selection")]
    BadSmoothing { sigma: f64, samples: usize },
    #[error("input has {got} levels but the model expects {expected}")]
    LevelCount { expected: usize, got: usize },
    #[error("input feature width {got} does not match model width {expected}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("level {level} has {rows} rows; expected {expected} (4x the previous level)")]
    LevelRatio {
        level: usize,
        rows: usize,
        expected: usize,
    },
    #[error("first level has {rows} rows; zoom step 0 needs at least {k}")]
    FirstLevelTooSmall { rows: usize, k: usize },
    #[error("encoder produces width {got}, model expects {expected}")]
    EncoderWidth { expected: usize, got: usize },
    #[error("level {level} was not evaluated (model has {levels} levels)")]
    LevelNotEvaluated { level: usize, levels: usize },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    TopK(#[from] TopKError),
    #[error("encoding failed at level {level}")]
    Encode {
        level: usize,
        #[source]
        source: EncodeError,
    },
}

/// Failure reported by a patch encoder.
#[derive(Debug, Error)]
#[error("{reason}")]
pub struct EncodeError {
    pub reason: String,
}

/// Maps raw patches to feature vectors. Implemented by the synthetic
/// encoder; inference uses it to featurize only the patches it zooms into.
pub trait PatchEncoder: Send + Sync {
    /// Width of produced feature vectors.
    fn feature_dim(&self) -> usize;
    /// Expected width of flattened input patches.
    fn patch_len(&self) -> usize;
    /// Arithmetic cost of encoding one patch, in FLOPs.
    fn flops_per_patch(&self) -> u64;
    /// Encodes a batch of flattened patches (rows) into features (rows).
    fn encode(&self, patches: ArrayView2<f32>) -> Result<Array2<f32>, EncodeError>;
}

/// Hyperparameters and architecture switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoomConfig {
    /// Number of magnification levels `M`.
    pub num_levels: usize,
    /// Feature width `D`.
    pub feature_dim: usize,
    /// Attention hidden width `L`.
    pub attn_hidden: usize,
    /// Output classes `C`.
    pub num_classes: usize,
    /// Rows selected at each zoom step, length `M - 1`.
    pub schedule: Vec<usize>,
    /// Dropout probability on the classifier hidden layer (inverted scaling).
    pub dropout: f64,
    /// Noise scale of the smoothed Top-K.
    pub sigma: f64,
    /// Monte-Carlo samples of the smoothed Top-K.
    pub noise_samples: usize,
    pub selection: SelectionMode,
    pub attention: AttentionMode,
    pub aggregation: Aggregation,
}

impl ZoomConfig {
    /// Baseline configuration: dual attention, differentiable selection,
    /// sum aggregation, dropout 0.25, smoothing `sigma = 0.05` with 100
    /// samples, and attention hidden width `D / 2`.
    pub fn new(
        num_levels: usize,
        feature_dim: usize,
        num_classes: usize,
        schedule: Vec<usize>,
    ) -> Self {
        Self {
            num_levels,
            feature_dim,
            attn_hidden: (feature_dim / 2).max(1),
            num_classes,
            schedule,
            dropout: 0.25,
            sigma: 0.05,
            noise_samples: 100,
            selection: SelectionMode::DiffTopK,
            attention: AttentionMode::Dual,
            aggregation: Aggregation::Sum,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_levels == 0 {
            return Err(ModelError::NoLevels(0));
        }
        if self.num_classes < 2 {
            return Err(ModelError::TooFewClasses(self.num_classes));
        }
        if self.feature_dim == 0 || self.attn_hidden == 0 {
            return Err(ModelError::ZeroWidth);
        }
        if self.schedule.len() != self.num_levels - 1 {
            return Err(ModelError::ScheduleLength {
                got: self.schedule.len(),
                expected: self.num_levels - 1,
            });
        }
        for (step, &k) in self.schedule.iter().enumerate() {
            // Step 0 is checked against the pyramid at run time; deeper steps
            // draw from the 4 * K children of the previous step.
            let available = if step == 0 {
                usize::MAX
            } else {
                BRANCHING * self.schedule[step - 1]
            };
            if k == 0 || k > available {
                return Err(ModelError::ScheduleTooWide {
                    step,
                    k,
                    available,
                });
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::BadDropout(self.dropout));
        }
        if !(self.sigma > 0.0) || self.noise_samples == 0 {
            return Err(ModelError::BadSmoothing {
                sigma: self.sigma,
                samples: self.noise_samples,
            });
        }
        Ok(())
    }

    /// Classifier input width: `D`, or `M * D` when concatenating.
    pub fn classifier_input_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.num_levels * self.feature_dim,
            _ => self.feature_dim,
        }
    }

    /// Classifier hidden width, `max(D / 2, 1)`.
    pub fn classifier_hidden_dim(&self) -> usize {
        (self.feature_dim / 2).max(1)
    }

    /// Smoothed Top-K settings for zoom step `step`.
    pub fn topk_config(&self, step: usize) -> TopKConfig {
        TopKConfig {
            k: self.schedule[step],
            sigma: self.sigma,
            num_samples: self.noise_samples,
        }
    }

    /// Working-set size at each level for a given first-level row count:
    /// all of level 0, then the children of each step's selection.
    pub fn working_rows(&self, first_level_rows: usize) -> Vec<usize> {
        let mut rows = vec![first_level_rows];
        for &k in &self.schedule {
            rows.push(BRANCHING * k);
        }
        rows
    }

    fn uses_zoom_heads(&self) -> bool {
        self.attention == AttentionMode::Dual && self.num_levels > 1
    }
}

/// Two-layer MLP head: `logits = W2 * dropout(relu(W1 * x + b1)) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

impl<F: Real> Classifier<F> {
    /// Uniform fan-in initialization (`+-1/sqrt(fan_in)`), zero biases.
    /// Draw order: `w1` row-major, then `w2`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let bound1 = F::from_f64(1.0 / (input_dim as f64).sqrt());
        let bound2 = F::from_f64(1.0 / (hidden_dim as f64).sqrt());
        let w1 = Array2::from_shape_simple_fn((hidden_dim, input_dim), || {
            F::symmetric_uniform(rng, bound1)
        });
        let w2 =
            Array2::from_shape_simple_fn((classes, hidden_dim), || F::symmetric_uniform(rng, bound2));
        Self {
            w1,
            b1: Array1::zeros(hidden_dim),
            w2,
            b2: Array1::zeros(classes),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, classes: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden_dim, input_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array2::zeros((classes, hidden_dim)),
            b2: Array1::zeros(classes),
        }
    }

    /// Named flat views in declared order (`w1`, `b1`, `w2`, `b2`).
    pub fn tensors(&self) -> [(&'static str, &[F]); 4] {
        [
            ("w1", self.w1.as_slice().expect("standard layout")),
            ("b1", self.b1.as_slice().expect("standard layout")),
            ("w2", self.w2.as_slice().expect("standard layout")),
            ("b2", self.b2.as_slice().expect("standard layout")),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [F]); 4] {
        [
            ("w1", self.w1.as_slice_mut().expect("standard layout")),
            ("b1", self.b1.as_slice_mut().expect("standard layout")),
            ("w2", self.w2.as_slice_mut().expect("standard layout")),
            ("b2", self.b2.as_slice_mut().expect("standard layout")),
        ]
    }
}

/// Full parameter set of the zoom model.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoomModel<F> {
    pub config: ZoomConfig,
    /// Pooling attention, one head per level.
    pub pool_attn: Vec<GatedAttention<F>>,
    /// Zoom-scoring attention, one head per zoom step; empty when the
    /// pooling heads double as scorers (single-attention mode).
    pub zoom_attn: Vec<GatedAttention<F>>,
    pub classifier: Classifier<F>,
}

/// Gradient container mirroring [`ZoomModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<F> {
    pub pool_attn: Vec<GatedAttention<F>>,
    pub zoom_attn: Vec<GatedAttention<F>>,
    pub classifier: Classifier<F>,
}

fn collect_named<'x, F: Real>(
    pool: &'x [GatedAttention<F>],
    zoom: &'x [GatedAttention<F>],
    classifier: &'x Classifier<F>,
) -> Vec<(String, &'x [F])> {
    let mut out = Vec::new();
    for (m, ga) in pool.iter().enumerate() {
        for (name, slice) in ga.tensors() {
            out.push((format!("pool_attn.{m}.{name}"), slice));
        }
    }
    for (j, ga) in zoom.iter().enumerate() {
        for (name, slice) in ga.tensors() {
            out.push((format!("zoom_attn.{j}.{name}"), slice));
        }
    }
    for (name, slice) in classifier.tensors() {
        out.push((format!("classifier.{name}"), slice));
    }
    out
}

fn collect_named_mut<'x, F: Real>(
    pool: &'x mut [GatedAttention<F>],
    zoom: &'x mut [GatedAttention<F>],
    classifier: &'x mut Classifier<F>,
) -> Vec<(String, &'x mut [F])> {
    let mut out = Vec::new();
    for (m, ga) in pool.iter_mut().enumerate() {
        for (name, slice) in ga.tensors_mut() {
            out.push((format!("pool_attn.{m}.{name}"), slice));
        }
    }
    for (j, ga) in zoom.iter_mut().enumerate() {
        for (name, slice) in ga.tensors_mut() {
            out.push((format!("zoom_attn.{j}.{name}"), slice));
        }
    }
    for (name, slice) in classifier.tensors_mut() {
        out.push((format!("classifier.{name}"), slice));
    }
    out
}

impl<F: Real> ZoomModel<F> {
    /// Initializes all parameters from `rng`. Draw order: pooling heads by
    /// level, zoom heads by step, classifier, so a seed pins the whole
    /// parameter vector.
    pub fn init<R: Rng + ?Sized>(config: ZoomConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, l) = (config.feature_dim, config.attn_hidden);
        let pool_attn = (0..config.num_levels)
            .map(|_| GatedAttention::init(d, l, rng))
            .collect();
        let zoom_attn = if config.uses_zoom_heads() {
            (0..config.num_levels - 1)
                .map(|_| GatedAttention::init(d, l, rng))
                .collect()
        } else {
            Vec::new()
        };
        let classifier = Classifier::init(
            config.classifier_input_dim(),
            config.classifier_hidden_dim(),
            config.num_classes,
            rng,
        );
        Ok(Self {
            config,
            pool_attn,
            zoom_attn,
            classifier,
        })
    }

    /// All-zero parameters for `config`; checkpoint loading fills these in.
    pub fn zeros(config: ZoomConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, l) = (config.feature_dim, config.attn_hidden);
        let pool_attn = (0..config.num_levels)
            .map(|_| GatedAttention::zeros(d, l))
            .collect();
        let zoom_attn = if config.uses_zoom_heads() {
            (0..config.num_levels - 1)
                .map(|_| GatedAttention::zeros(d, l))
                .collect()
        } else {
            Vec::new()
        };
        let classifier = Classifier::zeros(
            config.classifier_input_dim(),
            config.classifier_hidden_dim(),
            config.num_classes,
        );
        Ok(Self {
            config,
            pool_attn,
            zoom_attn,
            classifier,
        })
    }

    /// Zeroed gradient container shaped like this model.
    pub fn zero_grads(&self) -> ModelGrads<F> {
        let (d, l) = (self.config.feature_dim, self.config.attn_hidden);
        ModelGrads {
            pool_attn: self.pool_attn.iter().map(|_| GatedAttention::zeros(d, l)).collect(),
            zoom_attn: self.zoom_attn.iter().map(|_| GatedAttention::zeros(d, l)).collect(),
            classifier: Classifier::zeros(
                self.config.classifier_input_dim(),
                self.config.classifier_hidden_dim(),
                self.config.num_classes,
            ),
        }
    }

    /// Named parameter views in canonical order. The order defines the
    /// optimizer slot layout and the checkpoint blob layout.
    pub fn named_tensors(&self) -> Vec<(String, &[F])> {
        collect_named(&self.pool_attn, &self.zoom_attn, &self.classifier)
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        collect_named_mut(&mut self.pool_attn, &mut self.zoom_attn, &mut self.classifier)
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, s)| s.len()).sum()
    }
}

impl<F: Real> ModelGrads<F> {
    pub fn named_tensors(&self) -> Vec<(String, &[F])> {
        collect_named(&self.pool_attn, &self.zoom_attn, &self.classifier)
    }

    /// Largest absolute entry, for divergence checks.
    pub fn max_abs(&self) -> f64 {
        self.named_tensors()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .fold(0.0, |acc, v| acc.max(v.as_f64().abs()))
    }
}

/// Frozen per-forward randomness: selection noise, random-arm choices, and
/// the dropout mask. Drawing it up front makes a forward pass a pure
/// function, which the gradient checks exploit.
#[derive(Debug, Clone)]
pub struct StepRandomness<F> {
    /// Per zoom step: `[S, rows_j]` Gaussian draws (differentiable mode only).
    pub noise: Vec<Array2<F>>,
    /// Per zoom step: sorted random selection (random mode only).
    pub random_selection: Vec<Vec<usize>>,
    /// Inverted-dropout mask over classifier hidden units; empty when
    /// dropout is inactive.
    pub dropout_mask: Vec<F>,
}

impl<F: Real> StepRandomness<F> {
    /// Draws everything a training forward pass will consume, in a fixed
    /// order: per-step selection noise (row-major), per-step random
    /// selections, then the dropout mask.
    pub fn draw<R: Rng + ?Sized>(
        config: &ZoomConfig,
        first_level_rows: usize,
        train: bool,
        rng: &mut R,
    ) -> Self {
        let rows = config.working_rows(first_level_rows);
        let mut noise = Vec::new();
        let mut random_selection = Vec::new();
        for step in 0..config.num_levels - 1 {
            match config.selection {
                SelectionMode::DiffTopK => {
                    noise.push(Array2::from_shape_simple_fn(
                        (config.noise_samples, rows[step]),
                        || F::standard_normal(rng),
                    ));
                }
                SelectionMode::RandomK => {
                    random_selection.push(crate::rng::sorted_subset(
                        rows[step],
                        config.schedule[step],
                        rng,
                    ));
                }
                SelectionMode::NonDiffTopK => {}
            }
        }
        let dropout_mask = if train && config.dropout > 0.0 {
            let keep = 1.0 - config.dropout;
            let scale = F::from_f64(1.0 / keep);
            (0..config.classifier_hidden_dim())
                .map(|_| {
                    if rand::RngExt::random_range(rng, 0.0..1.0) < keep {
                        scale
                    } else {
                        F::zero()
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            noise,
            random_selection,
            dropout_mask,
        }
    }
}

/// Everything the backward pass needs from one training forward pass.
#[derive(Debug)]
pub struct ForwardTrace<'a, F: Real> {
    levels: &'a [Array2<F>],
    /// Pooling attention output per level.
    pool: Vec<GaOutput<F>>,
    /// Zoom-scoring attention output per step (dual mode only).
    zoom: Vec<Option<GaOutput<F>>>,
    /// Monte-Carlo caches per step (differentiable selection only).
    topk_caches: Vec<Option<TopKCache<F>>>,
    /// Per-step selection over the working set.
    step_indicators: Vec<IndicatorMatrix<F>>,
    /// Expansion of the cumulative full-grid selection after each step
    /// (`E_j = expand(S_j, 1)`), kept for the backward pass.
    expanded: Vec<IndicatorMatrix<F>>,
    /// Classifier input after aggregation.
    agg: Array1<F>,
    hidden_pre: Array1<F>,
    hidden_dropped: Array1<F>,
    dropout_mask: Array1<F>,
    /// Class scores, `[C]`.
    pub logits: Array1<F>,
}

impl<F: Real> ForwardTrace<'_, F> {
    /// Attention weights at `level` with the global patch index of each
    /// working-set row. At level 0 the working set is the whole level; at
    /// deeper levels indices come from the cumulative selection (for soft
    /// selections, each row reports its dominant source row).
    pub fn attention(&self, level: usize) -> Result<(Vec<usize>, Vec<F>), ModelError> {
        if level >= self.pool.len() {
            return Err(ModelError::LevelNotEvaluated {
                level,
                levels: self.pool.len(),
            });
        }
        let weights = self.pool[level].weights.to_vec();
        let indices = if level == 0 {
            (0..weights.len()).collect()
        } else {
            let expanded = &self.expanded[level - 1];
            match expanded.selected_indices() {
                Some(idx) => idx.to_vec(),
                None => dominant_rows(expanded.entries()),
            }
        };
        Ok((indices, weights))
    }
}

/// Per-column argmax row (dominant source of each soft selection column).
fn dominant_rows<F: Real>(entries: &Array2<F>) -> Vec<usize> {
    (0..entries.ncols())
        .map(|c| {
            let col = entries.index_axis(Axis(1), c);
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn validate_levels_against<F: Real>(
    levels: &[Array2<F>],
    config: &ZoomConfig,
) -> Result<(), ModelError> {
    if levels.len() != config.num_levels {
        return Err(ModelError::LevelCount {
            expected: config.num_levels,
            got: levels.len(),
        });
    }
    for (m, level) in levels.iter().enumerate() {
        if level.ncols() != config.feature_dim {
            return Err(ModelError::FeatureWidth {
                expected: config.feature_dim,
                got: level.ncols(),
            });
        }
        if m > 0 && level.nrows() != BRANCHING * levels[m - 1].nrows() {
            return Err(ModelError::LevelRatio {
                level: m,
                rows: level.nrows(),
                expected: BRANCHING * levels[m - 1].nrows(),
            });
        }
    }
    if config.num_levels > 1 && config.schedule[0] > levels[0].nrows() {
        return Err(ModelError::FirstLevelTooSmall {
            rows: levels[0].nrows(),
            k: config.schedule[0],
        });
    }
    Ok(())
}

/// Training-mode forward pass; draws its randomness from `rng`.
///
/// `train` controls dropout only. Returns the logits inside a trace that
/// [`train_backward`] can consume.
pub fn train_forward<'a, F: Real, R: Rng + ?Sized>(
    levels: &'a [Array2<F>],
    model: &ZoomModel<F>,
    train: bool,
    rng: &mut R,
) -> Result<ForwardTrace<'a, F>, ModelError> {
    validate_levels_against(levels, &model.config)?;
    let randomness = StepRandomness::draw(&model.config, levels[0].nrows(), train, rng);
    train_forward_frozen(levels, model, &randomness)
}

/// [`train_forward`] with caller-frozen randomness, so repeated calls are
/// bit-identical. Gradient checks difference this function. Whether dropout
/// applies was decided when the randomness was drawn.
pub fn train_forward_frozen<'a, F: Real>(
    levels: &'a [Array2<F>],
    model: &ZoomModel<F>,
    randomness: &StepRandomness<F>,
) -> Result<ForwardTrace<'a, F>, ModelError> {
    validate_levels_against(levels, &model.config)?;
    let config = &model.config;
    let steps = config.num_levels - 1;

    let mut pool = Vec::with_capacity(config.num_levels);
    let mut zoom = Vec::with_capacity(steps);
    let mut topk_caches = Vec::with_capacity(steps);
    let mut step_indicators = Vec::with_capacity(steps);
    let mut expanded: Vec<IndicatorMatrix<F>> = Vec::with_capacity(steps);

    let mut working = levels[0].clone();
    pool.push(ga_forward(working.view(), &model.pool_attn[0])?);

    for step in 0..steps {
        let indicator = match config.selection {
            SelectionMode::RandomK => {
                zoom.push(None);
                IndicatorMatrix::from_sorted_indices(
                    working.nrows(),
                    &randomness.random_selection[step],
                )?
            }
            SelectionMode::DiffTopK | SelectionMode::NonDiffTopK => {
                let scores = match config.attention {
                    AttentionMode::Dual => {
                        let out = ga_forward(working.view(), &model.zoom_attn[step])?;
                        let scores = out.weights.clone();
                        zoom.push(Some(out));
                        scores
                    }
                    AttentionMode::Single => {
                        zoom.push(None);
                        pool[step].weights.clone()
                    }
                };
                if config.selection == SelectionMode::DiffTopK {
                    let (t, cache) = perturbed_topk_forward_with_noise(
                        scores.view(),
                        &config.topk_config(step),
                        randomness.noise[step].clone(),
                    )?;
                    topk_caches.push(Some(cache));
                    let cum = compose_cumulative(expanded.last(), &t);
                    step_indicators.push(t);
                    let exp = expand_indicator(&cum, 1);
                    working = select_rows(&exp, levels[step + 1].view())?;
                    expanded.push(exp);
                    pool.push(ga_forward(working.view(), &model.pool_attn[step + 1])?);
                    continue;
                }
                hard_topk(scores.view(), config.schedule[step])?
            }
        };
        // Hard selection (non-differentiable or random arm).
        topk_caches.push(None);
        let cum = compose_cumulative(expanded.last(), &indicator);
        step_indicators.push(indicator);
        let exp = expand_indicator(&cum, 1);
        working = select_rows(&exp, levels[step + 1].view())?;
        expanded.push(exp);
        pool.push(ga_forward(working.view(), &model.pool_attn[step + 1])?);
    }

    let agg = aggregate(config, &pool);
    let hidden_pre = model.classifier.w1.dot(&agg) + &model.classifier.b1;
    let hidden = hidden_pre.mapv(|x| x.max(F::zero()));
    let dropout_mask = if randomness.dropout_mask.is_empty() {
        Array1::from_elem(hidden.len(), F::one())
    } else {
        Array1::from_vec(randomness.dropout_mask.clone())
    };
    let hidden_dropped = &hidden * &dropout_mask;
    let logits = model.classifier.w2.dot(&hidden_dropped) + &model.classifier.b2;

    Ok(ForwardTrace {
        levels,
        pool,
        zoom,
        topk_caches,
        step_indicators,
        expanded,
        agg,
        hidden_pre,
        hidden_dropped,
        dropout_mask,
        logits,
    })
}

/// Extends the cumulative full-grid selection by one step:
/// `S_j = expand(S_{j-1}, 1) . T_j`, or `T_0` at the first step. Hard
/// selections compose by index lookup, soft ones by matrix product.
fn compose_cumulative<F: Real>(
    prev_expanded: Option<&IndicatorMatrix<F>>,
    step: &IndicatorMatrix<F>,
) -> IndicatorMatrix<F> {
    match prev_expanded {
        None => step.clone(),
        Some(prev) => match (prev.selected_indices(), step.selected_indices()) {
            (Some(parent_rows), Some(chosen)) => {
                let global: Vec<usize> = chosen.iter().map(|&c| parent_rows[c]).collect();
                IndicatorMatrix::from_sorted_indices(prev.num_rows(), &global)
                    .expect("composition preserves ordering")
            }
            _ => IndicatorMatrix::soft_unchecked(prev.entries().dot(step.entries())),
        },
    }
}

fn aggregate<F: Real>(config: &ZoomConfig, pool: &[GaOutput<F>]) -> Array1<F> {
    match config.aggregation {
        Aggregation::Sum => {
            let mut agg = pool[0].pooled.clone();
            for out in &pool[1..] {
                agg.zip_mut_with(&out.pooled, |a, &p| *a = *a + p);
            }
            agg
        }
        Aggregation::Concat => {
            let mut agg = Array1::zeros(config.num_levels * config.feature_dim);
            for (m, out) in pool.iter().enumerate() {
                let base = m * config.feature_dim;
                for (i, &v) in out.pooled.iter().enumerate() {
                    agg[base + i] = v;
                }
            }
            agg
        }
        Aggregation::HighestOnly => pool.last().expect("at least one level").pooled.clone(),
    }
}

/// Reverse-mode pass matching [`train_forward_frozen`].
///
/// Walks levels finest-to-coarsest. At each zoom step the cotangent of the
/// selected rows is pushed through the select/expand products onto the
/// step's indicator, then through the smoothed Top-K onto the selection
/// scores, and finally through the scoring attention head. Hard selections
/// contribute no score gradient, so their heads receive exact zeros.
pub fn train_backward<F: Real>(
    trace: &ForwardTrace<'_, F>,
    model: &ZoomModel<F>,
    grad_logits: ArrayView1<F>,
) -> ModelGrads<F> {
    let config = &model.config;
    let levels = config.num_levels;
    let mut grads = model.zero_grads();

    // Classifier backward.
    assert_eq!(grad_logits.len(), config.num_classes, "logit cotangent length");
    for (c, mut row) in grads.classifier.w2.rows_mut().into_iter().enumerate() {
        let g = grad_logits[c];
        row.zip_mut_with(&trace.hidden_dropped, |w, &h| *w = g * h);
    }
    grads.classifier.b2.assign(&grad_logits);
    let grad_dropped = model.classifier.w2.t().dot(&grad_logits);
    let grad_hidden_pre = Array1::from_shape_fn(trace.hidden_pre.len(), |i| {
        if trace.hidden_pre[i] > F::zero() {
            grad_dropped[i] * trace.dropout_mask[i]
        } else {
            F::zero()
        }
    });
    for (i, mut row) in grads.classifier.w1.rows_mut().into_iter().enumerate() {
        let g = grad_hidden_pre[i];
        row.zip_mut_with(&trace.agg, |w, &a| *w = g * a);
    }
    grads.classifier.b1.assign(&grad_hidden_pre);
    let grad_agg = model.classifier.w1.t().dot(&grad_hidden_pre);

    // Split the aggregated cotangent back onto per-level pooled embeddings.
    let d = config.feature_dim;
    let grad_pooled: Vec<Array1<F>> = (0..levels)
        .map(|m| match config.aggregation {
            Aggregation::Sum => grad_agg.clone(),
            Aggregation::Concat => {
                Array1::from_shape_fn(d, |i| grad_agg[m * d + i])
            }
            Aggregation::HighestOnly => {
                if m == levels - 1 {
                    grad_agg.clone()
                } else {
                    Array1::zeros(d)
                }
            }
        })
        .collect();

    // Top-down over levels. `grad_working[m]` is the cotangent of the
    // working-set feature rows at level m; `pending_ds` carries dS_{m+1}
    // from the step above.
    let mut grad_working: Vec<Option<Array2<F>>> = vec![None; levels];
    let mut pending_ds: Option<Array2<F>> = None;

    for m in (0..levels).rev() {
        // Selection step m (if any) backward, before this level's pooling
        // head so single-attention mode can merge both cotangents.
        let mut grad_weights: Option<Array1<F>> = None;
        if m + 1 < levels && config.selection == SelectionMode::DiffTopK {
            // rows_{m+1} = expand(S_m)' H_{m+1}  =>  dE_m = H_{m+1} G_{m+1}'.
            let g_next = grad_working[m + 1].take().expect("processed above");
            let mut grad_expanded = trace.levels[m + 1].dot(&g_next.t());
            // S_{m+1} = E_m T_{m+1}  =>  dE_m += dS_{m+1} T_{m+1}'.
            if let Some(ds_next) = pending_ds.take() {
                let contribution = ds_next.dot(&trace.step_indicators[m + 1].entries().t());
                grad_expanded.zip_mut_with(&contribution, |a, &b| *a = *a + b);
            }
            let ds = collapse_expanded_grad(grad_expanded.view(), 1);
            // S_m = expand(S_{m-1}) T_m (or T_0): push onto the step indicator.
            let dt = if m == 0 {
                ds.clone()
            } else {
                trace.expanded[m - 1].entries().t().dot(&ds)
            };
            pending_ds = Some(ds);

            let cache = trace.topk_caches[m].as_ref().expect("differentiable step");
            let grad_scores = perturbed_topk_backward(cache, dt.view());
            match config.attention {
                AttentionMode::Dual => {
                    let out = trace.zoom[m].as_ref().expect("dual-mode step");
                    let zero_pooled = Array1::zeros(d);
                    let (gh, gp) = ga_backward(
                        &out.cache,
                        &model.zoom_attn[m],
                        zero_pooled.view(),
                        Some(grad_scores.view()),
                    );
                    grads.zoom_attn[m] = gp;
                    accumulate_working(&mut grad_working[m], gh);
                }
                AttentionMode::Single => grad_weights = Some(grad_scores),
            }
        } else if m + 1 < levels {
            // Hard selection: no gradient into scores; drop the chain.
            grad_working[m + 1] = None;
        }

        let (gh, gp) = ga_backward(
            &trace.pool[m].cache,
            &model.pool_attn[m],
            grad_pooled[m].view(),
            grad_weights.as_ref().map(|g| g.view()),
        );
        grads.pool_attn[m] = gp;
        accumulate_working(&mut grad_working[m], gh);
    }

    grads
}

fn accumulate_working<F: Real>(slot: &mut Option<Array2<F>>, grad: Array2<F>) {
    match slot {
        None => *slot = Some(grad),
        Some(existing) => existing.zip_mut_with(&grad, |a, &b| *a = *a + b),
    }
}

/// Input to [`infer`]: either precomputed features or raw patches plus an
/// encoder for lazy featurization.
pub enum InferInput<'a> {
    Features(&'a FeaturePyramid),
    Patches {
        pyramid: &'a PatchPyramid,
        encoder: &'a dyn PatchEncoder,
    },
}

impl InferInput<'_> {
    fn id(&self) -> &str {
        match self {
            InferInput::Features(p) => p.id(),
            InferInput::Patches { pyramid, .. } => pyramid.id(),
        }
    }

    fn num_levels(&self) -> usize {
        match self {
            InferInput::Features(p) => p.num_levels(),
            InferInput::Patches { pyramid, .. } => pyramid.num_levels(),
        }
    }

    fn first_level_rows(&self) -> usize {
        match self {
            InferInput::Features(p) => p.level(0).nrows(),
            InferInput::Patches { pyramid, .. } => pyramid.level(0).nrows(),
        }
    }
}

/// Attention weights over the working set of one level, aligned to global
/// patch indices at that level.
#[derive(Debug, Clone, Serialize)]
pub struct LevelAttention {
    pub level: usize,
    pub patch_indices: Vec<usize>,
    pub weights: Vec<f32>,
}

/// Outcome of one deterministic inference pass.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Predicted class (argmax of logits; ties take the lower index).
    pub predicted: usize,
    pub logits: Vec<f32>,
    /// Pooling attention per level, coarsest first.
    pub attention: Vec<LevelAttention>,
    /// Work accounting for this pass.
    pub ledger: FlopLedger,
}

impl Inference {
    /// Attention at `level`, or an error naming the available range.
    pub fn attention_at(&self, level: usize) -> Result<&LevelAttention, ModelError> {
        self.attention
            .get(level)
            .ok_or(ModelError::LevelNotEvaluated {
                level,
                levels: self.attention.len(),
            })
    }
}

/// Stable 64-bit hash of a sample id (FNV-1a), used to fix the random-arm
/// selection per sample at inference time.
fn sample_stream_index(id: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in id.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash & ((1 << 56) - 1)
}

/// Deterministic low-cost inference (hard selection, no dropout).
///
/// Reads the entire coarsest level, then at each zoom step keeps the
/// `schedule[j]` best-scoring working rows and descends to their children
/// only. With raw-patch input, exactly `N_0 + sum_j 4 * K_j` patches are
/// encoded; the ledger records per-level encoder calls and head FLOPs.
pub fn infer(input: &InferInput<'_>, model: &ZoomModel<f32>) -> Result<Inference, ModelError> {
    let config = &model.config;
    if input.num_levels() != config.num_levels {
        return Err(ModelError::LevelCount {
            expected: config.num_levels,
            got: input.num_levels(),
        });
    }
    let n0 = input.first_level_rows();
    if config.num_levels > 1 && config.schedule[0] > n0 {
        return Err(ModelError::FirstLevelTooSmall {
            rows: n0,
            k: config.schedule[0],
        });
    }

    let mut ledger = FlopLedger::new(config.num_levels);
    let (d, l) = (config.feature_dim, config.attn_hidden);

    // Global indices of the current working set and their features.
    let mut indices: Vec<usize> = (0..n0).collect();
    let mut working = fetch_rows(input, 0, &indices, &mut ledger)?;

    let mut pool_outputs = Vec::with_capacity(config.num_levels);
    let mut attention = Vec::with_capacity(config.num_levels);

    for step in 0..config.num_levels {
        let out = ga_forward(working.view(), &model.pool_attn[step])?;
        ledger.head_flops += ga_flops(working.nrows(), d, l);
        attention.push(LevelAttention {
            level: step,
            patch_indices: indices.clone(),
            weights: out.weights.to_vec(),
        });
        pool_outputs.push(out);

        if step + 1 == config.num_levels {
            break;
        }
        let k = config.schedule[step];
        let scores: Array1<f32> = match config.selection {
            SelectionMode::RandomK => {
                // Fixed per sample: pseudo-random scores from the sample id.
                let mut rng = crate::rng::Seed(sample_stream_index(input.id()))
                    .stream(crate::rng::StreamId::Scratch(step as u64));
                Array1::from_shape_simple_fn(working.nrows(), || f32::standard_normal(&mut rng))
            }
            _ => match config.attention {
                AttentionMode::Dual => {
                    let out = ga_forward(working.view(), &model.zoom_attn[step])?;
                    ledger.head_flops += ga_flops(working.nrows(), d, l);
                    out.weights
                }
                AttentionMode::Single => pool_outputs[step].weights.clone(),
            },
        };
        let selection = hard_topk(scores.view(), k)?;
        let chosen = selection
            .selected_indices()
            .expect("hard selection")
            .to_vec();

        // Children of the selected global parents, parent-ordered.
        let mut next_indices = Vec::with_capacity(BRANCHING * k);
        for &c in &chosen {
            next_indices.extend(child_range(indices[c], 1));
        }
        indices = next_indices;
        working = fetch_rows(input, step + 1, &indices, &mut ledger)?;
    }

    let agg = aggregate(config, &pool_outputs);
    ledger.head_flops += aggregation_flops(config);
    let hidden_pre = model.classifier.w1.dot(&agg) + &model.classifier.b1;
    let hidden = hidden_pre.mapv(|x| x.max(0.0));
    let logits = model.classifier.w2.dot(&hidden) + &model.classifier.b2;
    ledger.head_flops += classifier_flops(
        config.classifier_input_dim(),
        config.classifier_hidden_dim(),
        config.num_classes,
    );

    let predicted = argmax_lowest(&logits);
    Ok(Inference {
        predicted,
        logits: logits.to_vec(),
        attention,
        ledger,
    })
}

/// Reference inference with no zooming: every patch at the finest level is
/// read (or encoded), pooled by that level's attention head, and
/// classified. This is the baseline the efficiency comparison measures the
/// zoom path against; coarser levels are never touched.
///
/// In concat aggregation the classifier expects one block per level; the
/// blocks for the unvisited coarser levels stay zero.
pub fn full_grid_infer(
    input: &InferInput<'_>,
    model: &ZoomModel<f32>,
) -> Result<Inference, ModelError> {
    let config = &model.config;
    if input.num_levels() != config.num_levels {
        return Err(ModelError::LevelCount {
            expected: config.num_levels,
            got: input.num_levels(),
        });
    }
    let finest = config.num_levels - 1;
    let rows = input.first_level_rows() * BRANCHING.pow(finest as u32);
    let mut ledger = FlopLedger::new(config.num_levels);
    let (d, l) = (config.feature_dim, config.attn_hidden);

    let indices: Vec<usize> = (0..rows).collect();
    let working = fetch_rows(input, finest, &indices, &mut ledger)?;
    let out = ga_forward(working.view(), &model.pool_attn[finest])?;
    ledger.head_flops += ga_flops(rows, d, l);
    let attention = vec![LevelAttention {
        level: finest,
        patch_indices: indices,
        weights: out.weights.to_vec(),
    }];

    let agg = match config.aggregation {
        Aggregation::Sum | Aggregation::HighestOnly => out.pooled,
        Aggregation::Concat => {
            let mut agg = Array1::zeros(config.classifier_input_dim());
            for (i, v) in out.pooled.iter().enumerate() {
                agg[finest * d + i] = *v;
            }
            agg
        }
    };
    let hidden_pre = model.classifier.w1.dot(&agg) + &model.classifier.b1;
    let hidden = hidden_pre.mapv(|x| x.max(0.0));
    let logits = model.classifier.w2.dot(&hidden) + &model.classifier.b2;
    ledger.head_flops += classifier_flops(
        config.classifier_input_dim(),
        config.classifier_hidden_dim(),
        config.num_classes,
    );

    let predicted = argmax_lowest(&logits);
    Ok(Inference {
        predicted,
        logits: logits.to_vec(),
        attention,
        ledger,
    })
}

/// First index of the maximum value (ties take the lower index).
pub fn argmax_lowest(values: &Array1<f32>) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn fetch_rows(
    input: &InferInput<'_>,
    level: usize,
    rows: &[usize],
    ledger: &mut FlopLedger,
) -> Result<Array2<f32>, ModelError> {
    match input {
        InferInput::Features(pyramid) => {
            let source = pyramid.level(level);
            let mut out = Array2::zeros((rows.len(), source.ncols()));
            for (dst, &src) in rows.iter().enumerate() {
                out.row_mut(dst).assign(&source.row(src));
            }
            ledger.record_encoded(level, rows.len() as u64, 0);
            Ok(out)
        }
        InferInput::Patches { pyramid, encoder } => {
            let source = pyramid.level(level);
            let mut patches = Array2::zeros((rows.len(), source.ncols()));
            for (dst, &src) in rows.iter().enumerate() {
                patches.row_mut(dst).assign(&source.row(src));
            }
            let features = encoder
                .encode(patches.view())
                .map_err(|source| ModelError::Encode { level, source })?;
            ledger.record_encoded(
                level,
                rows.len() as u64,
                rows.len() as u64 * encoder.flops_per_patch(),
            );
            Ok(features)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cross_entropy;
    use crate::pyramid::PatchDims;
    use crate::rng::{Seed, StreamId};

    fn random_levels<F: Real>(
        first_rows: usize,
        num_levels: usize,
        dim: usize,
        rng: &mut impl rand::Rng,
    ) -> Vec<Array2<F>> {
        (0..num_levels)
            .map(|m| {
                let rows = first_rows * BRANCHING.pow(m as u32);
                Array2::from_shape_simple_fn((rows, dim), || F::standard_normal(rng))
            })
            .collect()
    }

    // ---- straight-line recomputation helpers (plain loops, no ndarray ops) ----

    fn ga_scalar(
        h: &[Vec<f64>],
        v: &Array2<f64>,
        u: &Array2<f64>,
        w: &Array1<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let (n, d, l) = (h.len(), h[0].len(), w.len());
        let mut scores = vec![0.0; n];
        for i in 0..n {
            for j in 0..l {
                let mut tanh_in = 0.0;
                let mut sig_in = 0.0;
                for q in 0..d {
                    tanh_in += v[(j, q)] * h[i][q];
                    sig_in += u[(j, q)] * h[i][q];
                }
                scores[i] += w[j] * tanh_in.tanh() / (1.0 + (-sig_in).exp());
            }
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let weights: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut pooled = vec![0.0; d];
        for i in 0..n {
            for q in 0..d {
                pooled[q] += weights[i] * h[i][q];
            }
        }
        (pooled, weights)
    }

    fn perturbed_topk_scalar(
        scores: &[f64],
        noise: &Array2<f64>,
        sigma: f64,
        k: usize,
    ) -> Vec<Vec<f64>> {
        let n = scores.len();
        let samples = noise.nrows();
        let mut t = vec![vec![0.0; k]; n];
        for s in 0..samples {
            let perturbed: Vec<f64> =
                (0..n).map(|i| scores[i] + sigma * noise[(s, i)]).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                perturbed[b]
                    .partial_cmp(&perturbed[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut selected = order[..k].to_vec();
            selected.sort_unstable();
            for (col, &i) in selected.iter().enumerate() {
                t[i][col] += 1.0;
            }
        }
        for row in &mut t {
            for v in row.iter_mut() {
                *v /= samples as f64;
            }
        }
        t
    }

    fn rows_of(level: &Array2<f64>) -> Vec<Vec<f64>> {
        level.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn micro_model_logits_match_straight_line_recomputation() {
        let mut config = ZoomConfig::new(2, 3, 2, vec![2]);
        config.attn_hidden = 2;
        config.sigma = 0.4;
        config.noise_samples = 5;
        let mut rng = Seed(50).stream(StreamId::Scratch(0));
        let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
        let levels = random_levels::<f64>(4, 2, 3, &mut rng);
        let randomness = StepRandomness::draw(&config, 4, true, &mut rng);
        let trace = train_forward_frozen(&levels, &model, &randomness).unwrap();

        // Independent recomputation with plain loops.
        let h0 = rows_of(&levels[0]);
        let (pooled0, _) = ga_scalar(
            &h0,
            &model.pool_attn[0].v,
            &model.pool_attn[0].u,
            &model.pool_attn[0].w,
        );
        let (_, zoom_scores) = ga_scalar(
            &h0,
            &model.zoom_attn[0].v,
            &model.zoom_attn[0].u,
            &model.zoom_attn[0].w,
        );
        let t = perturbed_topk_scalar(&zoom_scores, &randomness.noise[0], 0.4, 2);
        // working row 4k + r mixes the r-th children of every level-0 parent.
        let mut working = vec![vec![0.0; 3]; 8];
        for k in 0..2 {
            for r in 0..4 {
                for i in 0..4 {
                    for q in 0..3 {
                        working[4 * k + r][q] += t[i][k] * levels[1][(4 * i + r, q)];
                    }
                }
            }
        }
        let (pooled1, _) = ga_scalar(
            &working,
            &model.pool_attn[1].v,
            &model.pool_attn[1].u,
            &model.pool_attn[1].w,
        );
        let agg: Vec<f64> = (0..3).map(|q| pooled0[q] + pooled1[q]).collect();
        let hidden_dim = config.classifier_hidden_dim();
        let mut logits = vec![0.0; 2];
        for c in 0..2 {
            for j in 0..hidden_dim {
                let mut pre = model.classifier.b1[j];
                for q in 0..3 {
                    pre += model.classifier.w1[(j, q)] * agg[q];
                }
                let act = pre.max(0.0)
                    * if randomness.dropout_mask.is_empty() {
                        1.0
                    } else {
                        randomness.dropout_mask[j]
                    };
                logits[c] += model.classifier.w2[(c, j)] * act;
            }
            logits[c] += model.classifier.b2[c];
        }

        for c in 0..2 {
            let rel = (trace.logits[c] - logits[c]).abs() / logits[c].abs().max(1e-9);
            assert!(
                rel < 1e-10,
                "logit {c}: pipeline {} vs straight-line {}",
                trace.logits[c],
                logits[c]
            );
        }
    }

    // ---- finite-difference harness over frozen randomness ----

    fn bump(model: &mut ZoomModel<f64>, name: &str, idx: usize, delta: f64) {
        for (n, slice) in model.named_tensors_mut() {
            if n == name {
                slice[idx] += delta;
                return;
            }
        }
        panic!("unknown tensor {name}");
    }

    fn grad_value(grads: &ModelGrads<f64>, name: &str, idx: usize) -> f64 {
        for (n, slice) in grads.named_tensors() {
            if n == name {
                return slice[idx];
            }
        }
        panic!("unknown tensor {name}");
    }

    /// FD-checks every coordinate of the tensors selected by `check`,
    /// against the analytic gradients of the frozen-randomness loss.
    fn fd_check(
        model: &ZoomModel<f64>,
        levels: &[Array2<f64>],
        randomness: &StepRandomness<f64>,
        label: usize,
        check: impl Fn(&str) -> bool,
        tol: f64,
        context: &str,
    ) {
        let trace = train_forward_frozen(levels, model, randomness).unwrap();
        let (_, grad_logits) = cross_entropy(trace.logits.view(), label).unwrap();
        let grads = train_backward(&trace, model, grad_logits.view());
        let loss_of = |m: &ZoomModel<f64>| {
            let t = train_forward_frozen(levels, m, randomness).unwrap();
            cross_entropy(t.logits.view(), label).unwrap().0
        };
        let eps = 1e-5;
        let names: Vec<(String, usize)> = model
            .named_tensors()
            .iter()
            .filter(|(n, _)| check(n))
            .map(|(n, s)| (n.clone(), s.len()))
            .collect();
        assert!(!names.is_empty(), "{context}: no tensors selected");
        for (name, len) in names {
            for idx in 0..len {
                let mut plus = model.clone();
                bump(&mut plus, &name, idx, eps);
                let mut minus = model.clone();
                bump(&mut minus, &name, idx, -eps);
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                let analytic = grad_value(&grads, &name, idx);
                // Near-zero coordinates are held to an absolute floor: central
                // differences of an O(1) loss carry ~1e-11 roundoff noise.
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
                assert!(
                    rel < tol,
                    "{context}: {name}[{idx}] analytic {analytic} vs fd {fd} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn frozen_noise_gradients_match_finite_differences() {
        // The smoothed-selection scores are excluded: with frozen noise the
        // loss is piecewise constant in them, so their analytic gradient is
        // a smoothing estimator rather than a derivative of this loss. The
        // selection path has its own Monte-Carlo Jacobian oracle.
        for case in 0..8u64 {
            let mut rng = Seed(51).stream(StreamId::Scratch(case));
            let d = 3 + (case % 2) as usize;
            let mut config = ZoomConfig::new(2, d, 2 + (case % 2) as usize, vec![2]);
            config.attn_hidden = 2 + (case % 2) as usize;
            config.sigma = if case % 2 == 0 { 0.3 } else { 0.6 };
            config.noise_samples = 6;
            config.dropout = if case % 3 == 0 { 0.0 } else { 0.25 };
            config.aggregation = match case % 3 {
                0 => Aggregation::Sum,
                1 => Aggregation::Concat,
                _ => Aggregation::HighestOnly,
            };
            let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
            let levels = random_levels::<f64>(4, 2, d, &mut rng);
            let randomness = StepRandomness::draw(&config, 4, true, &mut rng);
            fd_check(
                &model,
                &levels,
                &randomness,
                (case % 2) as usize,
                |name| name.starts_with("pool_attn.") || name.starts_with("classifier."),
                1e-4,
                &format!("dual case {case}"),
            );
        }
    }

    #[test]
    fn three_level_gradients_match_finite_differences() {
        let mut rng = Seed(52).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(3, 3, 2, vec![2, 3]);
        config.attn_hidden = 2;
        config.sigma = 0.5;
        config.noise_samples = 5;
        config.dropout = 0.25;
        let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
        let levels = random_levels::<f64>(4, 3, 3, &mut rng);
        let randomness = StepRandomness::draw(&config, 4, true, &mut rng);
        fd_check(
            &model,
            &levels,
            &randomness,
            1,
            |name| name.starts_with("pool_attn.") || name.starts_with("classifier."),
            1e-4,
            "three levels",
        );
    }

    #[test]
    fn single_attention_mode_checks_through_unshared_parameters() {
        // In single-attention mode the heads at levels 0..M-2 also produce
        // the selection scores, so only the finest head and the classifier
        // stay differentiable under frozen noise.
        let mut rng = Seed(53).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![2]);
        config.attn_hidden = 2;
        config.attention = AttentionMode::Single;
        config.sigma = 0.4;
        config.noise_samples = 5;
        let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
        assert!(model.zoom_attn.is_empty());
        let levels = random_levels::<f64>(4, 2, 4, &mut rng);
        let randomness = StepRandomness::draw(&config, 4, true, &mut rng);
        fd_check(
            &model,
            &levels,
            &randomness,
            0,
            |name| name.starts_with("pool_attn.1.") || name.starts_with("classifier."),
            1e-4,
            "single mode",
        );
    }

    #[test]
    fn smoothed_selection_gradient_matches_fresh_noise_differences() {
        // Statistical check of the selection-score path: the directional
        // derivative of the *expected* loss along the zoom-head gradient
        // direction, estimated by differencing with fresh noise per repeat
        // but common random numbers across the +/- pair, should equal the
        // gradient's norm within Monte-Carlo error.
        let mut rng = Seed(54).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 3, 2, vec![2]);
        config.attn_hidden = 2;
        config.sigma = 0.5;
        config.noise_samples = 4000;
        config.dropout = 0.0;
        let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
        let mut levels = random_levels::<f64>(4, 2, 3, &mut rng);
        // Make a few fine-level rows stand out so that *which* parents get
        // selected visibly moves the loss.
        for i in 0..levels[1].nrows() {
            if i % 5 == 0 {
                let scale = 4.0;
                levels[1].row_mut(i).mapv_inplace(|x| x * scale);
            }
        }

        let randomness = StepRandomness::draw(&config, 4, true, &mut rng);
        let trace = train_forward_frozen(&levels, &model, &randomness).unwrap();
        let (_, grad_logits) = cross_entropy(trace.logits.view(), 0).unwrap();
        let grads = train_backward(&trace, &model, grad_logits.view());

        // Unit direction along the zoom-head gradient; the analytic
        // directional derivative is then the gradient norm.
        let blocks: Vec<(String, Vec<f64>)> = grads
            .named_tensors()
            .iter()
            .filter(|(n, _)| n.starts_with("zoom_attn."))
            .map(|(n, s)| (n.clone(), s.to_vec()))
            .collect();
        let norm: f64 = blocks
            .iter()
            .flat_map(|(_, s)| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!(norm > 1e-3, "selection gradient unexpectedly tiny: {norm}");

        let eps = 0.1;
        let shifted = |sign: f64| {
            let mut m = model.clone();
            for (name, block) in &blocks {
                for (idx, g) in block.iter().enumerate() {
                    bump(&mut m, name, idx, sign * eps * g / norm);
                }
            }
            m
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);

        let mut eval_rng = Seed(55).stream(StreamId::Scratch(1));
        let reps = 16;
        let mut estimates = Vec::with_capacity(reps);
        for _ in 0..reps {
            let r = StepRandomness::draw(&config, 4, false, &mut eval_rng);
            let lp = cross_entropy(
                train_forward_frozen(&levels, &plus, &r).unwrap().logits.view(),
                0,
            )
            .unwrap()
            .0;
            let lm = cross_entropy(
                train_forward_frozen(&levels, &minus, &r).unwrap().logits.view(),
                0,
            )
            .unwrap()
            .0;
            estimates.push((lp - lm) / (2.0 * eps));
        }
        let mean: f64 = estimates.iter().sum::<f64>() / reps as f64;
        let var: f64 =
            estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        // 3 standard errors plus a 10% allowance for finite-step smoothing
        // bias and the base estimator's own Monte-Carlo error.
        assert!(
            (norm - mean).abs() <= 3.0 * se + 0.1 * norm,
            "directional derivative: analytic {norm} vs fd {mean} (se {se})"
        );
    }

    #[test]
    fn hard_and_random_selection_leave_zoom_heads_untouched() {
        for selection in [SelectionMode::NonDiffTopK, SelectionMode::RandomK] {
            let mut rng = Seed(56).stream(StreamId::Scratch(0));
            let mut config = ZoomConfig::new(2, 4, 2, vec![2]);
            config.attn_hidden = 2;
            config.selection = selection;
            config.dropout = 0.0;
            let model: ZoomModel<f64> = ZoomModel::init(config.clone(), &mut rng).unwrap();
            let levels = random_levels::<f64>(4, 2, 4, &mut rng);
            let trace = train_forward(&levels, &model, true, &mut rng).unwrap();
            let (_, grad_logits) = cross_entropy(trace.logits.view(), 0).unwrap();
            let grads = train_backward(&trace, &model, grad_logits.view());
            for (name, slice) in grads.named_tensors() {
                if name.starts_with("zoom_attn.") {
                    assert!(
                        slice.iter().all(|&g| g == 0.0),
                        "{selection:?}: {name} received gradient"
                    );
                }
            }
            let pool_nonzero = grads
                .named_tensors()
                .iter()
                .filter(|(n, _)| n.starts_with("pool_attn."))
                .any(|(_, s)| s.iter().any(|&g| g != 0.0));
            assert!(pool_nonzero, "{selection:?}: pooling heads got no gradient");
        }
    }

    #[test]
    fn soft_forward_approaches_hard_inference_as_sigma_vanishes() {
        let mut rng = Seed(57).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 8, 3, vec![3]);
        config.attn_hidden = 4;
        config.sigma = 1e-6;
        config.noise_samples = 50;
        let model: ZoomModel<f32> = ZoomModel::init(config.clone(), &mut rng).unwrap();
        let levels = random_levels::<f32>(8, 2, 8, &mut rng);
        let pyramid = FeaturePyramid::new("s", 0, levels.clone()).unwrap();

        let trace = train_forward(&levels, &model, false, &mut rng).unwrap();
        let inference = infer(&InferInput::Features(&pyramid), &model).unwrap();
        for c in 0..3 {
            assert!(
                (trace.logits[c] - inference.logits[c]).abs() < 1e-4,
                "logit {c}: train {} vs infer {}",
                trace.logits[c],
                inference.logits[c]
            );
        }
        assert_eq!(argmax_lowest(&trace.logits), inference.predicted);
    }

    struct TestEncoder {
        weights: Array2<f32>,
    }

    impl PatchEncoder for TestEncoder {
        fn feature_dim(&self) -> usize {
            self.weights.nrows()
        }
        fn patch_len(&self) -> usize {
            self.weights.ncols()
        }
        fn flops_per_patch(&self) -> u64 {
            (2 * self.weights.ncols() * self.weights.nrows()) as u64
        }
        fn encode(&self, patches: ArrayView2<f32>) -> Result<Array2<f32>, EncodeError> {
            if patches.ncols() != self.weights.ncols() {
                return Err(EncodeError {
                    reason: format!(
                        "patch width {} does not match encoder input {}",
                        patches.ncols(),
                        self.weights.ncols()
                    ),
                });
            }
            Ok(patches.dot(&self.weights.t()))
        }
    }

    fn default_like_setup() -> (ZoomConfig, ZoomModel<f32>, PatchPyramid, TestEncoder) {
        let mut rng = Seed(58).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(3, 8, 3, vec![12, 12]);
        config.attn_hidden = 4;
        let model = ZoomModel::init(config.clone(), &mut rng).unwrap();
        let dims = PatchDims {
            height: 2,
            width: 2,
            channels: 1,
        };
        let levels: Vec<Array2<f32>> = (0..3)
            .map(|m| {
                let rows = 16 * BRANCHING.pow(m as u32);
                Array2::from_shape_simple_fn((rows, 4), || f32::standard_normal(&mut rng))
            })
            .collect();
        let pyramid = PatchPyramid::new("p0", 1, dims, levels).unwrap();
        let encoder = TestEncoder {
            weights: Array2::from_shape_simple_fn((8, 4), || f32::standard_normal(&mut rng)),
        };
        (config, model, pyramid, encoder)
    }

    #[test]
    fn inference_ledger_matches_analytic_costs() {
        use crate::bench::{count_flops, CostMode};
        let (config, model, pyramid, encoder) = default_like_setup();
        let inference = infer(
            &InferInput::Patches {
                pyramid: &pyramid,
                encoder: &encoder,
            },
            &model,
        )
        .unwrap();
        assert_eq!(inference.ledger.encoder_calls_per_level, vec![16, 48, 48]);
        assert_eq!(inference.ledger.encoder_calls(), 112);
        let analytic = count_flops(&config, 16, encoder.flops_per_patch(), CostMode::Zoom);
        assert_eq!(inference.ledger.encoder_flops, analytic.encoder_flops);
        assert_eq!(inference.ledger.head_flops, analytic.head_flops);
    }

    #[test]
    fn full_grid_baseline_reads_the_whole_finest_level() {
        use crate::bench::{count_flops, CostMode};
        let (config, model, pyramid, encoder) = default_like_setup();
        let input = InferInput::Patches {
            pyramid: &pyramid,
            encoder: &encoder,
        };
        let flat = full_grid_infer(&input, &model).unwrap();
        assert_eq!(flat.ledger.encoder_calls_per_level, vec![0, 0, 256]);
        let analytic = count_flops(&config, 16, encoder.flops_per_patch(), CostMode::FullGrid);
        assert_eq!(flat.ledger.encoder_flops, analytic.encoder_flops);
        assert_eq!(flat.ledger.head_flops, analytic.head_flops);

        // One attention export: the finest level, covering every patch.
        assert_eq!(flat.attention.len(), 1);
        assert_eq!(flat.attention[0].level, 2);
        assert_eq!(flat.attention[0].patch_indices.len(), 256);
        let weight_sum: f32 = flat.attention[0].weights.iter().sum();
        assert!((weight_sum - 1.0).abs() < 1e-5);

        // Deterministic across calls.
        let again = full_grid_infer(&input, &model).unwrap();
        assert_eq!(flat.logits, again.logits);
        assert_eq!(flat.predicted, again.predicted);
    }

    #[test]
    fn full_grid_concat_fills_only_the_finest_block() {
        let (mut config, _, pyramid, encoder) = default_like_setup();
        config.aggregation = Aggregation::Concat;
        let mut rng = Seed(61).stream(StreamId::ModelInit);
        let model: ZoomModel<f32> = ZoomModel::init(config, &mut rng).unwrap();
        let input = InferInput::Patches {
            pyramid: &pyramid,
            encoder: &encoder,
        };
        // The classifier consumes a [3 * D] vector; the run succeeding at
        // all proves the block layout matches, and determinism pins it.
        let a = full_grid_infer(&input, &model).unwrap();
        let b = full_grid_infer(&input, &model).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.logits.len(), 3);
    }

    #[test]
    fn lazy_encoding_matches_precomputed_features() {
        let (_, model, pyramid, encoder) = default_like_setup();
        let lazy = infer(
            &InferInput::Patches {
                pyramid: &pyramid,
                encoder: &encoder,
            },
            &model,
        )
        .unwrap();
        let features: Vec<Array2<f32>> = pyramid
            .levels()
            .iter()
            .map(|l| encoder.encode(l.view()).unwrap())
            .collect();
        let feature_pyramid = FeaturePyramid::new(pyramid.id(), pyramid.label(), features).unwrap();
        let full = infer(&InferInput::Features(&feature_pyramid), &model).unwrap();
        assert_eq!(lazy.predicted, full.predicted);
        for c in 0..3 {
            assert!(
                (lazy.logits[c] - full.logits[c]).abs() < 1e-5,
                "logit {c}: lazy {} vs precomputed {}",
                lazy.logits[c],
                full.logits[c]
            );
        }
        for (a, b) in lazy.attention.iter().zip(&full.attention) {
            assert_eq!(a.patch_indices, b.patch_indices);
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let (_, model, pyramid, encoder) = default_like_setup();
        let input = InferInput::Patches {
            pyramid: &pyramid,
            encoder: &encoder,
        };
        let one = infer(&input, &model).unwrap();
        let two = infer(&input, &model).unwrap();
        assert_eq!(one.logits, two.logits);
        assert_eq!(one.predicted, two.predicted);
        for (a, b) in one.attention.iter().zip(&two.attention) {
            assert_eq!(a.patch_indices, b.patch_indices);
            assert_eq!(a.weights, b.weights);
        }
    }

    #[test]
    fn random_arm_selection_is_fixed_per_sample_id() {
        let mut rng = Seed(59).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![3]);
        config.attn_hidden = 2;
        config.selection = SelectionMode::RandomK;
        let model: ZoomModel<f32> = ZoomModel::init(config, &mut rng).unwrap();
        let levels = random_levels::<f32>(16, 2, 4, &mut rng);
        let a = FeaturePyramid::new("sample-a", 0, levels.clone()).unwrap();
        let a_again = FeaturePyramid::new("sample-a", 0, levels.clone()).unwrap();
        let b = FeaturePyramid::new("sample-b", 0, levels).unwrap();
        let inf_a = infer(&InferInput::Features(&a), &model).unwrap();
        let inf_a2 = infer(&InferInput::Features(&a_again), &model).unwrap();
        let inf_b = infer(&InferInput::Features(&b), &model).unwrap();
        assert_eq!(inf_a.attention[1].patch_indices, inf_a2.attention[1].patch_indices);
        assert_ne!(
            inf_a.attention[1].patch_indices, inf_b.attention[1].patch_indices,
            "different ids should zoom differently almost surely"
        );
    }

    #[test]
    fn attention_export_reports_child_indices_of_selected_parents() {
        let mut rng = Seed(60).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![1]);
        config.attn_hidden = 2;
        config.attention = AttentionMode::Single;
        let model: ZoomModel<f32> = ZoomModel::init(config, &mut rng).unwrap();
        let levels = random_levels::<f32>(8, 2, 4, &mut rng);
        let pyramid = FeaturePyramid::new("s", 0, levels).unwrap();
        let inference = infer(&InferInput::Features(&pyramid), &model).unwrap();

        let level0 = inference.attention_at(0).unwrap();
        assert_eq!(level0.patch_indices, (0..8).collect::<Vec<_>>());
        let parent = level0
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let level1 = inference.attention_at(1).unwrap();
        assert_eq!(level1.patch_indices, child_range(parent, 1).collect::<Vec<_>>());
        assert_eq!(level1.weights.len(), 4);
        assert!(matches!(
            inference.attention_at(2),
            Err(ModelError::LevelNotEvaluated { level: 2, levels: 2 })
        ));
    }

    #[test]
    fn trace_attention_reports_working_set_indices() {
        let mut rng = Seed(61).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![2]);
        config.attn_hidden = 2;
        config.selection = SelectionMode::NonDiffTopK;
        let model: ZoomModel<f64> = ZoomModel::init(config, &mut rng).unwrap();
        let levels = random_levels::<f64>(4, 2, 4, &mut rng);
        let trace = train_forward(&levels, &model, false, &mut rng).unwrap();
        let (indices0, weights0) = trace.attention(0).unwrap();
        assert_eq!(indices0, (0..4).collect::<Vec<_>>());
        assert_eq!(weights0.len(), 4);
        let (indices1, weights1) = trace.attention(1).unwrap();
        assert_eq!(indices1.len(), 8);
        assert_eq!(weights1.len(), 8);
        assert!(indices1.windows(2).all(|w| w[0] < w[1]));
        assert!(indices1.iter().all(|&i| i < 16));
        assert!(trace.attention(2).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let base = |f: &dyn Fn(&mut ZoomConfig)| {
            let mut c = ZoomConfig::new(3, 8, 3, vec![4, 8]);
            f(&mut c);
            c.validate()
        };
        assert!(base(&|_| {}).is_ok());
        assert!(matches!(
            base(&|c| c.num_levels = 0).unwrap_err(),
            ModelError::NoLevels(0)
        ));
        assert!(matches!(
            base(&|c| c.num_classes = 1).unwrap_err(),
            ModelError::TooFewClasses(1)
        ));
        assert!(matches!(
            base(&|c| c.schedule = vec![4]).unwrap_err(),
            ModelError::ScheduleLength { got: 1, expected: 2 }
        ));
        assert!(matches!(
            base(&|c| c.schedule = vec![4, 17]).unwrap_err(),
            ModelError::ScheduleTooWide { step: 1, k: 17, available: 16 }
        ));
        assert!(matches!(
            base(&|c| c.dropout = 1.0).unwrap_err(),
            ModelError::BadDropout(_)
        ));
        assert!(matches!(
            base(&|c| c.sigma = 0.0).unwrap_err(),
            ModelError::BadSmoothing { .. }
        ));
        // Run-time check: schedule wider than the first level.
        let mut rng = Seed(62).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![5]);
        config.attn_hidden = 2;
        let model: ZoomModel<f64> = ZoomModel::init(config, &mut rng).unwrap();
        let levels = random_levels::<f64>(4, 2, 4, &mut rng);
        assert!(matches!(
            train_forward(&levels, &model, true, &mut rng).unwrap_err(),
            ModelError::FirstLevelTooSmall { rows: 4, k: 5 }
        ));
    }

    #[test]
    fn named_tensors_follow_declared_order() {
        let mut rng = Seed(63).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 4, 2, vec![2]);
        config.attn_hidden = 2;
        let model: ZoomModel<f64> = ZoomModel::init(config, &mut rng).unwrap();
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            vec![
                "pool_attn.0.v",
                "pool_attn.0.u",
                "pool_attn.0.w",
                "pool_attn.1.v",
                "pool_attn.1.u",
                "pool_attn.1.w",
                "zoom_attn.0.v",
                "zoom_attn.0.u",
                "zoom_attn.0.w",
                "classifier.w1",
                "classifier.b1",
                "classifier.w2",
                "classifier.b2",
            ]
        );
        assert_eq!(model.num_params(), 2 * (2 * 2 * 4 + 2) + (2 * 2 * 4 + 2) + (2 * 4 + 2 + 2 * 2 + 2));
    }

    #[test]
    fn identical_seeds_reproduce_identical_forward_passes() {
        let build = || {
            let mut rng = Seed(64).stream(StreamId::Scratch(0));
            let mut config = ZoomConfig::new(2, 4, 3, vec![2]);
            config.attn_hidden = 2;
            let model: ZoomModel<f32> = ZoomModel::init(config, &mut rng).unwrap();
            let levels = random_levels::<f32>(4, 2, 4, &mut rng);
            let trace = train_forward(&levels, &model, true, &mut rng).unwrap();
            trace.logits.to_vec()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn patch_dims_mismatch_is_reported_with_level() {
        let mut rng = Seed(65).stream(StreamId::Scratch(0));
        let mut config = ZoomConfig::new(2, 8, 2, vec![2]);
        config.attn_hidden = 2;
        let model: ZoomModel<f32> = ZoomModel::init(config, &mut rng).unwrap();
        let dims = PatchDims {
            height: 1,
            width: 3,
            channels: 1,
        };
        let levels: Vec<Array2<f32>> = (0..2)
            .map(|m| {
                Array2::from_shape_simple_fn((4 * BRANCHING.pow(m), 3), || {
                    f32::standard_normal(&mut rng)
                })
            })
            .collect();
        let pyramid = PatchPyramid::new("p", 0, dims, levels).unwrap();
        // Encoder expects 4-wide patches; the pyramid provides 3-wide ones.
        let encoder = TestEncoder {
            weights: Array2::from_shape_simple_fn((8, 4), || f32::standard_normal(&mut rng)),
        };
        let err = infer(
            &InferInput::Patches {
                pyramid: &pyramid,
                encoder: &encoder,
            },
            &model,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Encode { level: 0, .. }));
    }
}
