//! Gated attention pooling with a hand-derived backward pass.
//!
//! For a bag `H` of `N` instance embeddings, each instance receives a score
//! from two gated branches,
//!
//! ```text
//! score_i = w' ( tanh(V h_i) * sigmoid(U h_i) )        (elementwise product)
//! a = softmax(score)
//! pooled = sum_i a_i h_i
//! ```
//!
//! The same module serves two roles in the zoom pipeline: pooling a level
//! into one embedding (gradient arrives through `pooled`) and scoring
//! patches for zoom selection (gradient arrives through `weights`), so the
//! backward pass accepts cotangents for either output or both.

use crate::real::Real;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use thiserror::Error;

/// Errors from the attention kernels.
#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("attention input must contain at least one instance")]
    EmptyBag,
    #[error("instance width {got} does not match attention feature width {expected}")]
    WidthMismatch { expected: usize, got: usize },
}

/// Parameters of one gated attention head. Also used as the matching
/// gradient container, in which case every field holds accumulated partials.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttention<F> {
    /// Tanh branch weights, `[L, D]`.
    pub v: Array2<F>,
    /// Sigmoid branch weights, `[L, D]`.
    pub u: Array2<F>,
    /// Score projection, `[L]`.
    pub w: Array1<F>,
}

impl<F: Real> GatedAttention<F> {
    /// Uniform initialization: branch weights in `[-1/sqrt(D), 1/sqrt(D)]`,
    /// score projection in `[-1/sqrt(L), 1/sqrt(L)]`. Draw order is `v`
    /// row-major, then `u`, then `w`, which pins checkpoints to a seed.
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let branch_bound = F::from_f64(1.0 / (feature_dim as f64).sqrt());
        let score_bound = F::from_f64(1.0 / (hidden_dim as f64).sqrt());
        let mut draw = |bound: F| F::symmetric_uniform(rng, bound);
        let v = Array2::from_shape_simple_fn((hidden_dim, feature_dim), || draw(branch_bound));
        let u = Array2::from_shape_simple_fn((hidden_dim, feature_dim), || draw(branch_bound));
        let w = Array1::from_shape_simple_fn(hidden_dim, || draw(score_bound));
        Self { v, u, w }
    }

    /// All-zero container with the same shapes, for gradient accumulation.
    pub fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            v: Array2::zeros((hidden_dim, feature_dim)),
            u: Array2::zeros((hidden_dim, feature_dim)),
            w: Array1::zeros(hidden_dim),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.v.nrows()
    }

    /// Named flat views in declared order (`v`, `u`, `w`); the order defines
    /// both optimizer slot layout and checkpoint serialization.
    pub fn tensors(&self) -> [(&'static str, &[F]); 3] {
        [
            ("v", self.v.as_slice().expect("standard layout")),
            ("u", self.u.as_slice().expect("standard layout")),
            ("w", self.w.as_slice().expect("standard layout")),
        ]
    }

    /// Mutable counterpart of [`GatedAttention::tensors`].
    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [F]); 3] {
        [
            ("v", self.v.as_slice_mut().expect("standard layout")),
            ("u", self.u.as_slice_mut().expect("standard layout")),
            ("w", self.w.as_slice_mut().expect("standard layout")),
        ]
    }
}

/// Numerically stable softmax (max-subtracted). Exposed for reuse in tests.
pub fn softmax<F: Real>(scores: ArrayView1<F>) -> Array1<F> {
    let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out = scores.mapv(|s| (s - max).exp());
    let total = out.sum();
    out.mapv_inplace(|e| e / total);
    out
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GaCache<F> {
    /// Input bag, `[N, D]`.
    h: Array2<F>,
    /// `tanh(V h_i)` rows, `[N, L]`.
    gate_tanh: Array2<F>,
    /// `sigmoid(U h_i)` rows, `[N, L]`.
    gate_sig: Array2<F>,
    /// Softmaxed attention weights, `[N]`.
    weights: Array1<F>,
}

impl<F: Real> GaCache<F> {
    pub fn num_instances(&self) -> usize {
        self.h.nrows()
    }
}

/// Forward outputs plus the cache needed to backpropagate.
#[derive(Debug, Clone)]
pub struct GaOutput<F> {
    /// Attention-weighted bag embedding, `[D]`.
    pub pooled: Array1<F>,
    /// Attention weights, `[N]`, nonnegative and summing to one.
    pub weights: Array1<F>,
    pub cache: GaCache<F>,
}

/// Runs gated attention over a bag of instances.
pub fn ga_forward<F: Real>(
    h: ArrayView2<F>,
    params: &GatedAttention<F>,
) -> Result<GaOutput<F>, AttentionError> {
    if h.nrows() == 0 {
        return Err(AttentionError::EmptyBag);
    }
    if h.ncols() != params.feature_dim() {
        return Err(AttentionError::WidthMismatch {
            expected: params.feature_dim(),
            got: h.ncols(),
        });
    }

    let gate_tanh = h.dot(&params.v.t()).mapv_into(F::tanh);
    let gate_sig = h.dot(&params.u.t()).mapv_into(sigmoid);
    let scores = (&gate_tanh * &gate_sig).dot(&params.w);
    let weights = softmax(scores.view());
    let pooled = h.t().dot(&weights);

    Ok(GaOutput {
        pooled,
        weights: weights.clone(),
        cache: GaCache {
            h: h.to_owned(),
            gate_tanh,
            gate_sig,
            weights,
        },
    })
}

/// Backpropagates through [`ga_forward`].
///
/// `grad_pooled` is the cotangent of the pooled embedding; `grad_weights`,
/// when present, is the cotangent of the attention weights (used when the
/// weights feed the zoom selector). Returns the input gradient `[N, D]` and
/// parameter gradients in a [`GatedAttention`] container.
pub fn ga_backward<F: Real>(
    cache: &GaCache<F>,
    params: &GatedAttention<F>,
    grad_pooled: ArrayView1<F>,
    grad_weights: Option<ArrayView1<F>>,
) -> (Array2<F>, GatedAttention<F>) {
    let (n, l) = cache.gate_tanh.dim();
    assert_eq!(grad_pooled.len(), params.feature_dim(), "pooled cotangent width");
    if let Some(gw) = &grad_weights {
        assert_eq!(gw.len(), n, "weights cotangent length");
    }
    let a = &cache.weights;

    // pooled = H' a  =>  da_i += <grad_pooled, h_i>, grad_h_i += a_i grad_pooled.
    let mut da = cache.h.dot(&grad_pooled);
    if let Some(gw) = grad_weights {
        da.zip_mut_with(&gw, |acc, &g| *acc = *acc + g);
    }

    // Softmax Jacobian: dscore = a * (da - <da, a>).
    let inner = da.dot(a);
    let dscores = Array1::from_shape_fn(n, |i| a[i] * (da[i] - inner));

    // score_i = w' (t_i * s_i).
    let gated = &cache.gate_tanh * &cache.gate_sig;
    let dw = gated.t().dot(&dscores);
    let dpre_tanh = Array2::from_shape_fn((n, l), |(i, j)| {
        let t = cache.gate_tanh[[i, j]];
        dscores[i] * params.w[j] * cache.gate_sig[[i, j]] * (F::one() - t * t)
    });
    let dpre_sig = Array2::from_shape_fn((n, l), |(i, j)| {
        let s = cache.gate_sig[[i, j]];
        dscores[i] * params.w[j] * cache.gate_tanh[[i, j]] * s * (F::one() - s)
    });

    let dv = dpre_tanh.t().dot(&cache.h);
    let du = dpre_sig.t().dot(&cache.h);

    let mut grad_h = dpre_tanh.dot(&params.v) + dpre_sig.dot(&params.u);
    for (i, mut row) in grad_h.rows_mut().into_iter().enumerate() {
        let ai = a[i];
        row.zip_mut_with(&grad_pooled, |g, &gp| *g = *g + ai * gp);
    }

    (
        grad_h,
        GatedAttention {
            v: dv,
            u: du,
            w: dw,
        },
    )
}
