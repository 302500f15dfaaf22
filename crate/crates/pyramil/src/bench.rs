//! Work accounting and benchmarking: FLOP ledgers, the analytic cost model
//! for zoomed versus full-grid inference, wall-clock throughput, and
//! cost/accuracy frontier marking.
//!
//! FLOP conventions, used consistently by the ledger and the analytic
//! model: a multiply-accumulate is 2 FLOPs, a bias add or activation is
//! 1 FLOP per element, and a softmax is 4 FLOPs per element (shift,
//! exponential, sum, divide).

use crate::model::{AttentionMode, SelectionMode, ZoomConfig};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("throughput measurement needs at least 3 runs, got {0}")]
    TooFewRuns(usize),
}

/// Tally of the work done by one inference pass (or an analytic prediction
/// of it). `wall_seconds` stays zero for analytic ledgers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopLedger {
    /// Patches encoded (or feature rows fetched) per level, coarsest first.
    pub encoder_calls_per_level: Vec<u64>,
    /// Total encoder arithmetic.
    pub encoder_flops: u64,
    /// Attention heads, aggregation, and classifier arithmetic.
    pub head_flops: u64,
    /// Measured wall-clock time, when available.
    pub wall_seconds: f64,
}

impl FlopLedger {
    pub fn new(num_levels: usize) -> Self {
        Self {
            encoder_calls_per_level: vec![0; num_levels],
            ..Self::default()
        }
    }

    /// Records `calls` encoder invocations at `level` costing `flops`.
    pub fn record_encoded(&mut self, level: usize, calls: u64, flops: u64) {
        self.encoder_calls_per_level[level] += calls;
        self.encoder_flops += flops;
    }

    /// Total encoder invocations across levels.
    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls_per_level.iter().sum()
    }

    /// Encoder plus head arithmetic.
    pub fn total_flops(&self) -> u64 {
        self.encoder_flops + self.head_flops
    }
}

/// Cost of one gated-attention evaluation over `n` instances with feature
/// width `d` and hidden width `l`: two gating projections (2ndl each) with
/// activations, the gate product, score projection, softmax, and pooling.
pub fn ga_flops(n: usize, d: usize, l: usize) -> u64 {
    let (n, d, l) = (n as u64, d as u64, l as u64);
    4 * n * d * l + 5 * n * l + 4 * n + 2 * n * d
}

/// Cost of the two-layer classifier head (matmuls, biases, ReLU).
pub fn classifier_flops(input_dim: usize, hidden_dim: usize, classes: usize) -> u64 {
    let (i, h, c) = (input_dim as u64, hidden_dim as u64, classes as u64);
    2 * h * i + 2 * h + 2 * c * h + c
}

/// Cost of combining per-level pooled embeddings.
pub fn aggregation_flops(config: &ZoomConfig) -> u64 {
    match config.aggregation {
        crate::model::Aggregation::Sum => {
            ((config.num_levels - 1) * config.feature_dim) as u64
        }
        _ => 0,
    }
}

/// Which pipeline the analytic cost model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Zoomed inference: all of level 0, then children of selections.
    Zoom,
    /// Flat baseline: encode and pool the finest level in full.
    FullGrid,
}

/// Predicts the ledger of one inference pass without running it.
///
/// In zoom mode the encoder runs on `N_0 + sum_j 4 * K_j` patches; the
/// full-grid baseline encodes all `N_0 * 4^(M-1)` finest-level patches and
/// pools them with a single attention head.
pub fn count_flops(
    config: &ZoomConfig,
    first_level_rows: usize,
    encoder_flops_per_patch: u64,
    mode: CostMode,
) -> FlopLedger {
    let mut ledger = FlopLedger::new(config.num_levels);
    let (d, l) = (config.feature_dim, config.attn_hidden);
    match mode {
        CostMode::Zoom => {
            let rows = config.working_rows(first_level_rows);
            for (level, &n) in rows.iter().enumerate() {
                ledger.record_encoded(level, n as u64, n as u64 * encoder_flops_per_patch);
                ledger.head_flops += ga_flops(n, d, l);
            }
            if config.attention == AttentionMode::Dual
                && config.selection != SelectionMode::RandomK
            {
                for (step, &n) in rows[..config.num_levels - 1].iter().enumerate() {
                    let _ = step;
                    ledger.head_flops += ga_flops(n, d, l);
                }
            }
            ledger.head_flops += aggregation_flops(config);
            ledger.head_flops += classifier_flops(
                config.classifier_input_dim(),
                config.classifier_hidden_dim(),
                config.num_classes,
            );
        }
        CostMode::FullGrid => {
            let finest = first_level_rows * crate::pyramid::BRANCHING.pow(config.num_levels as u32 - 1);
            ledger.record_encoded(
                config.num_levels - 1,
                finest as u64,
                finest as u64 * encoder_flops_per_patch,
            );
            ledger.head_flops += ga_flops(finest, d, l);
            ledger.head_flops +=
                classifier_flops(config.feature_dim, config.classifier_hidden_dim(), config.num_classes);
        }
    }
    ledger
}

/// Wall-clock throughput of a repeated dataset pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Samples processed per pass.
    pub num_samples: usize,
    /// Timed passes, including the discarded warm-up at index 0.
    pub per_run_seconds: Vec<f64>,
    /// Median over the non-warm-up passes.
    pub median_seconds: f64,
    /// `num_samples / median_seconds * 3600`.
    pub samples_per_hour: f64,
}

/// Times `run_pass` on a monotonic clock `runs` times (at least 3),
/// discards the first pass as warm-up, and reports the median of the rest.
/// An even count takes the mean of the two middle values.
pub fn measure_throughput<P: FnMut()>(
    mut run_pass: P,
    num_samples: usize,
    runs: usize,
) -> Result<ThroughputReport, BenchError> {
    if runs < 3 {
        return Err(BenchError::TooFewRuns(runs));
    }
    let mut per_run_seconds = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        run_pass();
        per_run_seconds.push(start.elapsed().as_secs_f64());
    }
    let mut warm: Vec<f64> = per_run_seconds[1..].to_vec();
    warm.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let median_seconds = if warm.len() % 2 == 1 {
        warm[warm.len() / 2]
    } else {
        0.5 * (warm[warm.len() / 2 - 1] + warm[warm.len() / 2])
    };
    let samples_per_hour = if median_seconds > 0.0 {
        num_samples as f64 / median_seconds * 3600.0
    } else {
        f64::INFINITY
    };
    Ok(ThroughputReport {
        num_samples,
        per_run_seconds,
        median_seconds,
        samples_per_hour,
    })
}

/// One configuration on the cost/quality plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub label: String,
    /// Cost to minimize (e.g. total FLOPs).
    pub cost: f64,
    /// Quality to maximize (e.g. weighted F1).
    pub value: f64,
    /// Set by [`mark_pareto`]: no other point is at least as good on both
    /// axes and strictly better on one.
    pub optimal: bool,
}

impl FrontierPoint {
    pub fn new(label: impl Into<String>, cost: f64, value: f64) -> Self {
        Self {
            label: label.into(),
            cost,
            value,
            optimal: false,
        }
    }
}

/// Marks Pareto-optimal points in place (minimize cost, maximize value).
pub fn mark_pareto(points: &mut [FrontierPoint]) {
    for i in 0..points.len() {
        let dominated = (0..points.len()).any(|j| {
            j != i
                && points[j].cost <= points[i].cost
                && points[j].value >= points[i].value
                && (points[j].cost < points[i].cost || points[j].value > points[i].value)
        });
        points[i].optimal = !dominated;
    }
}
