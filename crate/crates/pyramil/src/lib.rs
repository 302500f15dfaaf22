//! Attention-driven multi-magnification patch selection for
//! multiple-instance learning on gigapixel-style image pyramids.
//!
//! The model reads an entire coarse magnification level, scores its patches
//! with gated attention, and zooms into the `K` most promising parents at the
//! next level. During training the Top-K step is made differentiable by
//! perturbing the attention scores with Gaussian noise and averaging the
//! resulting hard selections; at inference it collapses to a plain Top-K, so
//! only a small fraction of the finest level is ever encoded.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release -p pyramil --example generate_dataset
//! cargo run --release -p pyramil --example train_model
//! cargo run --release -p pyramil --example run_inference
//! cargo run --release -p pyramil --example efficiency_benchmark
//! cargo run --release -p pyramil --example ablation_table
//! cargo run --release -p pyramil --example attention_heatmap
//! cargo run --release -p pyramil --example gradient_check
//! cargo run --release -p pyramil --example k_sweep
//! ```
//!
//! The same capabilities are exposed by the thin `pyramil` binary
//! (`generate`, `train`, `infer`, `bench`, `ablate`, `attnmap`, `sweep-k`).

pub mod attention;
pub mod bench;
pub mod cli;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod model;
pub mod opt;
pub mod pyramid;
pub mod real;
pub mod rng;
pub mod synth;
pub mod topk;
pub mod train;

pub use real::{real, Real};
pub use rng::{Seed, StreamId};
