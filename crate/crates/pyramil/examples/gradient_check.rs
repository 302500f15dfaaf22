//! Numerical verification of the smoothed Top-K operator and of the model's
//! analytic gradients.
//!
//! Three independent checks, mirroring how the operator is tested:
//!
//! 1. Forward: the Monte-Carlo estimate of `E[hard_topk(s + sigma Z)]` is
//!    compared against a much larger, independently seeded estimate; the
//!    error must shrink like `1/sqrt(S)`.
//! 2. Backward: the analytic vector-Jacobian product (which reuses the
//!    forward pass's own noise — common random numbers) is compared against
//!    central finite differences of the frozen-noise forward.
//! 3. End to end: for a single-level model the loss is deterministic and
//!    smooth, so finite differences in f64 must match the backward pass to
//!    high precision on every parameter.
//!
//!     cargo run --release -p pyramil --example gradient_check

use ndarray::{Array1, Array2};
use pyramil::metrics::cross_entropy;
use pyramil::model::{train_backward, train_forward, ZoomConfig, ZoomModel};
use pyramil::topk::{
    perturbed_topk_backward, perturbed_topk_forward, perturbed_topk_forward_with_noise, TopKConfig,
};
use pyramil::{Real, Seed, StreamId};

fn main() -> anyhow::Result<()> {
    forward_convergence()?;
    vjp_vs_finite_differences()?;
    end_to_end_exact()?;
    println!("\nall gradient checks passed");
    Ok(())
}

/// Forward Monte-Carlo error shrinks like 1/sqrt(S).
fn forward_convergence() -> anyhow::Result<()> {
    println!("1. smoothed forward convergence (N=8, K=3, sigma=0.05)");
    let scores = Array1::from_vec(vec![0.31f64, 0.02, 0.29, 0.05, 0.33, 0.27, 0.01, 0.12]);

    // Reference: an independent run with a very large sample count.
    let reference = {
        let cfg = TopKConfig { k: 3, sigma: 0.05, num_samples: 400_000 };
        let mut rng = Seed(999).stream(StreamId::Scratch(0));
        perturbed_topk_forward(scores.view(), &cfg, &mut rng)?.0
    };

    println!("   {:>8} {:>12}", "samples", "max |err|");
    let mut last = f64::INFINITY;
    for (i, samples) in [100usize, 1_600, 25_600].into_iter().enumerate() {
        let cfg = TopKConfig { k: 3, sigma: 0.05, num_samples: samples };
        let mut rng = Seed(7).stream(StreamId::Scratch(i as u64 + 1));
        let (estimate, _) = perturbed_topk_forward(scores.view(), &cfg, &mut rng)?;
        let err = (estimate.entries() - reference.entries())
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        println!("   {samples:>8} {err:>12.5}");
        assert!(err < last, "error did not shrink with more samples");
        last = err;
    }
    Ok(())
}

/// Analytic VJP against central finite differences of an independently
/// estimated smoothed forward. The reference shares its noise across the
/// two sides of each difference (so the difference is not drowned in MC
/// error) but never with the VJP under test. Coordinates below 0.01 in
/// magnitude carry mostly estimator noise and are reported, not checked.
fn vjp_vs_finite_differences() -> anyhow::Result<()> {
    println!("\n2. analytic VJP (S=200000) vs independent finite differences (N=6, K=2)");
    let scores = Array1::from_vec(vec![0.35f64, 0.05, 0.25, 0.15, 0.30, 0.10]);
    let cfg = TopKConfig { k: 2, sigma: 0.05, num_samples: 200_000 };
    // Cotangent: weight each indicator entry differently so every coordinate
    // of the VJP is exercised.
    let grad_out = Array2::from_shape_fn((scores.len(), cfg.k), |(n, k)| {
        0.3 + 0.1 * n as f64 - 0.2 * k as f64
    });

    let analytic = {
        let mut rng = Seed(21).stream(StreamId::Scratch(1));
        let (_, cache) = perturbed_topk_forward(scores.view(), &cfg, &mut rng)?;
        perturbed_topk_backward(&cache, grad_out.view())
    };

    // Independent reference noise, larger sample count.
    let reference_cfg = TopKConfig { num_samples: 500_000, ..cfg };
    let mut rng = Seed(22).stream(StreamId::Scratch(2));
    let noise = Array2::from_shape_simple_fn((reference_cfg.num_samples, scores.len()), || {
        f64::standard_normal(&mut rng)
    });

    let eps = 0.005; // 0.1 * sigma
    let mut worst = 0.0f64;
    println!(
        "   {:>5} {:>12} {:>12} {:>10}",
        "coord", "analytic", "reference", "rel err"
    );
    for i in 0..scores.len() {
        let mut lo = scores.clone();
        let mut hi = scores.clone();
        lo[i] -= eps;
        hi[i] += eps;
        let f_lo = perturbed_topk_forward_with_noise(lo.view(), &reference_cfg, noise.clone())?.0;
        let f_hi = perturbed_topk_forward_with_noise(hi.view(), &reference_cfg, noise.clone())?.0;
        let reference = ((f_hi.entries() - f_lo.entries()) * &grad_out).sum() / (2.0 * eps);
        if reference.abs() <= 0.01 {
            println!(
                "   {i:>5} {:>12.5} {reference:>12.5}    (below 0.01, reported only)",
                analytic[i]
            );
            continue;
        }
        let rel = (analytic[i] - reference).abs() / reference.abs();
        worst = worst.max(rel);
        println!("   {i:>5} {:>12.5} {reference:>12.5} {rel:>10.4}", analytic[i]);
    }
    assert!(worst < 0.05, "worst relative error {worst} exceeds 5%");
    Ok(())
}

/// Single-level model: no selection step, so the whole loss is smooth and
/// the backward pass must match f64 finite differences almost exactly.
fn end_to_end_exact() -> anyhow::Result<()> {
    println!("\n3. end-to-end backward vs finite differences (single level, f64)");
    let config = ZoomConfig::new(1, 10, 3, vec![]);
    let mut rng = Seed(3).stream(StreamId::ModelInit);
    let model: ZoomModel<f64> = ZoomModel::init(config, &mut rng)?;
    let features = Array2::from_shape_simple_fn((14, 10), || 0.4 * f64::standard_normal(&mut rng));
    let levels = vec![features];
    let label = 1;

    let loss_of = |m: &ZoomModel<f64>| -> f64 {
        let mut rng = Seed(0).stream(StreamId::Scratch(9));
        let trace = train_forward(&levels, m, false, &mut rng).expect("forward on valid shapes");
        cross_entropy(trace.logits.view(), label).expect("finite logits").0
    };

    let grads = {
        let mut rng = Seed(0).stream(StreamId::Scratch(9));
        let trace = train_forward(&levels, &model, false, &mut rng)?;
        let (_, grad_logits) = cross_entropy(trace.logits.view(), label)?;
        train_backward(&trace, &model, grad_logits.view())
    };

    let eps = 1e-6;
    let mut worst = 0.0f64;
    for (name, grad) in grads.named_tensors() {
        let mut max_rel = 0.0f64;
        for i in 0..grad.len() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.named_tensors_mut()
                .into_iter()
                .find(|(n, _)| *n == name)
                .expect("same layout")
                .1[i] += eps;
            minus
                .named_tensors_mut()
                .into_iter()
                .find(|(n, _)| *n == name)
                .expect("same layout")
                .1[i] -= eps;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let rel = (grad[i] - numeric).abs() / numeric.abs().max(1e-6);
            max_rel = max_rel.max(rel);
        }
        worst = worst.max(max_rel);
        println!("   {name:<24} {} params, max rel err {max_rel:.2e}", grad.len());
    }
    assert!(worst < 1e-4, "worst relative error {worst} exceeds 1e-4");
    Ok(())
}
