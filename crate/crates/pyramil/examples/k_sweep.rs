//! Sweeps the selection width K and tabulates the cost/accuracy trade-off.
//!
//! K controls how many coarse patches survive each zoom step (the deeper
//! widths scale as 4^j K so the working set never shrinks relative to its
//! parents). Small K is cheap but risks missing an informative patch when
//! the attention is imperfect; K equal to the level size degenerates to
//! reading everything. The synthetic task plants 2 informative patches, so
//! accuracy should saturate by K = 2-3 at a fraction of the cost.
//!
//!     cargo run --release -p pyramil --example k_sweep

use pyramil::bench::{count_flops, CostMode};
use pyramil::io::Split;
use pyramil::model::{PatchEncoder, ZoomConfig};
use pyramil::synth::{encode_dataset, generate_dataset, SynthConfig, SynthEncoder};
use pyramil::train::{evaluate, fit, FeatureDataset, TrainConfig};

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig {
        train_samples: 240,
        val_samples: 60,
        test_samples: 120,
        ..SynthConfig::default()
    };
    let dataset = generate_dataset(&synth)?;
    let encoder = SynthEncoder::from_config(&synth);
    let features = encode_dataset(&dataset.pyramids, &encoder)?;
    let data = FeatureDataset::new(dataset.index, features)?;

    let train_config = TrainConfig {
        epochs: 12,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let seeds = [0u64, 1];

    println!(
        "sweeping K with {} seeds x {} epochs each\n",
        seeds.len(),
        train_config.epochs
    );
    println!(
        "{:>4} {:>12} {:>14} {:>10} {:>8}  per-seed",
        "K", "schedule", "encoder_calls", "mean_acc", "std"
    );
    let mut best: Option<(usize, f64)> = None;
    for k in [1usize, 2, 3, 4, 8, 16] {
        let schedule = vec![k, 4 * k];
        let config = ZoomConfig::new(3, synth.feature_dim, synth.num_classes, schedule.clone());
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let run = TrainConfig { seed, ..train_config.clone() };
            let result = fit(&config, &data, &run)?;
            per_seed.push(evaluate(&result.best, &data, Split::Test)?.accuracy);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let std = (per_seed.iter().map(|a| (a - mean).powi(2)).sum::<f64>()
            / (per_seed.len() - 1) as f64)
            .sqrt();
        let calls = count_flops(
            &config,
            synth.first_level_rows,
            encoder.flops_per_patch(),
            CostMode::Zoom,
        )
        .encoder_calls();
        let seeds_text = per_seed
            .iter()
            .map(|a| format!("{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "{k:>4} {:>12} {calls:>14} {mean:>10.3} {std:>8.3}  {seeds_text}",
            format!("{schedule:?}")
        );
        if best.is_none_or(|(_, acc)| mean > acc) {
            best = Some((k, mean));
        }
    }

    let (best_k, best_acc) = best.expect("at least one K");
    println!("\nbest mean accuracy {best_acc:.3} at K = {best_k}");
    println!("(K = 16 selects every coarse patch: maximal cost, no accuracy left to gain)");
    Ok(())
}
