//! Compares zoomed inference against the full-grid baseline on both the
//! analytic cost model and the wall clock.
//!
//! The zoom pipeline encodes `N_0 + sum_j 4 K_j` patches per sample; the
//! baseline encodes the entire finest level (`N_0 * 4^(M-1)`). With 16
//! coarse patches and a (12, 12) schedule that is 112 versus 256 encoder
//! calls. The saving is set by the schedule, not the image, so it grows
//! with the pyramid.
//!
//!     cargo run --release -p pyramil --example efficiency_benchmark

use pyramil::bench::{count_flops, mark_pareto, measure_throughput, CostMode, FrontierPoint};
use pyramil::io::Split;
use pyramil::metrics::accuracy;
use pyramil::model::{full_grid_infer, infer, InferInput, PatchEncoder, ZoomConfig};
use pyramil::synth::{encode_dataset, generate_dataset, SynthConfig, SynthEncoder};
use pyramil::train::{fit, FeatureDataset, TrainConfig};

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
    let data = FeatureDataset::new(dataset.index.clone(), features)?;

    // A wide operating point: select 12 of 16 parents, then 12 of their 48
    // children, so the savings come purely from pruning the finest level.
    let model_config = ZoomConfig::new(3, synth.feature_dim, synth.num_classes, vec![12, 12]);
    println!("training a (12, 12)-schedule model for 12 epochs...");
    let model = fit(
        &model_config,
        &data,
        &TrainConfig { epochs: 12, learning_rate: 1e-3, ..TrainConfig::default() },
    )?
    .best;

    // Analytic cost across schedules: the zoom ledger depends only on the
    // selection widths.
    println!("\nanalytic cost per sample (16 coarse patches, 256 finest):");
    println!("{:<12} {:>14} {:>16}", "schedule", "encoder_calls", "total_flops");
    for schedule in [vec![3, 12], vec![12, 12], vec![16, 64]] {
        let cfg = ZoomConfig::new(3, synth.feature_dim, synth.num_classes, schedule.clone());
        let ledger = count_flops(&cfg, synth.first_level_rows, encoder.flops_per_patch(), CostMode::Zoom);
        println!("{:<12} {:>14} {:>16}", format!("{schedule:?}"), ledger.encoder_calls(), ledger.total_flops());
    }
    let full = count_flops(
        &model_config,
        synth.first_level_rows,
        encoder.flops_per_patch(),
        CostMode::FullGrid,
    );
    println!("{:<12} {:>14} {:>16}", "full grid", full.encoder_calls(), full.total_flops());
    let zoom = count_flops(
        &model_config,
        synth.first_level_rows,
        encoder.flops_per_patch(),
        CostMode::Zoom,
    );
    println!(
        "\n(12, 12) zoom / full-grid: {} / {} encoder calls = {:.4} of the FLOPs",
        zoom.encoder_calls(),
        full.encoder_calls(),
        zoom.total_flops() as f64 / full.total_flops() as f64
    );

    // Wall clock: classify the whole test split from raw patches, repeatedly.
    let test: Vec<_> = dataset
        .index
        .samples
        .iter()
        .zip(&dataset.pyramids)
        .filter(|(r, _)| r.split == Split::Test)
        .collect();
    let mut points = Vec::new();
    println!("\nmeasured over {} test samples (median of 4 timed passes):", test.len());
    println!("{:<10} {:>9} {:>14} {:>16}", "mode", "accuracy", "samples/hour", "total_flops");
    for mode in [CostMode::Zoom, CostMode::FullGrid] {
        let run_pass = || {
            let mut preds = Vec::with_capacity(test.len());
            for (_, pyramid) in &test {
                let input = InferInput::Patches { pyramid, encoder: &encoder };
                let inference = match mode {
                    CostMode::Zoom => infer(&input, &model),
                    CostMode::FullGrid => full_grid_infer(&input, &model),
                }
                .expect("inference on valid data");
                preds.push(inference.predicted);
            }
            preds
        };
        let preds = run_pass();
        let labels: Vec<_> = test.iter().map(|(r, _)| r.label).collect();
        let acc = accuracy(&preds, &labels)?;
        let report = measure_throughput(
            || {
                run_pass();
            },
            test.len(),
            5,
        )?;
        let ledger = count_flops(
            &model.config,
            synth.first_level_rows,
            encoder.flops_per_patch(),
            mode,
        );
        let label = match mode {
            CostMode::Zoom => "zoom",
            CostMode::FullGrid => "full_grid",
        };
        println!(
            "{label:<10} {acc:>9.3} {:>14.0} {:>16}",
            report.samples_per_hour,
            ledger.total_flops()
        );
        points.push(FrontierPoint {
            label: label.to_string(),
            cost: ledger.total_flops() as f64,
            value: acc,
            optimal: false,
        });
    }

    mark_pareto(&mut points);
    let frontier: Vec<_> = points.iter().filter(|p| p.optimal).map(|p| p.label.as_str()).collect();
    println!("\ncost/accuracy frontier: {frontier:?}");
    Ok(())
}
