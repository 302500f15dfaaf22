//! Renders where the trained model looks, and checks it against where the
//! signal actually is.
//!
//! After training, the coarse attention head should place its mass on the
//! two planted informative patches — that is the only way the zoom chain
//! can reach the class motifs. This example prints the coarse attention of
//! a few test samples as ASCII grids (informative patches bracketed) and
//! writes portable graymaps plus CSVs for the first one.
//!
//!     cargo run --release -p pyramil --example attention_heatmap

use pyramil::heatmap::{attention_csv, level0_grid, patch_position, render_attention};
use pyramil::io::Split;
use pyramil::model::{infer, InferInput, ZoomConfig};
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

    let model_config = ZoomConfig::new(3, synth.feature_dim, synth.num_classes, vec![3, 12]);
    println!("training for 12 epochs...");
    let model = fit(
        &model_config,
        &data,
        &TrainConfig { epochs: 12, learning_rate: 1e-3, ..TrainConfig::default() },
    )?
    .best;

    let test: Vec<_> = dataset
        .index
        .samples
        .iter()
        .zip(&dataset.pyramids)
        .filter(|(r, _)| r.split == Split::Test)
        .collect();

    let grid = level0_grid(synth.first_level_rows)?;
    let mut hits = 0usize;
    for (shown, (record, pyramid)) in test.iter().enumerate() {
        let inference = infer(&InferInput::Patches { pyramid, encoder: &encoder }, &model)?;
        let attention = inference.attention_at(0)?;
        let weights: Vec<(usize, f32)> = attention
            .patch_indices
            .iter()
            .copied()
            .zip(attention.weights.iter().copied())
            .collect();

        let best = weights
            .iter()
            .copied()
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
            .expect("the coarse level is never empty");
        hits += usize::from(record.informative_parents.contains(&best.0));

        if shown < 3 {
            println!(
                "\n{} (label {}, informative parents {:?}, predicted {}):",
                record.id, record.label, record.informative_parents, inference.predicted
            );
            // ASCII grid of coarse attention; [..] marks planted patches.
            let max = weights.iter().map(|w| w.1).fold(f32::MIN, f32::max);
            for r in 0..grid.rows {
                let mut line = String::new();
                for c in 0..grid.cols {
                    let index = r * grid.cols + c;
                    let weight = weights.iter().find(|(i, _)| *i == index).map_or(0.0, |w| w.1);
                    let cell = format!("{:4.0}", 100.0 * weight / max);
                    if record.informative_parents.contains(&index) {
                        line.push_str(&format!("[{cell}]"));
                    } else {
                        line.push_str(&format!(" {cell} "));
                    }
                }
                println!("  {line}");
            }
        }

        if shown == 0 {
            let out = std::path::Path::new("target/examples/attnmap");
            std::fs::create_dir_all(out)?;
            let csv = attention_csv(synth.first_level_rows, 0, &weights)?;
            std::fs::write(out.join(format!("{}_level_1.csv", record.id)), csv)?;
            let pgm = render_attention(synth.first_level_rows, 0, &weights)?
                .scaled(16)?
                .to_pgm();
            std::fs::write(out.join(format!("{}_level_1.pgm", record.id)), pgm)?;
            let position = patch_position(best.0, 0, grid)?;
            println!(
                "  wrote CSV + PGM under {} | strongest patch {} sits at grid ({}, {})",
                out.display(),
                best.0,
                position.0,
                position.1
            );
        }
    }

    println!(
        "\nmax-attention patch is a planted informative patch for {}/{} test samples ({:.1}%)",
        hits,
        test.len(),
        100.0 * hits as f64 / test.len() as f64
    );
    Ok(())
}
