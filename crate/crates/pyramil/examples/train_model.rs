//! Trains the zoom model end to end on the synthetic task and reports test
//! accuracy of the best validation checkpoint.
//!
//! Training runs the smoothed (perturbed) Top-K so gradients flow through
//! the patch-selection step into the coarse attention heads; validation and
//! test always use the deterministic hard Top-K, i.e. the cheap inference
//! path that will be deployed.
//!
//!     cargo run --release -p pyramil --example train_model

use pyramil::io::Split;
use pyramil::model::ZoomConfig;
use pyramil::synth::{encode_dataset, generate_dataset, SynthConfig, SynthEncoder};
use pyramil::train::{evaluate, fit, FeatureDataset, TrainConfig};

fn main() -> anyhow::Result<()> {
    let synth = SynthConfig::default();
    println!(
        "generating {} train / {} val / {} test samples...",
        synth.train_samples, synth.val_samples, synth.test_samples
    );
    let dataset = generate_dataset(&synth)?;
    let encoder = SynthEncoder::from_config(&synth);
    let features = encode_dataset(&dataset.pyramids, &encoder)?;
    let data = FeatureDataset::new(dataset.index, features)?;

    // Select 3 of 16 coarse patches, then 12 of their 64 children.
    let model_config = ZoomConfig::new(3, synth.feature_dim, synth.num_classes, vec![3, 12]);
    let train_config = TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    };
    println!(
        "training: schedule {:?}, sigma {}, {} noise samples, lr {}, {} epochs\n",
        model_config.schedule,
        model_config.sigma,
        model_config.noise_samples,
        train_config.learning_rate,
        train_config.epochs
    );

    let result = fit(&model_config, &data, &train_config)?;
    println!("epoch  train_loss  val_loss  val_acc  val_wf1      lr  best");
    for r in &result.log {
        println!(
            "{:>5}  {:>10.4}  {:>8.4}  {:>7.3}  {:>7.3}  {:>6.0e}  {}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_accuracy,
            r.val_weighted_f1,
            r.learning_rate,
            if r.best { "*" } else { "" }
        );
    }

    let test = evaluate(&result.best, &data, Split::Test)?;
    println!(
        "\nbest epoch {} | test accuracy {:.3}, weighted F1 {:.3}, loss {:.4}",
        result.best_epoch, test.accuracy, test.weighted_f1, test.loss
    );
    println!(
        "the deployed model reads {} + {} + {} patches per sample instead of all {}",
        synth.first_level_rows,
        4 * model_config.schedule[0],
        4 * model_config.schedule[1],
        synth.first_level_rows * 16
    );
    Ok(())
}
