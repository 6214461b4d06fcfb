//! Train a small checkerboard denoiser, sample it along a 20-step path and
//! score the samples.
//!
//! ```bash
//! cargo run --release --example denoise_and_sample
//! ```

use ldsb::data::{checkerboard_sample, CheckerboardSpec};
use ldsb::denoiser::{held_out_mse, train_denoiser, PredictionMode, TrainOptions};
use ldsb::metrics::evaluate;
use ldsb::sampler::reverse_sample;
use ldsb::schedule::{init_vp, SubsampleMap};

fn main() -> ldsb::Result<()> {
    let spec = CheckerboardSpec::default();
    let data = checkerboard_sample(&spec, 20_000, 1)?;
    let fine = init_vp(1e-4, 0.02, SubsampleMap::identity(1000)?)?;

    let epochs = 60;
    let trained = train_denoiser(&data, &fine, PredictionMode::NoisePrediction, epochs, 1e-2, 0, TrainOptions::default())?;
    let path = init_vp(1e-4, 0.02, SubsampleMap::uniform(1000, 20)?)?;
    println!(
        "{epochs} epochs: final loss {:.4}, held-out mse {:.4}",
        trained.epoch_losses.last().unwrap(),
        held_out_mse(&trained.denoiser, &data[..2000], &path, 5)?
    );

    let (samples, trajectories) = reverse_sample(&path, &trained.denoiser, 5000, 7, true)?;
    let reference = checkerboard_sample(&spec, 5000, 99)?;
    let report = evaluate(&samples, &reference, &spec, 256, 3)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("first chain ends at {:?}", trajectories[0].states[0]);
    Ok(())
}
