//! Randomly rescale the factors of a 20-step path and count how many
//! perturbed paths sample better than the original.
//!
//! ```bash
//! cargo run --release --example perturbation
//! ```

use ldsb::cli::{perturb_demo, Config};
use ldsb::denoiser::{train_denoiser, PredictionMode, TrainOptions};

fn main() -> ldsb::Result<()> {
    let mut cfg = Config::default();
    cfg.sampling.n = 5000;
    let data = cfg.data.sample()?;
    let fine = cfg.schedule.training_path()?;
    let net = train_denoiser(&data, &fine, PredictionMode::NoisePrediction, 120, 1e-2, 0, TrainOptions::default())?.denoiser;

    let rows = perturb_demo(&net, &cfg.schedule.init_path()?, &cfg.reference()?, &cfg)?;
    let baseline = rows[0].sliced_wasserstein;
    for r in &rows {
        let label = r.draw.map_or("baseline".into(), |d| format!("draw {d}"));
        let mark = if r.sliced_wasserstein < baseline { "  better" } else { "" };
        println!("{label:>9}: SW {:.4}, support {:.3}{mark}", r.sliced_wasserstein, r.in_support_fraction);
    }
    Ok(())
}
