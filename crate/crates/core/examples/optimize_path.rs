//! Optimize a 10-step sampling path for a frozen checkerboard denoiser and
//! compare samples before and after.
//!
//! ```bash
//! cargo run --release --example optimize_path
//! ```

use ldsb::cli::{evaluate_path, Config};
use ldsb::denoiser::{train_denoiser, PredictionMode, TrainOptions};
use ldsb::ldsb::ipf_optimize_reporting;

fn main() -> ldsb::Result<()> {
    let mut cfg = Config::default();
    cfg.schedule.nfe = 10;
    let data = cfg.data.sample()?;
    let reference = cfg.reference()?;
    let fine = cfg.schedule.training_path()?;
    let net = train_denoiser(&data, &fine, PredictionMode::NoisePrediction, 120, 1e-2, 0, TrainOptions::default())?.denoiser;

    let init = cfg.schedule.init_path()?;
    let (path, diag) = ipf_optimize_reporting(&net, &init, &data, &cfg.ipf, |p, r| {
        println!(
            "phase {} {:?}: {} epochs, f_A(T-1) = {:.5}",
            r.path_index,
            r.direction,
            r.b_loss.len(),
            p.fa()[p.steps() - 1]
        );
    })?;
    println!("optimized in {:.1}s", diag.wall_seconds);

    let before = evaluate_path(&net, &init, &reference, &cfg)?;
    let after = evaluate_path(&net, &path, &reference, &cfg)?;
    for key in ["sliced_wasserstein", "in_support_fraction", "mode_coverage"] {
        println!("{key:>20}: {:.4} -> {:.4}", before.metrics[key], after.metrics[key]);
    }
    let mut csv = Vec::new();
    path.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
