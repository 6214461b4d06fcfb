//! Fit a KAN to the per-step factors of a path, check its size, and show
//! that a local update leaves far-away outputs alone.
//!
//! ```bash
//! cargo run --release --example kan_factors
//! ```

use ldsb::kan::{interior_factors, kan_fit, kan_predict_schedule, FactorModel, KanNetwork, MlpNet};
use ldsb::schedule::{init_vp, SubsampleMap};

fn main() -> ldsb::Result<()> {
    let path = init_vp(1e-4, 0.02, SubsampleMap::uniform(1000, 20)?)?;
    let (xs, a, b) = interior_factors(&path);

    let mut net_a = KanNetwork::for_steps(20, 0)?;
    let mut net_b = KanNetwork::for_steps(20, 1)?;
    let loss_a = kan_fit(&mut net_a, &xs, &a, 2000, 1e-2)?;
    let loss_b = kan_fit(&mut net_b, &xs, &b, 2000, 1e-2)?;
    println!("fit mse: A {loss_a:.2e}, B {loss_b:.2e}");
    println!("KAN: {} parameters, {} bytes serialized", net_a.param_count(), net_a.size_bytes());

    let predicted = kan_predict_schedule(&net_a, &net_b, &path)?;
    let worst = predicted.fa().iter().zip(path.fa()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("largest f_A deviation of the predicted path: {worst:.2e}");

    // Refit A(t) on the first three steps only and watch the rest.
    let near = &xs[..3];
    let far: Vec<f64> = xs[10..].iter().map(|&x| net_a.predict(x)).collect();
    let lifted: Vec<f64> = a[..3].iter().map(|v| v + 0.002).collect();
    kan_fit(&mut net_a, near, &lifted, 1000, 1e-3)?;
    let drift = xs[10..].iter().zip(&far).map(|(&x, before)| (net_a.predict(x) - before).abs()).fold(0.0, f64::max);
    println!("refit near t = 0: residual {:.1e}, drift at t >= 0.5: {drift:.1e}", (net_a.predict(near[0]) - lifted[0]).abs());

    let mlp = MlpNet::matched(net_a.param_count(), 0)?;
    println!("budget-matched MLP: hidden width {}, {} parameters", mlp.hidden(), mlp.param_count());
    Ok(())
}
