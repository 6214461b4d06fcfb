//! Build the two initial paths, move between weights and per-step factors,
//! and perturb a path.
//!
//! ```bash
//! cargo run --release --example path_schedules
//! ```

use ldsb::schedule::{init_linear, init_vp, perturb, reparam_from_weights, weights_from_factors, SubsampleMap};

fn main() -> ldsb::Result<()> {
    let map = SubsampleMap::uniform(1000, 5)?;
    let vp = init_vp(1e-4, 0.02, map.clone())?;
    let linear = init_linear(map)?;

    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "step", "vp f_A", "vp f_B", "lin f_A", "lin f_B");
    for t in 0..=vp.steps() {
        println!(
            "{:>5} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            vp.map().base_step(t),
            vp.fa()[t],
            vp.fb()[t],
            linear.fa()[t],
            linear.fb()[t]
        );
    }

    let (a, b) = reparam_from_weights(vp.fa(), vp.fb())?;
    println!("\nfactors A: {a:.4?}\nfactors B: {b:.4?}");
    let (fa, fb) = weights_from_factors(&a, &b);
    let err = fa.iter().zip(vp.fa()).chain(fb.iter().zip(vp.fb())).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("round trip error {err:.1e}");

    let noisy = perturb(&vp, 0.05, 1)?;
    println!("\nperturbed f_A: {:.5?}", noisy.fa());
    let mut csv = Vec::new();
    noisy.write_csv(&mut csv)?;
    print!("\n{}", String::from_utf8_lossy(&csv));
    Ok(())
}
