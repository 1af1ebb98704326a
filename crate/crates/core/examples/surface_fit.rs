//! Fits the log-log temperature/pressure surface to noisy grid values and
//! evaluates it at ambient conditions.
//!
//! ```text
//! cargo run --example surface_fit
//! ```

use difftrace::surface_fit::{eval_surface, fit_surface, grid_points, SurfaceCoeffs};
use rand::{Rng, SeedableRng};

fn main() -> difftrace::Result<()> {
    let reference = SurfaceCoeffs::REFERENCE;
    println!(
        "reference D(298 K, 1 atm) = {:.4} Å²/ps",
        eval_surface(&reference, 298.0, 1.0)?
    );

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
    let mut pts = grid_points(&reference);
    for p in &mut pts {
        p.d *= 1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0);
    }
    let fit = fit_surface(&pts)?;
    let diag = fit.fit.expect("fit diagnostics");
    println!(
        "refit on {} points: r2 = {:.5}, rmse = {:.2e} Å²/ps",
        diag.n, diag.r2, diag.rmse
    );
    println!("{:>6} {:>14} {:>14}", "term", "reference", "refit");
    let names = ["c0", "cT", "cP", "cT2", "cP2", "cTP", "cP3"];
    for ((n, a), b) in names.iter().zip(reference.to_array()).zip(fit.to_array()) {
        println!("{n:>6} {a:>14.6e} {b:>14.6e}");
    }
    println!(
        "refit D(298 K, 1 atm) = {:.4} Å²/ps",
        eval_surface(&fit, 298.0, 1.0)?
    );
    Ok(())
}
