//! MAP diffusion coefficient with a Laplace variance from noisy Brownian
//! paths, next to the usual MSD-slope estimate.
//!
//! ```text
//! cargo run --release --example local_estimate -- [seed]
//! ```

use difftrace::gp_local::{map_estimate, GpDataset, MapOptions};
use difftrace::synth::{gen_brownian, msd_estimate, SynthSpec};
use difftrace::trajio::segment;

fn main() -> difftrace::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let (d, a2, dt) = (0.23, 0.05, 0.5);
    let spec = SynthSpec {
        n_frames: 2001,
        n_mols: 1,
        dims: 3,
        sigma2: 2.0 * d * dt,
        a2,
        dt,
        drift: [0.0; 3],
        box_lengths: None,
        seed,
    };
    let u = gen_brownian(&spec)?.unwrapped;
    let segs = segment(&u, 1000)?;
    let data = GpDataset::from_segments(&segs)?;
    let e = map_estimate(&data, &MapOptions::default())?;
    println!("true D       {d}");
    println!(
        "GP MAP D     {:.4} ± {:.4} Å²/ps  (a² = {:.4}, n = {})",
        e.d_md,
        e.s_md.sqrt(),
        e.a2_hat,
        e.n_obs
    );
    println!("MSD slope D  {:.4} Å²/ps", msd_estimate(&u, 10)?);
    println!("converged    {}", e.converged);
    Ok(())
}
