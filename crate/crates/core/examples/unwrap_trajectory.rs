//! Folds a random walk into a periodic box, then unwraps it, removes drift,
//! downsamples and segments it the way the pipeline does.
//!
//! ```text
//! cargo run --example unwrap_trajectory
//! ```

use difftrace::synth::{gen_brownian, SynthSpec};
use difftrace::trajio::{downsample, remove_drift, segment, unwrap};

fn main() -> difftrace::Result<()> {
    let spec = SynthSpec {
        n_frames: 4000,
        n_mols: 16,
        dims: 3,
        sigma2: 0.115,
        a2: 0.0,
        dt: 0.25,
        drift: [0.05, 0.0, -0.02],
        box_lengths: Some([20.0, 20.0, 20.0]),
        seed: 3,
    };
    let t = gen_brownian(&spec)?;
    let wrapped = t.wrapped.expect("box given");
    let u = unwrap(&wrapped);

    let mut worst: f64 = 0.0;
    for (a, b) in u.frames.iter().zip(&t.unwrapped.frames) {
        for (p, q) in a.iter().zip(b) {
            // Unwrapping recovers the path up to the initial image.
            for k in 0..3 {
                worst = worst.max((p[k] - a[0][k] - (q[k] - b[0][k])).abs());
            }
        }
    }
    println!("max unwrap error vs. truth  {worst:.3e} Å");

    let u = remove_drift(&u);
    let c0 = u.centroid(0);
    let c1 = u.centroid(u.n_frames() - 1);
    println!(
        "centroid shift after drift removal  {:.3e} Å",
        (0..3).map(|k| (c1[k] - c0[k]).abs()).fold(0.0, f64::max)
    );

    let u = downsample(&u, 2)?;
    let segs = segment(&u, 1000)?;
    println!(
        "{} frames at {} ps → {} segments of {} frames",
        u.n_frames(),
        u.dt,
        segs.len(),
        segs[0].n_frames()
    );
    Ok(())
}
