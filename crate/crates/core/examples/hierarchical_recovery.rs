//! Simulates one condition from the hierarchical model and recovers the
//! bulk coefficients and the size slope.
//!
//! ```text
//! cargo run --release --example hierarchical_recovery -- [seed]
//! ```

use difftrace::hier_model::{sample_posterior, summarize, SamplerConfig};
use difftrace::synth::{gen_condition, ConditionSpec};

fn main() -> difftrace::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let spec = ConditionSpec {
        d_r: 0.23,
        d_w: 0.23,
        alpha: 0.3,
        mu_r: 0.005,
        gamma_r: 0.005,
        mu_w: 0.0005,
        gamma_w: 0.0005,
        n: 30,
        l_min: 20.0,
        l_max: 50.0,
        shat_r: 2e-5,
        shat_w: 1e-7,
        temperature: 298.0,
        pressure: 1.0,
        seed,
    };
    let (data, _truth) = gen_condition(&spec)?;
    let cfg = SamplerConfig {
        burnin: 5_000,
        samples: 5_000,
        thin: 5,
        seed,
        ..Default::default()
    };
    let t = std::time::Instant::now();
    let post = sample_posterior(&data, &cfg)?;
    let s = summarize(&post)?;
    println!("elapsed      {:.1} s", t.elapsed().as_secs_f64());
    for (name, iv, truth) in [
        ("d_r", s.d_r, spec.d_r),
        ("d_w", s.d_w, spec.d_w),
        ("alpha", s.alpha, spec.alpha),
    ] {
        println!(
            "{name:<6} mean {:.5}  95% [{:.5}, {:.5}]  truth {truth}",
            iv.mean, iv.lo, iv.hi
        );
    }
    println!(
        "max rhat     {:.4}  divergences {}",
        s.rhat_max, s.divergences
    );
    println!("step sizes   {:?}", post.step_sizes);
    Ok(())
}
