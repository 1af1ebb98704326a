//! The two-stage quasi-random parameter search: a coarse sweep, then a
//! narrower refinement box.
//!
//! ```text
//! cargo run --example halton_search
//! ```

use difftrace::calibration::{halton, halton_candidates, HaltonRanges};

fn main() -> difftrace::Result<()> {
    let b2: Vec<f64> = (1..=8).map(|i| halton(i, 2)).collect();
    println!("base 2: {b2:?}");

    for (name, ranges, n) in [
        ("coarse", HaltonRanges::COARSE, 250),
        ("refine", HaltonRanges::REFINE, 25),
    ] {
        let c = halton_candidates(n, &ranges)?;
        println!("{name}: {n} candidates, first three:");
        for p in &c[..3] {
            println!(
                "  eps_o {:+.4}  eps_h {:+.4}  rmin2_o {:.4}  rmin2_h {:.4}",
                p.eps_o, p.eps_h, p.rmin2_o, p.rmin2_h
            );
        }
    }
    Ok(())
}
