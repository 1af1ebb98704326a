//! Analytical finite-size correction for a few box lengths and both
//! geometry conventions.
//!
//! ```text
//! cargo run --example finite_size_correction
//! ```

use difftrace::size_correction::{yeh_hummer, CorrectionInput};

fn main() -> difftrace::Result<()> {
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "L (Å)", "g=2", "g=6", "D (g=2)"
    );
    for l in [20.0, 30.0, 40.0, 50.0] {
        let c = CorrectionInput {
            d_md: 0.2,
            temperature: 298.0,
            viscosity: 8.55e-4,
            box_length: l,
            geometry_factor: 2.0,
        };
        let six = CorrectionInput {
            geometry_factor: 6.0,
            ..c
        };
        println!(
            "{l:>6.1} {:>10.5} {:>10.5} {:>10.5}",
            c.correction_term(),
            six.correction_term(),
            yeh_hummer(&c)?
        );
    }
    Ok(())
}
