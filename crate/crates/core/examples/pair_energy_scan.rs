//! Radical–water interaction curves for the four contact orientations and
//! the hydrogen-bond screen applied to candidate parameter sets.
//!
//! ```text
//! cargo run --example pair_energy_scan
//! ```

use difftrace::calibration::{
    lj_energy, scan, scan_grid, winnow, Candidate, CandidateResult, LJParams, Orientation,
    PairModel, RadicalModel, DEFAULT_BAND, REFERENCE_D,
};

fn main() -> difftrace::Result<()> {
    let p = LJParams::CALIBRATED;
    // Minimum of the O–H cross term sits at rmin2_o + rmin2_h.
    let rm = p.rmin2_o + p.rmin2_h;
    println!(
        "O–H well: R = {rm:.4} Å, depth {:.4} kcal/mol",
        lj_energy(rm, p.eps_o, p.eps_h, p.rmin2_o, p.rmin2_h)
    );

    let model = PairModel {
        radical: RadicalModel {
            q_o: -0.41,
            q_h: 0.41,
            ..Default::default()
        },
        ..Default::default()
    };
    let grid = scan_grid(1.0, 5.0, 0.05)?;
    for o in Orientation::ALL {
        let curve = scan(o, &p, &model, &grid)?;
        let best = curve
            .iter()
            .filter(|s| (DEFAULT_BAND.0..=DEFAULT_BAND.1).contains(&s.r))
            .min_by(|a, b| a.energy_total.total_cmp(&b.energy_total))
            .expect("band inside grid");
        println!(
            "{o}: minimum {:+.3} kcal/mol at R = {:.2} Å",
            best.energy_total, best.r
        );
    }

    let candidates = [
        Candidate {
            params: p,
            d_estimate: 0.222,
        },
        Candidate {
            params: LJParams {
                eps_h: -0.05,
                rmin2_h: 1.8,
                ..p
            },
            d_estimate: 0.229,
        },
        Candidate {
            params: LJParams { eps_o: -0.2, ..p },
            d_estimate: 0.251,
        },
    ];
    let results = candidates
        .iter()
        .map(|c| CandidateResult::evaluate(c, REFERENCE_D, &model, &grid, DEFAULT_BAND))
        .collect::<difftrace::Result<Vec<_>>>()?;
    for (i, r) in winnow(&results, DEFAULT_BAND)?.iter().enumerate() {
        println!(
            "rank {}: D = {:.3}, ARE = {:.4}",
            i + 1,
            r.d_estimate,
            r.are
        );
    }
    Ok(())
}
