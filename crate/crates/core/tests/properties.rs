use difftrace::gp_local::{
    loglik_dense, loglik_increment, map_estimate, GpDataset, GpParams, MapOptions,
};
use difftrace::hier_model::{
    run_chains, ConditionData, HierPriors, HierTarget, LogDensity, SamplerConfig,
};
use difftrace::size_correction::{yeh_hummer, CorrectionInput};
use difftrace::synth::{gen_brownian, SynthSpec};
use difftrace::trajio::AtomLabel;
use difftrace::trajio::{
    downsample, remove_drift, unwrap, UnwrappedTrajectory, WrappedFrame, WrappedTrajectory,
};
use proptest::prelude::*;

fn path(
    seed: u64,
    n_frames: usize,
    n_mols: usize,
    box_lengths: Option<[f64; 3]>,
) -> UnwrappedTrajectory {
    gen_brownian(&SynthSpec {
        n_frames,
        n_mols,
        dims: 3,
        sigma2: 0.2,
        a2: 0.01,
        dt: 0.5,
        drift: [0.03, 0.0, -0.01],
        box_lengths,
        seed,
    })
    .unwrap()
    .unwrapped
}

fn max_abs_diff(a: &UnwrappedTrajectory, b: &UnwrappedTrajectory) -> f64 {
    a.frames
        .iter()
        .zip(&b.frames)
        .flat_map(|(f, g)| f.iter().zip(g))
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unwrap_inverts_wrapping(
        seed in 0u64..1000,
        b in prop::array::uniform3(5.0f64..40.0),
    ) {
        // Per-step displacements (SD ≈ 0.45 Å) stay far below half a box.
        let truth = path(seed, 200, 3, None);
        let frames = truth
            .frames
            .iter()
            .map(|f| WrappedFrame {
                positions: f.iter().map(|p| [0, 1, 2].map(|k| p[k].rem_euclid(b[k]))).collect(),
                box_lengths: b,
            })
            .collect();
        let labels = (0..3).map(|m| AtomLabel { mol: m.to_string(), atom: "O".into(), role: "O".into() }).collect();
        let w = WrappedTrajectory::new(frames, truth.dt, labels).unwrap();
        let u = unwrap(&w);
        for (a, b) in u.frames.iter().zip(&truth.frames) {
            for m in 0..3 {
                for k in 0..3 {
                    let dev = (a[m][k] - u.frames[0][m][k]) - (b[m][k] - truth.frames[0][m][k]);
                    prop_assert!(dev.abs() < 1e-9, "deviation {dev}");
                }
            }
        }
    }

    #[test]
    fn drift_removal_is_idempotent(seed in 0u64..1000, n_mols in 1usize..6) {
        let once = remove_drift(&path(seed, 50, n_mols, None));
        let twice = remove_drift(&once);
        prop_assert!(max_abs_diff(&once, &twice) < 1e-12);
    }

    #[test]
    fn downsampling_composes(seed in 0u64..1000, extra in 0usize..50, a in 1usize..5, b in 1usize..5) {
        let u = path(seed, a * b + 1 + extra, 2, None);
        let two_step = downsample(&downsample(&u, a).unwrap(), b).unwrap();
        let one_step = downsample(&u, a * b).unwrap();
        prop_assert_eq!(two_step.frames, one_step.frames);
        prop_assert!((two_step.dt - one_step.dt).abs() < 1e-12);
    }

    #[test]
    fn likelihood_routes_agree(
        y in prop::collection::vec(-5.0f64..5.0, 1..200),
        sigma2 in 1e-3f64..3.0,
        a2 in 1e-3f64..1.0,
    ) {
        let p = GpParams { sigma2, a2 };
        let (dense, inc) = (loglik_dense(&y, p).unwrap(), loglik_increment(&y, p).unwrap());
        prop_assert!((dense - inc).abs() < 1e-8 * dense.abs().max(1.0), "{dense} vs {inc}");
    }

    #[test]
    fn correction_shrinks_with_box_and_grows_with_temperature(
        l in 10.0f64..100.0,
        dl in 0.1f64..50.0,
        t in 200.0f64..400.0,
        dt in 0.1f64..50.0,
    ) {
        let c = CorrectionInput { d_md: 0.2, temperature: t, viscosity: 8.55e-4, box_length: l, geometry_factor: 2.0 };
        let bigger_box = CorrectionInput { box_length: l + dl, ..c };
        let hotter = CorrectionInput { temperature: t + dt, ..c };
        let base = yeh_hummer(&c).unwrap();
        prop_assert!(yeh_hummer(&bigger_box).unwrap() < base);
        prop_assert!(yeh_hummer(&hotter).unwrap() > base);
        prop_assert!(base > c.d_md);
    }
}

fn gp_data(seed: u64) -> GpDataset {
    let u = path(seed, 600, 2, None);
    let segs = difftrace::trajio::segment(&remove_drift(&u), 300).unwrap();
    GpDataset::from_segments(&segs).unwrap()
}

#[test]
fn map_estimate_ignores_series_order() {
    let data = gp_data(5);
    let mut rev = data.clone();
    rev.series.reverse();
    rev.series.swap(0, 3);
    let (a, b) = (
        map_estimate(&data, &MapOptions::default()).unwrap(),
        map_estimate(&rev, &MapOptions::default()).unwrap(),
    );
    assert!(
        ((a.d_md - b.d_md) / a.d_md).abs() < 1e-8,
        "{} vs {}",
        a.d_md,
        b.d_md
    );
    assert!(((a.s_md - b.s_md) / a.s_md).abs() < 1e-5);
}

#[test]
fn map_estimate_scales_with_units() {
    // Doubling lengths quadruples D once the prior scale follows the units.
    let data = gp_data(6);
    let base = MapOptions::default();
    let scaled_opts = MapOptions {
        prior_scale: base.prior_scale * 4.0,
        ..base
    };
    let a = map_estimate(&data, &base).unwrap();
    let b = map_estimate(&data.scaled(2.0), &scaled_opts).unwrap();
    assert!(
        (b.d_md / a.d_md - 4.0).abs() < 1e-6,
        "ratio {}",
        b.d_md / a.d_md
    );
    assert!(
        (b.s_md / a.s_md - 16.0).abs() < 1e-3,
        "variance ratio {}",
        b.s_md / a.s_md
    );
}

#[test]
fn laplace_intervals_cover_truth() {
    // Nominal 95% intervals should cover in most of 40 independent datasets.
    let (d, dt) = (0.23, 0.5);
    let mut hits = 0;
    for seed in 0..40 {
        let u = gen_brownian(&SynthSpec {
            n_frames: 1001,
            n_mols: 1,
            dims: 3,
            sigma2: 2.0 * d * dt,
            a2: 0.05,
            dt,
            drift: [0.0; 3],
            box_lengths: None,
            seed: 100 + seed,
        })
        .unwrap()
        .unwrapped;
        let data = GpDataset::from_segments(&[u]).unwrap();
        let e = map_estimate(&data, &MapOptions::default()).unwrap();
        if (e.d_md - d).abs() <= 1.96 * e.s_md.sqrt() {
            hits += 1;
        }
    }
    assert!(hits >= 33, "coverage {hits}/40");
}

#[test]
fn empty_condition_samples_the_prior() {
    let target = HierTarget::new(
        ConditionData {
            temperature: 298.0,
            pressure: 1.0,
            replicates: Vec::new(),
        },
        HierPriors::default(),
    );
    assert_eq!(target.dim(), 7);
    let cfg = SamplerConfig {
        burnin: 2000,
        samples: 20_000,
        thin: 2,
        seed: 9,
        ..Default::default()
    };
    let out = run_chains(&target, &target.initial_point(), &cfg);
    let (mut d_r, mut alpha) = (Vec::new(), Vec::new());
    for ch in &out {
        for x in &ch.draws {
            let c = target.constrain(x);
            d_r.push(c[0]);
            alpha.push(c[2]);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // Half-normal(1) mean √(2/π); uniform(0, 0.75) mean 0.375.
    let hn = (2.0 / std::f64::consts::PI).sqrt();
    assert!(
        (mean(&d_r) - hn).abs() < 0.05,
        "d_r prior mean {}",
        mean(&d_r)
    );
    assert!(
        (mean(&alpha) - 0.375).abs() < 0.02,
        "alpha prior mean {}",
        mean(&alpha)
    );
    let below = alpha.iter().filter(|&&a| a < 0.375).count() as f64 / alpha.len() as f64;
    assert!((below - 0.5).abs() < 0.05, "alpha median fraction {below}");
}
