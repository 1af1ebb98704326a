//! Trajectory ingestion and preprocessing under periodic boundaries.
//!
//! A [`WrappedTrajectory`] holds per-frame atom coordinates folded into an
//! orthorhombic box whose edge lengths may change from frame to frame (NpT).
//! [`unwrap`] rebuilds continuous paths from minimum-image displacements
//! measured against the later frame's box; the remaining operations act on
//! the continuous [`UnwrappedTrajectory`].

mod io;

pub use io::{load_trajectory, write_trajectory, TrajFormat};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomLabel {
    pub mol: String,
    pub atom: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrappedFrame {
    pub positions: Vec<Vec3>,
    pub box_lengths: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrappedTrajectory {
    pub frames: Vec<WrappedFrame>,
    /// Frame interval, ps.
    pub dt: f64,
    pub labels: Vec<AtomLabel>,
}

impl WrappedTrajectory {
    /// Validates the invariants and folds every coordinate into `[0, box)`.
    pub fn new(mut frames: Vec<WrappedFrame>, dt: f64, labels: Vec<AtomLabel>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!(
                "frame interval must be positive, got {dt}"
            )));
        }
        for (t, f) in frames.iter_mut().enumerate() {
            if f.box_lengths.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
                return Err(Error::NonPositiveBox(f.box_lengths, t));
            }
            if f.positions.len() != labels.len() {
                return Err(Error::AtomCount {
                    frame: t,
                    expected: labels.len(),
                    found: f.positions.len(),
                });
            }
            let b = f.box_lengths;
            for p in &mut f.positions {
                for k in 0..3 {
                    p[k] = canonical(p[k], b[k]);
                }
            }
        }
        Ok(Self { frames, dt, labels })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.labels.len()
    }

    /// Keeps only atoms whose role label equals `role` (e.g. the oxygen of
    /// each molecule, which stands in for the molecule's position).
    pub fn select_role(&self, role: &str) -> Result<WrappedTrajectory> {
        let keep: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.role == role)
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(Error::invalid(format!("no atoms with role {role:?}")));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| WrappedFrame {
                positions: keep.iter().map(|&i| f.positions[i]).collect(),
                box_lengths: f.box_lengths,
            })
            .collect();
        Ok(WrappedTrajectory {
            frames,
            dt: self.dt,
            labels: keep.iter().map(|&i| self.labels[i].clone()).collect(),
        })
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.frames
            .iter()
            .map(|f| f.box_lengths.iter().product())
            .collect()
    }
}

/// Folds `x` into `[0, b)`.
pub fn canonical(x: f64, b: f64) -> f64 {
    let r = x.rem_euclid(b);
    // rem_euclid can round up to exactly b for tiny negative x
    if r >= b {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnwrappedTrajectory {
    /// `frames[t][m]` is the position of molecule `m` at frame `t`.
    pub frames: Vec<Vec<Vec3>>,
    pub dt: f64,
    pub drift_removed: bool,
    /// Per-frame box lengths when known.
    pub boxes: Option<Vec<Vec3>>,
    pub mol_ids: Vec<String>,
}

impl UnwrappedTrajectory {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_mols(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Subset of molecules by index, keeping frame structure.
    pub fn select_mols(&self, idx: &[usize]) -> UnwrappedTrajectory {
        UnwrappedTrajectory {
            frames: self
                .frames
                .iter()
                .map(|f| idx.iter().map(|&i| f[i]).collect())
                .collect(),
            dt: self.dt,
            drift_removed: self.drift_removed,
            boxes: self.boxes.clone(),
            mol_ids: idx.iter().map(|&i| self.mol_ids[i].clone()).collect(),
        }
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        centroid(&self.frames[t])
    }
}

fn centroid(frame: &[Vec3]) -> Vec3 {
    let n = frame.len() as f64;
    let mut c = [0.0; 3];
    for p in frame {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

/// Reconstructs continuous paths from wrapped coordinates.
///
/// `u[0] = w[0]`, and each later displacement is the raw difference reduced
/// to its minimum image in the box of the later frame.
pub fn unwrap(w: &WrappedTrajectory) -> UnwrappedTrajectory {
    let mut frames = Vec::with_capacity(w.n_frames());
    frames.push(w.frames[0].positions.clone());
    for t in 1..w.n_frames() {
        let prev_w = &w.frames[t - 1].positions;
        let cur = &w.frames[t];
        let b = cur.box_lengths;
        let prev_u: &Vec<Vec3> = &frames[t - 1];
        let next: Vec<Vec3> = prev_u
            .iter()
            .zip(prev_w.iter().zip(&cur.positions))
            .map(|(u, (p, q))| {
                let mut out = *u;
                for k in 0..3 {
                    let raw = q[k] - p[k];
                    out[k] += raw - b[k] * (raw / b[k]).round();
                }
                out
            })
            .collect();
        frames.push(next);
    }
    UnwrappedTrajectory {
        frames,
        dt: w.dt,
        drift_removed: false,
        boxes: Some(w.frames.iter().map(|f| f.box_lengths).collect()),
        mol_ids: w.labels.iter().map(|l| l.mol.clone()).collect(),
    }
}

/// Translates every frame so that its centroid over all molecules is zero.
pub fn remove_drift(u: &UnwrappedTrajectory) -> UnwrappedTrajectory {
    let frames = u
        .frames
        .iter()
        .map(|f| {
            let c = centroid(f);
            f.iter()
                .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
                .collect()
        })
        .collect();
    UnwrappedTrajectory {
        frames,
        drift_removed: true,
        ..u.clone()
    }
}

/// Keeps every `factor`-th frame starting from the first.
pub fn downsample(u: &UnwrappedTrajectory, factor: usize) -> Result<UnwrappedTrajectory> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be at least 1"));
    }
    let kept = u.n_frames().div_ceil(factor);
    if kept < 2 {
        return Err(Error::invalid(format!(
            "downsampling {} frames by {factor} leaves {kept} frame(s)",
            u.n_frames()
        )));
    }
    let pick = |t: usize| t.is_multiple_of(factor);
    Ok(UnwrappedTrajectory {
        frames: u
            .frames
            .iter()
            .enumerate()
            .filter(|(t, _)| pick(*t))
            .map(|(_, f)| f.clone())
            .collect(),
        dt: u.dt * factor as f64,
        drift_removed: u.drift_removed,
        boxes: u.boxes.as_ref().map(|b| {
            b.iter()
                .enumerate()
                .filter(|(t, _)| pick(*t))
                .map(|(_, x)| *x)
                .collect()
        }),
        mol_ids: u.mol_ids.clone(),
    })
}

/// Splits into non-overlapping segments of exactly `length` frames, each
/// shifted so that every molecule starts at the origin. The trailing
/// remainder is dropped.
pub fn segment(u: &UnwrappedTrajectory, length: usize) -> Result<Vec<UnwrappedTrajectory>> {
    if length < 2 {
        return Err(Error::invalid("segment length must be at least 2 frames"));
    }
    if length > u.n_frames() {
        return Err(Error::invalid(format!(
            "segment length {length} exceeds frame count {}",
            u.n_frames()
        )));
    }
    let segs = u
        .frames
        .chunks_exact(length)
        .enumerate()
        .map(|(s, chunk)| {
            let origin = chunk[0].clone();
            let frames = chunk
                .iter()
                .map(|f| {
                    f.iter()
                        .zip(&origin)
                        .map(|(p, o)| [p[0] - o[0], p[1] - o[1], p[2] - o[2]])
                        .collect()
                })
                .collect();
            UnwrappedTrajectory {
                frames,
                dt: u.dt,
                drift_removed: u.drift_removed,
                boxes: u
                    .boxes
                    .as_ref()
                    .map(|b| b[s * length..(s + 1) * length].to_vec()),
                mol_ids: u.mol_ids.clone(),
            }
        })
        .collect();
    Ok(segs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(i: usize) -> AtomLabel {
        AtomLabel {
            mol: format!("m{i}"),
            atom: "OW".into(),
            role: "O".into(),
        }
    }

    fn single(xs: &[f64], boxes: &[f64]) -> WrappedTrajectory {
        let frames = xs
            .iter()
            .zip(boxes)
            .map(|(&x, &b)| WrappedFrame {
                positions: vec![[x, 1.0, 1.0]],
                box_lengths: [b; 3],
            })
            .collect();
        WrappedTrajectory::new(frames, 0.5, vec![label(0)]).unwrap()
    }

    fn traj(frames: Vec<Vec<Vec3>>) -> UnwrappedTrajectory {
        let n = frames[0].len();
        UnwrappedTrajectory {
            frames,
            dt: 0.25,
            drift_removed: false,
            boxes: None,
            mol_ids: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn canonicalizes_coordinates() {
        let w = single(&[-1.0, 12.0], &[10.0, 10.0]);
        assert_eq!(w.frames[0].positions[0][0], 9.0);
        assert_eq!(w.frames[1].positions[0][0], 2.0);
        assert_eq!(canonical(-1e-18, 10.0), 0.0);
    }

    #[test]
    fn rejects_bad_boxes_and_short_input() {
        let f = |b: f64| WrappedFrame {
            positions: vec![[0.0; 3]],
            box_lengths: [10.0, b, 10.0],
        };
        let err = WrappedTrajectory::new(vec![f(10.0), f(0.0)], 1.0, vec![label(0)]).unwrap_err();
        assert!(err.to_string().contains("non-positive box"));
        assert!(WrappedTrajectory::new(vec![f(10.0)], 1.0, vec![label(0)]).is_err());
        assert!(WrappedTrajectory::new(vec![f(10.0), f(10.0)], 0.0, vec![label(0)]).is_err());
    }

    #[test]
    fn unwrap_crosses_boundary() {
        let w = single(&[7.0, 8.0, 9.0, 0.0, 1.0], &[10.0; 5]);
        let u = unwrap(&w);
        let xs: Vec<f64> = u.frames.iter().map(|f| f[0][0]).collect();
        assert_eq!(xs, vec![7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn unwrap_stationary_in_shrinking_box() {
        let w = single(&[5.0, 5.0, 5.0], &[20.0, 19.5, 19.0]);
        let u = unwrap(&w);
        assert!(u.frames.iter().all(|f| f[0] == [5.0, 1.0, 1.0]));
    }

    #[test]
    fn drift_single_and_symmetric() {
        let u = traj(vec![vec![[1.0, 2.0, 3.0]], vec![[4.0, 5.0, 6.0]]]);
        let d = remove_drift(&u);
        assert!(d.drift_removed);
        assert!(d.frames.iter().all(|f| f[0] == [0.0; 3]));

        let u = traj(vec![
            vec![[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]],
            vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]],
        ]);
        assert_eq!(remove_drift(&u).frames, u.frames);
    }

    #[test]
    fn downsample_counts() {
        let frames: Vec<Vec<Vec3>> = (0..4001).map(|t| vec![[t as f64, 0.0, 0.0]]).collect();
        let u = traj(frames);
        let d = downsample(&u, 2).unwrap();
        assert_eq!(d.n_frames(), 2001);
        assert_eq!(d.dt, 0.5);
        assert_eq!(d.frames[1][0][0], 2.0);
        assert_eq!(downsample(&u, 1).unwrap(), u);
        assert!(downsample(&u, 4001).is_err());
        assert!(downsample(&u, 0).is_err());
    }

    #[test]
    fn segment_counts_and_rebases() {
        let mk = |n: usize| traj((0..n).map(|t| vec![[t as f64, 1.0, -2.0]]).collect());
        let s = segment(&mk(2000), 1000).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.n_frames() == 1000));
        assert_eq!(s[1].frames[0][0], [0.0; 3]);
        assert_eq!(s[1].frames[999][0], [999.0, 0.0, 0.0]);
        assert_eq!(segment(&mk(2000), 2000).unwrap().len(), 1);
        assert_eq!(segment(&mk(2500), 1000).unwrap().len(), 2);
        assert!(segment(&mk(10), 11).is_err());
        assert!(segment(&mk(10), 1).is_err());
    }

    #[test]
    fn role_selection() {
        let labels = vec![
            label(0),
            AtomLabel {
                mol: "m0".into(),
                atom: "HW1".into(),
                role: "H".into(),
            },
        ];
        let f = WrappedFrame {
            positions: vec![[1.0; 3], [2.0; 3]],
            box_lengths: [10.0; 3],
        };
        let w = WrappedTrajectory::new(vec![f.clone(), f], 1.0, labels).unwrap();
        let o = w.select_role("O").unwrap();
        assert_eq!(o.n_atoms(), 1);
        assert_eq!(o.frames[0].positions[0], [1.0; 3]);
        assert!(w.select_role("X").is_err());
    }
}
