//! Stage functions of the end-to-end workflow and the driver that chains
//! them: preprocess → estimate-local → estimate-hier → summarize.
//!
//! Every stage is a pure function of its inputs and the configured seed.
//! Outputs carry no timestamps, so identical configurations reproduce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp_local::{map_estimate, GpDataset, MapOptions};
use crate::hier_model::{
    sample_posterior, summarize, ConditionData, ConditionSummary, HierPriors, ParamSummary,
    Replicate, SamplerConfig,
};
use crate::json;
use crate::rng::derive_seed;
use crate::size_correction::{self, CorrectionInput, DEFAULT_GEOMETRY_FACTOR};
use crate::trajio::{self, TrajFormat, UnwrappedTrajectory, Vec3, WrappedTrajectory};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stage, used to tag failures with an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    Preprocess,
    EstimateLocal,
    EstimateHier,
    Summarize,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Validate => 2,
            Stage::Preprocess => 3,
            Stage::EstimateLocal => 4,
            Stage::EstimateHier => 5,
            Stage::Summarize => 6,
        }
    }
}

/// Exit status when every stage ran but some estimate did not converge.
pub const EXIT_NOT_CONVERGED: i32 = 8;

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

// ---------------------------------------------------------------- preprocess

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// Frame interval of the input, ps.
    pub dt: f64,
    pub downsample: usize,
    /// Segment length in frames after downsampling.
    pub segment: usize,
    /// Atom role that stands in for the molecule position.
    pub role: String,
    /// Molecule id of the solute; every other molecule is solvent.
    pub solute_mol: Option<String>,
    pub temperature: f64,
    pub pressure: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            dt: 0.25,
            downsample: 2,
            segment: 1000,
            role: "O".into(),
            solute_mol: None,
            temperature: 298.0,
            pressure: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMeta {
    pub name: String,
    pub temperature: f64,
    pub pressure: f64,
    /// Frame interval after downsampling, ps.
    pub dt: f64,
    pub downsample: usize,
    pub segment_length: usize,
    pub n_segments: usize,
    pub n_frames_in: usize,
    /// Cube root of the mean box volume over all input frames, Å.
    pub box_length: f64,
    pub solute_mols: Vec<String>,
    pub solvent_mols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub meta: ReplicateMeta,
    pub solute: Vec<UnwrappedTrajectory>,
    pub solvent: Vec<UnwrappedTrajectory>,
}

/// Unwraps, removes drift over all molecules, downsamples, segments and
/// splits by species.
pub fn preprocess_trajectory(
    w: &WrappedTrajectory,
    name: &str,
    opts: &PreprocessOptions,
) -> Result<Preprocessed> {
    let box_length = size_correction::box_length(&w.volumes())?;
    let sel = w.select_role(&opts.role)?;
    let u = trajio::remove_drift(&trajio::unwrap(&sel));
    let u = trajio::downsample(&u, opts.downsample)?;
    let segs = trajio::segment(&u, opts.segment)?;

    let (mut solute_idx, mut solvent_idx) = (Vec::new(), Vec::new());
    for (i, id) in u.mol_ids.iter().enumerate() {
        if opts.solute_mol.as_deref() == Some(id.as_str()) {
            solute_idx.push(i);
        } else {
            solvent_idx.push(i);
        }
    }
    if let Some(id) = &opts.solute_mol {
        if solute_idx.is_empty() {
            return Err(Error::invalid(format!(
                "{name}: no molecule {id:?} with role {:?}",
                opts.role
            )));
        }
    }
    let pick = |idx: &[usize]| -> Vec<UnwrappedTrajectory> {
        if idx.is_empty() {
            Vec::new()
        } else {
            segs.iter().map(|s| s.select_mols(idx)).collect()
        }
    };
    let ids = |idx: &[usize]| idx.iter().map(|&i| u.mol_ids[i].clone()).collect();
    Ok(Preprocessed {
        meta: ReplicateMeta {
            name: name.to_owned(),
            temperature: opts.temperature,
            pressure: opts.pressure,
            dt: u.dt,
            downsample: opts.downsample,
            segment_length: opts.segment,
            n_segments: segs.len(),
            n_frames_in: w.n_frames(),
            box_length,
            solute_mols: ids(&solute_idx),
            solvent_mols: ids(&solvent_idx),
        },
        solute: pick(&solute_idx),
        solvent: pick(&solvent_idx),
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "trajectory".into(), |s| s.to_string_lossy().into_owned())
}

/// Format implied by a file extension (`.jsonl` or anything else as CSV).
pub fn format_for(path: &Path) -> TrajFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => TrajFormat::Jsonl,
        _ => TrajFormat::Csv,
    }
}

pub fn preprocess_file(
    path: &Path,
    format: TrajFormat,
    opts: &PreprocessOptions,
) -> Result<Preprocessed> {
    let w = trajio::load_trajectory(path, format, opts.dt)?;
    preprocess_trajectory(&w, &stem(path), opts)
}

const SEGMENT_HEADER: [&str; 6] = ["segment", "mol", "frame", "x", "y", "z"];

fn write_segments(path: &Path, segs: &[UnwrappedTrajectory]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(SEGMENT_HEADER)?;
    for (s, seg) in segs.iter().enumerate() {
        for (t, frame) in seg.frames.iter().enumerate() {
            for (m, p) in frame.iter().enumerate() {
                wtr.write_record([
                    s.to_string(),
                    seg.mol_ids[m].clone(),
                    t.to_string(),
                    format!("{:?}", p[0]),
                    format!("{:?}", p[1]),
                    format!("{:?}", p[2]),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

fn read_segments(path: &Path, mols: &[String], dt: f64) -> Result<Vec<UnwrappedTrajectory>> {
    if mols.is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(SEGMENT_HEADER) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!("expected header {}", SEGMENT_HEADER.join(",")),
        });
    }
    let mut segs: Vec<Vec<Vec<Vec3>>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        let int = |k: usize| {
            rec[k]
                .parse::<usize>()
                .map_err(|e| bad(format!("{}: {e}", SEGMENT_HEADER[k])))
        };
        let num = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", SEGMENT_HEADER[k])))
        };
        let (s, t) = (int(0)?, int(2)?);
        if s == segs.len() {
            segs.push(Vec::new());
        }
        if s + 1 != segs.len() {
            return Err(bad("segments out of order".into()));
        }
        let frames = &mut segs[s];
        if t == frames.len() {
            frames.push(Vec::with_capacity(mols.len()));
        }
        if t + 1 != frames.len() {
            return Err(bad("frames out of order".into()));
        }
        let frame = &mut frames[t];
        if rec[1] != *mols[frame.len().min(mols.len() - 1)] || frame.len() >= mols.len() {
            return Err(bad(format!("unexpected molecule {:?}", &rec[1])));
        }
        frame.push([num(3)?, num(4)?, num(5)?]);
    }
    segs.into_iter()
        .enumerate()
        .map(|(s, frames)| {
            if frames.iter().any(|f| f.len() != mols.len()) {
                return Err(Error::invalid(format!(
                    "{}: segment {s} has incomplete frames",
                    path.display()
                )));
            }
            Ok(UnwrappedTrajectory {
                frames,
                dt,
                drift_removed: true,
                boxes: None,
                mol_ids: mols.to_vec(),
            })
        })
        .collect()
}

/// Writes `dir/<name>/meta.json` with `solute.csv` and `solvent.csv`
/// (`segment,mol,frame,x,y,z`). Returns the replicate directory.
pub fn write_preprocessed(dir: &Path, p: &Preprocessed) -> Result<PathBuf> {
    let d = dir.join(&p.meta.name);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    json::write_file(&d.join("meta.json"), &p.meta)?;
    write_segments(&d.join("solute.csv"), &p.solute)?;
    write_segments(&d.join("solvent.csv"), &p.solvent)?;
    Ok(d)
}

pub fn read_preprocessed(replicate_dir: &Path) -> Result<Preprocessed> {
    let meta: ReplicateMeta = json::read_file(&replicate_dir.join("meta.json"))?;
    let solute = read_segments(
        &replicate_dir.join("solute.csv"),
        &meta.solute_mols,
        meta.dt,
    )?;
    let solvent = read_segments(
        &replicate_dir.join("solvent.csv"),
        &meta.solvent_mols,
        meta.dt,
    )?;
    Ok(Preprocessed {
        meta,
        solute,
        solvent,
    })
}

/// Every replicate under `dir`, in lexicographic order of directory name.
pub fn read_preprocessed_dir(dir: &Path) -> Result<Vec<Preprocessed>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no preprocessed replicates",
            dir.display()
        )));
    }
    subdirs.iter().map(|d| read_preprocessed(d)).collect()
}

// ------------------------------------------------------------ estimate-local

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Solute,
    Solvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// K.
    pub temperature: f64,
    /// atm.
    pub pressure: f64,
}

impl Condition {
    /// Parses `T=263,P=1`.
    pub fn parse(s: &str) -> Result<Self> {
        let (mut t, mut p) = (None, None);
        for part in s.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::invalid(format!("condition {s:?}: expected T=<K>,P=<atm>"))
            })?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("condition {s:?}: bad number {v:?}")))?;
            match k.trim() {
                "T" | "t" => t = Some(v),
                "P" | "p" => p = Some(v),
                other => {
                    return Err(Error::invalid(format!(
                        "condition {s:?}: unknown key {other:?}"
                    )))
                }
            }
        }
        match (t, p) {
            (Some(temperature), Some(pressure)) => Ok(Self {
                temperature,
                pressure,
            }),
            _ => Err(Error::invalid(format!(
                "condition {s:?}: both T and P are required"
            ))),
        }
    }

    fn matches(&self, other: &Condition) -> bool {
        self.temperature == other.temperature && self.pressure == other.pressure
    }
}

/// Analytical size correction applied to local estimates when a viscosity
/// is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSettings {
    pub geometry_factor: f64,
    /// Pa·s; no correction is reported when absent.
    pub viscosity: Option<f64>,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        Self {
            geometry_factor: DEFAULT_GEOMETRY_FACTOR,
            viscosity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalOptions {
    pub map: MapOptions,
    /// Replaces the frame interval recorded by preprocessing.
    pub dt: Option<f64>,
    pub correction: CorrectionSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub condition: Condition,
    pub replicate: String,
    pub species: Species,
    pub box_length: f64,
    pub d_md: f64,
    pub s_md: f64,
    pub a2_hat: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub hessian_fallback: bool,
    /// Size-corrected estimate, when a viscosity was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_corrected: Option<f64>,
}

/// One local estimate per (replicate, species) with molecules present, in
/// replicate order with the solute first.
pub fn estimate_local(reps: &[Preprocessed], opts: &LocalOptions) -> Result<Vec<EstimateRecord>> {
    let jobs: Vec<(&Preprocessed, Species, &[UnwrappedTrajectory])> = reps
        .iter()
        .flat_map(|r| {
            [
                (r, Species::Solute, r.solute.as_slice()),
                (r, Species::Solvent, r.solvent.as_slice()),
            ]
        })
        .filter(|(_, _, segs)| !segs.is_empty())
        .collect();
    jobs.par_iter()
        .map(|&(r, species, segs)| {
            let mut data = GpDataset::from_segments(segs)?;
            if let Some(dt) = opts.dt {
                data.dt = dt;
            }
            let e = map_estimate(&data, &opts.map)?;
            let d_corrected = match opts.correction.viscosity {
                Some(viscosity) => Some(size_correction::yeh_hummer(&CorrectionInput {
                    d_md: e.d_md,
                    temperature: r.meta.temperature,
                    viscosity,
                    box_length: r.meta.box_length,
                    geometry_factor: opts.correction.geometry_factor,
                })?),
                None => None,
            };
            Ok(EstimateRecord {
                condition: Condition {
                    temperature: r.meta.temperature,
                    pressure: r.meta.pressure,
                },
                replicate: r.meta.name.clone(),
                species,
                box_length: r.meta.box_length,
                d_md: e.d_md,
                s_md: e.s_md,
                a2_hat: e.a2_hat,
                n_obs: e.n_obs,
                converged: e.converged,
                hessian_fallback: e.hessian_fallback,
                d_corrected,
            })
        })
        .collect()
}

// ------------------------------------------------------------- estimate-hier

/// Distinct conditions, ordered by temperature then pressure.
pub fn conditions(records: &[EstimateRecord]) -> Vec<Condition> {
    let mut out: Vec<Condition> = Vec::new();
    for r in records {
        if !out.iter().any(|c| c.matches(&r.condition)) {
            out.push(r.condition);
        }
    }
    out.sort_by(|a, b| {
        a.temperature
            .total_cmp(&b.temperature)
            .then(a.pressure.total_cmp(&b.pressure))
    });
    out
}

/// Pairs solute and solvent records of each replicate under `cond`.
pub fn condition_data(records: &[EstimateRecord], cond: Condition) -> Result<ConditionData> {
    let mut by_rep: BTreeMap<&str, (Option<&EstimateRecord>, Option<&EstimateRecord>)> =
        BTreeMap::new();
    for r in records.iter().filter(|r| r.condition.matches(&cond)) {
        let slot = by_rep.entry(&r.replicate).or_default();
        let target = match r.species {
            Species::Solute => &mut slot.0,
            Species::Solvent => &mut slot.1,
        };
        if target.is_some() {
            return Err(Error::invalid(format!(
                "duplicate {:?} estimate for replicate {}",
                r.species, r.replicate
            )));
        }
        *target = Some(r);
    }
    let mut replicates = Vec::with_capacity(by_rep.len());
    for (name, pair) in by_rep {
        let (Some(r), Some(w)) = pair else {
            return Err(Error::invalid(format!(
                "replicate {name} lacks a solute or solvent estimate"
            )));
        };
        replicates.push(Replicate {
            box_length: w.box_length,
            dhat_w: w.d_md,
            shat_w: w.s_md,
            dhat_r: r.d_md,
            shat_r: r.s_md,
        });
    }
    Ok(ConditionData {
        temperature: cond.temperature,
        pressure: cond.pressure,
        replicates,
    })
}

/// Sampler seed for one condition, derived from the run seed and the
/// condition so that selecting a subset of conditions changes nothing.
pub fn condition_seed(seed: u64, cond: Condition) -> u64 {
    derive_seed(
        seed,
        &format!("estimate-hier/T={}/P={}", cond.temperature, cond.pressure),
        0,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawTable {
    pub names: Vec<String>,
    /// Chain-major rows.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub summary: ConditionSummary,
    pub n_replicates: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub priors: HierPriors,
    pub step_sizes: Vec<f64>,
    pub parameters: Vec<ParamSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<DrawTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub conditions: Vec<PosteriorRecord>,
}

impl PosteriorFile {
    pub fn converged(&self) -> bool {
        self.conditions.iter().all(|c| c.summary.converged)
    }
}

/// Samples one condition. `cfg.seed` is the run seed; the sampler uses
/// [`condition_seed`].
pub fn estimate_hier_condition(
    data: &ConditionData,
    cfg: &SamplerConfig,
    keep_draws: bool,
) -> Result<PosteriorRecord> {
    let cond = Condition {
        temperature: data.temperature,
        pressure: data.pressure,
    };
    let seed = condition_seed(cfg.seed, cond);
    let post = sample_posterior(data, &SamplerConfig { seed, ..*cfg })?;
    let summary = summarize(&post)?;
    Ok(PosteriorRecord {
        summary,
        n_replicates: data.n(),
        seed,
        sampler: *cfg,
        priors: post.priors,
        step_sizes: post.step_sizes.clone(),
        parameters: post.summaries.clone(),
        draws: keep_draws.then(|| DrawTable {
            names: post.param_names.clone(),
            rows: post.draws.clone(),
        }),
    })
}

/// Samples every condition in `records`, or only `only` when given.
pub fn estimate_hier(
    records: &[EstimateRecord],
    only: Option<Condition>,
    cfg: &SamplerConfig,
    keep_draws: bool,
) -> Result<PosteriorFile> {
    let conds: Vec<Condition> = match only {
        Some(c) => {
            if !records.iter().any(|r| r.condition.matches(&c)) {
                return Err(Error::invalid(format!(
                    "no estimates for T={}, P={}",
                    c.temperature, c.pressure
                )));
            }
            vec![c]
        }
        None => conditions(records),
    };
    let data: Vec<ConditionData> = conds
        .iter()
        .map(|&c| condition_data(records, c))
        .collect::<Result<_>>()?;
    let conditions = data
        .par_iter()
        .map(|d| estimate_hier_condition(d, cfg, keep_draws))
        .collect::<Result<_>>()?;
    Ok(PosteriorFile { conditions })
}

// ------------------------------------------------------------------ summarize

pub const SUMMARY_HEADER: [&str; 14] = [
    "temperature_K",
    "pressure_atm",
    "d_r_mean",
    "d_r_lo",
    "d_r_hi",
    "d_w_mean",
    "d_w_lo",
    "d_w_hi",
    "alpha_mean",
    "alpha_lo",
    "alpha_hi",
    "rhat_max",
    "converged",
    "rhat_flags",
];

/// One row per condition; intervals are central 95%.
pub fn write_summary_csv<W: Write>(out: W, post: &PosteriorFile) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(SUMMARY_HEADER)?;
    for c in &post.conditions {
        let s = &c.summary;
        let mut row = vec![s.temperature.to_string(), s.pressure.to_string()];
        for iv in [s.d_r, s.d_w, s.alpha] {
            row.extend([iv.mean, iv.lo, iv.hi].map(|v| v.to_string()));
        }
        row.push(s.rhat_max.to_string());
        row.push(s.converged.to_string());
        row.push(s.rhat_flags.join(";"));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("summary", e))
}

// ----------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub temperature: f64,
    pub pressure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<TrajFormat>,
    /// Overrides the pipeline-wide solute id for this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solute_mol: Option<String>,
}

/// Configuration of a full run. Relative paths resolve against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<InputSpec>,
    /// Input frame interval, ps.
    pub dt: f64,
    pub downsample: usize,
    pub segment: usize,
    pub role: String,
    pub solute_mol: Option<String>,
    pub prior_scale: f64,
    /// Top-level seed; every stage seed derives from it.
    pub seed: u64,
    /// Sampler budget. Its `seed` field is replaced by `seed`.
    pub sampler: SamplerConfig,
    pub keep_draws: bool,
    pub correction: CorrectionSettings,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PreprocessOptions::default();
        Self {
            inputs: Vec::new(),
            dt: p.dt,
            downsample: p.downsample,
            segment: p.segment,
            role: p.role,
            solute_mol: None,
            prior_scale: MapOptions::default().prior_scale,
            seed: 0,
            sampler: SamplerConfig::default(),
            keep_draws: false,
            correction: CorrectionSettings::default(),
            out_dir: PathBuf::from("difftrace-out"),
            workers: None,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    /// SHA-256 of the canonical JSON serialization. The worker count is
    /// left out since it cannot change any result.
    pub fn hash(&self) -> String {
        let canonical = Self {
            workers: None,
            ..self.clone()
        };
        let text = json::to_string(&canonical).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn resolve(&self, p: &Path, base: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler
        }
    }

    fn preprocess_options(&self, input: &InputSpec) -> PreprocessOptions {
        PreprocessOptions {
            dt: self.dt,
            downsample: self.downsample,
            segment: self.segment,
            role: self.role.clone(),
            solute_mol: input.solute_mol.clone().or_else(|| self.solute_mol.clone()),
            temperature: input.temperature,
            pressure: input.pressure,
        }
    }

    /// Checks budgets and that every input exists, before any computation.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::invalid("no inputs configured"));
        }
        if !(self.dt > 0.0) || self.downsample == 0 || self.segment < 2 || !(self.prior_scale > 0.0)
        {
            return Err(Error::invalid(
                "dt, downsample, segment and prior_scale must be positive (segment ≥ 2)",
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be at least 1"));
        }
        self.sampler_config().validate()?;
        let mut names = Vec::new();
        for i in &self.inputs {
            let p = self.resolve(&i.path, base);
            if !p.is_file() {
                return Err(Error::invalid(format!("input not found: {}", p.display())));
            }
            if !(i.temperature > 0.0 && i.pressure > 0.0) {
                return Err(Error::invalid(format!(
                    "{}: temperature and pressure must be positive",
                    p.display()
                )));
            }
            let s = stem(&p);
            if names.contains(&s) {
                return Err(Error::invalid(format!(
                    "two inputs share the replicate name {s:?}"
                )));
            }
            names.push(s);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageState {
    Complete,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub state: StageState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeed {
    pub stage: Stage,
    pub condition: Condition,
    pub seed: u64,
}

/// Module parameter defaults in force for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    pub gp_prior_scale: f64,
    pub gp_max_iter: usize,
    pub hier_priors: HierPriors,
    pub sampler: SamplerConfig,
    pub geometry_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: Vec<StageSeed>,
    pub defaults: Defaults,
    pub stages: Vec<StageStatus>,
    pub complete: bool,
    pub converged: bool,
}

/// Tool version, configuration hash, seeds and defaults, with every stage
/// marked as not run.
pub fn version_and_provenance(cfg: &PipelineConfig) -> Manifest {
    let seeds = {
        let mut conds: Vec<Condition> = Vec::new();
        for i in &cfg.inputs {
            let c = Condition {
                temperature: i.temperature,
                pressure: i.pressure,
            };
            if !conds.iter().any(|x| x.matches(&c)) {
                conds.push(c);
            }
        }
        conds.sort_by(|a, b| {
            a.temperature
                .total_cmp(&b.temperature)
                .then(a.pressure.total_cmp(&b.pressure))
        });
        conds
            .into_iter()
            .map(|condition| StageSeed {
                stage: Stage::EstimateHier,
                condition,
                seed: condition_seed(cfg.seed, condition),
            })
            .collect()
    };
    let stages = [
        Stage::Validate,
        Stage::Preprocess,
        Stage::EstimateLocal,
        Stage::EstimateHier,
        Stage::Summarize,
    ]
    .into_iter()
    .map(|stage| StageStatus {
        stage,
        state: StageState::NotRun,
        converged: None,
        message: None,
    })
    .collect();
    Manifest {
        tool: "difftrace".into(),
        version: TOOL_VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        seeds,
        defaults: Defaults {
            gp_prior_scale: cfg.prior_scale,
            gp_max_iter: MapOptions::default().max_iter,
            hier_priors: HierPriors::default(),
            sampler: cfg.sampler_config(),
            geometry_factor: cfg.correction.geometry_factor,
        },
        stages,
        complete: false,
        converged: false,
    }
}

impl Manifest {
    fn set(
        &mut self,
        stage: Stage,
        state: StageState,
        converged: Option<bool>,
        message: Option<String>,
    ) {
        if let Some(s) = self.stages.iter_mut().find(|s| s.stage == stage) {
            s.state = state;
            s.converged = converged;
            s.message = message;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub exit_code: i32,
}

pub const ESTIMATES_FILE: &str = "estimates.json";
pub const POSTERIOR_FILE: &str = "posterior.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREPROCESSED_DIR: &str = "preprocessed";

/// Runs every stage. Validation failures return an error before anything
/// is written; later failures write a manifest marking the run incomplete
/// and return the failing stage's exit status in the outcome.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    base: &Path,
) -> std::result::Result<RunOutcome, StageError> {
    cfg.validate(base).at(Stage::Validate)?;
    let out_dir = cfg.resolve(&cfg.out_dir, base);
    let mut manifest = version_and_provenance(cfg);
    manifest.set(Stage::Validate, StageState::Complete, None, None);
    fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(&out_dir, e))
        .at(Stage::Validate)?;

    let result = run_stages(cfg, base, &out_dir, &mut manifest);
    let exit_code = match &result {
        Ok(()) => {
            manifest.complete = true;
            if manifest.converged {
                0
            } else {
                EXIT_NOT_CONVERGED
            }
        }
        Err(e) => {
            manifest.set(e.stage, StageState::Failed, None, Some(e.error.to_string()));
            e.stage.exit_code()
        }
    };
    json::write_file(&out_dir.join(MANIFEST_FILE), &manifest).at(Stage::Summarize)?;
    Ok(RunOutcome {
        out_dir,
        manifest,
        exit_code,
    })
}

fn run_stages(
    cfg: &PipelineConfig,
    base: &Path,
    out: &Path,
    m: &mut Manifest,
) -> std::result::Result<(), StageError> {
    let pre_dir = out.join(PREPROCESSED_DIR);
    let reps: Vec<Preprocessed> = cfg
        .inputs
        .par_iter()
        .map(|i| {
            let path = cfg.resolve(&i.path, base);
            let fmt = i.format.unwrap_or_else(|| format_for(&path));
            let p = preprocess_file(&path, fmt, &cfg.preprocess_options(i))?;
            write_preprocessed(&pre_dir, &p)?;
            Ok(p)
        })
        .collect::<Result<_>>()
        .at(Stage::Preprocess)?;
    m.set(Stage::Preprocess, StageState::Complete, None, None);

    let local = LocalOptions {
        map: MapOptions {
            prior_scale: cfg.prior_scale,
            ..Default::default()
        },
        dt: None,
        correction: cfg.correction,
    };
    let estimates = estimate_local(&reps, &local).at(Stage::EstimateLocal)?;
    json::write_file(&out.join(ESTIMATES_FILE), &estimates).at(Stage::EstimateLocal)?;
    let local_ok = estimates.iter().all(|e| e.converged);
    m.set(
        Stage::EstimateLocal,
        StageState::Complete,
        Some(local_ok),
        None,
    );

    let post = estimate_hier(&estimates, None, &cfg.sampler_config(), cfg.keep_draws)
        .at(Stage::EstimateHier)?;
    json::write_file(&out.join(POSTERIOR_FILE), &post).at(Stage::EstimateHier)?;
    let hier_ok = post.converged();
    m.set(
        Stage::EstimateHier,
        StageState::Complete,
        Some(hier_ok),
        None,
    );

    let path = out.join(SUMMARY_FILE);
    let f = fs::File::create(&path)
        .map_err(|e| Error::io(&path, e))
        .at(Stage::Summarize)?;
    write_summary_csv(std::io::BufWriter::new(f), &post).at(Stage::Summarize)?;
    m.set(Stage::Summarize, StageState::Complete, None, None);
    m.converged = local_ok && hier_ok;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_parsing() {
        let c = Condition::parse("T=263,P=1").unwrap();
        assert_eq!((c.temperature, c.pressure), (263.0, 1.0));
        let c = Condition::parse(" P = 10 , T=298.5").unwrap();
        assert_eq!((c.temperature, c.pressure), (298.5, 10.0));
        assert!(Condition::parse("T=263").is_err());
        assert!(Condition::parse("T=263,Q=1").is_err());
        assert!(Condition::parse("T=x,P=1").is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn condition_seed_depends_on_condition_only() {
        let c1 = Condition {
            temperature: 263.0,
            pressure: 1.0,
        };
        let c2 = Condition {
            temperature: 263.0,
            pressure: 10.0,
        };
        assert_eq!(condition_seed(5, c1), condition_seed(5, c1));
        assert_ne!(condition_seed(5, c1), condition_seed(5, c2));
        assert_ne!(condition_seed(5, c1), condition_seed(6, c1));
    }

    fn record(rep: &str, species: Species, d: f64) -> EstimateRecord {
        EstimateRecord {
            condition: Condition {
                temperature: 298.0,
                pressure: 1.0,
            },
            replicate: rep.into(),
            species,
            box_length: 20.0,
            d_md: d,
            s_md: 1e-4,
            a2_hat: 0.0,
            n_obs: 100,
            converged: true,
            hessian_fallback: false,
            d_corrected: None,
        }
    }

    #[test]
    fn pairing_by_replicate() {
        let recs = vec![
            record("b", Species::Solvent, 0.3),
            record("a", Species::Solute, 0.1),
            record("a", Species::Solvent, 0.2),
            record("b", Species::Solute, 0.4),
        ];
        let c = conditions(&recs)[0];
        let d = condition_data(&recs, c).unwrap();
        assert_eq!(d.replicates.len(), 2);
        assert_eq!((d.replicates[0].dhat_r, d.replicates[0].dhat_w), (0.1, 0.2));
        assert_eq!((d.replicates[1].dhat_r, d.replicates[1].dhat_w), (0.4, 0.3));
        assert!(condition_data(&recs[..3], c).is_err());
    }
}
