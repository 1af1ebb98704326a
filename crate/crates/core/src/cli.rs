//! The `difftrace` command. Each subcommand parses its flags, calls the
//! matching library function and writes the result; nothing here computes.
//!
//! `--config FILE` (TOML or JSON) is accepted by every subcommand. For
//! `run` it is the pipeline configuration; elsewhere its keys stand in for
//! flags (`prior_scale = 0.5` acts as `--prior-scale 0.5`) and explicit
//! flags win.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::calibration::{
    halton_candidates, scan, scan_grid, winnow, Candidate, CandidateResult, HaltonRanges, LJParams,
    Orientation, PairModel, REFERENCE_D,
};
use crate::error::{Error, Result};
use crate::gp_local::MapOptions;
use crate::hier_model::{ConditionData, Metric, SamplerConfig};
use crate::json;
use crate::pipeline::{
    self, Condition, CorrectionSettings, LocalOptions, PipelineConfig, PreprocessOptions, Stage,
};
use crate::size_correction::{yeh_hummer, CorrectionInput, DEFAULT_GEOMETRY_FACTOR};
use crate::surface_fit::{eval_surface, fit_surface, SurfaceCoeffs, SurfacePoint};
use crate::synth::{gen_brownian, gen_condition, ConditionSpec, SynthSpec};
use crate::trajio::{write_trajectory, TrajFormat};

/// Exit status for failures outside any pipeline stage.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "difftrace",
    version,
    about = "Bayesian diffusion coefficients from periodic MD trajectories"
)]
#[command(args_override_self = true)]
struct Cli {
    /// TOML or JSON file supplying defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unwrap, remove drift, downsample and segment trajectories.
    Preprocess(PreprocessArgs),
    /// Local GP MAP estimate per replicate and species.
    EstimateLocal(EstimateLocalArgs),
    /// Hierarchical posterior per condition.
    EstimateHier(EstimateHierArgs),
    /// Tabulate posterior summaries as CSV.
    Summarize(SummarizeArgs),
    /// Analytical finite-size correction of one estimate.
    CorrectSize(CorrectSizeArgs),
    /// Quasi-random parameter candidates.
    Halton(HaltonArgs),
    /// Pair interaction energy scan for one orientation.
    Ljscan(LjscanArgs),
    /// Filter candidates by orientation preference and rank by ARE.
    Winnow(WinnowArgs),
    /// Least-squares fit of the log-log temperature/pressure surface.
    FitSurface(FitSurfaceArgs),
    /// Evaluate the surface at one state point.
    EvalSurface(EvalSurfaceArgs),
    /// Synthetic ground-truth data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run the whole pipeline from a configuration file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Trajectory file; repeat for several replicates.
    #[arg(long = "in", required = true, value_name = "FILE")]
    inputs: Vec<PathBuf>,
    /// csv or jsonl; inferred from the extension when absent.
    #[arg(long)]
    format: Option<TrajFormat>,
    /// Input frame interval, ps.
    #[arg(long, default_value_t = 0.25)]
    dt: f64,
    #[arg(long, default_value_t = 2)]
    downsample: usize,
    /// Segment length in frames after downsampling.
    #[arg(long, default_value_t = 1000)]
    segment: usize,
    /// Atom role that represents each molecule.
    #[arg(long, default_value = "O")]
    role: String,
    /// Molecule id of the solute; all other molecules are solvent.
    #[arg(long)]
    solute_mol: Option<String>,
    #[arg(long, default_value_t = 298.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    pressure: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateLocalArgs {
    /// Directory written by `preprocess`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Frame interval, ps; defaults to the recorded value.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    prior_scale: f64,
    /// Pa·s; adds size-corrected estimates when given.
    #[arg(long)]
    viscosity: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GEOMETRY_FACTOR)]
    geometry_factor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateHierArgs {
    /// Local estimates from `estimate-local`.
    #[arg(
        long,
        conflicts_with = "condition_data",
        required_unless_present = "condition_data"
    )]
    estimates: Option<PathBuf>,
    /// A single condition's data, bare or as written by `synth condition`.
    #[arg(long)]
    condition_data: Option<PathBuf>,
    /// Restrict to one condition, e.g. `T=263,P=1`.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rhat_max: Option<f64>,
    #[arg(long)]
    metric: Option<MetricArg>,
    /// Store raw constrained draws in the output.
    #[arg(long)]
    keep_draws: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum MetricArg {
    Dense,
    Diagonal,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long)]
    posterior: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrectSizeArgs {
    /// Finite-box diffusion coefficient, Å²/ps.
    #[arg(long)]
    dmd: f64,
    /// K.
    #[arg(long)]
    temp: f64,
    /// Shear viscosity, Pa·s.
    #[arg(long)]
    eta: f64,
    /// Box length, Å.
    #[arg(long = "box")]
    box_length: f64,
    #[arg(long, default_value_t = DEFAULT_GEOMETRY_FACTOR)]
    geometry_factor: f64,
}

#[derive(Debug, Args)]
struct HaltonArgs {
    #[arg(long)]
    n: usize,
    /// `coarse`, `refine`, or four `lo:hi` pairs (eps_o,eps_h,rmin2_o,rmin2_h).
    #[arg(long, default_value = "coarse")]
    ranges: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LjscanArgs {
    /// JSON parameter set; the calibrated set when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    orientation: Orientation,
    #[arg(long, default_value_t = 1.0)]
    rmin: f64,
    #[arg(long, default_value_t = 5.0)]
    rmax: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// JSON pair model with site charges and geometry.
    #[arg(long)]
    charges: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WinnowArgs {
    /// JSON array of `{params, d_estimate}` or of evaluated candidates.
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    charges: Option<PathBuf>,
    /// Reference diffusion coefficient, Å²/ps.
    #[arg(long, default_value_t = REFERENCE_D)]
    reference: f64,
    /// Distance band `lo:hi`, Å.
    #[arg(long, default_value = "1.5:3.5")]
    band: String,
    #[arg(long, default_value_t = 1.0)]
    rmin: f64,
    #[arg(long, default_value_t = 5.0)]
    rmax: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitSurfaceArgs {
    /// CSV with `temperature_K,pressure_atm,d_mean`.
    #[arg(long)]
    points: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalSurfaceArgs {
    /// Coefficient JSON; the published surface when absent.
    #[arg(long)]
    coeffs: Option<PathBuf>,
    #[arg(long)]
    temp: f64,
    #[arg(long)]
    pressure: f64,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Random-walk trajectory folded into a periodic box.
    Brownian(SynthBrownianArgs),
    /// Local estimates for one condition drawn from the hierarchical model.
    Condition(SynthConditionArgs),
}

#[derive(Debug, Args)]
struct SynthBrownianArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<TrajFormat>,
}

#[derive(Debug, Args)]
struct SynthConditionArgs {
    #[arg(long)]
    truths: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Failure with its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn new(code: i32, e: impl std::fmt::Display) -> Self {
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

trait Tag<T> {
    fn tag(self, code: i32) -> std::result::Result<T, Failure>;
}

impl<T, E: std::fmt::Display> Tag<T> for std::result::Result<T, E> {
    fn tag(self, code: i32) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::new(code, e))
    }
}

type CliResult = std::result::Result<i32, Failure>;

/// Entry point; `args[0]` is the program name. Returns the exit status.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("difftrace: {e}");
            return Stage::Validate.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Stage::Validate.exit_code()
            } else {
                0
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("difftrace: {}", f.msg);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    init_workers(None);
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::EstimateLocal(a) => estimate_local(a),
        Command::EstimateHier(a) => estimate_hier(a),
        Command::Summarize(a) => summarize(a),
        Command::CorrectSize(a) => correct_size(a),
        Command::Halton(a) => halton(a),
        Command::Ljscan(a) => ljscan(a),
        Command::Winnow(a) => winnow_cmd(a),
        Command::FitSurface(a) => fit_surface_cmd(a),
        Command::EvalSurface(a) => eval_surface_cmd(a),
        Command::Synth(SynthCommand::Brownian(a)) => synth_brownian(a),
        Command::Synth(SynthCommand::Condition(a)) => synth_condition(a),
        Command::Run(a) => run(cli.config, a),
    }
}

/// Sizes the global thread pool from `workers` or `DIFFTRACE_WORKERS`.
/// Only the first call in a process has an effect.
fn init_workers(workers: Option<usize>) {
    let n = workers.or_else(|| {
        std::env::var("DIFFTRACE_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

// ------------------------------------------------------------ config merging

fn subcommand_span(args: &[String]) -> Option<(usize, bool)> {
    let pos = args.iter().skip(1).position(|a| !a.starts_with('-'))? + 1;
    Some((pos, args[pos] == "synth"))
}

/// Extracts `--config`, and for subcommands other than `run` splices the
/// file's keys into the argument list right after the subcommand so that
/// explicit flags, which come later, take precedence.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" && i + 1 < args.len() {
            config = Some(PathBuf::from(args.remove(i + 1)));
            args.remove(i);
        } else if let Some(v) = args[i].strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config else { return Ok(args) };
    let Some((pos, nested)) = subcommand_span(&args) else {
        return Ok(args);
    };
    if args[pos] == "run" {
        args.splice(1..1, ["--config".to_string(), path.display().to_string()]);
        return Ok(args);
    }
    let value = read_config_value(&path)?;
    let obj = value.as_object().ok_or_else(|| {
        Error::invalid(format!(
            "{}: expected a table of flag values",
            path.display()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut extra = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        let items: Vec<&serde_json::Value> = match v {
            serde_json::Value::Array(a) => a.iter().collect(),
            other => vec![other],
        };
        for item in items {
            match item {
                serde_json::Value::Bool(true) => extra.push(flag.clone()),
                serde_json::Value::Bool(false) | serde_json::Value::Null => {}
                serde_json::Value::String(s) => {
                    extra.push(flag.clone());
                    extra.push(resolve_config_path(k, s, base));
                }
                serde_json::Value::Number(n) => {
                    extra.push(flag.clone());
                    extra.push(n.to_string());
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "{}: key {k:?} must be a scalar or list",
                        path.display()
                    )))
                }
            }
        }
    }
    let at = if nested {
        (pos + 2).min(args.len())
    } else {
        pos + 1
    };
    args.splice(at..at, extra);
    Ok(args)
}

/// File-valued keys are resolved against the configuration's directory.
fn resolve_config_path(key: &str, value: &str, base: &Path) -> String {
    const PATH_KEYS: [&str; 12] = [
        "in",
        "out",
        "estimates",
        "condition_data",
        "posterior",
        "params",
        "charges",
        "candidates",
        "points",
        "coeffs",
        "spec",
        "truths",
    ];
    let p = Path::new(value);
    if PATH_KEYS.contains(&key) && p.is_relative() {
        base.join(p).display().to_string()
    } else {
        value.to_string()
    }
}

fn read_config_value(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

// ----------------------------------------------------------------- outputs

fn emit_json<T: Serialize + ?Sized>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => json::write_file(p, value),
        None => {
            print!("{}", json::to_string(value)?);
            Ok(())
        }
    }
}

fn emit_csv<F>(out: Option<&Path>, write: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Box<dyn Write>>) -> Result<()>,
{
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(p, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    write(&mut w)?;
    w.flush()
        .map_err(|e| Error::io(out.unwrap_or(Path::new("stdout")), e))
}

fn parse_range(s: &str) -> Result<[f64; 2]> {
    let bad = || Error::invalid(format!("expected lo:hi, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok([
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ])
}

/// `coarse`, `refine`, or `lo:hi,lo:hi,lo:hi,lo:hi`.
pub fn parse_ranges(s: &str) -> Result<HaltonRanges> {
    match s {
        "coarse" => Ok(HaltonRanges::COARSE),
        "refine" => Ok(HaltonRanges::REFINE),
        _ => {
            let parts: Vec<[f64; 2]> = s.split(',').map(parse_range).collect::<Result<_>>()?;
            let [eps_o, eps_h, rmin2_o, rmin2_h] = parts[..] else {
                return Err(Error::invalid(format!(
                    "expected four ranges, got {}",
                    parts.len()
                )));
            };
            let r = HaltonRanges {
                eps_o,
                eps_h,
                rmin2_o,
                rmin2_h,
            };
            r.validate()?;
            Ok(r)
        }
    }
}

fn read_pair_model(path: Option<&Path>) -> Result<PairModel> {
    path.map_or_else(|| Ok(PairModel::default()), json::read_file)
}

// ------------------------------------------------------------- subcommands

fn preprocess(a: PreprocessArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    if let Some(p) = a.inputs.iter().find(|p| !p.is_file()) {
        return Err(Failure::new(v, format!("input not found: {}", p.display())));
    }
    let opts = PreprocessOptions {
        dt: a.dt,
        downsample: a.downsample,
        segment: a.segment,
        role: a.role,
        solute_mol: a.solute_mol,
        temperature: a.temperature,
        pressure: a.pressure,
    };
    let code = Stage::Preprocess.exit_code();
    for path in &a.inputs {
        let fmt = a.format.unwrap_or_else(|| pipeline::format_for(path));
        let p = pipeline::preprocess_file(path, fmt, &opts).tag(code)?;
        let dir = pipeline::write_preprocessed(&a.out, &p).tag(code)?;
        log::info!(
            "{} → {} ({} segments)",
            path.display(),
            dir.display(),
            p.meta.n_segments
        );
    }
    Ok(0)
}

fn estimate_local(a: EstimateLocalArgs) -> CliResult {
    let code = Stage::EstimateLocal.exit_code();
    let reps = pipeline::read_preprocessed_dir(&a.input).tag(Stage::Validate.exit_code())?;
    let opts = LocalOptions {
        map: MapOptions {
            prior_scale: a.prior_scale,
            ..Default::default()
        },
        dt: a.dt,
        correction: CorrectionSettings {
            geometry_factor: a.geometry_factor,
            viscosity: a.viscosity,
        },
    };
    let recs = pipeline::estimate_local(&reps, &opts).tag(code)?;
    emit_json(a.out.as_deref(), &recs).tag(code)?;
    Ok(if recs.iter().all(|r| r.converged) {
        0
    } else {
        pipeline::EXIT_NOT_CONVERGED
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConditionFile {
    Wrapped { data: ConditionData },
    Bare(ConditionData),
}

fn estimate_hier(a: EstimateHierArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let code = Stage::EstimateHier.exit_code();
    let d = SamplerConfig::default();
    let cfg = SamplerConfig {
        chains: a.chains.unwrap_or(d.chains),
        burnin: a.burnin.unwrap_or(d.burnin),
        samples: a.samples.unwrap_or(d.samples),
        thin: a.thin.unwrap_or(d.thin),
        seed: a.seed,
        rhat_max: a.rhat_max.unwrap_or(d.rhat_max),
        metric: match a.metric {
            Some(MetricArg::Diagonal) => Metric::Diagonal,
            Some(MetricArg::Dense) | None => d.metric,
        },
        ..d
    };
    cfg.validate().tag(v)?;
    let only = a
        .condition
        .as_deref()
        .map(Condition::parse)
        .transpose()
        .tag(v)?;
    let post = if let Some(path) = &a.condition_data {
        let data = match json::read_file::<ConditionFile>(path).tag(v)? {
            ConditionFile::Wrapped { data } | ConditionFile::Bare(data) => data,
        };
        pipeline::PosteriorFile {
            conditions: vec![
                pipeline::estimate_hier_condition(&data, &cfg, a.keep_draws).tag(code)?
            ],
        }
    } else {
        let path = a.estimates.as_deref().expect("clap enforces one input");
        let recs: Vec<pipeline::EstimateRecord> = json::read_file(path).tag(v)?;
        pipeline::estimate_hier(&recs, only, &cfg, a.keep_draws).tag(code)?
    };
    emit_json(a.out.as_deref(), &post).tag(code)?;
    Ok(if post.converged() {
        0
    } else {
        pipeline::EXIT_NOT_CONVERGED
    })
}

fn summarize(a: SummarizeArgs) -> CliResult {
    let code = Stage::Summarize.exit_code();
    let post: pipeline::PosteriorFile =
        json::read_file(&a.posterior).tag(Stage::Validate.exit_code())?;
    match &a.out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Error::io(p, e)).tag(code)?;
            pipeline::write_summary_csv(std::io::BufWriter::new(f), &post).tag(code)?;
        }
        None => pipeline::write_summary_csv(std::io::stdout().lock(), &post).tag(code)?,
    }
    Ok(if post.converged() {
        0
    } else {
        pipeline::EXIT_NOT_CONVERGED
    })
}

#[derive(Serialize)]
struct CorrectionReport {
    d_md: f64,
    correction: f64,
    d_corrected: f64,
}

fn correct_size(a: CorrectSizeArgs) -> CliResult {
    let c = CorrectionInput {
        d_md: a.dmd,
        temperature: a.temp,
        viscosity: a.eta,
        box_length: a.box_length,
        geometry_factor: a.geometry_factor,
    };
    let d = yeh_hummer(&c).tag(Stage::Validate.exit_code())?;
    emit_json(
        None,
        &CorrectionReport {
            d_md: a.dmd,
            correction: c.correction_term(),
            d_corrected: d,
        },
    )
    .tag(EXIT_FAILURE)?;
    Ok(0)
}

fn halton(a: HaltonArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let ranges = parse_ranges(&a.ranges).tag(v)?;
    let cands = halton_candidates(a.n, &ranges).tag(v)?;
    emit_csv(a.out.as_deref(), |w| {
        w.write_record(["index", "eps_o", "eps_h", "rmin2_o", "rmin2_h"])?;
        for (i, c) in cands.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                c.eps_o.to_string(),
                c.eps_h.to_string(),
                c.rmin2_o.to_string(),
                c.rmin2_h.to_string(),
            ])?;
        }
        Ok(())
    })
    .tag(EXIT_FAILURE)?;
    Ok(0)
}

fn ljscan(a: LjscanArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let params: LJParams = match &a.params {
        Some(p) => json::read_file(p).tag(v)?,
        None => LJParams::CALIBRATED,
    };
    let model = read_pair_model(a.charges.as_deref()).tag(v)?;
    let grid = scan_grid(a.rmin, a.rmax, a.step).tag(v)?;
    let curve = scan(a.orientation, &params, &model, &grid).tag(EXIT_FAILURE)?;
    emit_csv(a.out.as_deref(), |w| {
        for p in &curve {
            w.serialize(p)?;
        }
        Ok(())
    })
    .tag(EXIT_FAILURE)?;
    Ok(0)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateInput {
    Evaluated(CandidateResult),
    Raw(Candidate),
}

fn winnow_cmd(a: WinnowArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let band = parse_range(&a.band).tag(v)?;
    let model = read_pair_model(a.charges.as_deref()).tag(v)?;
    let grid = scan_grid(a.rmin, a.rmax, a.step).tag(v)?;
    let inputs: Vec<CandidateInput> = json::read_file(&a.candidates).tag(v)?;
    let evaluated = inputs
        .into_iter()
        .map(|c| match c {
            CandidateInput::Evaluated(r) => Ok(r),
            CandidateInput::Raw(c) => {
                CandidateResult::evaluate(&c, a.reference, &model, &grid, (band[0], band[1]))
            }
        })
        .collect::<Result<Vec<_>>>()
        .tag(v)?;
    let kept = winnow(&evaluated, (band[0], band[1])).tag(v)?;
    let kept: Vec<CandidateResult> = kept
        .into_iter()
        .map(|c| CandidateResult {
            scans: Default::default(),
            ..c
        })
        .collect();
    emit_json(a.out.as_deref(), &kept).tag(EXIT_FAILURE)?;
    Ok(0)
}

/// Reads `temperature_K,pressure_atm,d_mean` rows.
pub fn read_surface_points(path: &Path) -> Result<Vec<SurfacePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let pts = r
        .deserialize()
        .collect::<std::result::Result<Vec<SurfacePoint>, _>>()?;
    Ok(pts)
}

fn fit_surface_cmd(a: FitSurfaceArgs) -> CliResult {
    let pts = read_surface_points(&a.points).tag(Stage::Validate.exit_code())?;
    let c = fit_surface(&pts).tag(EXIT_FAILURE)?;
    emit_json(a.out.as_deref(), &c).tag(EXIT_FAILURE)?;
    Ok(0)
}

#[derive(Serialize)]
struct SurfaceValue {
    #[serde(rename = "temperature_K")]
    temperature: f64,
    #[serde(rename = "pressure_atm")]
    pressure: f64,
    d: f64,
}

fn eval_surface_cmd(a: EvalSurfaceArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let c: SurfaceCoeffs = match &a.coeffs {
        Some(p) => json::read_file(p).tag(v)?,
        None => SurfaceCoeffs::REFERENCE,
    };
    let d = eval_surface(&c, a.temp, a.pressure).tag(v)?;
    emit_json(
        None,
        &SurfaceValue {
            temperature: a.temp,
            pressure: a.pressure,
            d,
        },
    )
    .tag(EXIT_FAILURE)?;
    Ok(0)
}

fn synth_brownian(a: SynthBrownianArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let spec: SynthSpec = json::read_file(&a.spec).tag(v)?;
    if spec.box_lengths.is_none() {
        return Err(Failure::new(
            v,
            "spec needs a \"box\" to write a periodic trajectory",
        ));
    }
    let t = gen_brownian(&spec).tag(v)?;
    let fmt = a.format.unwrap_or_else(|| pipeline::format_for(&a.out));
    write_trajectory(&a.out, t.wrapped.as_ref().expect("box given"), fmt).tag(EXIT_FAILURE)?;
    Ok(0)
}

#[derive(Serialize)]
struct SynthConditionOut<'a> {
    data: &'a ConditionData,
    truth: &'a crate::synth::ConditionTruth,
}

fn synth_condition(a: SynthConditionArgs) -> CliResult {
    let spec: ConditionSpec = json::read_file(&a.truths).tag(Stage::Validate.exit_code())?;
    let (data, truth) = gen_condition(&spec).tag(Stage::Validate.exit_code())?;
    emit_json(
        a.out.as_deref(),
        &SynthConditionOut {
            data: &data,
            truth: &truth,
        },
    )
    .tag(EXIT_FAILURE)?;
    Ok(0)
}

fn run(config: Option<PathBuf>, a: RunArgs) -> CliResult {
    let v = Stage::Validate.exit_code();
    let path = config.ok_or_else(|| Failure::new(v, "run needs --config FILE"))?;
    let mut cfg = PipelineConfig::from_path(&path).tag(v)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.out_dir {
        // Command-line paths are relative to the working directory.
        cfg.out_dir = std::env::current_dir().map(|c| c.join(&d)).unwrap_or(d);
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    init_workers(cfg.workers);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let outcome =
        pipeline::run_pipeline(&cfg, &base).map_err(|e| Failure::new(e.stage.exit_code(), e))?;
    for s in &outcome.manifest.stages {
        if let Some(m) = &s.message {
            eprintln!("difftrace: {:?}: {m}", s.stage);
        }
    }
    log::info!("outputs in {}", outcome.out_dir.display());
    Ok(outcome.exit_code)
}
