//! The `statgeo` command line.
//!
//! Every subcommand writes its payload files plus a one-line JSON summary
//! on stdout. Failures print `{"error": {...}}` on stderr and exit with 1
//! (usage, parse or I/O problems) or 2 (numerical failure).

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decoder::{toy_circle_codes, toy_decoder, DecoderMap, ToyFamily};
use crate::error::Error;
use crate::families::KlMode;
use crate::geodesic::{exp_map_with, log_map, minimize_energy, EnergyConfig, Objective, DEFAULT_FD_STEP};
use crate::io::{load_decoder, read_codes, read_json, write_codes, write_json, DecoderFile, GridFile, LandFile};
use crate::land::{land_fit, land_logpdf, LandConfig};
use crate::metric::{
    decoded_kl, half_log_det, kl_sum, pullback, GridSpec, LatentMetric, MetricField, MetricGrid,
    DEFAULT_PROBE_EPSILON,
};
use crate::rng::RngStream;

#[derive(Debug, Parser)]
#[command(name = "statgeo", version, about = "Fisher-Rao geometry of decoder latent spaces")]
pub struct Cli {
    /// Worker threads; STATGEO_THREADS takes precedence
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print per-stage wall time to stderr
    #[arg(long, global = true)]
    pub profile: bool,
    /// Run configuration (TOML, or JSON for a .json extension)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of every stochastic step; overrides the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Noisy unit-circle latent codes
    Toygen {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Codes CSV (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded random toy decoder, regularized with k-means of the codes
    Toydecoder {
        #[arg(long)]
        family: ToyFamily,
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Energy-minimizing curve between two latent points
    Geodesic {
        #[arg(long)]
        decoder: PathBuf,
        #[command(flatten)]
        endpoints: Endpoints,
        /// Number of curve samples T (T + 1 rows)
        #[arg(long)]
        samples: Option<usize>,
        /// Curve CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric tensors on a lattice
    MetricGrid {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, value_enum, default_value_t = GridMode::Pullback)]
        mode: GridMode,
        #[command(flatten)]
        lattice: Lattice,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a LAND to latent codes
    Land {
        #[command(flatten)]
        metric: MetricSource,
        #[arg(long)]
        codes: PathBuf,
        #[command(flatten)]
        lattice: Lattice,
        /// Model JSON
        #[arg(long)]
        out: PathBuf,
        /// Density CSV over the metric lattice
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// KL divergence between two decoded points and its quadratic model
    Kl {
        #[arg(long)]
        decoder: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        z1: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        z2: Vec<f64>,
    },
    /// Exponential map by RK4
    Exp {
        #[command(flatten)]
        metric: MetricSource,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        z: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        v: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Trajectory CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Logarithmic map from an optimized geodesic
    Log {
        #[command(flatten)]
        metric: MetricSource,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        z: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridMode {
    Pullback,
    KlProbe,
}

#[derive(Debug, Args)]
pub struct Endpoints {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub from: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub to: Option<Vec<f64>>,
    /// Codes CSV indexed by --pair
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Two row indices into --codes
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub pair: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct Lattice {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub resolution: Option<Vec<usize>>,
    /// Kernel bandwidth; defaults to the smallest lattice spacing
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MetricSource {
    /// Decoder JSON (exact pullback metric)
    #[arg(long, conflicts_with = "grid")]
    pub decoder: Option<PathBuf>,
    /// Metric grid JSON
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

/// Subcommand parameters read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub energy: EnergyConfig,
    pub kl: KlMode,
    /// Curve samples written by `geodesic`.
    pub samples: usize,
    pub probe_epsilon: f64,
    /// Radius of the KL-probe validation circle.
    pub validation_radius: f64,
    pub validation_directions: usize,
    pub rk4_steps: usize,
    pub grid: Option<GridSpec>,
    pub land: LandConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            energy: EnergyConfig::default(),
            kl: KlMode::ClosedForm,
            samples: 100,
            probe_epsilon: DEFAULT_PROBE_EPSILON,
            validation_radius: 0.1,
            validation_directions: 8,
            rk4_steps: crate::geodesic::DEFAULT_RK4_STEPS,
            grid: None,
            land: LandConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

/// A failure with an explicit exit code and machine-readable details.
#[derive(Debug)]
struct Failure {
    code: i32,
    kind: &'static str,
    message: String,
    details: Value,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Failure {
        code: 1,
        kind: "usage",
        message: message.into(),
        details: Value::Null,
    })
}

fn numerical(kind: &'static str, err: Error, details: Value) -> anyhow::Error {
    let code = if err.is_numerical() { 2 } else { 1 };
    anyhow::Error::new(Failure {
        code,
        kind,
        message: err.to_string(),
        details,
    })
}

struct Profile {
    enabled: bool,
    last: Instant,
    stages: Vec<(String, f64)>,
}

impl Profile {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            last: Instant::now(),
            stages: Vec::new(),
        }
    }

    fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push((stage.to_string(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn report(&self) {
        if self.enabled {
            let stages: Vec<Value> = self.stages.iter().map(|(s, t)| json!({"stage": s, "seconds": t})).collect();
            eprintln!("{}", json!({ "profile": stages }));
        }
    }
}

struct RunContext {
    cfg: RunConfig,
    seed: Option<u64>,
    profile: Profile,
}

impl RunContext {
    fn seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| usage("this subcommand is stochastic; pass --seed or set seed in the config"))
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", &e.to_string().trim_end().to_string(), &Value::Null);
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            if let Some(f) = err.downcast_ref::<Failure>() {
                report_error(f.kind, &f.message, &f.details);
                return f.code;
            }
            let numerical = err
                .chain()
                .filter_map(|e| e.downcast_ref::<Error>())
                .any(|e| e.is_numerical());
            let message = format!("{err:#}");
            if numerical {
                report_error("numerical", &message, &Value::Null);
                2
            } else {
                report_error("input", &message, &Value::Null);
                1
            }
        }
    }
}

fn report_error(kind: &str, message: &str, details: &Value) {
    let mut body = json!({ "kind": kind, "message": message });
    if !details.is_null() {
        body["details"] = details.clone();
    }
    eprintln!("{}", json!({ "error": body }));
}

fn thread_count(flag: Option<usize>) -> anyhow::Result<Option<usize>> {
    match std::env::var("STATGEO_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| usage(format!("STATGEO_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(flag),
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    let mut ctx = RunContext {
        seed: cli.seed.or(cfg.seed),
        cfg,
        profile: Profile::new(cli.profile),
    };
    let summary = match cli.command {
        Command::Toygen { n, noise, out } => cmd_toygen(&mut ctx, n, noise, out.as_deref()),
        Command::Toydecoder { family, codes, k, out } => cmd_toydecoder(&mut ctx, family, &codes, k, &out),
        Command::Geodesic {
            decoder,
            endpoints,
            samples,
            out,
        } => cmd_geodesic(&mut ctx, &decoder, &endpoints, samples, &out),
        Command::MetricGrid {
            decoder,
            mode,
            lattice,
            out,
        } => cmd_metric_grid(&mut ctx, &decoder, mode, &lattice, &out),
        Command::Land {
            metric,
            codes,
            lattice,
            out,
            density,
        } => cmd_land(&mut ctx, &metric, &codes, &lattice, &out, density.as_deref()),
        Command::Kl { decoder, z1, z2 } => cmd_kl(&mut ctx, &decoder, &z1, &z2),
        Command::Exp { metric, z, v, steps, out } => cmd_exp(&mut ctx, &metric, &z, &v, steps, out.as_deref()),
        Command::Log { metric, z, y } => cmd_log(&mut ctx, &metric, &z, &y),
    };
    ctx.profile.report();
    if let Some(summary) = summary? {
        println!("{summary}");
    }
    Ok(())
}

fn decoder_from(path: &Path) -> anyhow::Result<DecoderMap> {
    load_decoder(path).with_context(|| format!("loading decoder {}", path.display()))
}

fn grid_from(path: &Path) -> anyhow::Result<MetricGrid> {
    let file: GridFile = read_json(path).with_context(|| format!("loading grid {}", path.display()))?;
    file.to_grid().with_context(|| format!("loading grid {}", path.display()))
}

fn check_dim(what: &str, v: &[f64], d: usize) -> anyhow::Result<()> {
    if v.len() != d {
        return Err(usage(format!("{what} has {} entries, latent space is {d}-dimensional", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(usage(format!("{what} must be finite")));
    }
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_toygen(ctx: &mut RunContext, n: usize, noise: f64, out: Option<&Path>) -> anyhow::Result<Option<Value>> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(usage("--noise must be a finite non-negative number"));
    }
    let codes = toy_circle_codes(n, noise, &mut RngStream::new(ctx.seed()?));
    ctx.profile.mark("generate");
    match out {
        Some(path) => {
            let mut w = create(path)?;
            write_codes(&mut w, &codes)?;
            w.flush()?;
            ctx.profile.mark("write");
            Ok(Some(json!({ "codes": n, "path": path })))
        }
        None => {
            write_codes(io::stdout().lock(), &codes)?;
            Ok(None)
        }
    }
}

fn cmd_toydecoder(ctx: &mut RunContext, family: ToyFamily, codes: &Path, k: usize, out: &Path) -> anyhow::Result<Option<Value>> {
    let codes = read_codes(codes).with_context(|| format!("reading codes {}", codes.display()))?;
    let dec = toy_decoder(family, &codes, k)?;
    ctx.profile.mark("build");
    write_json(out, &DecoderFile::from_decoder(&dec, Some(family.seed())))?;
    Ok(Some(json!({
        "family": dec.family().to_string(),
        "features": dec.feature_count(),
        "centers": k,
        "path": out,
    })))
}

fn endpoints(e: &Endpoints, d: usize) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let (z0, z1) = match (&e.from, &e.to, &e.codes, &e.pair) {
        (Some(a), Some(b), None, None) => (a.clone(), b.clone()),
        (None, None, Some(path), Some(pair)) => {
            if pair.len() != 2 {
                return Err(usage("--pair takes exactly two row indices"));
            }
            let codes = read_codes(path).with_context(|| format!("reading codes {}", path.display()))?;
            let row = |i: usize| {
                codes
                    .get(i)
                    .cloned()
                    .ok_or_else(|| usage(format!("row {i} out of range for {} codes", codes.len())))
            };
            (row(pair[0])?, row(pair[1])?)
        }
        _ => return Err(usage("give either --from and --to, or --codes and --pair")),
    };
    check_dim("--from", &z0, d)?;
    check_dim("--to", &z1, d)?;
    Ok((z0, z1))
}

fn cmd_geodesic(
    ctx: &mut RunContext,
    decoder: &Path,
    e: &Endpoints,
    samples: Option<usize>,
    out: &Path,
) -> anyhow::Result<Option<Value>> {
    let dec = decoder_from(decoder)?;
    let (z0, z1) = endpoints(e, dec.latent_dim())?;
    let samples = samples.unwrap_or(ctx.cfg.samples);
    if samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let mode = ctx.cfg.kl;
    let mut rng = RngStream::new(ctx.seed()?);
    ctx.profile.mark("load");
    let objective = Objective::Kl { decoder: &dec, mode };
    let g = minimize_energy(&z0, &z1, objective, &ctx.cfg.energy, &mut rng)
        .map_err(|err| numerical("optimizer", err, json!({ "from": z0, "to": z1 })))?;
    ctx.profile.mark("optimize");

    let points = g.curve.sample_points(samples);
    let params = points
        .iter()
        .map(|z| dec.forward(z))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(|err| numerical("decode", err, Value::Null))?;
    let d = dec.latent_dim();
    let width = params[0].iter().map(|p| p.values().len()).sum::<usize>();
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|k| format!("z{k}")));
    header.extend((0..width).map(|k| format!("eta{k}")));
    header.push("segment_kl".into());
    w.write_record(&header)?;
    for (i, (z, p)) in points.iter().zip(&params).enumerate() {
        let mut row = vec![(i as f64 / samples as f64).to_string()];
        row.extend(z.iter().map(|v| v.to_string()));
        row.extend(p.iter().flat_map(|q| q.values().iter().map(|v| v.to_string())));
        row.push(match params.get(i + 1) {
            Some(next) => kl_sum(p, next, &mode, i as u64)
                .map_err(|err| numerical("segment_kl", err, json!({ "row": i })))?
                .to_string(),
            None => String::new(),
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    ctx.profile.mark("write");
    Ok(Some(json!({
        "energy": g.energy,
        "length": g.length,
        "straight_energy": g.straight_energy,
        "iterations": g.iterations,
        "converged": g.converged,
        "rows": samples + 1,
    })))
}

fn lattice_spec(l: &Lattice, fallback: Option<&GridSpec>) -> anyhow::Result<GridSpec> {
    let mut spec = match (&l.lower, &l.upper, &l.resolution, fallback) {
        (Some(lo), Some(hi), Some(res), _) => GridSpec {
            lower: lo.clone(),
            upper: hi.clone(),
            resolution: res.clone(),
            sigma: f64::NAN,
        },
        (None, None, None, Some(spec)) => spec.clone(),
        _ => return Err(usage("give --lower, --upper and --resolution, or a [grid] table in the config")),
    };
    if let Some(s) = l.sigma {
        spec.sigma = s;
    }
    if spec.sigma.is_nan() && spec.lower.len() == spec.upper.len() && spec.lower.len() == spec.resolution.len() {
        spec.sigma = spec
            .lower
            .iter()
            .zip(&spec.upper)
            .zip(&spec.resolution)
            .map(|((a, b), r)| (b - a) / (r.max(&2) - 1) as f64)
            .fold(f64::INFINITY, f64::min);
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn build_tensors(metric: &LatentMetric, spec: &GridSpec) -> anyhow::Result<Vec<nalgebra::DMatrix<f64>>> {
    spec.points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let m = metric.eval(p).map_err(|e| (i, e))?;
            if m.iter().all(|v| v.is_finite()) {
                Ok(m)
            } else {
                Err((i, Error::NonFinite(format!("metric tensor at {p:?}"))))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|(i, err)| numerical("metric", err, json!({ "point_index": i })))
}

/// Mean |KL(z, z + δ) − ½δᵀMδ| over probe directions of length `radius`.
fn probe_validation(dec: &DecoderMap, z: &[f64], m: &nalgebra::DMatrix<f64>, cfg: &RunConfig) -> crate::Result<f64> {
    let d = z.len();
    let n = cfg.validation_directions.max(1);
    let dirs: Vec<Vec<f64>> = if d == 2 {
        (0..n)
            .map(|j| {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                vec![phi.cos(), phi.sin()]
            })
            .collect()
    } else {
        (0..2 * d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j / 2] = if j % 2 == 0 { 1.0 } else { -1.0 };
                e
            })
            .collect()
    };
    let mut total = 0.0;
    for u in &dirs {
        let delta = DVector::from_iterator(d, u.iter().map(|x| cfg.validation_radius * x));
        let target: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let kl = decoded_kl(dec, z, &target, &cfg.kl)?;
        total += (kl - 0.5 * delta.dot(&(m * &delta))).abs();
    }
    Ok(total / dirs.len() as f64)
}

fn cmd_metric_grid(ctx: &mut RunContext, decoder: &Path, mode: GridMode, l: &Lattice, out: &Path) -> anyhow::Result<Option<Value>> {
    let dec = decoder_from(decoder)?;
    let spec = lattice_spec(l, ctx.cfg.grid.as_ref())?;
    if spec.dim() != dec.latent_dim() {
        return Err(usage(format!("grid is {}-dimensional, decoder latent space is {}", spec.dim(), dec.latent_dim())));
    }
    if matches!(ctx.cfg.kl, KlMode::MonteCarlo { .. }) && ctx.seed.is_none() && mode == GridMode::KlProbe {
        return Err(usage("Monte Carlo probes need --seed or a config seed"));
    }
    ctx.profile.mark("load");
    let metric = match mode {
        GridMode::Pullback => LatentMetric::ExactPullback(dec.clone()),
        GridMode::KlProbe => LatentMetric::kl_probe(dec.clone(), ctx.cfg.probe_epsilon, ctx.cfg.kl).map_err(|e| usage(e.to_string()))?,
    };
    let tensors = build_tensors(&metric, &spec)?;
    let grid = MetricGrid::new(spec, tensors)?;
    ctx.profile.mark("tensors");
    let validation = match mode {
        GridMode::Pullback => None,
        GridMode::KlProbe => Some(
            grid.points()
                .par_iter()
                .zip(grid.tensors())
                .enumerate()
                .map(|(i, (z, m))| probe_validation(&dec, z, m, &ctx.cfg).map_err(|e| (i, e)))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|(i, err)| numerical("validation", err, json!({ "point_index": i })))?,
        ),
    };
    ctx.profile.mark("validate");
    let mode_name = match mode {
        GridMode::Pullback => "pullback",
        GridMode::KlProbe => "kl-probe",
    };
    let mean_validation = validation.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64);
    write_json(out, &GridFile::from_grid(&grid, mode_name, validation))?;
    ctx.profile.mark("write");
    Ok(Some(json!({
        "mode": mode_name,
        "points": grid.points().len(),
        "mean_validation_error": mean_validation,
        "clamped": metric.clamp_count(),
    })))
}

enum Metric {
    Decoder(DecoderMap),
    Grid(LatentMetric),
}

impl Metric {
    fn load(src: &MetricSource) -> anyhow::Result<(Self, String)> {
        match (&src.decoder, &src.grid) {
            (Some(p), None) => Ok((Metric::Decoder(decoder_from(p)?), p.display().to_string())),
            (None, Some(p)) => Ok((Metric::Grid(LatentMetric::Grid(grid_from(p)?)), p.display().to_string())),
            _ => Err(usage("give exactly one of --decoder or --grid")),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Metric::Decoder(d) => d.latent_dim(),
            Metric::Grid(g) => g.dim(),
        }
    }
}

fn default_land_lattice(codes: &[Vec<f64>]) -> GridSpec {
    let d = codes[0].len();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for c in codes {
        for k in 0..d {
            lower[k] = lower[k].min(c[k]);
            upper[k] = upper[k].max(c[k]);
        }
    }
    let pad: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.25 * (b - a).max(1e-3)).collect();
    let lower: Vec<f64> = lower.iter().zip(&pad).map(|(a, p)| a - p).collect();
    let upper: Vec<f64> = upper.iter().zip(&pad).map(|(a, p)| a + p).collect();
    let sigma = lower.iter().zip(&upper).map(|(a, b)| (b - a) / 20.0).fold(f64::INFINITY, f64::min);
    GridSpec {
        lower,
        upper,
        resolution: vec![21; d],
        sigma,
    }
}

fn cmd_land(
    ctx: &mut RunContext,
    src: &MetricSource,
    codes_path: &Path,
    l: &Lattice,
    out: &Path,
    density: Option<&Path>,
) -> anyhow::Result<Option<Value>> {
    let (source, metric_ref) = Metric::load(src)?;
    let codes = read_codes(codes_path).with_context(|| format!("reading codes {}", codes_path.display()))?;
    if codes.is_empty() {
        return Err(usage("codes file is empty"));
    }
    for (i, c) in codes.iter().enumerate() {
        check_dim(&format!("code {i}"), c, source.dim())?;
    }
    let seed = ctx.seed()?;
    let metric = match source {
        Metric::Grid(g) => g,
        Metric::Decoder(dec) => {
            let spec = if l.lower.is_some() || ctx.cfg.grid.is_none() && l.resolution.is_some() {
                lattice_spec(l, None)?
            } else {
                match &ctx.cfg.grid {
                    Some(spec) => lattice_spec(l, Some(spec))?,
                    None => default_land_lattice(&codes),
                }
            };
            let tensors = build_tensors(&LatentMetric::ExactPullback(dec), &spec)?;
            LatentMetric::Grid(MetricGrid::new(spec, tensors)?)
        }
    };
    ctx.profile.mark("load");
    let land_cfg = ctx.cfg.land;
    let fit = land_fit(&codes, &metric, None, &land_cfg, &mut RngStream::new(seed))
        .map_err(|err| numerical("land_fit", err, Value::Null))?;
    ctx.profile.mark("fit");
    write_json(out, &LandFile::new(&fit.model, &metric_ref, fit.converged, fit.iterations))?;

    let mut density_sum = None;
    if let (Some(path), LatentMetric::Grid(grid)) = (density, &metric) {
        let base = half_log_det(&metric.eval(&fit.model.mean)?).ok_or_else(|| {
            numerical("density", Error::SingularMetric(fit.model.mean.clone()), Value::Null)
        })?;
        let rows = grid
            .points()
            .par_iter()
            .map(|z| {
                let log_rho = land_logpdf(&fit.model, &metric, z, &land_cfg.geodesic)?;
                let h = half_log_det(&metric.eval(z)?).ok_or_else(|| Error::SingularMetric(z.clone()))?;
                Ok((log_rho, (log_rho + h - base).exp()))
            })
            .collect::<crate::Result<Vec<(f64, f64)>>>()
            .map_err(|err| numerical("density", err, Value::Null))?;
        let spec = grid.spec();
        let cell: f64 = spec
            .lower
            .iter()
            .zip(&spec.upper)
            .zip(&spec.resolution)
            .map(|((a, b), r)| (b - a) / (*r - 1) as f64)
            .product();
        let mut w = csv::Writer::from_writer(create(path)?);
        let mut header: Vec<String> = (0..spec.dim()).map(|k| format!("z{k}")).collect();
        header.extend(["log_density".to_string(), "density".to_string()]);
        w.write_record(&header)?;
        for (z, (log_rho, lebesgue)) in grid.points().iter().zip(&rows) {
            let mut row: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            row.push(log_rho.to_string());
            row.push(lebesgue.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        density_sum = Some(rows.iter().map(|r| r.1).sum::<f64>() * cell);
        ctx.profile.mark("density");
    }
    let summary = json!({
        "mean": fit.model.mean,
        "norm_const": fit.model.norm_const,
        "nll": fit.nll_history.last(),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "density_sum": density_sum,
    });
    if !fit.converged {
        println!("{summary}");
        return Err(anyhow::Error::new(Failure {
            code: 2,
            kind: "non_convergence",
            message: format!(
                "LAND fit stopped after {} iterations above the gradient tolerance; model written with converged = false",
                fit.iterations
            ),
            details: json!({ "model": out }),
        }));
    }
    Ok(Some(summary))
}

fn cmd_kl(ctx: &mut RunContext, decoder: &Path, z1: &[f64], z2: &[f64]) -> anyhow::Result<Option<Value>> {
    let dec = decoder_from(decoder)?;
    check_dim("--z1", z1, dec.latent_dim())?;
    check_dim("--z2", z2, dec.latent_dim())?;
    ctx.profile.mark("load");
    let kl = decoded_kl(&dec, z1, z2, &ctx.cfg.kl).map_err(|err| numerical("kl", err, Value::Null))?;
    let m = pullback(&dec, z1).map_err(|err| numerical("metric", err, Value::Null))?;
    let delta = DVector::from_iterator(z1.len(), z1.iter().zip(z2).map(|(a, b)| b - a));
    let quad = 0.5 * delta.dot(&(m * &delta));
    ctx.profile.mark("evaluate");
    Ok(Some(json!({ "kl": kl, "quadratic_approx": quad, "gap": (kl - quad).abs() })))
}

fn cmd_exp(
    ctx: &mut RunContext,
    src: &MetricSource,
    z: &[f64],
    v: &[f64],
    steps: Option<usize>,
    out: Option<&Path>,
) -> anyhow::Result<Option<Value>> {
    let (source, _) = Metric::load(src)?;
    check_dim("--z", z, source.dim())?;
    check_dim("--v", v, source.dim())?;
    let metric = match source {
        Metric::Decoder(dec) => LatentMetric::ExactPullback(dec),
        Metric::Grid(g) => g,
    };
    let steps = steps.unwrap_or(ctx.cfg.rk4_steps);
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    ctx.profile.mark("load");
    let path = exp_map_with(&metric, z, v, steps, DEFAULT_FD_STEP).map_err(|err| numerical("exp_map", err, Value::Null))?;
    ctx.profile.mark("integrate");
    if let Some(out) = out {
        let d = z.len();
        let mut w = csv::Writer::from_writer(create(out)?);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|k| format!("z{k}")));
        header.extend((0..d).map(|k| format!("v{k}")));
        w.write_record(&header)?;
        for ((t, p), vel) in path.times.iter().zip(&path.points).zip(&path.velocities) {
            let mut row = vec![t.to_string()];
            row.extend(p.iter().chain(vel).map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        ctx.profile.mark("write");
    }
    Ok(Some(json!({ "endpoint": path.endpoint(), "steps": steps })))
}

fn cmd_log(ctx: &mut RunContext, src: &MetricSource, z: &[f64], y: &[f64]) -> anyhow::Result<Option<Value>> {
    let (source, _) = Metric::load(src)?;
    check_dim("--z", z, source.dim())?;
    check_dim("--y", y, source.dim())?;
    let mut rng = RngStream::new(ctx.seed()?);
    ctx.profile.mark("load");
    let log = match &source {
        Metric::Decoder(dec) => log_map(Objective::Kl { decoder: dec, mode: ctx.cfg.kl }, z, y, &ctx.cfg.energy, &mut rng),
        Metric::Grid(g) => log_map(Objective::Metric(g), z, y, &ctx.cfg.energy, &mut rng),
    }
    .map_err(|err| numerical("log_map", err, json!({ "z": z, "y": y })))?;
    ctx.profile.mark("optimize");
    Ok(Some(json!({
        "velocity": log.velocity,
        "length": log.length,
        "energy": log.geodesic.energy,
        "straight_energy": log.geodesic.straight_energy,
        "converged": log.geodesic.converged,
    })))
}
