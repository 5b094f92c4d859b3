//! The `hsmoe` command line: argument definitions, file formats and the four
//! subcommands.
//!
//! * Datasets are CSV with a mandatory header `x_1,…,x_d,y[,z_true]`;
//!   `z_true` holds one-based expert numbers.
//! * Reports, ground truth and saved filter state are JSON (see
//!   `docs/schema.md`).
//!
//! Exit codes: 0 success, 2 usage or I/O error, 3 numerical degeneracy.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{ResampleScheme, RngStream};
use crate::engine::{self, FilterConfig, FilterState, Particle, PriorConfig, SelectionRow};
use crate::error::{Error, Result};
use crate::expert::{Dataset, NIGStats, Observation};
use crate::gate::{GateState, HorseshoeState, PhiRefresh, StickState};
use crate::synthgen::{self, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Parser)]
#[command(
    name = "hsmoe",
    version,
    about = "Horseshoe mixture of experts with particle learning"
)]
pub struct Cli {
    /// Worker threads for the particle filter (default: all cores). Output
    /// does not depend on this setting.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sparse mixture-of-experts dataset.
    Simulate(SimulateArgs),
    /// Run the particle filter on a dataset and report evidence and
    /// allocation frequencies.
    Fit(FitArgs),
    /// Compare numbers of experts by log marginal likelihood.
    Select(SelectArgs),
    /// Score experts for top-k routing from a saved filter state.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// K = 10, s = 3, n = 500, d = 5, N = 1000.
    Table1,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long = "K")]
    pub n_experts: Option<usize>,
    /// Number of active experts.
    #[arg(long = "s")]
    pub n_active: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub b_inactive: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Existing directory receiving `data.csv` and `ground_truth.json`.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ResampleScheme::Systematic)]
    pub resample: ResampleScheme,
    /// Resample when ESS < threshold * N; 1 resamples every step.
    #[arg(long, default_value_t = 1.0)]
    pub resample_threshold: f64,
    /// Horseshoe rejuvenation period in observations (0 disables).
    #[arg(long, default_value_t = 1)]
    pub rejuvenate_every: usize,
    #[arg(long, value_enum, default_value_t = PhiRefresh::Sample)]
    pub phi_refresh: PhiRefresh,
    #[arg(long, default_value_t = 1.0)]
    pub v0_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b0: f64,
}

impl FilterArgs {
    fn config(&self, n_particles: usize, n_experts: usize) -> FilterConfig {
        FilterConfig {
            n_particles,
            n_experts,
            prior: PriorConfig {
                m0: None,
                v0_scale: self.v0_scale,
                a0: self.a0,
                b0: self.b0,
            },
            resample: self.resample,
            phi_refresh: self.phi_refresh,
            rejuvenate_every: self.rejuvenate_every,
            resample_threshold: self.resample_threshold,
            store_paths: false,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long = "K")]
    pub n_experts: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// Report destination (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Allocation-frequency CSV (figure data).
    #[arg(long)]
    pub freq_csv: Option<PathBuf>,
    /// Write the final filter state as JSON for `score`.
    #[arg(long)]
    pub save_state: Option<PathBuf>,
    /// Include wall time in the report (makes it run-dependent).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate numbers of experts, comma separated.
    #[arg(long = "K", value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub particles: usize,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Filter state written by `fit --save-state`.
    #[arg(long)]
    pub state: PathBuf,
    /// Query covariates, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub x: Vec<f64>,
    /// Penalty on the standard deviation of each logit.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Add within-particle Gaussian uncertainty to the logit variance.
    #[arg(long)]
    pub within_particle: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Datasets

/// Parse a dataset CSV. Returns the data and, when a `z_true` column is
/// present, the zero-based true allocations.
pub fn parse_dataset_csv<R: std::io::Read>(reader: R) -> Result<(Dataset, Option<Vec<usize>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Parse {
            row: 1,
            column: "y".to_string(),
            message: "header has no `y` column".to_string(),
        })?;
    for (j, h) in headers[..y_col].iter().enumerate() {
        if *h != format!("x_{}", j + 1) {
            return Err(Error::Parse {
                row: 1,
                column: h.clone(),
                message: format!("expected header `x_{}`", j + 1),
            });
        }
    }
    let z_col = match &headers[y_col + 1..] {
        [] => None,
        [z] if z == "z_true" => Some(y_col + 1),
        [other, ..] => {
            return Err(Error::Parse {
                row: 1,
                column: other.clone(),
                message: "unexpected column after `y`".to_string(),
            })
        }
    };
    let d = y_col;

    let mut observations = Vec::new();
    let mut zs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = i + 2;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let field = |j: usize| -> Result<f64> {
            let raw = record[j].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        let x: Vec<f64> = (0..d).map(field).collect::<Result<_>>()?;
        let y = field(y_col)?;
        observations.push(Observation {
            x: DVector::from_vec(x),
            y,
        });
        if let Some(zc) = z_col {
            let raw = record[zc].trim();
            let z = raw
                .parse::<usize>()
                .ok()
                .filter(|z| *z >= 1)
                .ok_or_else(|| Error::Parse {
                    row,
                    column: "z_true".to_string(),
                    message: format!("`{raw}` is not a one-based expert number"),
                })?;
            zs.push(z - 1);
        }
    }
    Ok((Dataset::new(d, observations)?, z_col.map(|_| zs)))
}

pub fn read_dataset_csv(path: &Path) -> Result<(Dataset, Option<Vec<usize>>)> {
    parse_dataset_csv(fs::File::open(path)?)
}

/// Render a dataset as CSV; `z` is zero-based and written one-based.
pub fn dataset_csv(data: &Dataset, z: Option<&[usize]>) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=data.d).map(|j| format!("x_{j}")).collect();
    header.push("y".to_string());
    if z.is_some() {
        header.push("z_true".to_string());
    }
    wtr.write_record(&header)?;
    for (i, o) in data.observations.iter().enumerate() {
        let mut rec: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
        rec.push(o.y.to_string());
        if let Some(z) = z {
            rec.push((z[i] + 1).to_string());
        }
        wtr.write_record(&rec)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: FilterConfig,
    pub n_observations: usize,
    pub dimension: usize,
    pub log_ml: f64,
    pub allocation_frequencies: Vec<f64>,
    /// Frequencies of the `z_true` column, when the dataset has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical_allocation_frequencies: Option<Vec<f64>>,
    pub ess_trace: Vec<f64>,
    pub b_clamp_count: u64,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub x: Vec<f64>,
    pub alpha: f64,
    pub within_particle: bool,
    pub scores: Vec<f64>,
    /// One-based expert numbers, best first.
    pub top_k: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Filter state snapshot

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSnapshot {
    pub m: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickSnapshot {
    pub lambda_data: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub phi: Vec<f64>,
    pub prior_precision: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub experts: Vec<ExpertSnapshot>,
    pub sticks: Vec<StickSnapshot>,
    pub tau2: f64,
    pub xi: f64,
    pub lambda2: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub alloc_counts: Vec<u64>,
    pub last_z: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<u32>>,
    pub lineage: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSnapshot {
    pub format_version: u32,
    pub config: FilterConfig,
    pub d: usize,
    pub t: usize,
    pub log_ml: f64,
    pub ess_history: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub b_clamps: u64,
    pub particles: Vec<ParticleSnapshot>,
}

const SNAPSHOT_VERSION: u32 = 1;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Precondition(format!(
            "snapshot field `{what}` is not {nrows}x{ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Precondition(format!(
            "snapshot field `{what}` has length {}, expected {len}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl From<&FilterState> for FilterSnapshot {
    fn from(fs: &FilterState) -> Self {
        let particles = fs
            .particles
            .iter()
            .map(|p| ParticleSnapshot {
                experts: p
                    .experts
                    .iter()
                    .map(|e| ExpertSnapshot {
                        m: e.m.iter().copied().collect(),
                        p: rows(&e.p),
                        a: e.a,
                        b: e.b,
                    })
                    .collect(),
                sticks: p
                    .gate
                    .sticks
                    .iter()
                    .map(|s| StickSnapshot {
                        lambda_data: rows(&s.lambda_data),
                        h: s.h.iter().copied().collect(),
                        phi: s.phi.iter().copied().collect(),
                        prior_precision: s.prior_precision.iter().copied().collect(),
                    })
                    .collect(),
                tau2: p.gate.hs.tau2,
                xi: p.gate.hs.xi,
                lambda2: rows(&p.gate.hs.lambda2),
                nu: rows(&p.gate.hs.nu),
                alloc_counts: p.alloc_counts.clone(),
                last_z: p.last_z,
                path: p.path.clone(),
                lineage: p.lineage,
            })
            .collect();
        Self {
            format_version: SNAPSHOT_VERSION,
            config: fs.config.clone(),
            d: fs.d,
            t: fs.t,
            log_ml: fs.log_ml,
            ess_history: fs.ess_history.clone(),
            log_weights: fs.log_weights.clone(),
            b_clamps: fs.b_clamps,
            particles,
        }
    }
}

impl TryFrom<FilterSnapshot> for FilterState {
    type Error = Error;

    fn try_from(s: FilterSnapshot) -> Result<Self> {
        if s.format_version != SNAPSHOT_VERSION {
            return Err(Error::Precondition(format!(
                "unsupported snapshot version {}",
                s.format_version
            )));
        }
        s.config.validate()?;
        let (d, k) = (s.d, s.config.n_experts);
        if s.particles.len() != s.config.n_particles || s.log_weights.len() != s.particles.len() {
            return Err(Error::Precondition(
                "snapshot particle count mismatch".to_string(),
            ));
        }
        let particles = s
            .particles
            .into_iter()
            .map(|p| {
                if p.experts.len() != k || p.sticks.len() != k - 1 || p.alloc_counts.len() != k {
                    return Err(Error::Precondition(
                        "snapshot particle has the wrong number of experts".to_string(),
                    ));
                }
                let experts = p
                    .experts
                    .iter()
                    .map(|e| {
                        Ok(NIGStats {
                            m: vector(&e.m, d, "m")?,
                            p: matrix(&e.p, d, d, "p")?,
                            a: e.a,
                            b: e.b,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sticks = p
                    .sticks
                    .iter()
                    .map(|st| {
                        Ok(StickState {
                            lambda_data: matrix(&st.lambda_data, d, d, "lambda_data")?,
                            h: vector(&st.h, d, "h")?,
                            phi: vector(&st.phi, d, "phi")?,
                            prior_precision: vector(&st.prior_precision, d, "prior_precision")?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Particle {
                    experts,
                    gate: GateState {
                        sticks,
                        hs: HorseshoeState {
                            tau2: p.tau2,
                            xi: p.xi,
                            lambda2: matrix(&p.lambda2, k - 1, d, "lambda2")?,
                            nu: matrix(&p.nu, k - 1, d, "nu")?,
                        },
                    },
                    alloc_counts: p.alloc_counts,
                    last_z: p.last_z,
                    path: p.path,
                    lineage: p.lineage,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterState {
            config: s.config,
            d,
            particles,
            log_ml: s.log_ml,
            t: s.t,
            ess_history: s.ess_history,
            log_weights: s.log_weights,
            b_clamps: s.b_clamps,
        })
    }
}

pub fn save_state(fs: &FilterState, path: &Path) -> Result<()> {
    write_file(
        path,
        &(serde_json::to_string(&FilterSnapshot::from(fs))? + "\n"),
    )
}

pub fn load_state(path: &Path) -> Result<FilterState> {
    let snap: FilterSnapshot =
        serde_json::from_reader(std::io::BufReader::new(fs::File::open(path)?))?;
    snap.try_into()
}

// ---------------------------------------------------------------------------
// Commands

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(p) => write_file(p, contents),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() && !parent.is_dir() => {
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("output directory {} does not exist", parent.display()),
            )))
        }
        _ => Ok(()),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|f| format!("{f:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generator settings: benchmark preset defaults, overridden by explicit flags.
pub fn synth_config(args: &SimulateArgs) -> SynthConfig {
    let base = SynthConfig::table1(args.seed);
    SynthConfig {
        n_experts: args.n_experts.unwrap_or(base.n_experts),
        n_active: args
            .n_active
            .unwrap_or(base.n_active.min(args.n_experts.unwrap_or(base.n_experts))),
        n: args.n.unwrap_or(base.n),
        d: args.d.unwrap_or(base.d),
        b_inactive: args.b_inactive.unwrap_or(base.b_inactive),
        temperature: args.temperature.unwrap_or(base.temperature),
        sigma2: args.sigma2.unwrap_or(base.sigma2),
        seed: args.seed,
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if !args.output.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", args.output.display()),
        )));
    }
    let cfg = synth_config(args);
    let data = synthgen::generate(&cfg, &mut RngStream::new(cfg.seed, 0))?;
    let csv = dataset_csv(&data.dataset, Some(&data.z))?;
    let truth = serde_json::to_string_pretty(&data.truth)? + "\n";
    write_file(&args.output.join(DATA_FILE), &csv)?;
    write_file(&args.output.join(TRUTH_FILE), &truth)?;

    let freq = synthgen::empirical_allocation_frequencies(&data.z, cfg.n_experts)?;
    println!(
        "wrote {} observations (d = {}, K = {}) to {}",
        cfg.n,
        cfg.d,
        cfg.n_experts,
        args.output.display()
    );
    println!("empirical allocation frequencies: {}", fmt_vec(&freq));
    Ok(())
}

pub fn fit_config(args: &FitArgs) -> FilterConfig {
    let (k, n) = match args.preset {
        Some(Preset::Table1) => (10, 1000),
        None => (3, 1000),
    };
    args.filter
        .config(args.particles.unwrap_or(n), args.n_experts.unwrap_or(k))
}

/// Run `fit` and return the report and final state without writing files.
pub fn fit(args: &FitArgs) -> Result<(RunReport, FilterState)> {
    let (data, z) = read_dataset_csv(&args.data)?;
    let config = fit_config(args);
    let start = Instant::now();
    let fs = engine::run(&config, &data)?;
    let elapsed = start.elapsed().as_secs_f64();

    let allocation_frequencies = if fs.t > 0 {
        fs.allocation_frequencies()?
    } else {
        vec![0.0; config.n_experts]
    };
    let mut warnings = Vec::new();
    if fs.b_clamps > 0 {
        warnings.push(format!(
            "inverse-gamma scale b was clamped in {} expert updates",
            fs.b_clamps
        ));
    }
    let empirical = match &z {
        Some(z) if !z.is_empty() => {
            let k = config.n_experts.max(z.iter().max().map_or(0, |m| m + 1));
            Some(synthgen::empirical_allocation_frequencies(z, k)?)
        }
        _ => None,
    };
    let report = RunReport {
        config,
        n_observations: data.len(),
        dimension: data.d,
        log_ml: fs.log_ml,
        allocation_frequencies,
        empirical_allocation_frequencies: empirical,
        ess_trace: fs.ess_history.clone(),
        b_clamp_count: fs.b_clamps,
        warnings,
        wall_time_secs: args.timing.then_some(elapsed),
    };
    eprintln!(
        "fit: n = {}, K = {}, N = {}, log_ml = {:.6}, {:.2}s",
        report.n_observations,
        report.config.n_experts,
        report.config.n_particles,
        report.log_ml,
        elapsed
    );
    Ok((report, fs))
}

/// Figure data: one row per expert with the fitted frequency and, when
/// known, the generator's empirical frequency.
pub fn frequency_csv(report: &RunReport) -> String {
    let mut out = String::from("expert,fitted");
    if report.empirical_allocation_frequencies.is_some() {
        out.push_str(",empirical");
    }
    out.push('\n');
    for (k, f) in report.allocation_frequencies.iter().enumerate() {
        out.push_str(&format!("{},{}", k + 1, f));
        if let Some(e) = &report.empirical_allocation_frequencies {
            out.push_str(&format!(",{}", e.get(k).copied().unwrap_or(0.0)));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    for p in [&args.output, &args.freq_csv, &args.save_state]
        .into_iter()
        .flatten()
    {
        check_parent(p)?;
    }
    let (report, fs) = fit(args)?;
    if let Some(path) = &args.freq_csv {
        write_file(path, &frequency_csv(&report))?;
    }
    if let Some(path) = &args.save_state {
        save_state(&fs, path)?;
    }
    emit(
        args.output.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

pub fn selection_csv(rows: &[SelectionRow]) -> String {
    let mut out = String::from("K,log_ml,winner\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, r.log_ml, r.winner));
    }
    out
}

pub fn cmd_select(args: &SelectArgs) -> Result<()> {
    if let Some(p) = &args.output {
        check_parent(p)?;
    }
    let (data, _) = read_dataset_csv(&args.data)?;
    let base = args.filter.config(args.particles, 1);
    let rows = engine::select_k(&base, &args.ks, &data)?;
    let body = match args.format {
        TableFormat::Csv => selection_csv(&rows),
        TableFormat::Json => serde_json::to_string_pretty(&rows)? + "\n",
    };
    emit(args.output.as_deref(), &body)
}

pub fn score(args: &ScoreArgs) -> Result<ScoreReport> {
    let fs = load_state(&args.state)?;
    let x = DVector::from_vec(args.x.clone());
    let scores = fs.expert_scores(&x, args.alpha, args.within_particle)?;
    let top = engine::top_k(&scores, args.top_k)
        .into_iter()
        .map(|k| k + 1)
        .collect();
    Ok(ScoreReport {
        x: args.x.clone(),
        alpha: args.alpha,
        within_particle: args.within_particle,
        scores,
        top_k: top,
    })
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    if let Some(p) = &args.output {
        check_parent(p)?;
    }
    let report = score(args)?;
    emit(
        args.output.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Degenerate(_) => EXIT_DEGENERATE,
        _ => EXIT_USAGE,
    }
}

/// Dispatch a parsed command line inside a thread pool of the requested
/// size.
pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Score(a) => cmd_score(a),
    })
}
