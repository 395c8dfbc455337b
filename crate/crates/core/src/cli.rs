//! Batch front end: configuration, presets and CSV/JSON output.
//!
//! Configuration layers, later ones winning: command defaults, `--preset`,
//! `--manifest` (the `config` object of an earlier run), `--config`
//! (a `key = value` file), then flags. Every run writes `manifest.json`
//! echoing the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dynamics::{
    self, build_drift, diffusion_covariance, lyapunov_residual, mean_residual, Integrator, SimulationConfig,
};
use crate::error::{Error, Result};
use crate::junction;
use crate::lattice::{Geometry, LatticeDomain, Site};
use crate::model::{channel_tilt, ModelParams, QuadraticModel};
use crate::reservoirs::{self, estimate_lambda_star, MCEstimate, ReservoirConfig};
use crate::solver::{self, bond_currents, dense, section_current, GaussianSteadyState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_STATISTICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "glsteady", version, about = "Steady states of boundary-driven Ginzburg-Landau lattice models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stationary mean, currents and covariance samples.
    Solve(CommonArgs),
    /// Junction layer table: matched profile against the series.
    Junction(CommonArgs),
    /// Langevin simulation compared with the exact steady state.
    Simulate(CommonArgs),
    /// Monte Carlo estimate of the harmonic profile on the channel.
    Reservoir(CommonArgs),
    /// Scaling table of slopes, section currents and macroscopic errors.
    Fick(CommonArgs),
}

#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
pub struct CommonArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Replay the configuration stored in a manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub n: Option<i64>,
    #[arg(long)]
    pub m: Option<i64>,
    #[arg(long)]
    pub j: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any configuration key, e.g. `--set n_steps=100000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Darken,
    Channel,
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub preset: Option<String>,
    pub geometry: GeometryKind,
    pub n: i64,
    pub m: i64,
    pub j: f64,
    pub beta: f64,
    pub h: f64,
    pub lambda: f64,
    pub phi_bar_left: Option<f64>,
    pub phi_bar_right: Option<f64>,
    pub tol: f64,
    pub max_iters: Option<usize>,
    pub covariance_samples: usize,
    pub covariance_tol: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub integrator: Integrator,
    pub samples: u64,
    pub far_offset: Option<i64>,
    pub epsilon: f64,
    pub step_cap: u64,
    pub sweep: Vec<i64>,
    pub sweep_m: Option<i64>,
    pub n_max: usize,
    pub x1_min: i64,
    pub x1_max: i64,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn defaults(command: &str) -> Self {
        let mut c = RunConfig {
            command: command.to_string(),
            preset: None,
            geometry: GeometryKind::Darken,
            n: 8,
            m: 2,
            j: 1.0,
            beta: 1.0,
            h: -1.0,
            lambda: 0.5,
            phi_bar_left: None,
            phi_bar_right: None,
            tol: solver::DEFAULT_TOL,
            max_iters: None,
            covariance_samples: 5,
            covariance_tol: 1e-14,
            dt: 1e-3,
            n_steps: 2_000_000,
            burn_in: 500_000,
            thin: 1,
            integrator: Integrator::EulerMaruyama,
            samples: 20_000,
            far_offset: None,
            epsilon: reservoirs::DEFAULT_EPSILON,
            step_cap: reservoirs::DEFAULT_STEP_CAP,
            sweep: vec![4, 8, 16],
            sweep_m: Some(1),
            n_max: 60,
            x1_min: -10,
            x1_max: 10,
            seed: 20_240_601,
            out: PathBuf::from(format!("out/{command}")),
        };
        match command {
            "simulate" => {
                c.n = 1;
                c.lambda = 1.0;
            }
            "reservoir" => {
                c.geometry = GeometryKind::Channel;
                c.lambda = 1.0;
                c.h = 0.0;
            }
            "fick" => c.lambda = 1.0,
            _ => {}
        }
        c
    }

    /// Applies a named preset.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "uphill" => {
                self.geometry = GeometryKind::Darken;
                (self.n, self.j, self.beta, self.lambda, self.h) = (8, 1.0, 1.0, 0.5, -1.0);
            }
            "small" => {
                self.geometry = GeometryKind::Darken;
                (self.n, self.lambda, self.h) = (1, 1.0, -1.0);
                (self.dt, self.n_steps, self.burn_in) = (1e-3, 2_000_000, 500_000);
            }
            "quick" => {
                self.n_steps = 200_000;
                self.burn_in = 50_000;
                self.dt = 2e-3;
                self.samples = 2_000;
                self.sweep = vec![4, 8];
                self.covariance_samples = 2;
                if self.command != "simulate" && self.command != "reservoir" {
                    self.n = self.n.min(4);
                }
                if self.command == "reservoir" {
                    (self.n, self.m) = (4, 1);
                }
            }
            "equilibrium" => {
                self.lambda = 0.0;
                self.h = 0.0;
            }
            other => return Err(Error::Config(format!("unknown preset `{other}` (uphill, small, quick, equilibrium)"))),
        }
        self.preset = Some(name.to_string());
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            j: self.j,
            beta: self.beta,
            h: if self.geometry == GeometryKind::Channel { 0.0 } else { self.h },
            lambda: self.lambda,
            phi_bar_left: self.phi_bar_left,
            phi_bar_right: self.phi_bar_right,
        }
    }

    pub fn model(&self) -> Result<QuadraticModel> {
        match self.geometry {
            GeometryKind::Darken => QuadraticModel::darken(self.n, self.params()),
            GeometryKind::Channel => QuadraticModel::channel(self.n, self.m, self.params()),
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            dt: self.dt,
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            seed: self.seed,
            thin: self.thin,
            integrator: self.integrator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if self.n < 1 {
            return Err(Error::param("n", "must be >= 1"));
        }
        if !(self.tol > 0.0) || !(self.covariance_tol > 0.0) {
            return Err(Error::param("tol", "tolerances must be > 0"));
        }
        if self.sweep.iter().any(|&n| n < 1) {
            return Err(Error::param("sweep", "sweep sizes must be >= 1"));
        }
        if self.x1_min > self.x1_max {
            return Err(Error::param("x1_min", "must not exceed x1_max"));
        }
        match self.command.as_str() {
            "simulate" => {
                if self.geometry != GeometryKind::Darken {
                    return Err(Error::WrongGeometry { expected: "darken" });
                }
                self.simulation().validate()?;
            }
            "reservoir" => {
                if self.geometry != GeometryKind::Channel {
                    return Err(Error::WrongGeometry { expected: "channel" });
                }
                if self.samples == 0 {
                    return Err(Error::param("samples", "must be > 0"));
                }
            }
            "junction" => {
                if !(self.h < 0.0) {
                    return Err(Error::param("h", "junction layer needs h < 0"));
                }
                if self.n_max < 1 {
                    return Err(Error::param("n_max", "must be >= 1"));
                }
            }
            "fick" if self.geometry != GeometryKind::Darken => {
                return Err(Error::WrongGeometry { expected: "darken" });
            }
            _ => {}
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Values are read as
/// JSON when possible (numbers, booleans, `null`, arrays) and as strings
/// otherwise.
pub fn parse_key_values(text: &str) -> Result<Map<String, Value>> {
    let mut out = Map::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        out.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    Ok(out)
}

fn parse_value(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.trim_matches('"').to_string()))
}

fn merge(base: &mut Value, overrides: Map<String, Value>) {
    let obj = base.as_object_mut().expect("config serializes to an object");
    for (k, v) in overrides {
        obj.insert(k, v);
    }
}

/// Resolves the configuration for a command from all layers.
pub fn resolve(command: &str, args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command);
    if let Some(p) = &args.preset {
        cfg.apply_preset(p)?;
    }
    let mut value = serde_json::to_value(&cfg)?;
    if let Some(path) = &args.manifest {
        let text = fs::read_to_string(path)?;
        let manifest: Value = serde_json::from_str(&text)?;
        let Some(Value::Object(stored)) = manifest.get("config").cloned() else {
            return Err(Error::Config(format!("{} has no config object", path.display())));
        };
        if stored.get("command").and_then(Value::as_str) != Some(command) {
            return Err(Error::Config(format!("manifest was written by a different command than `{command}`")));
        }
        merge(&mut value, stored);
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        merge(&mut value, parse_key_values(&text)?);
    }
    let mut flags = Map::new();
    if let Some(v) = &args.out {
        flags.insert("out".into(), json!(v));
    }
    for (k, v) in [("n", args.n.map(|x| json!(x))), ("m", args.m.map(|x| json!(x)))] {
        if let Some(v) = v {
            flags.insert(k.into(), v);
        }
    }
    for (k, v) in [("j", args.j), ("beta", args.beta), ("h", args.h), ("lambda", args.lambda)] {
        if let Some(v) = v {
            flags.insert(k.into(), json!(v));
        }
    }
    if let Some(s) = args.seed {
        flags.insert("seed".into(), json!(s));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        flags.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    merge(&mut value, flags);
    if value.get("command").and_then(Value::as_str) != Some(command) {
        return Err(Error::Config("`command` cannot be overridden".into()));
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Files written by a command, relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub files: Vec<String>,
    pub summary: Value,
    pub warnings: Vec<String>,
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Csv { writer }
    }

    fn row(&mut self, cells: &[String]) {
        self.writer.write_record(cells).expect("in-memory write");
    }

    fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("ascii cells")
    }
}

fn write_file(out: &Path, name: &str, body: &str, files: &mut Vec<String>) -> Result<()> {
    fs::write(out.join(name), body)?;
    files.push(name.to_string());
    Ok(())
}

fn write_json(out: &Path, name: &str, v: &Value, files: &mut Vec<String>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_file(out, name, &s, files)
}

fn site_cells(s: Site) -> [String; 3] {
    [s.x1.to_string(), s.x2.to_string(), s.x3.to_string()]
}

fn warnings_for(domain: &LatticeDomain) -> Vec<String> {
    domain.scale_warning().into_iter().collect()
}

/// Evenly spaced sample positions in `lo..=hi`.
fn spaced(lo: i64, hi: i64, count: usize) -> Vec<i64> {
    if count == 0 || hi < lo {
        return Vec::new();
    }
    if count == 1 {
        return vec![(lo + hi).div_euclid(2)];
    }
    let mut v: Vec<i64> = (0..count)
        .map(|k| lo + ((hi - lo) as f64 * k as f64 / (count - 1) as f64).round() as i64)
        .collect();
    v.dedup();
    v
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<RunReport> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let model = cfg.model()?;
    let domain = model.domain();
    let state = GaussianSteadyState::solve_with(&model, cfg.tol, cfg.max_iters)?;
    let mut files = Vec::new();

    let mut profile = Csv::new(&["x1", "x2", "x3", "m", "tilt", "field"]);
    for (i, s) in domain.core_sites().enumerate() {
        let [a, b, c] = site_cells(s);
        profile.row(&[a, b, c, fmt_f(state.mean()[i]), fmt_f(model.tilt()[i]), fmt_f(model.field()[i])]);
    }
    write_file(out, "profile.csv", &profile.finish(), &mut files)?;

    let currents = bond_currents(&state);
    let mut cur = Csv::new(&["x1", "x2", "x3", "dx", "dy", "dz", "current"]);
    let mut max_tilt_err: f64 = 0.0;
    for c in &currents {
        let [a, b, cc] = site_cells(c.from);
        let d = c.direction();
        cur.row(&[a, b, cc, d[0].to_string(), d[1].to_string(), d[2].to_string(), fmt_f(c.value)]);
        let i = domain.index_of(c.from).unwrap();
        let k = domain.index_of(c.to).unwrap();
        max_tilt_err = max_tilt_err.max((c.value - (model.tilt()[i] - model.tilt()[k])).abs());
    }
    write_file(out, "currents.csv", &cur.finish(), &mut files)?;

    let (lo, hi) = domain.x1_range().unwrap();
    let mut cov = Csv::new(&["x1", "x2", "x3", "y1", "y2", "y3", "covariance"]);
    let mut max_row_sum: f64 = 0.0;
    for x1 in spaced(lo, hi, cfg.covariance_samples) {
        let x = domain.axis_site(x1);
        let row = state.covariance_row(x, cfg.covariance_tol)?;
        max_row_sum = max_row_sum.max(row.values().iter().sum());
        for y1 in lo..=hi {
            let y = domain.axis_site(y1);
            let [a, b, c] = site_cells(x);
            let [d, e, f] = site_cells(y);
            cov.row(&[a, b, c, d, e, f, fmt_f(row[domain.index_of(y).unwrap()])]);
        }
    }
    write_file(out, "covariance.csv", &cov.finish(), &mut files)?;

    let sections: Vec<f64> = (lo..hi)
        .map(|x1| section_current(&state, x1))
        .collect::<Result<_>>()?;
    let smin = sections.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sections.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let uphill = match domain.geometry() {
        Geometry::Darken { .. } => serde_json::to_value(solver::uphill_window(&state)?)?,
        _ => Value::Null,
    };
    let warnings = warnings_for(domain);
    let summary = json!({
        "geometry": domain.geometry(),
        "sites": domain.core_len(),
        "bonds": currents.len(),
        "iterations": state.iterations(),
        "max_solver_residual": state.residual(),
        "uphill_window": uphill,
        "fick_residual": solver::fick_residual(&state)?,
        "max_current_tilt_error": max_tilt_err,
        "section_current_min": smin,
        "section_current_max": smax,
        "covariance_max_row_sum": max_row_sum,
        "covariance_row_sum_bound": 1.0 / (2.0 * cfg.beta),
        "warnings": warnings,
    });
    write_json(out, "summary.json", &summary, &mut files)?;
    Ok(RunReport { files, summary, warnings })
}

pub fn cmd_junction(cfg: &RunConfig) -> Result<RunReport> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let layer = junction::junction_profile(cfg.j, cfg.h)?;
    let mut files = Vec::new();
    let mut csv = Csv::new(&["x1", "m_matched", "m_series", "gamma"]);
    let mut max_diff: f64 = 0.0;
    let mut max_reflection: f64 = 0.0;
    for x1 in cfg.x1_min..=cfg.x1_max {
        let m = layer.value(x1);
        let s = junction::junction_series_oracle(cfg.j, cfg.h, x1, cfg.n_max)?;
        max_diff = max_diff.max((m - s).abs());
        max_reflection = max_reflection.max((m + layer.value(-1 - x1) + cfg.h.abs()).abs());
        csv.row(&[x1.to_string(), fmt_f(m), fmt_f(s), fmt_f(layer.gamma)]);
    }
    write_file(out, "junction.csv", &csv.finish(), &mut files)?;
    let summary = json!({
        "J": cfg.j,
        "h": cfg.h,
        "gamma": layer.gamma,
        "cosh_gamma": junction::cosh_gamma(cfg.j),
        "m0": layer.m0,
        "m0_in_bounds": layer.m0 > cfg.h / 2.0 && layer.m0 < 0.0,
        "left_amplitude": layer.left_amp,
        "n_max": cfg.n_max,
        "series_truncation_bound": junction::series_truncation_bound(cfg.j, cfg.h, cfg.n_max),
        "max_matched_series_difference": max_diff,
        "max_reflection_error": max_reflection,
        "diffusion_coefficient": junction::diffusion_coefficient(),
    });
    write_json(out, "summary.json", &summary, &mut files)?;
    Ok(RunReport {
        files,
        summary,
        warnings: Vec::new(),
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<RunReport> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let model = cfg.model()?;
    let domain = model.domain();
    let state = GaussianSteadyState::solve(&model, cfg.tol.min(1e-13))?;
    let trace = dynamics::simulate(&model, &cfg.simulation())?;
    let mut files = Vec::new();

    let mut sites = Csv::new(&["x1", "x2", "x3", "mean", "stderr", "variance", "exact_mean", "z"]);
    let mut max_site_z: f64 = 0.0;
    for (i, &s) in trace.sites.iter().enumerate() {
        let exact = state.mean()[i];
        let z = (trace.site_mean[i] - exact) / trace.site_stderr[i];
        max_site_z = max_site_z.max(z.abs());
        let [a, b, c] = site_cells(s);
        sites.row(&[
            a,
            b,
            c,
            fmt_f(trace.site_mean[i]),
            fmt_f(trace.site_stderr[i]),
            fmt_f(trace.site_variance[i]),
            fmt_f(exact),
            fmt_f(z),
        ]);
    }
    write_file(out, "trace_sites.csv", &sites.finish(), &mut files)?;

    let mut bonds = Csv::new(&["x1", "x2", "x3", "dx", "dy", "dz", "current", "stderr", "exact_current", "z"]);
    let mut within = 0usize;
    for (k, &(x, y)) in trace.bonds.iter().enumerate() {
        let exact = state.current(x, y)?.value;
        let z = (trace.bond_current[k] - exact) / trace.bond_stderr[k];
        if z.abs() < 3.0 {
            within += 1;
        }
        let [a, b, c] = site_cells(x);
        let d = x.offset_to(y);
        bonds.row(&[
            a,
            b,
            c,
            d[0].to_string(),
            d[1].to_string(),
            d[2].to_string(),
            fmt_f(trace.bond_current[k]),
            fmt_f(trace.bond_stderr[k]),
            fmt_f(exact),
            fmt_f(z),
        ]);
    }
    write_file(out, "trace_bonds.csv", &bonds.finish(), &mut files)?;

    let (lyap, lyap_gibbs, mean_res) = if domain.core_len() <= dense::MAX_SITES {
        let drift = build_drift(&model)?;
        let c = dense::covariance(model.form(), cfg.beta)?;
        let s = diffusion_covariance(model.form(), cfg.beta)?;
        (
            json!(lyapunov_residual(&drift, &c, cfg.beta)),
            json!(lyapunov_residual(&drift, &s, cfg.beta)),
            json!(mean_residual(&drift, state.mean().values())),
        )
    } else {
        (Value::Null, Value::Null, Value::Null)
    };
    let summary = json!({
        "sites": domain.core_len(),
        "bonds": trace.bonds.len(),
        "samples": trace.samples,
        "steps": trace.steps,
        "dt": cfg.dt,
        "lyapunov_residual": lyap,
        "lyapunov_residual_gibbs_covariance": lyap_gibbs,
        "mean_equation_residual": mean_res,
        "max_site_abs_z": max_site_z,
        "bond_fraction_abs_z_below_3": within as f64 / trace.bonds.len() as f64,
    });
    write_json(out, "summary.json", &summary, &mut files)?;
    Ok(RunReport {
        files,
        summary,
        warnings: Vec::new(),
    })
}

fn reservoir_cfg(cfg: &RunConfig, m: i64, seed: u64) -> ReservoirConfig {
    ReservoirConfig {
        far_offset: cfg.far_offset.unwrap_or_else(|| reservoirs::default_far_offset(m, cfg.epsilon)),
        n_samples: cfg.samples,
        seed,
        step_cap: cfg.step_cap,
    }
}

/// On-axis estimates for `|x1| < N` and the largest deviation from the
/// linear tilt.
struct AxisScan {
    estimates: Vec<(i64, MCEstimate)>,
    worst: f64,
    worst_stderr: f64,
    worst_x1: i64,
}

fn scan_axis(domain: &LatticeDomain, lambda: f64, rc: &ReservoirConfig, x1s: impl Iterator<Item = i64>) -> Result<AxisScan> {
    let n = domain.n().unwrap();
    let mut scan = AxisScan {
        estimates: Vec::new(),
        worst: 0.0,
        worst_stderr: 0.0,
        worst_x1: 0,
    };
    for x1 in x1s {
        let e = estimate_lambda_star(domain, domain.axis_site(x1), lambda, rc)?;
        if x1.abs() < n {
            let dev = (e.value - channel_tilt(n, lambda, x1)).abs();
            if dev > scan.worst {
                (scan.worst, scan.worst_stderr, scan.worst_x1) = (dev, e.stderr, x1);
            }
        }
        scan.estimates.push((x1, e));
    }
    Ok(scan)
}

fn sweep_seed(seed: u64, n: i64) -> u64 {
    seed.wrapping_add((n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn cmd_reservoir(cfg: &RunConfig) -> Result<RunReport> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let domain = LatticeDomain::channel(cfg.n, cfg.m)?;
    let n = cfg.n;
    let rc = reservoir_cfg(cfg, cfg.m, cfg.seed);
    let reach = n + rc.far_offset;
    let scan = scan_axis(&domain, cfg.lambda, &rc, -reach..=reach)?;
    let mut files = Vec::new();
    let mut csv = Csv::new(&["x1", "x2", "x3", "estimate", "stderr", "n_samples", "capped", "tilt", "far_offset"]);
    let mut all_valid = true;
    for &(x1, e) in &scan.estimates {
        all_valid &= e.is_valid();
        let tilt = if x1.abs() < n {
            fmt_f(channel_tilt(n, cfg.lambda, x1))
        } else {
            String::new()
        };
        let [a, b, c] = site_cells(domain.axis_site(x1));
        csv.row(&[
            a,
            b,
            c,
            fmt_f(e.value),
            fmt_f(e.stderr),
            e.n_samples.to_string(),
            e.capped.to_string(),
            tilt,
            rc.far_offset.to_string(),
        ]);
    }
    write_file(out, "lambda_star.csv", &csv.finish(), &mut files)?;

    let get = |x1: i64| scan.estimates.iter().find(|(k, _)| *k == x1).map(|(_, e)| *e).unwrap();
    let center = get(0);
    let mut max_anti_z: f64 = 0.0;
    for x1 in 1..n {
        let (a, b) = (get(x1), get(-x1));
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        if se > 0.0 {
            max_anti_z = max_anti_z.max((a.value + b.value).abs() / se);
        }
    }
    // Per-site current scaled by N, positive toward increasing x1.
    let drops: Vec<f64> = (-(n - 1)..(n - 1))
        .map(|x1| n as f64 * (get(x1).value - get(x1 + 1).value))
        .collect();
    let n_current = drops.iter().sum::<f64>() / drops.len().max(1) as f64;
    let n_current_se = if n > 1 {
        // Telescoping mean: only the two end estimates contribute.
        let (a, b) = (get(-(n - 1)), get(n - 1));
        n as f64 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() / drops.len() as f64
    } else {
        0.0
    };

    let mut sweep_rows = Vec::new();
    if !cfg.sweep.is_empty() {
        let mut sw = Csv::new(&["n", "m", "far_offset", "max_tilt_deviation", "stderr", "argmax_x1", "capped", "valid"]);
        for &sn in &cfg.sweep {
            let sm = cfg.sweep_m.unwrap_or_else(|| ((sn as f64).powf(0.4).floor() as i64).max(1));
            let sd = LatticeDomain::channel(sn, sm)?;
            let src = reservoir_cfg(cfg, sm, sweep_seed(cfg.seed, sn));
            let s = scan_axis(&sd, cfg.lambda, &src, -(sn - 1)..=(sn - 1))?;
            let capped: u64 = s.estimates.iter().map(|(_, e)| e.capped).sum();
            let valid = s.estimates.iter().all(|(_, e)| e.is_valid());
            all_valid &= valid;
            sw.row(&[
                sn.to_string(),
                sm.to_string(),
                src.far_offset.to_string(),
                fmt_f(s.worst),
                fmt_f(s.worst_stderr),
                s.worst_x1.to_string(),
                capped.to_string(),
                valid.to_string(),
            ]);
            sweep_rows.push((sn, sm, s.worst, s.worst_stderr));
        }
        write_file(out, "sweep.csv", &sw.finish(), &mut files)?;
    }
    let trend = sweep_rows
        .windows(2)
        .all(|w| w[1].2 <= w[0].2 + 3.0 * (w[0].3.powi(2) + w[1].3.powi(2)).sqrt());

    let warnings = warnings_for(&domain);
    let summary = json!({
        "n": n,
        "m": cfg.m,
        "lambda": cfg.lambda,
        "far_offset": rc.far_offset,
        "samples_per_site": cfg.samples,
        "center_estimate": center.value,
        "center_stderr": center.stderr,
        "antisymmetry_max_abs_z": max_anti_z,
        "max_tilt_deviation": scan.worst,
        "max_tilt_deviation_stderr": scan.worst_stderr,
        "n_scaled_current": n_current,
        "n_scaled_current_stderr": n_current_se,
        "sweep": sweep_rows.iter().map(|r| json!({"n": r.0, "m": r.1, "max_tilt_deviation": r.2, "stderr": r.3})).collect::<Vec<_>>(),
        "sweep_non_increasing": trend,
        "valid": all_valid,
        "warnings": warnings,
    });
    write_json(out, "summary.json", &summary, &mut files)?;
    if !all_valid {
        return Err(Error::TooManyCapped {
            capped: scan.estimates.iter().map(|(_, e)| e.capped).sum(),
            total: scan.estimates.iter().map(|(_, e)| e.capped + e.n_samples).sum(),
        });
    }
    Ok(RunReport { files, summary, warnings })
}

/// One row of the scaling table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FickRow {
    pub n: i64,
    pub window_lo: i64,
    pub window_hi: i64,
    pub bulk_slope: f64,
    pub n_slope: f64,
    pub n_slope_error: f64,
    pub section_current_spread: f64,
    pub n_site_current: f64,
    pub macro_error: f64,
    pub fick_residual: f64,
}

/// Scaling diagnostics for a darken model of size `n`.
pub fn fick_row(n: i64, params: ModelParams, tol: f64) -> Result<FickRow> {
    let model = QuadraticModel::darken(n, params)?;
    let state = GaussianSteadyState::solve(&model, tol)?;
    let d = model.domain();
    let gap = (n as f64).ln().ceil() as i64;
    let (mut lo, mut hi) = (gap + 1, 2 * n - 2 - gap);
    if lo >= hi {
        (lo, hi) = (1, 2 * n - 2);
    }
    if lo >= hi {
        (lo, hi) = (0, 2 * n - 1);
    }
    let slope = (state.mean_at(d.axis_site(hi))? - state.mean_at(d.axis_site(lo))?) / (hi - lo) as f64;
    let sections: Vec<f64> = (-2 * n..2 * n - 1)
        .map(|x1| section_current(&state, x1))
        .collect::<Result<_>>()?;
    let smin = sections.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sections.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let per_site = sections[0] / (4 * n * n) as f64;
    let marks = [-2 * n, 0, 2 * n - 1];
    let mut macro_err: f64 = 0.0;
    for x1 in -2 * n..2 * n {
        if x1 == 0 || marks.iter().any(|&m| ((x1 - m) as f64).abs() <= (n as f64).ln()) {
            continue;
        }
        let r = x1 as f64 / n as f64;
        let target = junction::macroscopic_profile(r, params.lambda, params.h)?;
        macro_err = macro_err.max((state.mean_at(d.axis_site(x1))? - target).abs());
    }
    Ok(FickRow {
        n,
        window_lo: lo,
        window_hi: hi,
        bulk_slope: slope,
        n_slope: n as f64 * slope,
        n_slope_error: (n as f64 * slope - junction::macroscopic_slope(params.lambda)).abs(),
        section_current_spread: smax - smin,
        n_site_current: n as f64 * per_site,
        macro_error: macro_err,
        fick_residual: solver::fick_residual(&state)?,
    })
}

pub fn cmd_fick(cfg: &RunConfig) -> Result<RunReport> {
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut csv = Csv::new(&[
        "n",
        "window_lo",
        "window_hi",
        "bulk_slope",
        "n_slope",
        "target_slope",
        "n_slope_error",
        "section_current_spread",
        "n_site_current",
        "macro_error",
        "fick_residual",
    ]);
    let mut rows = Vec::new();
    for &n in &cfg.sweep {
        let r = fick_row(n, cfg.params(), cfg.tol)?;
        csv.row(&[
            r.n.to_string(),
            r.window_lo.to_string(),
            r.window_hi.to_string(),
            fmt_f(r.bulk_slope),
            fmt_f(r.n_slope),
            fmt_f(junction::macroscopic_slope(cfg.lambda)),
            fmt_f(r.n_slope_error),
            fmt_f(r.section_current_spread),
            fmt_f(r.n_site_current),
            fmt_f(r.macro_error),
            fmt_f(r.fick_residual),
        ]);
        rows.push(r);
    }
    write_file(out, "fick.csv", &csv.finish(), &mut files)?;
    let decreasing = |f: fn(&FickRow) -> f64| rows.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let summary = json!({
        "lambda": cfg.lambda,
        "h": cfg.h,
        "target_slope": junction::macroscopic_slope(cfg.lambda),
        "target_current": junction::macroscopic_current(cfg.lambda),
        "diffusion_coefficient": junction::diffusion_coefficient(),
        "rows": rows,
        "n_slope_error_decreasing": decreasing(|r| r.n_slope_error),
        "macro_error_decreasing": decreasing(|r| r.macro_error),
        "max_section_current_spread": rows.iter().map(|r| r.section_current_spread).fold(0.0, f64::max),
    });
    write_json(out, "summary.json", &summary, &mut files)?;
    Ok(RunReport {
        files,
        summary,
        warnings: Vec::new(),
    })
}

pub fn write_manifest(cfg: &RunConfig, report: &RunReport) -> Result<()> {
    let mut files = report.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "outputs": files,
        "warnings": report.warnings,
    });
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    fs::write(cfg.out.join("manifest.json"), s)?;
    Ok(())
}

pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    let report = match cfg.command.as_str() {
        "solve" => cmd_solve(cfg),
        "junction" => cmd_junction(cfg),
        "simulate" => cmd_simulate(cfg),
        "reservoir" => cmd_reservoir(cfg),
        "fick" => cmd_fick(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    };
    match report {
        Ok(r) => {
            write_manifest(cfg, &r)?;
            Ok(r)
        }
        Err(e @ Error::TooManyCapped { .. }) => {
            write_manifest(cfg, &RunReport::default())?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. }
        | Error::Config(_)
        | Error::WrongGeometry { .. }
        | Error::DomainMismatch { .. }
        | Error::NotInCore(_)
        | Error::NotInDomain(_)
        | Error::NotABond(..)
        | Error::Json(_) => EXIT_CONFIG,
        Error::TooManyCapped { .. } => EXIT_STATISTICAL,
        Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Parses arguments and runs a command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Junction(a) => ("junction", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Reservoir(a) => ("reservoir", a),
        Command::Fick(a) => ("fick", a),
    };
    let cfg = match resolve(name, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let run = || execute(&cfg);
    let result = match args.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
        },
        None => run(),
    };
    match result {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let mut line = String::new();
            let _ = write!(line, "{name}: wrote");
            for f in &report.files {
                let _ = write!(line, " {f}");
            }
            println!("{line} manifest.json to {}", cfg.out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_parsing() {
        let m = parse_key_values("# comment\nn = 4\nlambda=0.25 # trailing\nsweep = [4, 8]\ngeometry = channel\n").unwrap();
        assert_eq!(m["n"], json!(4));
        assert_eq!(m["lambda"], json!(0.25));
        assert_eq!(m["sweep"], json!([4, 8]));
        assert_eq!(m["geometry"], json!("channel"));
        assert!(parse_key_values("no equals sign").is_err());
    }

    #[test]
    fn flags_override_file_and_preset() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "n = 3\nlambda = 0.7\nh = -0.5\n").unwrap();
        let args = CommonArgs {
            config: Some(file),
            preset: Some("uphill".into()),
            lambda: Some(0.9),
            set: vec!["tol=1e-11".into()],
            ..Default::default()
        };
        let c = resolve("solve", &args).unwrap();
        assert_eq!((c.n, c.lambda, c.h, c.tol), (3, 0.9, -0.5, 1e-11));
        assert_eq!(c.preset.as_deref(), Some("uphill"));
    }

    #[test]
    fn bad_config_is_rejected() {
        let unknown = CommonArgs {
            set: vec!["bogus=1".into()],
            ..Default::default()
        };
        assert!(matches!(resolve("solve", &unknown), Err(Error::Config(_))));
        let bad = CommonArgs {
            j: Some(-1.0),
            ..Default::default()
        };
        assert_eq!(exit_code(&resolve("solve", &bad).unwrap_err()), EXIT_CONFIG);
        let preset = CommonArgs {
            preset: Some("nope".into()),
            ..Default::default()
        };
        assert!(resolve("solve", &preset).is_err());
        let geometry = CommonArgs {
            set: vec!["geometry=darken".into()],
            ..Default::default()
        };
        assert!(resolve("reservoir", &geometry).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NotConverged { iterations: 1, residual: 1.0 }), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::TooManyCapped { capped: 5, total: 10 }), EXIT_STATISTICAL);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
    }

    #[test]
    fn spaced_positions() {
        assert_eq!(spaced(-4, 3, 3), vec![-4, 0, 3]);
        assert_eq!(spaced(0, 1, 5), vec![0, 1]);
        assert!(spaced(0, 5, 0).is_empty());
    }

    #[test]
    fn fick_rows_trend() {
        let p = ModelParams::new(1.0, 1.0, -1.0, 1.0);
        let rows: Vec<FickRow> = [4, 8, 16].iter().map(|&n| fick_row(n, p, 1e-12).unwrap()).collect();
        for w in rows.windows(2) {
            assert!(w[1].n_slope_error < w[0].n_slope_error);
        }
        for r in &rows {
            assert!(r.section_current_spread < 1e-10 * (4 * r.n * r.n) as f64);
        }
        let zero = fick_row(4, ModelParams::new(1.0, 1.0, -1.0, 0.0), 1e-12).unwrap();
        assert!(zero.n_site_current.abs() < 1e-10);
    }
}
