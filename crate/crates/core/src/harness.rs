//! Experiment configuration, dispatch and report emission.
//!
//! Every experiment writes its CSV artifacts plus `summary.json` (checks with
//! measured values) and `manifest.json` (config, its SHA-256, library version)
//! into the output directory.

pub mod acceptance;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coefficients::{riccati_residual, CoefficientTable, ModelParams};
use crate::cost_eval::cost_report;
use crate::decoupling_field::{psi_bound, ViscousField, MIN_FIELD_SIGMA0};
use crate::error::{invalid, Error, Result};
use crate::fields::EntropyField;
use crate::mfg_sim::{
    classify, drift_envelope_excess, selection_stats, simulate_ensemble, tau_epsilon, tau_epsilon_index,
    tau_gamma_escape, TransitionPoint,
};
use crate::nplayer_sim::{
    nplayer_selection_stats, simulate_exact_picard, sup_gap_vs_aggregate, AggregateModel, PicardConfig,
};
use crate::rng::{self, Domain};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable read when no thread count is given explicitly.
pub const THREADS_ENV: &str = "MFG_SELECT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Coeffs,
    Field,
    Mfg,
    Nplayer,
    Cost,
    Verify,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Coeffs => "coeffs",
            ExperimentKind::Field => "field",
            ExperimentKind::Mfg => "mfg",
            ExperimentKind::Nplayer => "nplayer",
            ExperimentKind::Cost => "cost",
            ExperimentKind::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub dt: f64,
    pub kind: ExperimentKind,
    pub seed: u64,
    /// A directory, or a `.csv` file whose parent receives the JSON reports.
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub sigma0_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub runs: usize,
    pub tolerance: f64,
    /// p in L(σ₀) = |ln σ₀|^p.
    pub l_exponent: f64,
    /// γ of the escape envelope; c_δ/2 when absent.
    pub gamma: Option<f64>,
    pub exact: bool,
    pub picard: PicardConfig,
    /// Lattice points per axis for `field`.
    pub lattice: usize,
    /// Monte Carlo paths for `cost`; 0 skips the simulation.
    pub mc_paths: usize,
    pub suite: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::canonical(),
            dt: 1e-3,
            kind: ExperimentKind::Verify,
            seed: 20240601,
            out: PathBuf::from("out"),
            threads: None,
            sigma0_list: vec![0.2, 0.1, 0.05],
            n_list: vec![64, 256, 1024],
            paths: 2000,
            runs: 500,
            tolerance: 0.15,
            l_exponent: crate::mfg_sim::L_EXPONENT,
            gamma: None,
            exact: false,
            picard: PicardConfig::default(),
            lattice: 21,
            mc_paths: 100_000,
            suite: "acceptance".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("bad config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt < self.params.horizon) {
            return invalid(format!("dt must lie in (0, T), got {}", self.dt));
        }
        if !(self.tolerance > 0.0) {
            return invalid("tolerance must be positive");
        }
        if !(self.l_exponent > 0.0) {
            return invalid("l_exponent must be positive");
        }
        if self.threads == Some(0) {
            return invalid("threads must be at least 1");
        }
        match self.kind {
            ExperimentKind::Field | ExperimentKind::Mfg => {
                if self.sigma0_list.is_empty() {
                    return invalid("sigma0_list is empty");
                }
                if let Some(s) = self.sigma0_list.iter().find(|&&s| !(s >= MIN_FIELD_SIGMA0)) {
                    return invalid(format!("sigma0 = {s} is below the field floor {MIN_FIELD_SIGMA0}"));
                }
                if self.kind == ExperimentKind::Field && self.lattice < 2 {
                    return invalid("lattice needs at least 2 points");
                }
                if self.kind == ExperimentKind::Mfg && self.paths == 0 {
                    return invalid("paths must be positive");
                }
            }
            ExperimentKind::Nplayer => {
                if self.n_list.is_empty() || self.runs == 0 {
                    return invalid("n_list and runs must be non-empty");
                }
                if self.exact {
                    for &n in &self.n_list {
                        self.picard.validate(n)?;
                    }
                }
            }
            ExperimentKind::Cost => {
                if self.mc_paths != 0 && self.mc_paths < 100 {
                    return invalid("mc_paths must be 0 or at least 100");
                }
            }
            ExperimentKind::Verify => {
                if self.suite != "acceptance" {
                    return invalid(format!("unknown suite '{}'", self.suite));
                }
            }
            ExperimentKind::Coeffs => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn table(&self) -> Result<Arc<CoefficientTable>> {
        Ok(Arc::new(CoefficientTable::from_params(&self.params, self.dt)?))
    }

    fn out_dir(&self) -> PathBuf {
        if self.out.extension().is_some_and(|e| e == "csv") {
            self.out.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            self.out.clone()
        }
    }

    /// Where the main CSV of this run goes.
    fn csv_path(&self, default_name: &str) -> PathBuf {
        if self.out.extension().is_some_and(|e| e == "csv") {
            self.out.clone()
        } else {
            self.out.join(default_name)
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread count from the flag, else from the environment.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => invalid(format!("{THREADS_ENV} must be a positive integer, got '{v}'")),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: Value,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, measured: Value, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, measured, detail: detail.into(), seconds: 0.0 }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.1}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub kind: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<PathBuf>,
    pub values: Value,
}

impl Summary {
    /// 0 when every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

/// Exit code for a failed run: 2 for bad configuration, 1 for numerical failure.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) => 2,
        Error::Numeric(_) => 1,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::Invalid(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Numeric(format!("write failed: {e}"))
}

/// Validates, runs the experiment, and writes artifacts, summary and manifest.
pub fn run(config: &ExperimentConfig) -> Result<Summary> {
    config.validate()?;
    let mut summary = match config.kind {
        ExperimentKind::Coeffs => run_coeffs(config)?,
        ExperimentKind::Field => run_field(config)?,
        ExperimentKind::Mfg => run_mfg(config)?,
        ExperimentKind::Nplayer => run_nplayer(config)?,
        ExperimentKind::Cost => run_cost(config)?,
        ExperimentKind::Verify => run_verify(config)?,
    };
    summary.passed = summary.checks.iter().all(|c| c.passed);
    let dir = config.out_dir();
    let summary_path = dir.join("summary.json");
    let manifest_path = dir.join("manifest.json");
    let mut w = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Error::Numeric(e.to_string()))?;
    w.flush().map_err(io_err)?;
    let manifest = json!({
        "library": "mfg-select",
        "version": VERSION,
        "kind": config.kind.name(),
        "seed": config.seed,
        "config_sha256": config.hash(),
        "config": config,
        "artifacts": summary.artifacts,
    });
    let mut w = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::Numeric(e.to_string()))?;
    w.flush().map_err(io_err)?;
    Ok(summary)
}

fn summary(kind: ExperimentKind, checks: Vec<CheckResult>, artifacts: Vec<PathBuf>, values: Value) -> Summary {
    Summary { kind: kind.name().into(), passed: false, checks, artifacts, values }
}

fn run_coeffs(config: &ExperimentConfig) -> Result<Summary> {
    let table = config.table()?;
    let path = config.csv_path("coefficients.csv");
    let mut w = create(&path)?;
    table.write_csv(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)?;
    let n = table.grid().steps();
    let identity = (0..=n).map(|i| (table.k[i] + table.r[i] - table.r0()).abs()).fold(0.0, f64::max);
    let residual = riccati_residual(&table.eta, table.kappa(), table.grid().step());
    let checks = vec![
        CheckResult::new("terminal values", table.eta[n] == 1.0 && table.w[n] == 1.0, json!([table.eta[n], table.w[n]]), "eta_T = w_T = 1"),
        CheckResult::new("clock identity", identity <= 1e-10, json!(identity), format!("max |k + r - k_T| = {identity:.2e}")),
        CheckResult::new("riccati residual", residual <= 1e-8, json!(residual), format!("max residual {residual:.2e}")),
    ];
    let values = json!({ "k_T": table.k_horizon(), "r_delta": table.r_delta, "c_delta": table.c_delta() });
    Ok(summary(config.kind, checks, vec![path], values))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run_field(config: &ExperimentConfig) -> Result<Summary> {
    let table = config.table()?;
    let entropy = EntropyField::new(table.clone());
    let horizon = table.horizon();
    let half = 1.5 * table.r0();
    let m = config.lattice - 1;
    let mut artifacts = Vec::new();
    let mut checks = Vec::new();
    for &sigma0 in &config.sigma0_list {
        let field = ViscousField::new(table.clone(), sigma0)?;
        let name = format!("field_sigma0_{sigma0}.csv");
        let path = if config.sigma0_list.len() == 1 { config.csv_path(&name) } else { config.out_dir().join(&name) };
        let mut w = create(&path)?;
        writeln!(w, "t,x,theta_sigma,theta,psi,bound").map_err(io_err)?;
        let (mut max_abs, mut odd_err, mut bound_ok) = (0.0_f64, 0.0_f64, true);
        for i in 0..=m {
            let t = horizon * i as f64 / (m + 1) as f64;
            for j in 0..=m {
                let x = -half + 2.0 * half * j as f64 / m as f64;
                let th = field.eval(t, x);
                let en = entropy.eval(t, x);
                let bound = psi_bound(&table, t, x, sigma0).ok();
                if let Some(b) = bound {
                    bound_ok &= (th - en).abs() <= b + 1e-6;
                }
                max_abs = max_abs.max(th.abs());
                odd_err = odd_err.max((field.eval(t, -x) + th).abs());
                writeln!(w, "{t},{x},{th},{en},{},{}", th - en, fmt_opt(bound)).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;
        artifacts.push(path);
        checks.push(CheckResult::new(format!("bounded by one (sigma0={sigma0})"), max_abs <= 1.0 + 1e-12, json!(max_abs), ""));
        checks.push(CheckResult::new(format!("odd (sigma0={sigma0})"), odd_err <= 1e-10, json!(odd_err), ""));
        checks.push(CheckResult::new(format!("psi bound (sigma0={sigma0})"), bound_ok, json!(bound_ok), ""));
    }
    Ok(summary(config.kind, checks, artifacts, Value::Null))
}

fn escape_gamma(config: &ExperimentConfig, table: &CoefficientTable) -> f64 {
    config.gamma.unwrap_or(0.5 * table.c_delta())
}

fn run_mfg(config: &ExperimentConfig) -> Result<Summary> {
    let table = config.table()?;
    let gamma = escape_gamma(config, &table);
    let mut artifacts = Vec::new();
    let mut checks = Vec::new();
    let mut values = Vec::new();
    for &sigma0 in &config.sigma0_list {
        let field = ViscousField::new(table.clone(), sigma0)?;
        let ensemble = simulate_ensemble(&field, config.paths, config.seed)?;
        let tp = TransitionPoint::new(sigma0, config.l_exponent)?;
        let name = format!("mfg_sigma0_{sigma0}.csv");
        let path = if config.sigma0_list.len() == 1 { config.csv_path(&name) } else { config.out_dir().join(&name) };
        let mut w = create(&path)?;
        writeln!(w, "path_id,terminal,class,tau_eps,tau_escape").map_err(io_err)?;
        let mut envelope = f64::NEG_INFINITY;
        for p in &ensemble.paths {
            let v = &p.values;
            let class = classify(v, &table, config.tolerance);
            let tau = tau_epsilon(v, &table, tp.epsilon0);
            let side = tau_epsilon_index(v, tp.epsilon0).map(|i| v[i].signum()).unwrap_or(1.0);
            let escape = tau_gamma_escape(v, &table, gamma, &tp, side)?;
            envelope = envelope.max(drift_envelope_excess(p, &table, sigma0));
            writeln!(w, "{},{},{},{tau},{escape}", p.index, v[v.len() - 1], class.label()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        artifacts.push(path);
        let report = selection_stats(&ensemble, config.tolerance)?;
        checks.push(CheckResult::new(
            format!("drift envelope (sigma0={sigma0})"),
            envelope <= 1e-12,
            json!(envelope),
            format!("max excess {envelope:.2e}"),
        ));
        values.push(json!({
            "sigma0": sigma0,
            "frac_plus": report.frac_plus,
            "frac_minus": report.frac_minus,
            "frac_unclassified": report.frac_unclassified,
            "hitting_time_quantiles": report.hitting_time_quantiles,
        }));
    }
    Ok(summary(config.kind, checks, artifacts, Value::Array(values)))
}

fn run_nplayer(config: &ExperimentConfig) -> Result<Summary> {
    let table = config.table()?;
    let sigma = config.params.sigma;
    let mut artifacts = Vec::new();
    let mut values = Vec::new();
    for &n in &config.n_list {
        let name = format!("nplayer_n{n}.csv");
        let path = if config.n_list.len() == 1 { config.csv_path(&name) } else { config.out_dir().join(&name) };
        let mut w = create(&path)?;
        writeln!(w, "run_id,terminal_mean,class,picard_iters,converged,sup_gap_vs_aggregate").map_err(io_err)?;
        if config.exact {
            let model = AggregateModel::new(table.clone(), sigma, n)?;
            let batch = config.picard.scenarios;
            let mut run_id = 0;
            let mut converged = 0;
            let mut batches = 0;
            while run_id < config.runs {
                let seed = rng::derive_key(config.seed, Domain::Particles, batches as u64);
                let sol = simulate_exact_picard(table.clone(), sigma, n, seed, &config.picard)?;
                batches += 1;
                converged += sol.converged as usize;
                for s in 0..batch.min(config.runs - run_id) {
                    let mean = sol.mean_path(s);
                    let class = classify(&mean, &table, config.tolerance);
                    let gap = sup_gap_vs_aggregate(&sol, &model, s)?;
                    writeln!(
                        w,
                        "{run_id},{},{},{},{},{gap}",
                        mean[mean.len() - 1],
                        class.label(),
                        sol.iterations,
                        sol.converged
                    )
                    .map_err(io_err)?;
                    run_id += 1;
                }
            }
            values.push(json!({ "n": n, "batches": batches, "converged_batches": converged }));
        } else {
            let (report, paths) = nplayer_selection_stats(table.clone(), sigma, n, config.runs, config.tolerance, config.seed)?;
            for p in &paths {
                let class = classify(&p.mu_hat, &table, config.tolerance);
                writeln!(w, "{},{},{},,,", p.run, p.mu_hat[p.mu_hat.len() - 1], class.label()).map_err(io_err)?;
            }
            values.push(json!({
                "n": n,
                "frac_plus": report.frac_plus,
                "frac_minus": report.frac_minus,
                "frac_unclassified": report.frac_unclassified,
            }));
        }
        w.flush().map_err(io_err)?;
        artifacts.push(path);
    }
    Ok(summary(config.kind, Vec::new(), artifacts, Value::Array(values)))
}

fn run_cost(config: &ExperimentConfig) -> Result<Summary> {
    let table = config.table()?;
    let report = cost_report(&config.params, &table, config.mc_paths, config.seed)?;
    let path = config.csv_path("cost.csv");
    let mut w = create(&path)?;
    writeln!(w, "A,J_closed,J_mc,se").map_err(io_err)?;
    let mut checks = vec![
        CheckResult::new("J_plus equals J_minus", report.j_plus == report.j_minus, json!([report.j_plus, report.j_minus]), ""),
        CheckResult::new("J_zero is minimal", report.j_zero < report.j_plus, json!([report.j_zero, report.j_plus]), ""),
    ];
    for a in [-1.0, 0.0, 1.0] {
        let closed = report.closed_form(a);
        match report.mc_estimates.iter().find(|e| e.a == a) {
            Some(e) => {
                writeln!(w, "{a},{closed},{},{}", e.estimate, e.standard_error).map_err(io_err)?;
                let z = (e.estimate - closed).abs() / e.standard_error;
                checks.push(CheckResult::new(format!("MC within 3 SE (A={a})"), z <= 3.0, json!(z), format!("{z:.2} SE")));
            }
            None => writeln!(w, "{a},{closed},,").map_err(io_err)?,
        }
    }
    w.flush().map_err(io_err)?;
    Ok(summary(config.kind, checks, vec![path], Value::Null))
}

fn run_verify(config: &ExperimentConfig) -> Result<Summary> {
    let checks = acceptance::run_all(&config.params, config.dt, config.seed, |c| eprintln!("{}", c.line()))?;
    let path = config.csv_path("acceptance.csv");
    let mut w = create(&path)?;
    writeln!(w, "criterion,passed").map_err(io_err)?;
    for c in &checks {
        writeln!(w, "\"{}\",{}", c.name.replace('"', "'"), c.passed).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(summary(config.kind, checks, vec![path], Value::Null))
}

/// Runs `f` and stores its wall time in the result.
pub fn timed(f: impl FnOnce() -> Result<CheckResult>) -> Result<CheckResult> {
    let start = Instant::now();
    let mut c = f()?;
    c.seconds = start.elapsed().as_secs_f64();
    Ok(c)
}

/// Applies `f` to 0..n in parallel, keeping index order.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}
