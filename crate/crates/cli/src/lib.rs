//! Experiment runner: configuration, commands and exit-status mapping.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use bsde_core::approximation::{
    monotone_limit_experiment, uniform_limit_experiment, write_limit_csv, ApproximationLadder, SearchPlan,
};
use bsde_core::drivers::{
    verify_driver_properties, verify_terminal_properties, DriverSpec, SamplingPlan, TerminalFunctional, TerminalKind,
    YMonotonicity,
};
use bsde_core::duality::{
    dual_report, duality_gap_with_refinement, random_admissible_control, write_dual_csv, GAP_TOL, NUMERIC_GAP_TOL,
};
use bsde_core::picard::{picard_run, write_trace_csv, DEFAULT_MAX_P, DEFAULT_TOL};
use bsde_core::random_walk::{verify_walk_conditions, LatticeMode, PathLattice};
use bsde_core::report::Report;
use bsde_core::solver::{
    fmt_num, solve_backward_with, summary, terminal_values, write_solution_csv, SolverOptions, TerminalPath,
};
use bsde_core::BsdeError;
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROPERTY: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Duality,
    Picard,
    Converge,
    Approx,
    Verify,
}

#[derive(Debug, Parser)]
#[command(
    name = "bsde",
    version,
    about = "Backward stochastic difference equations on random-walk lattices"
)]
pub struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// Number of time steps N.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Walk dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Horizon T.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// full-path, recombining or auto.
    #[arg(long)]
    pub mode: Option<String>,
    /// Driver catalog name, e.g. quadratic or linear:1,1.
    #[arg(long)]
    pub driver: Option<String>,
    /// Terminal catalog name, e.g. endpoint or const:1.
    #[arg(long)]
    pub terminal: Option<String>,
    /// Tolerance of the command (implicit solve, Picard stop, duality gap).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap (implicit solve or Picard steps).
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Comma-separated step counts for converge.
    #[arg(long, value_delimiter = ',')]
    pub steps_list: Option<Vec<usize>>,
    /// Comma-separated approximation levels for approx.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Output directory for CSV and JSON exports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Samples per property for verify.
    #[arg(long)]
    pub samples: Option<usize>,
    /// walk or shifted: path seen by the terminal functional.
    #[arg(long)]
    pub terminal_path: Option<String>,
    /// JSON file with the same keys as the flags (flags win).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Flat configuration; every key has a flag twin.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub steps: usize,
    pub dim: usize,
    pub horizon: f64,
    pub mode: String,
    pub driver: String,
    pub terminal: String,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub steps_list: Vec<usize>,
    pub levels: Vec<f64>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub samples: usize,
    pub terminal_path: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: None,
            steps: 10,
            dim: 1,
            horizon: 1.0,
            mode: "auto".into(),
            driver: "quadratic".into(),
            terminal: "endpoint".into(),
            tol: None,
            max_iter: None,
            steps_list: vec![10, 20, 40, 80],
            levels: vec![1.0, 2.0, 4.0, 8.0],
            out: None,
            seed: 1,
            samples: 256,
            terminal_path: "walk".into(),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Core(BsdeError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(s) => write!(f, "input error: {s}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<BsdeError> for CliError {
    fn from(e: BsdeError) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(BsdeError::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Core(e) => match e {
                BsdeError::UnknownCatalog(_)
                | BsdeError::BudgetExceeded { .. }
                | BsdeError::StepSize { .. }
                | BsdeError::Domain(_)
                | BsdeError::Structural(_)
                | BsdeError::Precondition(_)
                | BsdeError::Io(_) => EXIT_INPUT,
                _ => EXIT_PROPERTY,
            },
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $( if let Some(v) = &cli.$field { cfg.$field = v.clone(); } )*
            };
        }
        take!(
            steps,
            dim,
            horizon,
            mode,
            driver,
            terminal,
            steps_list,
            levels,
            seed,
            samples,
            terminal_path
        );
        if cli.command.is_some() {
            cfg.command = cli.command;
        }
        if cli.tol.is_some() {
            cfg.tol = cli.tol;
        }
        if cli.max_iter.is_some() {
            cfg.max_iter = cli.max_iter;
        }
        if cli.out.is_some() {
            cfg.out = cli.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.command.is_none() {
            return Err(CliError::Input("no command given".into()));
        }
        if self.steps == 0 || self.dim == 0 {
            return Err(CliError::Input("steps and dim must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(CliError::Input(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                return Err(CliError::Input(format!("tol must be nonnegative, got {t}")));
            }
        }
        self.driver_spec()?;
        self.terminal_spec()?;
        self.terminal_path()?;
        Ok(())
    }

    pub fn driver_spec(&self) -> Result<DriverSpec, CliError> {
        Ok(DriverSpec::from_catalog(&self.driver)?)
    }

    pub fn terminal_spec(&self) -> Result<TerminalFunctional, CliError> {
        Ok(TerminalFunctional::from_catalog(&self.terminal)?)
    }

    pub fn terminal_path(&self) -> Result<TerminalPath, CliError> {
        Ok(self.terminal_path.parse()?)
    }

    /// `auto` picks the recombining lattice when nothing needs path history.
    pub fn lattice_mode(&self, f: &DriverSpec, phi: &TerminalFunctional) -> Result<LatticeMode, CliError> {
        if self.mode == "auto" {
            let markov = !f.is_path_dependent()
                && phi.kind() == TerminalKind::Endpoint
                && self.terminal_path()? == TerminalPath::Walk;
            return Ok(if markov {
                LatticeMode::Recombining
            } else {
                LatticeMode::FullPath
            });
        }
        self.mode
            .parse()
            .map_err(|_| CliError::Input(format!("unknown mode {:?}", self.mode)))
    }

    pub fn solver_options(&self) -> Result<SolverOptions, CliError> {
        let mut o = SolverOptions {
            terminal_path: self.terminal_path()?,
            ..SolverOptions::default()
        };
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iter {
            o.max_iter = m;
        }
        Ok(o)
    }

    fn lattice(&self, steps: usize, f: &DriverSpec, phi: &TerminalFunctional) -> Result<PathLattice, CliError> {
        let mode = self.lattice_mode(f, phi)?;
        Ok(PathLattice::build(steps, self.dim, self.horizon, mode)?)
    }
}

/// Result of a command: exit status and the one-line summary.
#[derive(Debug)]
pub struct Outcome {
    pub status: i32,
    pub summary: String,
}

fn status_of(report: &Report) -> i32 {
    if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_PROPERTY
    }
}

fn export<F>(cfg: &ExperimentConfig, name: &str, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join(name))?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn export_json<T: Serialize>(cfg: &ExperimentConfig, name: &str, value: &T) -> Result<(), CliError> {
    export(cfg, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        writeln!(w)
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let mut outcome = match cfg.command.expect("validated") {
        Command::Solve => run_solve(cfg)?,
        Command::Duality => run_duality(cfg)?,
        Command::Picard => run_picard(cfg)?,
        Command::Converge => run_converge(cfg)?,
        Command::Approx => run_approx(cfg)?,
        Command::Verify => run_verify(cfg)?,
    };
    outcome.summary = format!("{} runtime={:.3}s", outcome.summary, start.elapsed().as_secs_f64());
    Ok(outcome)
}

fn run_solve(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let lattice = cfg.lattice(cfg.steps, &f, &phi)?;
    let options = cfg.solver_options()?;
    let sol = solve_backward_with(&lattice, &f, &phi, &options)?;
    let xi = terminal_values(&lattice, &phi, options.terminal_path)?;
    let checks = sol.check_invariants(&f, &xi);
    let s = summary(&sol);
    export(cfg, "solution.csv", |w| write_solution_csv(&sol, w))?;
    export_json(cfg, "summary.json", &s)?;
    let mut text = format!(
        "Y_0={} sup|Z|={} max_residual={:.3e}",
        fmt_num(s.y0),
        fmt_num(s.sup_z),
        s.max_residual
    );
    for c in checks.failures() {
        text.push_str(&format!(" FAILED {}: {}", c.name, c.detail));
    }
    Ok(Outcome {
        status: status_of(&checks),
        summary: text,
    })
}

fn run_duality(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let mode = cfg.lattice_mode(&f, &phi)?;
    let options = cfg.solver_options()?;
    let attempts = duality_gap_with_refinement(cfg.steps, cfg.dim, cfg.horizon, mode, &f, &phi, &options, 4)?;
    export_json(cfg, "dual.json", &attempts)?;
    let last = attempts.last().expect("at least one attempt");
    let Some(report) = &last.report else {
        return Ok(Outcome {
            status: EXIT_PROPERTY,
            summary: format!(
                "no admissible optimizer after {} attempts: {}",
                attempts.len(),
                last.error.clone().unwrap_or_default()
            ),
        });
    };
    export(cfg, "dual.csv", |w| write_dual_csv(report, w))?;
    let tol = cfg.tol.unwrap_or(if f.has_analytic_conjugate() {
        GAP_TOL
    } else {
        NUMERIC_GAP_TOL
    });
    let lattice = PathLattice::build(last.steps, cfg.dim, cfg.horizon, mode)?;
    let sol = solve_backward_with(&lattice, &f, &phi, &options)?;
    let mut weak_min = f64::INFINITY;
    for k in 0..64 {
        let control = random_admissible_control(&lattice, cfg.seed.wrapping_add(k), 0.9)?;
        weak_min = weak_min.min(dual_report(&sol, &f, &control)?.min_gap);
    }
    let ok = report.max_gap <= tol && report.min_gap >= -GAP_TOL && weak_min >= -GAP_TOL;
    let refined = if attempts.len() > 1 {
        format!(
            " (optimizer inadmissible at N={}, re-run at N={})",
            attempts[0].steps, last.steps
        )
    } else {
        String::new()
    };
    Ok(Outcome {
        status: if ok { EXIT_OK } else { EXIT_PROPERTY },
        summary: format!(
            "Y_0={} dual={} max_gap={:.3e} margin={} weak_min_gap={:.3e}{refined}",
            fmt_num(report.root().primal),
            fmt_num(report.root().dual),
            report.max_gap,
            fmt_num(report.margin),
            weak_min
        ),
    })
}

fn run_picard(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let lattice = cfg.lattice(cfg.steps, &f, &phi)?;
    let solver = SolverOptions {
        tol: 1e-12,
        max_iter: 200,
        ..cfg.solver_options()?
    };
    let tol = cfg.tol.unwrap_or(DEFAULT_TOL);
    let max_p = cfg.max_iter.unwrap_or(DEFAULT_MAX_P);
    let run = picard_run(&lattice, &f, &phi, tol, max_p, &solver)?;
    export(cfg, "trace.csv", |w| write_trace_csv(&run.trace, w))?;
    let direct = solve_backward_with(&lattice, &f, &phi, &solver)?;
    let gap = run.state.y.sup_distance(&direct.y)?;
    let status = if run.converged { EXIT_OK } else { EXIT_PROPERTY };
    Ok(Outcome {
        status,
        summary: format!(
            "Y_0={} iterations={} converged={} sup|Y_picard - Y_direct|={:.3e}",
            fmt_num(run.state.y.scalar(0, 0)),
            run.trace.len(),
            run.converged,
            gap
        ),
    })
}

/// One row of the convergence table.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergeRow {
    pub steps: usize,
    pub y0: f64,
    /// `|Y_0^N - oracle|` when an oracle exists.
    pub error: Option<f64>,
    /// `|Y_0^N - Y_0^{N_prev}|`.
    pub successive: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergeTable {
    pub oracle: Option<f64>,
    pub oracle_kind: String,
    pub rows: Vec<ConvergeRow>,
    /// Least-squares slope of `-log(error)` against `log(N)`.
    pub fitted_order: Option<f64>,
}

fn parse_pair(spec: &str) -> Option<(f64, f64)> {
    let (a, b) = spec.strip_prefix("linear:")?.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Continuous-time value of `Y_0` when it is known in closed form.
pub fn closed_form_oracle(cfg: &ExperimentConfig) -> Option<(f64, String)> {
    let t = cfg.horizon;
    let term = cfg.terminal.trim();
    let constant_terminal = term.strip_prefix("const:").and_then(|c| c.trim().parse::<f64>().ok());
    let driver = cfg.driver.trim();
    let drift = if driver == "zero" {
        Some(0.0)
    } else {
        driver
            .strip_prefix("constant:")
            .and_then(|c| c.trim().parse::<f64>().ok())
    };
    if let Some(c) = drift {
        let mean = match term {
            "endpoint" | "clipped-endpoint" => Some(0.0),
            "digital" => Some(0.5),
            _ => constant_terminal,
        }?;
        return Some((mean + c * t, "martingale".into()));
    }
    if let (Some((a, b)), Some(c)) = (parse_pair(driver), constant_terminal) {
        if a >= 0.0 && c >= 0.0 {
            let v = if b == 0.0 {
                c + a * t
            } else {
                (c + a / b) * (b * t).exp() - a / b
            };
            return Some((v, "linear closed form".into()));
        }
    }
    None
}

pub fn converge_sweep(cfg: &ExperimentConfig) -> Result<ConvergeTable, CliError> {
    if cfg.steps_list.is_empty() || !cfg.steps_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::Input(format!(
            "steps-list must be strictly increasing and nonempty, got {:?}",
            cfg.steps_list
        )));
    }
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let options = cfg.solver_options()?;
    let oracle = closed_form_oracle(cfg);
    let mut rows: Vec<ConvergeRow> = Vec::new();
    for &n in &cfg.steps_list {
        let lattice = cfg.lattice(n, &f, &phi)?;
        let y0 = solve_backward_with(&lattice, &f, &phi, &options)?.y0();
        rows.push(ConvergeRow {
            steps: n,
            y0,
            error: oracle.as_ref().map(|(v, _)| (y0 - v).abs()),
            successive: rows.last().map(|r| (y0 - r.y0).abs()),
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let e = if oracle.is_some() { r.error } else { r.successive };
            e.filter(|v| *v > 0.0).map(|v| ((r.steps as f64).ln(), v.ln()))
        })
        .collect();
    let fitted_order = (points.len() >= 2).then(|| {
        let k = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
        let my = points.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        -sxy / sxx
    });
    Ok(ConvergeTable {
        oracle: oracle.as_ref().map(|o| o.0),
        oracle_kind: oracle.map_or_else(|| "successive differences".into(), |o| o.1),
        rows,
        fitted_order,
    })
}

pub fn write_converge_csv<W: Write>(table: &ConvergeTable, mut out: W) -> io::Result<()> {
    writeln!(out, "N,Y0,error,successive_diff")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.steps,
            fmt_num(r.y0),
            r.error.map(fmt_num).unwrap_or_default(),
            r.successive.map(fmt_num).unwrap_or_default()
        )?;
    }
    Ok(())
}

fn run_converge(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let table = converge_sweep(cfg)?;
    export(cfg, "converge.csv", |w| write_converge_csv(&table, w))?;
    export_json(cfg, "converge.json", &table)?;
    let mut out = io::stdout().lock();
    let _ = write_converge_csv(&table, &mut out);
    let last = table.rows.last().expect("nonempty");
    Ok(Outcome {
        status: EXIT_OK,
        summary: format!(
            "Y_0(N={})={} oracle={} order={}",
            last.steps,
            fmt_num(last.y0),
            table.oracle.map_or_else(|| table.oracle_kind.clone(), fmt_num),
            table.fitted_order.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
        ),
    })
}

fn run_approx(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let lattice = cfg.lattice(cfg.steps, &f, &phi)?;
    let options = cfg.solver_options()?;
    let plan = SearchPlan::default().with_lattice_paths(&lattice, options.terminal_path)?;
    let ladder = ApproximationLadder::monotone(&phi, &cfg.levels, &plan)?;
    let report = match f.y_monotonicity() {
        Some(YMonotonicity::Increasing | YMonotonicity::Independent) => {
            monotone_limit_experiment(&lattice, &f, &ladder, &options)?
        }
        _ => uniform_limit_experiment(&lattice, &f, &ladder, &options)?,
    };
    export(cfg, "approx.csv", |w| write_limit_csv(&report, w))?;
    export_json(cfg, "approx.json", &report)?;
    let mut text = format!("limit_estimate Y_0={}", fmt_num(report.limit_estimate));
    for c in report.checks.failures() {
        text.push_str(&format!(" FAILED {}: {}", c.name, c.detail));
    }
    Ok(Outcome {
        status: status_of(&report.checks),
        summary: text,
    })
}

#[derive(Serialize)]
struct VerifyOutput<'a> {
    driver: &'a Report,
    terminal: &'a Report,
    walk: &'a Report,
}

fn run_verify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (f, phi) = (cfg.driver_spec()?, cfg.terminal_spec()?);
    let plan = SamplingPlan {
        samples: cfg.samples,
        seed: cfg.seed,
        dim: cfg.dim,
        horizon: cfg.horizon,
        ..SamplingPlan::default()
    };
    let driver = verify_driver_properties(&f, &plan);
    let terminal = verify_terminal_properties(&phi, &plan);
    let lattice = cfg.lattice(cfg.steps, &f, &phi)?;
    let walk = verify_walk_conditions(&lattice).report;
    export_json(
        cfg,
        "verify.json",
        &VerifyOutput {
            driver: &driver,
            terminal: &terminal,
            walk: &walk,
        },
    )?;
    print!("{driver}{terminal}{walk}");
    let ok = driver.all_passed() && terminal.all_passed() && walk.all_passed();
    Ok(Outcome {
        status: if ok { EXIT_OK } else { EXIT_PROPERTY },
        summary: format!(
            "driver {} terminal {} walk {}",
            pass_word(&driver),
            pass_word(&terminal),
            pass_word(&walk)
        ),
    })
}

fn pass_word(r: &Report) -> &'static str {
    if r.all_passed() {
        "pass"
    } else {
        "FAIL"
    }
}

/// Parses arguments, runs, prints the summary; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = ExperimentConfig::resolve(&cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(o) => {
            println!("{}", o.summary);
            o.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
