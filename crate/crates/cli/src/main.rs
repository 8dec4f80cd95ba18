//! Command-line front end: solve SPD systems with per-column error bounds,
//! run the verification suite, and reproduce the benchmark experiments as
//! CSV convergence histories.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockcg::bounds::BoundSeries;
use blockcg::cg::{solve, SigmaPolicy, SolveOutput, SolveStatus, SolverConfig, Variant};
use blockcg::io::{dense_reference_solve, parse_matrix_market, poisson2d, random_rhs, DENSE_LIMIT};
use blockcg::lanczos::{lanczos_init, lanczos_step, shift_is_below_ritz, LanczosOutcome};
use blockcg::verify::{inverse_lemma_sweep, render_csv, render_table, run_suite, DeskRun};
use blockcg::{BlockVector, SparseSpd};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_OK: u8 = 0;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_SOLVER_ERROR: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_IO: u8 = 74;

#[derive(Parser)]
#[command(
    name = "blockcg",
    version,
    about = "Block conjugate gradient solvers for SPD systems with multiple right-hand sides,\n\
             with per-column A-norm error bounds from block Gauss and Gauss-Radau quadrature"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve AX = B and emit per-iteration, per-column error bounds as CSV
    Solve(SolveArgs),
    /// Run the dual-route verification checks on a desk-scale problem
    Verify(VerifyArgs),
    /// Re-run a benchmark experiment (poisson, bcsstk01, bus662, nos7)
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Bcg,
    Olbcg,
    Drbcg,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Bcg => Variant::Standard,
            VariantArg::Olbcg => Variant::OLeary,
            VariantArg::Drbcg => Variant::DubrulleR,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SigmaArg {
    /// Sigma_k = I (reproduces the standard variant exactly)
    Identity,
    /// Sigma_k = inverse R factor of a QR of the new direction block
    Qr,
}

impl From<SigmaArg> for SigmaPolicy {
    fn from(s: SigmaArg) -> SigmaPolicy {
        match s {
            SigmaArg::Identity => SigmaPolicy::Identity,
            SigmaArg::Qr => SigmaPolicy::InverseRFactor,
        }
    }
}

#[derive(Args)]
struct ProblemArgs {
    /// Matrix Market file holding the SPD matrix
    #[arg(long, value_name = "PATH.mtx", conflicts_with = "poisson")]
    matrix: Option<PathBuf>,
    /// Generate the unscaled 5-point Poisson matrix on a k-by-k grid
    #[arg(long, value_name = "K")]
    poisson: Option<usize>,
    /// Number of right-hand sides (block size); defaults to 1 for solve and
    /// 2 for verify
    #[arg(long)]
    m: Option<usize>,
    /// Seed for the uniform [-1, 1) right-hand sides (SplitMix64)
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Positive underestimate of the smallest eigenvalue (enables upper bounds)
    #[arg(long)]
    mu: Option<f64>,
    /// Choose mu by bisection on the Lanczos Ritz values. Certifies
    /// mu < smallest Ritz value only, never mu < lambda_min itself.
    #[arg(long, conflicts_with = "mu")]
    mu_auto: bool,
    /// Delay d >= 1: bounds for iterate k-1 are reported at iteration k-1+d
    #[arg(long, default_value_t = 1)]
    delay: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Bcg)]
    variant: VariantArg,
    #[arg(long, value_enum, default_value_t = SigmaArg::Identity)]
    sigma: SigmaArg,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Stop tolerance on the estimated relative A-norm error
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "PATH.csv")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Solver iterations for the archival run
    #[arg(long, default_value_t = 7)]
    steps: usize,
    /// Shift for the Gauss-Radau checks; default is half the smallest
    /// eigenvalue found by the dense eigensolver
    #[arg(long)]
    mu: Option<f64>,
    /// Skip reorthogonalization: report-only mode, always exits 0
    #[arg(long)]
    no_reorth: bool,
    /// Run a single check by name (e.g. inverse-lemma, gauss-identity)
    #[arg(long, value_name = "NAME")]
    check: Option<String>,
    /// Seed count for the randomized inverse-lemma sweep
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    /// Also write the report as CSV here
    #[arg(long, value_name = "PATH.csv")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Poisson,
    Bcsstk01,
    Bus662,
    Nos7,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Which experiment to run
    #[arg(value_enum)]
    experiment: Experiment,
    /// Matrix Market file for the three external experiments
    #[arg(long, value_name = "PATH.mtx")]
    path: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Write the CSV here (a gnuplot companion script is written next to it)
    #[arg(long, value_name = "PATH.csv")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.cmd {
        Cmd::Solve(args) => cmd_solve(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Reproduce(args) => cmd_reproduce(args),
    };
    ExitCode::from(code)
}

fn load_matrix(problem: &ProblemArgs) -> Result<SparseSpd, (u8, String)> {
    match (&problem.matrix, problem.poisson) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .map_err(|e| (EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
            parse_matrix_market(&text)
                .map_err(|e| (EXIT_IO, format!("cannot parse {}: {e}", path.display())))
        }
        (None, Some(k)) => {
            if k == 0 {
                return Err((EXIT_USAGE, "--poisson needs k >= 1".into()));
            }
            Ok(poisson2d(k))
        }
        (None, None) => Err((
            EXIT_USAGE,
            "one of --matrix or --poisson is required".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap forbids this combination"),
    }
}

fn build_rhs(
    a: &SparseSpd,
    problem: &ProblemArgs,
    default_m: usize,
) -> Result<BlockVector, (u8, String)> {
    let m = problem.m.unwrap_or(default_m);
    if m == 0 || m > a.n() {
        return Err((
            EXIT_USAGE,
            format!("--m must be in 1..={} for this matrix", a.n()),
        ));
    }
    random_rhs(a.n(), m, problem.seed).map_err(|e| {
        (
            EXIT_SOLVER_ERROR,
            format!("right-hand side generation failed: {e}"),
        )
    })
}

/// Bisection on the shifted block factorization: returns the largest probed
/// shift certified to lie below every Ritz value of the Lanczos matrix.
fn mu_auto_probe(a: &SparseSpd, b: &BlockVector) -> Result<f64, String> {
    let mut st = lanczos_init(a, b).map_err(|e| e.to_string())?;
    let cap = a.n().div_ceil(b.m()).min(25);
    for _ in 0..cap {
        match lanczos_step(&mut st, a, false).map_err(|e| e.to_string())? {
            LanczosOutcome::Advanced => {}
            LanczosOutcome::Terminated(_) => break,
        }
    }
    let t = st.blocks();
    // Gershgorin upper bound from the dense expansion
    let dense = t.to_dense();
    let mut hi = 0.0_f64;
    for i in 0..dense.rows() {
        let mut row = 0.0;
        for j in 0..dense.cols() {
            row += dense.get(i, j).abs();
        }
        hi = hi.max(row);
    }
    let mut lo = 0.0_f64;
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if shift_is_below_ritz(t, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err("bisection found no positive certified shift".into());
    }
    Ok(lo)
}

/// Full-precision CSV of the bound series:
/// iter,col,true_err,gauss_lb,radau_ub,gauss_valid,radau_valid
fn bounds_csv(bounds: &BoundSeries, true_err: Option<&Vec<Vec<f64>>>, has_mu: bool) -> String {
    let mut out = String::from("iter,col,true_err,gauss_lb,radau_ub,gauss_valid,radau_valid\n");
    for p in &bounds.points {
        let truth = match true_err {
            Some(series) => format!("{:.16e}", series[p.iteration][p.column].sqrt()),
            None => String::new(),
        };
        let (ub, ub_valid) = if has_mu {
            (
                p.radau_upper
                    .map(|u| format!("{u:.16e}"))
                    .unwrap_or_default(),
                format!("{}", u8::from(p.radau_valid)),
            )
        } else {
            (String::new(), String::new())
        };
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{},{},{}",
            p.iteration,
            p.column,
            truth,
            p.gauss_lower,
            ub,
            u8::from(p.gauss_valid),
            ub_valid,
        );
    }
    out
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), (u8, String)> {
    match path {
        Some(p) => fs::write(p, content)
            .map_err(|e| (EXIT_IO, format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .map_err(|e| (EXIT_IO, format!("cannot write to stdout: {e}")))
        }
    }
}

/// Squared per-column A-norm errors for each archived iterate, when a dense
/// reference solve is feasible.
fn truth_series(a: &SparseSpd, b: &BlockVector, out: &SolveOutput) -> Option<Vec<Vec<f64>>> {
    let arch = out.archive.as_ref()?;
    let x_true = dense_reference_solve(a, b).ok()?;
    Some(
        arch.x
            .iter()
            .map(|xk| {
                blockcg::bounds::true_error_matrix(a, &x_true, xk)
                    .expect("dimensions agree")
                    .diag()
            })
            .collect(),
    )
}

fn summarize(out: &SolveOutput, config_echo: &str) {
    eprintln!("# {config_echo}");
    let status = match &out.status {
        SolveStatus::Converged => "converged".to_string(),
        SolveStatus::MaxIterReached => "max-iterations".to_string(),
        SolveStatus::Stagnated => "stagnated (attainable accuracy)".to_string(),
        SolveStatus::Failed(e) => format!("failed: {e}"),
    };
    eprintln!(
        "# status={status} iterations={} stagnation_flag={}",
        out.iterations,
        out.stagnation
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into())
    );
    if let Some(last) = out.bounds.last_iteration() {
        let mut line = format!("# bounds at iterate {last}:");
        for p in out.bounds.for_iteration(last) {
            let _ = write!(line, " col{}={:.3e}", p.column, p.gauss_lower);
            if let Some(u) = p.radau_upper {
                let _ = write!(line, "..{u:.3e}");
            }
        }
        eprintln!("{line}");
    }
}

fn status_code(status: &SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged | SolveStatus::Stagnated => EXIT_OK,
        SolveStatus::MaxIterReached => EXIT_MAX_ITER,
        SolveStatus::Failed(_) => EXIT_SOLVER_ERROR,
    }
}

fn cmd_solve(args: SolveArgs) -> u8 {
    let (a, b) = match load_matrix(&args.problem).and_then(|a| {
        let b = build_rhs(&a, &args.problem, 1)?;
        Ok((a, b))
    }) {
        Ok(pair) => pair,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let mu = if args.mu_auto {
        match mu_auto_probe(&a, &b) {
            Ok(mu) => {
                eprintln!(
                    "# mu-auto: {mu:.9e} (certified below the smallest Ritz value only; \
                     validity as an underestimate of lambda_min is not guaranteed)"
                );
                Some(mu)
            }
            Err(msg) => {
                eprintln!("error: mu-auto failed: {msg}");
                return EXIT_SOLVER_ERROR;
            }
        }
    } else {
        args.mu
    };
    let config = SolverConfig {
        variant: args.variant.into(),
        max_iter: args.max_iter,
        stop_tol: args.tol,
        mu,
        delay: args.delay,
        sigma_policy: args.sigma.into(),
        archive: a.n() <= DENSE_LIMIT,
    };
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    let out = match solve(&a, &b, None, &config) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    let truth = truth_series(&a, &b, &out);
    let csv = bounds_csv(&out.bounds, truth.as_ref(), mu.is_some());
    if let Err((code, msg)) = write_output(args.out.as_deref(), &csv) {
        eprintln!("error: {msg}");
        return code;
    }
    let echo = format!(
        "blockcg solve n={} m={} seed={} variant={:?} mu={:?} delay={} tol={:.1e} max_iter={}",
        a.n(),
        b.m(),
        args.problem.seed,
        config.variant,
        mu,
        config.delay,
        config.stop_tol,
        config.max_iter
    );
    summarize(&out, &echo);
    status_code(&out.status)
}

fn cmd_verify(args: VerifyArgs) -> u8 {
    // The lemma sweep needs no problem; run it standalone when selected.
    if args.check.as_deref() == Some("inverse-lemma") {
        let report = match inverse_lemma_sweep(3, args.seeds) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_SOLVER_ERROR;
            }
        };
        let reports = vec![report];
        print!("{}", render_table(&reports));
        if let Some(path) = &args.out {
            if let Err((code, msg)) = write_output(Some(path), &render_csv(&reports)) {
                eprintln!("error: {msg}");
                return code;
            }
        }
        return if reports[0].pass { EXIT_OK } else { 1 };
    }

    let problem = if args.problem.matrix.is_none() && args.problem.poisson.is_none() {
        // default desk problem: Poisson 4x4 with a block of 2
        ProblemArgs {
            matrix: None,
            poisson: Some(4),
            m: args.problem.m,
            seed: args.problem.seed,
        }
    } else {
        args.problem
    };
    let (a, b) = match load_matrix(&problem).and_then(|a| {
        let b = build_rhs(&a, &problem, 2)?;
        Ok((a, b))
    }) {
        Ok(pair) => pair,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    let mu = match args.mu {
        Some(mu) => mu,
        None => match blockcg::dense::jacobi_eigen(&a.to_dense()) {
            Ok((vals, _)) => 0.5 * vals[0],
            Err(e) => {
                eprintln!("error: cannot pick a default mu: {e}");
                return EXIT_SOLVER_ERROR;
            }
        },
    };
    let run = match DeskRun::prepare(&a, &b, args.steps, mu, !args.no_reorth) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    let mut reports = match run_suite(&run) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    if let Some(name) = &args.check {
        reports.retain(|r| &r.name == name);
        if reports.is_empty() {
            eprintln!("error: no check named {name}");
            return EXIT_USAGE;
        }
    }
    print!("{}", render_table(&reports));
    if let Some(path) = &args.out {
        if let Err((code, msg)) = write_output(Some(path), &render_csv(&reports)) {
            eprintln!("error: {msg}");
            return code;
        }
    }
    if args.no_reorth {
        eprintln!("# report-only mode (no reorthogonalization): exit 0 regardless of outcomes");
        return EXIT_OK;
    }
    if reports.iter().all(|r| r.pass) {
        EXIT_OK
    } else {
        1
    }
}

struct ExperimentPreset {
    name: &'static str,
    m: usize,
    mu: f64,
    max_iter: usize,
    external: bool,
}

fn preset(e: Experiment) -> ExperimentPreset {
    match e {
        Experiment::Poisson => ExperimentPreset {
            name: "poisson",
            m: 10,
            mu: 0.0205,
            max_iter: 250,
            external: false,
        },
        Experiment::Bcsstk01 => ExperimentPreset {
            name: "bcsstk01",
            m: 5,
            mu: 3417.267,
            max_iter: 80,
            external: true,
        },
        Experiment::Bus662 => ExperimentPreset {
            name: "bus662",
            m: 5,
            mu: 5e-3,
            max_iter: 500,
            external: true,
        },
        Experiment::Nos7 => ExperimentPreset {
            name: "nos7",
            m: 10,
            mu: 4.1540e-3,
            max_iter: 500,
            external: true,
        },
    }
}

/// gnuplot companion plotting the column-1 error and both bounds.
fn gnuplot_script(csv_name: &str) -> String {
    format!(
        "# companion plot for {csv_name}\n\
         set datafile separator ','\n\
         set logscale y\n\
         set xlabel 'iteration'\n\
         set ylabel 'A-norm error, column 1'\n\
         set key left bottom\n\
         plot '{csv_name}' every ::1 using 1:($2==0 ? $3 : 1/0) with lines lw 2 title 'error', \\\n\
         \x20    '' every ::1 using 1:($2==0 ? $4 : 1/0) with lines dashtype 2 title 'Gauss lower', \\\n\
         \x20    '' every ::1 using 1:($2==0 ? $5 : 1/0) with lines dashtype 4 title 'Gauss-Radau upper'\n"
    )
}

fn cmd_reproduce(args: ReproduceArgs) -> u8 {
    let preset = preset(args.experiment);
    let a = if preset.external {
        let Some(path) = &args.path else {
            eprintln!(
                "error: missing matrix file for {}: pass --path <file.mtx> \
                 (available from the SuiteSparse collection)",
                preset.name
            );
            return EXIT_IO;
        };
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return EXIT_IO;
            }
        };
        match parse_matrix_market(&text) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("error: cannot parse {}: {e}", path.display());
                return EXIT_IO;
            }
        }
    } else {
        poisson2d(30)
    };
    let b = match random_rhs(a.n(), preset.m, args.seed) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    let config = SolverConfig {
        variant: Variant::Standard,
        max_iter: args.max_iter.unwrap_or(preset.max_iter),
        stop_tol: 1e-13,
        mu: Some(preset.mu),
        delay: 1,
        archive: a.n() <= DENSE_LIMIT,
        ..SolverConfig::default()
    };
    let out = match solve(&a, &b, None, &config) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER_ERROR;
        }
    };
    let truth = truth_series(&a, &b, &out);
    let csv = bounds_csv(&out.bounds, truth.as_ref(), true);
    if let Err((code, msg)) = write_output(args.out.as_deref(), &csv) {
        eprintln!("error: {msg}");
        return code;
    }
    if let Some(out_path) = &args.out {
        let gp = out_path.with_extension("gp");
        let csv_name = out_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "bounds.csv".into());
        if let Err(e) = fs::write(&gp, gnuplot_script(&csv_name)) {
            eprintln!("error: cannot write {}: {e}", gp.display());
            return EXIT_IO;
        }
        eprintln!("# gnuplot script: {}", gp.display());
    }
    let echo = format!(
        "blockcg reproduce {} n={} m={} seed={} mu={:.6e} delay=1",
        preset.name,
        a.n(),
        preset.m,
        args.seed,
        preset.mu
    );
    summarize(&out, &echo);

    // The bcsstk01 experiment contrasts BCG with scalar CG on column 1.
    if args.experiment == Experiment::Bcsstk01 {
        if let Some(truth) = &truth {
            let flag = out.stagnation.unwrap_or(out.iterations);
            let level = (truth[flag.min(out.iterations)][0] / truth[0][0]).sqrt();
            let b1 = b.column(0);
            let cg_cfg = SolverConfig {
                max_iter: 400,
                stop_tol: 0.0,
                archive: true,
                ..SolverConfig::default()
            };
            if let Ok(cg_out) = solve(&a, &b1, None, &cg_cfg) {
                if let Some(cg_truth) = truth_series(&a, &b1, &cg_out) {
                    let cg_iters = cg_truth
                        .iter()
                        .position(|e| (e[0] / cg_truth[0][0]).sqrt() <= level)
                        .map(|i| i.to_string())
                        .unwrap_or_else(|| format!(">{}", cg_out.iterations));
                    eprintln!(
                        "# contrast: BCG flagged stagnation at iteration {flag}; \
                         scalar CG on column 1 needs {cg_iters} iterations to reach \
                         the same relative A-norm error ({level:.3e})"
                    );
                }
            }
        }
    }
    status_code(&out.status)
}
