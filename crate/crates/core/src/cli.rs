//! Command-line front end. Every command reads an experiment config, writes
//! its artifacts atomically under the output directory and maps failures to
//! the exit-code contract:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 1 | I/O failure |
//! | 2 | bad config or arguments |
//! | 3 | domain error (singular point, infeasible geometry) |
//! | 4 | unstable limit or failed critical point search |
//! | 5 | reduced system infeasible |
//! | 6 | nonconvergence |

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::ansatz::{Ansatz, BubbleParams};
use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::fieldfile::{write_atomic, FieldFile};
use crate::functionals::{d_of_q, find_critical_point, g_star, grad_g_star, CriticalPoint, DqReport, ReducedConfig};
use crate::green::{GreenEvaluator, VortexConfig};
use crate::quad::loglog_slope;
use crate::reduction::{fit_b0, ReducedOptions, ReducedProblem};
use crate::solver::{
    bubbling_step, classify, concentration, evaluate_report, maximal_solution, newton_solve, BranchLabel,
    ContinuationRun, Equation, MonotoneOptions, NewtonOptions, SolveReport, CONCENTRATION_RADIUS,
};
use crate::torus::{Field, Point, TorusDomain};

#[derive(Parser, Debug)]
#[command(name = "csvl", version, about = "Doubly periodic Chern-Simons-Higgs vortex laboratory")]
pub struct Cli {
    /// Experiment config (INI).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `[outputs] directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override `[domain] n`.
    #[arg(long, global = true, value_name = "INT")]
    pub grid_n: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Green function, its regular part and u0 at two points.
    Green {
        #[arg(long, value_parser = parse_point, value_name = "X,Y")]
        x: Point,
        #[arg(long, value_parser = parse_point, value_name = "X,Y")]
        y: Point,
        /// Also write u0 and G(., y) as field files.
        #[arg(long)]
        dump: bool,
    },
    /// Critical point of G*, Hessian spectrum and D(q).
    Functionals,
    /// Build the bubbling ansatz at the seed centers.
    Ansatz {
        /// Defaults to the first sweep value.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Solve along the ε sweep.
    Solve {
        #[arg(long, value_enum, default_value_t = Branch::Bubbling)]
        branch: Branch,
        /// Run the bubbling branch even without a certified D(q) < 0.
        #[arg(long)]
        force: bool,
        /// Start Newton from this φ field instead.
        #[arg(long, value_name = "PATH")]
        seed_field: Option<PathBuf>,
    },
    /// Classify the fields written by `solve`.
    Classify,
    /// Reduced (x, μ) system along the sweep.
    ReduceSweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Branch {
    Bubbling,
    Maximal,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (a, b) = s.split_once(',').ok_or("expected `x,y`")?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok([p(a)?, p(b)?])
}

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        Error::Config { .. } | Error::Format(_) | Error::InvalidArgument(_) => 2,
        Error::SingularPoint(_)
        | Error::NonzeroMean { .. }
        | Error::InvalidConfiguration(_)
        | Error::AnsatzInfeasible { .. } => 3,
        Error::LimitUnstable { .. } | Error::SearchFailure { .. } | Error::ProjectionDegenerate { .. } => 4,
        Error::ReducedInfeasible { .. } => 5,
        Error::OutOfBranch { .. }
        | Error::IterationFailure(_)
        | Error::LinearSolveFailure { .. }
        | Error::NonConvergence { .. }
        | Error::NoSolution(_) => 6,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn fail(code: i32, message: impl Into<String>) -> CliError {
    CliError { code, message: message.into() }
}

/// Parse `args` (program name first), run, report errors on stderr and
/// return the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("csvl: {}", e.message);
            e.code
        }
    }
}

struct Setup {
    cfg: ExperimentConfig,
    hash: String,
    domain: TorusDomain,
    g: GreenEvaluator,
    vc: VortexConfig,
    out: PathBuf,
}

impl Setup {
    fn load(cli: &Cli) -> CliResult<Self> {
        let path = cli.config.as_ref().ok_or_else(|| fail(2, "--config PATH is required"))?;
        let mut cfg = ExperimentConfig::load(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
        if let Some(n) = cli.grid_n {
            cfg = cfg.with_grid_n(n);
        }
        let domain = cfg.torus().map_err(|e| fail(2, e.to_string()))?;
        let g = GreenEvaluator::new(&domain);
        let vc = cfg.vortex_config(&domain).map_err(|e| fail(2, format!("[vortices]: {e}")))?;
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
        std::fs::create_dir_all(&out)?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, domain, g, vc, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }

    fn write_field(&self, name: &str, label: &str, f: &Field) -> CliResult<PathBuf> {
        let p = self.path(name);
        FieldFile::from_field(label, f).write(&p)?;
        Ok(p)
    }

    fn equation(&self, eps: f64) -> CliResult<Equation> {
        Ok(Equation::new(&self.g, &self.vc, &self.domain, eps)?)
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: self.cfg.tolerances.newton_tol, ..Default::default() }
    }

    fn reduced(&self) -> ReducedOptions {
        let s = &self.cfg.sweep;
        ReducedOptions {
            beta0: s.beta0,
            beta1: s.beta1,
            beta_hint: s.beta_hint,
            tol_reduced: self.cfg.tolerances.tol_reduced,
            flip_d_term: s.flip_d_term,
            d: self.cfg.bubbles.d,
            ..Default::default()
        }
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write) -> CliResult {
    let s = Setup::load(cli)?;
    match &cli.command {
        Command::Green { x, y, dump } => cmd_green(&s, *x, *y, *dump, stdout),
        Command::Functionals => cmd_functionals(&s, stdout),
        Command::Ansatz { eps } => cmd_ansatz(&s, *eps, stdout),
        Command::Solve { branch, force, seed_field } => cmd_solve(&s, *branch, *force, seed_field.as_deref(), stdout),
        Command::Classify => cmd_classify(&s, stdout),
        Command::ReduceSweep => cmd_reduce_sweep(&s, stdout),
    }
}

fn e(x: f64) -> String {
    format!("{x:.15e}")
}

fn points(v: &[Point]) -> String {
    v.iter().map(|p| format!("{} {}", e(p[0]), e(p[1]))).collect::<Vec<_>>().join("; ")
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| e(*x)).collect::<Vec<_>>().join(",")
}

fn cmd_green(s: &Setup, x: Point, y: Point, dump: bool, out: &mut dyn std::io::Write) -> CliResult {
    let gxy = s.g.green(x, y)?;
    let gyx = s.g.green(y, x)?;
    let mean_defect = s.g.green_field(&s.domain, y)?.integrate().abs();
    let mut r = format!("config_hash = {}\n", s.hash);
    let _ = writeln!(r, "G(x,y) = {}", e(gxy));
    let _ = writeln!(r, "G(y,x) = {}", e(gyx));
    let _ = writeln!(r, "gamma(x,y) = {}", e(s.g.gamma(x, y)));
    let _ = writeln!(r, "gamma(x,x) = {}", e(s.g.gamma(x, x)));
    let _ = writeln!(r, "u0(x) = {}", e(s.g.u0(&s.vc, x)?));
    let _ = writeln!(r, "u0(y) = {}", e(s.g.u0(&s.vc, y)?));
    let _ = writeln!(r, "mean_G_defect = {}", e(mean_defect));
    out.write_all(r.as_bytes())?;
    s.write("green_report.txt", &r)?;
    if dump {
        s.write_field("u0.field", "u0", &s.g.u0_field(&s.domain, &s.vc)?)?;
        s.write_field("green_y.field", "G(.,y)", &s.g.green_field(&s.domain, y)?)?;
    }
    Ok(())
}

/// Sign of `D(q)` judged against the spread of the last two extrapolants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DSign {
    Negative,
    Nonnegative,
    Inconclusive,
}

pub fn d_certificate(dq: &DqReport) -> (DSign, f64) {
    let t = &dq.r_tail;
    let spread = if t.len() >= 2 { (t[t.len() - 1].extrapolant - t[t.len() - 2].extrapolant).abs() } else { f64::INFINITY };
    let sign = if dq.value + spread < 0.0 {
        DSign::Negative
    } else if dq.value - spread >= 0.0 {
        DSign::Nonnegative
    } else {
        DSign::Inconclusive
    };
    (sign, spread)
}

fn critical_and_d(s: &Setup) -> CliResult<(CriticalPoint, Result<DqReport, Error>)> {
    let cp = find_critical_point(&s.g, &s.vc, &s.cfg.bubbles.seed)?;
    let mut rc = ReducedConfig::voronoi(s.domain.periods(), &cp.q);
    rc.quadrature.order = s.cfg.tolerances.quadrature_order;
    let dq = d_of_q(&s.g, &s.vc, &rc);
    Ok((cp, dq))
}

fn cmd_functionals(s: &Setup, out: &mut dyn std::io::Write) -> CliResult {
    let (cp, dq) = critical_and_d(s)?;
    let grad = grad_g_star(&s.g, &s.vc, &cp.q)?;
    let mut csv = String::from("i,x,y,grad_x,grad_y\n");
    for (i, q) in cp.q.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{}", e(q[0]), e(q[1]), e(grad[2 * i]), e(grad[2 * i + 1]));
    }
    s.write("critical_point.csv", &csv)?;
    let mut csv = String::from("index,eigenvalue\n");
    for (i, l) in cp.eigenvalues.iter().enumerate() {
        let _ = writeln!(csv, "{i},{}", e(*l));
    }
    s.write("hessian.csv", &csv)?;

    let mut r = format!("config_hash = {}\n", s.hash);
    let _ = writeln!(r, "critical_point = {}", points(&cp.q));
    let _ = writeln!(r, "g_star = {}", e(g_star(&s.g, &s.vc, &cp.q)?));
    let _ = writeln!(r, "grad_norm = {}", e(cp.gradient_norm));
    let _ = writeln!(r, "newton_iterations = {}", cp.iterations);
    let _ = writeln!(r, "min_abs_eigenvalue = {}", e(cp.min_abs_eigenvalue));
    let _ = writeln!(r, "degenerate = {}", cp.degenerate);
    let dq = match dq {
        Ok(d) => d,
        Err(err @ Error::LimitUnstable { .. }) => {
            if let Error::LimitUnstable { table, .. } = &err {
                let rep = DqReport { value: f64::NAN, r_tail: table.clone(), farfield_tail: f64::NAN, per_bubble: vec![], rho: vec![] };
                s.write("dq_table.csv", &rep.table_csv())?;
            }
            let _ = writeln!(r, "d_value = unstable");
            s.write("functionals_report.txt", &r)?;
            out.write_all(r.as_bytes())?;
            return Err(err.into());
        }
        Err(other) => return Err(other.into()),
    };
    s.write("dq_table.csv", &dq.table_csv())?;
    let (sign, spread) = d_certificate(&dq);
    let _ = writeln!(r, "d_value = {}", e(dq.value));
    let _ = writeln!(r, "d_extrapolation_spread = {}", e(spread));
    let _ = writeln!(r, "d_farfield_tail = {}", e(dq.farfield_tail));
    let _ = writeln!(r, "rho = {}", list(&dq.rho));
    let certificate = match sign {
        DSign::Negative => format!("negative: D + spread = {} < 0", e(dq.value + spread)),
        DSign::Nonnegative => format!("nonnegative: D - spread = {} >= 0", e(dq.value - spread)),
        DSign::Inconclusive => format!("inconclusive: |D| = {} within spread", e(dq.value.abs())),
    };
    let _ = writeln!(r, "d_sign = {certificate}");
    s.write("functionals_report.txt", &r)?;
    out.write_all(r.as_bytes())?;
    Ok(())
}

fn default_beta(s: &Setup) -> f64 {
    let w = &s.cfg.sweep;
    w.beta_hint.unwrap_or((w.beta0 * w.beta1).sqrt())
}

fn cmd_ansatz(s: &Setup, eps: Option<f64>, out: &mut dyn std::io::Write) -> CliResult {
    let eps = eps.unwrap_or(s.cfg.sweep.eps[0]);
    if !(eps > 0.0) {
        return Err(fail(2, format!("eps = {eps} must be positive")));
    }
    let mu = s.cfg.bubbles.mu.unwrap_or_else(|| default_beta(s) / eps.sqrt());
    let params = BubbleParams::new(&s.domain, &s.g, &s.vc, s.cfg.bubbles.seed.clone(), mu, s.cfg.bubbles.d)?;
    let ans = Ansatz::new(&s.domain, &s.g, &s.vc, params);
    let af = ans.build(eps)?;
    let u = af.candidate_u(&Field::zeros(&s.domain))?;
    s.write_field("ansatz_w_tilde.field", "W~", &af.w_tilde)?;
    s.write_field("ansatz_u.field", "u", &u)?;
    let (masses, global) = ans.masses();
    let (ratios, global_ratio) = ans.mass_ratios();
    let p = &ans.params;
    let mut r = format!("config_hash = {}\n", s.hash);
    let _ = writeln!(r, "eps = {}", e(eps));
    let _ = writeln!(r, "mu = {}", e(p.mu));
    let _ = writeln!(r, "d = {}", e(p.d));
    let _ = writeln!(r, "centers = {}", points(&p.centers));
    let _ = writeln!(r, "mu_i = {}", list(&p.mu_i));
    let _ = writeln!(r, "d_i = {}", list(&p.d_i));
    let _ = writeln!(r, "rho = {}", list(&p.rho));
    let _ = writeln!(r, "c = {}", e(af.c_value));
    let _ = writeln!(r, "discriminant = {}", e(af.discriminant));
    let _ = writeln!(r, "local_mass = {}", list(&masses));
    let _ = writeln!(r, "global_mass = {}", e(global));
    let _ = writeln!(r, "local_mass_ratio = {}", list(&ratios));
    let _ = writeln!(r, "global_mass_ratio = {}", e(global_ratio));
    let _ = writeln!(r, "max_u = {}", e(u.max()));
    s.write("ansatz_params.txt", &r)?;
    out.write_all(r.as_bytes())?;
    Ok(())
}

/// One row of `summary.csv`.
struct Row {
    eps: f64,
    mu: Option<f64>,
    centers: Vec<Point>,
    report: SolveReport,
}

const SUMMARY_HEADER: &str = "index,eps,mu,beta,converged,newton_iterations,final_residual,flux_defect,sup_v,grid_max_v,max_u,mean_u,l2_v,concentration\n";

fn summary_csv(rows: &[Row]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    for (i, r) in rows.iter().enumerate() {
        let rep = &r.report;
        let (mu, beta) = match r.mu {
            Some(m) => (e(m), e(m * r.eps.sqrt())),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{i},{},{mu},{beta},{},{},{},{},{},{},{},{},{},{}",
            e(r.eps),
            rep.converged,
            rep.newton_trace.len().saturating_sub(1),
            e(rep.newton_trace.last().copied().unwrap_or(f64::NAN)),
            e(rep.flux_defect),
            e(rep.sup_v),
            e(rep.grid_max_v),
            e(rep.max_u),
            e(rep.mean_u),
            e(rep.l2_of_v),
            e(rep.concentration.iter().sum::<f64>()),
        );
    }
    s
}

fn report_text(hash: &str, branch: &str, row: &Row) -> String {
    let rep = &row.report;
    let mut r = format!("config_hash = {hash}\nbranch = {branch}\n");
    let _ = writeln!(r, "eps = {}", e(row.eps));
    if let Some(mu) = row.mu {
        let _ = writeln!(r, "mu = {}\nbeta = {}", e(mu), e(mu * row.eps.sqrt()));
    }
    if !row.centers.is_empty() {
        let _ = writeln!(r, "centers = {}", points(&row.centers));
    }
    let _ = writeln!(r, "converged = {}", rep.converged);
    let _ = writeln!(r, "newton_iterations = {}", rep.newton_trace.len().saturating_sub(1));
    let _ = writeln!(r, "linear_iterations = {}", rep.linear_iterations);
    let _ = writeln!(r, "final_residual = {}", e(rep.newton_trace.last().copied().unwrap_or(f64::NAN)));
    let _ = writeln!(r, "flux_defect = {}", e(rep.flux_defect));
    let _ = writeln!(r, "sup_v = {}", e(rep.sup_v));
    let _ = writeln!(r, "grid_max_v = {}", e(rep.grid_max_v));
    let _ = writeln!(r, "max_u = {}", e(rep.max_u));
    let _ = writeln!(r, "mean_u = {}", e(rep.mean_u));
    let _ = writeln!(r, "l2_v = {}", e(rep.l2_of_v));
    let _ = writeln!(r, "concentration = {}", list(&rep.concentration));
    let _ = writeln!(r, "clipped = {}", rep.clipped);
    let _ = writeln!(r, "branch_label = {}", rep.branch_label.as_str());
    r
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,residual\n");
    for (i, t) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", e(*t));
    }
    s
}

const PLOTS: &str = r#"# gnuplot script; run from the output directory
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 900,600
set logscale x
set xlabel "eps"
set output "concentration.png"
set ylabel "mass fraction near centers"
plot "summary.csv" using 2:14 with linespoints
set output "sup_v.png"
set ylabel "sup v"
plot "summary.csv" using 2:9 with linespoints
set output "residual_scaling.png"
set logscale y
set ylabel "final residual"
plot "summary.csv" using 2:7 with linespoints
"#;

fn cmd_solve(s: &Setup, branch: Branch, force: bool, seed_field: Option<&Path>, out: &mut dyn std::io::Write) -> CliResult {
    let schedule = s.cfg.sweep.eps.clone();
    let mut rows: Vec<Row> = Vec::new();
    let mut run = ContinuationRun::new(schedule.clone())?;
    let branch_name = match (branch, seed_field) {
        (_, Some(_)) => "seeded",
        (Branch::Bubbling, None) => "bubbling",
        (Branch::Maximal, None) => "maximal",
    };
    s.write("plots.script", PLOTS)?;

    // shared bookkeeping for one finished ε
    let finish = |i: usize, row: Row, phi: &Field, run: &mut ContinuationRun, rows: &mut Vec<Row>, out: &mut dyn std::io::Write| -> CliResult {
        s.write_field(&format!("phi_{i:02}.field"), "phi", phi)?;
        s.write(&format!("report_{i:02}.txt"), &report_text(&s.hash, branch_name, &row))?;
        s.write(&format!("trace_{i:02}.csv"), &trace_csv(&row.report.newton_trace))?;
        writeln!(
            out,
            "eps = {}  converged = {}  sup_v = {}  residual = {}",
            e(row.eps),
            row.report.converged,
            e(row.report.sup_v),
            e(row.report.newton_trace.last().copied().unwrap_or(f64::NAN))
        )?;
        run.reports.push(row.report.clone());
        run.fields.push(phi.clone());
        rows.push(row);
        s.write("summary.csv", &summary_csv(rows))?;
        Ok(())
    };
    // on failure: record the trace, keep the partial summary, report its path
    let failed = |i: usize, err: Error, rows: &[Row]| -> CliError {
        let _ = s.write("summary.csv", &summary_csv(rows));
        let code = exit_code(&err);
        match &err {
            Error::NonConvergence { trace, .. } => {
                let name = format!("trace_{i:02}.csv");
                match s.write(&name, &trace_csv(trace)) {
                    Ok(p) => fail(code, format!("eps = {}: {err}; trace written to {}", schedule[i], p.display())),
                    Err(w) => w,
                }
            }
            _ => fail(code, format!("eps = {}: {err}", schedule[i])),
        }
    };

    if let Some(path) = seed_field {
        let seed = FieldFile::read(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?.to_field()?;
        if seed.domain != s.domain {
            return Err(fail(2, format!("seed field grid {:?} differs from the config grid {:?}", seed.domain, s.domain)));
        }
        let mut phi = seed;
        for (i, &eps) in schedule.iter().enumerate() {
            let eq = s.equation(eps)?;
            let (mut rep, next) = newton_solve(&eq, &phi, s.newton()).map_err(|err| failed(i, err, &rows))?;
            rep.concentration = concentration(&eq.state(&next)?.v, &s.cfg.bubbles.seed, CONCENTRATION_RADIUS).0;
            phi = next;
            finish(i, Row { eps, mu: None, centers: vec![], report: rep }, &phi, &mut run, &mut rows, out)?;
        }
    } else if branch == Branch::Maximal {
        let opts = MonotoneOptions { newton: s.newton(), ..Default::default() };
        let mut vs: Vec<Field> = Vec::new();
        for (i, &eps) in schedule.iter().enumerate() {
            let eq = s.equation(eps)?;
            let (mut rep, phi) = maximal_solution(&eq, opts).map_err(|err| failed(i, err, &rows))?;
            rep.branch_label = BranchLabel::Topological;
            let v = eq.state(&phi)?.v;
            rep.concentration = concentration(&v, &s.cfg.bubbles.seed, CONCENTRATION_RADIUS).0;
            vs.push(v);
            finish(i, Row { eps, mu: None, centers: vec![], report: rep }, &phi, &mut run, &mut rows, out)?;
        }
        // maximal solutions increase as ε decreases
        let mut csv = String::from("eps_a,eps_b,min_gap,monotone\n");
        for i in 1..vs.len() {
            let gap = vs[i].zip_map(&vs[i - 1], |a, b| a - b).min();
            let ok = gap >= -1e-10;
            let _ = writeln!(csv, "{},{},{},{ok}", e(schedule[i - 1]), e(schedule[i]), e(gap));
            writeln!(out, "monotonicity eps {} -> {}: min(v_b - v_a) = {} ({})", e(schedule[i - 1]), e(schedule[i]), e(gap), if ok { "ok" } else { "violated" })?;
        }
        s.write("monotonicity.csv", &csv)?;
    } else {
        let (cp, dq) = critical_and_d(s)?;
        match dq {
            Ok(dq) => {
                let (sign, _) = d_certificate(&dq);
                writeln!(out, "D(q) = {} at q = {}", e(dq.value), points(&cp.q))?;
                if sign != DSign::Negative && !force {
                    return Err(fail(5, format!("D(q) = {} is not certified negative; rerun with --force to solve anyway", e(dq.value))));
                }
            }
            Err(err) if force => writeln!(out, "D(q) unavailable ({err}); continuing under --force")?,
            Err(err) => return Err(err.into()),
        }
        let mut opts = s.reduced();
        let mut x = cp.q.clone();
        for (i, &eps) in schedule.iter().enumerate() {
            let eq = s.equation(eps)?;
            let (rep, phi, sol) = bubbling_step(&eq, &s.g, &s.vc, &x, opts, s.newton()).map_err(|err| failed(i, err, &rows))?;
            opts.beta_hint = Some(sol.beta);
            x = sol.point.x().to_vec();
            run.mu.push(sol.point.mu());
            run.centers.push(x.clone());
            finish(i, Row { eps, mu: Some(sol.point.mu()), centers: x.clone(), report: rep }, &phi, &mut run, &mut rows, out)?;
        }
    }
    let label = classify(&run);
    let mut c = format!("config_hash = {}\nbranch = {branch_name}\nlabel = {}\n", s.hash, label.as_str());
    if run.mu.len() >= 2 {
        let _ = writeln!(c, "mu_slope = {}", e(loglog_slope(&schedule[..run.mu.len()], &run.mu)));
    }
    s.write("classification.txt", &c)?;
    writeln!(out, "label = {}", label.as_str())?;
    if let Some(i) = rows.iter().position(|r| !r.report.converged) {
        return Err(fail(6, format!("eps = {} did not converge; trace in {}", schedule[i], s.path(&format!("trace_{i:02}.csv")).display())));
    }
    Ok(())
}

/// Read `summary.csv` and the φ files next to it.
fn cmd_classify(s: &Setup, out: &mut dyn std::io::Write) -> CliResult {
    let summary = std::fs::read_to_string(s.path("summary.csv"))
        .map_err(|e| fail(2, format!("{}: {e} (run `solve` first)", s.path("summary.csv").display())))?;
    let mut lines = summary.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| fail(2, format!("summary.csv lacks column `{name}`")));
    let (ci, ce) = (col("index")?, col("eps")?);
    let mut eps = Vec::new();
    let mut fields = Vec::new();
    for (ln, line) in lines.enumerate() {
        let c: Vec<&str> = line.split(',').collect();
        let bad = || fail(2, format!("summary.csv line {}: malformed row", ln + 2));
        let i: usize = c.get(ci).and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let ev: f64 = c.get(ce).and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let p = s.path(&format!("phi_{i:02}.field"));
        let f = FieldFile::read(&p).map_err(|e| fail(2, format!("{}: {e}", p.display())))?.to_field()?;
        if f.domain != s.domain {
            return Err(fail(2, format!("{} was written on a different grid", p.display())));
        }
        eps.push(ev);
        fields.push(f);
    }
    let mut run = ContinuationRun::new(eps.clone()).map_err(|e| fail(2, format!("summary.csv: {e}")))?;
    let mut r = format!("config_hash = {}\n", s.hash);
    let _ = writeln!(r, "eps,sup_v,l2_v,exp_mean_u,residual,concentration");
    for (&ev, phi) in eps.iter().zip(&fields) {
        let eq = s.equation(ev)?;
        let mut rep = evaluate_report(&eq, phi, s.cfg.tolerances.newton_tol)?;
        rep.concentration = concentration(&eq.state(phi)?.v, &s.cfg.bubbles.seed, CONCENTRATION_RADIUS).0;
        let _ = writeln!(
            r,
            "{},{},{},{},{},{}",
            e(ev),
            e(rep.sup_v),
            e(rep.l2_of_v),
            e(rep.mean_u.exp()),
            e(rep.newton_trace[0]),
            e(rep.concentration.iter().sum::<f64>())
        );
        run.reports.push(rep);
    }
    let label = classify(&run);
    let _ = writeln!(r, "label = {}", label.as_str());
    s.write("classification.txt", &r)?;
    out.write_all(r.as_bytes())?;
    Ok(())
}

fn cmd_reduce_sweep(s: &Setup, out: &mut dyn std::io::Write) -> CliResult {
    let cp = find_critical_point(&s.g, &s.vc, &s.cfg.bubbles.seed)?;
    let mut opts = s.reduced();
    let mut x = cp.q.clone();
    let k = x.len();
    let mut header = String::from("eps,mu,beta,R0");
    for i in 0..k {
        for j in 0..2 {
            let _ = write!(header, ",R_{i}_{j}");
        }
    }
    header.push_str(",grad_g_star_norm,A0,B0,max_normalized\n");
    let mut csv = header;
    let mut rows = Vec::new();
    let mut mus = Vec::new();
    let mut a0s = Vec::new();
    for &eps in &s.cfg.sweep.eps {
        let eq = s.equation(eps)?;
        let prob = ReducedProblem::new(&eq, &s.g, &s.vc, opts);
        let sol = match prob.solve(&x) {
            Ok(sol) => sol,
            Err(err) => {
                s.write("reduced_sweep.csv", &csv)?;
                return Err(fail(exit_code(&err), format!("eps = {eps}: {err}")));
            }
        };
        let p = &sol.point;
        let mu = p.mu();
        let a0 = prob.fit_a0(p, 1e-3)?;
        let b0 = -(p.r0 + p.d_term) / (eps * eps * mu);
        let max_norm = p.normalized.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let _ = write!(csv, "{},{},{},{}", e(eps), e(mu), e(sol.beta), e(p.r0));
        for r in &p.rij {
            let _ = write!(csv, ",{}", e(*r));
        }
        let _ = writeln!(csv, ",{},{},{},{}", e(sol.grad_g_star_norm), e(a0), e(b0), e(max_norm));
        writeln!(out, "eps = {}  mu = {}  beta = {}  R0 = {}  A0 = {}  B0 = {}", e(eps), e(mu), e(sol.beta), e(p.r0), e(a0), e(b0))?;
        s.write("reduced_sweep.csv", &csv)?;
        rows.push((eps, mu, p.r0, p.d_term));
        mus.push(mu);
        a0s.push(a0);
        opts.beta_hint = Some(sol.beta);
        x = p.x().to_vec();
    }
    let mut r = format!("config_hash = {}\n", s.hash);
    let _ = writeln!(r, "critical_point = {}", points(&cp.q));
    let _ = writeln!(r, "b0_fit = {}", e(fit_b0(&rows)));
    let _ = writeln!(r, "a0_mean = {}", e(a0s.iter().sum::<f64>() / a0s.len() as f64));
    if mus.len() >= 2 {
        let _ = writeln!(r, "mu_slope = {}", e(loglog_slope(&s.cfg.sweep.eps, &mus)));
    }
    s.write("reduced_report.txt", &r)?;
    out.write_all(r.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_contract() {
        assert_eq!(exit_code(&Error::Config { line: 1, message: String::new() }), 2);
        assert_eq!(exit_code(&Error::SingularPoint(String::new())), 3);
        assert_eq!(exit_code(&Error::LimitUnstable { spread: 1.0, table: vec![] }), 4);
        assert_eq!(exit_code(&Error::ReducedInfeasible { mu_lo: 1.0, mu_hi: 2.0, scan: vec![] }), 5);
        assert_eq!(exit_code(&Error::NonConvergence { reason: String::new(), trace: vec![] }), 6);
    }

    #[test]
    fn point_argument() {
        assert_eq!(parse_point("0.25, 0.5").unwrap(), [0.25, 0.5]);
        assert!(parse_point("0.25").is_err());
    }

    #[test]
    fn certificate_uses_spread() {
        use crate::error::ExtrapolationRow;
        let row = |x| ExtrapolationRow { r: 0.1, partial_sum: 0.0, extrapolant: x };
        let mut dq = DqReport { value: -1.0, r_tail: vec![row(-1.01), row(-1.0)], farfield_tail: 0.0, per_bubble: vec![], rho: vec![] };
        assert_eq!(d_certificate(&dq).0, DSign::Negative);
        dq.value = -0.001;
        assert_eq!(d_certificate(&dq).0, DSign::Inconclusive);
        dq.value = 0.5;
        assert_eq!(d_certificate(&dq).0, DSign::Nonnegative);
    }
}
