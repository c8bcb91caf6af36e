//! Full nonlinear solves of `Δu + N_ε(u) = 4π Σ δ_{p_j}` with `u = u0 + φ`:
//! Newton-Krylov, the monotone maximal branch, continuation and the
//! classification diagnostics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::green::{GreenEvaluator, VortexConfig};
use crate::higgs;
use crate::krylov::{gmres, GmresOptions};
use crate::reduction::{ReducedOptions, ReducedProblem, ReducedSolution};
use crate::torus::{Field, FourierInterpolant, Point, TorusDomain};

/// The semilinear equation for the smooth part `φ`:
/// `R(φ) = Δφ + s N_ε(u0 + φ) - 4πN/|Ω| - f`.
#[derive(Clone, Debug)]
pub struct Equation {
    pub domain: TorusDomain,
    pub u0: Field,
    pub eps: f64,
    pub n_total: u32,
    /// Scale `s` of the nonlinearity (1 for the physical problem).
    pub nonlinear_scale: f64,
    /// Optional manufactured source `f`.
    pub source: Option<Field>,
    pub green: GreenEvaluator,
    pub cfg: VortexConfig,
}

/// Pointwise data at one iterate.
#[derive(Clone, Debug)]
pub struct State {
    pub v: Field,
    pub n: Field,
    pub dn: Field,
    pub residual: Field,
}

impl Equation {
    pub fn new(g: &GreenEvaluator, cfg: &VortexConfig, domain: &TorusDomain, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps = {eps} must be positive")));
        }
        Ok(Self {
            domain: domain.clone(),
            u0: g.u0_field(domain, cfg)?,
            eps,
            n_total: cfg.total(),
            nonlinear_scale: 1.0,
            source: None,
            green: g.clone(),
            cfg: cfg.clone(),
        })
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    /// `4πN / |Ω|`.
    pub fn flux_density(&self) -> f64 {
        4.0 * PI * self.n_total as f64 / self.domain.area()
    }

    /// `u = u0 + φ`.
    pub fn u_of(&self, phi: &Field) -> Field {
        self.u0.zip_map(phi, |a, b| a + b)
    }

    /// Pointwise data at `φ`. Values of `u` in `(0, ROUNDOFF_BAND]` are
    /// cancellation noise in `u0 + φ` and are read as `v = 0`, with `N`
    /// continued by its tangent `-2u/ε²`.
    pub fn state(&self, phi: &Field) -> Result<State> {
        let u = self.u_of(phi);
        if let Some(i) = u.values.iter().position(|&x| x > ROUNDOFF_BAND || x.is_nan()) {
            return Err(Error::OutOfBranch { value: u.values[i], node: Some(i) });
        }
        let v = higgs::f_inverse_field(&u.map(|x| x.min(0.0)))?;
        let (eps, s) = (self.eps, self.nonlinear_scale);
        let tangent = -2.0 / (eps * eps);
        let mut n = v.map(|x| s * higgs::nonlinearity_of_v(x, eps));
        let mut dn = v.map(|x| s * higgs::nonlinearity_derivative_of_v(x, eps));
        for (i, &x) in u.values.iter().enumerate() {
            if x > 0.0 {
                n.values[i] = s * tangent * x;
                dn.values[i] = s * tangent;
            }
        }
        let lap = phi.laplacian();
        let flux = self.flux_density();
        let mut residual = lap.zip_map(&n, |a, b| a + b - flux);
        if let Some(f) = &self.source {
            residual = residual.zip_map(f, |a, b| a - b);
        }
        Ok(State { v, n, dn, residual })
    }

    pub fn residual(&self, phi: &Field) -> Result<Field> {
        Ok(self.state(phi)?.residual)
    }

    /// `v` off the grid: `u0` exactly, `φ` by its trigonometric interpolant.
    pub fn v_at(&self, phi: &FourierInterpolant, y: Point) -> f64 {
        let u = match self.green.u0(&self.cfg, y) {
            Ok(u0) => u0 + phi.eval(y),
            Err(_) => return f64::NEG_INFINITY,
        };
        higgs::f_inverse(u.min(0.0)).unwrap_or(f64::NEG_INFINITY)
    }

    /// `sup_Ω v` and where it is attained: Newton on the interpolated `v`
    /// from the best grid node, never below the grid maximum.
    pub fn sup_v(&self, phi: &Field, v_grid: &Field) -> (f64, Point) {
        let dom = &self.domain;
        let (i0, &g0) = v_grid.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let mut p = dom.node(i0);
        if g0 >= 0.0 {
            return (g0, p);
        }
        let it = FourierInterpolant::new(phi);
        let hmax = dom.spacing()[0].min(dom.spacing()[1]);
        let s = 1e-4 * hmax.max(1e-2);
        let v = |q: Point| self.v_at(&it, q);
        let mut best = v(p);
        for _ in 0..30 {
            let f = |dx: f64, dy: f64| v([p[0] + dx, p[1] + dy]);
            let (fxp, fxm, fyp, fym) = (f(s, 0.0), f(-s, 0.0), f(0.0, s), f(0.0, -s));
            let gx = (fxp - fxm) / (2.0 * s);
            let gy = (fyp - fym) / (2.0 * s);
            let hxx = (fxp - 2.0 * best + fxm) / (s * s);
            let hyy = (fyp - 2.0 * best + fym) / (s * s);
            let hxy = (f(s, s) - f(s, -s) - f(-s, s) + f(-s, -s)) / (4.0 * s * s);
            let det = hxx * hyy - hxy * hxy;
            let mut step = if hxx < 0.0 && det > 0.0 {
                [-(hyy * gx - hxy * gy) / det, -(hxx * gy - hxy * gx) / det]
            } else {
                // not concave here: a short gradient step
                let gn = gx.hypot(gy).max(1e-300);
                [0.25 * hmax * gx / gn, 0.25 * hmax * gy / gn]
            };
            let len = step[0].hypot(step[1]);
            if len > hmax {
                step = [step[0] * hmax / len, step[1] * hmax / len];
            }
            let mut moved = false;
            let mut a = 1.0;
            for _ in 0..20 {
                let q = [p[0] + a * step[0], p[1] + a * step[1]];
                let vq = v(q);
                if vq > best {
                    p = q;
                    best = vq;
                    moved = true;
                    break;
                }
                a *= 0.5;
            }
            if !moved || a * len < 1e-12 {
                break;
            }
        }
        (best.max(g0), dom.wrap(p))
    }

    /// `∫ N_ε(u) - 4πN`.
    pub fn flux_defect(&self, state: &State) -> f64 {
        state.n.grid_sum() - 4.0 * PI * self.n_total as f64
    }
}

/// `(Δ + N'_ε(u0 + φ)) w` for a precomputed `N'` field.
pub fn jacobian_apply(dn: &Field, direction: &Field) -> Field {
    let lap = direction.laplacian();
    let mut out = lap;
    for ((o, a), b) in out.values.iter_mut().zip(&dn.values).zip(&direction.values) {
        *o += a * b;
    }
    out.declared_mean = None;
    out
}

/// Shift of the `(Δ - s)^{-1}` preconditioner.
pub fn preconditioner_shift(dn: &Field) -> f64 {
    let mut a: Vec<f64> = dn.values.iter().map(|v| v.abs()).collect();
    let mid = a.len() / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, f64::total_cmp);
    m.max(1.0)
}

/// Solve `J δ = rhs` by preconditioned GMRES.
pub fn solve_linearized(dn: &Field, rhs: &Field, opts: GmresOptions) -> Result<(Field, usize)> {
    let dom = &rhs.domain;
    let s = preconditioner_shift(dn);
    let out = gmres(
        |x| jacobian_apply(dn, &Field::new(dom, x.to_vec()).unwrap()).values,
        |x| Field::new(dom, x.to_vec()).unwrap().shifted_solve(s).values,
        &rhs.values,
        None,
        opts,
    );
    if !out.converged && out.residual > 1e-3 {
        return Err(Error::LinearSolveFailure { residual: out.residual, iterations: out.iterations });
    }
    Ok((Field::new(dom, out.x)?, out.iterations))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchLabel {
    Topological,
    NonTopological,
    Undetermined,
}

impl BranchLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchLabel::Topological => "topological",
            BranchLabel::NonTopological => "non-topological",
            BranchLabel::Undetermined => "undetermined",
        }
    }
}

/// Outcome and diagnostics of one solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub eps: f64,
    pub converged: bool,
    /// Sup norm of the residual per iterate, relative to `4πN/|Ω|`.
    pub newton_trace: Vec<f64>,
    pub linear_iterations: usize,
    /// `|∫N_ε - 4πN| / 4πN`.
    pub flux_defect: f64,
    /// `sup_Ω v`, refined off the grid.
    pub sup_v: f64,
    /// Largest nodal value of `v`.
    pub grid_max_v: f64,
    /// `d_ε`, the mean of `u`.
    pub mean_u: f64,
    pub l2_of_v: f64,
    pub concentration: Vec<f64>,
    pub branch_label: BranchLabel,
    /// Whether the in-branch clip was active at the returned iterate.
    pub clipped: bool,
    /// Largest grid value of `u`; positive only inside the roundoff band.
    pub max_u: f64,
}

impl SolveReport {
    fn from_state(eq: &Equation, phi: &Field, st: &State, trace: Vec<f64>, lin: usize, converged: bool, clipped: bool) -> Self {
        let total = 4.0 * PI * eq.n_total as f64;
        Self {
            eps: eq.eps,
            converged,
            newton_trace: trace,
            linear_iterations: lin,
            flux_defect: eq.flux_defect(st).abs() / total,
            sup_v: eq.sup_v(phi, &st.v).0,
            grid_max_v: st.v.max(),
            mean_u: eq.u0.declared_mean.unwrap_or(0.0) + phi.grid_sum() / eq.domain.area(),
            l2_of_v: st.v.l2_norm(),
            concentration: Vec::new(),
            branch_label: BranchLabel::Undetermined,
            clipped,
            max_u: eq.u_of(phi).max(),
        }
    }
}

/// Diagnostics of a stored iterate; `converged` compares its residual with
/// `tol`.
pub fn evaluate_report(eq: &Equation, phi: &Field, tol: f64) -> Result<SolveReport> {
    let st = eq.state(phi)?;
    let r = st.residual.sup_norm() / eq.flux_density();
    Ok(SolveReport::from_state(eq, phi, &st, vec![r], 0, r <= tol, false))
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Stop when `sup|R| <= tol * 4πN/|Ω|`.
    pub tol: f64,
    pub max_iter: usize,
    pub gmres: GmresOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 40, gmres: GmresOptions { restart: 80, max_iter: 800, rel_tol: 1e-11 } }
    }
}

/// Positive `u` up to this size is treated as roundoff of `u0 + φ`.
pub const ROUNDOFF_BAND: f64 = 1e-12;

/// Keep `u0 + φ <= 0`; returns whether anything moved.
fn clip_into_branch(eq: &Equation, phi: &mut Field) -> bool {
    let mut moved = false;
    for (p, u0) in phi.values.iter_mut().zip(&eq.u0.values) {
        if *u0 + *p > ROUNDOFF_BAND {
            *p = -u0;
            moved = true;
        }
    }
    moved
}

/// Damped Newton-Krylov from `phi0`.
pub fn newton_solve(eq: &Equation, phi0: &Field, opts: NewtonOptions) -> Result<(SolveReport, Field)> {
    let scale = eq.flux_density();
    let mut phi = phi0.clone();
    phi.declared_mean = None;
    let mut st = eq.state(&phi)?;
    let mut trace = vec![st.residual.sup_norm() / scale];
    let mut lin = 0;
    let mut clipped = false;
    for _ in 0..opts.max_iter {
        if *trace.last().unwrap() <= opts.tol && !clipped {
            let rep = SolveReport::from_state(eq, &phi, &st, trace, lin, true, false);
            return Ok((rep, phi));
        }
        let rhs = st.residual.map(|r| -r);
        let (delta, its) = solve_linearized(&st.dn, &rhs, opts.gmres)?;
        lin += its;
        let merit0 = st.residual.l2_norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let mut trial = phi.zip_map(&delta, |a, b| a + alpha * b);
            let was_clipped = clip_into_branch(eq, &mut trial);
            if let Ok(ts) = eq.state(&trial) {
                if ts.residual.l2_norm() < (1.0 - 1e-4 * alpha) * merit0 || (alpha < 1e-3 && ts.residual.l2_norm() <= merit0) {
                    accepted = Some((trial, ts, was_clipped));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((p, s, c)) => {
                phi = p;
                st = s;
                clipped = c;
                trace.push(st.residual.sup_norm() / scale);
            }
            None => {
                let last = *trace.last().unwrap();
                if last <= opts.tol * 10.0 && !clipped {
                    // roundoff floor reached
                    break;
                }
                return Err(Error::NonConvergence { reason: "line search exhausted".into(), trace });
            }
        }
    }
    let last = *trace.last().unwrap();
    if last <= opts.tol && !clipped {
        let rep = SolveReport::from_state(eq, &phi, &st, trace, lin, true, false);
        return Ok((rep, phi));
    }
    Err(Error::NonConvergence { reason: format!("residual {last:.3e} after {} iterations", trace.len() - 1), trace })
}

#[derive(Clone, Copy, Debug)]
pub struct MonotoneOptions {
    pub max_iter: usize,
    /// Switch to Newton once successive iterates differ by less than this
    /// (sup norm).
    pub handoff: f64,
    pub newton: NewtonOptions,
}

impl Default for MonotoneOptions {
    fn default() -> Self {
        Self { max_iter: 400, handoff: 1e-6, newton: NewtonOptions::default() }
    }
}

/// Maximal (topological) solution: decreasing monotone iteration from
/// `u = 0`, `(Δ - K) φ_{n+1} = -K φ_n - N_ε(u0 + φ_n) + 4πN/|Ω|` with
/// `K = 1.1 sup|N'|`, then a Newton polish.
pub fn maximal_solution(eq: &Equation, opts: MonotoneOptions) -> Result<(SolveReport, Field)> {
    let flux = eq.flux_density();
    let mut phi = eq.u0.map(|u| -u);
    let mut prev_max = f64::INFINITY;
    for it in 0..opts.max_iter {
        let st = eq.state(&phi)?;
        let k = 1.1 * st.dn.sup_norm().max(1e-12);
        let rhs: Vec<f64> = (0..phi.values.len()).map(|i| -k * phi.values[i] - st.n.values[i] + flux).collect();
        let mut next = Field::new(&eq.domain, rhs)?.shifted_solve(k);
        clip_into_branch(eq, &mut next);
        let change = next.zip_map(&phi, |a, b| a - b).sup_norm();
        if !next.is_finite() || (it > 20 && next.max() > prev_max + 1e3) {
            return Err(Error::NoSolution(format!("monotone iteration diverged at eps = {}", eq.eps)));
        }
        prev_max = next.max();
        phi = next;
        if change < opts.handoff {
            break;
        }
    }
    let st = eq.state(&phi)?;
    // a decreasing family that drains all of e^v signals eps above threshold
    if st.v.max() < -30.0 {
        return Err(Error::NoSolution(format!("monotone iterates collapsed at eps = {}", eq.eps)));
    }
    newton_solve(eq, &phi, opts.newton).map_err(|e| match e {
        Error::NonConvergence { .. } | Error::LinearSolveFailure { .. } => {
            Error::NoSolution(format!("maximal branch not found at eps = {}: {e}", eq.eps))
        }
        other => other,
    })
}

/// Mass fractions of `e^v` in `B_δ(q_i)`, then the total.
pub fn concentration(v: &Field, q: &[Point], delta: f64) -> (Vec<f64>, f64) {
    let dom = &v.domain;
    let ev: Vec<f64> = v.values.iter().map(|x| x.exp()).collect();
    let total: f64 = ev.iter().sum();
    let mut fr = vec![0.0; q.len()];
    for (idx, e) in ev.iter().enumerate() {
        let y = dom.node(idx);
        for (i, &qi) in q.iter().enumerate() {
            if dom.distance(y, qi) < delta {
                fr[i] += e;
            }
        }
    }
    for f in fr.iter_mut() {
        *f /= total;
    }
    let sum = fr.iter().sum::<f64>().min(1.0);
    (fr, sum)
}

/// One ε-sweep along a branch.
#[derive(Clone, Debug)]
pub struct ContinuationRun {
    pub eps_schedule: Vec<f64>,
    pub reports: Vec<SolveReport>,
    pub fields: Vec<Field>,
    /// `μ(ε)` for bubbling runs.
    pub mu: Vec<f64>,
    /// `x(ε)` for bubbling runs.
    pub centers: Vec<Vec<Point>>,
}

impl ContinuationRun {
    pub fn new(eps_schedule: Vec<f64>) -> Result<Self> {
        if eps_schedule.windows(2).any(|w| w[1] >= w[0]) || eps_schedule.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidArgument("eps schedule must be positive and strictly decreasing".into()));
        }
        Ok(Self { eps_schedule, reports: Vec::new(), fields: Vec::new(), mu: Vec::new(), centers: Vec::new() })
    }
}

/// Maximal branch over a decreasing schedule.
pub fn maximal_family(eq: &Equation, schedule: &[f64], opts: MonotoneOptions) -> Result<ContinuationRun> {
    let mut run = ContinuationRun::new(schedule.to_vec())?;
    for &eps in schedule {
        let (mut rep, phi) = maximal_solution(&eq.with_eps(eps), opts)?;
        rep.branch_label = BranchLabel::Topological;
        run.reports.push(rep);
        run.fields.push(phi);
    }
    Ok(run)
}

/// Radius of the balls used for the concentration fractions.
pub const CONCENTRATION_RADIUS: f64 = 0.1;

/// Bubbling branch over a decreasing schedule: at each ε the reduced system
/// fixes `(x(ε), μ(ε))` (scan seeded by the previous β), then Newton starts
/// from the ansatz `u = 1 + u0 + W~`.
pub fn bubbling_family(
    eq: &Equation,
    g: &GreenEvaluator,
    cfg: &VortexConfig,
    seed: &[Point],
    schedule: &[f64],
    reduced: ReducedOptions,
    newton: NewtonOptions,
) -> Result<(ContinuationRun, Vec<ReducedSolution>)> {
    let mut run = ContinuationRun::new(schedule.to_vec())?;
    let mut sols = Vec::new();
    let mut opts = reduced;
    let mut x = seed.to_vec();
    for &eps in schedule {
        let (rep, phi, sol) = bubbling_step(&eq.with_eps(eps), g, cfg, &x, opts, newton)?;
        opts.beta_hint = Some(sol.beta);
        x = sol.point.x().to_vec();
        run.reports.push(rep);
        run.fields.push(phi);
        run.mu.push(sol.point.mu());
        run.centers.push(x.clone());
        sols.push(sol);
    }
    Ok((run, sols))
}

/// One bubbling solve at the equation's ε, seeded at centers `x`.
pub fn bubbling_step(
    e: &Equation,
    g: &GreenEvaluator,
    cfg: &VortexConfig,
    x: &[Point],
    reduced: ReducedOptions,
    newton: NewtonOptions,
) -> Result<(SolveReport, Field, ReducedSolution)> {
    let sol = ReducedProblem::new(e, g, cfg, reduced).solve(x)?;
    let (rep, phi) = bubbling_polish(e, &sol, newton)?;
    Ok((rep, phi, sol))
}

/// Full-equation Newton solve started from a reduced solution.
pub fn bubbling_polish(e: &Equation, sol: &ReducedSolution, newton: NewtonOptions) -> Result<(SolveReport, Field)> {
    let start = sol.point.inner.phi.zip_map(&sol.point.inner.eta, |p, h| p - h);
    let (mut rep, phi) = match newton_solve(e, &start, newton) {
        Ok(r) => r,
        // the bare ansatz can sit outside the Newton basin; the inner
        // correction is the next best start
        Err(Error::NonConvergence { .. }) | Err(Error::OutOfBranch { .. }) => newton_solve(e, &sol.point.inner.phi, newton)?,
        Err(other) => return Err(other),
    };
    let st = e.state(&phi)?;
    rep.concentration = concentration(&st.v, sol.point.x(), CONCENTRATION_RADIUS).0;
    rep.branch_label = BranchLabel::NonTopological;
    Ok((rep, phi))
}

/// Branch label from trends along a family (ε decreasing).
pub fn classify(run: &ContinuationRun) -> BranchLabel {
    let reps = &run.reports;
    if reps.len() < 3 {
        return BranchLabel::Undetermined;
    }
    let eps: Vec<f64> = reps.iter().map(|r| r.eps).collect();
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return BranchLabel::Undetermined;
    }
    let sup: Vec<f64> = reps.iter().map(|r| r.sup_v).collect();
    let l2: Vec<f64> = reps.iter().map(|r| r.l2_of_v).collect();
    let ed: Vec<f64> = reps.iter().map(|r| r.mean_u.exp()).collect();
    let decreasing = |x: &[f64]| x.windows(2).all(|w| w[1] < w[0]);
    let increasing = |x: &[f64]| x.windows(2).all(|w| w[1] > w[0]);
    // v -> 0: |v| shrinks and e^{d_ε} climbs toward 1
    let sup_abs: Vec<f64> = reps.iter().map(|r| r.sup_v.abs()).collect();
    if decreasing(&l2) && decreasing(&sup_abs) && increasing(&ed) {
        return BranchLabel::Topological;
    }
    // v -> -inf: the peak itself sinks and e^{d_ε} drains
    if decreasing(&sup) && decreasing(&ed) && sup.last().copied().unwrap_or(0.0) < -1.0 {
        return BranchLabel::NonTopological;
    }
    BranchLabel::Undetermined
}
