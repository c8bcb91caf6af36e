//! Approximate kernels, weighted norms, the projection `Q` and projected
//! residuals of the bubbling ansatz.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::ansatz::{bubble_radial, Ansatz, AnsatzField, BubbleParams};
use crate::error::{Error, Result};
use crate::functionals::{d_bracket, grad_g_star, ReducedConfig};
use crate::green::{GreenEvaluator, VortexConfig};
use crate::higgs;
use crate::krylov::{gmres, GmresOptions};
use crate::solver::{jacobian_apply, Equation, State};
use crate::quad::{graded_breaks, merge_breaks, polar_integral, GaussLegendre};
use crate::torus::{Field, Point, PolarPatch, TorusDomain};

/// `h_μ(y) = Σ 1_{B_{d_i}(x_i)} e^{u_{x_i,μ_i}(y)}`.
pub fn h_mu(domain: &TorusDomain, params: &BubbleParams, y: Point) -> f64 {
    let mut h = 0.0;
    for i in 0..params.k() {
        let r = domain.distance(y, params.centers[i]);
        if r < params.d_i[i] {
            h += bubble_radial(params.mu_i[i], r).exp();
        }
    }
    h
}

pub fn h_mu_field(domain: &TorusDomain, params: &BubbleParams) -> Field {
    Field::from_fn(domain, |y| h_mu(domain, params, y))
}

/// Quintic smoothstep cutoff: 1 below `d`, 0 above `2d`. Returns
/// `(chi, chi', chi'')`.
pub fn chi(r: f64, d: f64) -> (f64, f64, f64) {
    if r <= d {
        return (1.0, 0.0, 0.0);
    }
    if r >= 2.0 * d {
        return (0.0, 0.0, 0.0);
    }
    let t = (r - d) / d;
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let s1 = 30.0 * t * t * (1.0 - t) * (1.0 - t);
    let s2 = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    (1.0 - s, -s1 / d, -s2 / (d * d))
}

/// Number of kernels, `2k + 1`. Index 0 is `Y0`, index `1 + 2i + j` is
/// `Y_{i,j}`.
pub fn kernel_count(params: &BubbleParams) -> usize {
    2 * params.k() + 1
}

/// Values `(Y_a(y), ΔY_a(y))` of every kernel at `y`, analytically.
pub fn kernel_values(domain: &TorusDomain, params: &BubbleParams, y: Point) -> Vec<(f64, f64)> {
    let k = params.k();
    let mu1 = params.mu_i[0];
    let mut out = vec![(0.0, 0.0); 2 * k + 1];
    out[0].0 = -1.0 / mu1;
    for i in 0..k {
        let disp = domain.min_image(y, params.centers[i]);
        let r2 = disp[0] * disp[0] + disp[1] * disp[1];
        let r = r2.sqrt();
        let di = params.d_i[i];
        if r >= 2.0 * di {
            continue;
        }
        let (c, c1, c2) = chi(r, di);
        let a = params.mu_i[i] * params.mu_i[i];
        let den = 1.0 + a * r2;
        // f = 1/(1 + a r^2)
        let f = 1.0 / den;
        let f1 = -2.0 * a * r / (den * den);
        let f1_over_r = -2.0 * a / (den * den);
        let lap_f = -4.0 * a * (1.0 - a * r2) / (den * den * den);
        let lap_chi = if r > 0.0 { c2 + c1 / r } else { 0.0 };
        // Y0 bump: (2/μ1) χ f
        let s = 2.0 / mu1;
        out[0].0 += s * c * f;
        out[0].1 += s * (c * lap_f + 2.0 * c1 * f1 + f * lap_chi);
        // Y_ij = χ a disp_j f
        let q = a * f;
        let q1 = a * f1;
        let lap_q = a * lap_f;
        for j in 0..2 {
            let psi = disp[j] * q;
            let lap_psi = disp[j] * (lap_q + 2.0 * a * f1_over_r);
            let cross = if r > 0.0 { c1 * (disp[j] / r) * (q + r * q1) } else { 0.0 };
            out[1 + 2 * i + j] = (c * psi, c * lap_psi + 2.0 * cross + psi * lap_chi);
        }
    }
    out
}

/// Grid samples of the kernels `Y_a` and `Z_a = -ΔY_a + h_μ Y_a`.
#[derive(Clone, Debug)]
pub struct KernelSet {
    pub y: Vec<Field>,
    pub z: Vec<Field>,
    /// `L Y_a = ΔY_a + h_μ Y_a`.
    pub ly: Vec<Field>,
    pub h: Field,
}

impl KernelSet {
    pub fn build(domain: &TorusDomain, params: &BubbleParams) -> Self {
        let m = kernel_count(params);
        let n = domain.len();
        let mut y = vec![vec![0.0; n]; m];
        let mut z = vec![vec![0.0; n]; m];
        let mut ly = vec![vec![0.0; n]; m];
        let mut h = vec![0.0; n];
        let samples: Vec<Vec<(f64, f64)>> = crate::par::map(n, |idx| kernel_values(domain, params, domain.node(idx)));
        for idx in 0..n {
            let hy = h_mu(domain, params, domain.node(idx));
            h[idx] = hy;
            for a in 0..m {
                let (v, lap) = samples[idx][a];
                y[a][idx] = v;
                z[a][idx] = -lap + hy * v;
                ly[a][idx] = lap + hy * v;
            }
        }
        let wrap = |v: Vec<Vec<f64>>| v.into_iter().map(|x| Field::new(domain, x).unwrap()).collect();
        Self { y: wrap(y), z: wrap(z), ly: wrap(ly), h: Field::new(domain, h).unwrap() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `M_ab = ∫ Y_a Z_b` (grid quadrature).
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.len();
        DMatrix::from_fn(m, m, |a, b| inner(&self.y[a], &self.z[b]))
    }

    /// `Q f = f - Σ c_b Z_b` with `∫ Y_a Q f = 0` for every `a`. Returns the
    /// projected field and the coefficients (`c0` first, then `c_ij`).
    pub fn project(&self, f: &Field) -> Result<(Field, Vec<f64>)> {
        let gram = self.gram();
        let rhs = DVector::from_iterator(self.len(), self.y.iter().map(|ya| inner(ya, f)));
        let c = solve_gram(&gram, &rhs)?;
        let mut out = f.values.clone();
        for (b, zb) in self.z.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&zb.values) {
                *o -= c[b] * v;
            }
        }
        Ok((Field::new(&f.domain, out)?, c.iter().copied().collect()))
    }
}

/// Grid inner product `∫ f g`.
pub fn inner(f: &Field, g: &Field) -> f64 {
    f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * f.domain.cell_area()
}

/// LU solve with a reciprocal-condition check.
pub fn solve_gram(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sv = gram.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond > 1e-13) {
        return Err(Error::ProjectionDegenerate { rcond });
    }
    gram.clone().lu().solve(rhs).ok_or(Error::ProjectionDegenerate { rcond })
}

/// Weighted norms of the reduction spaces.
#[derive(Clone, Copy, Debug)]
pub struct WeightedNorms {
    pub alpha: f64,
    pub angular: usize,
    pub upsample: usize,
}

impl Default for WeightedNorms {
    fn default() -> Self {
        Self { alpha: 0.4, angular: 64, upsample: 4 }
    }
}

impl WeightedNorms {
    /// `ρ(y) = (1 + |y|)^{1 + α/2}`.
    pub fn rho(&self, s: f64) -> f64 {
        (1.0 + s).powf(1.0 + 0.5 * self.alpha)
    }

    /// `ρ̂(y) = 1 / ((1 + |y|)(ln(2 + |y|))^{1 + α/2})`.
    pub fn rho_hat(&self, s: f64) -> f64 {
        1.0 / ((1.0 + s) * (2.0 + s).ln().powf(1.0 + 0.5 * self.alpha))
    }

    fn ball_breaks(&self, params: &BubbleParams, i: usize) -> Vec<f64> {
        let di = params.d_i[i];
        merge_breaks(&graded_breaks(0.0, di, 1.0 / params.mu_i[i]), &[1.5 * di, 2.0 * di])
    }

    /// `Σ_i ∫_{B_{2 d_i μ_i}} (w(ξ~_i) ρ)^2` in rescaled coordinates, written
    /// back in physical coordinates: `μ_i^2 ∫_{B_{2 d_i}} w(ξ(y))^2 ρ(μ_i r)^2 dy`.
    fn rescaled_ball(&self, params: &BubbleParams, i: usize, weight: impl Fn(f64) -> f64, f: &dyn Fn(Point) -> f64) -> f64 {
        let rule = GaussLegendre::new(16);
        let x = params.centers[i];
        let mu = params.mu_i[i];
        let v = polar_integral(&self.ball_breaks(params, i), self.angular, &rule, |a, b| {
            let r = a.hypot(b);
            let w = weight(mu * r);
            let val = f([x[0] + a, x[1] + b]);
            val * val * w * w
        });
        mu * mu * v
    }

    /// `∫_{Ω∖Ω'} f^2`, `Ω' = ∪ B_{d_i}`.
    fn exterior_l2_sq(&self, domain: &TorusDomain, params: &BubbleParams, grid: &[f64], f: &dyn Fn(Point) -> f64) -> f64 {
        let patches: Vec<PolarPatch> = params.patches();
        let sq: Vec<f64> = grid.iter().map(|v| v * v).collect();
        domain.split_integral(&sq, &patches, self.angular, |y| {
            for i in 0..params.k() {
                if domain.distance(y, params.centers[i]) < params.d_i[i] {
                    return 0.0;
                }
            }
            let v = f(y);
            v * v
        })
    }

    /// Squared Y-norm of a function given pointwise and on the grid.
    pub fn norm_y_sq_fn(&self, domain: &TorusDomain, params: &BubbleParams, grid: &[f64], f: &dyn Fn(Point) -> f64) -> f64 {
        let mut total = 0.0;
        for i in 0..params.k() {
            let mu4 = params.mu_i[i].powi(4);
            total += self.rescaled_ball(params, i, |s| self.rho(s), f) / mu4;
        }
        total + self.exterior_l2_sq(domain, params, grid, f)
    }

    pub fn norm_y_fn(&self, domain: &TorusDomain, params: &BubbleParams, grid: &[f64], f: &dyn Fn(Point) -> f64) -> f64 {
        self.norm_y_sq_fn(domain, params, grid, f).sqrt()
    }

    /// Y-norm of a grid field (bicubic interpolation after spectral
    /// upsampling for the rescaled samples).
    pub fn norm_y(&self, f: &Field, params: &BubbleParams) -> Result<f64> {
        let it = f.interpolator(self.upsample)?;
        Ok(self.norm_y_fn(&f.domain, params, &f.values, &|y| it.eval(y)))
    }

    /// X-norm of a grid field.
    pub fn norm_x(&self, f: &Field, params: &BubbleParams) -> Result<f64> {
        let lap = f.laplacian();
        let it = f.interpolator(self.upsample)?;
        let lt = lap.interpolator(self.upsample)?;
        let mut total = 0.0;
        for i in 0..params.k() {
            let mu4 = params.mu_i[i].powi(4);
            // Δ_z ξ~ = μ_i^{-2} (Δξ)(x_i + z/μ_i)
            total += self.rescaled_ball(params, i, |s| self.rho(s), &|y| lt.eval(y)) / mu4;
            total += self.rescaled_ball(params, i, |s| self.rho_hat(s), &|y| it.eval(y));
        }
        total += self.exterior_l2_sq(&f.domain, params, &lap.values, &|y| lt.eval(y));
        total += self.exterior_l2_sq(&f.domain, params, &f.values, &|y| it.eval(y));
        Ok(total.sqrt())
    }
}

/// `ε^{-2} e^{U}(1 - e^{U})` with `U = u0 + W~ + η`: the nonlinearity without
/// its cubic correction.
pub fn truncated_nonlinearity(big_u: f64, eps: f64) -> f64 {
    let e = big_u.exp();
    e * (1.0 - e) / (eps * eps)
}

/// The equation residual `Δ(W~ + η) + N_ε(1 + u0 + W~ + η) - 4πN/|Ω|`,
/// pointwise from analytic `ΔW~` and grid data for `η`.
#[derive(Clone, Debug)]
pub struct ResidualParts {
    /// full residual on the grid
    pub full: Field,
    /// same with the nonlinearity replaced by its truncated form
    pub truncated: Field,
}

/// Residual fields for a candidate `η` (grid).
pub fn residual_fields(ansatz: &Ansatz, field: &AnsatzField, eta: &Field, eps: f64) -> Result<ResidualParts> {
    let domain = &ansatz.domain;
    let flux = 4.0 * std::f64::consts::PI * ansatz.cfg.total() as f64 / domain.area();
    let lap_w = Field::from_fn(domain, |y| ansatz.laplacian_w_tilde(y));
    let lap_eta = eta.laplacian();
    let u = field.candidate_u(eta)?;
    let v = higgs::f_inverse_field(&u)?;
    let n = domain.len();
    let mut full = vec![0.0; n];
    let mut trunc = vec![0.0; n];
    for i in 0..n {
        let base = lap_w.values[i] + lap_eta.values[i] - flux;
        full[i] = base + higgs::nonlinearity_of_v(v.values[i], eps);
        trunc[i] = base + truncated_nonlinearity(u.values[i] - 1.0, eps);
    }
    Ok(ResidualParts { full: Field::new(domain, full)?, truncated: Field::new(domain, trunc)? })
}

/// Ansatz residual (`η = 0`) at an arbitrary point.
pub fn ansatz_residual_at(ansatz: &Ansatz, field: &AnsatzField, eps: f64, y: Point) -> Result<f64> {
    let flux = 4.0 * std::f64::consts::PI * ansatz.cfg.total() as f64 / ansatz.domain.area();
    let u0 = ansatz.g.u0(&ansatz.cfg, y).unwrap_or(f64::NEG_INFINITY);
    let u = 1.0 + u0 + ansatz.w_tilde_at(y, field);
    let n = higgs::nonlinearity(u, eps)?;
    Ok(ansatz.laplacian_w_tilde(y) + n - flux)
}

/// `∫ residual · Y_a` for every kernel, grid quadrature.
pub fn project_onto_kernels(residual: &Field, kernels: &KernelSet) -> Vec<f64> {
    kernels.y.iter().map(|y| inner(residual, y)).collect()
}

/// Projected residuals `R_a = ∫ [Δη + N_ε(u) + ΔW~ - 8kπ] Y_a` and the
/// same with the truncated nonlinearity.
pub fn projected_residuals(
    ansatz: &Ansatz,
    field: &AnsatzField,
    eta: &Field,
    eps: f64,
    kernels: &KernelSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let parts = residual_fields(ansatz, field, eta, eps)?;
    Ok((project_onto_kernels(&parts.full, kernels), project_onto_kernels(&parts.truncated, kernels)))
}

/// Options of the inner `(η, c)` Newton solve.
#[derive(Clone, Copy, Debug)]
pub struct InnerOptions {
    /// Stop when `sup|E - Σ c Z| <= tol * 4πN/|Ω|`.
    pub tol: f64,
    pub max_iter: usize,
    pub gmres: GmresOptions,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 30, gmres: GmresOptions { restart: 100, max_iter: 1500, rel_tol: 1e-11 } }
    }
}

/// Solution of `Δφ + N_ε(u0 + φ) - 4πN/|Ω| = Σ c_a Z_a`, `∫ Y_a η = 0`, with
/// `φ = 1 + W~ + η`.
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub phi: Field,
    pub eta: Field,
    /// `c0` then `c_ij`.
    pub c: Vec<f64>,
    /// `R_a = ∫ E(φ) Y_a`.
    pub projected: Vec<f64>,
    /// Same with the truncated nonlinearity `ε^{-2} e^U (1 - e^U)`.
    pub projected_truncated: Vec<f64>,
    pub newton_trace: Vec<f64>,
    pub linear_iterations: usize,
}

/// Bordered Newton-Krylov solve for `(η, c)`.
pub fn solve_inner(
    eq: &Equation,
    field: &AnsatzField,
    kernels: &KernelSet,
    eta0: Option<&Field>,
    opts: InnerOptions,
) -> Result<InnerSolution> {
    let dom = &eq.domain;
    let n = dom.len();
    let m = kernels.len();
    let cell = dom.cell_area();
    let ynorm: Vec<f64> = kernels.y.iter().map(Field::l2_norm).collect();
    let znorm: Vec<f64> = kernels.z.iter().map(Field::l2_norm).collect();
    let yhat: Vec<Vec<f64>> = kernels.y.iter().zip(&ynorm).map(|(y, s)| y.values.iter().map(|v| v / s).collect()).collect();
    let zhat: Vec<Vec<f64>> = kernels.z.iter().zip(&znorm).map(|(z, s)| z.values.iter().map(|v| v / s).collect()).collect();
    let base = field.w_tilde.map(|w| 1.0 + w);
    let mut eta = match eta0 {
        Some(e) => e.clone(),
        None => Field::zeros(dom),
    };
    let mut ct = vec![0.0; m];
    let scale = eq.flux_density();
    let eval = |eta: &Field, ct: &[f64]| -> Result<(State, Vec<f64>, Vec<f64>)> {
        let phi = base.zip_map(eta, |a, b| a + b);
        let st = eq.state(&phi)?;
        let mut f1 = st.residual.values.clone();
        for (a, z) in zhat.iter().enumerate() {
            for (o, zv) in f1.iter_mut().zip(z) {
                *o -= ct[a] * zv;
            }
        }
        let f2: Vec<f64> = yhat.iter().map(|y| y.iter().zip(&eta.values).map(|(a, b)| a * b).sum::<f64>() * cell).collect();
        Ok((st, f1, f2))
    };
    let merit = |f1: &[f64], f2: &[f64]| {
        (f1.iter().map(|v| v * v).sum::<f64>() * cell + f2.iter().map(|v| v * v).sum::<f64>()).sqrt()
    };
    let (mut st, mut f1, mut f2) = eval(&eta, &ct)?;
    let sup = |f1: &[f64]| f1.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
    let mut trace = vec![sup(&f1)];
    let mut lin = 0;
    for _ in 0..opts.max_iter {
        let f2max = f2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if *trace.last().unwrap() <= opts.tol && f2max <= 1e-12 {
            break;
        }
        let s = crate::solver::preconditioner_shift(&st.dn);
        let dn = &st.dn;
        let apply = |x: &[f64]| {
            let de = Field::new(dom, x[..n].to_vec()).unwrap();
            let mut top = jacobian_apply(dn, &de).values;
            for (a, z) in zhat.iter().enumerate() {
                for (o, zv) in top.iter_mut().zip(z) {
                    *o -= x[n + a] * zv;
                }
            }
            for y in &yhat {
                top.push(y.iter().zip(&x[..n]).map(|(a, b)| a * b).sum::<f64>() * cell);
            }
            top
        };
        let precond = |x: &[f64]| {
            let mut out = Field::new(dom, x[..n].to_vec()).unwrap().shifted_solve(s).values;
            out.extend_from_slice(&x[n..]);
            out
        };
        let mut rhs: Vec<f64> = f1.iter().map(|v| -v).collect();
        rhs.extend(f2.iter().map(|v| -v));
        let out = gmres(apply, precond, &rhs, None, opts.gmres);
        lin += out.iterations;
        if !out.converged && out.residual > 1e-3 {
            return Err(Error::LinearSolveFailure { residual: out.residual, iterations: out.iterations });
        }
        let m0 = merit(&f1, &f2);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = Field::new(dom, (0..n).map(|i| eta.values[i] + alpha * out.x[i]).collect())?;
            let ctt: Vec<f64> = (0..m).map(|a| ct[a] + alpha * out.x[n + a]).collect();
            if let Ok((ts, t1, t2)) = eval(&trial, &ctt) {
                if merit(&t1, &t2) < (1.0 - 1e-4 * alpha) * m0 {
                    eta = trial;
                    ct = ctt;
                    st = ts;
                    f1 = t1;
                    f2 = t2;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        trace.push(sup(&f1));
        if !accepted {
            if *trace.last().unwrap() <= 10.0 * opts.tol {
                break;
            }
            return Err(Error::NonConvergence { reason: "inner line search exhausted".into(), trace });
        }
    }
    if *trace.last().unwrap() > 10.0 * opts.tol {
        return Err(Error::NonConvergence { reason: "inner solve did not reach tolerance".into(), trace });
    }
    let phi = base.zip_map(&eta, |a, b| a + b);
    let projected = project_onto_kernels(&st.residual, kernels);
    // truncated nonlinearity e^U(1 - e^U)/ε², U = u - 1
    let flux = eq.flux_density();
    let lap = phi.laplacian();
    let trunc = Field::new(
        dom,
        (0..n).map(|i| lap.values[i] + truncated_nonlinearity(eq.u0.values[i] + phi.values[i] - 1.0, eq.eps) - flux).collect(),
    )?;
    let projected_truncated = project_onto_kernels(&trunc, kernels);
    let c = (0..m).map(|a| ct[a] / znorm[a]).collect();
    Ok(InnerSolution { phi, eta, c, projected, projected_truncated, newton_trace: trace, linear_iterations: lin })
}

/// Options of the reduced `(x, μ)` solve. The μ-window is
/// `(β0/√ε, β1/√ε)`; the scan runs over `β = μ√ε` on a geometric grid.
#[derive(Clone, Copy, Debug)]
pub struct ReducedOptions {
    pub beta0: f64,
    pub beta1: f64,
    /// Ratio between neighbouring scan points.
    pub scan_ratio: f64,
    /// Where the scan starts; defaults to `√(β0 β1)`.
    pub beta_hint: Option<f64>,
    /// Window doublings (on each side) tried before giving up.
    pub widenings: usize,
    /// Bound on `|R_a| / (‖Y_a‖ ‖E‖)`, `E` the ansatz residual.
    pub tol_reduced: f64,
    pub max_root_iter: usize,
    pub max_x_steps: usize,
    pub fd_step: f64,
    /// Negative test: replace the D-term of `R0` by its opposite.
    pub flip_d_term: bool,
    /// `d` of the ansatz; `None` uses the default.
    pub d: Option<f64>,
    pub inner: InnerOptions,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self {
            beta0: 0.2,
            beta1: 5.0,
            scan_ratio: 1.25,
            beta_hint: None,
            widenings: 2,
            tol_reduced: 1e-8,
            max_root_iter: 40,
            max_x_steps: 4,
            fd_step: 1e-4,
            flip_d_term: false,
            d: None,
            inner: InnerOptions::default(),
        }
    }
}

/// Everything computed at one `(x, μ)`.
#[derive(Clone, Debug)]
pub struct ReducedPoint {
    pub params: BubbleParams,
    pub inner: InnerSolution,
    /// `R0` as used by the root search (D-term flipped if requested).
    pub r0: f64,
    /// `R_ij` in kernel order.
    pub rij: Vec<f64>,
    /// `R_a / (‖Y_a‖ ‖E‖)` for all kernels, `R0` first.
    pub normalized: Vec<f64>,
    /// `8/(ρ1 μ^3)` times the finite-radius bracket of `D`.
    pub d_term: f64,
}

impl ReducedPoint {
    pub fn mu(&self) -> f64 {
        self.params.mu
    }

    pub fn x(&self) -> &[Point] {
        &self.params.centers
    }
}

/// Outcome of [`ReducedProblem::solve`].
#[derive(Clone, Debug)]
pub struct ReducedSolution {
    pub point: ReducedPoint,
    pub beta: f64,
    /// The β-window that held the root (after any widening).
    pub window: (f64, f64),
    pub grad_g_star_norm: f64,
    /// `(μ, R0)` of every feasible scan point.
    pub scan: Vec<(f64, f64)>,
    /// `(μ, R0)` along the root iteration.
    pub root_trace: Vec<(f64, f64)>,
    pub evaluations: usize,
}

/// The reduced system at fixed `ε`.
pub struct ReducedProblem<'a> {
    pub eq: &'a Equation,
    pub g: &'a GreenEvaluator,
    pub cfg: &'a VortexConfig,
    pub opts: ReducedOptions,
}

fn infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidConfiguration(_)
            | Error::AnsatzInfeasible { .. }
            | Error::OutOfBranch { .. }
            | Error::NonConvergence { .. }
            | Error::LinearSolveFailure { .. }
            | Error::ProjectionDegenerate { .. }
    )
}

impl<'a> ReducedProblem<'a> {
    pub fn new(eq: &'a Equation, g: &'a GreenEvaluator, cfg: &'a VortexConfig, opts: ReducedOptions) -> Self {
        Self { eq, g, cfg, opts }
    }

    /// Inner solve and projections at `(x, μ)`.
    pub fn evaluate(&self, x: &[Point], mu: f64, eta0: Option<&Field>) -> Result<ReducedPoint> {
        let dom = &self.eq.domain;
        let params = BubbleParams::new(dom, self.g, self.cfg, x.to_vec(), mu, self.opts.d)?;
        let ansatz = Ansatz::new(dom, self.g, self.cfg, params.clone());
        let field = ansatz.build(self.eq.eps)?;
        let kernels = KernelSet::build(dom, &params);
        let e_norm = self.eq.residual(&field.w_tilde.map(|w| 1.0 + w))?.l2_norm();
        let inner = solve_inner(self.eq, &field, &kernels, eta0, self.opts.inner)?;
        let rc = ReducedConfig::voronoi(dom.periods(), &params.centers);
        let bracket = d_bracket(self.g, self.cfg, &rc, &params.d_i)?;
        let d_term = 8.0 / (params.rho[0] * mu.powi(3)) * bracket;
        let mut r0 = inner.projected[0];
        if self.opts.flip_d_term {
            // the computed R0 carries the D-term with a minus sign
            r0 += 2.0 * d_term;
        }
        let normalized: Vec<f64> = std::iter::once(r0)
            .chain(inner.projected[1..].iter().copied())
            .zip(&kernels.y)
            .map(|(r, y)| r / (y.l2_norm() * e_norm))
            .collect();
        let rij = inner.projected[1..].to_vec();
        Ok(ReducedPoint { params, inner, r0, rij, normalized, d_term })
    }

    fn evaluate_soft(&self, x: &[Point], mu: f64, eta0: Option<&Field>) -> Result<Option<ReducedPoint>> {
        match self.evaluate(x, mu, eta0) {
            Ok(p) => Ok(Some(p)),
            Err(e) if infeasible(&e) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Bracket a sign change of `R0` in `β`, widening the window as needed.
    fn bracket(&self, x: &[Point], hint: f64) -> Result<(ReducedPoint, ReducedPoint, (f64, f64), Vec<(f64, f64)>, usize)> {
        let eps = self.eq.eps;
        let o = &self.opts;
        if !(o.beta0 > 0.0 && o.beta1 > o.beta0 && o.scan_ratio > 1.0) {
            return Err(Error::InvalidArgument("need 0 < beta0 < beta1 and scan_ratio > 1".into()));
        }
        let lr = o.scan_ratio.ln();
        let hint = hint.clamp(o.beta0, o.beta1);
        let beta_of = |k: i64| hint * o.scan_ratio.powi(k as i32);
        let mut done: BTreeMap<i64, Option<ReducedPoint>> = BTreeMap::new();
        let mut evaluations = 0;
        let (mut b0, mut b1) = (o.beta0, o.beta1);
        for _round in 0..=o.widenings {
            let k_lo = ((b0 / hint).ln() / lr).ceil() as i64;
            let k_hi = ((b1 / hint).ln() / lr).floor() as i64;
            let mut order = vec![0i64];
            for s in 1..=(k_hi - k_lo).max(0) {
                order.push(s);
                order.push(-s);
            }
            for k in order.into_iter().filter(|k| (k_lo..=k_hi).contains(k)) {
                if done.contains_key(&k) {
                    continue;
                }
                let warm = [k - 1, k + 1]
                    .iter()
                    .find_map(|j| done.get(j).and_then(|p| p.as_ref()).map(|p| p.inner.eta.clone()));
                let p = self.evaluate_soft(x, beta_of(k) / eps.sqrt(), warm.as_ref())?;
                evaluations += 1;
                done.insert(k, p);
                for j in [k - 1, k] {
                    if let (Some(Some(a)), Some(Some(b))) = (done.get(&j), done.get(&(j + 1))) {
                        if a.r0.signum() != b.r0.signum() || a.r0 == 0.0 || b.r0 == 0.0 {
                            let scan = done.values().flatten().map(|p| (p.mu(), p.r0)).collect();
                            return Ok((a.clone(), b.clone(), (b0, b1), scan, evaluations));
                        }
                    }
                }
            }
            b0 *= 0.5;
            b1 *= 2.0;
        }
        let scan = done.values().flatten().map(|p| (p.mu(), p.r0)).collect();
        Err(Error::ReducedInfeasible { mu_lo: 2.0 * b0 / eps.sqrt(), mu_hi: 0.5 * b1 / eps.sqrt(), scan })
    }

    /// Brent's method for `R0(μ) = 0` on a bracket.
    fn root_in_mu(&self, x: &[Point], lo: ReducedPoint, hi: ReducedPoint, trace: &mut Vec<(f64, f64)>) -> Result<(ReducedPoint, usize)> {
        let tol = self.opts.tol_reduced;
        let (mut a, mut b) = (lo, hi);
        if a.r0.abs() < b.r0.abs() {
            std::mem::swap(&mut a, &mut b);
        }
        let mut c = a.clone();
        let mut d = b.mu() - a.mu();
        let mut e = d;
        let mut evals = 0;
        for _ in 0..self.opts.max_root_iter {
            trace.push((b.mu(), b.r0));
            if b.normalized[0].abs() <= tol {
                return Ok((b, evals));
            }
            if (b.r0 > 0.0) == (c.r0 > 0.0) {
                c = a.clone();
                d = b.mu() - a.mu();
                e = d;
            }
            if c.r0.abs() < b.r0.abs() {
                a = b;
                b = c.clone();
                c = a.clone();
            }
            let m = 0.5 * (c.mu() - b.mu());
            let step_tol = 1e-12 * b.mu();
            if m.abs() <= step_tol {
                break;
            }
            let (fa, fb, fc) = (a.r0, b.r0, c.r0);
            if e.abs() >= step_tol && fa.abs() > fb.abs() {
                let s = fb / fa;
                let (mut p, mut q) = if a.mu() == c.mu() {
                    (2.0 * m * s, 1.0 - s)
                } else {
                    let (qq, r) = (fa / fc, fb / fc);
                    (
                        s * (2.0 * m * qq * (qq - r) - (b.mu() - a.mu()) * (r - 1.0)),
                        (qq - 1.0) * (r - 1.0) * (s - 1.0),
                    )
                };
                if p > 0.0 {
                    q = -q;
                } else {
                    p = -p;
                }
                if 2.0 * p < (3.0 * m * q - (step_tol * q).abs()).min((e * q).abs()) {
                    e = d;
                    d = p / q;
                } else {
                    d = m;
                    e = m;
                }
            } else {
                d = m;
                e = m;
            }
            let next_mu = b.mu() + if d.abs() > step_tol { d } else { step_tol.copysign(m) };
            let p = self.evaluate(x, next_mu, Some(&b.inner.eta)).map_err(|err| Error::NonConvergence {
                reason: format!("reduced root search failed inside its bracket at mu = {next_mu:.6}: {err}"),
                trace: trace.iter().map(|t| t.1).collect(),
            })?;
            evals += 1;
            a = b;
            b = p;
        }
        if b.normalized[0].abs() <= tol {
            trace.push((b.mu(), b.r0));
            return Ok((b, evals));
        }
        Err(Error::NonConvergence {
            reason: format!("reduced root in mu stalled at normalized R0 = {:.3e}", b.normalized[0]),
            trace: trace.iter().map(|t| t.1).collect(),
        })
    }

    /// Solve `R0 = 0` in μ and `R_ij = 0` in `x` from the seed `x0`.
    pub fn solve(&self, x0: &[Point]) -> Result<ReducedSolution> {
        let eps = self.eq.eps;
        let o = &self.opts;
        let dom = &self.eq.domain;
        let mut x: Vec<Point> = x0.iter().map(|&p| dom.wrap(p)).collect();
        let mut hint = o.beta_hint.unwrap_or((o.beta0 * o.beta1).sqrt());
        let mut evaluations = 0;
        for step in 0..=o.max_x_steps {
            let (lo, hi, window, scan, n_scan) = self.bracket(&x, hint)?;
            let mut trace = Vec::new();
            let (point, n_root) = self.root_in_mu(&x, lo, hi, &mut trace)?;
            evaluations += n_scan + n_root;
            let worst = point.normalized[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if worst <= o.tol_reduced {
                let grad = grad_g_star(self.g, self.cfg, &x)?;
                return Ok(ReducedSolution {
                    beta: point.mu() * eps.sqrt(),
                    grad_g_star_norm: grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
                    point,
                    window,
                    scan,
                    root_trace: trace,
                    evaluations,
                });
            }
            if step == o.max_x_steps {
                return Err(Error::NonConvergence {
                    reason: format!("R_ij still {worst:.3e} (normalized) after {step} location updates"),
                    trace: trace.iter().map(|t| t.1).collect(),
                });
            }
            // forward-difference Jacobian of R_ij in the centers at fixed μ
            let m = point.rij.len();
            let mut jac = DMatrix::zeros(m, m);
            for col in 0..m {
                let mut xp = x.clone();
                xp[col / 2][col % 2] += o.fd_step;
                let pp = self.evaluate(&xp, point.mu(), Some(&point.inner.eta))?;
                evaluations += 1;
                for row in 0..m {
                    jac[(row, col)] = (pp.rij[row] - point.rij[row]) / o.fd_step;
                }
            }
            let rhs = DVector::from_iterator(m, point.rij.iter().map(|v| -v));
            let delta = jac.lu().solve(&rhs).ok_or_else(|| Error::NonConvergence {
                reason: "singular R_ij Jacobian in the centers".into(),
                trace: vec![worst],
            })?;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = dom.wrap([xi[0] + delta[2 * i], xi[1] + delta[2 * i + 1]]);
            }
            hint = point.mu() * eps.sqrt();
        }
        unreachable!("the loop returns on its last step")
    }

    /// `A0` from `R_ij ≈ A0 ∂G*/∂x_ij` at centers displaced by `h` from a
    /// solution, at the same μ.
    pub fn fit_a0(&self, sol: &ReducedPoint, h: f64) -> Result<f64> {
        let mut x = sol.x().to_vec();
        x[0][0] += h;
        x[0][1] += 0.5 * h;
        let p = self.evaluate(&x, sol.mu(), Some(&sol.inner.eta))?;
        let grad = grad_g_star(self.g, self.cfg, &x)?;
        let num: f64 = p.rij.iter().zip(&grad).map(|(r, gr)| r * gr).sum();
        let den: f64 = grad.iter().map(|gr| gr * gr).sum();
        Ok(num / den)
    }
}

/// `B0` from `R0 ≈ -D-term - B0 ε² μ` over `(ε, μ, R0, D-term)` rows (least
/// squares through the origin).
pub fn fit_b0(rows: &[(f64, f64, f64, f64)]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(eps, mu, r0, dt) in rows {
        let s = eps * eps * mu;
        num -= (r0 + dt) * s;
        den += s * s;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(n: usize, mu: f64) -> (TorusDomain, BubbleParams) {
        let d = TorusDomain::unit(n).unwrap();
        let g = GreenEvaluator::new(&d);
        let cfg = VortexConfig::simple(&d, vec![[0.25, 0.5], [0.75, 0.5]]).unwrap();
        let p = BubbleParams::new(&d, &g, &cfg, vec![[0.5, 0.0]], mu, Some(0.0625)).unwrap();
        (d, p)
    }

    #[test]
    fn h_mu_examples() {
        let (d, p) = params(64, 8.0);
        assert_eq!(h_mu(&d, &p, [0.5, 0.5]), 0.0);
        assert!((h_mu(&d, &p, p.centers[0]) - 8.0 * 64.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_laplacian_matches_finite_differences() {
        let (d, p) = params(64, 8.0);
        let x = p.centers[0];
        let h = 1e-4;
        for &(r, t) in &[(0.01, 0.3), (0.05, 1.1), (0.07, 2.0), (0.1, 4.0), (0.12, 5.5), (0.2, 0.7)] {
            let y = [x[0] + r * f64::cos(t), x[1] + r * f64::sin(t)];
            let at = |dx: f64, dy: f64| kernel_values(&d, &p, [y[0] + dx, y[1] + dy]);
            let c = at(0.0, 0.0);
            let xs: Vec<_> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&s| at(s * h, 0.0)).collect();
            let ys: Vec<_> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&s| at(0.0, s * h)).collect();
            for a in 0..c.len() {
                let d2 = |v: &Vec<Vec<(f64, f64)>>| (-v[0][a].0 + 16.0 * v[1][a].0 - 30.0 * c[a].0 + 16.0 * v[2][a].0 - v[3][a].0) / (12.0 * h * h);
                let fd = d2(&xs) + d2(&ys);
                assert!((fd - c[a].1).abs() < 1e-5 * (1.0 + c[a].1.abs()), "kernel {a} at r={r}: {fd} vs {}", c[a].1);
            }
        }
        let vals = kernel_values(&d, &p, x);
        assert_eq!(vals[1].0, 0.0);
        assert_eq!(vals[2].0, 0.0);
    }

    #[test]
    fn projection_properties() {
        let (d, p) = params(64, 8.0);
        let ks = KernelSet::build(&d, &p);
        let f = Field::from_fn(&d, |y| (2.0 * PI * y[0]).sin() + (y[1] * 6.0).cos());
        let (q, _) = ks.project(&f).unwrap();
        for ya in &ks.y {
            assert!(inner(&q, ya).abs() < 1e-9 * f.l2_norm());
        }
        let (qq, c2) = ks.project(&q).unwrap();
        assert!(qq.zip_map(&q, |a, b| a - b).sup_norm() < 1e-10 * q.sup_norm().max(1.0));
        assert!(c2.iter().all(|c| c.abs() < 1e-9));
        let (_, c) = ks.project(&ks.z[0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9 && c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn y_norm_of_constant() {
        let (d, p) = params(64, 8.0);
        let nrm = WeightedNorms::default();
        let one = Field::constant(&d, 1.0);
        let got = nrm.norm_y(&one, &p).unwrap().powi(2);
        let al = nrm.alpha;
        let big_r = 2.0 * p.d_i[0] * p.mu_i[0];
        let prim = |s: f64| (1.0 + s).powf(4.0 + al) / (4.0 + al) - (1.0 + s).powf(3.0 + al) / (3.0 + al);
        let ball = 2.0 * PI * (prim(big_r) - prim(0.0));
        let exact = ball / p.mu_i[0].powi(4) + 1.0 - PI * p.d_i[0] * p.d_i[0];
        assert!((got - exact).abs() < 1e-6 * exact, "{got} vs {exact}");
        assert_eq!(nrm.norm_y(&Field::zeros(&d), &p).unwrap(), 0.0);
    }

    #[test]
    fn z_matches_polar_formula() {
        let (d, p) = params(64, 8.0);
        let ks = KernelSet::build(&d, &p);
        let x = p.centers[0];
        let (a, di, mu1) = (p.mu_i[0].powi(2), p.d_i[0], p.mu_i[0]);
        // smoothstep S(t) = 6t^5 - 15t^4 + 10t^3 on t = (r - d)/d
        let cut = |r: f64| -> [f64; 3] {
            if r <= di || r >= 2.0 * di {
                return [if r <= di { 1.0 } else { 0.0 }, 0.0, 0.0];
            }
            let t = (r - di) / di;
            let s0 = ((6.0 * t - 15.0) * t + 10.0) * t.powi(3);
            let s1 = ((30.0 * t - 60.0) * t + 30.0) * t * t;
            let s2 = ((120.0 * t - 180.0) * t + 60.0) * t;
            [1.0 - s0, -s1 / di, -s2 / (di * di)]
        };
        let zmax: Vec<f64> = ks.z.iter().map(Field::sup_norm).collect();
        for idx in 0..d.len() {
            let y = d.node(idx);
            let e = d.min_image(y, x);
            let r = e[0].hypot(e[1]);
            let [c0, c1, c2] = cut(r);
            let den = 1.0 + a * r * r;
            let (f0, f1, f2) = (1.0 / den, -2.0 * a * r / (den * den), (6.0 * a * a * r * r - 2.0 * a) / den.powi(3));
            // radial profile of Y0 and of Y_ij / cos
            let g = [c0 * f0, c1 * f0 + c0 * f1, c2 * f0 + 2.0 * c1 * f1 + c0 * f2];
            let k = [r * f0, f0 + r * f1, 2.0 * f1 + r * f2];
            let h = [a * c0 * k[0], a * (c1 * k[0] + c0 * k[1]), a * (c2 * k[0] + 2.0 * c1 * k[1] + c0 * k[2])];
            let hy = h_mu(&d, &p, y);
            let y0 = -1.0 / mu1 + 2.0 / mu1 * g[0];
            let lap0 = 2.0 / mu1 * (g[2] + g[1] / r);
            let z0 = -lap0 + hy * y0;
            assert!((z0 - ks.z[0].values[idx]).abs() <= 1e-9 * zmax[0], "Z0 at {y:?}");
            for j in 0..2 {
                let cos = e[j] / r;
                let lap = (h[2] + h[1] / r - h[0] / (r * r)) * cos;
                let zj = -lap + hy * h[0] * cos;
                assert!((zj - ks.z[1 + j].values[idx]).abs() <= 1e-9 * zmax[1 + j], "Z_{j} at {y:?}");
            }
        }
    }

    #[test]
    fn cubic_correction_scaling() {
        // off-center bubble so the R_ij projections do not vanish by symmetry
        let d = TorusDomain::unit(256).unwrap();
        let g = GreenEvaluator::new(&d);
        let cfg = VortexConfig::simple(&d, vec![[0.25, 0.5], [0.75, 0.5]]).unwrap();
        let mus = [8.0, 16.0, 32.0, 64.0];
        let mut r0 = vec![];
        let mut rij = vec![];
        for &mu in &mus {
            let eps = 1.0 / (mu * mu);
            let p = BubbleParams::new(&d, &g, &cfg, vec![[0.45, 0.05]], mu, Some(0.0625)).unwrap();
            let f = Ansatz::new(&d, &g, &cfg, p.clone()).build(eps).unwrap();
            let ks = KernelSet::build(&d, &p);
            let u = f.candidate_u(&Field::zeros(&d)).unwrap();
            let diff = u.map(|v| higgs::nonlinearity(v, eps).unwrap() - truncated_nonlinearity(v - 1.0, eps));
            let pr = project_onto_kernels(&diff, &ks);
            r0.push(pr[0].abs());
            rij.push(pr[1].abs().max(pr[2].abs()));
        }
        let s0 = crate::quad::loglog_slope(&mus, &r0);
        let s1 = crate::quad::loglog_slope(&mus, &rij);
        assert!((-5.5..=-4.5).contains(&s0), "Y0 slope {s0}");
        assert!(s1 <= -2.7, "Y_ij slope {s1}");
    }
}
