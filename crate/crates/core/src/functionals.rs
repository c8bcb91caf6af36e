//! Reduced energy `G*` on bubble locations, its critical points, the local
//! profiles `f_{q,i}` and the regularized quartic integral `D(q)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::ansatz::rho_weights;
use crate::error::{Error, ExtrapolationRow, Result};
use crate::green::{add2, scale2, GreenEvaluator, Mat2, Vec2, VortexConfig};
use crate::quad::{richardson, GaussLegendre};
use crate::torus::{Point, TorusDomain};

/// Rejects bubble locations on a vortex point or on each other.
pub fn check_admissible(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point]) -> Result<()> {
    let per = g.periods();
    let dist = |a: Point, b: Point| {
        let mut s = 0.0;
        for t in 0..2 {
            let mut d = (a[t] - b[t]) / per[t];
            d -= d.round();
            s += (d * per[t]).powi(2);
        }
        s.sqrt()
    };
    for (i, &qi) in q.iter().enumerate() {
        if !(qi[0].is_finite() && qi[1].is_finite()) {
            return Err(Error::InvalidConfiguration(format!("bubble location {i} is not finite")));
        }
        for (j, &p) in cfg.points.iter().enumerate() {
            if dist(qi, p) < 1e-10 {
                return Err(Error::InvalidConfiguration(format!("bubble location {i} sits on vortex point {j}")));
            }
        }
        for (j, &qj) in q.iter().enumerate().take(i) {
            if dist(qi, qj) < 1e-10 {
                return Err(Error::InvalidConfiguration(format!("bubble locations {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

/// `G*(q) = Σ u0(q_i) + 8π Σ_{i≠j} G(q_i, q_j)`.
pub fn g_star(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point]) -> Result<f64> {
    check_admissible(g, cfg, q)?;
    let mut s = 0.0;
    for (i, &qi) in q.iter().enumerate() {
        s += g.u0(cfg, qi)?;
        for (j, &qj) in q.iter().enumerate() {
            if i != j {
                s += 8.0 * PI * g.green(qi, qj)?;
            }
        }
    }
    Ok(s)
}

/// Gradient of `G*`, ordered `(q_1x, q_1y, q_2x, ...)`. The ordered pair sum
/// counts every pair twice, hence the `16π`.
pub fn grad_g_star(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point]) -> Result<Vec<f64>> {
    check_admissible(g, cfg, q)?;
    let mut out = vec![0.0; 2 * q.len()];
    for (i, &qi) in q.iter().enumerate() {
        let mut d = g.grad_u0(cfg, qi)?;
        for (j, &qj) in q.iter().enumerate() {
            if i != j {
                let gg = g.grad_green(qi, qj)?;
                d[0] += 16.0 * PI * gg[0];
                d[1] += 16.0 * PI * gg[1];
            }
        }
        out[2 * i] = d[0];
        out[2 * i + 1] = d[1];
    }
    Ok(out)
}

pub fn hessian_g_star(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point]) -> Result<DMatrix<f64>> {
    check_admissible(g, cfg, q)?;
    let k = q.len();
    let mut h = DMatrix::zeros(2 * k, 2 * k);
    let mut put = |i: usize, j: usize, m: Mat2| {
        for a in 0..2 {
            for b in 0..2 {
                h[(2 * i + a, 2 * j + b)] += m[a][b];
            }
        }
    };
    for (i, &qi) in q.iter().enumerate() {
        let mut diag = g.hess_u0(cfg, qi)?;
        for (j, &qj) in q.iter().enumerate() {
            if i != j {
                let hg = g.hess_green(qi, qj)?;
                diag = add2(diag, scale2(hg, 16.0 * PI));
                // G depends on q_i - q_j only
                put(i, j, scale2(hg, -16.0 * PI));
            }
        }
        put(i, i, diag);
    }
    Ok(h)
}

/// Result of a critical point search.
#[derive(Clone, Debug)]
pub struct CriticalPoint {
    pub q: Vec<Point>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub eigenvalues: Vec<f64>,
    pub min_abs_eigenvalue: f64,
    /// Set when the Hessian is numerically singular at the root.
    pub degenerate: bool,
    pub trace: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn wrap_point(per: [f64; 2], p: Point) -> Point {
    [p[0].rem_euclid(per[0]), p[1].rem_euclid(per[1])]
}

/// Damped Newton iteration on `∇G* = 0`.
pub fn find_critical_point(g: &GreenEvaluator, cfg: &VortexConfig, q0: &[Point]) -> Result<CriticalPoint> {
    const TOL: f64 = 1e-9;
    const MAX_ITER: usize = 100;
    check_admissible(g, cfg, q0)?;
    let per = g.periods();
    let mut q: Vec<Point> = q0.to_vec();
    let mut grad = grad_g_star(g, cfg, &q)?;
    let mut trace = vec![norm(&grad)];
    let mut iterations = 0;
    while norm(&grad) > TOL {
        if iterations == MAX_ITER {
            return Err(Error::SearchFailure { point: q, iterations, trace });
        }
        iterations += 1;
        let h = hessian_g_star(g, cfg, &q)?;
        let rhs = DVector::from_column_slice(&grad);
        let step = match h.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => rhs.clone(),
        };
        // keep each step well inside the admissible set
        let mut room = 0.5 * per[0].min(per[1]);
        for (i, &qi) in q.iter().enumerate() {
            for &p in &cfg.points {
                room = room.min(torus_dist(per, qi, p));
            }
            for &qj in q.iter().take(i) {
                room = room.min(torus_dist(per, qi, qj));
            }
        }
        let mut scale = (0.25 * room / step.norm()).min(1.0);
        let g0 = norm(&grad);
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<Point> = q
                .iter()
                .enumerate()
                .map(|(i, p)| wrap_point(per, [p[0] - scale * step[2 * i], p[1] - scale * step[2 * i + 1]]))
                .collect();
            if check_admissible(g, cfg, &trial).is_ok() {
                let gt = grad_g_star(g, cfg, &trial)?;
                if norm(&gt) < g0 || scale < 1e-3 {
                    q = trial;
                    grad = gt;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        trace.push(norm(&grad));
        if !accepted {
            return Err(Error::SearchFailure { point: q, iterations, trace });
        }
        for (i, &qi) in q.iter().enumerate() {
            let near_vortex = cfg.points.iter().any(|&p| torus_dist(per, qi, p) < 1e-6);
            let near_other = q.iter().take(i).any(|&qj| torus_dist(per, qi, qj) < 1e-6);
            if near_vortex || near_other {
                return Err(Error::SearchFailure { point: q, iterations, trace });
            }
        }
    }
    let h = hessian_g_star(g, cfg, &q)?;
    let eig = SymmetricEigen::new(h);
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let min_abs = eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let max_abs = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CriticalPoint {
        gradient_norm: norm(&grad),
        q,
        iterations,
        degenerate: min_abs <= 1e-8 * max_abs.max(1.0),
        min_abs_eigenvalue: min_abs,
        eigenvalues,
        trace,
    })
}

fn torus_dist(per: [f64; 2], a: Point, b: Point) -> f64 {
    let mut s = 0.0;
    for t in 0..2 {
        let mut d = (a[t] - b[t]) / per[t];
        d -= d.round();
        s += (d * per[t]).powi(2);
    }
    s.sqrt()
}

/// `f_{q,i}` at the lifted displacement `z = y - q_i` (the regular part
/// `γ(y, q_i)` uses `|z|`, which matters outside the nearest-image cell).
pub fn f_profile_lifted(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point], i: usize, z: Vec2) -> Result<f64> {
    let qi = q[i];
    let y = [qi[0] + z[0], qi[1] + z[1]];
    let r = z[0].hypot(z[1]);
    let mut s = if r == 0.0 { 0.0 } else { g.green(y, qi)? + r.ln() / (2.0 * PI) - g.gamma(qi, qi) };
    for (j, &qj) in q.iter().enumerate() {
        if j != i {
            s += g.green(y, qj)? - g.green(qi, qj)?;
        }
    }
    Ok(8.0 * PI * s + g.u0(cfg, y)? - g.u0(cfg, qi)?)
}

/// `f_{q,i}(y) = 8π(γ(y,q_i) - γ(q_i,q_i) + Σ_{j≠i}(G(y,q_j) - G(q_i,q_j))) + u0(y) - u0(q_i)`.
pub fn f_profile(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point], i: usize, y: Point) -> Result<f64> {
    let per = g.periods();
    let mut z = [0.0; 2];
    for t in 0..2 {
        let d = (y[t] - q[i][t]) / per[t];
        z[t] = (d - d.round()) * per[t];
    }
    f_profile_lifted(g, cfg, q, i, z)
}

/// Gradient of `f_{q,i}` at `q_i`.
pub fn grad_f_profile(g: &GreenEvaluator, cfg: &VortexConfig, q: &[Point], i: usize) -> Result<Vec2> {
    let qi = q[i];
    let mut d = g.grad_u0(cfg, qi)?;
    let own = g.grad_gamma(qi, qi);
    d[0] += 8.0 * PI * own[0];
    d[1] += 8.0 * PI * own[1];
    for (j, &qj) in q.iter().enumerate() {
        if j != i {
            let gg = g.grad_green(qi, qj)?;
            d[0] += 8.0 * PI * gg[0];
            d[1] += 8.0 * PI * gg[1];
        }
    }
    Ok(d)
}

/// A convex polygon around the origin (vertices counter-clockwise), a cell
/// in coordinates relative to its bubble location.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub vertices: Vec<Vec2>,
}

impl Cell {
    /// Rectangle `[-a/2, a/2] x [-b/2, b/2]`.
    pub fn rectangle(a: f64, b: f64) -> Self {
        let (x, y) = (0.5 * a, 0.5 * b);
        Self { vertices: vec![[-x, -y], [x, -y], [x, y], [-x, y]] }
    }

    /// Keep the half plane `z·p <= |p|^2 / 2`.
    fn clip(&self, p: Vec2) -> Self {
        let c = 0.5 * (p[0] * p[0] + p[1] * p[1]);
        let side = |v: Vec2| v[0] * p[0] + v[1] * p[1] - c;
        let n = self.vertices.len();
        let mut out = Vec::with_capacity(n + 1);
        for a in 0..n {
            let u = self.vertices[a];
            let v = self.vertices[(a + 1) % n];
            let (su, sv) = (side(u), side(v));
            if su <= 0.0 {
                out.push(u);
            }
            if (su < 0.0 && sv > 0.0) || (su > 0.0 && sv < 0.0) {
                let t = su / (su - sv);
                out.push([u[0] + t * (v[0] - u[0]), u[1] + t * (v[1] - u[1])]);
            }
        }
        Self { vertices: out }
    }

    /// Distance from the origin to the closest edge.
    pub fn inradius(&self) -> f64 {
        self.edges().map(|(_, _, _, c)| c).fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|a| {
                let (u, v) = (self.vertices[a], self.vertices[(a + 1) % n]);
                u[0] * v[1] - u[1] * v[0]
            })
            .sum::<f64>()
            * 0.5
    }

    /// `(theta_start, theta_end, unit normal, distance)` per edge.
    fn edges(&self) -> impl Iterator<Item = (f64, f64, Vec2, f64)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |a| {
            let u = self.vertices[a];
            let v = self.vertices[(a + 1) % n];
            let t0 = u[1].atan2(u[0]);
            let mut t1 = v[1].atan2(v[0]);
            if t1 <= t0 {
                t1 += 2.0 * PI;
            }
            let e = [v[0] - u[0], v[1] - u[1]];
            let len = e[0].hypot(e[1]);
            let nrm = [e[1] / len, -e[0] / len];
            let c = nrm[0] * u[0] + nrm[1] * u[1];
            (t0, t1, nrm, c)
        })
    }

    /// `∫_{cell ∖ B_r0} f(z) dz` in polar coordinates about the origin:
    /// Gauss-Legendre in the angle per edge and along each ray.
    pub fn integrate_outside(&self, r0: f64, quad: &CellQuadrature, f: impl Fn(Vec2) -> f64) -> f64 {
        let rule = GaussLegendre::new(quad.order);
        let mut total = 0.0;
        for (t0, t1, nrm, c) in self.edges() {
            let w = (t1 - t0) / quad.angular_panels as f64;
            for p in 0..quad.angular_panels {
                let a = t0 + p as f64 * w;
                for (theta, wt) in rule.on(a, a + w) {
                    let (ct, st) = (theta.cos(), theta.sin());
                    let big_r = c / (nrm[0] * ct + nrm[1] * st);
                    if big_r <= r0 {
                        continue;
                    }
                    // geometric radial panels
                    let mut lo = r0;
                    let mut ray = 0.0;
                    while lo < big_r {
                        let hi = (lo * quad.radial_ratio).min(big_r);
                        let hi = if big_r - hi < 0.25 * (hi - lo) { big_r } else { hi };
                        ray += rule.integrate(lo, hi, |r| r * f([r * ct, r * st]));
                        lo = hi;
                    }
                    total += wt * ray;
                }
            }
        }
        total
    }

    /// `∫_{cell ∖ B_r0} |z|^{-4} dz`, exact along each ray.
    pub fn quartic_outside(&self, r0: f64, quad: &CellQuadrature) -> f64 {
        let rule = GaussLegendre::new(quad.order);
        let mut total = 0.0;
        for (t0, t1, nrm, c) in self.edges() {
            let w = (t1 - t0) / quad.angular_panels as f64;
            for p in 0..quad.angular_panels {
                let a = t0 + p as f64 * w;
                total += rule.integrate(a, a + w, |theta| {
                    let big_r = c / (nrm[0] * theta.cos() + nrm[1] * theta.sin());
                    if big_r <= r0 {
                        0.0
                    } else {
                        0.5 * (1.0 / (r0 * r0) - 1.0 / (big_r * big_r))
                    }
                });
            }
        }
        total
    }
}

/// Voronoi cells of `q` under the torus metric, each relative to its point.
pub fn voronoi_cells(periods: [f64; 2], q: &[Point]) -> Vec<Cell> {
    q.iter()
        .enumerate()
        .map(|(i, &qi)| {
            let mut cell = Cell::rectangle(periods[0], periods[1]);
            for (j, &qj) in q.iter().enumerate() {
                if j == i {
                    continue;
                }
                let mut z = [0.0; 2];
                for t in 0..2 {
                    let d = (qj[t] - qi[t]) / periods[t];
                    z[t] = (d - d.round()) * periods[t];
                }
                for a in -1..=1 {
                    for b in -1..=1 {
                        cell = cell.clip([z[0] + a as f64 * periods[0], z[1] + b as f64 * periods[1]]);
                    }
                }
            }
            cell
        })
        .collect()
}

/// Quadrature parameters for the cell integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellQuadrature {
    pub order: usize,
    pub angular_panels: usize,
    pub radial_ratio: f64,
    /// Uniform angular nodes on the rings near the center (even).
    pub ring_angular: usize,
}

impl Default for CellQuadrature {
    fn default() -> Self {
        Self { order: 20, angular_panels: 6, radial_ratio: 1.6, ring_angular: 64 }
    }
}

/// Bubble locations, their cells and the `r -> 0` schedule for `D(q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedConfig {
    pub q: Vec<Point>,
    pub partition: Vec<Cell>,
    pub quadrature: CellQuadrature,
    /// Decreasing inner radii `r_m = r0 2^{-m}`.
    pub r_sequence: Vec<f64>,
}

impl ReducedConfig {
    /// Voronoi partition, `r0` a quarter of the smallest inradius, eight
    /// halvings.
    pub fn voronoi(periods: [f64; 2], q: &[Point]) -> Self {
        let partition = voronoi_cells(periods, q);
        let r0 = 0.25 * partition.iter().map(Cell::inradius).fold(f64::INFINITY, f64::min);
        let r_sequence = (1..=8).map(|m| r0 * 0.5f64.powi(m)).collect();
        Self { q: q.to_vec(), partition, quadrature: CellQuadrature::default(), r_sequence }
    }

    pub fn with_partition(mut self, partition: Vec<Cell>) -> Self {
        self.partition = partition;
        self
    }

    /// Radius separating the ring quadrature from the cell quadrature.
    pub fn ring_radius(&self) -> f64 {
        2.0 * self.r_sequence[0]
    }
}

/// `D(q)` with its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct DqReport {
    pub value: f64,
    pub r_tail: Vec<ExtrapolationRow>,
    /// `Σ ρ_i ∫_{R^2 ∖ Ω_i} |y - q_i|^{-4}`.
    pub farfield_tail: f64,
    /// `ρ_i` times the extrapolated per-bubble bracket.
    pub per_bubble: Vec<f64>,
    pub rho: Vec<f64>,
}

impl DqReport {
    pub fn negative(&self) -> bool {
        self.value < 0.0
    }

    /// Extrapolation table as CSV.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("r,partial_sum,extrapolant\n");
        for row in &self.r_tail {
            let _ = writeln!(s, "{:.17e},{:.17e},{:.17e}", row.r, row.partial_sum, row.extrapolant);
        }
        s
    }
}

/// `∫_{B_b ∖ B_a} f` on rings with uniform angular nodes, so odd and
/// harmonic angular modes integrate to zero exactly.
pub fn ring_integral(a: f64, b: f64, angular: usize, order: usize, f: impl Fn(Vec2) -> f64) -> f64 {
    let rule = GaussLegendre::new(order);
    let dtheta = 2.0 * PI / angular as f64;
    let trig: Vec<(f64, f64)> = (0..angular).map(|m| ((m as f64 * dtheta).cos(), (m as f64 * dtheta).sin())).collect();
    let mut total = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (2.0 * lo).min(b);
        for (r, w) in rule.on(lo, hi) {
            let s: f64 = trig.iter().map(|&(c, sn)| f([r * c, r * sn])).sum();
            total += w * r * s * dtheta;
        }
        lo = hi;
    }
    total
}

/// The `r -> 0` limit for a generic numerator `num_i(z)` standing in for
/// `e^{f_i} - 1`. `lin[i]` is its gradient at the center, subtracted on the
/// rings (odd, integrates to zero).
pub fn d_limit(
    rc: &ReducedConfig,
    rho: &[f64],
    lin: &[Vec2],
    num: &(dyn Fn(usize, Vec2) -> f64 + Sync),
) -> Result<DqReport> {
    let k = rc.q.len();
    let quad = rc.quadrature;
    let r_ring = rc.ring_radius();
    let mut outer = vec![0.0; k];
    let mut tail = vec![0.0; k];
    let mut rings = vec![vec![0.0; rc.r_sequence.len()]; k];
    for i in 0..k {
        let cell = &rc.partition[i];
        if cell.inradius() <= r_ring {
            return Err(Error::InvalidConfiguration(format!("cell {i} is too small for the ring radius")));
        }
        outer[i] = cell.integrate_outside(r_ring, &quad, |z| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            num(i, z) / (r2 * r2)
        });
        let r_in = cell.inradius();
        tail[i] = PI / (r_in * r_in) - cell.quartic_outside(r_in, &quad);
        let l = lin[i];
        let mut acc = 0.0;
        let mut hi = r_ring;
        for (m, &r) in rc.r_sequence.iter().enumerate() {
            acc += ring_integral(r, hi, quad.ring_angular, quad.order, |z| {
                let r2 = z[0] * z[0] + z[1] * z[1];
                (num(i, z) - l[0] * z[0] - l[1] * z[1]) / (r2 * r2)
            });
            rings[i][m] = acc;
            hi = r;
        }
    }
    let partial: Vec<f64> = (0..rc.r_sequence.len())
        .map(|m| (0..k).map(|i| rho[i] * (outer[i] + rings[i][m] - tail[i])).sum())
        .collect();
    // partial sums converge like r^2 (odd and harmonic modes cancel)
    let diag = richardson(&partial, 2.0, 2.0);
    let table: Vec<ExtrapolationRow> = rc
        .r_sequence
        .iter()
        .zip(partial.iter().zip(&diag))
        .map(|(&r, (&p, &e))| ExtrapolationRow { r, partial_sum: p, extrapolant: e })
        .collect();
    let m = diag.len();
    let value = diag[m - 1];
    let spread = (diag[m - 1] - diag[m - 2]).abs();
    if !(spread <= 1e-4 * (1.0 + value.abs())) {
        return Err(Error::LimitUnstable { spread, table });
    }
    let last = rc.r_sequence.len() - 1;
    // per bubble: extrapolate each bracket separately
    let per_bubble = (0..k)
        .map(|i| {
            let seq: Vec<f64> = rings[i].iter().map(|v| rho[i] * (outer[i] + v - tail[i])).collect();
            richardson(&seq, 2.0, 2.0)[last]
        })
        .collect();
    Ok(DqReport {
        value,
        r_tail: table,
        farfield_tail: (0..k).map(|i| rho[i] * tail[i]).sum(),
        per_bubble,
        rho: rho.to_vec(),
    })
}

/// `D(q) = lim_{r→0} Σ ρ_i (∫_{Ω_i ∖ B_r(q_i)} (e^{f_{q,i}} - 1)/|y - q_i|^4 - ∫_{R^2 ∖ Ω_i} |y - q_i|^{-4})`.
pub fn d_of_q(g: &GreenEvaluator, cfg: &VortexConfig, rc: &ReducedConfig) -> Result<DqReport> {
    let q = &rc.q;
    check_admissible(g, cfg, q)?;
    let rho = rho_weights(g, cfg, q)?;
    let lin: Vec<Vec2> = (0..q.len()).map(|i| grad_f_profile(g, cfg, q, i)).collect::<Result<_>>()?;
    let num = |i: usize, z: Vec2| match f_profile_lifted(g, cfg, q, i, z) {
        Ok(f) => f.exp_m1(),
        // vortex points: e^f vanishes there
        Err(_) => -1.0,
    };
    d_limit(rc, &rho, &lin, &num)
}

/// The bracket of `D` at finite excision radii `r_i`:
/// `Σ ρ_i (∫_{Ω_i ∖ B_{r_i}(q_i)} (e^{f_{q,i}} - 1)/|y - q_i|^4 - ∫_{R^2 ∖ Ω_i} |y - q_i|^{-4})`.
/// Tends to `D(q)` as the radii shrink.
pub fn d_bracket(g: &GreenEvaluator, cfg: &VortexConfig, rc: &ReducedConfig, radii: &[f64]) -> Result<f64> {
    let q = &rc.q;
    if radii.len() != q.len() {
        return Err(Error::InvalidArgument(format!("{} radii for {} centers", radii.len(), q.len())));
    }
    check_admissible(g, cfg, q)?;
    let rho = rho_weights(g, cfg, q)?;
    let quad = rc.quadrature;
    let mut total = 0.0;
    for (i, cell) in rc.partition.iter().enumerate() {
        let r_in = cell.inradius();
        if !(radii[i] > 0.0 && radii[i] < r_in) {
            return Err(Error::InvalidConfiguration(format!("radius {} does not fit in cell {i}", radii[i])));
        }
        let inner = cell.integrate_outside(radii[i], &quad, |z| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            let e = match f_profile_lifted(g, cfg, q, i, z) {
                Ok(f) => f.exp_m1(),
                Err(_) => -1.0,
            };
            e / (r2 * r2)
        });
        let tail = PI / (r_in * r_in) - cell.quartic_outside(r_in, &quad);
        total += rho[i] * (inner - tail);
    }
    Ok(total)
}

/// Same limit written with the periodic density
/// `H(y) = exp(8π Σ_j G(y, q_j) + u0(y))`: `D = lim (∫_{Ω ∖ ∪B_r} H - Σ ρ_i π / r^2)`.
/// Independent of any partition; used as a cross-check.
pub fn d_of_q_periodic(g: &GreenEvaluator, cfg: &VortexConfig, domain: &TorusDomain, q: &[Point]) -> Result<DqReport> {
    let rc = ReducedConfig::voronoi(domain.periods(), q);
    let rho = rho_weights(g, cfg, q)?;
    let lin: Vec<Vec2> = (0..q.len()).map(|i| grad_f_profile(g, cfg, q, i)).collect::<Result<_>>()?;
    // H |z|^4 / ρ_i - 1 on cell i equals e^{f_i} - 1
    let num = |i: usize, z: Vec2| {
        let y = [q[i][0] + z[0], q[i][1] + z[1]];
        let mut e = 0.0;
        for &qj in q {
            match g.green(y, qj) {
                Ok(v) => e += 8.0 * PI * v,
                Err(_) => return -1.0,
            }
        }
        match g.u0(cfg, y) {
            Ok(u) => e += u,
            Err(_) => return -1.0,
        }
        let r2 = z[0] * z[0] + z[1] * z[1];
        (e.exp() * r2 * r2 / rho[i]) - 1.0
    };
    d_limit(&rc, &rho, &lin, &num)
}
