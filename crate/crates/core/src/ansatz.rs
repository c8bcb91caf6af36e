//! Liouville bubbles glued to Green functions: the approximate bubbling
//! solution `u = 1 + u0 + W + eta`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::green::{GreenEvaluator, VortexConfig};
use crate::quad::{graded_breaks, polar_integral, GaussLegendre};
use crate::torus::{Field, Point, PolarPatch, TorusDomain};

/// `ln 8 mu^2 / (1 + mu^2 r^2)^2` as a function of the radius.
pub fn bubble_radial(mu: f64, r: f64) -> f64 {
    (8.0 * mu * mu).ln() - 2.0 * (mu * mu * r * r).ln_1p()
}

/// Liouville bubble centered at `x` (nearest-image distance).
pub fn bubble(domain: &TorusDomain, x: Point, mu: f64, y: Point) -> f64 {
    bubble_radial(mu, domain.distance(x, y))
}

/// `ρ_i = exp(8π γ(x_i,x_i) + 8π Σ_{j≠i} G(x_j,x_i) + u0(x_i))`.
pub fn rho_weights(g: &GreenEvaluator, cfg: &VortexConfig, centers: &[Point]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(centers.len());
    for (i, &xi) in centers.iter().enumerate() {
        let mut e = 8.0 * PI * g.gamma(xi, xi);
        for (j, &xj) in centers.iter().enumerate() {
            if j != i {
                e += 8.0 * PI
                    * g.green(xj, xi).map_err(|_| {
                        Error::InvalidConfiguration(format!("bubble centers {i} and {j} coincide"))
                    })?;
            }
        }
        e += g.u0(cfg, xi).map_err(|_| {
            Error::InvalidConfiguration(format!("bubble center {i} sits on a vortex point"))
        })?;
        out.push(e.exp());
    }
    Ok(out)
}

/// Default `d`: the square of a quarter of the smallest distance among the
/// centers and vortex points (`d` enters as `d_i^2 = d - 1/mu_i^2`).
pub fn default_d(domain: &TorusDomain, centers: &[Point], cfg: &VortexConfig) -> f64 {
    let mut pts: Vec<Point> = centers.to_vec();
    pts.extend(cfg.points.iter().copied());
    let mut m = 0.5 * domain.periods()[0].min(domain.periods()[1]);
    for i in 0..pts.len() {
        for j in 0..i {
            m = m.min(domain.distance(pts[i], pts[j]));
        }
    }
    (0.25 * m).powi(2)
}

/// Bubble locations and scales with derived quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct BubbleParams {
    pub centers: Vec<Point>,
    pub mu: f64,
    pub d: f64,
    pub mu_i: Vec<f64>,
    pub d_i: Vec<f64>,
    pub rho: Vec<f64>,
}

impl BubbleParams {
    /// Build and validate. `d = None` selects [`default_d`].
    pub fn new(
        domain: &TorusDomain,
        g: &GreenEvaluator,
        cfg: &VortexConfig,
        centers: Vec<Point>,
        mu: f64,
        d: Option<f64>,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidConfiguration("at least one bubble center is required".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        let centers: Vec<Point> = centers.iter().map(|&c| domain.wrap(c)).collect();
        let d = d.unwrap_or_else(|| default_d(domain, &centers, cfg));
        let rho = rho_weights(g, cfg, &centers)?;
        let mu_i: Vec<f64> = rho.iter().map(|r| (rho[0] / r).sqrt() * mu).collect();
        let mut d_i = Vec::with_capacity(mu_i.len());
        for (i, m) in mu_i.iter().enumerate() {
            let s = d - 1.0 / (m * m);
            if s <= 0.0 {
                return Err(Error::InvalidConfiguration(format!(
                    "d_{i}^2 = d - 1/mu_{i}^2 = {s:.3e} is not positive; increase mu or d"
                )));
            }
            d_i.push(s.sqrt());
        }
        let half = 0.5 * domain.periods()[0].min(domain.periods()[1]);
        for i in 0..centers.len() {
            if 2.0 * d_i[i] > half {
                return Err(Error::InvalidConfiguration(format!(
                    "cutoff ball {i} (2 d_i = {:.4}) does not fit in the torus",
                    2.0 * d_i[i]
                )));
            }
            for j in 0..i {
                let dist = domain.distance(centers[i], centers[j]);
                if dist <= d_i[i] + d_i[j] {
                    return Err(Error::InvalidConfiguration(format!("balls around centers {j} and {i} overlap")));
                }
            }
            for (j, p) in cfg.points.iter().enumerate() {
                if domain.distance(centers[i], *p) <= d_i[i] {
                    return Err(Error::InvalidConfiguration(format!(
                        "ball around center {i} contains vortex point {j}"
                    )));
                }
            }
        }
        Ok(Self { centers, mu, d, mu_i, d_i, rho })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// `1 - 1/(d mu_i^2)`.
    pub fn kappa(&self, i: usize) -> f64 {
        1.0 - 1.0 / (self.d * self.mu_i[i] * self.mu_i[i])
    }

    /// Leading mass factor `8^{k-1} ρ_1 / Π_{i>=2} μ_i^2`.
    pub fn mass_prefactor(&self) -> f64 {
        let k = self.k();
        let mut p = 8f64.powi(k as i32 - 1) * self.rho[0];
        for m in &self.mu_i[1..] {
            p /= m * m;
        }
        p
    }

    /// Polar patches for `split_integral`: kink at `d_i`, weight 1 up to
    /// `1.2 d_i`, zero from `1.9 d_i`.
    pub fn patches(&self) -> Vec<PolarPatch> {
        (0..self.k())
            .map(|i| PolarPatch {
                center: self.centers[i],
                kink: self.d_i[i],
                scale: 1.0 / self.mu_i[i],
                inner: 1.2 * self.d_i[i],
                outer: 1.9 * self.d_i[i],
            })
            .collect()
    }
}

/// Angular resolution of polar patches.
pub const PATCH_ANGULAR: usize = 64;

/// Evaluates the pieces of the ansatz at arbitrary points.
#[derive(Clone, Debug)]
pub struct Ansatz {
    pub domain: TorusDomain,
    pub g: GreenEvaluator,
    pub cfg: VortexConfig,
    pub params: BubbleParams,
}

/// Grid form of the ansatz.
#[derive(Clone, Debug)]
pub struct AnsatzField {
    pub w_tilde: Field,
    pub c_value: f64,
    pub components: Vec<Field>,
    pub mean_w_star: f64,
    pub u0: Field,
    /// `1 - 32 k π ε^2 ∫e^{2(u0+w)} / (∫e^{u0+w})^2`.
    pub discriminant: f64,
}

impl Ansatz {
    pub fn new(domain: &TorusDomain, g: &GreenEvaluator, cfg: &VortexConfig, params: BubbleParams) -> Self {
        Self { domain: domain.clone(), g: g.clone(), cfg: cfg.clone(), params }
    }

    /// Inner branch of `w*_i` (valid for `|y - x_i| < d_i`).
    pub fn w_star_inner(&self, i: usize, y: Point) -> f64 {
        let p = &self.params;
        let x = p.centers[i];
        bubble(&self.domain, x, p.mu_i[i], y) + 8.0 * PI * self.g.gamma(y, x) * p.kappa(i)
    }

    /// Outer branch of `w*_i`, with the constant read as the radial bubble
    /// profile at `d_i`.
    pub fn w_star_outer(&self, i: usize, y: Point) -> Result<f64> {
        let p = &self.params;
        let x = p.centers[i];
        let gy = self.g.green(y, x)?;
        Ok(bubble_radial(p.mu_i[i], p.d_i[i]) + 8.0 * PI * (gy + p.d_i[i].ln() / (2.0 * PI)) * p.kappa(i))
    }

    pub fn w_star_component(&self, i: usize, y: Point) -> f64 {
        let r = self.domain.distance(y, self.params.centers[i]);
        if r < self.params.d_i[i] {
            self.w_star_inner(i, y)
        } else {
            self.w_star_outer(i, y).unwrap_or(f64::NAN)
        }
    }

    /// `w*(y) = Σ_i w*_i(y)`.
    pub fn w_star(&self, y: Point) -> f64 {
        (0..self.params.k()).map(|i| self.w_star_component(i, y)).sum()
    }

    /// `∫_Ω w*_i` in closed form (uses `∫_Ω G(·, x) = 0`).
    pub fn integral_w_star_component(&self, i: usize) -> f64 {
        let p = &self.params;
        let (mu, di, kappa) = (p.mu_i[i], p.d_i[i], p.kappa(i));
        let area = self.domain.area();
        let s = mu * mu * di * di;
        // ∫_B u_i
        let int_u = PI * di * di * (8.0 * mu * mu).ln() - 2.0 * PI * ((1.0 + s) * s.ln_1p() - s) / (mu * mu);
        let outer_const = bubble_radial(mu, di) + 4.0 * kappa * di.ln();
        let ball = PI * di * di;
        // ∫_B (γ - G) = (1/2π) ∫_B ln r
        let log_part = 8.0 * PI * kappa * (0.5 * di * di * di.ln() - 0.25 * di * di);
        int_u + (area - ball) * outer_const + log_part
    }

    pub fn mean_w_star(&self) -> f64 {
        (0..self.params.k()).map(|i| self.integral_w_star_component(i)).sum::<f64>() / self.domain.area()
    }

    /// `u0(y) + w*(y) - mean(w*)`, or `-inf` on a vortex point.
    pub fn u0_plus_w(&self, y: Point, mean: f64) -> f64 {
        let u0 = self.g.u0(&self.cfg, y).unwrap_or(f64::NEG_INFINITY);
        u0 + self.w_star(y) - mean
    }

    /// `(∫ e^{u0+w}, ∫ e^{2(u0+w)})` with `w = w* - mean(w*)`.
    pub fn exp_moments(&self, u0_plus_w_grid: &[f64], mean: f64) -> (f64, f64) {
        let patches = self.params.patches();
        let e1: Vec<f64> = u0_plus_w_grid.iter().map(|v| v.exp()).collect();
        let e2: Vec<f64> = e1.iter().map(|v| v * v).collect();
        let a = self.domain.split_integral(&e1, &patches, PATCH_ANGULAR, |y| self.u0_plus_w(y, mean).exp());
        let b = self.domain.split_integral(&e2, &patches, PATCH_ANGULAR, |y| (2.0 * self.u0_plus_w(y, mean)).exp());
        (a, b)
    }

    /// `c(w)` from the moments, with its discriminant.
    pub fn c_from_moments(&self, a: f64, b: f64, eps: f64) -> Result<(f64, f64)> {
        let k = self.params.k() as f64;
        let disc = 1.0 - 32.0 * k * PI * eps * eps * b / (a * a);
        if disc < 0.0 || !disc.is_finite() {
            return Err(Error::AnsatzInfeasible { discriminant: disc });
        }
        let c = (16.0 * k * PI * eps * eps / (a * (1.0 + disc.sqrt()))).ln();
        Ok((c, disc))
    }

    pub fn c_of_w(&self, eps: f64) -> Result<f64> {
        let mean = self.mean_w_star();
        let grid = self.domain.sample(|y| self.u0_plus_w(y, mean));
        let (a, b) = self.exp_moments(&grid, mean);
        Ok(self.c_from_moments(a, b, eps)?.0)
    }

    /// Grid fields of `W~ = w* - mean(w*) + c(w)` and its pieces.
    pub fn build(&self, eps: f64) -> Result<AnsatzField> {
        let k = self.params.k();
        let components: Vec<Field> =
            (0..k).map(|i| Field::from_fn(&self.domain, |y| self.w_star_component(i, y))).collect();
        let mean = self.mean_w_star();
        let u0 = self.g.u0_field(&self.domain, &self.cfg)?;
        let mut w = Field::zeros(&self.domain);
        for c in &components {
            for (a, b) in w.values.iter_mut().zip(&c.values) {
                *a += b;
            }
        }
        let u0w: Vec<f64> = u0.values.iter().zip(&w.values).map(|(a, b)| a + b - mean).collect();
        let (a, b) = self.exp_moments(&u0w, mean);
        let (c, disc) = self.c_from_moments(a, b, eps)?;
        let w_tilde = w.map(|v| v - mean + c);
        Ok(AnsatzField { w_tilde, c_value: c, components, mean_w_star: mean, u0, discriminant: disc })
    }

    /// `∫_{B_{d_i}(x_i)} e^{w* + u0}` per bubble and `∫_Ω e^{w* + u0}`.
    pub fn masses(&self) -> (Vec<f64>, f64) {
        let p = &self.params;
        let rule = GaussLegendre::new(16);
        let local = (0..p.k())
            .map(|i| {
                let x = p.centers[i];
                let br = graded_breaks(0.0, p.d_i[i], 1.0 / p.mu_i[i]);
                polar_integral(&br, PATCH_ANGULAR, &rule, |s, t| self.u0_plus_w([x[0] + s, x[1] + t], 0.0).exp())
            })
            .collect();
        let grid = self.domain.sample(|y| self.u0_plus_w(y, 0.0));
        (local, self.exp_moments(&grid, 0.0).0)
    }

    /// Masses over their leading values `8^{k-1} ρ_1 / Π μ_i^2 · 8π`
    /// (local) and `· 8kπ` (global).
    pub fn mass_ratios(&self) -> (Vec<f64>, f64) {
        let (local, global) = self.masses();
        let lead = self.params.mass_prefactor() * 8.0 * PI;
        let k = self.params.k() as f64;
        (local.iter().map(|m| m / lead).collect(), global / (k * lead))
    }

    /// `W~` at an arbitrary point.
    pub fn w_tilde_at(&self, y: Point, ans: &AnsatzField) -> f64 {
        self.w_star(y) - ans.mean_w_star + ans.c_value
    }

    /// `ΔW~ = -h_μ + (8π/|Ω|) Σ κ_i`, exact (w* is C^1 across the circles).
    pub fn laplacian_w_tilde(&self, y: Point) -> f64 {
        let p = &self.params;
        let mut v = 0.0;
        for i in 0..p.k() {
            v += 8.0 * PI * p.kappa(i) / self.domain.area();
            let r = self.domain.distance(y, p.centers[i]);
            if r < p.d_i[i] {
                v -= bubble_radial(p.mu_i[i], r).exp();
            }
        }
        v
    }
}

impl AnsatzField {
    /// `1 + u0 + W~ + eta`.
    pub fn candidate_u(&self, eta: &Field) -> Result<Field> {
        if eta.domain != self.w_tilde.domain {
            return Err(Error::InvalidArgument("eta lives on a different grid".into()));
        }
        let v: Vec<f64> = (0..eta.values.len())
            .map(|i| 1.0 + self.u0.values[i] + self.w_tilde.values[i] + eta.values[i])
            .collect();
        Field::new(&eta.domain, v)
    }
}
