//! Doubly periodic Green function by Ewald splitting, its regular part, and
//! the vortex background `u0`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::{e1, ein, EULER_GAMMA};
use crate::torus::{Field, LogSingularity, Point, TorusDomain};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Vortex points with multiplicities.
#[derive(Clone, Debug, PartialEq)]
pub struct VortexConfig {
    pub points: Vec<Point>,
    pub multiplicities: Vec<u32>,
}

impl VortexConfig {
    /// Validates distinctness on the torus, positive multiplicities and an
    /// even total count.
    pub fn new(domain: &TorusDomain, points: Vec<Point>, multiplicities: Vec<u32>) -> Result<Self> {
        if points.len() != multiplicities.len() {
            return Err(Error::InvalidConfiguration("points and multiplicities differ in length".into()));
        }
        if multiplicities.contains(&0) {
            return Err(Error::InvalidConfiguration("multiplicities must be positive".into()));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if domain.distance(points[i], points[j]) < 1e-12 {
                    return Err(Error::InvalidConfiguration(format!(
                        "vortex points {j} and {i} coincide on the torus"
                    )));
                }
            }
        }
        let cfg = Self { points: points.iter().map(|&p| domain.wrap(p)).collect(), multiplicities };
        if !cfg.total().is_multiple_of(2) {
            return Err(Error::InvalidConfiguration(format!(
                "total vortex number N = {} must be even",
                cfg.total()
            )));
        }
        Ok(cfg)
    }

    /// Simple vortices, multiplicity one each.
    pub fn simple(domain: &TorusDomain, points: Vec<Point>) -> Result<Self> {
        let m = vec![1; points.len()];
        Self::new(domain, points, m)
    }

    pub fn empty() -> Self {
        Self { points: Vec::new(), multiplicities: Vec::new() }
    }

    /// `N`, counted with multiplicity.
    pub fn total(&self) -> u32 {
        self.multiplicities.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.total() as usize / 2
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points.iter().zip(&self.multiplicities).map(|(&p, &m)| (p, m as f64))
    }
}

struct Mode {
    k: Vec2,
    /// `e^{-tau |k|^2} / (A |k|^2)`, doubled to account for `-k`.
    weight: f64,
}

/// Ewald evaluator for `G`, with `-ΔG = δ - 1/|Ω|` and zero mean.
#[derive(Clone)]
pub struct GreenEvaluator {
    periods: [f64; 2],
    tau: f64,
    fourier_cutoff: i64,
    real_cutoff: i64,
    modes: std::sync::Arc<Vec<Mode>>,
    images: std::sync::Arc<Vec<Vec2>>,
    real_radius: f64,
}

impl std::fmt::Debug for GreenEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenEvaluator")
            .field("periods", &self.periods)
            .field("ewald_split", &self.tau)
            .field("fourier_cutoff", &self.fourier_cutoff)
            .field("real_cutoff", &self.real_cutoff)
            .finish()
    }
}

/// Exponent at which the Gaussian tails are truncated.
const TAIL: f64 = 40.0;

impl GreenEvaluator {
    pub fn new(domain: &TorusDomain) -> Self {
        Self::with_split(domain.periods(), domain.area() / (4.0 * PI))
    }

    /// Evaluator with Ewald parameter `tau` (heat-kernel time of the split).
    pub fn with_split(periods: [f64; 2], tau: f64) -> Self {
        Self::with_cutoffs(periods, tau, 1.0)
    }

    /// `scale` multiplies both truncation radii (1 = default).
    pub fn with_cutoffs(periods: [f64; 2], tau: f64, scale: f64) -> Self {
        let area = periods[0] * periods[1];
        let kmax = scale * (TAIL / tau).sqrt();
        let rmax = scale * (4.0 * TAIL * tau).sqrt();
        let fourier_cutoff = (kmax * periods[0].max(periods[1]) / (2.0 * PI)).ceil() as i64;
        let mut modes = Vec::new();
        for m1 in 0..=fourier_cutoff {
            for m2 in -fourier_cutoff..=fourier_cutoff {
                // half plane: m1 > 0, or m1 == 0 and m2 > 0
                if m1 == 0 && m2 <= 0 {
                    continue;
                }
                let k = [2.0 * PI * m1 as f64 / periods[0], 2.0 * PI * m2 as f64 / periods[1]];
                let k2 = k[0] * k[0] + k[1] * k[1];
                if k2.sqrt() > kmax {
                    continue;
                }
                modes.push(Mode { k, weight: 2.0 * (-tau * k2).exp() / (area * k2) });
            }
        }
        // Images reaching within rmax of any point of the cell.
        let diag = 0.5 * periods[0].hypot(periods[1]);
        let reach = rmax + diag;
        let real_cutoff = (reach / periods[0].min(periods[1])).ceil() as i64;
        let mut images = Vec::new();
        for a in -real_cutoff..=real_cutoff {
            for b in -real_cutoff..=real_cutoff {
                let w = [a as f64 * periods[0], b as f64 * periods[1]];
                if w[0].hypot(w[1]) <= reach {
                    images.push(w);
                }
            }
        }
        // Nearest image first, so the self term can be singled out.
        images.sort_by(|x, y| (x[0].hypot(x[1])).total_cmp(&y[0].hypot(y[1])));
        Self {
            periods,
            tau,
            fourier_cutoff,
            real_cutoff,
            modes: std::sync::Arc::new(modes),
            images: std::sync::Arc::new(images),
            real_radius: rmax,
        }
    }

    pub fn ewald_split(&self) -> f64 {
        self.tau
    }

    pub fn fourier_cutoff(&self) -> i64 {
        self.fourier_cutoff
    }

    pub fn real_cutoff(&self) -> i64 {
        self.real_cutoff
    }

    pub fn periods(&self) -> [f64; 2] {
        self.periods
    }

    fn area(&self) -> f64 {
        self.periods[0] * self.periods[1]
    }

    fn reduce(&self, x: Point, y: Point) -> Vec2 {
        let mut d = [x[0] - y[0], x[1] - y[1]];
        for (c, l) in d.iter_mut().zip(self.periods) {
            *c -= l * (*c / l).round();
        }
        d
    }

    /// Smooth Fourier part, with value, gradient and Hessian.
    fn fourier(&self, r: Vec2) -> (f64, Vec2, Mat2) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for m in self.modes.iter() {
            let (s, c) = (m.k[0] * r[0] + m.k[1] * r[1]).sin_cos();
            v += m.weight * c;
            for a in 0..2 {
                g[a] -= m.weight * s * m.k[a];
                for b in 0..2 {
                    h[a][b] -= m.weight * c * m.k[a] * m.k[b];
                }
            }
        }
        (v, g, h)
    }

    /// Real-space image sum; `skip_self` drops the nearest image (which the
    /// caller handles).
    fn real(&self, r: Vec2, skip_self: bool, derivs: bool) -> (f64, Vec2, Mat2) {
        let four_tau = 4.0 * self.tau;
        let cut2 = self.real_radius * self.real_radius;
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (idx, w) in self.images.iter().enumerate() {
            if skip_self && idx == 0 {
                continue;
            }
            let p = [r[0] + w[0], r[1] + w[1]];
            let p2 = p[0] * p[0] + p[1] * p[1];
            if p2 > cut2 {
                continue;
            }
            let z = p2 / four_tau;
            v += e1(z) / (4.0 * PI);
            if derivs {
                let ez = (-z).exp();
                for a in 0..2 {
                    g[a] -= ez * p[a] / (2.0 * PI * p2);
                    for b in 0..2 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        h[a][b] -= ez / (2.0 * PI)
                            * (delta / p2 - p[a] * p[b] / (2.0 * self.tau * p2) - 2.0 * p[a] * p[b] / (p2 * p2));
                    }
                }
            }
        }
        (v, g, h)
    }

    /// `G(x, y)`.
    pub fn green(&self, x: Point, y: Point) -> Result<f64> {
        let r = self.reduce(x, y);
        if r[0] == 0.0 && r[1] == 0.0 {
            return Err(Error::SingularPoint(format!("G evaluated at coincident points {x:?}")));
        }
        Ok(self.fourier(r).0 + self.real(r, false, false).0 - self.tau / self.area())
    }

    /// Regular part `γ(x, y) = G(x, y) + ln|x - y| / 2π`, nearest-image
    /// distance, extended to `x = y`.
    pub fn gamma(&self, x: Point, y: Point) -> f64 {
        let r = self.reduce(x, y);
        let z = (r[0] * r[0] + r[1] * r[1]) / (4.0 * self.tau);
        let own = (ein(z) - EULER_GAMMA + (4.0 * self.tau).ln()) / (4.0 * PI);
        self.fourier(r).0 + self.real(r, true, false).0 + own - self.tau / self.area()
    }

    /// Gradient of `G(·, y)` at `x`.
    pub fn grad_green(&self, x: Point, y: Point) -> Result<Vec2> {
        let r = self.reduce(x, y);
        if r[0] == 0.0 && r[1] == 0.0 {
            return Err(Error::SingularPoint(format!("grad G evaluated at coincident points {x:?}")));
        }
        let (_, gf, _) = self.fourier(r);
        let (_, gr, _) = self.real(r, false, true);
        Ok([gf[0] + gr[0], gf[1] + gr[1]])
    }

    /// Hessian of `G(·, y)` at `x`.
    pub fn hess_green(&self, x: Point, y: Point) -> Result<Mat2> {
        let r = self.reduce(x, y);
        if r[0] == 0.0 && r[1] == 0.0 {
            return Err(Error::SingularPoint(format!("Hessian of G evaluated at coincident points {x:?}")));
        }
        let (_, _, hf) = self.fourier(r);
        let (_, _, hr) = self.real(r, false, true);
        Ok(add2(hf, hr))
    }

    /// Gradient of `γ(·, y)` at `x`.
    pub fn grad_gamma(&self, x: Point, y: Point) -> Vec2 {
        let r = self.reduce(x, y);
        let (_, gf, _) = self.fourier(r);
        let (_, gr, _) = self.real(r, true, true);
        let (g0, _) = self.own_derivs(r);
        [gf[0] + gr[0] + g0[0], gf[1] + gr[1] + g0[1]]
    }

    /// Hessian of `γ(·, y)` at `x`.
    pub fn hess_gamma(&self, x: Point, y: Point) -> Mat2 {
        let r = self.reduce(x, y);
        let (_, _, hf) = self.fourier(r);
        let (_, _, hr) = self.real(r, true, true);
        let (_, h0) = self.own_derivs(r);
        add2(add2(hf, hr), h0)
    }

    /// Derivatives of the regularized nearest-image term
    /// `(E1(z) + 2 ln|r|) / 4π`.
    fn own_derivs(&self, r: Vec2) -> (Vec2, Mat2) {
        let r2 = r[0] * r[0] + r[1] * r[1];
        let tau = self.tau;
        let z = r2 / (4.0 * tau);
        if z < 1e-6 {
            // Taylor: (z - z^2/4) / 4π with z = |r|^2 / 4τ
            let c = 1.0 / (8.0 * PI * tau);
            let g = [c * r[0] * (1.0 - z), c * r[1] * (1.0 - z)];
            let mut h = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    h[a][b] = c * (delta * (1.0 - z) - r[a] * r[b] / (2.0 * tau));
                }
            }
            return (g, h);
        }
        let one_minus = -(-z).exp_m1();
        let ez = (-z).exp();
        let g = [one_minus * r[0] / (2.0 * PI * r2), one_minus * r[1] / (2.0 * PI * r2)];
        let mut h = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let delta = if a == b { 1.0 } else { 0.0 };
                h[a][b] = (one_minus * (delta / r2 - 2.0 * r[a] * r[b] / (r2 * r2))
                    + ez * r[a] * r[b] / (2.0 * tau * r2))
                    / (2.0 * PI);
            }
        }
        (g, h)
    }

    /// `u0(x) = -4π Σ m_j G(x, p_j)`.
    pub fn u0(&self, cfg: &VortexConfig, x: Point) -> Result<f64> {
        let mut s = 0.0;
        for (p, m) in cfg.iter() {
            s += m * self.green(x, p).map_err(|_| {
                Error::SingularPoint(format!("u0 evaluated at vortex point {p:?}"))
            })?;
        }
        Ok(-4.0 * PI * s)
    }

    pub fn grad_u0(&self, cfg: &VortexConfig, x: Point) -> Result<Vec2> {
        let mut g = [0.0; 2];
        for (p, m) in cfg.iter() {
            let d = self.grad_green(x, p)?;
            g[0] -= 4.0 * PI * m * d[0];
            g[1] -= 4.0 * PI * m * d[1];
        }
        Ok(g)
    }

    pub fn hess_u0(&self, cfg: &VortexConfig, x: Point) -> Result<Mat2> {
        let mut h = [[0.0; 2]; 2];
        for (p, m) in cfg.iter() {
            h = add2(h, scale2(self.hess_green(x, p)?, -4.0 * PI * m));
        }
        Ok(h)
    }

    /// `u0` sampled on the grid, carrying its log singularities
    /// `2 m_j ln|x - p_j|` and zero mean as metadata.
    pub fn u0_field(&self, domain: &TorusDomain, cfg: &VortexConfig) -> Result<Field> {
        let h = domain.spacing();
        for (p, _) in cfg.iter() {
            if domain.distance_to_grid(p) < 1e-9 * h[0].min(h[1]) {
                return Err(Error::SingularPoint(format!(
                    "vortex point {p:?} coincides with a grid node; shift the grid offset"
                )));
            }
        }
        let mut f = Field::from_fn(domain, |x| self.u0(cfg, x).unwrap_or(f64::NAN));
        f.declared_mean = Some(0.0);
        f.singular = cfg.iter().map(|(p, m)| LogSingularity { point: p, coeff: 2.0 * m }).collect();
        Ok(f)
    }

    /// `G(·, y)` on the grid (the node at `y`, if any, is rejected).
    pub fn green_field(&self, domain: &TorusDomain, y: Point) -> Result<Field> {
        if domain.distance_to_grid(y) == 0.0 {
            return Err(Error::SingularPoint(format!("{y:?} is a grid node")));
        }
        let mut f = Field::from_fn(domain, |x| self.green(x, y).unwrap_or(f64::NAN));
        f.declared_mean = Some(0.0);
        f.singular = vec![LogSingularity { point: y, coeff: -1.0 / (2.0 * PI) }];
        Ok(f)
    }
}

pub fn add2(a: Mat2, b: Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

pub fn scale2(a: Mat2, s: f64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}
