//! Flat rectangular torus, its uniform grid, and spectral calculus on it.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;
use crate::quad::{smooth_cutoff, GaussLegendre};

pub type Point = [f64; 2];

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Rectangle torus `[0, L1) x [0, L2)` with an `n x n` node grid.
#[derive(Clone)]
pub struct TorusDomain {
    periods: [f64; 2],
    n: usize,
    offset: [f64; 2],
    plans: Arc<Plans>,
}

impl fmt::Debug for TorusDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusDomain")
            .field("periods", &self.periods)
            .field("n", &self.n)
            .field("offset", &self.offset)
            .finish()
    }
}

impl PartialEq for TorusDomain {
    fn eq(&self, other: &Self) -> bool {
        self.periods == other.periods && self.n == other.n && self.offset == other.offset
    }
}

impl TorusDomain {
    pub fn new(l1: f64, l2: f64, n: usize, offset: [f64; 2]) -> Result<Self> {
        if !(l1 > 0.0 && l1.is_finite() && l2 > 0.0 && l2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "periods must be positive, got ({l1}, {l2})"
            )));
        }
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "grid size must be even and at least 16, got {n}"
            )));
        }
        if !offset.iter().all(|o| (0.0..1.0).contains(o)) {
            return Err(Error::InvalidArgument(format!(
                "offset must lie in [0, 1)^2, got {offset:?}"
            )));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        Ok(Self { periods: [l1, l2], n, offset, plans: Arc::new(plans) })
    }

    /// Unit square torus with the half-cell offset.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(1.0, 1.0, n, [0.5, 0.5])
    }

    /// Same geometry, different resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.periods[0], self.periods[1], n, self.offset)
    }

    pub fn periods(&self) -> [f64; 2] {
        self.periods
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn offset(&self) -> [f64; 2] {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn area(&self) -> f64 {
        self.periods[0] * self.periods[1]
    }

    pub fn spacing(&self) -> [f64; 2] {
        [self.periods[0] / self.n as f64, self.periods[1] / self.n as f64]
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1]
    }

    pub fn node(&self, index: usize) -> Point {
        let h = self.spacing();
        let (i1, i2) = (index / self.n, index % self.n);
        [(i1 as f64 + self.offset[0]) * h[0], (i2 as f64 + self.offset[1]) * h[1]]
    }

    /// Reduce a point into the fundamental cell.
    pub fn wrap(&self, p: Point) -> Point {
        [p[0].rem_euclid(self.periods[0]), p[1].rem_euclid(self.periods[1])]
    }

    /// Nearest-image displacement `a - b`.
    pub fn min_image(&self, a: Point, b: Point) -> [f64; 2] {
        let mut d = [a[0] - b[0], a[1] - b[1]];
        for (c, l) in d.iter_mut().zip(self.periods) {
            *c -= l * (*c / l).round();
        }
        d
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = self.min_image(a, b);
        d[0].hypot(d[1])
    }

    /// Distance from a point to the nearest grid node.
    pub fn distance_to_grid(&self, p: Point) -> f64 {
        let h = self.spacing();
        let mut d2 = 0.0;
        for a in 0..2 {
            let s = p[a] / h[a] - self.offset[a];
            let frac = s - s.round();
            d2 += (frac * h[a]).powi(2);
        }
        d2.sqrt()
    }

    /// Angular wavenumber for FFT index `i` along axis `axis`; `nyquist`
    /// controls whether the unpaired mode keeps its magnitude.
    fn wavenumber(&self, axis: usize, i: usize, nyquist: bool) -> f64 {
        let n = self.n as i64;
        let i = i as i64;
        let m = if i < n / 2 {
            i
        } else if i == n / 2 {
            if nyquist {
                -n / 2
            } else {
                0
            }
        } else {
            i - n
        };
        2.0 * PI * m as f64 / self.periods[axis]
    }

    fn transpose(&self, data: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                data.swap(i * n + j, j * n + i);
            }
        }
    }

    pub fn fft2(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.plans.forward.process(&mut data);
        self.transpose(&mut data);
        self.plans.forward.process(&mut data);
        self.transpose(&mut data);
        data
    }

    pub fn ifft2(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.plans.inverse.process(&mut data);
        self.transpose(&mut data);
        self.plans.inverse.process(&mut data);
        self.transpose(&mut data);
        let scale = 1.0 / self.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    /// Apply a Fourier multiplier `symbol(k1, k2)`.
    fn multiply(&self, values: &[f64], nyquist: bool, symbol: impl Fn(f64, f64) -> Complex64) -> Vec<f64> {
        let mut hat = self.fft2(values);
        let n = self.n;
        for i1 in 0..n {
            let k1 = self.wavenumber(0, i1, nyquist);
            for i2 in 0..n {
                let k2 = self.wavenumber(1, i2, nyquist);
                hat[i1 * n + i2] *= symbol(k1, k2);
            }
        }
        self.ifft2(hat)
    }

    /// Sample `f` at every node.
    pub fn sample(&self, f: impl Fn(Point) -> f64 + Sync) -> Vec<f64> {
        par::map(self.len(), |i| f(self.node(i)))
    }
}

/// A logarithmic singularity `coeff * ln|x - point|` carried by a field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSingularity {
    pub point: Point,
    pub coeff: f64,
}

/// Grid samples of a periodic function, plus optional metadata.
#[derive(Clone, Debug)]
pub struct Field {
    pub domain: TorusDomain,
    pub values: Vec<f64>,
    pub declared_mean: Option<f64>,
    /// Known log singularities already present in `values`; `integrate`
    /// handles them analytically.
    pub singular: Vec<LogSingularity>,
}

impl Field {
    pub fn new(domain: &TorusDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {}",
                values.len(),
                domain.len()
            )));
        }
        Ok(Self { domain: domain.clone(), values, declared_mean: None, singular: Vec::new() })
    }

    pub fn zeros(domain: &TorusDomain) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: &TorusDomain, c: f64) -> Self {
        Self { domain: domain.clone(), values: vec![c; domain.len()], declared_mean: None, singular: Vec::new() }
    }

    pub fn from_fn(domain: &TorusDomain, f: impl Fn(Point) -> f64 + Sync) -> Self {
        Self { domain: domain.clone(), values: domain.sample(f), declared_mean: None, singular: Vec::new() }
    }

    pub fn with_mean(mut self, mean: f64) -> Self {
        self.declared_mean = Some(mean);
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        let v = &self.values;
        Self {
            domain: self.domain.clone(),
            values: par::map(v.len(), |i| f(v[i])),
            declared_mean: None,
            singular: Vec::new(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let (a, b) = (&self.values, &other.values);
        Self {
            domain: self.domain.clone(),
            values: par::map(a.len(), |i| f(a[i], b[i])),
            declared_mean: None,
            singular: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Plain grid quadrature (exact for trigonometric polynomials of degree
    /// below `n`).
    pub fn grid_sum(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.domain.cell_area()
    }

    /// Integral over the torus. Registered log singularities are removed with
    /// a smooth cutoff and integrated analytically.
    pub fn integrate(&self) -> f64 {
        if self.singular.is_empty() {
            return self.grid_sum();
        }
        let dom = &self.domain;
        let (a, b) = singular_cutoff_radii(dom);
        let sing = &self.singular;
        let values = &self.values;
        let smooth = par::map(values.len(), |i| {
            let p = dom.node(i);
            let mut v = values[i];
            for s in sing {
                let r = dom.distance(p, s.point);
                if r < b {
                    v -= s.coeff * r.ln() * smooth_cutoff(r, a, b);
                }
            }
            v
        });
        let grid: f64 = smooth.iter().sum::<f64>() * dom.cell_area();
        let disk = log_cutoff_integral(a, b);
        grid + sing.iter().map(|s| s.coeff).sum::<f64>() * disk
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.domain.area()
    }

    /// L2 norm by grid quadrature.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.domain.cell_area()).sqrt()
    }

    /// Check a declared mean against the quadrature mean.
    pub fn check_declared_mean(&self) -> Result<()> {
        if let Some(m) = self.declared_mean {
            let q = self.mean();
            if (q - m).abs() > 1e-12 * (1.0 + m.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "declared mean {m} disagrees with quadrature mean {q}"
                )));
            }
        }
        Ok(())
    }

    pub fn laplacian(&self) -> Field {
        let values = self.domain.multiply(&self.values, true, |k1, k2| Complex64::new(-(k1 * k1 + k2 * k2), 0.0));
        Field { domain: self.domain.clone(), values, declared_mean: Some(0.0), singular: Vec::new() }
    }

    /// Spectral gradient `(d/dx1, d/dx2)`.
    pub fn gradient(&self) -> [Field; 2] {
        let d1 = self.domain.multiply(&self.values, false, |k1, _| Complex64::new(0.0, k1));
        let d2 = self.domain.multiply(&self.values, false, |_, k2| Complex64::new(0.0, k2));
        [Field::new(&self.domain, d1).unwrap(), Field::new(&self.domain, d2).unwrap()]
    }

    /// Mean-zero `phi` with `laplacian(phi) = self - mean(self)`.
    pub fn poisson_solve(&self) -> Result<Field> {
        let tol = 1e-10 * self.sup_norm();
        let mean = self.grid_sum() / self.domain.area();
        if mean.abs() > tol {
            return Err(Error::NonzeroMean { mean, tol });
        }
        let values = self.domain.multiply(&self.values, true, |k1, k2| {
            let k2sum = k1 * k1 + k2 * k2;
            if k2sum == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / k2sum, 0.0)
            }
        });
        Ok(Field { domain: self.domain.clone(), values, declared_mean: Some(0.0), singular: Vec::new() })
    }

    /// `(laplacian - s)^{-1} self` for `s > 0`.
    pub fn shifted_solve(&self, s: f64) -> Field {
        let values = self.domain.multiply(&self.values, true, |k1, k2| Complex64::new(-1.0 / (k1 * k1 + k2 * k2 + s), 0.0));
        Field::new(&self.domain, values).unwrap()
    }

    /// Band-limited resampling onto a finer grid of `factor * n` points per
    /// axis sharing the same physical offset convention.
    pub fn upsample(&self, factor: usize) -> Result<Field> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let dom = &self.domain;
        let n = dom.n;
        let m = n * factor;
        let fine = TorusDomain::new(dom.periods[0], dom.periods[1], m, [0.0, 0.0])?;
        // The node offset becomes a phase on each coefficient.
        let hat = dom.fft2(&self.values);
        let h = dom.spacing();
        let mut big = vec![Complex64::new(0.0, 0.0); m * m];
        let idx = |i: usize| -> (i64, bool) {
            let i = i as i64;
            let n = n as i64;
            if i < n / 2 {
                (i, false)
            } else if i == n / 2 {
                (i, true)
            } else {
                (i - n, false)
            }
        };
        for i1 in 0..n {
            let (m1, ny1) = idx(i1);
            let t1s: &[(i64, f64)] = if ny1 { &[(m1, 0.5), (-m1, 0.5)] } else { &[(m1, 1.0)] };
            for i2 in 0..n {
                let (m2, ny2) = idx(i2);
                let t2s: &[(i64, f64)] = if ny2 { &[(m2, 0.5), (-m2, 0.5)] } else { &[(m2, 1.0)] };
                let c = hat[i1 * n + i2];
                // Nyquist modes are split symmetrically between +/- n/2.
                for &(t1, w1) in t1s {
                    for &(t2, w2) in t2s {
                        let k1 = 2.0 * PI * t1 as f64 / dom.periods[0];
                        let k2 = 2.0 * PI * t2 as f64 / dom.periods[1];
                        let phase = -(k1 * dom.offset[0] * h[0] + k2 * dom.offset[1] * h[1]);
                        let j1 = t1.rem_euclid(m as i64) as usize;
                        let j2 = t2.rem_euclid(m as i64) as usize;
                        big[j1 * m + j2] += c * Complex64::from_polar(w1 * w2, phase);
                    }
                }
            }
        }
        let scale = (factor * factor) as f64;
        for c in big.iter_mut() {
            *c *= scale;
        }
        let values = fine.ifft2(big);
        Field::new(&fine, values)
    }

    /// Periodic bicubic interpolant, optionally after spectral upsampling.
    pub fn interpolator(&self, upsample: usize) -> Result<Interpolator> {
        let f = self.upsample(upsample)?;
        Ok(Interpolator { n: f.domain.n, periods: f.domain.periods, offset: f.domain.offset, values: f.values })
    }
}

/// A disk handled by polar quadrature inside `split_integral`.
#[derive(Clone, Copy, Debug)]
pub struct PolarPatch {
    pub center: Point,
    /// Radius of a derivative jump of the integrand (panel break), or 0.
    pub kink: f64,
    /// Feature size at the center, grades the radial panels.
    pub scale: f64,
    /// The patch weight is 1 up to `inner` and vanishes from `outer` on.
    pub inner: f64,
    pub outer: f64,
}

impl TorusDomain {
    /// Integral of `f` over the torus where `f` is smooth away from a few
    /// disks but may be sharply peaked or kinked inside them. A smooth
    /// partition of unity sends the disks to polar quadrature and the rest to
    /// the grid. `grid_values` are the samples of `f` at the nodes.
    pub fn split_integral(
        &self,
        grid_values: &[f64],
        patches: &[PolarPatch],
        angular: usize,
        f: impl Fn(Point) -> f64,
    ) -> f64 {
        let mut grid = 0.0;
        for (i, &v) in grid_values.iter().enumerate() {
            let x = self.node(i);
            let mut w = 1.0;
            for p in patches {
                w -= smooth_cutoff(self.distance(x, p.center), p.inner, p.outer);
            }
            grid += v * w;
        }
        grid *= self.cell_area();
        let rule = GaussLegendre::new(16);
        let mut polar = 0.0;
        for p in patches {
            let mut breaks = crate::quad::graded_breaks(0.0, p.inner, p.scale);
            if p.kink > 0.0 && p.kink < p.inner {
                breaks = crate::quad::merge_breaks(&breaks, &[p.kink]);
            }
            let mid = 0.5 * (p.inner + p.outer);
            breaks = crate::quad::merge_breaks(&breaks, &[mid, p.outer]);
            polar += crate::quad::polar_integral(&breaks, angular, &rule, |a, b| {
                let y = [p.center[0] + a, p.center[1] + b];
                f(y) * smooth_cutoff(a.hypot(b), p.inner, p.outer)
            });
        }
        grid + polar
    }
}

/// Radii of the cutoff used to desingularize registered log terms.
fn singular_cutoff_radii(dom: &TorusDomain) -> (f64, f64) {
    let lmin = dom.periods[0].min(dom.periods[1]);
    (0.02 * lmin, 0.48 * lmin)
}

/// `∫_{R^2} ln|y| chi(|y|) dy` for the cutoff of `smooth_cutoff(., a, b)`.
fn log_cutoff_integral(a: f64, b: f64) -> f64 {
    let inner = 2.0 * PI * (0.5 * a * a * a.ln() - 0.25 * a * a);
    let rule = GaussLegendre::new(40);
    let outer = 2.0 * PI * rule.integrate(a, b, |r| r * r.ln() * smooth_cutoff(r, a, b));
    inner + outer
}

/// The trigonometric interpolant of a grid field, evaluated directly
/// (`O(n^2)` per point; meant for a handful of points).
#[derive(Clone, Debug)]
pub struct FourierInterpolant {
    n: usize,
    periods: [f64; 2],
    origin: [f64; 2],
    hat: Vec<Complex64>,
}

impl FourierInterpolant {
    pub fn new(f: &Field) -> Self {
        let dom = &f.domain;
        let h = dom.spacing();
        Self {
            n: dom.n,
            periods: dom.periods,
            origin: [dom.offset[0] * h[0], dom.offset[1] * h[1]],
            hat: dom.fft2(&f.values),
        }
    }

    /// Per-axis mode factors; the Nyquist mode enters as a cosine.
    fn factors(&self, axis: usize, x: f64) -> Vec<Complex64> {
        let n = self.n as i64;
        let t = x - self.origin[axis];
        (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i } else { i - n };
                let k = 2.0 * PI * m as f64 / self.periods[axis];
                if 2 * i == n {
                    Complex64::new((k * t).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, k * t)
                }
            })
            .collect()
    }

    pub fn eval(&self, p: Point) -> f64 {
        let e1 = self.factors(0, p[0]);
        let e2 = self.factors(1, p[1]);
        let mut acc = Complex64::new(0.0, 0.0);
        for (i1, a) in e1.iter().enumerate() {
            let row = &self.hat[i1 * self.n..(i1 + 1) * self.n];
            let r: Complex64 = row.iter().zip(&e2).map(|(c, b)| c * b).sum();
            acc += a * r;
        }
        acc.re / (self.n * self.n) as f64
    }
}

/// Periodic Catmull-Rom bicubic interpolation.
#[derive(Clone, Debug)]
pub struct Interpolator {
    n: usize,
    periods: [f64; 2],
    offset: [f64; 2],
    values: Vec<f64>,
}

impl Interpolator {
    pub fn eval(&self, p: Point) -> f64 {
        let n = self.n as i64;
        let mut base = [0i64; 2];
        let mut t = [0.0; 2];
        for a in 0..2 {
            let s = p[a] / (self.periods[a] / self.n as f64) - self.offset[a];
            let fl = s.floor();
            base[a] = fl as i64;
            t[a] = s - fl;
        }
        let w1 = catmull_rom(t[0]);
        let w2 = catmull_rom(t[1]);
        let mut acc = 0.0;
        for (a, wa) in w1.iter().enumerate() {
            let i1 = (base[0] + a as i64 - 1).rem_euclid(n) as usize;
            let row = &self.values[i1 * self.n..(i1 + 1) * self.n];
            let mut r = 0.0;
            for (b, wb) in w2.iter().enumerate() {
                let i2 = (base[1] + b as i64 - 1).rem_euclid(n) as usize;
                r += wb * row[i2];
            }
            acc += wa * r;
        }
        acc
    }
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig_poly(p: Point) -> f64 {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        (3.0 * x).sin() * (2.0 * y).cos() + 0.5 * (x + 5.0 * y).cos() - 0.25 * (7.0 * y).sin() + 0.3
    }

    fn trig_poly_lap(p: Point) -> f64 {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        let w = 4.0 * PI * PI;
        -w * 13.0 * (3.0 * x).sin() * (2.0 * y).cos() - w * 26.0 * 0.5 * (x + 5.0 * y).cos()
            + w * 49.0 * 0.25 * (7.0 * y).sin()
    }

    #[test]
    fn make_domain_examples() {
        let d = TorusDomain::new(1.0, 1.0, 64, [0.5, 0.5]).unwrap();
        assert_eq!(d.len(), 4096);
        assert_eq!(d.spacing(), [1.0 / 64.0, 1.0 / 64.0]);
        let d = TorusDomain::new(2.0, 0.5, 32, [0.0, 0.0]).unwrap();
        assert_eq!(d.area(), 1.0);
        assert_eq!(d.spacing(), [2.0 / 32.0, 0.5 / 32.0]);
        assert!(matches!(TorusDomain::new(1.0, -1.0, 64, [0.0, 0.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(TorusDomain::new(1.0, 1.0, 33, [0.0, 0.0]), Err(Error::InvalidArgument(_))));
        assert!(matches!(TorusDomain::new(1.0, 1.0, 8, [0.0, 0.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn integrate_examples() {
        let d = TorusDomain::unit(32).unwrap();
        assert!((Field::constant(&d, 1.0).integrate() - 1.0).abs() < 1e-14);
        let s = Field::from_fn(&d, |p| (2.0 * PI * p[0]).sin());
        assert!(s.integrate().abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_trig_poly() {
        let d = TorusDomain::unit(32).unwrap();
        let f = Field::from_fn(&d, trig_poly);
        let lap = f.laplacian();
        let exact = Field::from_fn(&d, trig_poly_lap);
        let err = lap.zip_map(&exact, |a, b| a - b).sup_norm();
        assert!(err < 1e-10 * exact.sup_norm(), "err {err}");
        assert!(lap.grid_sum().abs() < 1e-12);
        assert!(Field::constant(&d, 3.0).laplacian().sup_norm() < 1e-12);
    }

    #[test]
    fn poisson_examples() {
        let d = TorusDomain::unit(32).unwrap();
        let f = Field::from_fn(&d, |p| (2.0 * PI * p[0]).cos());
        let phi = f.poisson_solve().unwrap();
        let exact = Field::from_fn(&d, |p| -(2.0 * PI * p[0]).cos() / (4.0 * PI * PI));
        assert!(phi.zip_map(&exact, |a, b| a - b).sup_norm() < 1e-14);
        assert!(Field::zeros(&d).poisson_solve().unwrap().sup_norm() == 0.0);
        let bad = Field::from_fn(&d, |p| 0.5 + (2.0 * PI * p[1]).sin());
        assert!(matches!(bad.poisson_solve(), Err(Error::NonzeroMean { .. })));
    }

    #[test]
    fn anisotropic_laplacian() {
        let d = TorusDomain::new(2.0, 0.5, 32, [0.25, 0.5]).unwrap();
        let f = Field::from_fn(&d, |p| (PI * p[0]).sin() * (4.0 * PI * p[1]).cos());
        let k2 = PI * PI + 16.0 * PI * PI;
        let lap = f.laplacian();
        let err = lap.zip_map(&f, |a, b| a + k2 * b).sup_norm();
        assert!(err < 1e-9);
    }

    #[test]
    fn gradient_and_shifted_solve() {
        let d = TorusDomain::unit(32).unwrap();
        let f = Field::from_fn(&d, |p| (2.0 * PI * p[0]).sin() * (4.0 * PI * p[1]).sin());
        let [g1, _] = f.gradient();
        let exact = Field::from_fn(&d, |p| 2.0 * PI * (2.0 * PI * p[0]).cos() * (4.0 * PI * p[1]).sin());
        assert!(g1.zip_map(&exact, |a, b| a - b).sup_norm() < 1e-10);
        let u = f.shifted_solve(3.0);
        let back = u.laplacian().zip_map(&u, |l, v| l - 3.0 * v);
        assert!(back.zip_map(&f, |a, b| a - b).sup_norm() < 1e-12);
    }

    #[test]
    fn integrate_log_singularity() {
        // ln r * psi(r) with psi = 1 near the point; reference by 1-d quadrature
        let p = [0.31, 0.62];
        let (a, b) = (0.05f64, 0.3f64);
        let rule = GaussLegendre::new(60);
        let exact = 2.0 * PI * (0.5 * a * a * a.ln() - 0.25 * a * a)
            + 2.0 * PI * rule.integrate(a, b, |r| r * r.ln() * smooth_cutoff(r, a, b));
        for n in [64, 128] {
            let d = TorusDomain::unit(n).unwrap();
            let mut fld = Field::from_fn(&d, |x| {
                let r = d.distance(x, p);
                r.ln() * smooth_cutoff(r, a, b) + (2.0 * PI * x[0]).cos()
            });
            fld.singular.push(LogSingularity { point: p, coeff: 1.0 });
            let v = fld.integrate();
            assert!((v - exact).abs() < 1e-9, "{n}: {v} vs {exact}");
        }
    }

    #[test]
    fn upsample_and_interpolate() {
        let d = TorusDomain::new(1.0, 1.0, 32, [0.5, 0.25]).unwrap();
        let f = Field::from_fn(&d, trig_poly);
        let fine = f.upsample(4).unwrap();
        let exact = Field::from_fn(&fine.domain, trig_poly);
        assert!(fine.zip_map(&exact, |a, b| a - b).sup_norm() < 1e-12);
        let it = f.interpolator(4).unwrap();
        for p in [[0.123, 0.77], [0.999, 0.001], [0.5, 0.5]] {
            assert!((it.eval(p) - trig_poly(p)).abs() < 2e-3);
        }
    }

    #[test]
    fn fourier_interpolant_is_exact_on_trig_polynomials() {
        let d = TorusDomain::new(1.0, 1.0, 32, [0.5, 0.5]).unwrap();
        let f = Field::from_fn(&d, trig_poly);
        let it = FourierInterpolant::new(&f);
        for p in [[0.123, 0.77], [0.999, 0.001], [0.5, 0.5], d.node(17)] {
            assert!((it.eval(p) - trig_poly(p)).abs() < 1e-12);
        }
        // Nyquist mode on an unshifted grid
        let d = TorusDomain::new(1.0, 1.0, 32, [0.0, 0.0]).unwrap();
        let g = Field::from_fn(&d, |p| (32.0 * PI * p[0]).cos());
        let it = FourierInterpolant::new(&g);
        assert!((it.eval(d.node(5)) - g.values[5]).abs() < 1e-12);
        assert!((it.eval([0.3, 0.1]) - (32.0 * PI * 0.3f64).cos()).abs() < 1e-12);
    }
}
