//! Small quadrature toolbox: Gauss-Legendre rules, composite panels, polar
//! disk/annulus rules and Richardson extrapolation.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes/weights mapped to `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Radial breakpoints for `[r0, r1]`, geometrically graded from `r0` (or from
/// `scale` when `r0 = 0`) so that a peak of width `scale` at the origin is
/// resolved.
pub fn graded_breaks(r0: f64, r1: f64, scale: f64) -> Vec<f64> {
    let mut breaks = vec![r0];
    let mut r = if r0 > 0.0 { r0 * 2.0 } else { scale.min(r1) };
    while r < r1 * 0.999 {
        if r > breaks[breaks.len() - 1] {
            breaks.push(r);
        }
        r *= 2.0;
    }
    breaks.push(r1);
    breaks
}

/// Polar quadrature of `f` over the annulus `r_in < |y| < r_out` centered at
/// the origin. `f` receives the displacement `(y1, y2)`. `scale` is the
/// feature size near the center used to grade the radial panels.
pub fn annulus_integral(
    r_in: f64,
    r_out: f64,
    scale: f64,
    angular: usize,
    rule: &GaussLegendre,
    f: impl Fn(f64, f64) -> f64,
) -> f64 {
    if r_out <= r_in {
        return 0.0;
    }
    polar_integral(&graded_breaks(r_in, r_out, scale), angular, rule, f)
}

/// Polar quadrature with explicit radial panel breaks (sorted, increasing):
/// Gauss-Legendre in `r` on each panel, midpoint rule with `angular` nodes in
/// the angle.
pub fn polar_integral(breaks: &[f64], angular: usize, rule: &GaussLegendre, f: impl Fn(f64, f64) -> f64) -> f64 {
    let dtheta = 2.0 * PI / angular as f64;
    let trig: Vec<(f64, f64)> = (0..angular)
        .map(|m| {
            let t = (m as f64 + 0.5) * dtheta;
            (t.cos(), t.sin())
        })
        .collect();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        for (r, wr) in rule.on(w[0], w[1]) {
            let ring: f64 = trig.iter().map(|&(c, s)| f(r * c, r * s)).sum();
            total += wr * r * ring * dtheta;
        }
    }
    total
}

/// Merge two sorted break lists, dropping near-duplicates.
pub fn merge_breaks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for v in all {
        match out.last() {
            Some(&last) if (v - last).abs() <= 1e-12 * (1.0 + v.abs()) => {}
            _ => out.push(v),
        }
    }
    out
}

/// Richardson extrapolation of a sequence `values[m] = A(h0 * ratio^-m)`
/// whose error expands in powers `h^(order*j)`. Returns the diagonal of the
/// tableau (best extrapolant using the first `m+1` entries).
pub fn richardson(values: &[f64], ratio: f64, order: f64) -> Vec<f64> {
    let n = values.len();
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for m in 0..n {
        let mut row = vec![values[m]];
        for j in 1..=m {
            let factor = ratio.powf(order * j as f64);
            let prev = &table[m - 1];
            let v = row[j - 1] + (row[j - 1] - prev[j - 1]) / (factor - 1.0);
            row.push(v);
        }
        diag.push(row[m]);
        table.push(row);
    }
    diag
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// C-infinity cutoff: 1 on `[0, a]`, 0 on `[b, inf)`.
pub fn smooth_cutoff(r: f64, a: f64, b: f64) -> f64 {
    if r <= a {
        1.0
    } else if r >= b {
        0.0
    } else {
        let t = (b - r) / (b - a);
        let p = (-1.0 / t).exp();
        let q = (-1.0 / (1.0 - t)).exp();
        p / (p + q)
    }
}
