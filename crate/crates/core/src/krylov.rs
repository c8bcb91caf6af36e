//! Restarted GMRES with right preconditioning.

#[derive(Clone, Copy, Debug)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iter: usize,
    /// Stop when `|b - A x| <= rel_tol |b|`.
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self { restart: 60, max_iter: 600, rel_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual (true residual, recomputed after each cycle).
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` with `A` given by `apply` and right preconditioner `M^{-1}`
/// given by `precond`.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    mut precond: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: GmresOptions,
) -> GmresOutcome {
    let n = b.len();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let bnorm = nrm(b);
    if bnorm == 0.0 {
        return GmresOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0, converged: true };
    }
    let mut iterations = 0;
    let m = opts.restart.max(1);
    loop {
        let ax = apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = nrm(&r);
        let rel = beta / bnorm;
        if rel <= opts.rel_tol || iterations >= opts.max_iter {
            return GmresOutcome { x, iterations, residual: rel, converged: rel <= opts.rel_tol };
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let zj = precond(&v[j]);
            let mut w = apply(&zj);
            z.push(zj);
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    h[i][j] += c;
                    for (a, bb) in w.iter_mut().zip(vi) {
                        *a -= c * bb;
                    }
                }
            }
            let hn = nrm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = h[j][j].hypot(h[j + 1][j]);
            if den == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / den;
                sn[j] = h[j + 1][j] / den;
            }
            h[j][j] = cs[j] * h[j][j] + sn[j] * h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iterations += 1;
            if g[j + 1].abs() / bnorm <= 0.5 * opts.rel_tol || hn == 0.0 || iterations >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|c| c / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                s -= h[i][k] * yk;
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            for (a, b) in x.iter_mut().zip(zi) {
                *a += yi * b;
            }
        }
    }
}
