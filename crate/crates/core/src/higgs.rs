//! The substitution `u = F(v) = 1 + v - e^v`, its inverse on `(-inf, 0]`, and
//! the resulting semilinear nonlinearity.

use crate::error::{Error, Result};
use crate::par;
use crate::torus::Field;

/// Root-finding parameters for the inverse map.
#[derive(Clone, Copy, Debug)]
pub struct HiggsBranch {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for HiggsBranch {
    fn default() -> Self {
        Self { tolerance: 1e-14, max_iter: 100 }
    }
}

/// `1 + v - e^v`, accurate near `v = 0`.
pub fn f_map(v: f64) -> Result<f64> {
    if v > 0.0 || v.is_nan() {
        return Err(Error::OutOfBranch { value: v, node: None });
    }
    Ok(f_raw(v))
}

fn f_raw(v: f64) -> f64 {
    if v.abs() < 0.1 {
        // -(v^2/2! + v^3/3! + ...)
        let mut term = v * v / 2.0;
        let mut sum = 0.0f64;
        let mut k = 2.0;
        while term.abs() > 1e-18 * sum.abs() && k < 30.0 {
            sum += term;
            k += 1.0;
            term *= v / k;
        }
        -sum
    } else {
        1.0 + v - v.exp()
    }
}

impl HiggsBranch {
    /// Solve `F(v) = u` for `v <= 0`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if u > 0.0 || u.is_nan() {
            return Err(Error::OutOfBranch { value: u, node: None });
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        if u == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        // F(u - 1) <= u <= F(u), and for small |u| the root is near -sqrt(-2u).
        let mut lo = u - 1.0;
        let mut hi = u.min(0.0);
        let mut v = if u <= -2.0 { u - 1.0 } else { -(-2.0 * u).sqrt() };
        let tol = self.tolerance * (1.0 + u.abs());
        for _ in 0..self.max_iter {
            let r = f_raw(v) - u;
            if r.abs() <= tol * 0.01 {
                return Ok(v);
            }
            if r > 0.0 {
                hi = hi.min(v);
            } else {
                lo = lo.max(v);
            }
            let slope = -v.exp_m1();
            let mut next = v - r / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - v).abs() <= 1e-16 * (1.0 + v.abs()) {
                v = next;
                break;
            }
            v = next;
        }
        if (f_raw(v) - u).abs() <= tol {
            Ok(v)
        } else {
            Err(Error::IterationFailure(format!("inverse map at u = {u}")))
        }
    }
}

/// Inverse of `F` on the branch, default tolerance.
pub fn f_inverse(u: f64) -> Result<f64> {
    HiggsBranch::default().inverse(u)
}

/// `eps^-2 e^V (1 - e^V)^2`, `V = F^{-1}(u)`.
pub fn nonlinearity(u: f64, eps: f64) -> Result<f64> {
    let v = f_inverse(u)?;
    Ok(nonlinearity_of_v(v, eps))
}

pub fn nonlinearity_of_v(v: f64, eps: f64) -> f64 {
    let m = v.exp_m1();
    v.exp() * m * m / (eps * eps)
}

/// `dN/du = eps^-2 e^V (1 - 3 e^V)`, already cancelled against `dV/du`.
pub fn nonlinearity_derivative(u: f64, eps: f64) -> Result<f64> {
    let v = f_inverse(u)?;
    Ok(nonlinearity_derivative_of_v(v, eps))
}

pub fn nonlinearity_derivative_of_v(v: f64, eps: f64) -> f64 {
    let e = v.exp();
    e * (1.0 - 3.0 * e) / (eps * eps)
}

/// Field-wise `F^{-1}`; the error names the first offending node.
pub fn f_inverse_field(u: &Field) -> Result<Field> {
    if let Some(i) = u.values.iter().position(|&x| x > 0.0 || x.is_nan()) {
        return Err(Error::OutOfBranch { value: u.values[i], node: Some(i) });
    }
    let branch = HiggsBranch::default();
    let vals = &u.values;
    let values = par::map(vals.len(), |i| branch.inverse(vals[i]).unwrap_or(f64::NAN));
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::IterationFailure(format!("inverse map at node {i}, u = {}", vals[i])));
    }
    Field::new(&u.domain, values)
}
