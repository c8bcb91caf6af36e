//! Exponential integrals.

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Entire function `Ein(z) = sum_{n>=1} (-1)^{n+1} z^n / (n n!)`, so that
/// `E1(z) = -gamma - ln z + Ein(z)`.
pub fn ein(z: f64) -> f64 {
    if z > 2.0 {
        return e1(z) + EULER_GAMMA + z.ln();
    }
    let mut term = z; // (-1)^{n+1} z^n / n!
    let mut sum = 0.0;
    let mut n = 1.0;
    loop {
        let add = term / n;
        sum += add;
        if add.abs() <= 1e-17 * sum.abs() || n > 60.0 {
            break;
        }
        n += 1.0;
        term *= -z / n;
    }
    sum
}

/// Exponential integral `E1(z) = ∫_z^∞ e^{-t}/t dt` for `z > 0`.
pub fn e1(z: f64) -> f64 {
    if z <= 0.0 {
        return f64::INFINITY;
    }
    if z > 700.0 {
        return 0.0;
    }
    if z <= 1.0 {
        return -EULER_GAMMA - z.ln() + ein(z);
    }
    // Modified Lentz evaluation of the continued fraction.
    let tiny = 1e-300;
    let mut b = z + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..200 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-z).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((e1(1.0) - 0.219_383_934_395_520_27).abs() < 1e-15);
        assert!((e1(0.1) - 1.822_923_958_419_390_6).abs() < 1e-14);
        assert!((e1(10.0) / 4.156_968_929_685_324e-6 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn ein_is_continuous_across_switch() {
        let a = ein(2.0 - 1e-12);
        let b = ein(2.0 + 1e-12);
        assert!((a - b).abs() < 1e-11);
        assert!((ein(1e-3) - (1e-3 - 0.25e-6 + 1e-9 / 18.0)).abs() < 2e-14);
    }
}
