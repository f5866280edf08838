//! Scalar special functions and compensated summation.
//!
//! The Gaussian tail helpers work on the log scale so that quantities like
//! `erfc(70)` (about `1e-2130`, far below the smallest positive double)
//! remain usable as exponents.

/// Natural log of the complementary error function.
///
/// For `x <= 26` the direct value `libm::erfc(x)` is still comfortably
/// inside the normal double range and we just take its log. Beyond that the
/// standard asymptotic series
///
/// `erfc(x) ~ exp(-x^2) / (x sqrt(pi)) * (1 - 1/(2x^2) + 3/(4x^4) - ...)`
///
/// gives full double precision with four correction terms.
pub fn ln_erfc(x: f64) -> f64 {
    if x <= 26.0 {
        libm::erfc(x).ln()
    } else {
        let u = 0.5 / (x * x);
        let series = 1.0 + u * (-1.0 + u * (3.0 + u * (-15.0 + u * 105.0)));
        -x * x - (x * core::f64::consts::PI.sqrt()).ln() + series.ln()
    }
}

/// Log of the standard Gaussian upper tail mass `integral_x^inf exp(-t^2/2) dt`
/// without the `1/sqrt(2 pi)` normalization.
pub fn ln_gauss_tail(x: f64) -> f64 {
    // integral = sqrt(pi/2) * erfc(x / sqrt(2))
    0.5 * (core::f64::consts::PI / 2.0).ln() + ln_erfc(x / core::f64::consts::SQRT_2)
}

/// `log(exp(a) + exp(b))` with the larger exponent factored out.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum exp(v))` over a slice, tolerating `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - hi).exp()).sum();
    hi + sum.ln()
}

/// Kahan-Babuska compensated accumulator.
///
/// Long stationary-expectation sums add up to a million terms of mixed
/// magnitude; plain summation loses several digits there, which is more
/// than the stationarity residual checks can tolerate.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[must_use]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Closed-form geometric power sums `sum_{j>=1} j^m rho^j` for `0 <= m <= 3`
/// and `0 < rho < 1`.
///
/// These collapse the infinite upper tail of the chain's moment sums into a
/// handful of flops, so truncation never enters the picture.
pub fn geometric_power_sum(m: u32, rho: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&rho));
    let q = 1.0 - rho;
    match m {
        0 => rho / q,
        1 => rho / (q * q),
        2 => rho * (1.0 + rho) / (q * q * q),
        3 => rho * (1.0 + rho * (4.0 + rho)) / (q * q * q * q),
        _ => panic!("geometric_power_sum only implemented for m <= 3"),
    }
}
