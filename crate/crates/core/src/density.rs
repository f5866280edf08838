//! Stationary densities of the two approximating diffusions.
//!
//! Both densities are proportional to `exp(integral 2b/a)` (divided by `a`
//! in the state-dependent case) and split naturally into three pieces:
//!
//! * a Gaussian-type left tail below the empty-system coordinate,
//! * the bulk between the two kinks, where only quadrature works,
//! * an exact exponential right tail above the saturation point.
//!
//! The tails are integrated in closed form through [`ln_erfc`] and the
//! exponential primitive, and only the bulk goes through the adaptive
//! Gauss-Kronrod machinery, on a log-shifted scale so the integrand peaks
//! at 1. Region masses are combined with log-sum-exp; in heavy traffic the
//! left tail can carry mass around `exp(-4900)` and still must not poison
//! the normaliser.
//!
//! Distribution functions are served from whichever side of the split is
//! numerically clean: a native upper-tail form on the right, a native lower
//! form on the left. Interval probabilities in the exponential tail use
//! `expm1` so that point masses of order `1e-300` keep full relative
//! precision.

use crate::params::{DerivedParams, Region};
use crate::quad::{
    integrate_adaptive, integrate_with_splits, PanelIntegral, QuadConfig, QuadError,
};
use crate::special::{ln_erfc, log_add_exp, log_sum_exp};

/// Which diffusion the density belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    /// Variance coefficient follows the state (`a(x)`).
    StateDependent,
    /// Variance frozen at the central value `a(0) = 2 mu`.
    ConstantCoefficient,
}

#[derive(Debug, thiserror::Error)]
pub enum DensityError {
    #[error("quadrature failed while evaluating the stationary density: {0}")]
    Quad(#[from] QuadError),
}

/// A normalised piecewise density carried in log space.
#[derive(Debug, Clone)]
pub struct PiecewiseLogDensity {
    params: DerivedParams,
    kind: DensityKind,
    cfg: QuadConfig,
    /// Log of the normalising constant: `pdf = exp(log_unnorm + log_norm)`.
    log_norm: f64,
    /// Unnormalised log masses of the left, middle, and right regions.
    log_mass: [f64; 3],
    /// Decay rate of `log_unnorm` to the right of the saturation point.
    right_rate: f64,
    /// Gaussian curvature of the left tail: `1` state-dependent, `1/2`
    /// constant-coefficient.
    left_curvature: f64,
    /// `log_unnorm(y) = left_offset - left_curvature * y^2` on the left.
    left_offset: f64,
    /// Shift applied to the bulk integrand so it peaks near 1.
    mid_shift: f64,
    mid: PanelIntegral,
    condition_warning: Option<String>,
}

/// Severe-conditioning threshold: below this spare capacity the right tail
/// extends over more than ~1e8 length units and downstream scans become
/// meaningless even though each local evaluation is still exact.
const CONDITION_LIMIT: f64 = 1e-8;

impl PiecewiseLogDensity {
    pub fn build(
        params: &DerivedParams,
        kind: DensityKind,
        cfg: &QuadConfig,
    ) -> Result<Self, DensityError> {
        let x_e = params.x_empty();
        let x_s = params.x_saturation();
        let az = params.spare_capacity();

        let right_rate = match kind {
            DensityKind::StateDependent => params.saturated_decay_rate(),
            DensityKind::ConstantCoefficient => az,
        };
        let left_curvature = match kind {
            DensityKind::StateDependent => 1.0,
            DensityKind::ConstantCoefficient => 0.5,
        };

        let mut half_built = Self {
            params: *params,
            kind,
            cfg: *cfg,
            log_norm: 0.0,
            log_mass: [f64::NEG_INFINITY; 3],
            right_rate,
            left_curvature,
            left_offset: 0.0,
            mid_shift: 0.0,
            mid: PanelIntegral {
                value: 0.0,
                error: 0.0,
                panels: Vec::new(),
                prefix: vec![0.0],
            },
            condition_warning: None,
        };
        half_built.left_offset =
            half_built.log_unnorm(x_e) + left_curvature * x_e * x_e;

        // Peak of the bulk integrand: the constant-coefficient exponent
        // peaks at 0, the state-dependent one at -delta/2 where the weight
        // growth and the 1/a decline balance.
        let peak = match kind {
            DensityKind::StateDependent => -params.delta() / 2.0,
            DensityKind::ConstantCoefficient => 0.0,
        }
        .clamp(x_e, x_s);
        let shift = half_built
            .log_unnorm(peak)
            .max(half_built.log_unnorm(x_e))
            .max(half_built.log_unnorm(x_s));
        half_built.mid_shift = shift;

        let mid = integrate_adaptive(
            &|y: f64| (half_built.log_unnorm(y) - shift).exp(),
            x_e,
            x_s,
            cfg,
        )?;

        let (_, ln_left) = half_built.left_tail_integral(0);
        let ln_mid = shift + mid.value.ln();
        // Right region: integral of exp(log_unnorm(x_s) - rate (y - x_s)).
        let ln_right = half_built.log_unnorm(x_s) - right_rate.ln();

        half_built.mid = mid;
        half_built.log_mass = [ln_left, ln_mid, ln_right];
        half_built.log_norm = -log_sum_exp(&half_built.log_mass);
        half_built.condition_warning = (az < CONDITION_LIMIT).then(|| {
            format!(
                "spare capacity |zeta| = {az:.3e} is below {CONDITION_LIMIT:.0e}; \
                 the saturated tail decays on a length scale of {:.3e} and \
                 tail summaries lose meaning",
                1.0 / right_rate
            )
        });
        Ok(half_built)
    }

    pub fn params(&self) -> &DerivedParams {
        &self.params
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    /// Set when the parameters are so close to critical load that derived
    /// quantities are numerically degenerate.
    pub fn condition_warning(&self) -> Option<&str> {
        self.condition_warning.as_deref()
    }

    /// Exponential decay rate of the density above the saturation point.
    pub fn tail_decay_rate(&self) -> f64 {
        self.right_rate
    }

    /// Log of the unnormalised density shape.
    pub fn log_unnorm(&self, x: f64) -> f64 {
        match self.kind {
            DensityKind::StateDependent => {
                self.params.log_weight(x) - self.params.diffusion(x).ln()
            }
            DensityKind::ConstantCoefficient => {
                let zeta = self.params.zeta();
                if x <= self.params.x_saturation() {
                    -x * x / 2.0
                } else {
                    zeta * x + zeta * zeta / 2.0
                }
            }
        }
    }

    /// Log of the normalising constant.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.log_unnorm(x) + self.log_norm
    }

    /// Normalised mass of each region (left, middle, right).
    pub fn region_masses(&self) -> [f64; 3] {
        [
            (self.log_mass[0] + self.log_norm).exp(),
            (self.log_mass[1] + self.log_norm).exp(),
            (self.log_mass[2] + self.log_norm).exp(),
        ]
    }

    /// Signed log of `integral_{-inf}^{x_empty} y^p q(y) dy` for `p <= 2`:
    /// returns `(sign, ln_abs)`.
    fn left_tail_integral(&self, p: u32) -> (f64, f64) {
        let c = -self.params.x_empty();
        self.left_tail_integral_to(p, c)
    }

    /// Same, but integrating only up to `-c <= x_empty`.
    fn left_tail_integral_to(&self, p: u32, c: f64) -> (f64, f64) {
        // Substitute u = sqrt(s) y to reduce to the unit-curvature kernel
        // exp(-u^2); each power of y contributes s^(-1/2).
        let s = self.left_curvature;
        let scale = self.left_offset - (p + 1) as f64 * 0.5 * s.ln();
        let cs = c * s.sqrt();
        let half_sqrt_pi = 0.5 * core::f64::consts::PI.sqrt();
        match p {
            // integral_{-inf}^{-c} e^{-u^2} du = sqrt(pi)/2 erfc(c)
            0 => (1.0, scale + half_sqrt_pi.ln() + ln_erfc(cs)),
            // integral u e^{-u^2} = -e^{-c^2}/2
            1 => (-1.0, scale - cs * cs - core::f64::consts::LN_2),
            // integral u^2 e^{-u^2} = sqrt(pi)/4 erfc(c) + c/2 e^{-c^2}
            2 => {
                let t1 = (half_sqrt_pi / 2.0).ln() + ln_erfc(cs);
                let t2 = (cs / 2.0).ln() - cs * cs;
                (1.0, scale + log_add_exp(t1, t2))
            }
            _ => panic!("left tail integrals implemented for p <= 2"),
        }
    }

    /// `integral_{c}^{inf} y^p q(y) dy` for `c >= x_saturation`, `p <= 2`,
    /// as `ln` of a positive value.
    fn right_tail_integral_from(&self, p: u32, c: f64) -> f64 {
        let beta = self.right_rate;
        let lead = self.log_unnorm(c);
        let poly = match p {
            0 => 1.0 / beta,
            1 => c / beta + 1.0 / (beta * beta),
            2 => c * c / beta + 2.0 * c / (beta * beta) + 2.0 / (beta * beta * beta),
            _ => panic!("right tail integrals implemented for p <= 2"),
        };
        lead + poly.ln()
    }

    /// Distribution function `P(Y <= x)`.
    pub fn cdf(&self, x: f64) -> Result<f64, DensityError> {
        let x_e = self.params.x_empty();
        let x_s = self.params.x_saturation();
        if x <= x_e {
            let (_, ln_val) = self.left_tail_integral_to(0, -x);
            Ok((ln_val + self.log_norm).exp())
        } else if x < x_s {
            let left = (self.log_mass[0] + self.log_norm).exp();
            let partial = self.mid.prefix_to(
                &|y: f64| (self.log_unnorm(y) - self.mid_shift).exp(),
                x,
                &self.cfg,
            )?;
            Ok(left + (self.mid_shift + self.log_norm).exp() * partial)
        } else {
            Ok(1.0 - self.upper_tail(x)?)
        }
    }

    /// Complement `P(Y > x)`, exact on the saturated side where `cdf` would
    /// round to 1.
    pub fn upper_tail(&self, x: f64) -> Result<f64, DensityError> {
        let x_e = self.params.x_empty();
        let x_s = self.params.x_saturation();
        if x >= x_s {
            Ok((self.right_tail_integral_from(0, x) + self.log_norm).exp())
        } else if x > x_e {
            let right = (self.log_mass[2] + self.log_norm).exp();
            let partial = self.mid.prefix_to(
                &|y: f64| (self.log_unnorm(y) - self.mid_shift).exp(),
                x,
                &self.cfg,
            )?;
            let mid_rest = self.mid.value - partial;
            Ok(right + (self.mid_shift + self.log_norm).exp() * mid_rest)
        } else {
            Ok(1.0 - self.cdf(x)?)
        }
    }

    /// `P(lo < Y <= hi)` with tail-aware branches so that narrow intervals
    /// far from the bulk keep relative precision.
    pub fn interval_probability(&self, lo: f64, hi: f64) -> Result<f64, DensityError> {
        if hi <= lo {
            return Ok(0.0);
        }
        let x_e = self.params.x_empty();
        let x_s = self.params.x_saturation();
        if lo >= x_s {
            // exponential branch: q(lo)/rate * (1 - e^{-rate (hi-lo)})
            let ln_lead = self.log_unnorm(lo) - self.right_rate.ln() + self.log_norm;
            let span = -(-self.right_rate * (hi - lo)).exp_m1();
            return Ok(ln_lead.exp() * span);
        }
        if hi <= x_e {
            // difference of two Gaussian tail masses, largest factored out
            let (_, ln_hi) = self.left_tail_integral_to(0, -hi);
            let (_, ln_lo) = self.left_tail_integral_to(0, -lo);
            let span = -(ln_lo - ln_hi).exp_m1();
            return Ok((ln_hi + self.log_norm).exp() * span);
        }
        Ok((self.cdf(hi)? - self.cdf(lo)?).max(0.0))
    }

    /// `E[Y^p]` (or `E[|Y|^p]`) for `p <= 2`.
    pub fn moment(&self, power: u32, absolute: bool) -> Result<f64, DensityError> {
        assert!(power <= 2, "moments implemented up to order 2");
        let x_e = self.params.x_empty();
        let x_s = self.params.x_saturation();

        let (mut sign_l, ln_l) = self.left_tail_integral(power);
        if absolute && power % 2 == 1 {
            // left coordinates are negative, |y|^p flips the sign back
            sign_l = -sign_l;
        }
        let left = sign_l * (ln_l + self.log_norm).exp();

        let right = (self.right_tail_integral_from(power, x_s) + self.log_norm).exp();

        let shift = self.mid_shift;
        let weight = |y: f64| (self.log_unnorm(y) - shift).exp();
        let mid_raw = if absolute {
            integrate_with_splits(
                &|y: f64| y.abs().powi(power as i32) * weight(y),
                x_e,
                x_s,
                &[0.0],
                &self.cfg,
            )?
        } else {
            integrate_with_splits(
                &|y: f64| y.powi(power as i32) * weight(y),
                x_e,
                x_s,
                &[0.0],
                &self.cfg,
            )?
        };
        let mid = (shift + self.log_norm).exp() * mid_raw;
        Ok(left + mid + right)
    }

    /// Supremum of the density and the coordinate attaining it. The tails
    /// are monotone toward the bulk, so only the bulk needs scanning; the
    /// scan runs on the grid scale `delta/16` with the analytic interior
    /// peak added as a candidate.
    pub fn sup_density(&self) -> (f64, f64) {
        let x_e = self.params.x_empty();
        let x_s = self.params.x_saturation();
        let mut candidates = vec![x_e, x_s];
        let analytic_peak = match self.kind {
            DensityKind::StateDependent => -self.params.delta() / 2.0,
            DensityKind::ConstantCoefficient => 0.0,
        };
        if analytic_peak > x_e && analytic_peak < x_s {
            candidates.push(analytic_peak);
        }
        let step = self.params.delta() / 16.0;
        let span = x_s - x_e;
        let n_steps = (span / step).ceil().min(4e6) as u64;
        let eff_step = span / n_steps as f64;
        let mut best_x = x_e;
        let mut best_ln = f64::NEG_INFINITY;
        for i in 0..=n_steps {
            let x = x_e + eff_step * i as f64;
            let v = self.log_unnorm(x);
            if v > best_ln {
                best_ln = v;
                best_x = x;
            }
        }
        for &x in &candidates {
            let v = self.log_unnorm(x);
            if v > best_ln {
                best_ln = v;
                best_x = x;
            }
        }
        ((best_ln + self.log_norm).exp(), best_x)
    }

    /// Region classification passthrough for callers that iterate panels.
    pub fn region_of(&self, x: f64) -> Region {
        self.params.region_of(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::SystemParams;
    use approx::assert_relative_eq;

    fn density(n: u32, load: f64, mu: f64, kind: DensityKind) -> PiecewiseLogDensity {
        let p = SystemParams::from_load(n, load, mu).unwrap().derive().unwrap();
        PiecewiseLogDensity::build(&p, kind, &QuadConfig::default()).unwrap()
    }

    #[test]
    fn state_dependent_reference_values() {
        let d = density(5, 4.0, 1.0, DensityKind::StateDependent);
        assert_relative_eq!(d.log_normalizer(), -0.581_985_074_977_457_1, epsilon = 1e-12);
        assert_relative_eq!(d.pdf(0.0), 0.279_394_014_362_428_44, max_relative = 1e-10);
        let masses = d.region_masses();
        assert_relative_eq!(masses[0], 0.005_752_829_454_137_042, max_relative = 1e-9);
        assert_relative_eq!(masses[1], 0.496_397_196_614_530_5, max_relative = 1e-10);
        assert_relative_eq!(masses[2], 0.497_849_973_931_332_6, max_relative = 1e-10);
        assert_relative_eq!(masses[0] + masses[1] + masses[2], 1.0, epsilon = 1e-13);

        assert_relative_eq!(d.cdf(0.0).unwrap(), 0.375_366_414_580_531_4, max_relative = 1e-10);
        assert_relative_eq!(d.cdf(0.5).unwrap(), 0.502_150_026_068_667_3, max_relative = 1e-10);

        assert_relative_eq!(d.moment(1, false).unwrap(), 1.120_162_441_384_946_8, max_relative = 1e-11);
        assert_relative_eq!(d.moment(2, false).unwrap(), 6.601_112_907_899_906, max_relative = 1e-11);
        assert_relative_eq!(d.moment(1, true).unwrap(), 1.678_950_470_129_482_4, max_relative = 1e-11);
    }

    #[test]
    fn constant_coefficient_reference_values() {
        let d = density(5, 4.0, 1.0, DensityKind::ConstantCoefficient);
        assert_relative_eq!(d.log_normalizer(), -1.252_258_030_019_554_3, epsilon = 1e-10);
        assert_relative_eq!(d.pdf(0.0), 0.285_858_590_279_630_1, max_relative = 1e-10);
        assert_relative_eq!(d.moment(1, false).unwrap(), 1.009_077_281_995_889_8, max_relative = 1e-10);
        assert_relative_eq!(d.moment(2, false).unwrap(), 5.540_847_768_981_505, max_relative = 1e-10);

        // The peak value also has a closed form through the Gaussian cdf.
        let az = d.params().spare_capacity();
        let phi = 0.5 * libm::erfc(-az / core::f64::consts::SQRT_2);
        let kappa_inv =
            (2.0 * core::f64::consts::PI).sqrt() * phi + (-az * az / 2.0).exp() / az;
        assert_relative_eq!(d.pdf(0.0), 1.0 / kappa_inv, max_relative = 1e-12);
    }

    #[test]
    fn cdf_and_upper_tail_are_complements() {
        let d = density(100, 80.0, 1.0, DensityKind::StateDependent);
        for x in [-9.5, -3.0, 0.0, 2.0, 2.236, 5.0, 30.0] {
            let c = d.cdf(x).unwrap();
            let u = d.upper_tail(x).unwrap();
            assert_relative_eq!(c + u, 1.0, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn deep_tail_quantities_keep_relative_precision() {
        let d = density(100, 99.8, 1.0, DensityKind::StateDependent);
        let far = 3000.0;
        let u = d.upper_tail(far).unwrap();
        assert!(u > 0.0 && u < 1e-10);
        // interval in the far tail: expm1 branch against the closed form
        let p = d.interval_probability(far, far + 0.05).unwrap();
        let beta = d.params().saturated_decay_rate();
        let expect = u * -(-beta * 0.05f64).exp_m1();
        assert_relative_eq!(p, expect, max_relative = 1e-12);

        let left = d.interval_probability(-25.0, -20.0).unwrap();
        assert!(left > 0.0 && left < 1e-80);
    }

    #[test]
    fn interval_probability_matches_cdf_difference_in_bulk() {
        let d = density(5, 4.0, 1.0, DensityKind::StateDependent);
        for (lo, hi) in [(-2.5, -1.0), (-1.0, 0.3), (0.1, 0.4), (-0.25, 0.75)] {
            let direct = d.interval_probability(lo, hi).unwrap();
            let diff = d.cdf(hi).unwrap() - d.cdf(lo).unwrap();
            assert_relative_eq!(direct, diff, epsilon = 1e-12);
        }
    }

    #[test]
    fn density_is_invariant_to_the_service_rate() {
        let a = density(50, 46.59, 1.0, DensityKind::StateDependent);
        let b = density(50, 46.59, 2.9, DensityKind::StateDependent);
        for x in [-6.0, -1.0, 0.0, 0.47, 3.0] {
            assert_relative_eq!(a.pdf(x), b.pdf(x), max_relative = 1e-11);
            assert_relative_eq!(a.cdf(x).unwrap(), b.cdf(x).unwrap(), max_relative = 1e-10);
        }
    }

    #[test]
    fn sup_density_obeys_global_bounds() {
        for &(n, load) in &[(5u32, 4.0), (100, 60.0), (100, 99.8), (500, 488.94)] {
            let nu = density(n, load, 1.0, DensityKind::StateDependent);
            let (sup_nu, at_nu) = nu.sup_density();
            assert!(sup_nu <= 4.0, "sup {sup_nu} at n={n}");
            assert!(at_nu < nu.params().x_saturation() + 1e-12);

            let eta = density(n, load, 1.0, DensityKind::ConstantCoefficient);
            let (sup_eta, at_eta) = eta.sup_density();
            assert!(sup_eta <= (2.0 / core::f64::consts::PI).sqrt() + 1e-12);
            assert_relative_eq!(sup_eta, eta.pdf(0.0), max_relative = 1e-9);
            assert!(at_eta.abs() < 1e-6);
        }
    }

    #[test]
    fn conditioning_warning_triggers_only_near_critical() {
        let fine = density(5, 4.999_999, 1.0, DensityKind::StateDependent);
        assert!(fine.condition_warning().is_none());
        let sick = density(5, 5.0 - 2e-8, 1.0, DensityKind::StateDependent);
        assert!(sick.condition_warning().is_some());
    }
}
