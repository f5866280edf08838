//! Poisson-equation solutions and the discrete-generator expansion.
//!
//! For a centered test function `h` and the stationary density `q` of one
//! of the two diffusions, the function
//!
//! `f'(x) = 2 / (q(x) a(x)) * integral_{-inf}^x (E h - h) q dy`
//!
//! satisfies `b f' + a f''/2 = E h - h`. The same product `q a` appears in
//! both the integrand weight and the prefactor, which collapses the usual
//! integrating-factor ratio into a single density ratio; integrals are
//! evaluated with that ratio in log space so the solve stays well behaved
//! arbitrarily deep in either tail. Beyond the mean of the integration
//! limit, the mirrored representation integrating toward `+inf` is used;
//! the two agree on the overlap to quadrature precision, which the test
//! suite checks.
//!
//! Higher derivatives come out algebraically: `f''` from the equation
//! itself, and the one-sided `f'''` from differentiating it, which is what
//! makes the Taylor-remainder machinery cheap. The remainders feed the
//! expansion of the chain generator around the diffusion generator:
//!
//! `Gc f = Gd f + (delta^2/6) b f''' + lambda e1 + d e2`
//!
//! exact at grid points, whose stationary expectation decomposes the moment
//! gap between chain and diffusion into four interpretable pieces.

use std::cell::RefCell;
use std::sync::Arc;

use serde::Serialize;

use crate::density::{DensityError, DensityKind, PiecewiseLogDensity};
use crate::quad::{
    integrate_left_tail, integrate_right_tail, integrate_with_splits, QuadConfig, QuadError,
};
use crate::special::KahanSum;

#[derive(Debug, thiserror::Error)]
pub enum SteinError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("the generator expansion is defined for the state-dependent density only")]
    WrongKind,
}

/// A test function with its first derivative and the points where higher
/// derivatives kink (quadrature is told to split there).
#[derive(Clone)]
pub struct TestFunction {
    name: String,
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    dh: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    kinks: Vec<f64>,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl TestFunction {
    /// `dh` must be the derivative of `h` wherever it exists; list in
    /// `kinks` every point where it does not.
    pub fn new<H, D>(name: impl Into<String>, kinks: Vec<f64>, h: H, dh: D) -> Self
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            h: Arc::new(h),
            dh: Arc::new(dh),
            kinks,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.h)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.dh)(x)
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// `h(x) = x`.
    pub fn coordinate() -> Self {
        Self::new("coordinate", Vec::new(), |x| x, |_| 1.0)
    }

    /// `h(x) = ln cosh x`, a smooth 1-Lipschitz stand-in for `|x|`.
    pub fn smooth_abs() -> Self {
        Self::new(
            "smooth-abs",
            Vec::new(),
            |x: f64| x.abs() + (-2.0 * x.abs()).exp().ln_1p() - core::f64::consts::LN_2,
            f64::tanh,
        )
    }

    /// `h(x) = sin x`.
    pub fn sine() -> Self {
        Self::new("sine", Vec::new(), f64::sin, f64::cos)
    }
}

/// The Taylor remainder pair around `x` with step `step`, for a supplied
/// third-derivative evaluator `g` and its reference value `g_ref` at `x-`:
///
/// `e1 = 1/2 int_x^{x+step} (x+step-y)^2 (g(y) - g_ref) dy`
/// `e2 = -1/2 int_{x-step}^x (y-(x-step))^2 (g(y) - g_ref) dy`
///
/// Both vanish identically when `g` is constant equal to `g_ref`.
pub fn taylor_remainder_kernels<G: Fn(f64) -> f64>(
    g: &G,
    g_ref: f64,
    x: f64,
    step: f64,
    splits: &[f64],
    cfg: &QuadConfig,
) -> Result<(f64, f64), QuadError> {
    let e1 = 0.5
        * integrate_with_splits(
            &|y: f64| {
                let w = x + step - y;
                w * w * (g(y) - g_ref)
            },
            x,
            x + step,
            splits,
            cfg,
        )?;
    let e2 = -0.5
        * integrate_with_splits(
            &|y: f64| {
                let w = y - (x - step);
                w * w * (g(y) - g_ref)
            },
            x - step,
            x,
            splits,
            cfg,
        )?;
    Ok((e1, e2))
}

/// Solution of the Poisson equation for one test function against one
/// stationary density.
pub struct SteinSolution<'d> {
    density: &'d PiecewiseLogDensity,
    h: TestFunction,
    expected_h: f64,
    cfg: QuadConfig,
}

impl<'d> SteinSolution<'d> {
    pub fn build(
        density: &'d PiecewiseLogDensity,
        h: TestFunction,
        cfg: &QuadConfig,
    ) -> Result<Self, SteinError> {
        let mut solution = Self {
            density,
            h,
            expected_h: 0.0,
            cfg: *cfg,
        };
        solution.expected_h = solution.expectation_of_h()?;
        Ok(solution)
    }

    pub fn test_function(&self) -> &TestFunction {
        &self.h
    }

    /// `E[h(Y)]` under the solution's density.
    pub fn expected_h(&self) -> f64 {
        self.expected_h
    }

    fn params(&self) -> &crate::params::DerivedParams {
        self.density.params()
    }

    /// Variance coefficient seen by this solution's generator.
    fn coeff_a(&self, x: f64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().diffusion(x),
            DensityKind::ConstantCoefficient => 2.0 * self.params().system().mu,
        }
    }

    fn coeff_r(&self, x: f64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().drift_ratio(x),
            DensityKind::ConstantCoefficient => {
                if x <= self.params().x_saturation() {
                    -x
                } else {
                    self.params().zeta()
                }
            }
        }
    }

    fn coeff_rp_left(&self, x: f64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().drift_ratio_slope_left(x),
            DensityKind::ConstantCoefficient => {
                if x <= self.params().x_saturation() {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn coeff_ap_left(&self, x: f64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().diffusion_slope_left(x),
            DensityKind::ConstantCoefficient => 0.0,
        }
    }

    fn coeff_rp_left_index(&self, k: i64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().drift_ratio_slope_left_of_index(k),
            DensityKind::ConstantCoefficient => {
                if k <= self.params().system().n as i64 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn coeff_ap_left_index(&self, k: i64) -> f64 {
        match self.density.kind() {
            DensityKind::StateDependent => self.params().diffusion_slope_left_of_index(k),
            DensityKind::ConstantCoefficient => 0.0,
        }
    }

    /// Splits handed to every quadrature touching `h` or the density.
    fn standard_splits(&self) -> Vec<f64> {
        let p = self.params();
        let mut s = vec![p.x_empty(), 0.0, p.x_saturation()];
        s.extend_from_slice(self.h.kinks());
        s
    }

    fn expectation_of_h(&self) -> Result<f64, SteinError> {
        let d = self.density;
        let p = self.params();
        let (x_e, x_s) = (p.x_empty(), p.x_saturation());
        let log_norm = d.log_normalizer();

        let shift_left = d.log_unnorm(x_e);
        let left_scale = (1.0 / (1.0 + x_e.abs())).min(1.0);
        let left = integrate_left_tail(
            &|y: f64| self.h.value(y) * (d.log_unnorm(y) - shift_left).exp(),
            x_e,
            left_scale,
            &self.cfg,
        )? * (shift_left + log_norm).exp();

        let shift_mid = d.log_unnorm(0.0).max(shift_left).max(d.log_unnorm(x_s));
        let mid = integrate_with_splits(
            &|y: f64| self.h.value(y) * (d.log_unnorm(y) - shift_mid).exp(),
            x_e,
            x_s,
            &self.standard_splits(),
            &self.cfg,
        )? * (shift_mid + log_norm).exp();

        let shift_right = d.log_unnorm(x_s);
        let right_scale = (1.0 / d.tail_decay_rate()).clamp(0.01, 100.0);
        let right = integrate_right_tail(
            &|y: f64| self.h.value(y) * (d.log_unnorm(y) - shift_right).exp(),
            x_s,
            right_scale,
            &self.cfg,
        )? * (shift_right + log_norm).exp();

        Ok(left + mid + right)
    }

    /// `f'(x)`, from whichever tail representation converges on that side
    /// of the center.
    pub fn fprime(&self, x: f64) -> Result<f64, SteinError> {
        if x <= 0.0 {
            self.fprime_from_left(x)
        } else {
            self.fprime_from_right(x)
        }
    }

    /// Representation integrating from `-inf` up to `x`; valid everywhere,
    /// numerically sensible for `x <= 0`.
    pub fn fprime_from_left(&self, x: f64) -> Result<f64, SteinError> {
        let d = self.density;
        let p = self.params();
        let x_e = p.x_empty();
        let ln_at_x = d.log_unnorm(x);
        let integrand =
            |y: f64| (self.expected_h - self.h.value(y)) * (d.log_unnorm(y) - ln_at_x).exp();

        let tail_edge = x.min(x_e);
        let scale = (1.0 / (1.0 + tail_edge.abs())).min(1.0);
        let mut total = integrate_left_tail(&integrand, tail_edge, scale, &self.cfg)?;
        if x > x_e {
            total += integrate_with_splits(
                &integrand,
                x_e,
                x,
                &self.standard_splits(),
                &self.cfg,
            )?;
        }
        Ok(2.0 * total / self.coeff_a(x))
    }

    /// Mirrored representation integrating from `x` to `+inf`; numerically
    /// sensible for `x > 0`.
    pub fn fprime_from_right(&self, x: f64) -> Result<f64, SteinError> {
        let d = self.density;
        let p = self.params();
        let x_s = p.x_saturation();
        let ln_at_x = d.log_unnorm(x);
        let integrand =
            |y: f64| (self.expected_h - self.h.value(y)) * (d.log_unnorm(y) - ln_at_x).exp();

        let tail_edge = x.max(x_s);
        let scale = (1.0 / d.tail_decay_rate()).clamp(0.01, 100.0);
        let mut total = integrate_right_tail(&integrand, tail_edge, scale, &self.cfg)?;
        if x < x_s {
            total += integrate_with_splits(
                &integrand,
                x,
                x_s,
                &self.standard_splits(),
                &self.cfg,
            )?;
        }
        Ok(-2.0 * total / self.coeff_a(x))
    }

    /// `f''(x)` read off the Poisson equation; continuous across the kinks.
    pub fn fsecond(&self, x: f64) -> Result<f64, SteinError> {
        let fp = self.fprime(x)?;
        Ok(self.fsecond_given(x, fp))
    }

    fn fsecond_given(&self, x: f64, fp: f64) -> f64 {
        (2.0 / self.coeff_a(x)) * (self.expected_h - self.h.value(x)) - self.coeff_r(x) * fp
    }

    /// Left limit of `f'''` at an arbitrary coordinate.
    pub fn fthird_left(&self, x: f64) -> Result<f64, SteinError> {
        let fp = self.fprime(x)?;
        let fpp = self.fsecond_given(x, fp);
        Ok(self.fthird_from(x, fp, fpp, self.coeff_rp_left(x), self.coeff_ap_left(x)))
    }

    /// Left limit of `f'''` at grid point `k`, using the index to pick the
    /// branch so roundoff in the coordinate cannot select the wrong side.
    pub fn fthird_left_at_index(&self, k: i64) -> Result<f64, SteinError> {
        let x = self.params().x_of_index(k.max(0) as u64);
        let fp = self.fprime(x)?;
        let fpp = self.fsecond_given(x, fp);
        Ok(self.fthird_from(
            x,
            fp,
            fpp,
            self.coeff_rp_left_index(k),
            self.coeff_ap_left_index(k),
        ))
    }

    fn fthird_from(&self, x: f64, fp: f64, fpp: f64, rp: f64, ap: f64) -> f64 {
        let a = self.coeff_a(x);
        -rp * fp
            - self.coeff_r(x) * fpp
            - (2.0 / a) * self.h.deriv(x)
            - (2.0 * ap / (a * a)) * (self.expected_h - self.h.value(x))
    }

    /// Residual of the Poisson equation; zero up to quadrature error.
    pub fn poisson_residual(&self, x: f64) -> Result<f64, SteinError> {
        let fp = self.fprime(x)?;
        let fpp = self.fsecond_given(x, fp);
        let p = self.params();
        let gen = p.drift(x) * fp + 0.5 * self.coeff_a(x) * fpp;
        Ok(gen - (self.expected_h - self.h.value(x)))
    }

    /// Independent integral route to `f''`, for verification: the same
    /// density-ratio trick applied to the derivative of the equation,
    ///
    /// `f''(x) = 1/(q a)(x) * int_{-inf}^x [ -r' f' - (2/a) h'
    ///            - (2 a'/a^2)(E h - h) ] (q a)(y) dy`.
    ///
    /// Each integrand sample needs its own `f'` solve, so this is orders of
    /// magnitude slower than [`fsecond`](Self::fsecond); tests use it at a
    /// handful of points.
    pub fn fsecond_via_tail_integral(&self, x: f64) -> Result<f64, SteinError> {
        let d = self.density;
        let p = self.params();
        let x_e = p.x_empty();
        let ln_qa_x = d.log_unnorm(x) + self.coeff_a(x).ln();

        let trap: RefCell<Option<SteinError>> = RefCell::new(None);
        let integrand = |y: f64| {
            let fp = match self.fprime(y) {
                Ok(v) => v,
                Err(e) => {
                    *trap.borrow_mut() = Some(e);
                    return 0.0;
                }
            };
            let a = self.coeff_a(y);
            let w = -self.coeff_rp_left(y) * fp
                - (2.0 / a) * self.h.deriv(y)
                - (2.0 * self.coeff_ap_left(y) / (a * a)) * (self.expected_h - self.h.value(y));
            w * (d.log_unnorm(y) + a.ln() - ln_qa_x).exp()
        };

        let tail_edge = x.min(x_e);
        let scale = (1.0 / (1.0 + tail_edge.abs())).min(1.0);
        let mut total = integrate_left_tail(&integrand, tail_edge, scale, &self.cfg)?;
        if x > x_e {
            total +=
                integrate_with_splits(&integrand, x_e, x, &self.standard_splits(), &self.cfg)?;
        }
        if let Some(e) = trap.into_inner() {
            return Err(e);
        }
        Ok(total)
    }

    /// Taylor remainder pair at grid point `k` with the grid step.
    pub fn taylor_remainders(&self, k: i64) -> Result<(f64, f64), SteinError> {
        let p = self.params();
        let x = p.x_of_index(k.max(0) as u64);
        let step = p.delta();
        let g_ref = self.fthird_left_at_index(k)?;

        let trap: RefCell<Option<SteinError>> = RefCell::new(None);
        let g = |y: f64| match self.fthird_left(y) {
            Ok(v) => v,
            Err(e) => {
                *trap.borrow_mut() = Some(e);
                0.0
            }
        };
        // Each sample of the integrand carries the quadrature noise of a
        // fresh f''' solve. Where the integrand is analytically zero that
        // noise is all there is, so refinement can never converge against
        // a pure relative tolerance; an absolute floor at the noise scale
        // of the kernel volume keeps those integrals cheap and honest.
        let mut cfg = self.cfg;
        cfg.abs_floor = cfg
            .abs_floor
            .max(100.0 * cfg.rel_tol * step.powi(3) * (1.0 + g_ref.abs()));
        let (e1, e2) =
            taylor_remainder_kernels(&g, g_ref, x, step, &self.standard_splits(), &cfg)?;
        if let Some(e) = trap.into_inner() {
            return Err(e);
        }
        Ok((e1, e2))
    }

    /// Both sides of the generator expansion at grid point `k`, evaluated
    /// independently. `defect` is the gap between the chain generator and
    /// the expansion terms; it reflects only quadrature error.
    pub fn generator_expansion(&self, k: u64) -> Result<GeneratorExpansion, SteinError> {
        if self.density.kind() != DensityKind::StateDependent {
            return Err(SteinError::WrongKind);
        }
        let p = self.params();
        let x = p.x_of_index(k);
        let step = p.delta();
        let sys = p.system();

        let trap: RefCell<Option<SteinError>> = RefCell::new(None);
        let fp_of = |y: f64| match self.fprime(y) {
            Ok(v) => v,
            Err(e) => {
                *trap.borrow_mut() = Some(e);
                0.0
            }
        };
        // f(x + step) - f(x) and f(x) - f(x - step) through f' panels.
        let up = integrate_with_splits(&fp_of, x, x + step, &self.standard_splits(), &self.cfg)?;
        let down =
            integrate_with_splits(&fp_of, x - step, x, &self.standard_splits(), &self.cfg)?;
        if let Some(e) = trap.into_inner() {
            return Err(e);
        }
        let chain_side = sys.lambda * up + p.service_rate(k) * (-down);

        let fp = self.fprime(x)?;
        let fpp = self.fsecond_given(x, fp);
        let diffusion_side = p.drift(x) * fp + 0.5 * self.coeff_a(x) * fpp;

        let f3 = self.fthird_left_at_index(k as i64)?;
        let curvature_term = step * step / 6.0 * p.drift(x) * f3;
        let (e1, e2) = self.taylor_remainders(k as i64)?;
        let eps1_term = sys.lambda * e1;
        let eps2_term = p.service_rate(k) * e2;

        let defect = chain_side - (diffusion_side + curvature_term + eps1_term + eps2_term);
        Ok(GeneratorExpansion {
            chain_side,
            diffusion_side,
            curvature_term,
            eps1: e1,
            eps2: e2,
            eps1_term,
            eps2_term,
            defect,
        })
    }

    /// Stationary expectation of the expansion's correction terms, split
    /// into the four standard absolute pieces. The sum truncates where the
    /// neglected tail mass times the third-derivative envelope falls below
    /// `1e-14`, so the reported values carry the full head exactly.
    pub fn error_decomposition(
        &self,
        chain: &crate::chain::StationaryDistribution,
    ) -> Result<ErrorDecomposition, SteinError> {
        if self.density.kind() != DensityKind::StateDependent {
            return Err(SteinError::WrongKind);
        }
        let p = self.params();
        let sys = p.system();
        let step = p.delta();
        let envelope = (1.0 + 1.0 / p.spare_capacity()) / sys.mu;
        let cutoff = chain.index_above_mass(1e-14 / envelope.max(1.0));

        let mut third = KahanSum::new();
        let mut fwd = KahanSum::new();
        let mut back_arrival = KahanSum::new();
        let mut back_drift = KahanSum::new();
        let mut signed = KahanSum::new();
        for k in 0..=cutoff {
            let pi = chain.pmf(k);
            if pi == 0.0 {
                continue;
            }
            let x = p.x_of_index(k);
            let b = p.drift(x);
            let f3 = self.fthird_left_at_index(k as i64)?;
            let (e1, e2) = self.taylor_remainders(k as i64)?;
            let curvature = step * step / 6.0 * b * f3;
            third.add(pi * curvature.abs());
            fwd.add(pi * (sys.lambda * e1).abs());
            back_arrival.add(pi * (sys.lambda * e2).abs());
            back_drift.add(pi * (b / step * e2).abs());
            signed.add(pi * (curvature + sys.lambda * e1 + p.service_rate(k) * e2));
        }
        let total = third.value() + fwd.value() + back_arrival.value() + back_drift.value();
        Ok(ErrorDecomposition {
            third_derivative: third.value(),
            forward_remainder: fwd.value(),
            backward_remainder_arrival: back_arrival.value(),
            backward_remainder_drift: back_drift.value(),
            total,
            signed_sum: signed.value(),
            states: cutoff + 1,
        })
    }

    /// Ratio of each derivative's observed magnitude to its theoretical
    /// envelope, maximised over a grid with spacing `delta / 8`. At the
    /// saturation point both envelope branches apply and the larger one is
    /// used.
    pub fn empirical_gradient_constants(&self) -> Result<GradientConstants, SteinError> {
        let p = self.params();
        let mu = p.system().mu;
        let az = p.spare_capacity();
        let x_s = p.x_saturation();

        let lo = (-3.0 / p.delta()).max(-50.0);
        let hi = x_s + (20.0 / az).min(20.0);
        let step = p.delta() / 8.0;
        let n_steps = ((hi - lo) / step).ceil() as usize;

        let env_below = (1.0 + 1.0 / az) / mu;
        let env1 = |x: f64| {
            if (x - x_s).abs() < 1e-12 {
                env_below.max((x + 1.0 + 1.0 / az) / (mu * az))
            } else if x < x_s {
                env_below
            } else {
                (x + 1.0 + 1.0 / az) / (mu * az)
            }
        };
        let env2 = |x: f64| {
            if (x - x_s).abs() < 1e-12 {
                env_below.max(1.0 / (mu * az))
            } else if x < x_s {
                env_below
            } else {
                1.0 / (mu * az)
            }
        };
        let env3 = |x: f64| {
            if (x - x_s).abs() < 1e-12 {
                env_below.max(1.0 / mu)
            } else if x < x_s {
                env_below
            } else {
                1.0 / mu
            }
        };

        let mut c = [0.0f64; 3];
        let mut points = 0usize;
        for i in 0..=n_steps {
            let x = lo + step * i as f64;
            let fp = self.fprime(x)?;
            let fpp = self.fsecond_given(x, fp);
            let f3 = self.fthird_from(x, fp, fpp, self.coeff_rp_left(x), self.coeff_ap_left(x));
            c[0] = c[0].max(fp.abs() / env1(x));
            c[1] = c[1].max(fpp.abs() / env2(x));
            c[2] = c[2].max(f3.abs() / env3(x));
            points += 1;
        }
        Ok(GradientConstants {
            first: c[0],
            second: c[1],
            third: c[2],
            points,
        })
    }
}

/// Both sides of the generator expansion at one grid point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorExpansion {
    pub chain_side: f64,
    pub diffusion_side: f64,
    pub curvature_term: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps1_term: f64,
    pub eps2_term: f64,
    pub defect: f64,
}

/// Four-term upper bound on the stationary moment gap, plus the exact
/// signed sum it bounds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorDecomposition {
    pub third_derivative: f64,
    pub forward_remainder: f64,
    pub backward_remainder_arrival: f64,
    pub backward_remainder_drift: f64,
    pub total: f64,
    pub signed_sum: f64,
    pub states: u64,
}

/// Empirical envelope ratios for the first three derivatives.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientConstants {
    pub first: f64,
    pub second: f64,
    pub third: f64,
    pub points: usize,
}
