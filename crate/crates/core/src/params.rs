//! System parameters and diffusion coefficients.
//!
//! A system is described by the arrival rate `lambda`, the per-server
//! service rate `mu`, and the number of servers `n`, with offered load
//! `R = lambda / mu` strictly below `n`. The queue-length chain is centered
//! at `R` and scaled by `sqrt(R)`:
//!
//! `x_k = delta * (k - R)`, `delta = 1 / sqrt(R)`.
//!
//! On that scale the chain is approximated by a diffusion with piecewise
//! linear drift `b` and piecewise linear variance `a`. Both are continuous;
//! their derivatives jump at the two special coordinates
//! [`x_empty`](DerivedParams::x_empty) (the empty system, `k = 0`) and
//! [`x_saturation`](DerivedParams::x_saturation) (all servers busy,
//! `k = n`). Those two points split the line into the three [`Region`]s
//! that the rest of the crate keys off.
//!
//! The module also evaluates the log of the integrating factor
//! `p(x) = exp(integral_0^x 2 b / a)` in closed form per region. `p` spans
//! thousands of orders of magnitude in heavy traffic, so only its log is
//! ever materialised.

use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("arrival rate must be positive and finite, got {0}")]
    BadArrivalRate(f64),
    #[error("service rate must be positive and finite, got {0}")]
    BadServiceRate(f64),
    #[error("server count must be at least 1")]
    BadServerCount,
    #[error("offered load {load} must be strictly below the server count {n}")]
    Overloaded { load: f64, n: u32 },
}

/// Raw model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemParams {
    pub lambda: f64,
    pub mu: f64,
    pub n: u32,
}

impl SystemParams {
    pub fn new(lambda: f64, mu: f64, n: u32) -> Result<Self, ParamError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ParamError::BadArrivalRate(lambda));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(ParamError::BadServiceRate(mu));
        }
        if n == 0 {
            return Err(ParamError::BadServerCount);
        }
        let load = lambda / mu;
        if load >= n as f64 {
            return Err(ParamError::Overloaded { load, n });
        }
        Ok(Self { lambda, mu, n })
    }

    /// Convenience constructor from the offered load `R = lambda / mu`.
    pub fn from_load(n: u32, load: f64, mu: f64) -> Result<Self, ParamError> {
        if !(load.is_finite() && load > 0.0) {
            return Err(ParamError::BadArrivalRate(load * mu));
        }
        Self::new(load * mu, mu, n)
    }

    pub fn derive(self) -> Result<DerivedParams, ParamError> {
        DerivedParams::new(self)
    }
}

/// The three coordinate ranges delimited by the drift/variance kinks.
///
/// `Left` is `x <= x_empty` (coordinates below the empty system, reachable
/// only by the diffusion), `Middle` is the partially-busy band, `Right` is
/// `x >= x_saturation` where every server is busy and customers queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Left,
    Middle,
    Right,
}

/// Scaled-coordinate description of one system.
#[derive(Debug, Clone, Copy)]
pub struct DerivedParams {
    sys: SystemParams,
    offered_load: f64,
    sqrt_load: f64,
    delta: f64,
    zeta: f64,
}

impl DerivedParams {
    fn new(sys: SystemParams) -> Result<Self, ParamError> {
        let offered_load = sys.lambda / sys.mu;
        let sqrt_load = offered_load.sqrt();
        Ok(Self {
            sys,
            offered_load,
            sqrt_load,
            delta: 1.0 / sqrt_load,
            zeta: (offered_load - sys.n as f64) / sqrt_load,
        })
    }

    pub fn system(&self) -> SystemParams {
        self.sys
    }

    /// Offered load `R = lambda / mu`.
    pub fn offered_load(&self) -> f64 {
        self.offered_load
    }

    /// Grid spacing `delta = 1 / sqrt(R)` of the scaled chain.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Scaled slack `zeta = (R - n) / sqrt(R)`; strictly negative here
    /// since only underloaded systems are admitted.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `|zeta|`, the distance from the saturation point to the grid center.
    pub fn spare_capacity(&self) -> f64 {
        -self.zeta
    }

    /// Scaled coordinate of the empty system (`k = 0`): `-sqrt(R)`.
    pub fn x_empty(&self) -> f64 {
        -self.sqrt_load
    }

    /// Scaled coordinate at which all servers are busy (`k = n`): `|zeta|`.
    pub fn x_saturation(&self) -> f64 {
        -self.zeta
    }

    /// Exponential decay rate of the integrating factor for
    /// `x >= x_saturation`: `beta = 2 |zeta| / (2 + delta |zeta|)`.
    pub fn saturated_decay_rate(&self) -> f64 {
        let az = self.spare_capacity();
        2.0 * az / (2.0 + self.delta * az)
    }

    /// Scaled coordinate of queue length `k`.
    pub fn x_of_index(&self, k: u64) -> f64 {
        self.delta * (k as f64 - self.offered_load)
    }

    /// Queue length whose scaled coordinate is `x`; inverse of
    /// [`x_of_index`](Self::x_of_index) up to a small slack that absorbs
    /// roundoff when `x` is itself a grid point.
    pub fn index_of_x(&self, x: f64) -> i64 {
        (x * self.sqrt_load + self.offered_load + 1e-9).floor() as i64
    }

    /// Total service rate with `k` customers present: `mu * min(k, n)`.
    pub fn service_rate(&self, k: u64) -> f64 {
        self.sys.mu * (k.min(self.sys.n as u64)) as f64
    }

    /// Region containing `x`. On the two kink coordinates any choice gives
    /// the same value for the continuous quantities (`drift`, `diffusion`,
    /// `drift_ratio`, `log_weight`); this accessor is for those.
    pub fn region_of(&self, x: f64) -> Region {
        if x <= self.x_empty() {
            Region::Left
        } else if x < self.x_saturation() {
            Region::Middle
        } else {
            Region::Right
        }
    }

    /// Region whose closure contains `x` from the left. Use this for the
    /// one-sided derivative quantities, which at a kink must report the
    /// limit from below.
    pub fn region_left_of(&self, x: f64) -> Region {
        if x <= self.x_empty() {
            Region::Left
        } else if x <= self.x_saturation() {
            Region::Middle
        } else {
            Region::Right
        }
    }

    /// Same left-limit convention keyed by queue length: `k = 0` is the
    /// left edge of the middle band and `k = n` its right edge, and both
    /// report the branch from below.
    pub fn region_left_of_index(&self, k: i64) -> Region {
        if k <= 0 {
            Region::Left
        } else if k <= self.sys.n as i64 {
            Region::Middle
        } else {
            Region::Right
        }
    }

    /// Drift `b(x)`: `-mu x` up to the saturation point, frozen at
    /// `mu zeta` beyond it.
    pub fn drift(&self, x: f64) -> f64 {
        if x <= self.x_saturation() {
            -self.sys.mu * x
        } else {
            self.sys.mu * self.zeta
        }
    }

    /// Variance coefficient `a(x)`; continuous, piecewise linear, equal to
    /// `mu` on the left branch and `mu (2 + delta |zeta|)` on the right.
    pub fn diffusion(&self, x: f64) -> f64 {
        match self.region_of(x) {
            Region::Left => self.sys.mu,
            Region::Middle => self.sys.mu * (2.0 + self.delta * x),
            Region::Right => self.sys.mu * (2.0 + self.delta * self.spare_capacity()),
        }
    }

    /// Left limit of `a'(x)`: nonzero only on the middle branch, where the
    /// variance climbs with slope `mu delta`.
    pub fn diffusion_slope_left(&self, x: f64) -> f64 {
        match self.region_left_of(x) {
            Region::Middle => self.sys.mu * self.delta,
            _ => 0.0,
        }
    }

    /// Drift-to-variance ratio `r(x) = 2 b(x) / a(x)`, the log-slope of the
    /// integrating factor. Independent of `mu`.
    pub fn drift_ratio(&self, x: f64) -> f64 {
        match self.region_of(x) {
            Region::Left => -2.0 * x,
            Region::Middle => -2.0 * x / (2.0 + self.delta * x),
            Region::Right => -self.saturated_decay_rate(),
        }
    }

    /// Left limit of `r'(x)`.
    pub fn drift_ratio_slope_left(&self, x: f64) -> f64 {
        match self.region_left_of(x) {
            Region::Left => -2.0,
            Region::Middle => {
                let d = 2.0 + self.delta * x;
                -4.0 / (d * d)
            }
            Region::Right => 0.0,
        }
    }

    /// Left limit of `r'` keyed by queue length, for grid-point evaluation
    /// where the coordinate may sit on a kink up to roundoff.
    pub fn drift_ratio_slope_left_of_index(&self, k: i64) -> f64 {
        match self.region_left_of_index(k) {
            Region::Left => -2.0,
            Region::Middle => {
                let d = 2.0 + self.delta * self.x_of_index(k.max(0) as u64);
                -4.0 / (d * d)
            }
            Region::Right => 0.0,
        }
    }

    /// Left limit of `a'` keyed by queue length.
    pub fn diffusion_slope_left_of_index(&self, k: i64) -> f64 {
        match self.region_left_of_index(k) {
            Region::Middle => self.sys.mu * self.delta,
            _ => 0.0,
        }
    }

    /// Log of the integrating factor `p(x) = exp(integral_0^x 2b/a)`,
    /// normalised so `p(0) = 1`.
    ///
    /// Each region has a closed form. The middle one is
    /// `(2 / delta^2) * m(delta x)` with `m(u) = 2 ln(1 + u/2) - u`; for
    /// small `|u|` the leading terms of `m` cancel, so a short series is
    /// used there instead. The left form is written with the factored
    /// difference `(x - 1/delta)(x + 1/delta)` to stay exact near the
    /// empty-system kink.
    pub fn log_weight(&self, x: f64) -> f64 {
        let d = self.delta;
        match self.region_of(x) {
            Region::Left => {
                (2.0 - 4.0 * core::f64::consts::LN_2) / (d * d)
                    - (x - 1.0 / d) * (x + 1.0 / d)
            }
            Region::Middle => 2.0 / (d * d) * cancellation_safe_m(d * x),
            Region::Right => {
                let az = self.spare_capacity();
                2.0 / (d * d) * cancellation_safe_m(d * az)
                    - self.saturated_decay_rate() * (x - az)
            }
        }
    }

    /// Drift of the scaled chain at queue length `k`, in the exact
    /// birth-death form `delta (lambda - mu min(k, n))`.
    pub fn drift_at_index(&self, k: u64) -> f64 {
        self.delta * (self.sys.lambda - self.service_rate(k))
    }

    /// Variance rate of the scaled chain at queue length `k`:
    /// `delta^2 (lambda + mu min(k, n))`.
    pub fn diffusion_at_index(&self, k: u64) -> f64 {
        self.delta * self.delta * (self.sys.lambda + self.service_rate(k))
    }

    /// Generator of the scaled chain applied to `f` at queue length `k`:
    /// `lambda (f(x_{k+1}) - f(x_k)) + mu min(k, n) (f(x_{k-1}) - f(x_k))`.
    pub fn apply_chain_generator<F: Fn(f64) -> f64>(&self, k: u64, f: &F) -> f64 {
        let x = self.x_of_index(k);
        let up = f(x + self.delta) - f(x);
        let down = if k == 0 {
            0.0
        } else {
            f(x - self.delta) - f(x)
        };
        self.sys.lambda * up + self.service_rate(k) * down
    }

    /// Diffusion generator `b f' + a f'' / 2` with the state-dependent
    /// variance coefficient.
    pub fn diffusion_generator(&self, x: f64, fp: f64, fpp: f64) -> f64 {
        self.drift(x) * fp + 0.5 * self.diffusion(x) * fpp
    }

    /// Diffusion generator with the variance frozen at its central value
    /// `a(0) = 2 mu`.
    pub fn constant_diffusion_generator(&self, x: f64, fp: f64, fpp: f64) -> f64 {
        self.drift(x) * fp + self.sys.mu * fpp
    }
}

/// `m(u) = 2 ln(1 + u/2) - u`, the middle-region exponent shape.
///
/// For `|u| < 1/4` the direct expression loses its leading digits to
/// cancellation, so the series `sum_{j>=2} 2 (-1)^(j+1) u^j / (j 2^j)` is
/// summed instead; it converges geometrically with ratio at most 1/8.
fn cancellation_safe_m(u: f64) -> f64 {
    if u.abs() >= 0.25 {
        return 2.0 * (0.5 * u).ln_1p() - u;
    }
    let mut sum = 0.0f64;
    let mut power = u * u;
    let mut sign = -1.0f64;
    for j in 2..40u32 {
        let term = sign * 2.0 * power / (j as f64 * (1u64 << j) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() + 1e-320 {
            break;
        }
        power *= u;
        sign = -sign;
    }
    sum
}
