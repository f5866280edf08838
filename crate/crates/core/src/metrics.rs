//! Distances and error tables comparing the scaled queue-length
//! distribution with its two diffusion approximations.

use serde::Serialize;

use crate::chain::{StationaryDistribution, Support};
use crate::density::{DensityError, DensityKind, PiecewiseLogDensity};
use crate::params::{ParamError, SystemParams};
use crate::quad::QuadConfig;
use crate::special::KahanSum;
use crate::stein::{SteinError, SteinSolution, TestFunction};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Stein(#[from] SteinError),
    #[error("smoothing width {0} outside (0, 2)")]
    BadSmoothingWidth(f64),
    #[error("rate fit needs at least 3 points with positive coordinates, got {0}")]
    BadRatePoints(usize),
}

/// Neglected probability beyond the scan cutoff in the sup-distance scans.
const SCAN_TAIL: f64 = 1e-14;

/// Index beyond which the density's upper tail is below `tol`.
fn density_tail_index(dens: &PiecewiseLogDensity, tol: f64) -> u64 {
    let p = dens.params();
    let x_s = p.x_saturation();
    let rate = dens.tail_decay_rate();
    // upper_tail(x) ~ pdf(x_s) e^{-rate (x - x_s)} / rate
    let log_tail_at_xs = dens.log_unnorm(x_s) + dens.log_normalizer() - rate.ln();
    let x = x_s + (log_tail_at_xs - tol.ln()).max(0.0) / rate;
    p.index_of_x(x).max(0) as u64 + 1
}

fn scan_cutoff(chain: &StationaryDistribution, dens: &PiecewiseLogDensity) -> u64 {
    chain
        .index_above_mass(SCAN_TAIL)
        .max(density_tail_index(dens, SCAN_TAIL))
}

/// Largest gap between the step CDF of the chain and the continuous CDF of
/// a diffusion approximation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KolmogorovResult {
    pub value: f64,
    /// Coordinate of the step at which the sup is attained.
    pub location: f64,
    /// Whether the attaining side is the limit from below of the step CDF.
    pub from_left: bool,
    /// Probability neglected beyond the scan cutoff; the reported value is
    /// exact up to this much.
    pub tail_bound: f64,
}

/// `sup_x |F_chain(x) - F_dens(x)|`. The chain CDF is a step function, so
/// the sup is attained at a grid point, approached from one side or the
/// other; both candidates are checked at every grid point up to a cutoff
/// past which both tails are below [`SCAN_TAIL`].
pub fn kolmogorov_distance(
    chain: &StationaryDistribution,
    dens: &PiecewiseLogDensity,
) -> Result<KolmogorovResult, DensityError> {
    let p = dens.params();
    let cutoff = scan_cutoff(chain, dens);

    let mut best = 0.0f64;
    let mut best_x = p.x_of_index(0);
    let mut best_left = false;
    for k in 0..=cutoff {
        let x = p.x_of_index(k);
        // Past the median both CDFs are near 1 and their complements carry
        // the information, so compare tails there instead.
        let fd = dens.cdf(x)?;
        let (right, left) = if fd <= 0.5 {
            (
                (chain.cdf_index(k as i64) - fd).abs(),
                (chain.cdf_index(k as i64 - 1) - fd).abs(),
            )
        } else {
            let sd = dens.upper_tail(x)?;
            (
                (chain.upper_tail(k + 1) - sd).abs(),
                (chain.upper_tail(k) - sd).abs(),
            )
        };
        let (gap, from_left) = if left > right { (left, true) } else { (right, false) };
        if gap > best {
            best = gap;
            best_x = x;
            best_left = from_left;
        }
    }
    Ok(KolmogorovResult {
        value: best,
        location: best_x,
        from_left: best_left,
        tail_bound: 2.0 * SCAN_TAIL,
    })
}

/// Largest gap between a point mass and the matching density slab.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PmfSupResult {
    pub value: f64,
    /// Queue length at which the sup is attained.
    pub index: u64,
}

/// `sup_k |pi_k - P(Y in [x_k - delta/2, x_k + delta/2])|`.
pub fn pmf_sup_error(
    chain: &StationaryDistribution,
    dens: &PiecewiseLogDensity,
) -> Result<PmfSupResult, DensityError> {
    let p = dens.params();
    let half = 0.5 * p.delta();
    let cutoff = scan_cutoff(chain, dens);

    let mut best = 0.0f64;
    let mut best_k = 0u64;
    for k in 0..=cutoff {
        let x = p.x_of_index(k);
        let slab = dens.interval_probability(x - half, x + half)?;
        let gap = (chain.pmf(k) - slab).abs();
        if gap > best {
            best = gap;
            best_k = k;
        }
    }
    Ok(PmfSupResult {
        value: best,
        index: best_k,
    })
}

/// Moment/density-bound verification summary attached to a report row.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundFlags {
    /// Every applicable stationary moment inequality holds.
    pub moment_bounds: bool,
    /// Density peak bounds hold: 4 state-dependent, sqrt(2/pi) constant.
    pub density_bounds: bool,
}

/// One row of the comparison tables: moment errors, PMF sup errors, and
/// Kolmogorov distances of both approximations against the exact chain.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub n: u32,
    pub offered_load: f64,
    pub mean_chain: f64,
    pub second_moment_chain: f64,
    pub mean_error_y0: f64,
    pub rel_mean_error_y0: f64,
    pub mean_error_y: f64,
    pub rel_mean_error_y: f64,
    pub second_moment_error_y0: f64,
    pub second_moment_error_y: f64,
    pub pmf_sup_error_y0: f64,
    pub pmf_sup_error_y: f64,
    pub kolmogorov_y0: f64,
    pub kolmogorov_y: f64,
    pub bound_flags: BoundFlags,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str = "n,R,EX_scaled,mean_err_y0,rel_err_y0,mean_err_y,\
                                          rel_err_y,m2_err_y0,m2_err_y,pmf_sup_y0,pmf_sup_y,\
                                          dk_y0,dk_y";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e},{:.5e}",
            self.n,
            self.offered_load,
            self.mean_chain,
            self.mean_error_y0,
            self.rel_mean_error_y0,
            self.mean_error_y,
            self.rel_mean_error_y,
            self.second_moment_error_y0,
            self.second_moment_error_y,
            self.pmf_sup_error_y0,
            self.pmf_sup_error_y,
            self.kolmogorov_y0,
            self.kolmogorov_y,
        )
    }
}

/// Builds the full comparison row for one parameter point.
pub fn moment_error_report(
    sys: SystemParams,
    cfg: &QuadConfig,
) -> Result<ComparisonReport, MetricsError> {
    let params = sys.derive()?;
    let chain = StationaryDistribution::build(&params);
    let nu = PiecewiseLogDensity::build(&params, DensityKind::StateDependent, cfg)?;
    let eta = PiecewiseLogDensity::build(&params, DensityKind::ConstantCoefficient, cfg)?;

    let mean_chain = chain.moment(1, Support::All);
    let second_chain = chain.moment(2, Support::All);
    let mean_y = nu.moment(1, false)?;
    let mean_y0 = eta.moment(1, false)?;
    let second_y = nu.moment(2, false)?;
    let second_y0 = eta.moment(2, false)?;

    let scale = mean_chain.abs().max(f64::MIN_POSITIVE);
    let (nu_sup, _) = nu.sup_density();
    let (eta_sup, _) = eta.sup_density();
    let density_bounds = nu_sup <= 4.0 && eta_sup <= (2.0 / core::f64::consts::PI).sqrt();

    Ok(ComparisonReport {
        n: sys.n,
        offered_load: params.offered_load(),
        mean_chain,
        second_moment_chain: second_chain,
        mean_error_y0: (mean_y0 - mean_chain).abs(),
        rel_mean_error_y0: (mean_y0 - mean_chain).abs() / scale,
        mean_error_y: (mean_y - mean_chain).abs(),
        rel_mean_error_y: (mean_y - mean_chain).abs() / scale,
        second_moment_error_y0: (second_y0 - second_chain).abs(),
        second_moment_error_y: (second_y - second_chain).abs(),
        pmf_sup_error_y0: pmf_sup_error(&chain, &eta)?.value,
        pmf_sup_error_y: pmf_sup_error(&chain, &nu)?.value,
        kolmogorov_y0: kolmogorov_distance(&chain, &eta)?.value,
        kolmogorov_y: kolmogorov_distance(&chain, &nu)?.value,
        bound_flags: BoundFlags {
            moment_bounds: chain.check_moment_bounds().all_pass(),
            density_bounds,
        },
    })
}

/// Least-squares fit of `ln(error)` against `ln(scale)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

/// Fits the decay exponent of an error sequence: a slope of `-1` means the
/// error shrinks like `1/scale`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit, MetricsError> {
    if points.len() < 3 || points.iter().any(|&(r, e)| r <= 0.0 || e <= 0.0) {
        return Err(MetricsError::BadRatePoints(points.len()));
    }
    let m = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(r, e)| (r.ln(), e.ln())).collect();
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_std_error = if points.len() > 2 {
        (ssr / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        slope,
        intercept,
        slope_std_error,
    })
}

/// A two-sided quadratic ramp from 1 down to 0 over `[a, a + eps]`,
/// continuously differentiable everywhere:
///
/// ```text
/// 1                                    x <= a
/// 1 - (2/eps^2)(x-a)^2                 a <= x <= a + eps/2
/// (2/eps^2)(x-a-eps/2)^2 - (2/eps)(x-a) + 3/2   a + eps/2 <= x <= a + eps
/// 0                                    x >= a + eps
/// ```
///
/// Its derivative is bounded by `2/eps` and its second derivative (taken
/// from the left at the three junction points) by `4/eps^2`, so the
/// `eps^2/4` multiple has both derivatives bounded by 1.
pub fn smoothed_indicator(a: f64, eps: f64) -> Result<TestFunction, MetricsError> {
    if !(eps > 0.0 && eps < 2.0) {
        return Err(MetricsError::BadSmoothingWidth(eps));
    }
    let name = format!("ramp(a={a}, eps={eps})");
    let kinks = vec![a, a + 0.5 * eps, a + eps];
    let (ca, ce) = (a, eps);
    let h = move |x: f64| -> f64 {
        if x <= ca {
            1.0
        } else if x <= ca + 0.5 * ce {
            1.0 - 2.0 / (ce * ce) * (x - ca) * (x - ca)
        } else if x <= ca + ce {
            let w = x - ca - 0.5 * ce;
            2.0 / (ce * ce) * w * w - 2.0 / ce * (x - ca) + 1.5
        } else {
            0.0
        }
    };
    let dh = move |x: f64| -> f64 {
        if x <= a || x >= a + eps {
            0.0
        } else if x <= a + 0.5 * eps {
            -4.0 / (eps * eps) * (x - a)
        } else {
            4.0 / (eps * eps) * (x - a - 0.5 * eps) - 2.0 / eps
        }
    };
    Ok(TestFunction::new(name, kinks, h, dh))
}

/// The `eps^2/4` multiple of [`smoothed_indicator`], whose first and second
/// derivatives are both bounded by 1.
pub fn scaled_smoothed_indicator(a: f64, eps: f64) -> Result<TestFunction, MetricsError> {
    let base = smoothed_indicator(a, eps)?;
    let scale = eps * eps / 4.0;
    let name = format!("scaled-{}", base.name());
    let kinks = base.kinks().to_vec();
    let b2 = base.clone();
    Ok(TestFunction::new(
        name,
        kinks,
        move |x| scale * base.value(x),
        move |x| scale * b2.deriv(x),
    ))
}

/// The default family over which [`w2_lower_bound`] takes its max: the
/// coordinate, a smooth absolute value, a sine, and six scaled ramps.
pub fn default_w2_family() -> Vec<TestFunction> {
    let mut fam = vec![
        TestFunction::coordinate(),
        TestFunction::smooth_abs(),
        TestFunction::sine(),
    ];
    for a in [-1.0, 0.0, 1.0] {
        for eps in [0.5, 1.0] {
            fam.push(scaled_smoothed_indicator(a, eps).expect("static widths are valid"));
        }
    }
    fam
}

/// Lower bound with its attaining test function.
#[derive(Debug, Clone, Serialize)]
pub struct W2LowerBound {
    pub value: f64,
    pub attained_by: String,
}

/// Expectation of `h` under the chain, summed over all states carrying more
/// than `1e-15` of mass.
pub fn chain_expectation(chain: &StationaryDistribution, h: &TestFunction) -> f64 {
    let p = chain.params();
    let cutoff = chain.index_above_mass(1e-15);
    let mut acc = KahanSum::new();
    for k in 0..=cutoff {
        acc.add(chain.pmf(k) * h.value(p.x_of_index(k)));
    }
    acc.value()
}

/// Max of `|E h(chain) - E h(density)|` over a family of test functions
/// whose members all have first and second derivative bounded by 1. Every
/// member witnesses the quadratic-Wasserstein distance from below.
pub fn w2_lower_bound(
    chain: &StationaryDistribution,
    dens: &PiecewiseLogDensity,
    family: &[TestFunction],
    cfg: &QuadConfig,
) -> Result<W2LowerBound, MetricsError> {
    let mut best = W2LowerBound {
        value: 0.0,
        attained_by: String::new(),
    };
    for h in family {
        let under_dens = SteinSolution::build(dens, h.clone(), cfg)?.expected_h();
        let gap = (chain_expectation(chain, h) - under_dens).abs();
        if gap > best.value {
            best.value = gap;
            best.attained_by = h.name().to_string();
        }
    }
    Ok(best)
}
