//! Properties of the two continuous approximating laws.

use erlang_diffusion::density::{DensityKind, PiecewiseLogDensity};
use erlang_diffusion::params::SystemParams;
use erlang_diffusion::quad::{
    integrate_left_tail, integrate_right_tail, integrate_with_splits, QuadConfig,
};
use proptest::prelude::*;

fn systems() -> impl Strategy<Value = (u32, f64, f64)> {
    // Utilizations below keep the offered load at or above one server.
    (2u32..200, 0.5f64..0.995, 0.1f64..10.0)
}

fn build(n: u32, frac: f64, mu: f64, kind: DensityKind) -> PiecewiseLogDensity {
    let p = SystemParams::from_load(n, frac * n as f64, mu)
        .unwrap()
        .derive()
        .unwrap();
    PiecewiseLogDensity::build(&p, kind, &QuadConfig::default()).unwrap()
}

fn kinds() -> impl Strategy<Value = DensityKind> {
    prop_oneof![
        Just(DensityKind::StateDependent),
        Just(DensityKind::ConstantCoefficient),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn requadrature_recovers_unit_mass((n, frac, mu) in systems(), kind in kinds()) {
        let dens = build(n, frac, mu, kind);
        let p = *dens.params();
        let cfg = QuadConfig::default();
        let pdf = |x: f64| dens.pdf(x);
        let xe = p.x_empty();
        let xs = p.x_saturation();
        let left = integrate_left_tail(&pdf, xe, 1.0 / (1.0 + xe.abs()), &cfg).unwrap();
        let middle = integrate_with_splits(&pdf, xe, xs, &[0.0], &cfg).unwrap();
        let rate = dens.tail_decay_rate();
        let right = integrate_right_tail(&pdf, xs, 1.0 / rate.max(1e-3), &cfg).unwrap();
        let mass = left + middle + right;
        prop_assert!((mass - 1.0).abs() < 1e-10, "mass {mass} for {kind:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn log_density_slope_matches_the_drift_ratio((n, frac, mu) in systems(),
                                                 t in 0.02f64..0.98) {
        let p = SystemParams::from_load(n, frac * n as f64, mu)
            .unwrap()
            .derive()
            .unwrap();
        let cfg = QuadConfig::default();
        let xe = p.x_empty();
        let xs = p.x_saturation();
        let spots = [
            xe - 3.0 + t,                        // left of the empty point
            xe + 0.05 + t * (xs - xe - 0.1),     // strictly inside the band
            xs + 0.05 + 3.0 * t,                 // saturated range
        ];
        let h = 1e-6;
        let nu = PiecewiseLogDensity::build(&p, DensityKind::StateDependent, &cfg).unwrap();
        for x in spots {
            let slope = (nu.log_pdf(x + h) + p.diffusion(x + h).ln()
                - nu.log_pdf(x - h)
                - p.diffusion(x - h).ln())
                / (2.0 * h);
            let want = p.drift_ratio(x);
            prop_assert!((slope - want).abs() <= 1e-5 * want.abs().max(1.0),
                         "state-dependent slope at {x}: {slope} vs {want}");
        }
        let eta = PiecewiseLogDensity::build(&p, DensityKind::ConstantCoefficient, &cfg).unwrap();
        for x in spots {
            let slope = (eta.log_pdf(x + h) - eta.log_pdf(x - h)) / (2.0 * h);
            let want = if x <= xs { -x } else { p.zeta() };
            prop_assert!((slope - want).abs() <= 1e-5 * want.abs().max(1.0),
                         "constant-coefficient slope at {x}: {slope} vs {want}");
        }
    }

    #[test]
    fn cdf_is_monotone_and_telescopes((n, frac, mu) in systems(), kind in kinds()) {
        let dens = build(n, frac, mu, kind);
        let p = *dens.params();
        let lo = p.x_empty() - 2.0;
        let hi = p.x_saturation() + 3.0;
        let step = (hi - lo) / 12.0;
        let mut prev = dens.cdf(lo).unwrap();
        prop_assert!(prev >= 0.0);
        for j in 1..=12 {
            let x = lo + step * j as f64;
            let c = dens.cdf(x).unwrap();
            prop_assert!(c >= prev - 1e-13);
            let piece = dens.interval_probability(x - step, x).unwrap();
            prop_assert!((c - prev - piece).abs() < 1e-10,
                         "telescoping at {x}: {} vs {piece}", c - prev);
            prev = c;
        }
        prop_assert!(prev <= 1.0 + 1e-12);
    }

    #[test]
    fn cdf_and_upper_tail_are_complementary((n, frac, mu) in systems(),
                                            kind in kinds(), t in -1.0f64..1.0) {
        let dens = build(n, frac, mu, kind);
        let p = *dens.params();
        let x = p.x_empty() + (t + 1.0) / 2.0 * (p.x_saturation() + 4.0 - p.x_empty());
        let total = dens.cdf(x).unwrap() + dens.upper_tail(x).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-10, "complement {total} at {x}");
    }

    #[test]
    fn cdf_does_not_depend_on_the_service_rate((n, frac) in (2u32..200, 0.5f64..0.995),
                                               mu in 0.1f64..10.0,
                                               kind in kinds(), t in -1.0f64..1.0) {
        let base = build(n, frac, 1.0, kind);
        let other = build(n, frac, mu, kind);
        let p = *base.params();
        let x = p.x_empty() + (t + 1.0) / 2.0 * (p.x_saturation() + 4.0 - p.x_empty());
        let c1 = base.cdf(x).unwrap();
        let c2 = other.cdf(x).unwrap();
        prop_assert!((c1 - c2).abs() <= 1e-9, "cdf at {x}: {c1} vs {c2}");
    }

    #[test]
    fn peak_heights_obey_the_universal_bounds((n, frac, mu) in systems()) {
        let nu = build(n, frac, mu, DensityKind::StateDependent);
        let (nu_sup, _) = nu.sup_density();
        prop_assert!(nu_sup <= 4.0 * (1.0 + 1e-9), "state-dependent sup {nu_sup}");
        let eta = build(n, frac, mu, DensityKind::ConstantCoefficient);
        let (eta_sup, _) = eta.sup_density();
        let cap = (2.0 / std::f64::consts::PI).sqrt();
        prop_assert!(eta_sup <= cap * (1.0 + 1e-9), "constant-coefficient sup {eta_sup}");
    }
}
