//! Cross-validation of the gradient solver against finite differences,
//! alternate integral routes, and the stationary chain itself.

use erlang_diffusion::chain::StationaryDistribution;
use erlang_diffusion::density::{DensityKind, PiecewiseLogDensity};
use erlang_diffusion::params::SystemParams;
use erlang_diffusion::quad::{integrate_adaptive, QuadConfig};
use erlang_diffusion::stein::{SteinSolution, TestFunction};

fn density(n: u32, load: f64, kind: DensityKind) -> PiecewiseLogDensity {
    let p = SystemParams::from_load(n, load, 1.0)
        .unwrap()
        .derive()
        .unwrap();
    PiecewiseLogDensity::build(&p, kind, &QuadConfig::default()).unwrap()
}

#[test]
fn finite_differences_confirm_the_higher_derivatives() {
    for kind in [DensityKind::StateDependent, DensityKind::ConstantCoefficient] {
        let dens = density(5, 4.0, kind);
        let sol =
            SteinSolution::build(&dens, TestFunction::coordinate(), &QuadConfig::default())
                .unwrap();
        let h = 1e-5;
        for x in [-1.3, 0.3, 1.7] {
            let fd2 = (sol.fprime(x + h).unwrap() - sol.fprime(x - h).unwrap()) / (2.0 * h);
            let direct2 = sol.fsecond(x).unwrap();
            assert!(
                (fd2 - direct2).abs() <= 2e-5 * direct2.abs().max(1.0),
                "second derivative at {x} ({kind:?}): fd {fd2} vs {direct2}"
            );
            let fd3 = (sol.fsecond(x + h).unwrap() - sol.fsecond(x - h).unwrap()) / (2.0 * h);
            let direct3 = sol.fthird_left(x).unwrap();
            assert!(
                (fd3 - direct3).abs() <= 2e-4 * direct3.abs().max(1.0),
                "third derivative at {x} ({kind:?}): fd {fd3} vs {direct3}"
            );
        }
    }
}

#[test]
fn tail_integral_route_agrees_with_the_direct_second_derivative() {
    let dens = density(5, 4.0, DensityKind::StateDependent);
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &QuadConfig::default())
        .unwrap();
    for x in [-1.5, 0.25, 2.0] {
        let direct = sol.fsecond(x).unwrap();
        let via_tail = sol.fsecond_via_tail_integral(x).unwrap();
        assert!(
            (direct - via_tail).abs() <= 1e-7 * direct.abs().max(1.0),
            "second derivative at {x}: {direct} vs tail route {via_tail}"
        );
    }
}

#[test]
fn left_limits_at_grid_points_match_the_one_sided_values() {
    let dens = density(5, 4.0, DensityKind::StateDependent);
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &QuadConfig::default())
        .unwrap();
    let p = dens.params();
    for k in [0i64, 5] {
        let x = p.x_of_index(k as u64);
        let at_index = sol.fthird_left_at_index(k).unwrap();
        let nearby = sol.fthird_left(x - 1e-9).unwrap();
        assert!(
            (at_index - nearby).abs() <= 1e-4 * at_index.abs().max(1e-3),
            "left limit at k={k}: {at_index} vs {nearby}"
        );
    }
}

#[test]
fn forward_remainder_matches_its_taylor_definition() {
    let dens = density(5, 4.0, DensityKind::StateDependent);
    let cfg = QuadConfig::default();
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &cfg).unwrap();
    let p = dens.params();
    let step = p.delta();
    for k in [2i64, 5] {
        let x = p.x_of_index(k as u64);
        let (eps1, _) = sol.taylor_remainders(k).unwrap();
        let increment = integrate_adaptive(&|y: f64| sol.fprime(y).unwrap(), x, x + step, &cfg)
            .unwrap()
            .value;
        let cubic = step * sol.fprime(x).unwrap()
            + step * step / 2.0 * sol.fsecond(x).unwrap()
            + step * step * step / 6.0 * sol.fthird_left_at_index(k).unwrap();
        let want = increment - cubic;
        assert!(
            (eps1 - want).abs() <= 1e-5 * want.abs().max(1e-6),
            "forward remainder at k={k}: {eps1} vs {want}"
        );
    }
}

#[test]
fn chain_side_of_the_expansion_averages_to_zero() {
    let p = SystemParams::from_load(5, 4.0, 1.0)
        .unwrap()
        .derive()
        .unwrap();
    let chain = StationaryDistribution::build(&p);
    let dens = density(5, 4.0, DensityKind::StateDependent);
    let cfg = QuadConfig::default();
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &cfg).unwrap();

    let cutoff = chain.index_above_mass(1e-10);
    let mut chain_sum = 0.0;
    let mut diffusion_sum = 0.0;
    for k in 0..=cutoff {
        let exp = sol.generator_expansion(k).unwrap();
        chain_sum += chain.pmf(k) * exp.chain_side;
        diffusion_sum += chain.pmf(k) * exp.diffusion_side;
    }
    assert!(
        chain_sum.abs() < 1e-6,
        "stationary average of the birth-death side: {chain_sum}"
    );
    let gap = sol.expected_h() - chain.moment(1, erlang_diffusion::chain::Support::All);
    assert!(
        (diffusion_sum - gap).abs() < 1e-6,
        "stationary average of the diffusion side: {diffusion_sum} vs {gap}"
    );
}

#[test]
fn decomposition_identity_holds_away_from_the_reference_point() {
    let p = SystemParams::from_load(50, 46.59, 1.0)
        .unwrap()
        .derive()
        .unwrap();
    let chain = StationaryDistribution::build(&p);
    let cfg = QuadConfig::default();
    let dens = PiecewiseLogDensity::build(&p, DensityKind::StateDependent, &cfg).unwrap();
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &cfg).unwrap();
    let report = sol.error_decomposition(&chain).unwrap();
    let gap = chain.moment(1, erlang_diffusion::chain::Support::All) - sol.expected_h();
    assert!(
        (report.signed_sum - gap).abs() < 1e-6,
        "signed sum {} vs moment gap {gap}",
        report.signed_sum
    );
    assert!(report.total >= gap.abs());
    assert!(report.total < 10.0 * gap.abs().max(1e-4));
}

#[test]
fn poisson_equation_residual_vanishes_on_a_grid() {
    let dens = density(100, 80.0, DensityKind::StateDependent);
    let sol = SteinSolution::build(&dens, TestFunction::coordinate(), &QuadConfig::default())
        .unwrap();
    let p = dens.params();
    let lo = p.x_empty() - 1.0;
    let hi = p.x_saturation() + 5.0;
    let mut x = lo;
    while x <= hi {
        let r = sol.poisson_residual(x).unwrap();
        assert!(
            r.abs() < 1e-8 * (1.0 + x.abs()),
            "residual {r} at x = {x}"
        );
        x += (hi - lo) / 40.0;
    }
}

#[test]
fn envelope_ratios_stay_of_one_order_across_scales() {
    let mut firsts = Vec::new();
    for (n, load) in [(5u32, 4.0f64), (50, 46.59), (500, 488.94)] {
        let dens = density(n, load, DensityKind::StateDependent);
        let sol =
            SteinSolution::build(&dens, TestFunction::coordinate(), &QuadConfig::default())
                .unwrap();
        let c = sol.empirical_gradient_constants().unwrap();
        for v in [c.first, c.second, c.third] {
            assert!(v.is_finite() && v > 0.0, "degenerate constant {v} at n={n}");
        }
        assert!(c.points > 100);
        firsts.push(c.first);
    }
    let hi = firsts.iter().cloned().fold(f64::MIN, f64::max);
    let lo = firsts.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        hi / lo < 10.0,
        "first-derivative constants spread too widely: {firsts:?}"
    );
}

#[test]
fn gradient_constants_exist_for_a_kinked_test_function() {
    let dens = density(5, 4.0, DensityKind::StateDependent);
    let sol = SteinSolution::build(&dens, TestFunction::smooth_abs(), &QuadConfig::default())
        .unwrap();
    let c = sol.empirical_gradient_constants().unwrap();
    assert!(c.first.is_finite() && c.second.is_finite() && c.third.is_finite());
}
