use std::f64::consts::PI;

use proptest::prelude::*;
use sglab::kernel_lab::*;
use sglab::LabError;

#[test]
fn wave_kernel_on_axis_and_off_support() {
    for t in [0.1, 0.5, 2.0] {
        let w = eval_kernel(&KernelSpec::WaveW, t, [0.0, 0.0]).unwrap();
        assert!((w - 1.0 / t).abs() < 1e-14);
        assert_eq!(eval_kernel(&KernelSpec::WaveW, t, [t + 0.1, 0.0]).unwrap(), 0.0);
    }
    assert!(matches!(
        eval_kernel(&KernelSpec::WaveW, 1.0, [0.6, 0.8]),
        Err(LabError::SingularPoint(_))
    ));
    assert!(eval_kernel(&KernelSpec::WaveW, 0.0, [0.0, 0.0]).is_err());
}

#[test]
fn hyperbolic_riesz_kernel_at_minus_one_is_the_wave_kernel() {
    let k = KernelSpec::HypRieszKb { b: -1.0 };
    assert!((hyp_riesz_constant(-1.0) - 1.0 / (2.0 * PI)).abs() < 1e-15);
    for (t, x) in [(1.0, [0.2, 0.3]), (0.4, [0.0, 0.1]), (3.0, [-2.0, 1.0])] {
        let a = eval_kernel(&k, t, x).unwrap();
        let w = eval_kernel(&KernelSpec::WaveW, t, x).unwrap();
        assert!((a - w / (2.0 * PI)).abs() < 1e-14 * w.max(1.0));
    }
    // causal: vanishes for t < 0
    assert_eq!(eval_kernel(&k, -1.0, [0.0, 0.0]).unwrap(), 0.0);
    assert!(eval_kernel(&KernelSpec::HypRieszKb { b: -0.4 }, 1.0, [0.0, 0.0]).is_err());
}

#[test]
fn hyperbolic_riesz_mass_matches_radial_quadrature() {
    for b in [-0.8, -1.0, -1.7] {
        let t = 1.3;
        let k = KernelSpec::HypRieszKb { b };
        // ∫_0^t 2πρ 𝔎_b dρ with ρ = t sin φ to remove the edge singularity
        let steps = 200_000;
        let h = 0.5 * PI / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let phi = (i as f64 + 0.5) * h;
            let rho = t * phi.sin();
            let jac = t * phi.cos();
            acc += h * 2.0 * PI * rho * jac * eval_kernel(&k, t, [rho, 0.0]).unwrap();
        }
        let exact = hyp_riesz_mass(b, t);
        assert!((acc - exact).abs() < 2e-3 * exact, "b={b}: {acc} vs {exact}");
    }
    assert_eq!(hyp_riesz_mass(-1.0, 0.0), 0.0);
}

#[test]
fn green_function_fourier_normalisation() {
    // ∫_𝕋² G = 2π·Ĝ(0) = 1; by the cell-averaged midpoint rule on a grid that
    // avoids the origin (the log singularity is integrable).
    let m = 200;
    let h = 2.0 * PI / m as f64;
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = [-PI + (i as f64 + 0.5) * h, -PI + (j as f64 + 0.5) * h];
            acc += h * h * eval_kernel(&KernelSpec::GreenG, 0.0, x).unwrap();
        }
    }
    assert!((acc - 1.0).abs() < 5e-3, "{acc}");
}

#[test]
fn green_function_has_logarithmic_singularity() {
    let vals: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-6]
        .iter()
        .map(|&r: &f64| eval_kernel(&KernelSpec::GreenG, 0.0, [r, 0.0]).unwrap() + r.ln() / (2.0 * PI))
        .collect();
    for w in vals.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-3, "{vals:?}");
    }
    assert!(matches!(
        eval_kernel(&KernelSpec::GreenG, 0.0, [0.0, 0.0]),
        Err(LabError::SingularPoint(_))
    ));
    assert!(matches!(
        eval_kernel(&KernelSpec::GreenG, 0.0, [2.0 * PI, 0.0]),
        Err(LabError::SingularPoint(_))
    ));
}

#[test]
fn bessel_potential_agrees_with_fourier_sum() {
    for alpha in [0.8, 1.5, 2.0] {
        for x in [[1.0, 0.5], [2.5, -1.0], [0.3, 0.0]] {
            let direct = bessel_potential_kernel(alpha, x);
            let spectral = bessel_potential_spectral(alpha, x, 256.0);
            assert!(
                (direct - spectral).abs() < 1e-3 * direct.abs().max(0.1),
                "α={alpha} x={x:?}: {direct} vs {spectral}"
            );
        }
    }
    assert!(eval_kernel(&KernelSpec::BesselJAlpha { alpha: 2.0 }, 0.0, [1.0, 0.0]).is_err());
}

#[test]
fn charge_potential_kernel() {
    let v = eval_kernel(&KernelSpec::PotentialJN { n: 4.0 }, -0.5, [0.3, 0.4]).unwrap();
    assert!((v - (0.5 + 0.5 + 0.25)).abs() < 1e-14);
    assert!(eval_kernel(&KernelSpec::PotentialJN { n: 0.0 }, 0.0, [0.0, 0.0]).is_err());
}

#[test]
fn smoothing_kernel_has_unit_mass() {
    // 2π∫k(r) r dr = χ(0)² = 1
    let h = 1e-3;
    let mass: f64 = (0..120_000)
        .map(|i| {
            let r = (i as f64 + 0.5) * h;
            2.0 * PI * h * r * nu_profile(r)
        })
        .sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    assert!((nu_kernel(4.0, 0.1) - 16.0 * nu_profile(0.4)).abs() < 1e-14);
}

#[test]
fn elliptic_bound_check_small_run() {
    let params = LemmaParams::default();
    let grid = default_probe_grid(Lemma::T0, &params);
    let r = smoothed_singularity_check(Lemma::T0, &params, &[8.0, 16.0, 32.0], &grid, 1.5).unwrap();
    assert_eq!(r.lemma_id, "t0");
    assert_eq!(r.constants.len(), 3);
    assert!(r.probes.iter().all(|p| p.ratio.iter().all(|x| x.is_finite() && *x > 0.0)));
    assert!(r.pass, "{:?}", r.constants);
}

#[test]
fn bound_check_rejects_bad_input() {
    let params = LemmaParams::default();
    let on_origin = [ProbePoint { x: [0.0, 0.0], deriv: (0, 0) }];
    assert!(matches!(
        smoothed_singularity_check(Lemma::T0, &params, &[4.0, 8.0], &on_origin, 1.5),
        Err(LabError::SingularPoint(_))
    ));
    let on_cone = [ProbePoint { x: [0.5, 0.0], deriv: (0, 0) }];
    assert!(matches!(
        smoothed_singularity_check(Lemma::GreenWave0, &params, &[4.0, 8.0], &on_cone, 1.5),
        Err(LabError::SingularPoint(_))
    ));
    let grid = default_probe_grid(Lemma::T0, &params);
    assert!(smoothed_singularity_check(Lemma::T0, &params, &[4.0], &grid, 1.5).is_err());
    let bad = LemmaParams { theta: 2.0, ..params };
    assert!(smoothed_singularity_check(Lemma::T0, &bad, &[4.0, 8.0], &grid, 1.5).is_err());
    assert_eq!(Lemma::WaveConvGreen.id(), "wave_conv_green");
}

#[test]
fn singular_integral_small_run() {
    let r = singular_integral(SingularIntegral::Plus { s: 0.5 }, -0.8, &[2.0, 4.0], 2000, 4000, 3).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.value > 0.0 && row.value.is_finite()));
    assert!((r.predicted_exponent - (-2.0 + 3.2)).abs() < 1e-12);
    assert!(singular_integral(SingularIntegral::Plus { s: 0.5 }, -0.4, &[2.0], 10, 10, 0).is_err());
    assert!(singular_integral(SingularIntegral::Plus { s: 0.5 }, -0.8, &[0.5], 10, 10, 0).is_err());
    assert!(
        singular_integral(SingularIntegral::Minus { s1: 1.0, s2: 0.6 }, -0.8, &[2.0], 10, 10, 0)
            .is_err()
    );
}

proptest! {
    #[test]
    fn wave_kernel_scales_as_inverse_length(t in 0.1f64..5.0, u in 0.0f64..0.99, lam in 0.1f64..10.0) {
        let x = [t * u, 0.0];
        let a = eval_kernel(&KernelSpec::WaveW, lam * t, [lam * x[0], 0.0]).unwrap();
        let b = eval_kernel(&KernelSpec::WaveW, t, x).unwrap();
        prop_assert!((a - b / lam).abs() <= 1e-12 * (b / lam));
    }

    #[test]
    fn riesz_kernel_is_nonnegative_and_causal(
        b in -3.0f64..-0.51, t in -2.0f64..2.0, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0,
    ) {
        let r = x0.hypot(x1);
        prop_assume!((r - t).abs() > 1e-6);
        let v = eval_kernel(&KernelSpec::HypRieszKb { b }, t, [x0, x1]).unwrap();
        prop_assert!(v >= 0.0);
        if t < 0.0 || r > t {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn bessel_potential_is_positive(alpha in 0.2f64..1.9, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
        prop_assume!(x0.hypot(x1) > 1e-3);
        let v = eval_kernel(&KernelSpec::BesselJAlpha { alpha }, 0.0, [x0, x1]).unwrap();
        prop_assert!(v > 0.0);
    }
}
