use std::f64::consts::PI;

use proptest::prelude::*;
use sglab::chaos::*;
use sglab::random_fields::{compute_renorm_constants, sample_gaussian_pair_indexed, NoisePath};
use sglab::spectral_torus::FrequencyLattice;
use sglab::stats::fit_power;
use sglab::stochastic_convolution::{evolve_convolution_pair, ConvolutionPath};
use sglab::LabError;

fn wave_path(n: f64, seed: u64, sample: u64) -> (ConvolutionPath, ConvolutionPath) {
    let l = FrequencyLattice::for_cutoff(n).unwrap();
    let data = sample_gaussian_pair_indexed(&l, seed, sample, Some(n));
    let noise = NoisePath::new(seed, sample, 1.0 / 16.0, 16).unwrap();
    evolve_convolution_pair(&data, &noise, n, &[0.25, 1.0]).unwrap()
}

#[test]
fn chaos_has_constant_modulus() {
    let n = 8.0;
    let (kg, wave) = wave_path(n, 3, 0);
    let rc = compute_renorm_constants(kg.lattice(), n, 2.0 * PI).unwrap();
    let theta = build_chaos(&wave, rc.beta(), 1, &rc).unwrap();
    assert_eq!(theta.times, vec![0.25, 1.0]);
    for f in &theta.fields {
        for z in &f.values {
            assert!((z.norm() - rc.gamma_n).abs() <= 1e-12 * rc.gamma_n);
        }
    }
    // Θ^{−} = conj Θ^{+} pathwise.
    let minus = build_chaos(&wave, rc.beta(), -1, &rc).unwrap();
    let conj = theta.conjugate();
    assert_eq!(conj.epsilon0, -1);
    for (a, b) in minus.fields.iter().zip(&conj.fields) {
        assert_eq!(a.values, b.values);
    }
    // Only the wave convolution builds the chaos, with consistent constants.
    assert!(build_chaos(&kg, rc.beta(), 1, &rc).is_err());
    assert!(build_chaos(&wave, rc.beta(), 0, &rc).is_err());
    assert!(build_chaos(&wave, 1.0, 1, &rc).is_err());
    let other = compute_renorm_constants(kg.lattice(), 4.0, 2.0 * PI).unwrap();
    assert!(build_chaos(&wave, rc.beta(), 1, &other).is_err());
}

#[test]
fn zero_coupling_chaos_is_one_and_its_norm_is_one() {
    let n = 8.0;
    let (_, wave) = wave_path(n, 5, 1);
    let rc = compute_renorm_constants(wave.lattice(), n, 0.0).unwrap();
    let theta = build_chaos(&wave, 0.0, 1, &rc).unwrap();
    assert!(theta.fields.iter().all(|f| f.values.iter().all(|z| *z == 1.0.into())));
    for alpha in [0.3, 0.6, 1.2] {
        let v = chaos_besov_norm(&theta, alpha, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "α = {alpha}: {v}");
    }
    assert!(chaos_besov_norm(&theta, 0.0, 2.0).is_err());
    assert!(chaos_besov_norm(&theta, 0.5, 0.5).is_err());
}

#[test]
fn coincident_two_point_function_is_gamma_squared() {
    let n = 8.0;
    let z = (0.5, [1.0, 2.0]);
    let est = chaos_two_point(n, (2.0 * PI).sqrt(), z, z, 50, 1).unwrap();
    let rc = renorm_for(n, 2.0 * PI).unwrap();
    let g2 = rc.gamma_n * rc.gamma_n;
    assert!((est.mc_re - g2).abs() < 1e-10 * g2);
    assert!(est.mc_im.abs() < 1e-10 * g2);
    assert!((est.analytic - g2).abs() < 1e-10 * g2);
    assert!(chaos_two_point(n, 1.0, (1.5, [0.0, 0.0]), z, 10, 0).is_err());
}

#[test]
fn monte_carlo_two_point_function_matches_characteristic_function() {
    let n = 6.0;
    let beta = PI.sqrt();
    let pairs = [
        ((0.3, [0.0, 0.0]), (0.3, [0.8, 0.1])),
        ((0.2, [1.0, 1.0]), (0.7, [1.5, 0.4])),
        ((0.9, [0.0, 3.0]), (0.4, [0.5, 2.0])),
    ];
    for (z1, z2) in pairs {
        let est = chaos_two_point(n, beta, z1, z2, 4000, 12).unwrap();
        assert!(
            (est.mc_re - est.analytic).abs() <= 4.0 * est.se_re,
            "{z1:?} {z2:?}: {est:?}"
        );
        assert!(est.mc_im.abs() <= 4.0 * est.se_im, "{est:?}");
    }
}

#[test]
fn two_point_function_decays_with_exponent_beta2_over_two_pi() {
    let n = 512.0;
    let beta2 = 2.0 * PI;
    let ds: Vec<f64> = (0..6).map(|k| 0.02 * 1.5f64.powi(k)).collect();
    let vals: Vec<f64> = ds
        .iter()
        .map(|&d| chaos_two_point_analytic(n, beta2, (0.5, [0.0, 0.0]), (0.5, [d, 0.0])))
        .collect();
    let fit = fit_power(&ds, &vals);
    let ratio = -fit.slope / (beta2 / (2.0 * PI));
    assert!((ratio - 1.0).abs() < 0.1, "fitted exponent ratio {ratio}");
}

#[test]
fn single_charge_pair_has_ratio_one() {
    let cfg = ChargeConfiguration::new(vec![(0.1, [0.0, 0.0]), (0.6, [1.0, 2.0])]).unwrap();
    assert_eq!(cfg.sign(0), -1);
    assert_eq!(cfg.sign(1), 1);
    let r = charge_bound_check(&cfg, 64.0, 1.0).unwrap();
    let j = charge_potential(64.0, 0.5, [1.0, 2.0]);
    assert!((r.lhs - j.powf(-1.0)).abs() < 1e-12);
    assert!((r.ratio - 1.0).abs() < 1e-12);
}

#[test]
fn separated_dipoles_have_ratio_of_order_one() {
    // Two tight ± pairs far apart on the torus.
    let cfg = ChargeConfiguration::new(vec![
        (0.1, [0.0, 0.0]),
        (0.1, [0.05, 0.0]),
        (0.9, [PI, PI]),
        (0.9, [PI + 0.05, PI]),
    ])
    .unwrap();
    let r = charge_bound_check(&cfg, 64.0, 1.0).unwrap();
    assert!(r.ratio > 0.2 && r.ratio < 5.0, "{r:?}");
}

#[test]
fn charge_configurations_are_validated() {
    assert!(ChargeConfiguration::new(vec![]).is_err());
    assert!(ChargeConfiguration::new(vec![(0.0, [0.0, 0.0]); 3]).is_err());
    assert!(ChargeConfiguration::new(vec![(0.0, [0.0, 0.0]); 10]).is_err());
    // Coincident points are floored at 1/N, not rejected.
    let cfg = ChargeConfiguration::new(vec![(0.5, [1.0, 1.0]); 4]).unwrap();
    let r = charge_bound_check(&cfg, 16.0, 1.0).unwrap();
    assert!(r.ratio.is_finite());
    let rnd = ChargeConfiguration::random(3, 1, 2).unwrap();
    assert_eq!(rnd.points.len(), 6);
    assert!(rnd.points.iter().all(|(t, _)| (0.0..1.0).contains(t)));
}

#[test]
fn torus_distance_wraps() {
    assert!((torus_norm([2.0 * PI - 0.1, 0.0]) - 0.1).abs() < 1e-12);
    assert!((torus_norm([-0.3, 0.4]) - 0.5).abs() < 1e-12);
}

#[test]
fn unsmoothed_bessel_variance_is_gamma_squared() {
    let n = 8.0;
    let rc = renorm_for(n, 2.0 * PI).unwrap();
    let v = bessel_smoothed_variance(n, 2.0 * PI, 0.0, 0.5, 1).unwrap();
    let g2 = rc.gamma_n * rc.gamma_n;
    assert!((v - g2).abs() < 1e-9 * g2, "{v} vs {g2}");
    // Smoothing only lowers the variance.
    assert!(bessel_smoothed_variance(n, 2.0 * PI, 0.4, 0.5, 1).unwrap() < v);
}

#[test]
fn blowup_probe_of_zero_test_function_vanishes() {
    let tf = TestFunction {
        amplitude: 0.0,
        ..TestFunction::default()
    };
    let r = blowup_probe(&[2.0 * PI], &[4.0, 8.0], &tf).unwrap();
    assert!(r.rows.iter().all(|row| row.value == 0.0));
    let bad = TestFunction {
        t_lo: 0.0,
        ..TestFunction::default()
    };
    assert!(blowup_probe(&[2.0 * PI], &[4.0], &bad).is_err());
}

#[test]
fn smoothing_moment_with_weak_coupling_is_small() {
    let p = SmoothingParams {
        n: 16.0,
        beta2: 1e-6,
        time_points: 64,
        samples: 4,
        ..SmoothingParams::default()
    };
    let row = smoothing_moment(&p, 4.0).unwrap();
    assert!(row.smoothed.mean < 1e-3 * 16.0, "{row:?}");
    assert!(row.unsmoothed.mean < 1e-3 * 16.0, "{row:?}");
    assert!(matches!(smoothing_moment(&p, 32.0), Err(LabError::Unresolved(_))));
    let bad = SmoothingParams { direction: 3, ..p };
    assert!(smoothing_moment(&bad, 4.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn modulus_and_conjugation_hold_for_every_sample(seed in 0u64..10_000, beta2 in 0.1f64..40.0) {
        let n = 4.0;
        let (_, wave) = wave_path(n, seed, 0);
        let rc = compute_renorm_constants(wave.lattice(), n, beta2).unwrap();
        let plus = build_chaos(&wave, rc.beta(), 1, &rc).unwrap();
        let minus = build_chaos(&wave, rc.beta(), -1, &rc).unwrap();
        for (a, b) in plus.fields.iter().zip(&minus.fields) {
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x.norm() - rc.gamma_n).abs() <= 1e-12 * rc.gamma_n);
                prop_assert!((x.conj() - y).norm() <= 1e-12 * rc.gamma_n);
            }
        }
    }

    #[test]
    fn charge_ratio_is_positive_and_finite(seed in 0u64..10_000, p in 1usize..=4) {
        let cfg = ChargeConfiguration::random(p, seed, 0).unwrap();
        let r = charge_bound_check(&cfg, 64.0, 1.0).unwrap();
        prop_assert!(r.ratio > 0.0 && r.ratio.is_finite());
    }
}
