use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use proptest::prelude::*;
use sglab::spectral_torus::*;
use sglab::LabError;

fn lattice(m: usize, n: f64) -> FrequencyLattice {
    FrequencyLattice::new(m, n).unwrap()
}

/// A real band-limited field with a handful of random modes.
fn band_limited(lat: &FrequencyLattice, modes: &[((i64, i64), f64, f64)]) -> SpectralField {
    let mut u = SpectralField::zeros(lat);
    for &((a, b), re, im) in modes {
        let i = lat.index(a, b);
        let j = lat.neg_index(i);
        let c = C64::new(re, im);
        if i == j {
            u.coeffs[i] += C64::new(re, 0.0);
        } else {
            u.coeffs[i] += c;
            u.coeffs[j] += c.conj();
        }
    }
    u
}

#[test]
fn lattice_rejects_underresolved_cutoff() {
    assert!(matches!(
        FrequencyLattice::new(7, 4.0),
        Err(LabError::Unresolved(_))
    ));
    assert!(FrequencyLattice::new(8, 4.0).is_ok());
    assert!(matches!(
        FrequencyLattice::new(8, f64::NAN),
        Err(LabError::InvalidParameter(_))
    ));
    let l = FrequencyLattice::for_cutoff(4.5).unwrap();
    assert_eq!(l.m(), 10);
    assert_eq!(l.side(), 20);
    assert!((l.spacing() - 2.0 * PI / 20.0).abs() < 1e-15);
}

#[test]
fn lattice_is_symmetric_under_negation() {
    let l = lattice(6, 3.0);
    for i in 0..l.len() {
        let (a, b) = l.mode(i);
        assert_eq!(l.index(a, b), i);
        if !l.is_nyquist(i) {
            let j = l.neg_index(i);
            assert_eq!(l.mode(j), (-a, -b));
            assert_eq!(l.neg_index(j), i);
        }
    }
}

#[test]
fn constant_field_has_only_zero_mode() {
    let l = lattice(8, 4.0);
    let c = 1.7;
    let u = forward_transform(&RealField2D::from_fn(&l, |_, _| c)).unwrap();
    assert!((u.coeff(0, 0) - C64::new(2.0 * PI * c, 0.0)).norm() < 1e-12);
    for i in 1..l.len() {
        assert!(u.coeffs[i].norm() < 1e-12);
    }
}

#[test]
fn cosine_has_coefficient_pi_at_unit_modes() {
    let l = lattice(8, 4.0);
    let u = forward_transform(&RealField2D::from_fn(&l, |x, _| x.cos())).unwrap();
    assert!((u.coeff(1, 0) - C64::new(PI, 0.0)).norm() < 1e-12);
    assert!((u.coeff(-1, 0) - C64::new(PI, 0.0)).norm() < 1e-12);
    let others: f64 = (0..l.len())
        .filter(|&i| !matches!(l.mode(i), (1, 0) | (-1, 0)))
        .map(|i| u.coeffs[i].norm())
        .fold(0.0, f64::max);
    assert!(others < 1e-12);
    assert!(u.real);
}

#[test]
fn forward_transform_rejects_non_finite_values() {
    let l = lattice(4, 2.0);
    let mut f = RealField2D::from_fn(&l, |_, _| 0.0);
    f.values[3] = f64::INFINITY;
    assert!(matches!(forward_transform(&f), Err(LabError::NonFinite(_))));
}

#[test]
fn pointwise_evaluation_matches_grid() {
    let l = lattice(8, 4.0);
    let u = band_limited(&l, &[((1, 2), 0.3, -0.2), ((3, -1), 0.1, 0.5), ((0, 0), 0.7, 0.0)]);
    let g = inverse_transform(&u);
    for i in [0usize, 17, 100, 255] {
        let v = u.eval_at(l.point(i));
        assert!((v.re - g.values[i]).abs() < 1e-12);
        assert!(v.im.abs() < 1e-12);
    }
}

#[test]
fn identity_and_low_cutoff_multipliers() {
    let l = lattice(8, 4.0);
    let u = band_limited(&l, &[((0, 0), 1.0, 0.0), ((1, 1), 0.5, 0.5), ((2, 3), -1.0, 0.2)]);
    let same = apply_multiplier(&u, &MultiplierSpec::Bessel { s: 0.0 }).unwrap();
    assert_eq!(same.coeffs, u.coeffs);
    let low = apply_multiplier(&u, &MultiplierSpec::Cutoff { n: 0.4 }).unwrap();
    assert_eq!(low.coeff(0, 0), u.coeff(0, 0));
    for i in 1..l.len() {
        assert_eq!(low.coeffs[i], C64::new(0.0, 0.0));
    }
}

#[test]
fn inverse_bessel_square_reproduces_green_function_coefficients() {
    // A unit point mass at the origin has coefficients 1/(2π); ⟨∇⟩^{-2} maps
    // it to the Green function, Ĝ(n) = 1/(2π⟨n⟩²).
    let l = lattice(8, 4.0);
    let mut delta = SpectralField::zeros(&l);
    for c in &mut delta.coeffs {
        *c = C64::new(1.0 / (2.0 * PI), 0.0);
    }
    let g = apply_multiplier(&delta, &MultiplierSpec::Bessel { s: -2.0 }).unwrap();
    for i in 0..l.len() {
        let q = l.norm2(i) as f64;
        let green_hat = 1.0 / (2.0 * PI * (1.0 + q));
        assert!((g.coeffs[i].re - green_hat).abs() < 1e-15);
    }
}

#[test]
fn non_finite_symbol_is_rejected() {
    let l = lattice(4, 2.0);
    let u = SpectralField::single_mode(&l, (0, 0), C64::new(1.0, 0.0), true);
    let bad = MultiplierSpec::Custom(std::sync::Arc::new(|a, _| if a == 0 { f64::NAN } else { 1.0 }));
    assert!(matches!(apply_multiplier(&u, &bad), Err(LabError::NonFinite(_))));
    // |∇|^{-1} is defined as 0 at the origin, so it stays finite.
    assert!(apply_multiplier(&u, &MultiplierSpec::Abs { s: -1.0 }).is_ok());
}

#[test]
fn propagators_at_time_zero() {
    let l = lattice(8, 4.0);
    let u = band_limited(&l, &[((0, 0), 1.0, 0.0), ((1, 2), 0.3, 0.4)]);
    for kind in [PropagatorKind::SinOverNormWave, PropagatorKind::SinOverNormKg] {
        let z = wave_propagator_apply(&u, 0.0, kind, true).unwrap();
        assert!(z.l2_norm_sq() == 0.0);
    }
    for kind in [PropagatorKind::CosWave, PropagatorKind::CosKg] {
        let z = wave_propagator_apply(&u, 0.0, kind, true).unwrap();
        assert_eq!(z.coeffs, u.coeffs);
    }
    assert!(wave_propagator_apply(&u, -1.0, PropagatorKind::CosWave, false).is_err());
}

#[test]
fn sine_propagator_on_unit_mode_at_quarter_period() {
    let l = lattice(4, 2.0);
    let u = SpectralField::single_mode(&l, (1, 0), C64::new(1.0, 0.0), true);
    let v = wave_propagator_apply(&u, PI / 2.0, PropagatorKind::SinOverNormWave, false).unwrap();
    assert!((v.coeff(1, 0) - C64::new(1.0, 0.0)).norm() < 1e-15);
    // The zero mode symbol is the limit t.
    assert!((PropagatorKind::SinOverNormWave.symbol(0.8, 0.0, false) - 0.8).abs() < 1e-15);
}

#[test]
fn littlewood_paley_partition_of_unity() {
    for q in 1..5000i64 {
        let r = (q as f64).sqrt();
        let total: f64 = (-3..20).map(|j| lp_block(r / 2f64.powi(j))).sum();
        assert!((total - 1.0).abs() < 1e-10, "|n|² = {q}: {total}");
    }
}

#[test]
fn cutoff_profile() {
    assert_eq!(chi(0.0), 1.0);
    assert_eq!(chi(0.5), 1.0);
    assert_eq!(chi(1.0), 0.0);
    assert_eq!(chi(1.3), 0.0);
    let mut prev = 1.0;
    for k in 0..=1000 {
        let v = chi(k as f64 / 1000.0);
        assert!(v <= prev && v >= 0.0);
        prev = v;
    }
}

proptest! {
    #[test]
    fn round_trip_is_identity(
        modes in prop::collection::vec(((-7i64..8, -7i64..8), -1.0f64..1.0, -1.0f64..1.0), 1..12)
    ) {
        let l = lattice(8, 4.0);
        let u = band_limited(&l, &modes);
        let back = forward_transform(&inverse_transform(&u)).unwrap();
        let scale = u.l2_norm_sq().sqrt().max(1e-300);
        let err: f64 = u.coeffs.iter().zip(&back.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-12 * scale);
        prop_assert!(back.hermitian_defect() <= 1e-12 * scale);
    }

    #[test]
    fn parseval(
        modes in prop::collection::vec(((-7i64..8, -7i64..8), -1.0f64..1.0, -1.0f64..1.0), 1..12)
    ) {
        let l = lattice(8, 4.0);
        let u = band_limited(&l, &modes);
        let grid = inverse_transform(&u);
        let a = grid.l2_norm_sq();
        let b = u.l2_norm_sq();
        prop_assert!((a - b).abs() <= 1e-10 * b.max(1e-300));
    }

    #[test]
    fn real_multipliers_preserve_hermitian_symmetry(
        modes in prop::collection::vec(((-7i64..8, -7i64..8), -1.0f64..1.0, -1.0f64..1.0), 1..12),
        s in -3.0f64..3.0,
        k in 0.5f64..8.0,
    ) {
        let l = lattice(8, 4.0);
        let u = band_limited(&l, &modes);
        for m in [
            MultiplierSpec::Bessel { s },
            MultiplierSpec::Abs { s },
            MultiplierSpec::KgSymbol { s },
            MultiplierSpec::Cutoff { n: k },
            MultiplierSpec::LittlewoodPaley { k },
        ] {
            let v = apply_multiplier(&u, &m).unwrap();
            prop_assert!(v.hermitian_defect() <= 1e-12);
        }
    }

    #[test]
    fn cutoff_is_radial_monotone_and_supported(n in 1.0f64..40.0, a in 0.0f64..60.0, b in 0.0f64..60.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(chi(lo / n) >= chi(hi / n));
        if lo <= n / 2.0 { prop_assert_eq!(chi(lo / n), 1.0); }
        if hi > n { prop_assert_eq!(chi(hi / n), 0.0); }
    }

    #[test]
    fn propagator_addition_laws(t in 0.0f64..5.0, s in 0.0f64..5.0, q in 0i64..2000) {
        let q = q as f64;
        for (sin, cos, w) in [
            (PropagatorKind::SinOverNormWave, PropagatorKind::CosWave, q.sqrt()),
            (PropagatorKind::SinOverNormKg, PropagatorKind::CosKg, kg_frequency(q)),
        ] {
            let c = |x: f64| cos.symbol(x, q, false);
            let sn = |x: f64| sin.symbol(x, q, false);
            // cos(t+s) = cos t cos s − ω² sin t/ω · sin s/ω
            prop_assert!((c(t + s) - (c(t) * c(s) - w * w * sn(t) * sn(s))).abs() < 1e-12);
            // sin(t+s)/ω = sin t/ω cos s + cos t sin s/ω
            prop_assert!((sn(t + s) - (sn(t) * c(s) + c(t) * sn(s))).abs() < 1e-12);
        }
    }
}
