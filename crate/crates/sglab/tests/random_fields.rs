use std::f64::consts::PI;

use proptest::prelude::*;
use sglab::random_fields::*;
use sglab::spectral_torus::*;
use sglab::stats::mean_se;
use sglab::LabError;

#[test]
fn gaussian_pair_is_deterministic_and_real() {
    let l = FrequencyLattice::new(8, 4.0).unwrap();
    let a = sample_gaussian_pair(&l, 42);
    let b = sample_gaussian_pair(&l, 42);
    assert_eq!(a.u0.coeffs, b.u0.coeffs);
    assert_eq!(a.v0.coeffs, b.v0.coeffs);
    let c = sample_gaussian_pair(&l, 43);
    assert_ne!(a.u0.coeffs, c.u0.coeffs);
    assert!(a.u0.hermitian_defect() < 1e-15);
    assert!(a.v0.hermitian_defect() < 1e-15);
    let im = inverse_transform_complex(&a.u0)
        .values
        .iter()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max);
    assert!(im < 1e-12);
}

#[test]
fn mode_sampling_is_lattice_independent() {
    let small = FrequencyLattice::new(8, 4.0).unwrap();
    let big = FrequencyLattice::new(16, 4.0).unwrap();
    let a = sample_gaussian_pair_indexed(&small, 5, 3, None);
    let b = sample_gaussian_pair_indexed(&big, 5, 3, None);
    // The small lattice draws every mode with |n| < 8.
    for n1 in -7i64..8 {
        for n2 in -7i64..8 {
            if n1 * n1 + n2 * n2 >= 64 {
                continue;
            }
            assert_eq!(a.u0.coeff(n1, n2), b.u0.coeff(n1, n2));
            assert_eq!(a.v0.coeff(n1, n2), b.v0.coeff(n1, n2));
        }
    }
}

#[test]
fn mode_variances_match_the_defining_law() {
    let l = FrequencyLattice::new(4, 2.0).unwrap();
    let samples = 10_000u64;
    let draws: Vec<GaussianPair> = (0..samples)
        .map(|s| sample_gaussian_pair_indexed(&l, 9, s, None))
        .collect();
    for n in [(0i64, 0i64), (1, 0), (1, 2), (-3, 1), (2, 2)] {
        let w2 = 1.0 + (n.0 * n.0 + n.1 * n.1) as f64;
        let u: Vec<f64> = draws.iter().map(|d| d.u0.coeff(n.0, n.1).norm_sqr() * w2).collect();
        let v: Vec<f64> = draws.iter().map(|d| d.v0.coeff(n.0, n.1).norm_sqr()).collect();
        for est in [mean_se(&u), mean_se(&v)] {
            assert!(
                (est.mean - 1.0).abs() <= 5.0 * est.se,
                "mode {n:?}: {} ± {}",
                est.mean,
                est.se
            );
        }
    }
    // Distinct, non-conjugate modes are uncorrelated.
    for (n, m) in [((1i64, 0i64), (0i64, 1i64)), ((1, 1), (2, -1)), ((0, 0), (1, 2))] {
        let prod: Vec<f64> = draws
            .iter()
            .map(|d| (d.u0.coeff(n.0, n.1) * d.u0.coeff(m.0, m.1)).re)
            .collect();
        let est = mean_se(&prod);
        assert!(est.mean.abs() <= 5.0 * est.se, "{n:?}·{m:?}: {est:?}");
    }
}

#[test]
fn brownian_increments_are_hermitian_with_variance_dt() {
    let path = NoisePath::new(3, 0, 0.01, 10_000).unwrap();
    assert!((path.horizon() - 100.0).abs() < 1e-9);
    let a = path.brownian_increments((2, 1));
    let b = path.brownian_increments((-2, -1));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(*x, y.conj());
    }
    let sq: Vec<f64> = a.iter().map(|z| z.norm_sqr() / 0.01).collect();
    let est = mean_se(&sq);
    assert!((est.mean - 1.0).abs() <= 5.0 * est.se);
    let zero = path.brownian_increments((0, 0));
    assert!(zero.iter().all(|z| z.im == 0.0));
    assert!(NoisePath::new(0, 0, 0.0, 1).is_err());
}

#[test]
fn sigma_below_half_keeps_only_the_zero_mode() {
    let l = FrequencyLattice::for_cutoff(0.4).unwrap();
    let s = compute_sigma_n(&l, 0.4).unwrap();
    assert!((s - 1.0 / (4.0 * PI * PI)).abs() < 1e-15);
    assert!((s - 0.02533).abs() < 1e-5);
}

#[test]
fn sigma_rejects_small_or_unresolved_cutoffs() {
    let l = FrequencyLattice::new(4, 2.0).unwrap();
    assert!(matches!(compute_sigma_n(&l, 0.1), Err(LabError::InvalidParameter(_))));
    assert!(matches!(compute_sigma_n(&l, 8.0), Err(LabError::Unresolved(_))));
}

#[test]
fn sigma_grows_like_log_over_two_pi() {
    let ns: Vec<f64> = (4..=10).map(|k| 2f64.powi(k)).collect();
    let sig: Vec<f64> = ns
        .iter()
        .map(|&n| compute_sigma_n(&FrequencyLattice::for_cutoff(n).unwrap(), n).unwrap())
        .collect();
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let fit = sglab::stats::fit_line(&logs, &sig);
    assert!((fit.slope * 2.0 * PI - 1.0).abs() < 0.05, "slope {}", fit.slope);
    // Consecutive doublings approach log 2 / 2π.
    let last = sig[sig.len() - 1] - sig[sig.len() - 2];
    assert!((last - 2f64.ln() / (2.0 * PI)).abs() < 1e-3, "{last}");
    assert!(sig.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn renorm_constants() {
    let l = FrequencyLattice::for_cutoff(256.0).unwrap();
    let rc = compute_renorm_constants(&l, 256.0, 2.0 * PI).unwrap();
    assert_eq!(rc.gamma_n, (PI * rc.sigma_n).exp());
    let zero = compute_renorm_constants(&l, 256.0, 0.0).unwrap();
    assert_eq!(zero.gamma_n, 1.0);
    assert_eq!(renorm_from_sigma(8.0, 3.0, 0.0).unwrap().gamma_n, 1.0);
    assert!(matches!(
        renorm_from_sigma(8.0, 1e6, 1e3),
        Err(LabError::Saturation(_))
    ));
    assert!(compute_renorm_constants(&l, 256.0, -1.0).is_err());
}

#[test]
fn gibbs_density_of_zero_field_is_the_envelope() {
    let l = FrequencyLattice::for_cutoff(8.0).unwrap();
    let rc = compute_renorm_constants(&l, 8.0, 2.0 * PI).unwrap();
    let u = SpectralField::zeros(&l);
    let beta = rc.beta();
    let r = gibbs_density_rn(&u, &rc, 0.7, beta).unwrap();
    let env = gibbs_envelope(&rc, 0.7, beta);
    assert!((r - rc.gamma_n * 0.7 / beta * 4.0 * PI * PI).abs() < 1e-10 * env);
    assert!((r - env).abs() < 1e-10 * env);
    assert_eq!(gibbs_density_rn(&u, &rc, 0.0, beta).unwrap(), 0.0);
    assert!(gibbs_density_rn(&u, &rc, 1.0, 0.0).is_err());
}

#[test]
fn exponential_gibbs_moment_stays_bounded_in_the_cutoff() {
    let beta2 = 2.0 * PI;
    let samples = 400u64;
    let mut means = Vec::new();
    for n in [8.0, 16.0, 32.0] {
        let l = FrequencyLattice::for_cutoff(n).unwrap();
        let rc = compute_renorm_constants(&l, n, beta2).unwrap();
        let vals: Vec<f64> = (0..samples)
            .map(|s| {
                let g = sample_gaussian_pair_indexed(&l, 17, s, Some(n));
                gibbs_density_rn(&g.u0, &rc, 1.0, rc.beta()).unwrap().exp()
            })
            .collect();
        means.push(mean_se(&vals).mean);
    }
    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &m| (a.min(m), b.max(m)));
    assert!(hi / lo < 3.0, "{means:?}");
}

proptest! {
    #[test]
    fn gibbs_density_respects_the_envelope(
        amp in 0.0f64..50.0,
        k1 in -7i64..8,
        k2 in -7i64..8,
        gamma in -3.0f64..3.0,
        beta2 in 0.5f64..20.0,
    ) {
        let l = FrequencyLattice::for_cutoff(8.0).unwrap();
        let rc = compute_renorm_constants(&l, 8.0, beta2).unwrap();
        let u = SpectralField::single_mode(&l, (k1, k2), C64::new(amp, 0.3 * amp), true);
        let r = gibbs_density_rn(&u, &rc, gamma, rc.beta()).unwrap();
        let env = gibbs_envelope(&rc, gamma, rc.beta());
        prop_assert!(r.abs() <= env * (1.0 + 1e-12));
    }

    #[test]
    fn sigma_is_monotone(a in 1.0f64..64.0, b in 1.0f64..64.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s = |n: f64| compute_sigma_n(&FrequencyLattice::for_cutoff(n).unwrap(), n).unwrap();
        prop_assert!(s(hi) >= s(lo) - 1e-15);
        prop_assert!(s(lo) >= 0.0);
    }

    #[test]
    fn streams_are_order_independent(seed in 0u64..1000, sample in 0u64..1000, a in -50i64..50, b in -50i64..50) {
        let k1 = stream_key(seed, sample, Purpose::InitialData, (a, b));
        let k2 = stream_key(seed, sample, Purpose::InitialData, (a, b));
        prop_assert_eq!(k1, k2);
        prop_assert_ne!(k1, stream_key(seed, sample, Purpose::NoiseKg, (a, b)));
        prop_assert_ne!(k1, stream_key(seed, sample + 1, Purpose::InitialData, (a, b)));
    }
}
