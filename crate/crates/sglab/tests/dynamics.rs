use std::f64::consts::PI;

use proptest::prelude::*;
use sglab::dynamics::*;
use sglab::random_fields::{compute_renorm_constants, sample_gaussian_pair_indexed, NoisePath, RenormConstants};
use sglab::spectral_torus::FrequencyLattice;
use sglab::stochastic_convolution::evolve_convolution_pair;
use sglab::LabError;

fn setup(n: f64, beta2: f64) -> (FrequencyLattice, RenormConstants) {
    let l = FrequencyLattice::for_cutoff(n).unwrap();
    let rc = compute_renorm_constants(&l, n, beta2).unwrap();
    (l, rc)
}

#[test]
fn step_size_limit() {
    assert_eq!(dt_max(8.0), 5e-3);
    assert!((dt_max(100.0) - 1.25e-3).abs() < 1e-15);
    let (l, rc) = setup(8.0, 2.0 * PI);
    let data = sample_gaussian_pair_indexed(&l, 1, 0, None);
    let mut st = FlowState::new(&data, &rc, FlowParams::new(1.0, rc.beta()), 1, 0).unwrap();
    assert!(matches!(
        step_flow(&mut st, 0.01),
        Err(LabError::TimestepTooLarge { .. })
    ));
    assert!(step_flow(&mut st, 0.0).is_err());
    step_flow(&mut st, 5e-3).unwrap();
    assert!((st.time() - 5e-3).abs() < 1e-15);
}

#[test]
fn flow_state_validation() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let data = sample_gaussian_pair_indexed(&l, 1, 0, None);
    let noisy_undamped = FlowParams {
        damping: false,
        ..FlowParams::new(1.0, rc.beta())
    };
    assert!(FlowState::new(&data, &rc, noisy_undamped, 1, 0).is_err());
    assert!(FlowState::new(&data, &rc, FlowParams::new(1.0, 1.0), 1, 0).is_err());
    assert!(FlowState::new(&data, &rc, FlowParams::new(1.0, 0.0), 1, 0).is_err());
    let (_, other) = setup(4.0, 2.0 * PI);
    assert!(matches!(
        FlowState::new(&data, &other, FlowParams::new(1.0, rc.beta()), 1, 0),
        Err(LabError::GridMismatch(_))
    ));
}

#[test]
fn free_flow_reproduces_the_stochastic_convolution() {
    let n = 8.0;
    let (l, rc) = setup(n, 2.0 * PI);
    let (seed, sample) = (21, 4);
    let dt = dt_max(n);
    let steps = 40;
    let data = sample_gaussian_pair_indexed(&l, seed, sample, None);
    let noise = NoisePath::new(seed, sample, dt, steps).unwrap();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let (kg, _) = evolve_convolution_pair(&data, &noise, n, &times).unwrap();
    let mut st = FlowState::new(&data, &rc, FlowParams::new(0.0, rc.beta()), seed, sample).unwrap();
    for k in 1..=steps {
        step_flow(&mut st, dt).unwrap();
        if k % 10 == 0 {
            let err = relative_l2(&st.projected(false), &kg.fields[k]).unwrap();
            assert!(err < 1e-10, "step {k}: {err}");
        }
    }
}

#[test]
fn free_hamiltonian_flow_is_conservative() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let data = sample_gaussian_pair_indexed(&l, 2, 0, None);
    let mut st = FlowState::new(&data, &rc, FlowParams::hamiltonian(0.0, rc.beta()), 2, 0).unwrap();
    let h0 = st.hamiltonian().unwrap();
    evolve_flow(&mut st, 1.0, 5e-3).unwrap();
    let h1 = st.hamiltonian().unwrap();
    assert!((h1 - h0).abs() < 1e-10 * h0.abs(), "{h0} → {h1}");
}

#[test]
fn nonlinear_energy_drift_shrinks_with_the_step() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let data = sample_gaussian_pair_indexed(&l, 3, 0, None);
    let drift = |dt: f64| {
        let mut st =
            FlowState::new(&data, &rc, FlowParams::hamiltonian(1.0, rc.beta()), 3, 0).unwrap();
        let h0 = st.hamiltonian().unwrap();
        evolve_flow(&mut st, 0.5, dt).unwrap();
        ((st.hamiltonian().unwrap() - h0) / h0).abs()
    };
    let (a, b) = (drift(4e-3), drift(2e-3));
    assert!(a < 1e-2, "{a}");
    assert!(a / b > 1.6, "drift {a} at dt, {b} at dt/2");
}

#[test]
fn damped_noiseless_flow_dissipates_energy() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let data = sample_gaussian_pair_indexed(&l, 4, 0, None);
    let params = FlowParams {
        noise: false,
        ..FlowParams::new(0.0, rc.beta())
    };
    let mut st = FlowState::new(&data, &rc, params, 4, 0).unwrap();
    let mut prev = st.hamiltonian().unwrap();
    for k in 1..=5 {
        evolve_flow(&mut st, 0.2 * k as f64, 5e-3).unwrap();
        let h = st.hamiltonian().unwrap();
        assert!(h <= prev, "{h} > {prev}");
        prev = h;
    }
}

#[test]
fn gibbs_ensemble_weights() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let free = sample_gibbs_ensemble(&l, &rc, 0.0, rc.beta(), 50, 1).unwrap();
    assert_eq!(free.len(), 50);
    assert!((free.ess - 50.0).abs() < 1e-9);
    assert!(!free.degenerate);
    assert!(free.weights().iter().all(|w| (w - 0.02).abs() < 1e-15));
    let nm = free.normaliser();
    assert!((nm.mean - 1.0).abs() < 1e-12);
    let coupled = sample_gibbs_ensemble(&l, &rc, 0.2, rc.beta(), 200, 1).unwrap();
    assert!(coupled.ess <= 200.0 + 1e-9 && coupled.ess >= 1.0);
    assert_eq!(coupled.degenerate, coupled.ess < 10.0);
    assert!((coupled.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(sample_gibbs_ensemble(&l, &rc, 1.0, rc.beta(), 0, 1).is_err());
    assert!((effective_sample_size(&[0.0, 0.0, 0.0, 0.0]) - 4.0).abs() < 1e-12);
    assert!((effective_sample_size(&[0.0, -1e6]) - 1.0).abs() < 1e-9);
}

#[test]
fn observable_names_and_gaussian_oracle() {
    let (l, rc) = setup(8.0, 2.0 * PI);
    let obs = ObservableSet::default();
    let names = obs.names();
    assert_eq!(names.len(), 10);
    assert_eq!(names[0], "mode_0_0");
    assert_eq!(names[6], "cosine");
    let o = obs.gaussian_oracle(&l, &rc);
    assert!((o[0] - 1.0).abs() < 1e-15);
    assert!((o[1] - 0.5).abs() < 1e-15);
    assert!((o[6] - 4.0 * PI * PI / rc.gamma_n).abs() < 1e-9);
}

#[test]
fn free_field_passes_the_invariance_test() {
    let (l, rc) = setup(4.0, 2.0 * PI);
    let ens = sample_gibbs_ensemble(&l, &rc, 0.0, rc.beta(), 300, 5).unwrap();
    let obs = ObservableSet {
        modes: vec![(0, 0), (1, 0), (1, 1)],
        cosine: true,
        offsets: vec![[0.5, 0.0]],
    };
    let r = invariance_experiment(&ens, 0.5, &obs, dt_max(4.0)).unwrap();
    assert_eq!(r.rows.len(), 5);
    assert!(r.rows.iter().all(|row| row.oracle.is_some()));
    assert!(r.pass, "{r:?}");
    assert!(invariance_experiment(&ens, 5.0, &obs, 1e-3).is_err());
    assert!(matches!(
        invariance_experiment(&ens, 0.5, &obs, 1.0),
        Err(LabError::TimestepTooLarge { .. })
    ));
    let outside = ObservableSet {
        modes: vec![(7, 7)],
        ..obs
    };
    assert!(invariance_experiment(&ens, 0.1, &outside, 1e-3).is_err());
}

#[test]
fn picard_remainder_matches_direct_flow() {
    let r = picard_consistency(8.0, 2.0 * PI, 1.0, 5e-3, &[0.05, 0.1], 40, 11, 1e-2).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(!r.picard_diverged);
    assert!(r.pass, "{r:?}");
    assert!(r.picard_differences.last().unwrap() < &1e-8);
    assert!(picard_consistency(8.0, 2.0 * PI, 1.0, 5e-3, &[0.0123], 10, 1, 1e-2).is_err());
}

#[test]
fn relative_l2_of_identical_fields_is_zero() {
    let (l, _) = setup(8.0, 2.0 * PI);
    let d = sample_gaussian_pair_indexed(&l, 1, 1, None);
    assert_eq!(relative_l2(&d.u0, &d.u0).unwrap(), 0.0);
    let (other, _) = setup(4.0, 2.0 * PI);
    let e = sample_gaussian_pair_indexed(&other, 1, 1, None);
    assert!(relative_l2(&d.u0, &e.u0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn flow_stays_real_and_finite(seed in 0u64..1000, gamma in -2.0f64..2.0) {
        let (l, rc) = setup(4.0, 2.0 * PI);
        let data = sample_gaussian_pair_indexed(&l, seed, 0, None);
        let mut st = FlowState::new(&data, &rc, FlowParams::new(gamma, rc.beta()), seed, 0).unwrap();
        evolve_flow(&mut st, 0.1, 5e-3).unwrap();
        let (u, ut) = st.fields();
        prop_assert!(u.hermitian_defect() < 1e-12);
        prop_assert!(ut.hermitian_defect() < 1e-12);
        prop_assert!(u.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
    }

    #[test]
    fn flow_is_deterministic_in_its_streams(seed in 0u64..1000) {
        let (l, rc) = setup(4.0, 2.0 * PI);
        let data = sample_gaussian_pair_indexed(&l, seed, 0, None);
        let run = || {
            let mut st = FlowState::new(&data, &rc, FlowParams::new(1.0, rc.beta()), seed, 0).unwrap();
            evolve_flow(&mut st, 0.05, 5e-3).unwrap();
            st.projected(false)
        };
        prop_assert_eq!(run().coeffs, run().coeffs);
    }
}
