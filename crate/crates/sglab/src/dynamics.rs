//! The truncated renormalised damped sine-Gordon flow
//!   ∂²u + ∂u + (1 − Δ)u + γγ_N Π_{≤N} sin(βΠ_{≤N}u) = √2 ξ,
//! Gibbs importance sampling, the invariance experiment and the Picard solver
//! for the remainder v = u − Ψ^KG.
//!
//! Only the modes with χ_N(n) > 0 feel the nonlinearity. Those are stepped by
//! an exponential integrator whose linear part and noise increment are exact
//! (the same transitions and the same random streams as the convolution
//! stepper), with the forcing frozen at the left endpoint. The remaining
//! lattice modes are decoupled Ornstein–Uhlenbeck oscillators; they are
//! advanced lazily, in a single exact transition, whenever the full state is
//! requested.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::ChaosSample;
use crate::error::{LabError, Result};
use crate::random_fields::{
    complex_normal, gibbs_density_rn, mode_rng, real_normal, sample_gaussian_pair_indexed,
    GaussianPair, ModeRng, Purpose, RenormConstants,
};
use crate::spectral_torus::{
    chi, forward_transform, forward_transform_complex, inverse_transform, japanese, kg_frequency,
    ComplexField2D, FrequencyLattice, SpectralField, C64,
};
use crate::stochastic_convolution::{
    damped_matrix, mode_transition, undamped_matrix, ConvolutionKind, ConvolutionPath,
    TransitionCache,
};

/// Largest admissible step for cutoff N: min(1/(8N), 5·10⁻³).
pub fn dt_max(n: f64) -> f64 {
    (1.0 / (8.0 * n)).min(5e-3)
}

/// Model and integrator switches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Coupling γ multiplying the renormalised nonlinearity.
    pub gamma: f64,
    pub beta: f64,
    /// Disable for the Hamiltonian diagnostic (requires `noise = false`).
    pub damping: bool,
    pub noise: bool,
}

impl FlowParams {
    pub fn new(gamma: f64, beta: f64) -> Self {
        Self {
            gamma,
            beta,
            damping: true,
            noise: true,
        }
    }

    /// Undamped, noiseless flow conserving the truncated Hamiltonian.
    pub fn hamiltonian(gamma: f64, beta: f64) -> Self {
        Self {
            gamma,
            beta,
            damping: false,
            noise: false,
        }
    }
}

#[derive(Clone, Debug)]
struct ActiveMode {
    idx: usize,
    neg: usize,
    q: i64,
    zero: bool,
    chi: f64,
    state: [C64; 2],
    rng: ModeRng,
}

#[derive(Clone, Debug)]
struct PassiveMode {
    idx: usize,
    neg: usize,
    q: i64,
    state: [C64; 2],
}

/// (u_N, ∂_t u_N) at time t together with the noise streams driving it.
pub struct FlowState {
    lattice: FrequencyLattice,
    rc: RenormConstants,
    params: FlowParams,
    seed: u64,
    sample: u64,
    t: f64,
    active: Vec<ActiveMode>,
    passive: Vec<PassiveMode>,
    passive_clock: f64,
    cache: TransitionCache,
}

impl FlowState {
    /// Start from data (u₀, v₀); the noise streams are those of `(seed, sample)`,
    /// so with γ = 0 the flow reproduces the convolution stepper's Ψ^KG.
    pub fn new(
        data: &GaussianPair,
        rc: &RenormConstants,
        params: FlowParams,
        seed: u64,
        sample: u64,
    ) -> Result<Self> {
        Self::with_cache(data, rc, params, seed, sample, TransitionCache::default())
    }

    /// As [`FlowState::new`] sharing a transition cache between members.
    pub fn with_cache(
        data: &GaussianPair,
        rc: &RenormConstants,
        params: FlowParams,
        seed: u64,
        sample: u64,
        cache: TransitionCache,
    ) -> Result<Self> {
        let lattice = data.u0.lattice.clone();
        if data.v0.lattice != lattice {
            return Err(LabError::GridMismatch("u₀ and v₀ lattices differ".into()));
        }
        if (lattice.n_cutoff() - rc.n).abs() > 1e-12 {
            return Err(LabError::GridMismatch(format!(
                "lattice cutoff {} differs from the renormalisation cutoff {}",
                lattice.n_cutoff(),
                rc.n
            )));
        }
        if params.noise && !params.damping {
            return Err(LabError::InvalidParameter(
                "the noisy flow is only defined with damping".into(),
            ));
        }
        if !(params.beta.is_finite() && params.beta != 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "β must be non-zero, got {}",
                params.beta
            )));
        }
        if (params.beta * params.beta - rc.beta2).abs() > 1e-9 * (1.0 + rc.beta2) {
            return Err(LabError::InvalidParameter(
                "β does not match the renormalisation constants".into(),
            ));
        }
        let n = rc.n;
        let mut reps = vec![0usize];
        reps.extend(lattice.active_half(n));
        let mut is_active = vec![false; lattice.len()];
        let active = reps
            .iter()
            .map(|&idx| {
                is_active[idx] = true;
                is_active[lattice.neg_index(idx)] = true;
                let q = lattice.norm2(idx);
                ActiveMode {
                    idx,
                    neg: lattice.neg_index(idx),
                    q,
                    zero: idx == 0,
                    chi: chi((q as f64).sqrt() / n),
                    state: [data.u0.coeffs[idx], data.v0.coeffs[idx]],
                    rng: mode_rng(seed, sample, Purpose::NoiseKg, lattice.mode(idx)),
                }
            })
            .collect();
        let mut passive = Vec::new();
        for idx in 0..lattice.len() {
            if is_active[idx] || lattice.is_nyquist(idx) {
                continue;
            }
            let neg = lattice.neg_index(idx);
            let (a, b) = lattice.mode(idx);
            if a < 0 || (a == 0 && b < 0) {
                continue;
            }
            passive.push(PassiveMode {
                idx,
                neg,
                q: lattice.norm2(idx),
                state: [data.u0.coeffs[idx], data.v0.coeffs[idx]],
            });
        }
        Ok(Self {
            lattice,
            rc: *rc,
            params,
            seed,
            sample,
            t: 0.0,
            active,
            passive,
            passive_clock: 0.0,
            cache,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn lattice(&self) -> &FrequencyLattice {
        &self.lattice
    }

    pub fn rc(&self) -> &RenormConstants {
        &self.rc
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    /// Π_{≤N}u (or Π_{≤N}∂_t u), which only involves the coupled modes.
    pub fn projected(&self, velocity: bool) -> SpectralField {
        let mut f = SpectralField::zeros(&self.lattice);
        let c = usize::from(velocity);
        for m in &self.active {
            let v = m.state[c] * m.chi;
            if m.zero {
                f.coeffs[0] = C64::new(v.re, 0.0);
            } else {
                f.coeffs[m.idx] = v;
                f.coeffs[m.neg] = v.conj();
            }
        }
        f
    }

    /// Mode û(n) (or ∂_t û(n)) for a coupled mode; `None` outside Π_{≤N}.
    pub fn active_coeff(&self, n: (i64, i64), velocity: bool) -> Option<C64> {
        let m = self.lattice.m() as i64;
        if !(-m..m).contains(&n.0) || !(-m..m).contains(&n.1) {
            return None;
        }
        let idx = self.lattice.index(n.0, n.1);
        let c = usize::from(velocity);
        self.active.iter().find_map(|m| {
            if m.idx == idx {
                Some(m.state[c])
            } else if m.neg == idx {
                Some(m.state[c].conj())
            } else {
                None
            }
        })
    }

    /// Bring the decoupled modes to the current time (one exact transition
    /// driven by their own streams).
    fn sync_passive(&mut self) {
        let h = self.t - self.passive_clock;
        if h <= 0.0 {
            return;
        }
        let mut local: HashMap<i64, ([[f64; 2]; 2], [[f64; 5]; 5])> = HashMap::new();
        let params = self.params;
        for m in &mut self.passive {
            let (phi, chol) = *local.entry(m.q).or_insert_with(|| {
                if params.damping {
                    let tr = mode_transition(m.q as f64, h);
                    (tr.phi_kg, tr.chol)
                } else {
                    (undamped_matrix(japanese(m.q as f64), h), [[0.0; 5]; 5])
                }
            });
            let mut s = apply2(&phi, m.state);
            if params.noise {
                let mut rng = mode_rng(
                    self.seed ^ self.passive_clock.to_bits(),
                    self.sample,
                    Purpose::NoisePassive,
                    self.lattice.mode(m.idx),
                );
                let xi = [
                    complex_normal(&mut rng),
                    complex_normal(&mut rng),
                    complex_normal(&mut rng),
                ];
                for (row, out) in [(1usize, 0usize), (2, 1)] {
                    s[out] += xi[0] * chol[row][0] + xi[1] * chol[row][1] + xi[2] * chol[row][2];
                }
            }
            m.state = s;
        }
        self.passive_clock = self.t;
    }

    /// The full state (u, ∂_t u) on the lattice.
    pub fn fields(&mut self) -> (SpectralField, SpectralField) {
        self.sync_passive();
        let mut u = SpectralField::zeros(&self.lattice);
        let mut ut = SpectralField::zeros(&self.lattice);
        for m in &self.active {
            if m.zero {
                u.coeffs[0] = C64::new(m.state[0].re, 0.0);
                ut.coeffs[0] = C64::new(m.state[1].re, 0.0);
            } else {
                u.coeffs[m.idx] = m.state[0];
                u.coeffs[m.neg] = m.state[0].conj();
                ut.coeffs[m.idx] = m.state[1];
                ut.coeffs[m.neg] = m.state[1].conj();
            }
        }
        for m in &self.passive {
            u.coeffs[m.idx] = m.state[0];
            u.coeffs[m.neg] = m.state[0].conj();
            ut.coeffs[m.idx] = m.state[1];
            ut.coeffs[m.neg] = m.state[1].conj();
        }
        u.real = true;
        ut.real = true;
        (u, ut)
    }

    /// Truncated Hamiltonian ½Σ(⟨n⟩²|û|² + |∂_tû|²) − (γγ_N/β)∫cos(βΠ_{≤N}u).
    pub fn hamiltonian(&mut self) -> Result<f64> {
        let (u, ut) = self.fields();
        let mut quad = 0.0;
        for i in 0..self.lattice.len() {
            quad += japanese(self.lattice.norm2(i) as f64).powi(2) * u.coeffs[i].norm_sqr()
                + ut.coeffs[i].norm_sqr();
        }
        let r = gibbs_density_rn(&u, &self.rc, self.params.gamma, self.params.beta)?;
        Ok(0.5 * quad - r)
    }

    /// Fourier coefficients of −γγ_N Π_{≤N} sin(βΠ_{≤N}u), for the coupled
    /// modes in the order of `self.active`.
    fn forcing(&self) -> Result<Vec<C64>> {
        if self.params.gamma == 0.0 {
            return Ok(vec![C64::new(0.0, 0.0); self.active.len()]);
        }
        nonlinear_forcing(
            &self.projected(false),
            &self.rc,
            self.params.gamma,
            self.params.beta,
        )
        .map(|g| {
            self.active
                .iter()
                .map(|m| g.coeffs[m.idx] * m.chi)
                .collect()
        })
    }
}

/// Grid evaluation of −γγ_N sin(βw) for a band-limited w, as Fourier
/// coefficients (before the outer projection). The collocation grid has
/// 2M = 4⌈N⌉ points per side, twice the Nyquist grid of Π_{≤N}.
fn nonlinear_forcing(
    pu: &SpectralField,
    rc: &RenormConstants,
    gamma: f64,
    beta: f64,
) -> Result<SpectralField> {
    let mut g = inverse_transform(pu);
    let amp = -gamma * rc.gamma_n;
    for v in g.values.iter_mut() {
        *v = amp * (beta * *v).sin();
    }
    forward_transform(&g)
}

#[inline]
fn apply2(m: &[[f64; 2]; 2], v: [C64; 2]) -> [C64; 2] {
    [
        v[0] * m[0][0] + v[1] * m[0][1],
        v[0] * m[1][0] + v[1] * m[1][1],
    ]
}

/// One exponential-integrator step of length dt.
pub fn step_flow(state: &mut FlowState, dt: f64) -> Result<()> {
    let limit = dt_max(state.rc.n);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(LabError::TimestepTooLarge { dt, dt_max: limit });
    }
    let force = state.forcing()?;
    let params = state.params;
    for (m, f) in state.active.iter_mut().zip(force) {
        let lambda = japanese(m.q as f64).powi(2);
        let tr = state.cache.get(m.q, dt);
        let phi = if params.damping {
            tr.phi_kg
        } else {
            undamped_matrix(lambda.sqrt(), dt)
        };
        let mut s = apply2(&phi, m.state);
        // constant forcing F over the step: particular solution F/λ
        let p = f / lambda;
        s[0] += p * (1.0 - phi[0][0]);
        s[1] -= p * phi[1][0];
        if params.noise {
            let mut xi = [C64::new(0.0, 0.0); 3];
            for x in xi.iter_mut() {
                *x = if m.zero {
                    C64::new(real_normal(&mut m.rng), 0.0)
                } else {
                    complex_normal(&mut m.rng)
                };
            }
            let l = &tr.chol;
            s[0] += xi[0] * l[1][0] + xi[1] * l[1][1];
            s[1] += xi[0] * l[2][0] + xi[1] * l[2][1] + xi[2] * l[2][2];
        }
        if m.zero {
            s = [C64::new(s[0].re, 0.0), C64::new(s[1].re, 0.0)];
        }
        if !(s[0].re.is_finite()
            && s[0].im.is_finite()
            && s[1].re.is_finite()
            && s[1].im.is_finite())
        {
            return Err(LabError::NonFinite(format!(
                "mode {:?} at t = {}",
                state.lattice.mode(m.idx),
                state.t
            )));
        }
        m.state = s;
    }
    state.t += dt;
    Ok(())
}

/// Advance to time `t_end` in steps of at most `dt` (the last step is
/// shortened to land exactly).
pub fn evolve_flow(state: &mut FlowState, t_end: f64, dt: f64) -> Result<()> {
    let steps = ((t_end - state.t) / dt - 1e-9).ceil().max(0.0) as usize;
    if steps == 0 {
        return Ok(());
    }
    let h = (t_end - state.t) / steps as f64;
    for _ in 0..steps {
        step_flow(state, h)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gibbs ensemble
// ---------------------------------------------------------------------------

/// Importance-weighted draws from ρ⃗_N ∝ e^{R_N} dμ⃗₁.
///
/// Members are stored by sample index and regenerated on demand, so large
/// ensembles do not hold every lattice field in memory at once.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedEnsemble {
    pub lattice: FrequencyLattice,
    pub rc: RenormConstants,
    pub gamma: f64,
    pub beta: f64,
    pub seed: u64,
    pub samples: Vec<u64>,
    /// R_N(u₀) per member (unnormalised log-weights).
    pub log_weights: Vec<f64>,
    pub ess: f64,
    /// ESS below 5% of the member count.
    pub degenerate: bool,
}

impl WeightedEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn data(&self, i: usize) -> GaussianPair {
        sample_gaussian_pair_indexed(&self.lattice, self.seed, self.samples[i], None)
    }

    /// Member i as a flow state with its own noise.
    pub fn state(&self, i: usize, params: FlowParams) -> Result<FlowState> {
        FlowState::new(&self.data(i), &self.rc, params, self.seed, self.samples[i])
    }

    fn state_cached(&self, i: usize, params: FlowParams, cache: &TransitionCache) -> Result<FlowState> {
        FlowState::with_cache(&self.data(i), &self.rc, params, self.seed, self.samples[i], cache.clone())
    }

    /// Normalised weights.
    pub fn weights(&self) -> Vec<f64> {
        normalised_weights(&self.log_weights)
    }

    /// Monte Carlo estimate of E_μ[e^{R_N}] with its standard error.
    pub fn normaliser(&self) -> crate::stats::MeanSe {
        crate::stats::mean_se(&self.log_weights.iter().map(|l| l.exp()).collect::<Vec<_>>())
    }
}

fn normalised_weights(logw: &[f64]) -> Vec<f64> {
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// (Σw)²/Σw².
pub fn effective_sample_size(logw: &[f64]) -> f64 {
    let w = normalised_weights(logw);
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

pub fn sample_gibbs_ensemble(
    lattice: &FrequencyLattice,
    rc: &RenormConstants,
    gamma: f64,
    beta: f64,
    count: usize,
    seed: u64,
) -> Result<WeightedEnsemble> {
    if count == 0 {
        return Err(LabError::InvalidParameter(
            "ensemble needs at least one member".into(),
        ));
    }
    let samples: Vec<u64> = (0..count as u64).collect();
    let log_weights = samples
        .par_iter()
        .map(|&s| {
            let d = sample_gaussian_pair_indexed(lattice, seed, s, None);
            gibbs_density_rn(&d.u0, rc, gamma, beta)
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some(l) = log_weights.iter().find(|l| !l.is_finite()) {
        return Err(LabError::NonFinite(format!("log-weight {l}")));
    }
    let ess = effective_sample_size(&log_weights);
    Ok(WeightedEnsemble {
        lattice: lattice.clone(),
        rc: *rc,
        gamma,
        beta,
        seed,
        samples,
        log_weights,
        ess,
        degenerate: ess < 0.05 * count as f64,
    })
}

// ---------------------------------------------------------------------------
// Invariance experiment
// ---------------------------------------------------------------------------

/// The pre-registered observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    /// E|û(n)|² for these modes.
    pub modes: Vec<(i64, i64)>,
    /// Include ∫cos(βΠ_{≤N}u) dx.
    pub cosine: bool,
    /// Spatially averaged covariance of Π_{≤N}u at these offsets.
    pub offsets: Vec<[f64; 2]>,
}

impl Default for ObservableSet {
    fn default() -> Self {
        Self {
            modes: vec![(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (3, 0)],
            cosine: true,
            offsets: vec![[0.0, 0.0], [0.5, 0.0], [1.5, 1.0]],
        }
    }
}

impl ObservableSet {
    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .modes
            .iter()
            .map(|n| format!("mode_{}_{}", n.0, n.1))
            .collect();
        if self.cosine {
            v.push("cosine".into());
        }
        for y in &self.offsets {
            v.push(format!("cov_{}_{}", y[0], y[1]));
        }
        v
    }

    fn evaluate(&self, st: &FlowState) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &n in &self.modes {
            let c = st.active_coeff(n, false).ok_or_else(|| {
                LabError::InvalidParameter(format!("observable mode {n:?} lies outside Π_{{≤N}}"))
            })?;
            out.push(c.norm_sqr());
        }
        let pu = st.projected(false);
        if self.cosine {
            let g = inverse_transform(&pu);
            let h = g.lattice.spacing();
            out.push(
                g.values
                    .iter()
                    .map(|v| (st.params.beta * v).cos())
                    .sum::<f64>()
                    * h
                    * h,
            );
        }
        for y in &self.offsets {
            let mut s = 0.0;
            for i in 0..pu.lattice.len() {
                let a = pu.coeffs[i].norm_sqr();
                if a > 0.0 {
                    let (n1, n2) = pu.lattice.mode(i);
                    s += a * (n1 as f64 * y[0] + n2 as f64 * y[1]).cos();
                }
            }
            out.push(s / (8.0 * PI * PI * PI));
        }
        Ok(out)
    }

    /// Exact values under the Gaussian measure μ⃗₁ (the γ = 0 oracle).
    pub fn gaussian_oracle(&self, lattice: &FrequencyLattice, rc: &RenormConstants) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .modes
            .iter()
            .map(|&(a, b)| 1.0 / japanese((a * a + b * b) as f64).powi(2))
            .collect();
        if self.cosine {
            out.push(4.0 * PI * PI * (-0.5 * rc.beta2 * rc.sigma_n).exp());
        }
        for y in &self.offsets {
            let mut s = 0.0;
            for i in 0..lattice.len() {
                let q = lattice.norm2(i) as f64;
                let c = chi(q.sqrt() / rc.n);
                if c > 0.0 {
                    let (n1, n2) = lattice.mode(i);
                    s += c * c / (1.0 + q) * (n1 as f64 * y[0] + n2 as f64 * y[1]).cos();
                }
            }
            out.push(s / (8.0 * PI * PI * PI));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservableRow {
    pub name: String,
    pub mean_t0: f64,
    pub mean_t: f64,
    /// Weighted mean of the per-member change over [0, T] in units of its
    /// self-normalised importance-sampling standard error.
    pub z: f64,
    /// Exact value when the coupling vanishes, with the z-score of the
    /// time-T estimate against it.
    pub oracle: Option<f64>,
    pub z_oracle: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub n: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub members: usize,
    pub ess: f64,
    pub degenerate: bool,
    pub rows: Vec<ObservableRow>,
    pub max_abs_z: f64,
    /// All |z| ≤ 3 (including the oracle z-scores when present).
    pub pass: bool,
}

/// Weighted mean and its self-normalised standard error.
fn weighted_mean_se(w: &[f64], x: &[f64]) -> (f64, f64) {
    let m: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
    let v: f64 = w
        .iter()
        .zip(x)
        .map(|(a, b)| a * a * (b - m) * (b - m))
        .sum();
    (m, v.sqrt())
}

fn zscore(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean.abs() <= 1e-300 {
        0.0
    } else {
        f64::INFINITY * mean.signum()
    }
}

pub fn invariance_experiment(
    ensemble: &WeightedEnsemble,
    horizon: f64,
    observables: &ObservableSet,
    dt: f64,
) -> Result<InvarianceReport> {
    if !(horizon >= 0.0 && horizon <= 4.0) {
        return Err(LabError::InvalidParameter(format!(
            "horizon must lie in [0, 4], got {horizon}"
        )));
    }
    let limit = dt_max(ensemble.rc.n);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(LabError::TimestepTooLarge { dt, dt_max: limit });
    }
    let params = FlowParams::new(ensemble.gamma, ensemble.beta);
    let cache = TransitionCache::default();
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..ensemble.len())
        .into_par_iter()
        .map(|i| {
            let mut st = ensemble.state_cached(i, params, &cache)?;
            let a = observables.evaluate(&st)?;
            evolve_flow(&mut st, horizon, dt)?;
            let b = observables.evaluate(&st)?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let w = ensemble.weights();
    let names = observables.names();
    let oracle = (ensemble.gamma == 0.0)
        .then(|| observables.gaussian_oracle(&ensemble.lattice, &ensemble.rc));
    let mut rows = Vec::new();
    for (k, name) in names.into_iter().enumerate() {
        let x0: Vec<f64> = per.iter().map(|p| p.0[k]).collect();
        let x1: Vec<f64> = per.iter().map(|p| p.1[k]).collect();
        let d: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
        let (m0, _) = weighted_mean_se(&w, &x0);
        let (m1, se1) = weighted_mean_se(&w, &x1);
        let (md, sed) = weighted_mean_se(&w, &d);
        let (orc, zo) = match &oracle {
            Some(o) => (Some(o[k]), Some(zscore(m1 - o[k], se1))),
            None => (None, None),
        };
        rows.push(ObservableRow {
            name,
            mean_t0: m0,
            mean_t: m1,
            z: zscore(md, sed),
            oracle: orc,
            z_oracle: zo,
        });
    }
    let max_abs_z = rows
        .iter()
        .flat_map(|r| std::iter::once(r.z.abs()).chain(r.z_oracle.map(f64::abs)))
        .fold(0.0, f64::max);
    Ok(InvarianceReport {
        n: ensemble.rc.n,
        beta2: ensemble.rc.beta2,
        gamma: ensemble.gamma,
        horizon,
        dt,
        members: ensemble.len(),
        ess: ensemble.ess,
        degenerate: ensemble.degenerate,
        rows,
        max_abs_z,
        pass: max_abs_z <= 3.0,
    })
}

// ---------------------------------------------------------------------------
// Picard iteration for the remainder
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub times: Vec<f64>,
    /// Last iterate v(t_k) (its Π_{≤N}-support only).
    pub v: Vec<SpectralField>,
    /// sup_k ‖v^{j+1}(t_k) − v^j(t_k)‖_{L²} per iteration.
    pub differences: Vec<f64>,
    pub iterations: usize,
    pub diverged: bool,
}

/// Exact per-mode Duhamel step for a forcing that is linear in time across
/// [0, h] (from f0 to f1), for X'' + X' + λX = F.
fn duhamel_linear(
    phi: &[[f64; 2]; 2],
    lambda: f64,
    h: f64,
    s: [C64; 2],
    f0: C64,
    f1: C64,
) -> [C64; 2] {
    let b = (f1 - f0) / h;
    // particular solution A + Bs
    let bb = b / lambda;
    let a0 = (f0 - bb) / lambda;
    let shifted = apply2(phi, [s[0] - a0, s[1] - bb]);
    [shifted[0] + a0 + bb * h, shifted[1] + bb]
}

/// Solve v = −γ Σ_{ε} c_ε Π_{≤N} 𝓘(e^{iεβΠ_{≤N}v} e^{iεβ(Ψ^KG_N − Ψ^wave_N)} Θ^ε_N)
/// with c_± = ±1/(2i), i.e. −γ Π_{≤N}𝓘(γ_N sin(β(Π_{≤N}v + Ψ^KG_N))).
///
/// Both exponents carry the same sign ε: expanding sin(a + b) pairs e^{iεa}
/// with Θ^ε only. 𝓘 is applied mode by mode with the forcing interpolated
/// linearly between grid times and integrated exactly against the damped
/// Klein–Gordon kernel.
pub fn solve_remainder_picard(
    psi_diff: &ConvolutionPath,
    theta: &ChaosSample,
    gamma: f64,
    iterations: usize,
    t_horizon: f64,
) -> Result<PicardResult> {
    if psi_diff.kind != ConvolutionKind::Difference {
        return Err(LabError::InvalidParameter(
            "expected the Ψ^KG − Ψ^wave path".into(),
        ));
    }
    if !(t_horizon > 0.0 && t_horizon <= 1.0) {
        return Err(LabError::InvalidParameter(format!(
            "horizon must lie in (0, 1], got {t_horizon}"
        )));
    }
    if theta.times.len() != psi_diff.times.len()
        || theta
            .times
            .iter()
            .zip(&psi_diff.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(LabError::GridMismatch(
            "Θ and Ψ^KG − Ψ^wave use different time grids".into(),
        ));
    }
    let lattice = psi_diff.lattice().clone();
    if theta.fields.iter().any(|f| f.lattice != lattice) {
        return Err(LabError::GridMismatch(
            "Θ and Ψ^KG − Ψ^wave use different lattices".into(),
        ));
    }
    if (psi_diff.n - theta.rc.n).abs() > 1e-12 {
        return Err(LabError::GridMismatch("cutoffs differ".into()));
    }
    let times = &psi_diff.times;
    if times.is_empty() || times[0].abs() > 1e-12 {
        return Err(LabError::InvalidParameter(
            "the time grid must start at 0".into(),
        ));
    }
    let steps = times
        .iter()
        .take_while(|&&t| t <= t_horizon + 1e-12)
        .count();
    if steps < 2 {
        return Err(LabError::InvalidParameter(
            "need at least two grid times inside the horizon".into(),
        ));
    }
    let h = times[1] - times[0];
    if times[..steps]
        .windows(2)
        .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h)
    {
        return Err(LabError::InvalidParameter(
            "the time grid must be uniform".into(),
        ));
    }
    let n = psi_diff.n;
    let beta = theta.beta * theta.epsilon0 as f64;
    // e^{±iβΨ^wave} oriented so that `plus` carries ε = +1
    let plus: Vec<&ComplexField2D> = theta.fields[..steps].iter().collect();
    let dgrid: Vec<Vec<f64>> = psi_diff.fields[..steps]
        .iter()
        .map(|f| inverse_transform(f).values)
        .collect();
    let reps: Vec<usize> = std::iter::once(0).chain(lattice.active_half(n)).collect();
    let chis: Vec<f64> = reps.iter().map(|&i| lattice.cutoff_weight(i)).collect();
    let trans: Vec<([[f64; 2]; 2], f64)> = reps
        .iter()
        .map(|&i| {
            let q = lattice.norm2(i) as f64;
            (damped_matrix(kg_frequency(q), h), 1.0 + q)
        })
        .collect();

    let project_v = |vals: &[C64]| -> SpectralField {
        let mut f = SpectralField::zeros(&lattice);
        for (k, &i) in reps.iter().enumerate() {
            let c = vals[k] * chis[k];
            if i == 0 {
                f.coeffs[0] = C64::new(c.re, 0.0);
            } else {
                f.coeffs[i] = c;
                f.coeffs[lattice.neg_index(i)] = c.conj();
            }
        }
        f.real = true;
        f
    };
    let forcing = |vk: &[C64], k: usize| -> Result<Vec<C64>> {
        let pv = inverse_transform(&project_v(vk));
        let vals: Vec<C64> = pv
            .values
            .iter()
            .zip(&dgrid[k])
            .zip(&plus[k].values)
            .map(|((&v, &d), &th)| {
                let th = if theta.epsilon0 > 0 { th } else { th.conj() };
                let e = C64::from_polar(1.0, beta.abs() * (v + d));
                // c₊ e^{ia}Θ⁺ + c₋ e^{−ia}Θ⁻ = γ_N sin(a + βΨ^wave)
                let cp = C64::new(0.0, -0.5);
                cp * e * th + cp.conj() * e.conj() * th.conj()
            })
            .collect();
        let f = forward_transform_complex(&ComplexField2D {
            lattice: lattice.clone(),
            values: vals,
        })?;
        Ok(reps
            .iter()
            .enumerate()
            .map(|(j, &i)| -gamma * chis[j] * f.coeffs[i])
            .collect())
    };

    let zero = vec![C64::new(0.0, 0.0); reps.len()];
    let mut v: Vec<Vec<C64>> = vec![zero.clone(); steps];
    let mut differences = Vec::new();
    let mut growing = 0usize;
    let mut diverged = false;
    let mut done = 0usize;
    for _ in 0..iterations.max(1) {
        let f: Vec<Vec<C64>> = (0..steps)
            .map(|k| forcing(&v[k], k))
            .collect::<Result<_>>()?;
        let mut next = vec![zero.clone(); steps];
        let mut state: Vec<[C64; 2]> = vec![[C64::new(0.0, 0.0); 2]; reps.len()];
        for k in 1..steps {
            for j in 0..reps.len() {
                let (phi, lambda) = &trans[j];
                state[j] = duhamel_linear(phi, *lambda, h, state[j], f[k - 1][j], f[k][j]);
                if reps[j] == 0 {
                    state[j] = [C64::new(state[j][0].re, 0.0), C64::new(state[j][1].re, 0.0)];
                }
                next[k][j] = state[j][0];
            }
        }
        let diff = (0..steps)
            .map(|k| {
                reps.iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let d = (next[k][j] - v[k][j]).norm_sqr();
                        if i == 0 {
                            d
                        } else {
                            2.0 * d
                        }
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if next
            .iter()
            .flatten()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            diverged = true;
            break;
        }
        v = next;
        done += 1;
        if let Some(&last) = differences.last() {
            if diff > last {
                growing += 1;
            } else {
                growing = 0;
            }
        }
        differences.push(diff);
        if growing >= 3 {
            diverged = true;
            break;
        }
        let scale = v.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        if diff <= 1e-14 * (1.0 + scale) {
            break;
        }
    }
    let fields = v
        .iter()
        .map(|vk| {
            let mut f = SpectralField::zeros(&lattice);
            for (j, &i) in reps.iter().enumerate() {
                if i == 0 {
                    f.coeffs[0] = C64::new(vk[j].re, 0.0);
                } else {
                    f.coeffs[i] = vk[j];
                    f.coeffs[lattice.neg_index(i)] = vk[j].conj();
                }
            }
            f.real = true;
            f
        })
        .collect();
    Ok(PicardResult {
        times: times[..steps].to_vec(),
        v: fields,
        differences,
        iterations: done,
        diverged,
    })
}

/// ‖a − b‖_{L²}/‖b‖_{L²}.
pub fn relative_l2(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    if a.lattice != b.lattice {
        return Err(LabError::GridMismatch(
            "fields on different lattices".into(),
        ));
    }
    let num: f64 = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let den: f64 = b.coeffs.iter().map(|y| y.norm_sqr()).sum();
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Outcome of the cross-solver comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub t: f64,
    pub relative_l2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub n: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub dt: f64,
    pub rows: Vec<ConsistencyRow>,
    pub picard_differences: Vec<f64>,
    pub picard_diverged: bool,
    pub tolerance: f64,
    pub pass: bool,
}

/// Run the direct flow and the Picard solver on the same data and noise and
/// compare Π_{≤N}u with Π_{≤N}(Ψ^KG + v) at the requested times.
#[allow(clippy::too_many_arguments)]
pub fn picard_consistency(
    n: f64,
    beta2: f64,
    gamma: f64,
    dt: f64,
    check_times: &[f64],
    iterations: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ConsistencyReport> {
    let lattice = FrequencyLattice::for_cutoff(n)?;
    let rc = crate::random_fields::compute_renorm_constants(&lattice, n, beta2)?;
    let beta = beta2.sqrt();
    let horizon = check_times.iter().cloned().fold(0.0, f64::max);
    let steps = (horizon / dt).round() as usize;
    if ((steps as f64) * dt - horizon).abs() > 1e-9
        || check_times
            .iter()
            .any(|t| ((t / dt).round() * dt - t).abs() > 1e-9)
    {
        return Err(LabError::InvalidParameter(
            "check times must be multiples of dt".into(),
        ));
    }
    let data = sample_gaussian_pair_indexed(&lattice, seed, 0, None);
    let noise = crate::random_fields::NoisePath::new(seed, 0, dt, steps)?;
    let t_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let (kg, wave) =
        crate::stochastic_convolution::evolve_convolution_pair(&data, &noise, n, &t_grid)?;
    let diff = crate::stochastic_convolution::convolution_difference(&kg, &wave)?;
    let theta = crate::chaos::build_chaos(&wave, beta, 1, &rc)?;
    let pic = solve_remainder_picard(&diff, &theta, gamma, iterations, horizon)?;
    let mut flow = FlowState::new(&data, &rc, FlowParams::new(gamma, beta), seed, 0)?;
    let mut rows = Vec::new();
    for k in 1..=steps {
        step_flow(&mut flow, dt)?;
        let t = k as f64 * dt;
        if check_times.iter().any(|c| (c - t).abs() < 1e-9) {
            let direct = flow.projected(false);
            // Ψ^KG_N already carries χ_N; the remainder is projected here
            let mut via = kg.fields[k].clone();
            for (i, c) in via.coeffs.iter_mut().enumerate() {
                *c += pic.v[k].coeffs[i] * lattice.cutoff_weight(i);
            }
            rows.push(ConsistencyRow {
                t,
                relative_l2: relative_l2(&direct, &via)?,
            });
        }
    }
    let pass = !pic.diverged && rows.iter().all(|r| r.relative_l2 <= tolerance);
    Ok(ConsistencyReport {
        n,
        beta2,
        gamma,
        dt,
        rows,
        picard_differences: pic.differences,
        picard_diverged: pic.diverged,
        tolerance,
        pass,
    })
}
