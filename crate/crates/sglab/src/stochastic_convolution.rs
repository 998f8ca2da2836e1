//! Exact-in-distribution construction of the stochastic convolutions Ψ^KG and
//! Ψ^wave, their coupled difference, and the exact covariance Γ_N.
//!
//! Every Fourier mode solves a damped oscillator
//!   X'' + X' + (ω² + 1/4) X = √2 Ḃ_n,
//! with ω = ⟦n⟧ for the Klein–Gordon convolution and ω = |n| for the wave
//! convolution. Over a step of length h the pair (X, X') moves by the exact
//! homogeneous propagator plus a Gaussian increment whose joint law with the
//! Brownian increment ΔB_n (and with the other convolution, which is driven by
//! the same B_n) is computed exactly. The increments are realised as L·ξ with
//! L the Cholesky factor of the 5×5 covariance of
//!   [ΔB, ΔX_kg, ΔX'_kg, ΔX_wave, ΔX'_wave],
//! so ΔB = √h·ξ₀ and the scheme has no time-discretisation error in law.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quad::composite_nodes;
use crate::random_fields::{
    complex_normal, mode_rng, real_normal, sample_gaussian_pair_indexed, GaussianPair, ModeRng,
    NoisePath, Purpose,
};
use crate::spectral_torus::{chi, kg_frequency, sinc_t, FrequencyLattice, SpectralField, C64};
use crate::stats::{mean_se, MeanSe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionKind {
    Kg,
    Wave,
    /// Ψ^KG − Ψ^wave (pathwise).
    Difference,
}

impl ConvolutionKind {
    /// Oscillation frequency of mode |n|² = q.
    pub fn omega(self, q: f64) -> f64 {
        match self {
            Self::Kg => kg_frequency(q),
            Self::Wave => q.sqrt(),
            Self::Difference => f64::NAN,
        }
    }
}

/// Homogeneous damped propagator for X'' + X' + (ω² + 1/4)X = 0 over time t,
/// acting on (X, X').
pub fn damped_matrix(omega: f64, t: f64) -> [[f64; 2]; 2] {
    let e = (-0.5 * t).exp();
    let c = (omega * t).cos();
    let s = sinc_t(t, omega);
    [
        [e * (c + 0.5 * s), e * s],
        [-e * (omega * omega + 0.25) * s, e * (c - 0.5 * s)],
    ]
}

/// Undamped propagator for X'' + ω²X = 0.
pub fn undamped_matrix(omega: f64, t: f64) -> [[f64; 2]; 2] {
    let c = (omega * t).cos();
    let s = sinc_t(t, omega);
    [[c, s], [-omega * omega * s, c]]
}

/// Exact one-step transition of a mode over a step h.
#[derive(Clone, Debug)]
pub struct ModeTransition {
    pub h: f64,
    pub phi_kg: [[f64; 2]; 2],
    pub phi_wave: [[f64; 2]; 2],
    /// Lower-triangular factor of the increment covariance, order
    /// [ΔB, ΔX_kg, ΔX'_kg, ΔX_wave, ΔX'_wave].
    pub chol: [[f64; 5]; 5],
    pub cov: [[f64; 5]; 5],
}

/// Covariance of the increments over a step h for mode |n|² = q.
pub fn increment_covariance(q: f64, h: f64) -> [[f64; 5]; 5] {
    let wk = kg_frequency(q);
    let ww = q.sqrt();
    let panels = 1 + ((wk + ww) * h).ceil() as usize;
    let nodes = composite_nodes(0.0, h, panels, 12);
    let mut cov = [[0.0; 5]; 5];
    let r2 = std::f64::consts::SQRT_2;
    for (r, w) in nodes {
        let e = (-0.5 * r).exp();
        let sk = sinc_t(r, wk);
        let sw = sinc_t(r, ww);
        let g = [
            1.0,
            r2 * e * sk,
            r2 * e * ((wk * r).cos() - 0.5 * sk),
            r2 * e * sw,
            r2 * e * ((ww * r).cos() - 0.5 * sw),
        ];
        for i in 0..5 {
            for j in 0..=i {
                cov[i][j] += w * g[i] * g[j];
            }
        }
    }
    for i in 0..5 {
        for j in 0..i {
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Cholesky factorisation that zeroes a column whose pivot is negligible
/// (relative 1e−13), so nearly singular covariances stay usable.
pub fn cholesky_clipped(a: &[[f64; 5]; 5]) -> [[f64; 5]; 5] {
    let scale = (0..5).map(|i| a[i][i]).fold(0.0, f64::max);
    let mut l = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-14 * a[i][i].abs() || s <= 0.0 || scale == 0.0 {
                    l[i][i] = 0.0;
                } else {
                    l[i][i] = s.sqrt();
                }
            } else if l[j][j] > 0.0 {
                l[i][j] = s / l[j][j];
            } else {
                l[i][j] = 0.0;
            }
        }
    }
    l
}

pub fn mode_transition(q: f64, h: f64) -> ModeTransition {
    let cov = increment_covariance(q, h);
    ModeTransition {
        h,
        phi_kg: damped_matrix(kg_frequency(q), h),
        phi_wave: damped_matrix(q.sqrt(), h),
        chol: cholesky_clipped(&cov),
        cov,
    }
}

/// Cache of transitions keyed by (|n|², step). Clones share the same table,
/// so Monte Carlo samples stepping on a common grid compute each transition
/// once.
#[derive(Clone, Default)]
pub struct TransitionCache {
    map: Arc<RwLock<HashMap<(i64, u64), Arc<ModeTransition>>>>,
}

impl TransitionCache {
    pub fn get(&self, q: i64, h: f64) -> Arc<ModeTransition> {
        let key = (q, h.to_bits());
        if let Some(t) = self
            .map
            .read()
            .expect("transition cache poisoned")
            .get(&key)
        {
            return t.clone();
        }
        let t = Arc::new(mode_transition(q as f64, h));
        self.map
            .write()
            .expect("transition cache poisoned")
            .entry(key)
            .or_insert(t)
            .clone()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("transition cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-mode state of the coupled damped evolutions.
#[derive(Clone, Debug)]
pub struct ModeOUState {
    pub n: (i64, i64),
    pub kg: [C64; 2],
    pub wave: [C64; 2],
    pub clock: f64,
}

struct StepMode {
    idx: usize,
    neg: usize,
    q: i64,
    zero: bool,
    state: ModeOUState,
    rng_kg: ModeRng,
    rng_wave: ModeRng,
}

/// Exact stepper for the coupled (Ψ^KG, Ψ^wave) pair on all modes |n| < bound.
/// Each step draws three normals from the mode's KG stream (ξ₀, ξ₁, ξ₂) and,
/// when the wave convolution is tracked, two from its wave stream (ξ₃, ξ₄).
pub struct ConvolutionStepper {
    lattice: FrequencyLattice,
    bound: f64,
    modes: Vec<StepMode>,
    cache: TransitionCache,
    track_wave: bool,
    t: f64,
}

#[inline]
fn apply2(m: &[[f64; 2]; 2], v: [C64; 2]) -> [C64; 2] {
    [
        v[0] * m[0][0] + v[1] * m[0][1],
        v[0] * m[1][0] + v[1] * m[1][1],
    ]
}

impl ConvolutionStepper {
    /// Initialise from data (u₀, v₀) with the noise streams of `(seed, sample)`.
    pub fn new(
        data: &GaussianPair,
        seed: u64,
        sample: u64,
        bound: f64,
        track_wave: bool,
    ) -> Result<Self> {
        Self::with_cache(
            data,
            seed,
            sample,
            bound,
            track_wave,
            TransitionCache::default(),
        )
    }

    /// As [`ConvolutionStepper::new`] reusing a (possibly shared) transition cache.
    pub fn with_cache(
        data: &GaussianPair,
        seed: u64,
        sample: u64,
        bound: f64,
        track_wave: bool,
        cache: TransitionCache,
    ) -> Result<Self> {
        let lattice = data.u0.lattice.clone();
        if data.v0.lattice != lattice {
            return Err(LabError::GridMismatch("u₀ and v₀ lattices differ".into()));
        }
        let mut idxs = vec![0usize];
        idxs.extend(lattice.active_half(bound.min(lattice.m() as f64)));
        let modes = idxs
            .into_iter()
            .map(|idx| {
                let n = lattice.mode(idx);
                let init = [data.u0.coeffs[idx], data.v0.coeffs[idx]];
                StepMode {
                    idx,
                    neg: lattice.neg_index(idx),
                    q: lattice.norm2(idx),
                    zero: idx == 0,
                    state: ModeOUState {
                        n,
                        kg: init,
                        wave: init,
                        clock: 0.0,
                    },
                    rng_kg: mode_rng(seed, sample, Purpose::NoiseKg, n),
                    rng_wave: mode_rng(seed, sample, Purpose::NoiseWave, n),
                }
            })
            .collect();
        Ok(Self {
            lattice,
            bound,
            modes,
            cache,
            track_wave,
            t: 0.0,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn lattice(&self) -> &FrequencyLattice {
        &self.lattice
    }

    /// Advance every mode by h.
    pub fn step(&mut self, h: f64) {
        let track_wave = self.track_wave;
        for m in &mut self.modes {
            let tr = self.cache.get(m.q, h);
            let mut xi = [C64::new(0.0, 0.0); 5];
            let count = if track_wave { 5 } else { 3 };
            for (k, x) in xi.iter_mut().enumerate().take(count) {
                let rng = if k < 3 {
                    &mut m.rng_kg
                } else {
                    &mut m.rng_wave
                };
                *x = if m.zero {
                    C64::new(real_normal(rng), 0.0)
                } else {
                    complex_normal(rng)
                };
            }
            let l = &tr.chol;
            let inc = |row: usize| -> C64 {
                let mut s = C64::new(0.0, 0.0);
                for (k, x) in xi.iter().enumerate().take(row + 1) {
                    s += x * l[row][k];
                }
                s
            };
            let kg = apply2(&tr.phi_kg, m.state.kg);
            m.state.kg = [kg[0] + inc(1), kg[1] + inc(2)];
            if track_wave {
                let w = apply2(&tr.phi_wave, m.state.wave);
                m.state.wave = [w[0] + inc(3), w[1] + inc(4)];
            }
            m.state.clock += h;
        }
        self.t += h;
    }

    /// Π_{≤N}-truncated snapshot of the tracked convolution (position or
    /// velocity component).
    pub fn snapshot(&self, kind: ConvolutionKind, velocity: bool) -> SpectralField {
        let mut f = SpectralField::zeros(&self.lattice);
        let comp = usize::from(velocity);
        for m in &self.modes {
            let v = match kind {
                ConvolutionKind::Kg => m.state.kg[comp],
                ConvolutionKind::Wave => m.state.wave[comp],
                ConvolutionKind::Difference => m.state.kg[comp] - m.state.wave[comp],
            };
            let c = chi((m.q as f64).sqrt() / self.bound);
            f.coeffs[m.idx] = v * c;
            if !m.zero {
                f.coeffs[m.neg] = (v * c).conj();
            } else {
                f.coeffs[m.idx] = C64::new(f.coeffs[m.idx].re, 0.0);
            }
        }
        f
    }

    /// Π_{≤N}Ψ(x) evaluated directly from the modes at a list of points.
    pub fn eval_points(&self, kind: ConvolutionKind, pts: &[[f64; 2]]) -> Vec<f64> {
        pts.iter()
            .map(|x| {
                let mut acc = 0.0;
                for m in &self.modes {
                    let v = match kind {
                        ConvolutionKind::Kg => m.state.kg[0],
                        ConvolutionKind::Wave => m.state.wave[0],
                        ConvolutionKind::Difference => m.state.kg[0] - m.state.wave[0],
                    };
                    let c = chi((m.q as f64).sqrt() / self.bound);
                    if m.zero {
                        acc += c * v.re;
                    } else {
                        let ph = m.state.n.0 as f64 * x[0] + m.state.n.1 as f64 * x[1];
                        acc += 2.0 * c * (v * C64::from_polar(1.0, ph)).re;
                    }
                }
                acc / (2.0 * PI)
            })
            .collect()
    }
}

/// Ψ samples on an increasing time grid.
#[derive(Clone, Debug)]
pub struct ConvolutionPath {
    pub kind: ConvolutionKind,
    pub n: f64,
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

impl ConvolutionPath {
    pub fn lattice(&self) -> &FrequencyLattice {
        &self.fields[0].lattice
    }
}

fn validate_grid(t_grid: &[f64], noise: &NoisePath) -> Result<Vec<usize>> {
    if t_grid.is_empty() {
        return Err(LabError::InvalidParameter("empty time grid".into()));
    }
    let mut prev = f64::NEG_INFINITY;
    let mut steps = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > prev) {
            return Err(LabError::InvalidParameter(format!(
                "time grid must be strictly increasing (saw {t} after {prev})"
            )));
        }
        if t < 0.0 {
            return Err(LabError::InvalidParameter(format!("negative time {t}")));
        }
        let k = (t / noise.dt).round();
        if (k * noise.dt - t).abs() > 1e-9 * (1.0 + t) {
            return Err(LabError::InvalidParameter(format!(
                "time {t} is not on the noise grid of step {}",
                noise.dt
            )));
        }
        if k as usize > noise.steps {
            return Err(LabError::InvalidParameter(format!(
                "time {t} exceeds the noise horizon {}",
                noise.horizon()
            )));
        }
        steps.push(k as usize);
        prev = t;
    }
    Ok(steps)
}

fn check_resolved(lattice: &FrequencyLattice, n: f64) -> Result<()> {
    if !(n.is_finite() && n > 0.0) {
        return Err(LabError::InvalidParameter(format!(
            "truncation N must be positive, got {n}"
        )));
    }
    if 2 * (n.ceil() as usize) > lattice.m() {
        return Err(LabError::Unresolved(format!(
            "N = {n} needs M ≥ {} but the lattice has M = {}",
            2 * n.ceil() as usize,
            lattice.m()
        )));
    }
    Ok(())
}

/// Ψ_N = Π_{≤N}Ψ on `t_grid` for one kind.
pub fn evolve_convolution(
    data: &GaussianPair,
    noise: &NoisePath,
    kind: ConvolutionKind,
    n: f64,
    t_grid: &[f64],
) -> Result<ConvolutionPath> {
    if kind == ConvolutionKind::Difference {
        let (a, b) = evolve_convolution_pair(data, noise, n, t_grid)?;
        return convolution_difference(&a, &b);
    }
    let (a, b) = evolve_inner(data, noise, n, t_grid, kind == ConvolutionKind::Wave)?;
    Ok(if kind == ConvolutionKind::Kg {
        a
    } else {
        b.expect("wave tracked")
    })
}

/// Both convolutions coupled through the same noise.
pub fn evolve_convolution_pair(
    data: &GaussianPair,
    noise: &NoisePath,
    n: f64,
    t_grid: &[f64],
) -> Result<(ConvolutionPath, ConvolutionPath)> {
    let (a, b) = evolve_inner(data, noise, n, t_grid, true)?;
    Ok((a, b.expect("wave tracked")))
}

fn evolve_inner(
    data: &GaussianPair,
    noise: &NoisePath,
    n: f64,
    t_grid: &[f64],
    wave: bool,
) -> Result<(ConvolutionPath, Option<ConvolutionPath>)> {
    check_resolved(&data.u0.lattice, n)?;
    let steps = validate_grid(t_grid, noise)?;
    let mut st = ConvolutionStepper::new(data, noise.seed, noise.sample, n, wave)?;
    let mut kg = Vec::new();
    let mut wv = Vec::new();
    let mut done = 0usize;
    for &k in &steps {
        while done < k {
            st.step(noise.dt);
            done += 1;
        }
        kg.push(st.snapshot(ConvolutionKind::Kg, false));
        if wave {
            wv.push(st.snapshot(ConvolutionKind::Wave, false));
        }
    }
    let times = t_grid.to_vec();
    let a = ConvolutionPath {
        kind: ConvolutionKind::Kg,
        n,
        times: times.clone(),
        fields: kg,
    };
    let b = wave.then(|| ConvolutionPath {
        kind: ConvolutionKind::Wave,
        n,
        times,
        fields: wv,
    });
    Ok((a, b))
}

/// Ψ^KG_N − Ψ^wave_N on the common grid.
pub fn convolution_difference(
    pkg: &ConvolutionPath,
    pwave: &ConvolutionPath,
) -> Result<ConvolutionPath> {
    if pkg.kind != ConvolutionKind::Kg || pwave.kind != ConvolutionKind::Wave {
        return Err(LabError::InvalidParameter(
            "expected a KG path and a wave path".into(),
        ));
    }
    if pkg.times.len() != pwave.times.len()
        || pkg
            .times
            .iter()
            .zip(&pwave.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(LabError::GridMismatch("time grids differ".into()));
    }
    if pkg.n != pwave.n || pkg.lattice() != pwave.lattice() {
        return Err(LabError::GridMismatch(
            "truncation or lattice differ".into(),
        ));
    }
    let fields = pkg
        .fields
        .iter()
        .zip(&pwave.fields)
        .map(|(a, b)| a.axpby(1.0, b, -1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvolutionPath {
        kind: ConvolutionKind::Difference,
        n: pkg.n,
        times: pkg.times.clone(),
        fields,
    })
}

// ---------------------------------------------------------------------------
// Exact covariances
// ---------------------------------------------------------------------------

/// E[Ψ̂(t₁,n) conj Ψ̂(t₂,n)] for one mode with frequency ω, Gaussian data of
/// variances (1/⟨n⟩², 1) and the √2-driven noise.
pub fn mode_covariance(omega: f64, q: f64, t1: f64, t2: f64) -> f64 {
    let jn2 = 1.0 + q;
    let e = (-0.5 * (t1 + t2)).exp();
    let s1 = sinc_t(t1, omega);
    let s2 = sinc_t(t2, omega);
    let a1 = (omega * t1).cos() + 0.5 * s1;
    let a2 = (omega * t2).cos() + 0.5 * s2;
    let hom = e * (a1 * a2 / jn2 + s1 * s2);
    hom + noise_covariance(omega, t1, t2)
}

/// 2∫₀^{min(t₁,t₂)} 𝓓(t₁−s)𝓓(t₂−s) ds for the damped propagator of frequency ω.
pub fn noise_covariance(omega: f64, t1: f64, t2: f64) -> f64 {
    let m = t1.min(t2);
    if m <= 0.0 {
        return 0.0;
    }
    if omega * t1.max(t2) < 1e-2 {
        // small-frequency regime: quadrature of the sinc form
        let panels = 4;
        return composite_nodes(0.0, m, panels, 16)
            .into_iter()
            .map(|(s, w)| {
                w * 2.0
                    * (-0.5 * (t1 - s) - 0.5 * (t2 - s)).exp()
                    * sinc_t(t1 - s, omega)
                    * sinc_t(t2 - s, omega)
            })
            .sum();
    }
    // sin A sin B = ½[cos(A−B) − cos(A+B)] with A+B = ω(t₁+t₂) − 2ωs
    let e = (-0.5 * (t1 + t2)).exp();
    let em1 = m.exp_m1();
    let c = omega * (t1 + t2);
    let z = C64::new(1.0, -2.0 * omega);
    let growth = (z * m).exp() - 1.0;
    let osc = (C64::from_polar(1.0, c) * growth / z).re;
    e * ((omega * (t1 - t2)).cos() * em1 - osc) / (omega * omega)
}

/// How Γ_N is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CovarianceMode {
    AnalyticSum,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Covariance estimate with its Monte Carlo standard error (0 for the exact sum).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceValue {
    pub value: f64,
    pub se: f64,
}

/// Per-|n|² table of mode covariances for one time pair.
pub struct ModeCovTable {
    kind: ConvolutionKind,
    t1: f64,
    t2: f64,
    vals: Vec<f64>,
}

impl ModeCovTable {
    pub fn new(kind: ConvolutionKind, t1: f64, t2: f64, max_q: usize) -> Self {
        Self {
            kind,
            t1,
            t2,
            vals: vec![f64::NAN; max_q + 1],
        }
    }

    pub fn get(&mut self, q: usize) -> f64 {
        let v = self.vals[q];
        if !v.is_nan() {
            return v;
        }
        let qf = q as f64;
        let v = mode_covariance(self.kind.omega(qf), qf, self.t1, self.t2);
        self.vals[q] = v;
        v
    }
}

/// Γ_N(t₁,t₂,x) = E[Ψ^wave_N(t₁,x) Ψ^wave_N(t₂,0)].
pub fn covariance_gamma(
    n: f64,
    t1: f64,
    t2: f64,
    x: [f64; 2],
    mode: CovarianceMode,
) -> Result<CovarianceValue> {
    covariance_gamma_kind(ConvolutionKind::Wave, n, t1, t2, x, mode)
}

/// As [`covariance_gamma`] for either convolution.
pub fn covariance_gamma_kind(
    kind: ConvolutionKind,
    n: f64,
    t1: f64,
    t2: f64,
    x: [f64; 2],
    mode: CovarianceMode,
) -> Result<CovarianceValue> {
    if !(t1 >= 0.0 && t2 >= 0.0 && t1.is_finite() && t2.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "times must be ≥ 0, got ({t1}, {t2})"
        )));
    }
    if kind == ConvolutionKind::Difference {
        return Err(LabError::InvalidParameter(
            "covariance of the difference is not tabulated".into(),
        ));
    }
    match mode {
        CovarianceMode::AnalyticSum => {
            let r = n.ceil() as i64;
            let mut table = ModeCovTable::new(kind, t1, t2, (2 * r * r) as usize);
            let mut total = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let q = a * a + b * b;
                    let c = chi((q as f64).sqrt() / n);
                    if c == 0.0 {
                        continue;
                    }
                    total +=
                        c * c * table.get(q as usize) * (a as f64 * x[0] + b as f64 * x[1]).cos();
                }
            }
            Ok(CovarianceValue {
                value: total / (4.0 * PI * PI),
                se: 0.0,
            })
        }
        CovarianceMode::MonteCarlo { samples, seed } => {
            let lattice = FrequencyLattice::for_cutoff(n)?;
            let (ta, tb) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let cache = TransitionCache::default();
            let vals: Vec<f64> = (0..samples as u64)
                .into_par_iter()
                .map(|s| {
                    let data = sample_gaussian_pair_indexed(&lattice, seed, s, Some(n));
                    let mut st = ConvolutionStepper::with_cache(
                        &data,
                        seed,
                        s,
                        n,
                        kind == ConvolutionKind::Wave,
                        cache.clone(),
                    )
                    .expect("lattice consistent");
                    if ta > 0.0 {
                        st.step(ta);
                    }
                    let pa = if t1 <= t2 { x } else { [0.0, 0.0] };
                    let pb = if t1 <= t2 { [0.0, 0.0] } else { x };
                    let va = st.eval_points(kind, &[pa])[0];
                    if tb > ta {
                        st.step(tb - ta);
                    }
                    let vb = st.eval_points(kind, &[pb])[0];
                    va * vb
                })
                .collect();
            let MeanSe { mean, se, .. } = mean_se(&vals);
            Ok(CovarianceValue { value: mean, se })
        }
    }
}

/// E|Ψ̂(t,n)|² for Gaussian data: stationary 1/⟨n⟩² for the KG convolution.
pub fn mode_variance(kind: ConvolutionKind, q: f64, t: f64) -> f64 {
    mode_covariance(kind.omega(q), q, t, t)
}

/// Variance of the difference mode Ψ̂^KG(t,n) − Ψ̂^wave(t,n) under the
/// coupled construction (shared data and noise).
pub fn difference_mode_variance(q: f64, t: f64) -> f64 {
    let wk = kg_frequency(q);
    let ww = q.sqrt();
    let e = (-0.5 * t).exp();
    let sk = sinc_t(t, wk);
    let sw = sinc_t(t, ww);
    let a = e * (((wk * t).cos() + 0.5 * sk) - ((ww * t).cos() + 0.5 * sw));
    let b = e * (sk - sw);
    let hom = a * a / (1.0 + q) + b * b;
    let panels = 2 + ((wk + ww) * t).ceil() as usize;
    let noise: f64 = composite_nodes(0.0, t, panels, 12)
        .into_iter()
        .map(|(r, w)| {
            let d = (-0.5 * r).exp() * (sinc_t(r, wk) - sinc_t(r, ww));
            w * 2.0 * d * d
        })
        .sum();
    hom + noise
}

// ---------------------------------------------------------------------------
// Variance identity and the logarithmic covariance law
// ---------------------------------------------------------------------------

/// Monte Carlo E[Ψ^KG_N(t,x)²] at one space-time point against σ_N.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: f64,
    pub t: f64,
    pub x: [f64; 2],
    pub estimate: MeanSe,
    pub exact: f64,
    pub z: f64,
}

/// Ψ^KG_N is stationary when started from μ⃗₁, so E[Ψ^KG_N(t,x)²] = σ_N for
/// every (t, x). Each sample jumps between the requested times with exact
/// transitions.
pub fn variance_identity_mc(
    n: f64,
    times: &[f64],
    points: &[[f64; 2]],
    samples: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) || times[0] < 0.0 {
        return Err(LabError::InvalidParameter("times must be non-empty, ≥ 0 and increasing".into()));
    }
    if samples < 2 {
        return Err(LabError::InvalidParameter("need at least two samples".into()));
    }
    let lattice = FrequencyLattice::for_cutoff(n)?;
    let sigma = crate::random_fields::compute_sigma_n(&lattice, n)?;
    let cache = TransitionCache::default();
    let per: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let data = sample_gaussian_pair_indexed(&lattice, seed, s, Some(n));
            let mut st = ConvolutionStepper::with_cache(&data, seed, s, n, false, cache.clone())
                .expect("lattice consistent");
            let mut out = Vec::with_capacity(times.len() * points.len());
            for &t in times {
                let h = t - st.time();
                if h > 0.0 {
                    st.step(h);
                }
                out.extend(st.eval_points(ConvolutionKind::Kg, points).into_iter().map(|v| v * v));
            }
            out
        })
        .collect();
    let mut rows = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        for (j, &x) in points.iter().enumerate() {
            let k = i * points.len() + j;
            let est = mean_se(&per.iter().map(|v| v[k]).collect::<Vec<_>>());
            let z = (est.mean - sigma) / est.se;
            rows.push(VarianceRow { n, t, x, estimate: est, exact: sigma, z });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLawRow {
    pub n: f64,
    /// max over the probe grid of |Γ_N + (1/2π)log(|t₁−t₂| + |x| + N⁻¹)|.
    pub constant: f64,
    /// Probe (t₁, t₂, |x|) attaining the maximum.
    pub argmax: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogLawReport {
    pub rows: Vec<LogLawRow>,
    /// Constant fitted at the first cutoff.
    pub fitted: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Uniformity in N of the logarithmic law of Γ_N over a probe grid of time
/// pairs (t_ref − Δ, t_ref) and offsets |x| (taken along a fixed direction).
pub fn covariance_log_law(
    n_list: &[f64],
    t_ref: f64,
    time_offsets: &[f64],
    radii: &[f64],
    slack: f64,
) -> Result<LogLawReport> {
    if n_list.is_empty() {
        return Err(LabError::InvalidParameter("need at least one cutoff".into()));
    }
    if time_offsets.iter().any(|d| !(*d >= 0.0 && *d <= t_ref)) || !(t_ref <= 1.0) {
        return Err(LabError::InvalidParameter("time pairs must lie in [0, 1]".into()));
    }
    let dir = [0.3f64.cos(), 0.3f64.sin()];
    let mut rows = Vec::new();
    for &n in n_list {
        let cells: Vec<(f64, f64, f64)> = time_offsets
            .par_iter()
            .map(|&d| {
                let t1 = t_ref - d;
                let mut best = (0.0, 0.0);
                for &r in radii {
                    let g = covariance_gamma(n, t1, t_ref, [r * dir[0], r * dir[1]], CovarianceMode::AnalyticSum)
                        .expect("valid times")
                        .value;
                    let dev = (g + (d + r + 1.0 / n).ln() / (2.0 * PI)).abs();
                    if dev > best.0 {
                        best = (dev, r);
                    }
                }
                (best.0, t1, best.1)
            })
            .collect();
        let (c, t1, r) = cells.into_iter().fold((0.0, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        rows.push(LogLawRow { n, constant: c, argmax: [t1, t_ref, r] });
    }
    let fitted = rows[0].constant;
    let pass = rows.iter().all(|r| r.constant <= slack * fitted);
    Ok(LogLawReport { rows, fitted, slack, pass })
}
