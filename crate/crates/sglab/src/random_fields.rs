//! Gaussian initial data, Brownian mode drivers, renormalisation constants and
//! the truncated Gibbs density.
//!
//! Randomness is organised as one independent generator per (seed, sample,
//! purpose, Fourier mode). Mode sampling is therefore order independent: a
//! field sampled on a large lattice agrees mode by mode with the same field
//! sampled on a smaller one, and Monte Carlo loops can fan out freely.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::spectral_torus::{
    chi, inverse_transform, japanese, truncate, FrequencyLattice, SpectralField, C64,
};

/// Independent random streams are addressed by purpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialData = 0x11,
    NoiseKg = 0x22,
    NoiseWave = 0x33,
    NoisePassive = 0x44,
    Auxiliary = 0x55,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for the stream (seed, sample, purpose, n).
pub fn stream_key(seed: u64, sample: u64, purpose: Purpose, n: (i64, i64)) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ sample.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix(h ^ (purpose as u64));
    h = splitmix(h ^ (n.0 as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix(h ^ (n.1 as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

pub type ModeRng = Xoshiro256PlusPlus;

pub fn mode_rng(seed: u64, sample: u64, purpose: Purpose, n: (i64, i64)) -> ModeRng {
    ModeRng::seed_from_u64(stream_key(seed, sample, purpose, n))
}

/// A generic generator for non-mode randomness (e.g. random probe points).
pub fn aux_rng(seed: u64, sample: u64) -> ModeRng {
    mode_rng(seed, sample, Purpose::Auxiliary, (0, 0))
}

/// Standard complex Gaussian, E|g|² = 1.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

#[inline]
pub fn real_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// (u₀, v₀) drawn from μ₁ ⊗ μ₀.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPair {
    pub u0: SpectralField,
    pub v0: SpectralField,
}

/// Draws û₀(n) = g_n/⟨n⟩ and v̂₀(n) = h_n for every Hermitian pair of lattice
/// modes. Modes on the Nyquist rows (a component equal to −M) have no partner
/// inside the lattice and are set to zero.
pub fn sample_gaussian_pair(lattice: &FrequencyLattice, seed: u64) -> GaussianPair {
    sample_gaussian_pair_indexed(lattice, seed, 0, None)
}

/// As [`sample_gaussian_pair`] for Monte Carlo sample `sample`; when
/// `mode_bound` is given only modes with |n| < bound are drawn (others zero).
/// Because every mode owns its stream, the drawn modes coincide with those of
/// the unrestricted sample.
pub fn sample_gaussian_pair_indexed(
    lattice: &FrequencyLattice,
    seed: u64,
    sample: u64,
    mode_bound: Option<f64>,
) -> GaussianPair {
    let mut u0 = SpectralField::zeros(lattice);
    let mut v0 = SpectralField::zeros(lattice);
    let bound = mode_bound.unwrap_or(f64::INFINITY).min(lattice.m() as f64);
    let reps = lattice.active_half(bound);
    let mut r0 = mode_rng(seed, sample, Purpose::InitialData, (0, 0));
    u0.coeffs[0] = C64::new(real_normal(&mut r0), 0.0);
    v0.coeffs[0] = C64::new(real_normal(&mut r0), 0.0);
    for idx in reps {
        let n = lattice.mode(idx);
        let mut rng = mode_rng(seed, sample, Purpose::InitialData, n);
        let g = complex_normal(&mut rng);
        let h = complex_normal(&mut rng);
        let w = 1.0 / japanese(lattice.norm2(idx) as f64);
        let j = lattice.neg_index(idx);
        u0.coeffs[idx] = g * w;
        u0.coeffs[j] = (g * w).conj();
        v0.coeffs[idx] = h;
        v0.coeffs[j] = h.conj();
    }
    GaussianPair { u0, v0 }
}

/// Brownian drivers B_n with E|B_n(t)|² = t, B_{−n} = conj(B_n).
///
/// The path is not materialised: each mode owns deterministic streams from
/// which the integrators draw standard normals step by step. The Brownian
/// increment over step k is √dt times the first normal of that step, the
/// remaining normals drive the exact conditional law of the stochastic
/// convolutions given that increment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub seed: u64,
    pub sample: u64,
    pub dt: f64,
    pub steps: usize,
}

impl NoisePath {
    pub fn new(seed: u64, sample: u64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "noise step must be positive, got {dt}"
            )));
        }
        Ok(Self {
            seed,
            sample,
            dt,
            steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Brownian increments ΔB_n for every step at mode n (a materialised view
    /// used by tests and diagnostics).
    pub fn brownian_increments(&self, n: (i64, i64)) -> Vec<C64> {
        let mut rng = mode_rng(self.seed, self.sample, Purpose::NoiseKg, canonical(n));
        let flip = canonical(n) != n;
        let s = self.dt.sqrt();
        (0..self.steps)
            .map(|_| {
                let z = if n == (0, 0) {
                    let a = real_normal(&mut rng);
                    let _ = real_normal(&mut rng);
                    let _ = real_normal(&mut rng);
                    C64::new(a, 0.0)
                } else {
                    let a = complex_normal(&mut rng);
                    let _ = complex_normal(&mut rng);
                    let _ = complex_normal(&mut rng);
                    a
                };
                let z = z * s;
                if flip {
                    z.conj()
                } else {
                    z
                }
            })
            .collect()
    }
}

/// Half-lattice representative of the pair {n, −n}.
pub fn canonical(n: (i64, i64)) -> (i64, i64) {
    if n.0 > 0 || (n.0 == 0 && n.1 >= 0) {
        n
    } else {
        (-n.0, -n.1)
    }
}

/// (N, β², σ_N, γ_N).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormConstants {
    pub n: f64,
    pub beta2: f64,
    pub sigma_n: f64,
    pub gamma_n: f64,
}

impl RenormConstants {
    pub fn beta(&self) -> f64 {
        self.beta2.sqrt()
    }
}

/// σ_N = (1/4π²) Σ_n χ_N(n)²/⟨n⟩² (exact finite sum).
pub fn compute_sigma_n(lattice: &FrequencyLattice, n: f64) -> Result<f64> {
    if !(n.is_finite() && n >= 0.25) {
        return Err(LabError::InvalidParameter(format!(
            "σ_N requires N ≥ 1/4, got {n}"
        )));
    }
    let r = n.ceil() as i64;
    if 2 * r > lattice.m() as i64 {
        return Err(LabError::Unresolved(format!(
            "χ_N with N = {n} needs M ≥ {} but the lattice has M = {}",
            2 * r,
            lattice.m()
        )));
    }
    Ok(sigma_sum(n))
}

/// The lattice sum behind σ_N without the resolution check.
pub(crate) fn sigma_sum(n: f64) -> f64 {
    let r = n.ceil() as i64;
    let mut total = 0.0;
    for a in -r..=r {
        let mut row = 0.0;
        for b in -r..=r {
            let q = (a * a + b * b) as f64;
            let c = chi(q.sqrt() / n);
            if c > 0.0 {
                row += c * c / (1.0 + q);
            }
        }
        total += row;
    }
    total / (4.0 * PI * PI)
}

/// γ_N = exp(β²σ_N/2) packaged with σ_N.
pub fn compute_renorm_constants(
    lattice: &FrequencyLattice,
    n: f64,
    beta2: f64,
) -> Result<RenormConstants> {
    if !(beta2.is_finite() && beta2 >= 0.0) {
        return Err(LabError::InvalidParameter(format!(
            "β² must be ≥ 0, got {beta2}"
        )));
    }
    let sigma_n = compute_sigma_n(lattice, n)?;
    renorm_from_sigma(n, beta2, sigma_n)
}

pub fn renorm_from_sigma(n: f64, beta2: f64, sigma_n: f64) -> Result<RenormConstants> {
    let gamma_n = (0.5 * beta2 * sigma_n).exp();
    if !gamma_n.is_finite() {
        return Err(LabError::Saturation(format!(
            "γ_N = exp(β²σ_N/2) overflows for β² = {beta2}, σ_N = {sigma_n}"
        )));
    }
    Ok(RenormConstants {
        n,
        beta2,
        sigma_n,
        gamma_n,
    })
}

/// R_N(u) = (γ_N·γ/β) ∫ cos(β Π_{≤N}u) dx on the collocation grid.
pub fn gibbs_density_rn(
    u: &SpectralField,
    rc: &RenormConstants,
    gamma_coupling: f64,
    beta: f64,
) -> Result<f64> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(LabError::InvalidParameter(format!(
            "β must be non-zero and finite, got {beta}"
        )));
    }
    if gamma_coupling == 0.0 {
        return Ok(0.0);
    }
    let pu = inverse_transform(&truncate(u, rc.n));
    let h = pu.lattice.spacing();
    let s: f64 = pu.values.iter().map(|v| (beta * v).cos()).sum();
    Ok(rc.gamma_n * gamma_coupling / beta * s * h * h)
}

/// The cosine envelope (γ_N|γ|/|β|)·4π² bounding |R_N|.
pub fn gibbs_envelope(rc: &RenormConstants, gamma_coupling: f64, beta: f64) -> f64 {
    rc.gamma_n * gamma_coupling.abs() / beta.abs() * 4.0 * PI * PI
}
