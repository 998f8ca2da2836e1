//! Discrete space-time fields on [−T, T) × 𝕋², their temporal transform, the
//! X^{s,b}, Y^{s,b}_a and Λ^{s,b}_p norms, space-time Fourier multipliers
//! (□^b, Hilbert, cone blocks), spatial paraproducts, and empirical probes of
//! the weighted cone estimate and the hyperbolic Leibniz rule.
//!
//! Temporal transform convention: ũ(τ, n) = (2π)^{−1/2} ∫ û(t, n) e^{−iτt} dt,
//! discretised by the rectangle rule on t_k = −T + kΔt with the dual grid
//! τ_j = 2πj/(N_tΔt), j ∈ [−N_t/2, N_t/2).

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::random_fields::{aux_rng, complex_normal};
use crate::spectral_torus::{
    fft_rows, forward_transform, inverse_transform, japanese, lp_outer, FrequencyLattice,
    RealField2D, SpectralField, C64,
};

/// u(t_k, ·) as spatial Fourier coefficients, stored mode-major
/// (`data[idx·N_t + k]`) so the temporal transform runs over contiguous rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub lattice: FrequencyLattice,
    pub window: f64,
    pub nt: usize,
    pub data: Vec<C64>,
    pub real: bool,
}

/// ũ(τ_j, n) in the same mode-major layout, j in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeSpectrum {
    pub lattice: FrequencyLattice,
    pub window: f64,
    pub nt: usize,
    pub data: Vec<C64>,
}

fn check_grid(window: f64, nt: usize) -> Result<()> {
    if !(window.is_finite() && window > 0.0) || nt < 2 {
        return Err(LabError::InvalidParameter(format!(
            "time window must be positive with ≥ 2 points (T = {window}, N_t = {nt})"
        )));
    }
    Ok(())
}

impl SpaceTimeField {
    pub fn zeros(lattice: &FrequencyLattice, window: f64, nt: usize) -> Result<Self> {
        check_grid(window, nt)?;
        Ok(Self {
            lattice: lattice.clone(),
            window,
            nt,
            data: vec![C64::new(0.0, 0.0); lattice.len() * nt],
            real: true,
        })
    }

    /// û(t, n) = f(t, mode index).
    pub fn from_fn(
        lattice: &FrequencyLattice,
        window: f64,
        nt: usize,
        real: bool,
        f: impl Fn(f64, usize) -> C64 + Sync,
    ) -> Result<Self> {
        check_grid(window, nt)?;
        let dt = 2.0 * window / nt as f64;
        let mut data = vec![C64::new(0.0, 0.0); lattice.len() * nt];
        data.par_chunks_mut(nt).enumerate().for_each(|(idx, row)| {
            for (k, z) in row.iter_mut().enumerate() {
                *z = f(-window + k as f64 * dt, idx);
            }
        });
        Ok(Self {
            lattice: lattice.clone(),
            window,
            nt,
            data,
            real,
        })
    }

    /// Stacks spatial slices taken at the grid times.
    pub fn from_slices(window: f64, slices: &[SpectralField]) -> Result<Self> {
        let nt = slices.len();
        check_grid(window, nt)?;
        let lattice = slices[0].lattice.clone();
        if slices.iter().any(|s| s.lattice != lattice) {
            return Err(LabError::GridMismatch(
                "slices live on different lattices".into(),
            ));
        }
        let mut data = vec![C64::new(0.0, 0.0); lattice.len() * nt];
        for (k, s) in slices.iter().enumerate() {
            for (idx, c) in s.coeffs.iter().enumerate() {
                data[idx * nt + k] = *c;
            }
        }
        Ok(Self {
            lattice,
            window,
            nt,
            data,
            real: slices.iter().all(|s| s.real),
        })
    }

    pub fn dt(&self) -> f64 {
        2.0 * self.window / self.nt as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        -self.window + k as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|k| self.time(k)).collect()
    }

    pub fn dtau(&self) -> f64 {
        2.0 * PI / (self.nt as f64 * self.dt())
    }

    /// Nearest grid index to time t.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let k = ((t + self.window) / self.dt()).round();
        if k < 0.0 || k >= self.nt as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn slice(&self, k: usize) -> SpectralField {
        let mut s = SpectralField::zeros(&self.lattice);
        s.real = self.real;
        for idx in 0..self.lattice.len() {
            s.coeffs[idx] = self.data[idx * self.nt + k];
        }
        s
    }

    pub fn mode_row(&self, idx: usize) -> &[C64] {
        &self.data[idx * self.nt..(idx + 1) * self.nt]
    }

    /// ∫∫|u|² dt dx (spatial Parseval, rectangle rule in t).
    pub fn l2_norm_sq(&self) -> f64 {
        self.dt() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// ∫∫⟨t⟩^{2a}|u|² dt dx.
    pub fn weighted_l2_norm_sq(&self, a: f64) -> f64 {
        weighted_rows_norm_sq(&self.data, self.nt, self.window, a)
    }

    /// Largest |û(t,n) − conj û(t,−n)|.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for idx in 0..self.lattice.len() {
            if self.lattice.is_nyquist(idx) {
                continue;
            }
            let j = self.lattice.neg_index(idx);
            for k in 0..self.nt {
                d = d
                    .max((self.data[idx * self.nt + k] - self.data[j * self.nt + k].conj()).norm());
            }
        }
        d
    }

    pub fn temporal_transform(&self) -> SpaceTimeSpectrum {
        let nt = self.nt;
        let dt = self.dt();
        let tw = self.window;
        let mut data = self.data.clone();
        let taus = tau_grid(nt, dt);
        let scale = dt / (2.0 * PI).sqrt();
        data.par_chunks_mut(nt).for_each(|row| {
            fft_rows(row, nt, FftDirection::Forward);
            for (j, z) in row.iter_mut().enumerate() {
                *z *= C64::from_polar(scale, taus[j] * tw);
            }
        });
        SpaceTimeSpectrum {
            lattice: self.lattice.clone(),
            window: self.window,
            nt,
            data,
        }
    }
}

/// τ_j in FFT order.
pub fn tau_grid(nt: usize, dt: f64) -> Vec<f64> {
    let dtau = 2.0 * PI / (nt as f64 * dt);
    (0..nt)
        .map(|j| {
            dtau * if j < nt / 2 {
                j as f64
            } else {
                j as f64 - nt as f64
            }
        })
        .collect()
}

fn weighted_rows_norm_sq(data: &[C64], nt: usize, window: f64, a: f64) -> f64 {
    let dt = 2.0 * window / nt as f64;
    let w: Vec<f64> = (0..nt)
        .map(|k| (1.0 + (-window + k as f64 * dt).powi(2)).powf(a))
        .collect();
    dt * data
        .chunks(nt)
        .map(|row| {
            row.iter()
                .zip(&w)
                .map(|(z, w)| w * z.norm_sqr())
                .sum::<f64>()
        })
        .sum::<f64>()
}

impl SpaceTimeSpectrum {
    pub fn dt(&self) -> f64 {
        2.0 * self.window / self.nt as f64
    }

    pub fn dtau(&self) -> f64 {
        2.0 * PI / (self.nt as f64 * self.dt())
    }

    pub fn taus(&self) -> Vec<f64> {
        tau_grid(self.nt, self.dt())
    }

    pub fn inverse(&self, real: bool) -> SpaceTimeField {
        let nt = self.nt;
        let dt = self.dt();
        let tw = self.window;
        let taus = tau_grid(nt, dt);
        let scale = (2.0 * PI).sqrt() / (nt as f64 * dt);
        let mut data = self.data.clone();
        data.par_chunks_mut(nt).for_each(|row| {
            for (j, z) in row.iter_mut().enumerate() {
                *z *= C64::from_polar(scale, -taus[j] * tw);
            }
            fft_rows(row, nt, FftDirection::Inverse);
        });
        SpaceTimeField {
            lattice: self.lattice.clone(),
            window: self.window,
            nt,
            data,
            real,
        }
    }

    /// Multiplies by m(τ, n) with n given as (mode index, |n|).
    ///
    /// The temporal Nyquist column (even `nt`) is its own mirror τ ↔ −τ, so
    /// it gets the symmetric value Re m there; otherwise a symbol with
    /// m(−τ) = conj m(τ) would not map real fields to real fields.
    pub fn multiply(&mut self, m: impl Fn(f64, usize, f64) -> C64 + Sync) {
        let nt = self.nt;
        let taus = self.taus();
        let lat = self.lattice.clone();
        let nyquist = if nt % 2 == 0 { Some(nt / 2) } else { None };
        self.data
            .par_chunks_mut(nt)
            .enumerate()
            .for_each(|(idx, row)| {
                let r = (lat.norm2(idx) as f64).sqrt();
                for (j, z) in row.iter_mut().enumerate() {
                    let v = m(taus[j], idx, r);
                    *z *= if Some(j) == nyquist { C64::new(v.re, 0.0) } else { v };
                }
            });
    }

    /// Σ_n Σ_j Δτ w(τ_j, |n|)|ũ|².
    pub fn weighted_sum(&self, w: impl Fn(f64, usize, f64) -> f64 + Sync) -> f64 {
        let nt = self.nt;
        let taus = self.taus();
        let lat = &self.lattice;
        self.dtau()
            * self
                .data
                .par_chunks(nt)
                .enumerate()
                .map(|(idx, row)| {
                    let r = (lat.norm2(idx) as f64).sqrt();
                    row.iter()
                        .enumerate()
                        .map(|(j, z)| w(taus[j], idx, r) * z.norm_sqr())
                        .sum::<f64>()
                })
                .sum::<f64>()
    }
}

/// A free multiplier applied through the temporal transform.
pub fn apply_spacetime_multiplier(
    u: &SpaceTimeField,
    m: impl Fn(f64, usize, f64) -> C64 + Sync,
    keeps_real: bool,
) -> SpaceTimeField {
    let mut s = u.temporal_transform();
    s.multiply(m);
    s.inverse(u.real && keeps_real)
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    X,
    Y,
    Lambda,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub s: f64,
    pub b: f64,
    /// ⟨t⟩^a weight exponent (Y only).
    pub a: f64,
    /// Lebesgue exponent in (1, ∞] (Λ only).
    pub p: f64,
}

impl Default for NormParams {
    fn default() -> Self {
        Self {
            s: 0.0,
            b: 0.0,
            a: 0.0,
            p: 2.0,
        }
    }
}

/// Relative energy below which sub-resolution modulations are tolerated in Y.
pub const MODULATION_TOLERANCE: f64 = 1e-8;

pub fn spacetime_norm(u: &SpaceTimeField, kind: NormKind, params: &NormParams) -> Result<f64> {
    let NormParams { s, b, a, p } = *params;
    if ![s, b, a, p].iter().all(|v| !v.is_nan())
        || s.is_infinite()
        || b.is_infinite()
        || a.is_infinite()
    {
        return Err(LabError::InvalidParameter(
            "norm parameters must be finite".into(),
        ));
    }
    match kind {
        NormKind::X => {
            let spec = u.temporal_transform();
            let v = spec.weighted_sum(|tau, _, r| {
                japanese(r * r).powf(2.0 * s) * japanese((tau.abs() - r).powi(2)).powf(2.0 * b)
            });
            Ok(v.sqrt())
        }
        NormKind::Y => {
            let mut spec = u.temporal_transform();
            let dtau = spec.dtau();
            if b < 0.0 {
                let total = spec.weighted_sum(|_, _, _| 1.0);
                let bad = spec.weighted_sum(|tau, _, r| {
                    if (tau.abs() - r).abs() < 0.5 * dtau {
                        1.0
                    } else {
                        0.0
                    }
                });
                if total > 0.0 && bad > MODULATION_TOLERANCE * total {
                    return Err(LabError::ModulationUnderresolved(format!(
                        "{:.3e} of the energy sits at ||τ|−|n|| < Δτ/2 = {:.3e} with b = {b} < 0",
                        bad / total,
                        0.5 * dtau
                    )));
                }
            }
            spec.multiply(|tau, _, r| {
                C64::new(
                    modulation_power(tau, r, b, dtau) * japanese(r * r).powf(s),
                    0.0,
                )
            });
            let back = spec.inverse(u.real);
            Ok(back.weighted_l2_norm_sq(a).sqrt())
        }
        NormKind::Lambda => {
            if !(p > 1.0) {
                return Err(LabError::InvalidParameter(format!(
                    "Λ needs p ∈ (1, ∞], got {p}"
                )));
            }
            let back = apply_spacetime_multiplier(
                u,
                |tau, _, r| C64::new(japanese(r * r).powf(s) * japanese(tau * tau).powf(b), 0.0),
                true,
            );
            lp_spacetime(&back, p)
        }
    }
}

/// ‖u‖_{L^p_{t,x}} by the trapezoid rule on the collocation grid.
pub fn lp_spacetime(u: &SpaceTimeField, p: f64) -> Result<f64> {
    let h = u.lattice.spacing();
    let dt = u.dt();
    let mut acc = 0.0f64;
    for k in 0..u.nt {
        let slice = u.slice(k);
        let vals: Vec<f64> = if u.real {
            inverse_transform(&slice)
                .values
                .iter()
                .map(|v| v.abs())
                .collect()
        } else {
            crate::spectral_torus::inverse_transform_complex(&slice)
                .values
                .iter()
                .map(|z| z.norm())
                .collect()
        };
        if p.is_infinite() {
            acc = acc.max(vals.iter().cloned().fold(0.0, f64::max));
        } else {
            acc += dt * h * h * vals.iter().map(|v| v.powf(p)).sum::<f64>();
        }
    }
    Ok(if p.is_infinite() {
        acc
    } else {
        acc.powf(1.0 / p)
    })
}

/// ||τ| − |n||^b with the cone-set floor for b < 0 on exact hits.
pub fn modulation_power(tau: f64, r: f64, b: f64, dtau: f64) -> f64 {
    if b == 0.0 {
        return 1.0;
    }
    let m = (tau.abs() - r).abs();
    if b < 0.0 && is_cone_hit(tau, r) {
        (0.5 * dtau).powf(b)
    } else {
        m.powf(b)
    }
}

#[inline]
fn is_cone_hit(tau: f64, r: f64) -> bool {
    (tau.abs() - r).abs() <= 1e-12 * (1.0 + r)
}

// ---------------------------------------------------------------------------
// Hyperbolic Riesz potential
// ---------------------------------------------------------------------------

/// 𝔮_b(τ,n)·||τ|² − |n|²|^b with 𝔮_b = e^{−bπi·sgn τ} inside the cone
/// (|τ| ≥ |n|) and 1 outside. On exact hits with b < 0 the modulation factor
/// ||τ| − |n|| is floored at Δτ/2 (and |τ| + |n| at Δτ/2 when both vanish).
pub fn box_symbol(tau: f64, r: f64, b: f64, dtau: f64) -> C64 {
    if b == 0.0 {
        return C64::new(1.0, 0.0);
    }
    let hit = is_cone_hit(tau, r);
    let modulus = if hit && b < 0.0 {
        let sum = (tau.abs() + r).max(0.5 * dtau);
        (0.5 * dtau * sum).powf(b)
    } else {
        (tau * tau - r * r).abs().powf(b)
    };
    // 𝔮_b carries the phase on the closed cone |τ| ≥ |n|; the single point
    // τ = 0, n = 0 is given the real (even) value so real fields stay real.
    if tau.abs() >= r && tau != 0.0 {
        C64::from_polar(modulus, -b * PI * tau.signum())
    } else {
        C64::new(modulus, 0.0)
    }
}

/// □^b u; also returns the number of (τ, n) cone hits whose symbol was floored.
pub fn apply_box_power(u: &SpaceTimeField, b: f64) -> Result<(SpaceTimeField, usize)> {
    if !b.is_finite() {
        return Err(LabError::InvalidParameter(format!(
            "b must be finite, got {b}"
        )));
    }
    let mut spec = u.temporal_transform();
    let dtau = spec.dtau();
    let floored = if b < 0.0 { count_cone_hits(&spec) } else { 0 };
    spec.multiply(|tau, _, r| box_symbol(tau, r, b, dtau));
    // 𝔮_b(−τ) = conj 𝔮_b(τ), so real fields stay real.
    Ok((spec.inverse(u.real), floored))
}

fn count_cone_hits(spec: &SpaceTimeSpectrum) -> usize {
    let taus = spec.taus();
    (0..spec.lattice.len())
        .map(|idx| {
            let r = (spec.lattice.norm2(idx) as f64).sqrt();
            taus.iter().filter(|&&t| is_cone_hit(t, r)).count()
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Dyadic projectors and cone blocks
// ---------------------------------------------------------------------------

/// Dyadic piece at `level`: ϕ(x/level) − ϕ(2x/level), or the whole low part
/// ϕ(x/level) when `floor` is set (the lowest piece of a finite partition).
pub fn dyadic_piece(x: f64, level: f64, floor: bool) -> f64 {
    let x = x.abs() / level;
    if floor {
        lp_outer(x)
    } else {
        lp_outer(x) - lp_outer(2.0 * x)
    }
}

/// Dyadic triple (N, R, L) and exponent b of the cone block
/// 𝓒^b_{N,R,L} = ||∂_t| − |∇||^b 𝐌_{N,R,L}. The `*_floor` flags turn the
/// corresponding dyadic piece into the low-frequency remainder of a finite
/// partition (used for reconstruction on a discrete grid).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBlockSpec {
    pub n: f64,
    pub r: f64,
    pub l: f64,
    pub b: f64,
    #[serde(default)]
    pub n_floor: bool,
    #[serde(default)]
    pub r_floor: bool,
    #[serde(default)]
    pub l_floor: bool,
}

impl ConeBlockSpec {
    pub fn new(n: f64, r: f64, l: f64, b: f64) -> Result<Self> {
        for v in [n, r, l] {
            if !(v > 0.0) || (v.log2() - v.log2().round()).abs() > 1e-12 {
                return Err(LabError::InvalidParameter(format!(
                    "block sizes must be dyadic, got {v}"
                )));
            }
        }
        Ok(Self {
            n,
            r,
            l,
            b,
            n_floor: false,
            r_floor: false,
            l_floor: false,
        })
    }

    /// φ(n/N)η(τ/R)ψ((|τ|−|n|)/L).
    pub fn localiser(&self, tau: f64, r: f64) -> f64 {
        dyadic_piece(r, self.n, self.n_floor)
            * dyadic_piece(tau, self.r, self.r_floor)
            * dyadic_piece(tau.abs() - r, self.l, self.l_floor)
    }

    pub fn symbol(&self, tau: f64, r: f64, dtau: f64, prefix: ConePrefix) -> C64 {
        let loc = self.localiser(tau, r);
        if loc == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let base = loc * modulation_power(tau, r, self.b, dtau);
        match prefix {
            ConePrefix::Id => C64::new(base, 0.0),
            ConePrefix::C => C64::new(if tau.abs() > r { base } else { 0.0 }, 0.0),
            ConePrefix::HC => {
                if tau.abs() > r {
                    C64::new(0.0, -tau.signum() * base)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConePrefix {
    Id,
    C,
    HC,
}

pub fn apply_cone_block(
    u: &SpaceTimeField,
    spec: &ConeBlockSpec,
    prefix: ConePrefix,
) -> SpaceTimeField {
    let dtau = u.dtau();
    // every prefix symbol satisfies m(−τ, −n) = conj m(τ, n)
    apply_spacetime_multiplier(u, |tau, _, r| spec.symbol(tau, r, dtau, prefix), true)
}

/// 𝐌_{N,R,L} (the cone block with b = 0).
pub fn project_block(u: &SpaceTimeField, spec: &ConeBlockSpec) -> SpaceTimeField {
    let s = ConeBlockSpec { b: 0.0, ..*spec };
    apply_cone_block(u, &s, ConePrefix::Id)
}

/// 𝐏_N on a space-time field.
pub fn project_spatial(u: &SpaceTimeField, n: f64, floor: bool) -> SpaceTimeField {
    let mut out = u.clone();
    for idx in 0..u.lattice.len() {
        let w = dyadic_piece((u.lattice.norm2(idx) as f64).sqrt(), n, floor);
        for z in &mut out.data[idx * u.nt..(idx + 1) * u.nt] {
            *z *= w;
        }
    }
    out
}

/// 𝐓_R.
pub fn project_temporal(u: &SpaceTimeField, r: f64, floor: bool) -> SpaceTimeField {
    apply_spacetime_multiplier(
        u,
        |tau, _, _| C64::new(dyadic_piece(tau, r, floor), 0.0),
        true,
    )
}

/// Temporal Hilbert transform, symbol −i·sgn(τ).
pub fn hilbert_transform(u: &SpaceTimeField) -> SpaceTimeField {
    apply_spacetime_multiplier(u, |tau, _, _| C64::new(0.0, -sign0(tau)), true)
}

/// Sharp cone multiplier 𝟙_{|τ|>|n|}.
pub fn cone_cutoff(u: &SpaceTimeField) -> SpaceTimeField {
    apply_spacetime_multiplier(
        u,
        |tau, _, r| C64::new(if tau.abs() > r { 1.0 } else { 0.0 }, 0.0),
        true,
    )
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dyadic levels 1, 2, 4, … up to the first level whose piece covers `max`.
pub fn dyadic_levels(min: f64, max: f64) -> Vec<f64> {
    let mut v = vec![min];
    while *v.last().unwrap() * 1.25 <= max {
        let next = v.last().unwrap() * 2.0;
        v.push(next);
    }
    v
}

// ---------------------------------------------------------------------------
// Spatial paraproducts
// ---------------------------------------------------------------------------

fn spatial_pieces(u: &SpectralField) -> Vec<(f64, RealField2D)> {
    let max = u.lattice.m() as f64 * std::f64::consts::SQRT_2;
    dyadic_levels(1.0, max)
        .into_iter()
        .map(|n| {
            let mut p = u.clone();
            for (idx, c) in p.coeffs.iter_mut().enumerate() {
                *c *= dyadic_piece((u.lattice.norm2(idx) as f64).sqrt(), n, false);
            }
            (n, inverse_transform(&p))
        })
        .collect()
}

fn paraproduct(
    u: &SpectralField,
    v: &SpectralField,
    keep: impl Fn(f64, f64) -> bool,
) -> Result<SpectralField> {
    if u.lattice != v.lattice {
        return Err(LabError::GridMismatch(
            "paraproduct factors on different lattices".into(),
        ));
    }
    let pu = spatial_pieces(u);
    let pv = spatial_pieces(v);
    let mut acc = vec![0.0; u.lattice.len()];
    for (n1, a) in &pu {
        for (n2, b) in &pv {
            if keep(*n1, *n2) {
                for ((s, x), y) in acc.iter_mut().zip(&a.values).zip(&b.values) {
                    *s += x * y;
                }
            }
        }
    }
    forward_transform(&RealField2D {
        lattice: u.lattice.clone(),
        values: acc,
    })
}

/// 𝓟^>_γ(u, v) = Σ_{N₁ ≥ N₂^γ} 𝐏_{N₁}u·𝐏_{N₂}v (dyadic N ≥ 1; the zero mode is
/// not covered by the dyadic pieces, so inputs should be mean-zero).
pub fn paraproduct_high(u: &SpectralField, v: &SpectralField, gamma: f64) -> Result<SpectralField> {
    paraproduct(u, v, |n1, n2| n1 >= n2.powf(gamma))
}

/// 𝓟^<_γ(u, v) = Σ_{N₁ < N₂^γ} 𝐏_{N₁}u·𝐏_{N₂}v.
pub fn paraproduct_low(u: &SpectralField, v: &SpectralField, gamma: f64) -> Result<SpectralField> {
    paraproduct(u, v, |n1, n2| n1 < n2.powf(gamma))
}

/// The collocation product u·v.
pub fn product(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    if u.lattice != v.lattice {
        return Err(LabError::GridMismatch(
            "product factors on different lattices".into(),
        ));
    }
    let a = inverse_transform(u);
    let b = inverse_transform(v);
    forward_transform(&RealField2D {
        lattice: u.lattice.clone(),
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
    })
}

// ---------------------------------------------------------------------------
// Weighted cone probe
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeProbeParams {
    pub n: f64,
    pub r: f64,
    pub b: f64,
    /// ⟨t⟩^a weight, a ∈ (0, 1).
    pub a: f64,
    /// δ₀ of the envelope.
    pub delta: f64,
    pub l_list: Vec<f64>,
    /// Half-width of the temporal window.
    pub window: f64,
    pub time_points: usize,
    pub fields: usize,
    pub seed: u64,
    pub prefix: ConePrefix,
}

impl Default for ConeProbeParams {
    fn default() -> Self {
        Self {
            n: 4.0,
            r: 4.0,
            b: 0.5,
            a: 0.5,
            delta: 0.1,
            l_list: (-6..=2).map(|k| 2f64.powi(k)).collect(),
            window: 800.0,
            time_points: 16384,
            fields: 30,
            seed: 3,
            prefix: ConePrefix::Id,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeProbeRow {
    pub l: f64,
    pub max_ratio: f64,
    pub max_lhs_over_input: f64,
    pub envelope_first: f64,
    pub envelope_second: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeProbeReport {
    pub rows: Vec<ConeProbeRow>,
    /// Exponent p in max ratio ∼ L^{−p} as L → 0 (least squares over L < 1).
    pub ratio_growth_exponent: f64,
    pub max_ratio: f64,
}

/// Envelope factors (first-term coefficient, second-term coefficient).
pub fn cone_envelope(l: f64, a: f64, b: f64, delta: f64) -> (f64, f64) {
    (
        l.powf(b) * (1.0 + l.powf(-(1.0 - delta) * (a + delta / 10.0))),
        l.powf(b) * (1.0 + l.powf(-a * (1.0 - delta) - delta)),
    )
}

/// Random test fields supported on the spatial band of 𝐏_N: mixtures of
/// windowed free waves e^{±i|n|t} (concentrated near the cone) and windowed
/// white noise.
fn random_band_rows(p: &ConeProbeParams, modes: &[(usize, f64)], field: u64) -> Vec<Vec<C64>> {
    let nt = p.time_points;
    let dt = 2.0 * p.window / nt as f64;
    let mut rng = aux_rng(p.seed, field);
    let kind = field % 3;
    // widths log-uniform between 1 and half the window, so every modulation
    // scale L ∈ [1/window, 1] is matched by some draws
    let width = (rng.random::<f64>() * (0.5 * p.window).ln()).exp();
    let centre = (p.window - 2.0 * width).max(0.0) * 0.5 * (2.0 * rng.random::<f64>() - 1.0);
    modes
        .iter()
        .map(|&(_, r)| {
            let g = complex_normal(&mut rng);
            let sgn = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let detune = (2.0 * rng.random::<f64>() - 1.0) / width;
            (0..nt)
                .map(|k| {
                    let t = -p.window + k as f64 * dt;
                    let envelope = crate::spectral_torus::chi(((t - centre) / width).abs() * 0.5);
                    match kind {
                        0 => g * C64::from_polar(envelope, sgn * (r + detune) * t),
                        1 => complex_normal(&mut rng) * envelope,
                        _ => {
                            g * C64::from_polar(envelope, sgn * r * t)
                                + complex_normal(&mut rng) * (0.1 * envelope)
                        }
                    }
                })
                .collect()
        })
        .collect()
}

pub fn weighted_cone_probe(p: &ConeProbeParams) -> Result<ConeProbeReport> {
    if !(p.a > 0.0 && p.a < 1.0) {
        return Err(LabError::InvalidParameter(format!(
            "a must lie in (0, 1), got {}",
            p.a
        )));
    }
    check_grid(p.window, p.time_points)?;
    let m = (1.6 * p.n).ceil() as usize + 1;
    let lattice = FrequencyLattice::new(2 * m.div_ceil(2), 0.25)?;
    let modes: Vec<(usize, f64)> = (0..lattice.len())
        .filter(|&i| !lattice.is_nyquist(i))
        .map(|i| (i, (lattice.norm2(i) as f64).sqrt()))
        .filter(|&(_, r)| dyadic_piece(r, p.n, false) > 0.0)
        .collect();
    let nt = p.time_points;
    let dt = 2.0 * p.window / nt as f64;
    let dtau = 2.0 * PI / (nt as f64 * dt);
    let taus = tau_grid(nt, dt);
    let per_field: Vec<Vec<(f64, f64, f64)>> = (0..p.fields as u64)
        .into_par_iter()
        .map(|f| {
            let rows = random_band_rows(p, &modes, f);
            let input: f64 = rows
                .iter()
                .map(|r| weighted_rows_norm_sq(r, nt, p.window, p.a))
                .sum::<f64>()
                .sqrt();
            let spectra: Vec<Vec<C64>> = rows
                .into_iter()
                .map(|mut r| {
                    fft_rows(&mut r, nt, FftDirection::Forward);
                    r
                })
                .collect();
            p.l_list
                .iter()
                .map(|&l| {
                    let spec = ConeBlockSpec {
                        n: p.n,
                        r: p.r,
                        l,
                        b: p.b,
                        n_floor: false,
                        r_floor: false,
                        l_floor: false,
                    };
                    let mut out_sq = 0.0;
                    let mut near_sq = 0.0;
                    let thresh = 2.0 * l.powf(1.0 - p.delta);
                    for (spec_row, &(_, r)) in spectra.iter().zip(&modes) {
                        let mut out = spec_row.clone();
                        for (j, z) in out.iter_mut().enumerate() {
                            *z *= spec.symbol(taus[j], r, dtau, p.prefix);
                        }
                        fft_rows(&mut out, nt, FftDirection::Inverse);
                        out.iter_mut().for_each(|z| *z /= nt as f64);
                        out_sq += weighted_rows_norm_sq(&out, nt, p.window, p.a);
                        // Parseval for the unweighted near-cone part
                        near_sq += dt / nt as f64
                            * spec_row
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| (taus[*j].abs() - r).abs() <= thresh)
                                .map(|(_, z)| z.norm_sqr())
                                .sum::<f64>();
                    }
                    (out_sq.sqrt(), input, near_sq.sqrt())
                })
                .collect()
        })
        .collect();
    let rows: Vec<ConeProbeRow> = p
        .l_list
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let (e1, e2) = cone_envelope(l, p.a, p.b, p.delta);
            let mut max_ratio: f64 = 0.0;
            let mut max_plain: f64 = 0.0;
            for f in &per_field {
                let (lhs, inp, near) = f[k];
                if inp > 0.0 {
                    max_ratio = max_ratio.max(lhs / (e1 * inp + e2 * near));
                    max_plain = max_plain.max(lhs / inp);
                }
            }
            ConeProbeRow {
                l,
                max_ratio,
                max_lhs_over_input: max_plain,
                envelope_first: e1,
                envelope_second: e2,
            }
        })
        .collect();
    let small: Vec<&ConeProbeRow> = rows
        .iter()
        .filter(|r| r.l < 1.0 && r.max_ratio > 0.0)
        .collect();
    let ratio_growth_exponent = if small.len() >= 2 {
        let x: Vec<f64> = small.iter().map(|r| -(r.l.ln())).collect();
        let y: Vec<f64> = small.iter().map(|r| r.max_ratio.ln()).collect();
        crate::stats::fit_line(&x, &y).slope
    } else {
        0.0
    };
    let max_ratio = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    Ok(ConeProbeReport {
        rows,
        ratio_growth_exponent,
        max_ratio,
    })
}

// ---------------------------------------------------------------------------
// Hyperbolic Leibniz rule
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeibnizReport {
    pub samples: usize,
    pub max_constant: f64,
    /// The draw attaining the maximum: (τ₁, ξ₁, τ₂, ξ₂).
    pub worst: (f64, [f64; 2], f64, [f64; 2]),
    pub degenerate_skipped: usize,
}

/// ||τ| − |ξ||/(||τ₁| − |ξ₁|| + ||τ₂| − |ξ₂|| + min(|ξ₁|, |ξ₂|)) with
/// τ = τ₁ + τ₂, ξ = ξ₁ + ξ₂; `None` when numerator and denominator vanish.
pub fn leibniz_ratio(tau1: f64, xi1: [f64; 2], tau2: f64, xi2: [f64; 2]) -> Option<f64> {
    let n = |v: [f64; 2]| v[0].hypot(v[1]);
    let tau = tau1 + tau2;
    let xi = [xi1[0] + xi2[0], xi1[1] + xi2[1]];
    let lhs = (tau.abs() - n(xi)).abs();
    let rhs = (tau1.abs() - n(xi1)).abs() + (tau2.abs() - n(xi2)).abs() + n(xi1).min(n(xi2));
    if rhs == 0.0 {
        if lhs == 0.0 {
            None
        } else {
            Some(f64::INFINITY)
        }
    } else {
        Some(lhs / rhs)
    }
}

/// Random draws at log-uniform scales, with a third of the draws placed on or
/// near the null cones τᵢ = ±|ξᵢ| where the first two terms degenerate.
pub fn hyperbolic_leibniz_check(num_samples: usize, seed: u64) -> LeibnizReport {
    const CHUNK: usize = 1 << 14;
    let chunks = num_samples.div_ceil(CHUNK);
    let partial: Vec<(f64, (f64, [f64; 2], f64, [f64; 2]), usize)> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = aux_rng(seed, c);
            let count = CHUNK.min(num_samples - c as usize * CHUNK);
            let mut best = (0.0, (0.0, [0.0; 2], 0.0, [0.0; 2]), 0usize);
            for _ in 0..count {
                let mut xi = || {
                    let s = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
                    let th = 2.0 * PI * rng.random::<f64>();
                    [s * th.cos(), s * th.sin()]
                };
                let xi1 = xi();
                let xi2 = xi();
                let mode: u32 = rng.random_range(0..3);
                let mut tau = |x: [f64; 2]| {
                    let sgn = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let r = x[0].hypot(x[1]);
                    match mode {
                        0 => sgn * r,
                        1 => sgn * r * (1.0 + 1e-3 * (2.0 * rng.random::<f64>() - 1.0)),
                        _ => sgn * 10f64.powf(4.0 * rng.random::<f64>() - 2.0),
                    }
                };
                let t1 = tau(xi1);
                let t2 = tau(xi2);
                match leibniz_ratio(t1, xi1, t2, xi2) {
                    None => best.2 += 1,
                    Some(r) if r > best.0 => best = (r, (t1, xi1, t2, xi2), best.2),
                    _ => {}
                }
            }
            best
        })
        .collect();
    let mut out = LeibnizReport {
        samples: num_samples,
        max_constant: 0.0,
        worst: (0.0, [0.0; 2], 0.0, [0.0; 2]),
        degenerate_skipped: 0,
    };
    for (r, w, d) in partial {
        out.degenerate_skipped += d;
        if r > out.max_constant {
            out.max_constant = r;
            out.worst = w;
        }
    }
    out
}
