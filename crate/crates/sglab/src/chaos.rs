//! The imaginary Gaussian multiplicative chaos Θ_N = γ_N e^{iε₀βΨ^wave_N}:
//! construction, two-point function, charge cancellation, W^{−α,∞} proxy,
//! the smeared second moment used to detect blow-up, and the smoothed
//! second moment of □^{−1/2−ε}∂P_{N₀}𝟙_{[0,1]}Θ_N.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::function_norms::box_symbol;
use crate::quad::{composite_nodes, gauss_legendre};
use crate::random_fields::{
    aux_rng, compute_renorm_constants, renorm_from_sigma, sample_gaussian_pair_indexed, sigma_sum,
    RenormConstants,
};
use crate::spectral_torus::{
    chi, fft_rows, forward_transform, forward_transform_complex, inverse_transform,
    inverse_transform_complex, japanese, lp_block, ComplexField2D, FrequencyLattice, SpectralField,
    C64,
};
use crate::stats::{mean_se, MeanSe};
use crate::stochastic_convolution::{
    ConvolutionKind, ConvolutionPath, ConvolutionStepper, ModeCovTable, TransitionCache,
};

/// Θ_N^{ε₀} sampled on the collocation grid at the path's times.
#[derive(Clone, Debug)]
pub struct ChaosSample {
    pub epsilon0: i8,
    pub beta: f64,
    pub rc: RenormConstants,
    pub times: Vec<f64>,
    pub fields: Vec<ComplexField2D>,
}

/// Pointwise γ_N e^{iε₀βΨ} of a wave-convolution path.
pub fn build_chaos(
    path: &ConvolutionPath,
    beta: f64,
    epsilon0: i8,
    rc: &RenormConstants,
) -> Result<ChaosSample> {
    if path.kind != ConvolutionKind::Wave {
        return Err(LabError::InvalidParameter(
            "the chaos is built from the wave convolution".into(),
        ));
    }
    if epsilon0 != 1 && epsilon0 != -1 {
        return Err(LabError::InvalidParameter(format!(
            "ε₀ must be ±1, got {epsilon0}"
        )));
    }
    if (rc.n - path.n).abs() > 1e-12 {
        return Err(LabError::InvalidParameter(format!(
            "renormalisation constants are for N = {} but the path has N = {}",
            rc.n, path.n
        )));
    }
    if (rc.beta2 - beta * beta).abs() > 1e-9 * (1.0 + rc.beta2) {
        return Err(LabError::InvalidParameter(
            "β does not match the renormalisation constants".into(),
        ));
    }
    let fields = path
        .fields
        .iter()
        .map(|f| {
            exp_i_field(
                &inverse_transform(f).values,
                &f.lattice,
                epsilon0 as f64 * beta,
                rc.gamma_n,
            )
        })
        .collect();
    Ok(ChaosSample {
        epsilon0,
        beta,
        rc: *rc,
        times: path.times.clone(),
        fields,
    })
}

fn exp_i_field(psi: &[f64], lattice: &FrequencyLattice, k: f64, gamma: f64) -> ComplexField2D {
    ComplexField2D {
        lattice: lattice.clone(),
        values: psi.iter().map(|&p| C64::from_polar(gamma, k * p)).collect(),
    }
}

impl ChaosSample {
    /// Θ^{−ε₀} = conj Θ^{ε₀}.
    pub fn conjugate(&self) -> ChaosSample {
        ChaosSample {
            epsilon0: -self.epsilon0,
            beta: self.beta,
            rc: self.rc,
            times: self.times.clone(),
            fields: self
                .fields
                .iter()
                .map(|f| ComplexField2D {
                    lattice: f.lattice.clone(),
                    values: f.values.iter().map(|z| z.conj()).collect(),
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Two-point function
// ---------------------------------------------------------------------------

/// A space-time point (t, x).
pub type SpaceTimePoint = (f64, [f64; 2]);

/// Γ_N between two space-time points and the two variances, from the exact sums.
fn gamma_triplet(n: f64, z1: SpaceTimePoint, z2: SpaceTimePoint) -> (f64, f64, f64) {
    let r = n.ceil() as i64;
    let maxq = (2 * r * r) as usize;
    let dx = [z1.1[0] - z2.1[0], z1.1[1] - z2.1[1]];
    let mut t12 = ModeCovTable::new(ConvolutionKind::Wave, z1.0, z2.0, maxq);
    let mut t11 = ModeCovTable::new(ConvolutionKind::Wave, z1.0, z1.0, maxq);
    let mut t22 = ModeCovTable::new(ConvolutionKind::Wave, z2.0, z2.0, maxq);
    let (mut g12, mut v1, mut v2) = (0.0, 0.0, 0.0);
    for a in -r..=r {
        for b in -r..=r {
            let q = (a * a + b * b) as usize;
            let c = chi((q as f64).sqrt() / n);
            if c == 0.0 {
                continue;
            }
            let w = c * c;
            g12 += w * t12.get(q) * (a as f64 * dx[0] + b as f64 * dx[1]).cos();
            v1 += w * t11.get(q);
            v2 += w * t22.get(q);
        }
    }
    let s = 1.0 / (4.0 * PI * PI);
    (g12 * s, v1 * s, v2 * s)
}

/// Exact E[Θ_N(z₁) conj Θ_N(z₂)] = exp(β²Γ₁₂ + β²σ_N − β²(V₁+V₂)/2).
pub fn chaos_two_point_analytic(n: f64, beta2: f64, z1: SpaceTimePoint, z2: SpaceTimePoint) -> f64 {
    let (g, v1, v2) = gamma_triplet(n, z1, z2);
    let sigma = sigma_sum(n);
    (beta2 * (g + sigma - 0.5 * (v1 + v2))).exp()
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub mc_re: f64,
    pub mc_im: f64,
    pub se_re: f64,
    pub se_im: f64,
    pub analytic: f64,
}

/// Monte Carlo estimate of E[Θ_N(z₁) conj Θ_N(z₂)] with its analytic value.
pub fn chaos_two_point(
    n: f64,
    beta: f64,
    z1: SpaceTimePoint,
    z2: SpaceTimePoint,
    samples: usize,
    seed: u64,
) -> Result<TwoPointEstimate> {
    for z in [z1, z2] {
        if !(0.0..=1.0).contains(&z.0) {
            return Err(LabError::InvalidParameter(format!(
                "time {} outside [0, 1]",
                z.0
            )));
        }
    }
    let lattice = FrequencyLattice::for_cutoff(n)?;
    let rc = compute_renorm_constants(&lattice, n, beta * beta)?;
    let (ta, pa, tb, pb, swap) = if z1.0 <= z2.0 {
        (z1.0, z1.1, z2.0, z2.1, false)
    } else {
        (z2.0, z2.1, z1.0, z1.1, true)
    };
    let cache = TransitionCache::default();
    let vals: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let data = sample_gaussian_pair_indexed(&lattice, seed, s, Some(n));
            let mut st = ConvolutionStepper::with_cache(&data, seed, s, n, true, cache.clone())
                .expect("consistent lattice");
            if ta > 0.0 {
                st.step(ta);
            }
            let a = st.eval_points(ConvolutionKind::Wave, &[pa])[0];
            if tb > ta {
                st.step(tb - ta);
            }
            let b = st.eval_points(ConvolutionKind::Wave, &[pb])[0];
            let (p1, p2) = if swap { (b, a) } else { (a, b) };
            let z = C64::from_polar(rc.gamma_n * rc.gamma_n, beta * (p1 - p2));
            (z.re, z.im)
        })
        .collect();
    let re: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let im: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let mr = mean_se(&re);
    let mi = mean_se(&im);
    Ok(TwoPointEstimate {
        mc_re: mr.mean,
        mc_im: mi.mean,
        se_re: mr.se,
        se_im: mi.se,
        analytic: chaos_two_point_analytic(n, beta * beta, z1, z2),
    })
}

// ---------------------------------------------------------------------------
// Charge cancellation
// ---------------------------------------------------------------------------

/// 2p charges z_1, …, z_{2p} (stored 0-based); z_j carries ε_j = +1 for even j
/// and −1 for odd j.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChargeConfiguration {
    pub points: Vec<SpaceTimePoint>,
}

impl ChargeConfiguration {
    pub fn new(points: Vec<SpaceTimePoint>) -> Result<Self> {
        if points.is_empty() || points.len() % 2 != 0 {
            return Err(LabError::InvalidParameter(
                "need an even, non-zero number of charges".into(),
            ));
        }
        if points.len() > 8 {
            return Err(LabError::InvalidParameter(
                "at most p = 4 charge pairs".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Sign of the charge stored at 0-based position k (i.e. of z_{k+1}).
    pub fn sign(&self, k: usize) -> i32 {
        if (k + 1) % 2 == 0 {
            1
        } else {
            -1
        }
    }

    pub fn pairs(&self) -> usize {
        self.points.len() / 2
    }

    /// Uniform random configuration in [0,1]×𝕋².
    pub fn random(p: usize, seed: u64, sample: u64) -> Result<Self> {
        use rand::Rng;
        let mut rng = aux_rng(seed, sample);
        let pts = (0..2 * p)
            .map(|_| {
                (
                    rng.random::<f64>(),
                    [
                        rng.random::<f64>() * 2.0 * PI,
                        rng.random::<f64>() * 2.0 * PI,
                    ],
                )
            })
            .collect();
        Self::new(pts)
    }
}

/// Distance on 𝕋² = (ℝ/2πℤ)².
pub fn torus_norm(x: [f64; 2]) -> f64 {
    let w = |v: f64| {
        let r = v.rem_euclid(2.0 * PI);
        r.min(2.0 * PI - r)
    };
    w(x[0]).hypot(w(x[1]))
}

/// 𝒥_N(t, x) = |t| + |x|_𝕋² + N⁻¹.
pub fn charge_potential(n: f64, dt: f64, dx: [f64; 2]) -> f64 {
    dt.abs() + torus_norm(dx) + 1.0 / n
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChargeReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; p], &mut out);
    out
}

/// LHS = ∏_{j<k} 𝒥_N(z_j − z_k)^{ε_jε_kλ} against
/// RHS = max_σ ∏_j 𝒥_N(z_{2j} − z_{2σ(j)−1})^{−λ}.
pub fn charge_bound_check(cfg: &ChargeConfiguration, n: f64, lambda: f64) -> Result<ChargeReport> {
    if !(n > 0.0 && lambda.is_finite()) {
        return Err(LabError::InvalidParameter(
            "N must be positive and λ finite".into(),
        ));
    }
    let pts = &cfg.points;
    let pot = |a: usize, b: usize| {
        let (ta, xa) = pts[a];
        let (tb, xb) = pts[b];
        charge_potential(n, ta - tb, [xa[0] - xb[0], xa[1] - xb[1]]).ln()
    };
    let mut log_lhs = 0.0;
    for j in 0..pts.len() {
        for k in (j + 1)..pts.len() {
            log_lhs += (cfg.sign(j) * cfg.sign(k)) as f64 * lambda * pot(j, k);
        }
    }
    let p = cfg.pairs();
    // z_{2j} ↔ 0-based 2j−1, z_{2σ(j)−1} ↔ 0-based 2σ(j)−2
    let log_rhs = permutations(p)
        .into_iter()
        .map(|sigma| {
            (0..p)
                .map(|j| -lambda * pot(2 * j + 1, 2 * sigma[j]))
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ChargeReport {
        lhs: log_lhs.exp(),
        rhs: log_rhs.exp(),
        ratio: (log_lhs - log_rhs).exp(),
    })
}

// ---------------------------------------------------------------------------
// W^{−α,∞} proxy
// ---------------------------------------------------------------------------

fn lq_average(vals: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        vals.iter().cloned().fold(0.0, f64::max)
    } else {
        (vals.iter().map(|v| v.powf(q)).sum::<f64>() / vals.len() as f64).powf(1.0 / q)
    }
}

fn bessel_sup(field: &ComplexField2D, alpha: f64) -> Result<f64> {
    let mut s = forward_transform_complex(field)?;
    apply_bessel_inplace(&mut s, -alpha);
    Ok(inverse_transform_complex(&s)
        .values
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn apply_bessel_inplace(s: &mut SpectralField, power: f64) {
    let lat = s.lattice.clone();
    for (i, c) in s.coeffs.iter_mut().enumerate() {
        *c *= japanese(lat.norm2(i) as f64).powf(power);
    }
}

/// Discrete ‖Θ‖_{L^q_t W^{−α,∞}_x}: grid maximum of |⟨∇⟩^{−α}Θ(t)|,
/// q-averaged (normalised) over the time grid.
pub fn chaos_besov_norm(theta: &ChaosSample, alpha: f64, p_time: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(LabError::InvalidParameter(format!(
            "α must be positive, got {alpha}"
        )));
    }
    if !(p_time >= 1.0) {
        return Err(LabError::InvalidParameter(format!(
            "time exponent must be ≥ 1, got {p_time}"
        )));
    }
    let sups = theta
        .fields
        .iter()
        .map(|f| bessel_sup(f, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(lq_average(&sups, p_time))
}

/// Monte Carlo mean of the W^{−α,∞} proxy for several α at once.
pub fn besov_proxy_mc(
    n: f64,
    beta2: f64,
    alphas: &[f64],
    t_grid: &[f64],
    p_time: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<MeanSe>> {
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(LabError::InvalidParameter("α must be positive".into()));
    }
    check_times(t_grid)?;
    let lattice = FrequencyLattice::for_cutoff(n)?;
    let rc = compute_renorm_constants(&lattice, n, beta2)?;
    let beta = beta2.sqrt();
    let cache = TransitionCache::default();
    let per: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let data = sample_gaussian_pair_indexed(&lattice, seed, s, Some(n));
            let mut st = ConvolutionStepper::with_cache(&data, seed, s, n, true, cache.clone())
                .expect("consistent lattice");
            let mut sups = vec![Vec::with_capacity(t_grid.len()); alphas.len()];
            for &t in t_grid {
                let h = t - st.time();
                if h > 0.0 {
                    st.step(h);
                }
                let psi = inverse_transform(&st.snapshot(ConvolutionKind::Wave, false));
                let th = exp_i_field(&psi.values, &lattice, beta, rc.gamma_n);
                let spec = forward_transform_complex(&th).expect("finite chaos");
                for (k, &a) in alphas.iter().enumerate() {
                    let mut s2 = spec.clone();
                    apply_bessel_inplace(&mut s2, -a);
                    let m = inverse_transform_complex(&s2)
                        .values
                        .iter()
                        .map(|z| z.norm())
                        .fold(0.0, f64::max);
                    sups[k].push(m);
                }
            }
            sups.iter().map(|v| lq_average(v, p_time)).collect()
        })
        .collect();
    Ok((0..alphas.len())
        .map(|k| mean_se(&per.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect())
}

/// Exact E|⟨∇⟩^{−α}Θ_N(t, x)|² for the chaos sampled on the collocation grid
/// refined `oversample` times (1 matches the Monte Carlo fields exactly).
///
/// The covariance K(y) = exp(β²Γ_N(t,t,y) + β²σ_N − β²V(t)) is tabulated on
/// the grid and diagonalised by the FFT; the answer is Σ ⟨n⟩^{−2α} K̂(n)/2π.
pub fn bessel_smoothed_variance(
    n: f64,
    beta2: f64,
    alpha: f64,
    t: f64,
    oversample: usize,
) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(LabError::InvalidParameter(format!(
            "α must be ≥ 0, got {alpha}"
        )));
    }
    let base = FrequencyLattice::for_cutoff(n)?;
    let grid = FrequencyLattice::new(base.m() * oversample.max(1), n)?;
    let r = n.ceil() as i64;
    let mut tab = ModeCovTable::new(ConvolutionKind::Wave, t, t, (2 * r * r) as usize);
    let mut g = SpectralField::zeros(&grid);
    for a1 in -r..=r {
        for a2 in -r..=r {
            let q = (a1 * a1 + a2 * a2) as usize;
            let c = chi((q as f64).sqrt() / n);
            if c > 0.0 {
                g.coeffs[grid.index(a1, a2)] = C64::new(c * c * tab.get(q) / (2.0 * PI), 0.0);
            }
        }
    }
    let mut k = inverse_transform(&g);
    let shift = beta2 * (sigma_sum(n) - variance_sum(t, n));
    for v in k.values.iter_mut() {
        *v = (beta2 * *v + shift).exp();
    }
    let spec = forward_transform(&k)?;
    let total: f64 = spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| japanese(grid.norm2(i) as f64).powf(-2.0 * alpha) * c.re)
        .sum();
    Ok(total / (2.0 * PI))
}

fn check_times(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid[0] < 0.0 {
        return Err(LabError::InvalidParameter(
            "time grid must be non-empty, ≥ 0 and increasing".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Smeared second moment (blow-up probe)
// ---------------------------------------------------------------------------

/// Test function φ(t, x) = a(t)·(1 + c cos x₁) with a a smooth bump
/// supported in (t_lo, t_hi) ⊂ (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub t_lo: f64,
    pub t_hi: f64,
    pub cos_amplitude: f64,
    /// Overall amplitude; 0 gives the zero test function.
    pub amplitude: f64,
}

impl Default for TestFunction {
    fn default() -> Self {
        Self {
            t_lo: 0.1,
            t_hi: 0.9,
            cos_amplitude: 0.5,
            amplitude: 1.0,
        }
    }
}

impl TestFunction {
    pub fn time_profile(&self, t: f64) -> f64 {
        let mid = 0.5 * (self.t_lo + self.t_hi);
        let half = 0.5 * (self.t_hi - self.t_lo);
        self.amplitude
            * chi(0.5 + 0.5 * ((t - mid) / half).abs())
            * if (t - mid).abs() < half { 1.0 } else { 0.0 }
    }

    /// Spatial autocorrelation ∫ b(x + y) b(x) dx of b = 1 + c cos x₁.
    pub fn spatial_autocorrelation(&self, y: [f64; 2]) -> f64 {
        4.0 * PI * PI * (1.0 + 0.5 * self.cos_amplitude * self.cos_amplitude * y[0].cos())
    }

    fn validate(&self) -> Result<()> {
        if !(0.0 < self.t_lo && self.t_lo < self.t_hi && self.t_hi < 1.0) {
            return Err(LabError::InvalidParameter(
                "test function support must lie inside (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the blow-up probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupRow {
    pub beta2: f64,
    pub n: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupSeries {
    pub beta2: f64,
    pub values: Vec<f64>,
    /// value(2N)/value(N) for consecutive entries of the N list.
    pub ratios: Vec<f64>,
    /// Relative increment over the last doubling.
    pub last_increment: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupReport {
    pub n_list: Vec<f64>,
    pub rows: Vec<BlowupRow>,
    pub series: Vec<BlowupSeries>,
}

/// E|∫φΘ_N|² for each (β², N) from the exact Γ_N: a graded quadrature in
/// the time difference, Gauss–Legendre in the mean time, and a spatial
/// trapezoid rule on a grid `oversample` times finer than the lattice grid.
pub fn blowup_probe(
    beta2_list: &[f64],
    n_list: &[f64],
    test_fn: &TestFunction,
) -> Result<BlowupReport> {
    blowup_probe_with(beta2_list, n_list, test_fn, 2)
}

pub fn blowup_probe_with(
    beta2_list: &[f64],
    n_list: &[f64],
    test_fn: &TestFunction,
    oversample: usize,
) -> Result<BlowupReport> {
    test_fn.validate()?;
    let mut rows = Vec::new();
    let mut table = vec![vec![0.0; n_list.len()]; beta2_list.len()];
    for (j, &n) in n_list.iter().enumerate() {
        let vals = smeared_second_moment(beta2_list, n, test_fn, oversample)?;
        for (i, &b2) in beta2_list.iter().enumerate() {
            table[i][j] = vals[i];
            rows.push(BlowupRow {
                beta2: b2,
                n,
                value: vals[i],
            });
        }
    }
    let series = beta2_list
        .iter()
        .zip(&table)
        .map(|(&beta2, values)| {
            let ratios: Vec<f64> = values.windows(2).map(|w| w[1] / w[0]).collect();
            let last_increment = ratios.last().map(|r| (r - 1.0).abs()).unwrap_or(f64::NAN);
            BlowupSeries {
                beta2,
                values: values.clone(),
                ratios,
                last_increment,
            }
        })
        .collect();
    Ok(BlowupReport {
        n_list: n_list.to_vec(),
        rows,
        series,
    })
}

fn smeared_second_moment(
    beta2_list: &[f64],
    n: f64,
    phi: &TestFunction,
    oversample: usize,
) -> Result<Vec<f64>> {
    if phi.amplitude == 0.0 {
        return Ok(vec![0.0; beta2_list.len()]);
    }
    let base = FrequencyLattice::for_cutoff(n)?;
    let fine = FrequencyLattice::new(base.m() * oversample.max(1), n)?;
    let sigma = sigma_sum(n);
    let len = phi.t_hi - phi.t_lo;
    // graded nodes for the time difference d ∈ (0, len]
    let mut d_nodes: Vec<(f64, f64)> = Vec::new();
    let (gx, gw) = gauss_legendre(6);
    let mut hi = len;
    let floor = 1e-3 / n;
    while hi > floor {
        let lo = (hi * 0.5).max(0.0);
        for (x, w) in gx.iter().zip(&gw) {
            d_nodes.push((lo + 0.5 * (hi - lo) * (x + 1.0), 0.5 * (hi - lo) * w));
        }
        hi = lo;
    }
    for (x, w) in gx.iter().zip(&gw) {
        d_nodes.push((0.5 * hi * (x + 1.0), 0.5 * hi * w));
    }
    let grid_auto: Vec<f64> = (0..fine.len())
        .map(|i| phi.spatial_autocorrelation(fine.point(i)))
        .collect();
    let h = fine.spacing();
    let r = n.ceil() as i64;
    let maxq = (2 * r * r) as usize;
    let cells: Vec<(f64, f64)> = d_nodes.clone();
    let contributions: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(d, wd)| {
            // mean-time nodes s ∈ (t_lo + d/2, t_hi − d/2)
            let s_nodes = composite_nodes(phi.t_lo + 0.5 * d, phi.t_hi - 0.5 * d, 2, 8);
            let mut acc = vec![0.0; beta2_list.len()];
            for (s, ws) in s_nodes {
                let t1 = s + 0.5 * d;
                let t2 = s - 0.5 * d;
                let a = phi.time_profile(t1) * phi.time_profile(t2);
                if a == 0.0 {
                    continue;
                }
                let mut c12 = ModeCovTable::new(ConvolutionKind::Wave, t1, t2, maxq);
                let v1 = variance_sum(t1, n);
                let v2 = variance_sum(t2, n);
                let mut g = SpectralField::zeros(&fine);
                for a1 in -r..=r {
                    for a2 in -r..=r {
                        let q = (a1 * a1 + a2 * a2) as usize;
                        let c = chi((q as f64).sqrt() / n);
                        if c == 0.0 {
                            continue;
                        }
                        g.coeffs[fine.index(a1, a2)] =
                            C64::new(c * c * c12.get(q) / (2.0 * PI), 0.0);
                    }
                }
                let gamma = inverse_transform(&g);
                for (k, &b2) in beta2_list.iter().enumerate() {
                    let shift = b2 * (sigma - 0.5 * (v1 + v2));
                    let integral: f64 = gamma
                        .values
                        .iter()
                        .zip(&grid_auto)
                        .map(|(gv, au)| (b2 * gv + shift).exp() * au)
                        .sum::<f64>()
                        * h
                        * h;
                    acc[k] += 2.0 * wd * ws * a * integral;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; beta2_list.len()];
    for c in contributions {
        for k in 0..total.len() {
            total[k] += c[k];
        }
    }
    Ok(total)
}

/// V(t) = Γ_N(t, t, 0).
pub fn variance_sum(t: f64, n: f64) -> f64 {
    let r = n.ceil() as i64;
    let mut tab = ModeCovTable::new(ConvolutionKind::Wave, t, t, (2 * r * r) as usize);
    let mut v = 0.0;
    for a in -r..=r {
        for b in -r..=r {
            let q = (a * a + b * b) as usize;
            let c = chi((q as f64).sqrt() / n);
            if c > 0.0 {
                v += c * c * tab.get(q);
            }
        }
    }
    v / (4.0 * PI * PI)
}

// ---------------------------------------------------------------------------
// Smoothed second moment
// ---------------------------------------------------------------------------

/// Parameters of the smoothed moment computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub n: f64,
    pub beta2: f64,
    /// Evaluation time.
    pub t: f64,
    /// Smoothing gap: the multiplier is □^{−1/2−ε}.
    pub epsilon: f64,
    /// Half-width T of the temporal window [−T, T).
    pub window: f64,
    /// Number of temporal grid points (power of two recommended).
    pub time_points: usize,
    /// Derivative direction ℓ ∈ {1, 2}.
    pub direction: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            n: 128.0,
            beta2: 2.0 * PI,
            t: 0.5,
            epsilon: 0.05,
            window: 4.0,
            time_points: 1024,
            direction: 1,
            samples: 32,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub n0: f64,
    pub smoothed: MeanSe,
    pub unsmoothed: MeanSe,
    /// Number of exact cone hits |τ| = |n| whose symbol was floored.
    pub floored_hits: usize,
}

/// E|(□^{−1/2−ε}∂_{x^ℓ}P_{N₀}𝟙_{[0,1]}Θ_N)(t,x)|² for one N₀.
pub fn smoothing_moment(params: &SmoothingParams, n0: f64) -> Result<SmoothingRow> {
    Ok(smoothing_moment_scan(params, &[n0])?.remove(0))
}

/// The smoothed moment and its unsmoothed comparator E|∂_{x^ℓ}P_{N₀}Θ_N(t,x)|²
/// for several N₀ from one set of samples. The expectation is translation
/// invariant in x, so each sample contributes its spatial average (Parseval).
pub fn smoothing_moment_scan(
    params: &SmoothingParams,
    n0_list: &[f64],
) -> Result<Vec<SmoothingRow>> {
    let p = params;
    let lattice = FrequencyLattice::for_cutoff(p.n)?;
    for &n0 in n0_list {
        if !(n0 > 0.0) || 1.6 * n0 >= lattice.m() as f64 {
            return Err(LabError::Unresolved(format!(
                "P_{{N₀}} with N₀ = {n0} exceeds the lattice (M = {})",
                lattice.m()
            )));
        }
    }
    if !(0.0..=1.0).contains(&p.t) || p.direction == 0 || p.direction > 2 || p.time_points < 8 {
        return Err(LabError::InvalidParameter(
            "need t ∈ [0,1], ℓ ∈ {1,2}, ≥ 8 time points".into(),
        ));
    }
    if p.window < 1.0 {
        return Err(LabError::InvalidParameter(
            "temporal window must contain [0, 1]".into(),
        ));
    }
    let rc = compute_renorm_constants(&lattice, p.n, p.beta2)?;
    let beta = p.beta2.sqrt();
    let nt = p.time_points;
    let dt = 2.0 * p.window / nt as f64;
    // time slices t_k = −T + k dt inside [0, 1]
    let k0 = (p.window / dt).round() as usize;
    let k1 = ((p.window + 1.0) / dt + 1e-9).floor() as usize;
    let k_eval = ((p.window + p.t) / dt).round() as usize;
    let b = -0.5 - p.epsilon;
    let dtau = 2.0 * PI / (nt as f64 * dt);
    let n0_max = n0_list.iter().cloned().fold(0.0, f64::max);
    let band: Vec<usize> = (0..lattice.len())
        .filter(|&i| {
            let r = (lattice.norm2(i) as f64).sqrt();
            n0_list.iter().any(|&n0| lp_block(r / n0) > 0.0) && r < 1.6 * n0_max
        })
        .collect();
    let taus: Vec<f64> = (0..nt)
        .map(|k| {
            dtau * if k < nt / 2 {
                k as f64
            } else {
                k as f64 - nt as f64
            }
        })
        .collect();
    let mut floored_hits = 0usize;
    for &i in &band {
        let r = (lattice.norm2(i) as f64).sqrt();
        floored_hits += taus
            .iter()
            .filter(|&&tau| (tau.abs() - r).abs() < 1e-12)
            .count();
    }
    let dir = p.direction;
    let cache = TransitionCache::default();
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..p.samples as u64)
        .into_par_iter()
        .map(|s| {
            let data = sample_gaussian_pair_indexed(&lattice, p.seed, s, Some(p.n));
            let mut st = ConvolutionStepper::with_cache(&data, p.seed, s, p.n, true, cache.clone())
                .expect("consistent lattice");
            // band coefficients of Θ at each slice in [0, 1]
            let mut slices: Vec<Vec<C64>> = Vec::with_capacity(k1 - k0 + 1);
            for k in k0..=k1 {
                let t = k as f64 * dt - p.window;
                let h = t - st.time();
                if h > 1e-14 {
                    st.step(h);
                }
                let psi = inverse_transform(&st.snapshot(ConvolutionKind::Wave, false));
                let th = exp_i_field(&psi.values, &lattice, beta, rc.gamma_n);
                let spec = forward_transform_complex(&th).expect("finite chaos");
                slices.push(band.iter().map(|&i| spec.coeffs[i]).collect());
            }
            let mut smoothed = vec![0.0; n0_list.len()];
            let mut unsmoothed = vec![0.0; n0_list.len()];
            let mut buf = vec![C64::new(0.0, 0.0); nt];
            for (bi, &i) in band.iter().enumerate() {
                let (a1, a2) = lattice.mode(i);
                let nl = if dir == 1 { a1 } else { a2 } as f64;
                let r = (lattice.norm2(i) as f64).sqrt();
                // unsmoothed: value at the evaluation slice directly (inside [0,1])
                let at_eval = slices[k_eval - k0][bi];
                for (j, &n0) in n0_list.iter().enumerate() {
                    let w = lp_block(r / n0);
                    unsmoothed[j] += (w * nl).powi(2) * at_eval.norm_sqr();
                }
                // temporal transform of the windowed sequence
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for k in k0..=k1 {
                    buf[k] = slices[k - k0][bi];
                }
                fft_rows(&mut buf, nt, rustfft::FftDirection::Forward);
                // phase of t_k = −T + k dt is absorbed consistently by the inverse
                for (kk, z) in buf.iter_mut().enumerate() {
                    *z *= box_symbol(taus[kk], r, b, dtau);
                }
                // inverse transform evaluated only at k_eval
                let mut val = C64::new(0.0, 0.0);
                for (kk, z) in buf.iter().enumerate() {
                    let ph = 2.0 * PI * (kk as f64) * (k_eval as f64) / nt as f64;
                    val += z * C64::from_polar(1.0, ph);
                }
                val /= nt as f64;
                for (j, &n0) in n0_list.iter().enumerate() {
                    let w = lp_block(r / n0);
                    smoothed[j] += (w * nl).powi(2) * val.norm_sqr();
                }
            }
            let norm = 1.0 / (4.0 * PI * PI);
            (
                smoothed.iter().map(|v| v * norm).collect(),
                unsmoothed.iter().map(|v| v * norm).collect(),
            )
        })
        .collect();
    Ok(n0_list
        .iter()
        .enumerate()
        .map(|(j, &n0)| SmoothingRow {
            n0,
            smoothed: mean_se(&per_sample.iter().map(|v| v.0[j]).collect::<Vec<_>>()),
            unsmoothed: mean_se(&per_sample.iter().map(|v| v.1[j]).collect::<Vec<_>>()),
            floored_hits,
        })
        .collect())
}

/// Renormalisation constants consistent with [`sigma_sum`] without a lattice.
pub fn renorm_for(n: f64, beta2: f64) -> Result<RenormConstants> {
    renorm_from_sigma(n, beta2, sigma_sum(n))
}
