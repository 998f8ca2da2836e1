//! Truncated Fourier lattice on the torus (ℝ/2πℤ)², transforms, static
//! multipliers and the linear (damped) wave propagators.
//!
//! Normalisation: the orthonormal basis is e_n(x) = (2π)⁻¹ e^{in·x} and
//! û(n) = ∫ u(x) conj(e_n(x)) dx, so that u = Σ û(n) e_n and the L² norm is
//! the ℓ² norm of the coefficients.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{LabError, Result};

pub type C64 = Complex64;

// ---------------------------------------------------------------------------
// Bump functions
// ---------------------------------------------------------------------------

/// The radial cutoff χ: 1 on [0, 1/2], smooth decay on (1/2, 1), 0 beyond.
pub fn chi(r: f64) -> f64 {
    let r = r.abs();
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        let y = 2.0 * r - 1.0;
        (1.0 - 1.0 / (1.0 - y * y)).exp()
    }
}

/// Smooth even function equal to 1 on |τ| ≤ 5/4 and 0 for |τ| ≥ 8/5, built
/// from the same bump profile as [`chi`].
pub fn lp_outer(tau: f64) -> f64 {
    let a = tau.abs();
    const LO: f64 = 1.25;
    const HI: f64 = 1.6;
    if a <= LO {
        1.0
    } else if a >= HI {
        0.0
    } else {
        chi(0.5 + 0.5 * (a - LO) / (HI - LO))
    }
}

/// Dyadic Littlewood–Paley piece φ(ζ) = ϕ(|ζ|) − ϕ(2|ζ|), supported in
/// 5/8 < |ζ| < 8/5. Summing φ(ζ/K) over K ∈ 2^ℤ gives 1 for ζ ≠ 0.
pub fn lp_block(zeta: f64) -> f64 {
    let a = zeta.abs();
    lp_outer(a) - lp_outer(2.0 * a)
}

/// ⟨n⟩ = (1 + |n|²)^{1/2}.
#[inline]
pub fn japanese(norm2: f64) -> f64 {
    (1.0 + norm2).sqrt()
}

/// ⟦n⟧ = (3/4 + |n|²)^{1/2}, the oscillation frequency of the damped
/// Klein–Gordon mode.
#[inline]
pub fn kg_frequency(norm2: f64) -> f64 {
    (0.75 + norm2).sqrt()
}

/// sin(tω)/ω with the value t at ω = 0.
#[inline]
pub fn sinc_t(t: f64, omega: f64) -> f64 {
    if omega.abs() * t.abs() < 1e-8 {
        t * (1.0 - (omega * t).powi(2) / 6.0)
    } else {
        (t * omega).sin() / omega
    }
}

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

/// Square Fourier lattice {−M,…,M−1}² together with a cutoff parameter N for
/// χ_N(n) = χ(n/N). The collocation grid has 2M points per side.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrequencyLattice {
    m: usize,
    n_cutoff: f64,
}

impl FrequencyLattice {
    pub fn new(m: usize, n_cutoff: f64) -> Result<Self> {
        if !(n_cutoff.is_finite() && n_cutoff > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "cutoff N must be positive and finite, got {n_cutoff}"
            )));
        }
        if m == 0 {
            return Err(LabError::InvalidParameter(
                "lattice half-width M must be ≥ 1".into(),
            ));
        }
        let need = 2 * (n_cutoff.ceil() as usize);
        if m < need {
            return Err(LabError::Unresolved(format!(
                "M = {m} < 2⌈N⌉ = {need} for N = {n_cutoff}"
            )));
        }
        Ok(Self { m, n_cutoff })
    }

    /// The smallest admissible lattice for cutoff N, M = 2⌈N⌉.
    pub fn for_cutoff(n_cutoff: f64) -> Result<Self> {
        if !(n_cutoff.is_finite() && n_cutoff > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "cutoff N must be positive and finite, got {n_cutoff}"
            )));
        }
        Self::new(2 * (n_cutoff.ceil() as usize), n_cutoff)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_cutoff(&self) -> f64 {
        self.n_cutoff
    }

    /// Grid points per side, 2M.
    pub fn side(&self) -> usize {
        2 * self.m
    }

    /// Number of lattice modes (= number of grid points).
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.side() as f64
    }

    /// Signed frequency stored at FFT index `i` along one axis.
    #[inline]
    pub fn freq_of(&self, i: usize) -> i64 {
        if i < self.m {
            i as i64
        } else {
            i as i64 - self.side() as i64
        }
    }

    #[inline]
    fn axis_index(&self, k: i64) -> usize {
        k.rem_euclid(self.side() as i64) as usize
    }

    /// Flat index of mode n (n wrapped modulo 2M).
    #[inline]
    pub fn index(&self, n1: i64, n2: i64) -> usize {
        self.axis_index(n1) * self.side() + self.axis_index(n2)
    }

    /// Mode stored at flat index.
    #[inline]
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        let s = self.side();
        (self.freq_of(idx / s), self.freq_of(idx % s))
    }

    #[inline]
    pub fn norm2(&self, idx: usize) -> i64 {
        let (a, b) = self.mode(idx);
        a * a + b * b
    }

    /// Flat index of −n.
    #[inline]
    pub fn neg_index(&self, idx: usize) -> usize {
        let (a, b) = self.mode(idx);
        self.index(-a, -b)
    }

    /// Modes with a component equal to −M have no partner −n inside the lattice.
    #[inline]
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let (a, b) = self.mode(idx);
        let m = self.m as i64;
        a == -m || b == -m
    }

    /// χ_N(n) for the lattice's own cutoff.
    #[inline]
    pub fn cutoff_weight(&self, idx: usize) -> f64 {
        chi((self.norm2(idx) as f64).sqrt() / self.n_cutoff)
    }

    /// Grid coordinate of collocation point `idx`.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let s = self.side();
        let h = self.spacing();
        [(idx / s) as f64 * h, (idx % s) as f64 * h]
    }

    /// Indices of modes with χ_N(n) > 0, i.e. |n| < N, together with their
    /// half-lattice representatives: returns (representatives, zero mode present).
    /// A representative has n₁ > 0, or n₁ = 0 and n₂ > 0.
    pub fn active_half(&self, n: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r = n.ceil() as i64;
        let m = self.m as i64;
        for a in 0..=r.min(m - 1) {
            for b in -r.min(m - 1)..=r.min(m - 1) {
                if a == 0 && b <= 0 {
                    continue;
                }
                let n2 = (a * a + b * b) as f64;
                if n2.sqrt() < n {
                    out.push(self.index(a, b));
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Fourier coefficients on a lattice, stored in FFT order.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub lattice: FrequencyLattice,
    pub coeffs: Vec<C64>,
    /// Set when the field is known to be real in physical space.
    pub real: bool,
}

/// Real samples on the uniform collocation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField2D {
    pub lattice: FrequencyLattice,
    pub values: Vec<f64>,
}

/// Complex samples on the uniform collocation grid (e.g. the chaos e^{iβΨ}).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexField2D {
    pub lattice: FrequencyLattice,
    pub values: Vec<C64>,
}

impl RealField2D {
    pub fn from_fn(lattice: &FrequencyLattice, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..lattice.len())
            .map(|i| {
                let [x1, x2] = lattice.point(i);
                f(x1, x2)
            })
            .collect();
        Self {
            lattice: lattice.clone(),
            values,
        }
    }

    /// ∫ f dx by the trapezoid rule.
    pub fn integral(&self) -> f64 {
        let h = self.lattice.spacing();
        self.values.iter().sum::<f64>() * h * h
    }

    /// ‖f‖²_{L²} by the trapezoid rule.
    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.lattice.spacing();
        self.values.iter().map(|v| v * v).sum::<f64>() * h * h
    }
}

impl ComplexField2D {
    pub fn integral(&self) -> C64 {
        let h = self.lattice.spacing();
        self.values.iter().sum::<C64>() * (h * h)
    }
}

impl SpectralField {
    pub fn zeros(lattice: &FrequencyLattice) -> Self {
        Self {
            lattice: lattice.clone(),
            coeffs: vec![C64::new(0.0, 0.0); lattice.len()],
            real: true,
        }
    }

    /// Single exponential: coefficient `amp` at n and, for a real field,
    /// conj(amp) at −n.
    pub fn single_mode(lattice: &FrequencyLattice, n: (i64, i64), amp: C64, real: bool) -> Self {
        let mut f = Self::zeros(lattice);
        let i = lattice.index(n.0, n.1);
        f.coeffs[i] = amp;
        if real {
            let j = lattice.neg_index(i);
            if j == i {
                f.coeffs[i] = C64::new(amp.re, 0.0);
            } else {
                f.coeffs[j] = amp.conj();
            }
        }
        f.real = real;
        f
    }

    pub fn coeff(&self, n1: i64, n2: i64) -> C64 {
        self.coeffs[self.lattice.index(n1, n2)]
    }

    /// Σ |û(n)|² (= ‖u‖²_{L²} by Parseval).
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// max_n |û(−n) − conj û(n)|, the Hermitian-symmetry defect.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[self.lattice.neg_index(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Pointwise evaluation of Σ û(n) e_n(x) at an arbitrary point.
    pub fn eval_at(&self, x: [f64; 2]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            let (a, b) = self.lattice.mode(i);
            let ph = a as f64 * x[0] + b as f64 * x[1];
            acc += c * C64::from_polar(1.0, ph);
        }
        acc / (2.0 * PI)
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// Mode-wise linear combination a·self + b·other.
    pub fn axpby(&self, a: f64, other: &SpectralField, b: f64) -> Result<SpectralField> {
        if self.lattice != other.lattice {
            return Err(LabError::GridMismatch(
                "fields live on different lattices".into(),
            ));
        }
        Ok(SpectralField {
            lattice: self.lattice.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| x * a + y * b)
                .collect(),
            real: self.real && other.real,
        })
    }
}

// ---------------------------------------------------------------------------
// FFT plumbing
// ---------------------------------------------------------------------------

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, dir: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, dir))
}

/// Unnormalised 1-D FFTs over consecutive chunks of length `len`.
pub(crate) fn fft_rows(data: &mut [C64], len: usize, dir: FftDirection) {
    let f = plan(len, dir);
    f.process(data);
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// Unnormalised 2-D FFT of a square array with side `n`.
pub(crate) fn fft2(data: &mut [C64], n: usize, dir: FftDirection) {
    debug_assert_eq!(data.len(), n * n);
    fft_rows(data, n, dir);
    let mut tmp = vec![C64::new(0.0, 0.0); n * n];
    transpose(data, &mut tmp, n);
    fft_rows(&mut tmp, n, dir);
    transpose(&tmp, data, n);
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Fourier coefficients of a real grid function (trapezoid rule; exact for
/// band-limited data).
pub fn forward_transform(f: &RealField2D) -> Result<SpectralField> {
    if let Some(i) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite(format!(
            "grid value at index {i} is {}",
            f.values[i]
        )));
    }
    let mut data: Vec<C64> = f.values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let s = f.lattice.side();
    fft2(&mut data, s, FftDirection::Forward);
    let norm = 2.0 * PI / (s * s) as f64;
    for c in &mut data {
        *c *= norm;
    }
    Ok(SpectralField {
        lattice: f.lattice.clone(),
        coeffs: data,
        real: true,
    })
}

/// Fourier coefficients of a complex grid function.
pub fn forward_transform_complex(f: &ComplexField2D) -> Result<SpectralField> {
    if f.values
        .iter()
        .any(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(LabError::NonFinite("complex grid field".into()));
    }
    let mut data = f.values.clone();
    let s = f.lattice.side();
    fft2(&mut data, s, FftDirection::Forward);
    let norm = 2.0 * PI / (s * s) as f64;
    for c in &mut data {
        *c *= norm;
    }
    Ok(SpectralField {
        lattice: f.lattice.clone(),
        coeffs: data,
        real: false,
    })
}

/// Grid samples of Σ û(n) e_n (complex in general).
pub fn inverse_transform_complex(u: &SpectralField) -> ComplexField2D {
    let mut data = u.coeffs.clone();
    let s = u.lattice.side();
    fft2(&mut data, s, FftDirection::Inverse);
    let norm = 1.0 / (2.0 * PI);
    for c in &mut data {
        *c *= norm;
    }
    ComplexField2D {
        lattice: u.lattice.clone(),
        values: data,
    }
}

/// Grid samples of a real field (imaginary round-off discarded).
pub fn inverse_transform(u: &SpectralField) -> RealField2D {
    let c = inverse_transform_complex(u);
    RealField2D {
        lattice: c.lattice,
        values: c.values.into_iter().map(|z| z.re).collect(),
    }
}

// ---------------------------------------------------------------------------
// Multipliers
// ---------------------------------------------------------------------------

/// Radial Fourier multipliers on the lattice.
#[derive(Clone)]
pub enum MultiplierSpec {
    /// ⟨n⟩^s
    Bessel { s: f64 },
    /// |n|^s, with the value 0 at n = 0 for s ≠ 0.
    Abs { s: f64 },
    /// ⟦n⟧^s
    KgSymbol { s: f64 },
    /// χ(n/N)
    Cutoff { n: f64 },
    /// φ(n/K)
    LittlewoodPaley { k: f64 },
    /// Arbitrary symbol m(n₁, n₂).
    Custom(Arc<dyn Fn(i64, i64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for MultiplierSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Bessel { s } => write!(f, "Bessel(s={s})"),
            Self::Abs { s } => write!(f, "Abs(s={s})"),
            Self::KgSymbol { s } => write!(f, "KgSymbol(s={s})"),
            Self::Cutoff { n } => write!(f, "Cutoff(N={n})"),
            Self::LittlewoodPaley { k } => write!(f, "LittlewoodPaley(K={k})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl MultiplierSpec {
    pub fn symbol(&self, n1: i64, n2: i64) -> f64 {
        let n2sq = (n1 * n1 + n2 * n2) as f64;
        match self {
            Self::Bessel { s } => japanese(n2sq).powf(*s),
            Self::Abs { s } => {
                if *s == 0.0 {
                    1.0
                } else if n2sq == 0.0 {
                    0.0
                } else {
                    n2sq.sqrt().powf(*s)
                }
            }
            Self::KgSymbol { s } => kg_frequency(n2sq).powf(*s),
            Self::Cutoff { n } => chi(n2sq.sqrt() / n),
            Self::LittlewoodPaley { k } => lp_block(n2sq.sqrt() / k),
            Self::Custom(f) => f(n1, n2),
        }
    }
}

/// coeff'(n) = m(n)·coeff(n).
pub fn apply_multiplier(u: &SpectralField, m: &MultiplierSpec) -> Result<SpectralField> {
    let lat = &u.lattice;
    let mut out = u.clone();
    for (i, c) in out.coeffs.iter_mut().enumerate() {
        let (a, b) = lat.mode(i);
        let s = m.symbol(a, b);
        if !s.is_finite() {
            return Err(LabError::NonFinite(format!(
                "symbol {m:?} at n = ({a}, {b}) is {s}"
            )));
        }
        *c *= s;
    }
    Ok(out)
}

/// Π_{≤N}: multiplication by χ(n/N).
pub fn truncate(u: &SpectralField, n: f64) -> SpectralField {
    apply_multiplier(u, &MultiplierSpec::Cutoff { n }).expect("cutoff symbol is finite")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    /// sin(t|n|)/|n|
    SinOverNormWave,
    /// sin(t⟦n⟧)/⟦n⟧
    SinOverNormKg,
    /// cos(t|n|)
    CosWave,
    /// cos(t⟦n⟧)
    CosKg,
}

impl PropagatorKind {
    pub fn symbol(self, t: f64, norm2: f64, damping: bool) -> f64 {
        let damp = if damping { (-0.5 * t).exp() } else { 1.0 };
        let v = match self {
            Self::SinOverNormWave => sinc_t(t, norm2.sqrt()),
            Self::SinOverNormKg => sinc_t(t, kg_frequency(norm2)),
            Self::CosWave => (t * norm2.sqrt()).cos(),
            Self::CosKg => (t * kg_frequency(norm2)).cos(),
        };
        damp * v
    }
}

/// Mode-wise application of the (optionally damped) propagators, e.g.
/// 𝓓(t) = e^{−t/2} sin(t⟦∇⟧)/⟦∇⟧ for `SinOverNormKg` with damping.
pub fn wave_propagator_apply(
    u: &SpectralField,
    t: f64,
    kind: PropagatorKind,
    damping: bool,
) -> Result<SpectralField> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(LabError::InvalidParameter(format!(
            "propagator time must be ≥ 0, got {t}"
        )));
    }
    let mut out = u.clone();
    for (i, c) in out.coeffs.iter_mut().enumerate() {
        *c *= kind.symbol(t, u.lattice.norm2(i) as f64, damping);
    }
    Ok(out)
}
