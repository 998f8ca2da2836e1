//! The experiment registry. Each experiment reads its typed parameters,
//! validates them before any compute, calls into the library and turns the
//! result into metrics (with pass flags), CSV series and structured details.

use std::f64::consts::PI;

use serde::Deserialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::report::{Metric, Series};
use crate::chaos::{
    bessel_smoothed_variance, besov_proxy_mc, blowup_probe_with, chaos_two_point,
    chaos_two_point_analytic, charge_bound_check, smoothing_moment_scan, ChargeConfiguration,
    SmoothingParams, TestFunction,
};
use crate::dynamics::{
    dt_max, invariance_experiment, picard_consistency, sample_gibbs_ensemble, InvarianceReport,
    ObservableSet,
};
use crate::error::{LabError, Result};
use crate::function_norms::{hyperbolic_leibniz_check, weighted_cone_probe, ConePrefix, ConeProbeParams};
use crate::kernel_lab::{
    default_probe_grid, singular_integral, smoothed_singularity_check, Lemma, LemmaParams,
    SingularIntegral,
};
use crate::random_fields::{compute_renorm_constants, compute_sigma_n};
use crate::stats::{fit_line, fit_line_weighted, fit_power};
use crate::stochastic_convolution::{covariance_log_law, variance_identity_mc};

/// What an experiment hands back to the runner.
pub(crate) struct Outcome {
    pub metrics: Vec<Metric>,
    pub series: Vec<Series>,
    pub details: Value,
    pub seeds: Vec<u64>,
}

pub struct ExperimentDef {
    pub name: &'static str,
    pub summary: &'static str,
    /// The property the experiment verifies.
    pub checks: &'static str,
    /// Common config fields the experiment reads (besides `mc.seed`, which
    /// is always accepted); any other non-null common field is rejected.
    pub uses: &'static [&'static str],
    pub default_config: &'static str,
    pub(crate) run: fn(&ExperimentConfig) -> Result<Outcome>,
}

macro_rules! bundled {
    ($name:literal) => {
        include_str!(concat!("../../configs/", $name, ".json"))
    };
}

static REGISTRY: [ExperimentDef; 14] = [
    ExperimentDef {
        name: "sigma-scaling",
        summary: "σ_N against log N on dyadic cutoffs",
        checks: "σ_N = (1/2π) log N + O(1): fitted slope within tolerance of 1/2π",
        uses: &["lattice.N", "lattice.M"],
        default_config: bundled!("sigma-scaling"),
        run: sigma_scaling,
    },
    ExperimentDef {
        name: "variance-identity",
        summary: "Monte Carlo E[Ψ^KG_N(t,x)²] against σ_N",
        checks: "the stationary damped Klein–Gordon convolution has variance σ_N at every (t, x)",
        uses: &["lattice.N", "mc.samples"],
        default_config: bundled!("variance-identity"),
        run: variance_identity,
    },
    ExperimentDef {
        name: "covariance-log-law",
        summary: "Γ_N + (1/2π)log(|t₁−t₂| + |x| + 1/N) over a probe grid",
        checks: "the wave-convolution covariance is logarithmic with an N-uniform constant",
        uses: &["lattice.N"],
        default_config: bundled!("covariance-log-law"),
        run: covariance_log_law_exp,
    },
    ExperimentDef {
        name: "chaos-twopoint",
        summary: "decay exponent of the imaginary-chaos two-point function",
        checks: "E[Θ_N(z₁)Θ̄_N(z₂)] ∼ |z₁ − z₂|^{−β²/2π}, with a Monte Carlo cross-check",
        uses: &["lattice.N", "model.beta2", "mc.samples"],
        default_config: bundled!("chaos-twopoint"),
        run: chaos_twopoint,
    },
    ExperimentDef {
        name: "chaos-regularity",
        summary: "negative-regularity proxy norm of Θ_N on both sides of β²/4π",
        checks: "Θ_N is bounded in W^{−α,∞} for α above β²/4π and grows for α below",
        uses: &["lattice.N", "model.beta2", "mc.samples"],
        default_config: bundled!("chaos-regularity"),
        run: chaos_regularity,
    },
    ExperimentDef {
        name: "blowup-probe",
        summary: "E|∫φΘ_N|² against N from the exact covariance",
        checks: "the smeared chaos stabilises below β² = 6π and fails to converge at β² = 6π",
        uses: &["lattice.N", "model.beta2"],
        default_config: bundled!("blowup-probe"),
        run: blowup,
    },
    ExperimentDef {
        name: "smoothing-moment",
        summary: "second moment of □^{−1/2−ε}∂P_{N₀}Θ_N against N₀",
        checks: "the wave-smoothed chaos grows like N₀^{β²/2π+ε}, the unsmoothed like N₀^{β²/2π+2}",
        uses: &["lattice.N", "model.beta2", "mc.samples", "time.window"],
        default_config: bundled!("smoothing-moment"),
        run: smoothing_moment_exp,
    },
    ExperimentDef {
        name: "charge-bound",
        summary: "charge-cancellation ratio over random configurations",
        checks: "the product over all charge pairs is dominated by the best dipole pairing, uniformly in p",
        uses: &["lattice.N", "model.beta2", "mc.samples"],
        default_config: bundled!("charge-bound"),
        run: charge_bound,
    },
    ExperimentDef {
        name: "cone-weighted-probe",
        summary: "cone-block multipliers on ⟨t⟩^a-weighted L² against their envelope",
        checks: "cone-localised multipliers map L²(⟨t⟩^a dt dx) into itself with the stated L-dependence",
        uses: &["mc.samples", "time.window"],
        default_config: bundled!("cone-weighted-probe"),
        run: cone_probe,
    },
    ExperimentDef {
        name: "leibniz-check",
        summary: "largest constant in the hyperbolic Leibniz inequality",
        checks: "||τ|−|ξ|| ≤ C(||τ₁|−|ξ₁|| + ||τ₂|−|ξ₂|| + min(|ξ₁|,|ξ₂|)) with a small C",
        uses: &["mc.samples"],
        default_config: bundled!("leibniz-check"),
        run: leibniz,
    },
    ExperimentDef {
        name: "kernel-bounds",
        summary: "smoothed convolution kernels against their singular envelopes",
        checks: "mollified elliptic, Green and light-cone kernels obey min{N^γ, dist^{−γ}} bounds uniformly in N",
        uses: &["lattice.N"],
        default_config: bundled!("kernel-bounds"),
        run: kernel_bounds,
    },
    ExperimentDef {
        name: "singular-integrals",
        summary: "⟨t⟩-decay of the iterated light-cone integrals 𝕀^±",
        checks: "𝕀^±(t) decays like ⟨t⟩^{−2−4b}",
        uses: &["mc.samples"],
        default_config: bundled!("singular-integrals"),
        run: singular_integrals,
    },
    ExperimentDef {
        name: "invariance",
        summary: "weighted Gibbs ensemble evolved by the truncated damped flow",
        checks: "the truncated Gibbs measure is invariant under the truncated dynamics",
        uses: &[
            "lattice.N",
            "lattice.M",
            "model.beta2",
            "model.gamma",
            "mc.samples",
            "time.dt",
            "time.horizon",
        ],
        default_config: bundled!("invariance"),
        run: invariance,
    },
    ExperimentDef {
        name: "picard-consistency",
        summary: "direct flow against Ψ^KG + Picard remainder with shared noise",
        checks: "the mild remainder formulation reproduces the truncated flow",
        uses: &[
            "lattice.N",
            "model.beta2",
            "model.gamma",
            "time.dt",
            "time.horizon",
        ],
        default_config: bundled!("picard-consistency"),
        run: picard,
    },
];

/// All registered experiments (registration order).
pub fn registry() -> &'static [ExperimentDef] {
    &REGISTRY
}

/// Reject common fields the experiment does not read, so a config cannot
/// silently carry parameters that have no effect.
fn check_uses(cfg: &ExperimentConfig, uses: &[&str]) -> Result<()> {
    let present = [
        ("lattice.M", cfg.lattice.m.is_some()),
        ("lattice.N", cfg.lattice.n.is_some()),
        ("model.beta2", cfg.model.beta2.is_some()),
        ("model.gamma", cfg.model.gamma.is_some()),
        ("mc.samples", cfg.mc.samples.is_some()),
        ("time.dt", cfg.time.dt.is_some()),
        ("time.horizon", cfg.time.horizon.is_some()),
        ("time.window", cfg.time.window.is_some()),
    ];
    let unused: Vec<(&str, bool)> = present
        .iter()
        .map(|&(name, p)| (name, p && !uses.contains(&name)))
        .collect();
    cfg.reject(&unused)?;
    if !uses.contains(&"lattice.M") {
        cfg.check_default_m()?;
    }
    Ok(())
}

fn prepare<P: for<'de> Deserialize<'de>>(cfg: &ExperimentConfig, name: &str) -> Result<P> {
    let def = REGISTRY
        .iter()
        .find(|d| d.name == name)
        .expect("registered experiment");
    check_uses(cfg, def.uses)?;
    cfg.params()
}

fn invalid(field: &str, why: impl std::fmt::Display) -> LabError {
    LabError::Config(format!("field `{field}`: {why}"))
}

fn outcome(metrics: Vec<Metric>, series: Vec<Series>, details: Value, seeds: Vec<u64>) -> Outcome {
    Outcome {
        metrics,
        series,
        details,
        seeds,
    }
}

fn fmt_n(n: f64) -> String {
    if n.fract() == 0.0 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn fmt_beta2(b2: f64) -> String {
    let k = b2 / PI;
    if (k - k.round()).abs() < 1e-12 {
        format!("{}pi", k.round() as i64)
    } else {
        format!("{b2}")
    }
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SigmaParams {
    /// Allowed relative deviation of the fitted slope from 1/2π.
    slope_rel_tol: f64,
}

fn sigma_scaling(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: SigmaParams = prepare(cfg, "sigma-scaling")?;
    let ns = cfg.n_list()?;
    if ns.len() < 2 {
        return Err(invalid("lattice.N", "need at least two cutoffs for a slope"));
    }
    let mut sig = Vec::new();
    let mut series = Series::new("sigma", &["N", "sigma_N", "sigma_N_minus_log_term"]);
    for &n in &ns {
        let lat = cfg.lattice_for(n)?;
        let s = compute_sigma_n(&lat, n)?;
        series.push(vec![json!(n), json!(s), json!(s - n.ln() / (2.0 * PI))]);
        sig.push(s);
    }
    let logs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let fit = fit_line(&logs, &sig);
    let target = 1.0 / (2.0 * PI);
    let ratio = fit.slope / target;
    let metrics = vec![
        Metric::check(
            "slope",
            fit.slope,
            format!("|slope·2π − 1| <= {}", p.slope_rel_tol),
            (ratio - 1.0).abs() <= p.slope_rel_tol,
        )
        .with_ratio(ratio),
        Metric::info("intercept", fit.intercept),
    ];
    let details = json!({ "target_slope": target, "sigma_N": sig });
    Ok(outcome(metrics, vec![series], details, vec![]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VarianceParams {
    times: Vec<f64>,
    points: Vec<[f64; 2]>,
    z_max: f64,
}

fn variance_identity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: VarianceParams = prepare(cfg, "variance-identity")?;
    let ns = cfg.n_list()?;
    let samples = cfg.samples()?;
    if samples < 2 {
        return Err(invalid("mc.samples", "need at least two samples"));
    }
    if p.points.is_empty() || p.times.is_empty() {
        return Err(invalid("params", "need at least one time and one point"));
    }
    let seed = cfg.seed();
    let mut metrics = Vec::new();
    let mut series = Series::new(
        "variance",
        &["N", "t", "x1", "x2", "estimate", "se", "sigma_N", "z"],
    );
    for &n in &ns {
        let rows = variance_identity_mc(n, &p.times, &p.points, samples, seed)?;
        let mut worst = 0.0f64;
        for r in &rows {
            worst = worst.max(r.z.abs());
            series.push(vec![
                json!(r.n),
                json!(r.t),
                json!(r.x[0]),
                json!(r.x[1]),
                json!(r.estimate.mean),
                json!(r.estimate.se),
                json!(r.exact),
                json!(r.z),
            ]);
        }
        metrics.push(Metric::at_most(format!("max_abs_z[N={}]", fmt_n(n)), worst, p.z_max));
    }
    Ok(outcome(metrics, vec![series], json!({}), vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLawParams {
    t_ref: f64,
    time_offsets: Vec<f64>,
    radii: Vec<f64>,
    slack: f64,
}

fn covariance_log_law_exp(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: LogLawParams = prepare(cfg, "covariance-log-law")?;
    let ns = cfg.n_list()?;
    if !(p.slack >= 1.0) {
        return Err(invalid("params.slack", "must be at least 1"));
    }
    let r = covariance_log_law(&ns, p.t_ref, &p.time_offsets, &p.radii, p.slack)?;
    let mut series = Series::new("constants", &["N", "constant", "t1", "t2", "r"]);
    let mut metrics = Vec::new();
    for row in &r.rows {
        series.push(vec![
            json!(row.n),
            json!(row.constant),
            json!(row.argmax[0]),
            json!(row.argmax[1]),
            json!(row.argmax[2]),
        ]);
        metrics.push(Metric::info(format!("constant[N={}]", fmt_n(row.n)), row.constant));
    }
    let worst = r.rows.iter().map(|x| x.constant).fold(0.0, f64::max);
    metrics.push(
        Metric::check(
            "max_constant",
            worst,
            format!("<= {} × constant at N={}", p.slack, fmt_n(ns[0])),
            r.pass,
        )
        .with_ratio(worst / r.fitted),
    );
    Ok(outcome(metrics, vec![series], json!({ "fitted": r.fitted }), vec![]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TwoPointParams {
    time: f64,
    separations: Vec<f64>,
    exponent_rel_tol: f64,
    mc_cutoff: f64,
    mc_separations: Vec<f64>,
    z_max: f64,
}

fn chaos_twopoint(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: TwoPointParams = prepare(cfg, "chaos-twopoint")?;
    let n = cfg.single_n()?;
    let b2s = cfg.beta2_list()?;
    let samples = cfg.samples()?;
    let seed = cfg.seed();
    if p.separations.len() < 2 || p.separations.iter().any(|d| !(*d > 0.0)) {
        return Err(invalid("params.separations", "need ≥ 2 positive separations"));
    }
    if !(0.0..=1.0).contains(&p.time) {
        return Err(invalid("params.time", "must lie in [0, 1]"));
    }
    let mut metrics = Vec::new();
    let mut curve = Series::new("analytic", &["beta2", "separation", "two_point"]);
    let mut mc = Series::new(
        "monte_carlo",
        &["beta2", "separation", "mc_re", "se_re", "mc_im", "se_im", "analytic"],
    );
    for (k, &b2) in b2s.iter().enumerate() {
        let tag = fmt_beta2(b2);
        let vals: Vec<f64> = p
            .separations
            .iter()
            .map(|&d| chaos_two_point_analytic(n, b2, (p.time, [0.0, 0.0]), (p.time, [d, 0.0])))
            .collect();
        for (d, v) in p.separations.iter().zip(&vals) {
            curve.push(vec![json!(b2), json!(d), json!(v)]);
        }
        let exponent = -fit_power(&p.separations, &vals).slope;
        let target = b2 / (2.0 * PI);
        let ratio = exponent / target;
        metrics.push(
            Metric::check(
                format!("decay_exponent[beta2={tag}]"),
                exponent,
                format!("|exponent/(β²/2π) − 1| <= {}", p.exponent_rel_tol),
                (ratio - 1.0).abs() <= p.exponent_rel_tol,
            )
            .with_ratio(ratio),
        );
        let mut worst = 0.0f64;
        for (j, &d) in p.mc_separations.iter().enumerate() {
            let est = chaos_two_point(
                p.mc_cutoff,
                b2.sqrt(),
                (p.time, [0.0, 0.0]),
                (p.time, [d, 0.0]),
                samples,
                seed.wrapping_add((k * 64 + j) as u64),
            )?;
            worst = worst
                .max(((est.mc_re - est.analytic) / est.se_re).abs())
                .max((est.mc_im / est.se_im).abs());
            mc.push(vec![
                json!(b2),
                json!(d),
                json!(est.mc_re),
                json!(est.se_re),
                json!(est.mc_im),
                json!(est.se_im),
                json!(est.analytic),
            ]);
        }
        if !p.mc_separations.is_empty() {
            metrics.push(Metric::at_most(
                format!("mc_max_abs_z[beta2={tag}]"),
                worst,
                p.z_max,
            ));
        }
    }
    let seeds = (0..b2s.len())
        .flat_map(|k| (0..p.mc_separations.len()).map(move |j| seed.wrapping_add((k * 64 + j) as u64)))
        .collect();
    Ok(outcome(metrics, vec![curve, mc], json!({}), seeds))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegularityParams {
    alpha_offset: f64,
    times: Vec<f64>,
    time_exponent: f64,
    max_last_increment: f64,
    min_slope_sigmas: f64,
    /// Cutoffs for the exact pointwise second moment of the smoothed chaos
    /// (informational).
    oracle_cutoffs: Vec<f64>,
}

fn chaos_regularity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: RegularityParams = prepare(cfg, "chaos-regularity")?;
    let ns = cfg.n_list()?;
    let b2 = cfg.single_beta2()?;
    let samples = cfg.samples()?;
    let seed = cfg.seed();
    if ns.len() < 2 {
        return Err(invalid("lattice.N", "need at least two cutoffs"));
    }
    let a0 = b2 / (4.0 * PI);
    let (hi, lo) = (a0 + p.alpha_offset, a0 - p.alpha_offset);
    if !(p.alpha_offset > 0.0 && lo > 0.0) {
        return Err(invalid("params.alpha_offset", "need 0 < offset < β²/4π"));
    }
    let mut series = Series::new("proxy", &["N", "alpha", "mean", "se"]);
    let mut means_hi = Vec::new();
    let mut means_lo = Vec::new();
    for &n in &ns {
        let r = besov_proxy_mc(n, b2, &[hi, lo], &p.times, p.time_exponent, samples, seed)?;
        for (a, m) in [(hi, r[0]), (lo, r[1])] {
            series.push(vec![json!(n), json!(a), json!(m.mean), json!(m.se)]);
        }
        means_hi.push(r[0]);
        means_lo.push(r[1]);
    }
    let k = ns.len();
    let inc = (means_hi[k - 1].mean - means_hi[k - 2].mean) / means_hi[k - 2].mean;
    let inc_se = (means_hi[k - 1].se.powi(2) + means_hi[k - 2].se.powi(2)).sqrt() / means_hi[k - 2].mean;
    let x: Vec<f64> = ns.iter().map(|n| n.log2()).collect();
    let y: Vec<f64> = means_lo.iter().map(|m| m.mean).collect();
    let w: Vec<f64> = means_lo.iter().map(|m| 1.0 / (m.se * m.se)).collect();
    let fit = fit_line_weighted(&x, &y, &w);
    let sigmas = fit.slope / fit.slope_se;
    let mut oracle = Series::new("oracle", &["N", "alpha", "t", "second_moment"]);
    let t_last = *p.times.last().unwrap_or(&1.0);
    for &n in &p.oracle_cutoffs {
        for a in [hi, lo] {
            let v = bessel_smoothed_variance(n, b2, a, t_last, 1)?;
            oracle.push(vec![json!(n), json!(a), json!(t_last), json!(v)]);
        }
    }
    let metrics = vec![
        Metric::at_most("last_increment[alpha_above]", inc, p.max_last_increment).with_se(inc_se),
        Metric::check(
            "slope_sigmas[alpha_below]",
            sigmas,
            format!("slope > 0 and >= {} σ", p.min_slope_sigmas),
            fit.slope > 0.0 && sigmas >= p.min_slope_sigmas,
        ),
        Metric::info("slope[alpha_below]", fit.slope).with_se(fit.slope_se),
    ];
    let details = json!({ "alpha_above": hi, "alpha_below": lo });
    Ok(outcome(metrics, vec![series, oracle], details, vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlowupParams {
    /// β² at or above which the probe is expected not to stabilise.
    divergence_beta2: f64,
    max_last_increment: f64,
    min_growth_per_doubling: f64,
    oversample: usize,
    test_function: TestFunction,
}

fn blowup(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: BlowupParams = prepare(cfg, "blowup-probe")?;
    let ns = cfg.n_list()?;
    let b2s = cfg.beta2_list()?;
    if ns.len() < 2 || ns.windows(2).any(|w| (w[1] - 2.0 * w[0]).abs() > 1e-9) {
        return Err(invalid("lattice.N", "need ≥ 2 successive doublings"));
    }
    if p.oversample == 0 {
        return Err(invalid("params.oversample", "must be ≥ 1"));
    }
    let r = blowup_probe_with(&b2s, &ns, &p.test_function, p.oversample)?;
    let mut series = Series::new("moments", &["beta2", "N", "value"]);
    for row in &r.rows {
        series.push(vec![json!(row.beta2), json!(row.n), json!(row.value)]);
    }
    let mut metrics = Vec::new();
    let mut per = Vec::new();
    for s in &r.series {
        let tag = fmt_beta2(s.beta2);
        let min_ratio = s.ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let stabilized = s.last_increment.abs() < p.max_last_increment;
        if s.beta2 < p.divergence_beta2 {
            metrics.push(Metric::check(
                format!("last_increment[beta2={tag}]"),
                s.last_increment,
                format!("|increment| < {}", p.max_last_increment),
                stabilized,
            ));
        } else {
            metrics.push(Metric::at_least(
                format!("min_growth_ratio[beta2={tag}]"),
                min_ratio,
                1.0 + p.min_growth_per_doubling,
            ));
        }
        per.push(json!({
            "beta2": s.beta2,
            "values": s.values,
            "growth_ratios": s.ratios,
            "last_increment": s.last_increment,
            "fails_to_stabilize": !stabilized,
        }));
    }
    Ok(outcome(metrics, vec![series], json!({ "series": per }), vec![]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SmoothingExpParams {
    n0_list: Vec<f64>,
    t: f64,
    epsilon: f64,
    time_points: usize,
    direction: usize,
    max_smoothed_excess: f64,
    min_unsmoothed_exponent: f64,
}

fn smoothing_moment_exp(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: SmoothingExpParams = prepare(cfg, "smoothing-moment")?;
    let n = cfg.single_n()?;
    let b2 = cfg.single_beta2()?;
    if p.n0_list.len() < 2 {
        return Err(invalid("params.n0_list", "need at least two values of N₀"));
    }
    let sp = SmoothingParams {
        n,
        beta2: b2,
        t: p.t,
        epsilon: p.epsilon,
        window: cfg.require("time.window", cfg.time.window)?,
        time_points: p.time_points,
        direction: p.direction,
        samples: cfg.samples()?,
        seed: cfg.seed(),
    };
    let rows = smoothing_moment_scan(&sp, &p.n0_list)?;
    let mut series = Series::new(
        "moments",
        &["N0", "smoothed", "smoothed_se", "unsmoothed", "unsmoothed_se", "floored_hits"],
    );
    for r in &rows {
        series.push(vec![
            json!(r.n0),
            json!(r.smoothed.mean),
            json!(r.smoothed.se),
            json!(r.unsmoothed.mean),
            json!(r.unsmoothed.se),
            json!(r.floored_hits),
        ]);
    }
    let n0: Vec<f64> = rows.iter().map(|r| r.n0).collect();
    let sm = fit_power(&n0, &rows.iter().map(|r| r.smoothed.mean).collect::<Vec<_>>());
    let un = fit_power(&n0, &rows.iter().map(|r| r.unsmoothed.mean).collect::<Vec<_>>());
    let limit = b2 / (2.0 * PI) + p.max_smoothed_excess;
    let metrics = vec![
        Metric::at_most("smoothed_exponent", sm.slope, limit).with_se(sm.slope_se),
        Metric::at_least("unsmoothed_exponent", un.slope, p.min_unsmoothed_exponent)
            .with_se(un.slope_se),
        Metric::info(
            "floored_cone_hits",
            rows.iter().map(|r| r.floored_hits).sum::<usize>() as f64,
        ),
    ];
    Ok(outcome(metrics, vec![series], json!({}), vec![sp.seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChargeParams {
    p_list: Vec<usize>,
    max_growth: f64,
}

fn charge_bound(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: ChargeParams = prepare(cfg, "charge-bound")?;
    let n = cfg.single_n()?;
    let b2 = cfg.single_beta2()?;
    let count = cfg.samples()?;
    let seed = cfg.seed();
    if p.p_list.is_empty() || p.p_list.iter().any(|&q| q == 0 || q > 4) {
        return Err(invalid("params.p_list", "each p must lie in 1..=4"));
    }
    // The exponent of the Coulomb-gas potential is β²/2π.
    let lambda = b2 / (2.0 * PI);
    let mut series = Series::new("constants", &["p", "max_ratio", "median_ratio"]);
    let mut metrics = Vec::new();
    let mut constants = Vec::new();
    for &q in &p.p_list {
        use rayon::prelude::*;
        let mut ratios = (0..count as u64)
            .into_par_iter()
            .map(|s| {
                let c = ChargeConfiguration::random(q, seed, (q as u64) << 40 | s)?;
                Ok(charge_bound_check(&c, n, lambda)?.ratio)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = ratios.iter().find(|r| !r.is_finite()) {
            return Err(LabError::NonFinite(format!("charge ratio {bad} for p = {q}")));
        }
        ratios.sort_by(f64::total_cmp);
        let c = *ratios.last().unwrap();
        series.push(vec![json!(q), json!(c), json!(ratios[ratios.len() / 2])]);
        metrics.push(Metric::info(format!("constant[p={q}]"), c));
        constants.push(c);
    }
    let growth = constants.iter().cloned().fold(0.0, f64::max) / constants[0];
    metrics.push(Metric::at_most("constant_growth", growth, p.max_growth));
    Ok(outcome(metrics, vec![series], json!({ "lambda": lambda }), vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeParams {
    n: f64,
    r: f64,
    b: f64,
    a: f64,
    delta: f64,
    l_list: Vec<f64>,
    time_points: usize,
    prefix: ConePrefix,
    max_exponent_excess: f64,
}

fn cone_probe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: ConeParams = prepare(cfg, "cone-weighted-probe")?;
    let cp = ConeProbeParams {
        n: p.n,
        r: p.r,
        b: p.b,
        a: p.a,
        delta: p.delta,
        l_list: p.l_list,
        window: cfg.require("time.window", cfg.time.window)?,
        time_points: p.time_points,
        fields: cfg.samples()?,
        seed: cfg.seed(),
        prefix: p.prefix,
    };
    let r = weighted_cone_probe(&cp)?;
    let mut series = Series::new(
        "ratios",
        &["L", "max_ratio", "max_lhs_over_input", "envelope_first", "envelope_second"],
    );
    for row in &r.rows {
        series.push(vec![
            json!(row.l),
            json!(row.max_ratio),
            json!(row.max_lhs_over_input),
            json!(row.envelope_first),
            json!(row.envelope_second),
        ]);
    }
    let metrics = vec![
        Metric::check(
            "max_ratio",
            r.max_ratio,
            "finite".into(),
            r.max_ratio.is_finite(),
        ),
        Metric::at_most(
            "ratio_growth_exponent",
            r.ratio_growth_exponent,
            p.max_exponent_excess,
        ),
    ];
    Ok(outcome(metrics, vec![series], json!({}), vec![cp.seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LeibnizParams {
    max_constant: f64,
}

fn leibniz(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: LeibnizParams = prepare(cfg, "leibniz-check")?;
    let seed = cfg.seed();
    let r = hyperbolic_leibniz_check(cfg.samples()?, seed);
    let metrics = vec![
        Metric::check(
            "max_constant",
            r.max_constant,
            format!("finite and <= {}", p.max_constant),
            r.max_constant.is_finite() && r.max_constant <= p.max_constant,
        ),
        Metric::info("degenerate_skipped", r.degenerate_skipped as f64),
    ];
    let details = json!({ "worst": r.worst, "samples": r.samples });
    Ok(outcome(metrics, vec![], details, vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelParams {
    lemmas: Vec<Lemma>,
    theta: f64,
    gamma: f64,
    t: f64,
    budget: f64,
}

fn kernel_bounds(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: KernelParams = prepare(cfg, "kernel-bounds")?;
    let ns = cfg.n_list()?;
    if p.lemmas.is_empty() {
        return Err(invalid("params.lemmas", "must not be empty"));
    }
    let lp = LemmaParams {
        theta: p.theta,
        gamma: p.gamma,
        t: p.t,
    };
    let mut series = Series::new(
        "probes",
        &["lemma", "x1", "x2", "d1", "d2", "N", "lhs", "rhs", "ratio", "flagged"],
    );
    let mut metrics = Vec::new();
    let mut reports = Vec::new();
    for &lemma in &p.lemmas {
        let grid = default_probe_grid(lemma, &lp);
        let r = smoothed_singularity_check(lemma, &lp, &ns, &grid, p.budget)?;
        for pr in &r.probes {
            for (k, &n) in ns.iter().enumerate() {
                series.push(vec![
                    json!(r.lemma_id),
                    json!(pr.point.x[0]),
                    json!(pr.point.x[1]),
                    json!(pr.point.deriv.0),
                    json!(pr.point.deriv.1),
                    json!(n),
                    json!(pr.lhs[k]),
                    json!(pr.rhs[k]),
                    json!(pr.ratio[k]),
                    json!(pr.flagged),
                ]);
            }
        }
        metrics.push(
            Metric::check(
                format!("constant_growth[{}]", r.lemma_id),
                r.constant_growth,
                format!("<= {} with finite, unflagged ratios", p.budget),
                r.pass,
            )
            .with_ratio(r.max_ratio),
        );
        metrics.push(Metric::info(
            format!("max_pointwise_uniformity[{}]", r.lemma_id),
            r.max_uniformity,
        ));
        reports.push(json!({
            "lemma": r.lemma_id,
            "constants": r.constants,
            "max_ratio": r.max_ratio,
        }));
    }
    Ok(outcome(metrics, vec![series], json!({ "lemmas": reports }), vec![]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SingularParams {
    b_list: Vec<f64>,
    t_grid: Vec<f64>,
    s: f64,
    s1: f64,
    s2: f64,
    max_samples: usize,
    tolerance: f64,
}

fn singular_integrals(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: SingularParams = prepare(cfg, "singular-integrals")?;
    let samples = cfg.samples()?;
    let seed = cfg.seed();
    if p.t_grid.len() < 2 {
        return Err(invalid("params.t_grid", "need at least two times"));
    }
    if p.max_samples < samples {
        return Err(invalid("params.max_samples", "must be ≥ mc.samples"));
    }
    let mut series = Series::new("integrals", &["sign", "b", "t", "value", "se", "samples"]);
    let mut metrics = Vec::new();
    for &b in &p.b_list {
        for (sign, integral) in [
            ("plus", SingularIntegral::Plus { s: p.s }),
            ("minus", SingularIntegral::Minus { s1: p.s1, s2: p.s2 }),
        ] {
            let r = singular_integral(integral, b, &p.t_grid, samples, p.max_samples, seed)?;
            for row in &r.rows {
                series.push(vec![
                    json!(sign),
                    json!(b),
                    json!(row.t),
                    json!(row.value),
                    json!(row.se),
                    json!(row.samples),
                ]);
            }
            let dev = (r.fitted_exponent - r.predicted_exponent).abs();
            let resolved = r.rows.iter().all(|x| !x.flagged);
            metrics.push(Metric::check(
                format!("exponent_error[{sign},b={b}]"),
                dev,
                format!("<= {} with all rows resolved", p.tolerance),
                dev <= p.tolerance && resolved,
            ));
            metrics.push(Metric::info(
                format!("fitted_exponent[{sign},b={b}]"),
                r.fitted_exponent,
            ));
        }
    }
    Ok(outcome(metrics, vec![series], json!({}), vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InvarianceParams {
    z_max: f64,
    /// Also run the γ = 0 ensemble against the exact Gaussian oracle.
    gaussian_control: bool,
    /// Repeat every run with dt/2 and require identical verdicts.
    refine: bool,
    observables: ObservableSet,
}

fn invariance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: InvarianceParams = prepare(cfg, "invariance")?;
    let n = cfg.single_n()?;
    let b2 = cfg.single_beta2()?;
    let gamma = cfg.gamma()?;
    let count = cfg.samples()?;
    let horizon = cfg.require("time.horizon", cfg.time.horizon)?;
    let dt = cfg.time.dt.unwrap_or_else(|| dt_max(n));
    let seed = cfg.seed();
    if dt > dt_max(n) * (1.0 + 1e-12) {
        return Err(invalid("time.dt", format!("exceeds dt_max(N) = {}", dt_max(n))));
    }
    if horizon > 4.0 {
        return Err(invalid("time.horizon", "must be ≤ 4"));
    }
    let lat = cfg.lattice_for(n)?;
    let rc = compute_renorm_constants(&lat, n, b2)?;
    let mut couplings = Vec::new();
    if p.gaussian_control {
        couplings.push(("control", 0.0));
    }
    couplings.push(("full", gamma));
    let mut steps = vec![("dt", dt)];
    if p.refine {
        steps.push(("dt_half", dt / 2.0));
    }
    let mut metrics = Vec::new();
    let mut series = Series::new(
        "observables",
        &["run", "dt", "name", "mean_t0", "mean_T", "z", "oracle", "z_oracle"],
    );
    let mut details = Vec::new();
    for (label, g) in couplings {
        let ens = sample_gibbs_ensemble(&lat, &rc, g, b2.sqrt(), count, seed)?;
        let mut verdicts = Vec::new();
        for &(dlabel, h) in &steps {
            let r: InvarianceReport = invariance_experiment(&ens, horizon, &p.observables, h)?;
            for row in &r.rows {
                series.push(vec![
                    json!(label),
                    json!(h),
                    json!(row.name),
                    json!(row.mean_t0),
                    json!(row.mean_t),
                    json!(row.z),
                    json!(row.oracle),
                    json!(row.z_oracle),
                ]);
            }
            let ok = r.max_abs_z <= p.z_max;
            verdicts.push(ok);
            metrics.push(Metric::at_most(
                format!("max_abs_z[{label},{dlabel}]"),
                r.max_abs_z,
                p.z_max,
            ));
        }
        if verdicts.len() > 1 {
            let changed = verdicts.windows(2).filter(|w| w[0] != w[1]).count();
            metrics.push(Metric::at_most(
                format!("verdict_changes_under_refinement[{label}]"),
                changed as f64,
                0.0,
            ));
        }
        metrics.push(Metric::info(format!("ess[{label}]"), ens.ess));
        details.push(json!({
            "run": label,
            "gamma": g,
            "ess": ens.ess,
            "degenerate_weights": ens.degenerate,
        }));
    }
    let details = json!({ "runs": details, "dt": dt, "sigma_N": rc.sigma_n });
    Ok(outcome(metrics, vec![series], details, vec![seed]))
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PicardParams {
    /// Comparison times before the horizon (the horizon is always checked).
    intermediate_times: Vec<f64>,
    iterations: usize,
    tolerance: f64,
}

fn picard(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p: PicardParams = prepare(cfg, "picard-consistency")?;
    let n = cfg.single_n()?;
    let b2 = cfg.single_beta2()?;
    let gamma = cfg.gamma()?;
    let dt = cfg.require("time.dt", cfg.time.dt)?;
    let horizon = cfg.require("time.horizon", cfg.time.horizon)?;
    let seed = cfg.seed();
    if horizon > 1.0 {
        return Err(invalid("time.horizon", "the Picard solver runs on [0, 1]"));
    }
    if p.intermediate_times.iter().any(|t| !(*t > 0.0 && *t < horizon)) {
        return Err(invalid("params.intermediate_times", "must lie in (0, horizon)"));
    }
    let mut times = p.intermediate_times.clone();
    times.push(horizon);
    let r = picard_consistency(n, b2, gamma, dt, &times, p.iterations, seed, p.tolerance)?;
    let mut series = Series::new("agreement", &["t", "relative_l2"]);
    for row in &r.rows {
        series.push(vec![json!(row.t), json!(row.relative_l2)]);
    }
    let worst = r.rows.iter().map(|x| x.relative_l2).fold(0.0, f64::max);
    let metrics = vec![
        Metric::at_most("max_relative_l2", worst, p.tolerance),
        Metric::check(
            "picard_converged",
            if r.picard_diverged { 0.0 } else { 1.0 },
            "no divergence".into(),
            !r.picard_diverged,
        ),
        Metric::info(
            "final_picard_difference",
            r.picard_differences.last().cloned().unwrap_or(f64::NAN),
        ),
    ];
    let details = json!({ "picard_differences": r.picard_differences });
    Ok(outcome(metrics, vec![series], details, vec![seed]))
}
