//! Small statistics helpers: running moments and least-squares fits.

use serde::{Deserialize, Serialize};

/// Mean and standard error of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe::default();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSe {
            mean,
            se: f64::INFINITY,
            n,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// Ordinary least-squares line y = intercept + slope·x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residual variance
    /// (not meaningful for fewer than three points).
    pub slope_se: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    fit_line_weighted(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares with weights w_i (e.g. 1/σ_i²). The slope standard
/// error is computed from the weights alone, i.e. it assumes the weights are
/// inverse variances.
pub fn fit_line_weighted(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), w.len());
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let n = x.len() as f64;
    let resid: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let uniform = w.iter().all(|&wi| wi == w[0]);
    let slope_se = if uniform {
        if n > 2.0 {
            (resid / (n - 2.0) / sxx).sqrt()
        } else {
            f64::NAN
        }
    } else {
        (1.0 / sxx).sqrt()
    };
    LineFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Log–log fit: exponent of y ≈ C·x^p.
pub fn fit_power(x: &[f64], y: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_recovered() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = fit_line(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn mean_se_of_constant_sample() {
        let m = mean_se(&[3.0; 10]);
        assert_eq!(m.mean, 3.0);
        assert_eq!(m.se, 0.0);
    }
}
