//! Logical error per cycle and error-suppression estimates.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::scalar::Real;

/// Logical error probability after `t` cycles at error per cycle `epsilon`:
/// the chance of an odd number of flips.
pub fn logical_error_after<W: Real>(epsilon: W, t: u64) -> W {
    let two = W::of(2.0);
    (W::one() - (W::one() - two * epsilon).powf(W::of(t as f64))) / two
}

/// Inverts [`logical_error_after`] for a single measurement at `t` cycles.
pub fn one_point_epsilon<W: Real>(p_l: W, t: u64) -> Result<W, HarnessError> {
    if t == 0 {
        return Err(HarnessError::ZeroCycles);
    }
    if !(p_l >= W::zero() && p_l < W::of(0.5)) {
        return Err(HarnessError::LogicalErrorOutOfRange(p_l.as_f64()));
    }
    if t == 1 {
        return Ok(p_l);
    }
    let two = W::of(2.0);
    // ln1p/exp_m1 keep full precision when p_L or epsilon is tiny.
    let y = (-two * p_l).ln_1p() / W::of(t as f64);
    Ok(-y.exp_m1() / two)
}

/// One measured memory experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub cycles: u64,
    pub p_l: f64,
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult<W> {
    pub epsilon: W,
    pub sigma: W,
    pub label: String,
    pub slope: W,
    pub intercept: W,
    pub reduced_chi2: W,
    pub points: usize,
}

struct Line<W> {
    slope: W,
    intercept: W,
    slope_var: W,
    reduced_chi2: W,
}

/// Weighted least squares `y = a + b x`. With `through_origin`, `a = 0`.
fn weighted_line<W: Real>(x: &[W], y: &[W], w: &[W], through_origin: bool) -> Line<W> {
    let n = x.len();
    if through_origin {
        let sxx: W = (0..n).map(|i| w[i] * x[i] * x[i]).sum();
        let sxy: W = (0..n).map(|i| w[i] * x[i] * y[i]).sum();
        let slope = sxy / sxx;
        let chi2: W = (0..n).map(|i| w[i] * (y[i] - slope * x[i]).powi(2)).sum();
        let dof = n.saturating_sub(1);
        let reduced = if dof > 0 { chi2 / W::of(dof as f64) } else { W::one() };
        return Line { slope, intercept: W::zero(), slope_var: W::one() / sxx, reduced_chi2: reduced };
    }
    let s: W = w.iter().copied().sum();
    let sx: W = (0..n).map(|i| w[i] * x[i]).sum();
    let sy: W = (0..n).map(|i| w[i] * y[i]).sum();
    let sxx: W = (0..n).map(|i| w[i] * x[i] * x[i]).sum();
    let sxy: W = (0..n).map(|i| w[i] * x[i] * y[i]).sum();
    let delta = s * sxx - sx * sx;
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let chi2: W = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let dof = n.saturating_sub(2);
    let reduced = if dof > 0 { chi2 / W::of(dof as f64) } else { W::one() };
    Line { slope, intercept, slope_var: s / delta, reduced_chi2: reduced }
}

/// Fits `ln(1 - 2 p_L) = a + t ln(1 - 2 epsilon)` by weighted least squares.
///
/// Weights come from the binomial variance of each `p_L`. The slope variance
/// is inflated by the reduced chi-square when the scatter exceeds it. A single
/// usable point is fitted through the origin, which reproduces
/// [`one_point_epsilon`].
pub fn fit_epsilon<W: Real>(points: &[FitPoint], label: &str) -> Result<FitResult<W>, HarnessError> {
    let usable: Vec<&FitPoint> = points.iter().filter(|p| p.p_l >= 0.0 && p.p_l < 0.5).collect();
    if usable.is_empty() {
        return Err(HarnessError::NoUsablePoints);
    }
    let two = W::of(2.0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for p in &usable {
        let pl = W::of(p.p_l);
        let n = W::of(p.shots.max(1) as f64);
        // Zero observed errors still carry half a count of uncertainty.
        let p_eff = pl.max(W::of(0.5) / n);
        let var_p = p_eff * (W::one() - p_eff) / n;
        let var_y = W::of(4.0) * var_p / (W::one() - two * pl).powi(2);
        x.push(W::of(p.cycles as f64));
        y.push((-two * pl).ln_1p());
        w.push(W::one() / var_y);
    }
    let line = weighted_line(&x, &y, &w, usable.len() == 1);
    let sigma_slope = (line.slope_var * line.reduced_chi2.max(W::one())).sqrt();
    let epsilon = -line.slope.exp_m1() / two;
    let sigma = line.slope.exp() * sigma_slope / two;
    Ok(FitResult {
        epsilon,
        sigma,
        label: label.to_string(),
        slope: line.slope,
        intercept: line.intercept,
        reduced_chi2: line.reduced_chi2,
        points: usable.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult<W> {
    pub lambda: W,
    pub delta: W,
    pub slope: W,
    pub slope_error: W,
}

/// Regresses `ln epsilon_d` on `(d + 1) / 2`; the slope is `-ln Lambda`.
///
/// Points are weighted by their relative uncertainty. If any uncertainty is
/// zero the fit is unweighted and the slope error comes from the residuals.
pub fn compute_lambda<W: Real>(fits: &[(u32, FitResult<W>)]) -> Result<LambdaResult<W>, HarnessError> {
    let mut distances: Vec<u32> = fits.iter().map(|f| f.0).collect();
    distances.sort_unstable();
    distances.dedup();
    if distances.len() < 2 {
        return Err(HarnessError::TooFewDistances(distances.len()));
    }
    if let Some((d, _)) = fits.iter().find(|(_, f)| !(f.epsilon > W::zero())) {
        return Err(HarnessError::NonPositiveEpsilon(*d));
    }
    let x: Vec<W> = fits.iter().map(|(d, _)| W::of((*d as f64 + 1.0) / 2.0)).collect();
    let y: Vec<W> = fits.iter().map(|(_, f)| f.epsilon.ln()).collect();
    let weighted = fits.iter().all(|(_, f)| f.sigma > W::zero());
    let (slope, slope_error) = if weighted {
        let w: Vec<W> = fits.iter().map(|(_, f)| (f.epsilon / f.sigma).powi(2)).collect();
        let line = weighted_line(&x, &y, &w, false);
        (line.slope, line.slope_var.sqrt())
    } else {
        let ones = vec![W::one(); x.len()];
        let line = weighted_line(&x, &y, &ones, false);
        // Unit weights: chi-square is the residual sum, so this is s^2 / Sxx.
        let err = if x.len() > 2 { (line.slope_var * line.reduced_chi2).sqrt() } else { W::zero() };
        (line.slope, err)
    };
    let lambda = (-slope).exp();
    Ok(LambdaResult { lambda, delta: lambda * slope_error, slope, slope_error })
}
