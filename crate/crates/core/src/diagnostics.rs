//! Accuracy metrics and single-chain convergence diagnostics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{draws::quantile_sorted, PosteriorDraws};
use crate::par;
use crate::tensor::DenseTensor;

/// `√(Σ_v (est_v − truth_v)² / V)`.
pub fn rmse(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    if est.dims() != truth.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", est.dims(), truth.dims())));
    }
    let ss: f64 = est.values().iter().zip(truth.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / est.len() as f64).sqrt())
}

/// Root mean squared predictive error and Pearson correlation. The
/// correlation is `None` when either input has zero variance.
pub fn rmspe_pearson(pred: &[f64], actual: &[f64]) -> Result<(f64, Option<f64>)> {
    if pred.len() != actual.len() || pred.len() < 2 {
        return Err(Error::Shape(format!(
            "need two equal-length vectors of at least 2 values, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let n = pred.len() as f64;
    let mse = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / n;
    let mp = pred.iter().sum::<f64>() / n;
    let ma = actual.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        sxy += (p - mp) * (a - ma);
        sxx += (p - mp) * (p - mp);
        syy += (a - ma) * (a - ma);
    }
    let r = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok((mse.sqrt(), r))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Batch-means estimate of the long-run variance `Σ_k Cov(x_0, x_k)`, batch
/// size `⌊√S⌋`; trailing values that do not fill a batch are dropped.
pub fn batch_means_variance(chain: &[f64]) -> f64 {
    let s = chain.len();
    let size = ((s as f64).sqrt().floor() as usize).max(1);
    let batches: Vec<f64> = chain.chunks_exact(size).map(mean).collect();
    if batches.len() < 2 {
        return 0.0;
    }
    size as f64 * sample_var(&batches)
}

pub const MIN_ESS_LEN: usize = 100;

/// Effective sample size `S · var / σ²_bm`, clipped to `[1, S]`.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let s = chain.len();
    if s < MIN_ESS_LEN {
        return Err(Error::InsufficientData(format!("ESS needs at least {MIN_ESS_LEN} draws, got {s}")));
    }
    let var = sample_var(chain);
    let lrv = batch_means_variance(chain);
    let e = if var > 0.0 && lrv > 0.0 { s as f64 * var / lrv } else { 1.0 };
    Ok(e.clamp(1.0, s as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// ESS of every voxel of `B`, summarised.
pub fn ess_summary(draws: &PosteriorDraws) -> Result<EssSummary> {
    let v = draws.voxels();
    let mut all = par::map(v, |k| ess(&draws.voxel_chain(k)))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    all.sort_by(f64::total_cmp);
    Ok(EssSummary {
        min: all[0],
        median: quantile_sorted(&all, 0.5),
        max: all[all.len() - 1],
    })
}

/// Post-burn-in behaviour of a log-likelihood trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSummary {
    pub mean: f64,
    /// Least-squares slope per iteration.
    pub slope: f64,
    /// Standard error of the slope with the residual variance replaced by
    /// its batch-means long-run estimate.
    pub slope_se: f64,
    /// `|slope| > 2 · slope_se`.
    pub trend_flag: bool,
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    /// Difference of the half means over its long-run standard error.
    pub split_z: f64,
}

pub fn trace_summary(trace: &[f64], burn_in: usize) -> Result<TraceSummary> {
    if trace.len() <= burn_in + 2 {
        return Err(Error::InsufficientData(format!(
            "trace of length {} leaves too few values after burn-in {burn_in}",
            trace.len()
        )));
    }
    let x = &trace[burn_in..];
    let n = x.len();
    let tm = (n as f64 - 1.0) / 2.0;
    let ym = mean(x);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in x.iter().enumerate() {
        let dt = t as f64 - tm;
        sxy += dt * (y - ym);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let resid: Vec<f64> = x.iter().enumerate().map(|(t, y)| y - ym - slope * (t as f64 - tm)).collect();
    let slope_se = (batch_means_variance(&resid) / sxx).sqrt();
    let (a, b) = x.split_at(n / 2);
    let (ma, mb) = (mean(a), mean(b));
    let se = (batch_means_variance(a) / a.len() as f64 + batch_means_variance(b) / b.len() as f64).sqrt();
    Ok(TraceSummary {
        mean: ym,
        slope,
        slope_se,
        trend_flag: slope.abs() > 2.0 * slope_se,
        first_half_mean: ma,
        second_half_mean: mb,
        split_z: if se > 0.0 { (mb - ma) / se } else { 0.0 },
    })
}

/// Scores and diagnostics of one fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub rmse_b: Option<f64>,
    pub rmspe: Option<f64>,
    pub pearson: Option<f64>,
    pub ess: Option<EssSummary>,
    pub trace: Option<TraceSummary>,
    pub loglik_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

impl FitReport {
    /// Diagnostics from the draws alone: ESS of `B` and the trace summary.
    pub fn from_draws(draws: &PosteriorDraws, warnings: Vec<String>) -> Self {
        let mut warnings = warnings;
        let ess = ess_summary(draws)
            .map_err(|e| warnings.push(format!("ESS not computed: {e}")))
            .ok();
        let loglik_trace = draws.loglik_trace();
        let trace = trace_summary(&loglik_trace, draws.manifest.burn_in)
            .map_err(|e| warnings.push(format!("trace summary not computed: {e}")))
            .ok();
        if trace.is_some_and(|t| t.trend_flag) {
            warnings.push("post-burn-in log-likelihood trace has a significant trend".into());
        }
        Self {
            rmse_b: None,
            rmspe: None,
            pearson: None,
            ess,
            trace,
            loglik_trace,
            warnings,
        }
    }

    /// `key = value` lines; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
        let _ = writeln!(s, "rmse_b = {}", opt(self.rmse_b));
        let _ = writeln!(s, "rmspe = {}", opt(self.rmspe));
        let _ = writeln!(s, "pearson = {}", opt(self.pearson));
        let _ = writeln!(s, "ess_min = {}", opt(self.ess.map(|e| e.min)));
        let _ = writeln!(s, "ess_median = {}", opt(self.ess.map(|e| e.median)));
        let _ = writeln!(s, "ess_max = {}", opt(self.ess.map(|e| e.max)));
        if let Some(t) = self.trace {
            let _ = writeln!(s, "loglik_mean = {:?}", t.mean);
            let _ = writeln!(s, "loglik_slope = {:?}", t.slope);
            let _ = writeln!(s, "loglik_slope_se = {:?}", t.slope_se);
            let _ = writeln!(s, "trend_flag = {}", t.trend_flag);
            let _ = writeln!(s, "loglik_first_half_mean = {:?}", t.first_half_mean);
            let _ = writeln!(s, "loglik_second_half_mean = {:?}", t.second_half_mean);
            let _ = writeln!(s, "loglik_split_z = {:?}", t.split_z);
        }
        let _ = writeln!(s, "warnings = {}", self.warnings.len());
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }
}
