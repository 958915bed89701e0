//! Two-step voxelwise GLM with Benjamini–Hochberg control.
//!
//! The response is first residualised on `[1, η]`; each voxel is then tested
//! with a no-intercept simple regression of the residual on that voxel.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::par;
use crate::tensor::DenseTensor;

/// `y − [1, η] γ̂` with `γ̂` the least-squares coefficients.
pub fn residualize(data: &Dataset) -> Result<Vec<f64>> {
    let (n, q) = (data.n(), data.q());
    if n <= q + 1 {
        return Err(Error::InsufficientData(format!("residualisation needs n > q + 1, got n={n}, q={q}")));
    }
    let eta = data.eta();
    let design = DMatrix::from_fn(n, q + 1, |i, j| if j == 0 { 1.0 } else { eta[(i, j - 1)] });
    let qr = design.clone().qr();
    let r = qr.r();
    let rmax = (0..=q).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..=q).any(|j| r[(j, j)].abs() <= 1e-10 * rmax.max(1.0)) {
        return Err(Error::RankDeficient("[1, η] does not have full column rank".into()));
    }
    let y = DVector::from_column_slice(data.y());
    let qty = qr.q().transpose() * &y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("[1, η] does not have full column rank".into()))?;
    Ok((y - design * coef).iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelTestResult {
    pub index: Vec<usize>,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
    pub rejected: bool,
    /// The voxel is constant across subjects; reported with `p = 1`.
    pub zero_variance: bool,
}

fn unravel(mut k: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&p| {
            let i = k % p;
            k /= p;
            i
        })
        .collect()
}

/// Per-voxel slope `Σxỹ / Σx²`, its standard error and the two-sided
/// t-test p-value on `n − 1` degrees of freedom. `rejected` is left false.
pub fn voxelwise_fit(ytilde: &[f64], x: &DenseTensor) -> Result<Vec<VoxelTestResult>> {
    let dims = &x.dims()[..x.order() - 1];
    let n = x.dims()[x.order() - 1];
    if ytilde.len() != n {
        return Err(Error::Shape(format!("{} responses for {n} subjects", ytilde.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("voxelwise fit needs n >= 3, got {n}")));
    }
    let v = x.len() / n;
    let xs = x.values();
    let df = (n - 1) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let yy: f64 = ytilde.iter().map(|y| y * y).sum();

    // sxy, sxx, min, max per voxel.
    let mut acc = vec![[0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY]; v];
    par::for_each_chunk_mut(&mut acc, par::CHUNK, |start, chunk| {
        for (i, &y) in ytilde.iter().enumerate() {
            let row = &xs[i * v + start..i * v + start + chunk.len()];
            for (a, &xv) in chunk.iter_mut().zip(row) {
                a[0] += xv * y;
                a[1] += xv * xv;
                a[2] = a[2].min(xv);
                a[3] = a[3].max(xv);
            }
        }
    });
    Ok(acc
        .iter()
        .enumerate()
        .map(|(k, &[sxy, sxx, lo, hi])| {
            let index = unravel(k, dims);
            if lo == hi {
                return VoxelTestResult { index, estimate: 0.0, se: 0.0, p_value: 1.0, rejected: false, zero_variance: true };
            }
            let b = sxy / sxx;
            let rss = (yy - b * sxy).max(0.0);
            let se = (rss / df / sxx).sqrt();
            let p_value = if se > 0.0 {
                (2.0 * t_dist.sf((b / se).abs())).clamp(0.0, 1.0)
            } else if b == 0.0 {
                1.0
            } else {
                0.0
            };
            VoxelTestResult { index, estimate: b, se, p_value, rejected: false, zero_variance: false }
        })
        .collect())
}

/// Benjamini–Hochberg step-up rejections at false discovery rate `q`.
pub fn bh_adjust(pvalues: &[f64], q: f64) -> Result<Vec<bool>> {
    if pvalues.is_empty() {
        return Err(Error::InsufficientData("no p-values".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("FDR level must lie in (0, 1), got {q}")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m).rev().find(|&k| sorted[k - 1] <= k as f64 * q / m as f64).map(|k| sorted[k - 1]);
    Ok(pvalues.iter().map(|&p| cutoff.is_some_and(|c| p <= c)).collect())
}

pub struct GlmOutput {
    /// Estimates at rejected voxels, zero elsewhere.
    pub map: DenseTensor,
    pub results: Vec<VoxelTestResult>,
}

pub fn glm_coefficient_map(data: &Dataset, q: f64) -> Result<GlmOutput> {
    let ytilde = residualize(data)?;
    let mut results = voxelwise_fit(&ytilde, data.x())?;
    let p: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    let rejected = bh_adjust(&p, q)?;
    for (r, rej) in results.iter_mut().zip(rejected) {
        r.rejected = rej;
    }
    let values = results.iter().map(|r| if r.rejected { r.estimate } else { 0.0 }).collect();
    let map = DenseTensor::new(data.dims().to_vec(), values)?;
    Ok(GlmOutput { map, results })
}
