use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::conditionals::gaussian_loglik;
use crate::model::{Dataset, Hyperparams};
use crate::par;
use crate::tensor::{dot, DenseTensor};

pub const DRAWS_FORMAT_VERSION: u32 = 1;

/// Everything needed to reproduce a chain and interpret its records.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub chain: u64,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub q: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub retained: usize,
    /// The chain ran on `(y - center) / scale`.
    pub center: f64,
    pub scale: f64,
    pub keep_factors: bool,
    /// Resolved hyperparameters, in the working units of the chain.
    pub hyper: Hyperparams,
}

impl Manifest {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Values per retained draw in `factors`: every factor matrix
    /// (column-major) followed by the core.
    pub fn factor_len(&self) -> usize {
        self.dims.iter().zip(&self.ranks).map(|(p, r)| p * r).sum::<usize>()
            + self.ranks.iter().product::<usize>()
    }
}

/// Retained draws, all in the original response units. Per-draw blocks are
/// stored draw-major: draw `s` of `B` is `b[s * V..(s + 1) * V]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub manifest: Manifest,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub loglik: Vec<f64>,
    pub tau: Vec<f64>,
    pub z: Vec<f64>,
    /// Present when the manifest asks for factor retention.
    pub factors: Option<Vec<f64>>,
    /// Log-likelihood of every burn-in sweep.
    pub burn_in_loglik: Vec<f64>,
}

impl PosteriorDraws {
    pub fn with_capacity(manifest: Manifest) -> Self {
        let s = manifest.retained;
        Self {
            b: Vec::with_capacity(s * manifest.voxels()),
            gamma: Vec::with_capacity(s * manifest.q),
            sigma2: Vec::with_capacity(s),
            loglik: Vec::with_capacity(s),
            tau: Vec::with_capacity(s),
            z: Vec::with_capacity(s),
            factors: manifest.keep_factors.then(|| Vec::with_capacity(s * manifest.factor_len())),
            burn_in_loglik: Vec::with_capacity(manifest.burn_in),
            manifest,
        }
    }

    /// Checks that every block holds exactly `retained` records.
    pub fn check(&self) -> Result<()> {
        let m = &self.manifest;
        let s = m.retained;
        let bad = |what: &str, len: usize, per: usize| {
            Error::Shape(format!("{what} holds {len} values, expected {s} draws of {per}"))
        };
        if self.b.len() != s * m.voxels() {
            return Err(bad("B", self.b.len(), m.voxels()));
        }
        if self.gamma.len() != s * m.q {
            return Err(bad("gamma", self.gamma.len(), m.q));
        }
        for (name, v) in [("sigma2", &self.sigma2), ("loglik", &self.loglik), ("tau", &self.tau), ("z", &self.z)] {
            if v.len() != s {
                return Err(bad(name, v.len(), 1));
            }
        }
        match (&self.factors, m.keep_factors) {
            (Some(f), true) if f.len() == s * m.factor_len() => {}
            (None, false) => {}
            (f, _) => return Err(bad("factors", f.as_ref().map_or(0, Vec::len), m.factor_len())),
        }
        if self.burn_in_loglik.len() != m.burn_in {
            return Err(Error::Shape(format!(
                "{} burn-in log-likelihoods for burn-in {}",
                self.burn_in_loglik.len(),
                m.burn_in
            )));
        }
        if m.iterations < m.burn_in || (m.iterations - m.burn_in) / m.thin.max(1) != s {
            return Err(Error::Shape(format!(
                "{s} retained draws inconsistent with {} iterations, burn-in {}, thin {}",
                m.iterations, m.burn_in, m.thin
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.sigma2.len()
    }

    pub fn voxels(&self) -> usize {
        self.manifest.voxels()
    }

    pub fn b_draw(&self, s: usize) -> &[f64] {
        let v = self.voxels();
        &self.b[s * v..(s + 1) * v]
    }

    pub fn gamma_draw(&self, s: usize) -> &[f64] {
        let q = self.manifest.q;
        &self.gamma[s * q..(s + 1) * q]
    }

    /// Draws of voxel `v` across the chain.
    pub fn voxel_chain(&self, v: usize) -> Vec<f64> {
        let nv = self.voxels();
        self.b.iter().skip(v).step_by(nv).copied().collect()
    }

    /// Draws of `γ_k` across the chain.
    pub fn gamma_chain(&self, k: usize) -> Vec<f64> {
        let q = self.manifest.q;
        self.gamma.iter().skip(k).step_by(q).copied().collect()
    }

    /// The `S × V` matrix of `B` draws.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.retained(), self.voxels(), &self.b)
    }

    pub fn b_mean(&self) -> DenseTensor {
        let s = self.retained().max(1) as f64;
        let mut acc = vec![0.0; self.voxels()];
        for d in 0..self.retained() {
            for (a, b) in acc.iter_mut().zip(self.b_draw(d)) {
                *a += b;
            }
        }
        acc.iter_mut().for_each(|a| *a /= s);
        DenseTensor::new(self.manifest.dims.clone(), acc).expect("dims match")
    }

    pub fn gamma_mean(&self) -> Vec<f64> {
        (0..self.manifest.q).map(|k| mean(&self.gamma_chain(k))).collect()
    }

    pub fn sigma2_mean(&self) -> f64 {
        mean(&self.sigma2)
    }

    /// Every log-likelihood of the chain, burn-in first.
    pub fn loglik_trace(&self) -> Vec<f64> {
        let mut t = self.burn_in_loglik.clone();
        t.extend_from_slice(&self.loglik);
        t
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Deviance information criterion and its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DicReport {
    pub dic: f64,
    /// Posterior mean of `D = -2 log L`.
    pub mean_deviance: f64,
    /// `D` at the posterior means of `B`, `γ` and `σ²`.
    pub deviance_at_mean: f64,
    /// Effective number of parameters, `mean_deviance - deviance_at_mean`.
    pub p_d: f64,
}

/// `DIC = 2·mean(D) − D(θ̄)`, `θ̄` the posterior mean of `B`, `γ`, `σ²`.
pub fn dic(draws: &PosteriorDraws, data: &Dataset) -> Result<DicReport> {
    if draws.retained() < 2 {
        return Err(Error::InsufficientData(format!(
            "DIC needs at least 2 draws, got {}",
            draws.retained()
        )));
    }
    if draws.manifest.dims != data.dims() || draws.manifest.q != data.q() {
        return Err(Error::Shape("draws do not match the dataset".into()));
    }
    let mean_deviance = -2.0 * mean(&draws.loglik);
    let b = draws.b_mean();
    let gamma = draws.gamma_mean();
    let v = data.voxels();
    let pred: Vec<f64> = (0..data.n())
        .map(|i| dot(b.values(), &data.x().values()[i * v..(i + 1) * v]) + data.eta_dot(i, &gamma))
        .collect();
    let deviance_at_mean = -2.0 * gaussian_loglik(data.y(), &pred, draws.sigma2_mean());
    Ok(DicReport {
        dic: 2.0 * mean_deviance - deviance_at_mean,
        mean_deviance,
        deviance_at_mean,
        p_d: mean_deviance - deviance_at_mean,
    })
}

/// Posterior predictive summaries per subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub median: Vec<f64>,
    /// Requested probability levels.
    pub levels: Vec<f64>,
    /// `quantiles[k][i]` is level `k` for subject `i`.
    pub quantiles: Vec<Vec<f64>>,
}

/// Linearly interpolated sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// For each draw `ŷ = c + ⟨B⁽ˢ⁾, X⟩ + γ⁽ˢ⁾ᵀη`; reports the median and the
/// requested quantiles over draws.
pub fn posterior_predict(
    draws: &PosteriorDraws,
    x_new: &DenseTensor,
    eta_new: &DMatrix<f64>,
    levels: &[f64],
) -> Result<Prediction> {
    let dims = x_new.dims();
    let m = &draws.manifest;
    if dims.len() != m.dims.len() + 1 || dims[..m.dims.len()] != m.dims[..] {
        return Err(Error::Shape(format!(
            "new covariates have dims {dims:?}, expected {:?} plus a subject mode",
            m.dims
        )));
    }
    let n = *dims.last().unwrap();
    if eta_new.nrows() != n || eta_new.ncols() != m.q {
        return Err(Error::Shape(format!(
            "scalar covariates are {}x{}, expected {n}x{}",
            eta_new.nrows(),
            eta_new.ncols(),
            m.q
        )));
    }
    if let Some(&p) = levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("quantile level {p} outside [0, 1]")));
    }
    let s = draws.retained();
    if s == 0 {
        return Err(Error::InsufficientData("no retained draws".into()));
    }
    let v = m.voxels();
    // S × n predictions, row-major, via one gemm: B (S × V) · X (V × n).
    let mut pred = vec![0.0; s * n];
    unsafe {
        matrixmultiply::dgemm(
            s,
            v,
            n,
            1.0,
            draws.b.as_ptr(),
            v as isize,
            1,
            x_new.values().as_ptr(),
            1,
            v as isize,
            0.0,
            pred.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for d in 0..s {
        let g = draws.gamma_draw(d);
        for i in 0..n {
            let mut e = m.center;
            for (k, gk) in g.iter().enumerate() {
                e += eta_new[(i, k)] * gk;
            }
            pred[d * n + i] += e;
        }
    }
    let sorted: Vec<Vec<f64>> = par::map(n, |i| {
        let mut col: Vec<f64> = (0..s).map(|d| pred[d * n + i]).collect();
        col.sort_by(f64::total_cmp);
        col
    });
    Ok(Prediction {
        median: sorted.iter().map(|c| quantile_sorted(c, 0.5)).collect(),
        levels: levels.to_vec(),
        quantiles: levels
            .iter()
            .map(|&p| sorted.iter().map(|c| quantile_sorted(c, p)).collect())
            .collect(),
    })
}
