use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::rng::{sample_exponential, sample_gamma, sample_inv_gamma, sample_mvn_precision, RngStream};
use crate::tensor::{DenseTensor, TuckerFactorSet};

use super::conditionals::clamp_scale;

/// Every latent variable of one MCMC iteration.
///
/// `omega[j]` has the shape of factor `j` (`p_j × R_j`) and holds the local
/// scales on the diagonal of `W_{j,r}` column by column. `v` and `phi` are
/// laid out like the core tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub tucker: TuckerFactorSet,
    pub omega: Vec<DMatrix<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub tau: f64,
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub z: f64,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

impl ModelState {
    pub fn dims(&self) -> Vec<usize> {
        self.tucker.dims()
    }

    pub fn ranks(&self) -> &[usize] {
        self.tucker.ranks()
    }

    /// True when every scale variable is strictly positive and finite.
    pub fn scales_valid(&self) -> bool {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        ok(self.tau)
            && ok(self.z)
            && ok(self.sigma2)
            && self.omega.iter().all(|m| m.iter().all(|&x| ok(x)))
            && self.lambda.iter().flatten().all(|&x| ok(x))
            && self.v.iter().all(|&x| ok(x))
            && self.phi.iter().all(|&x| ok(x))
    }
}

pub(crate) fn validate_ranks(dims: &[usize], ranks: &[usize]) -> Result<()> {
    if dims.len() != ranks.len() || dims.is_empty() {
        return Err(Error::Shape(format!(
            "{} ranks for a tensor of order {}",
            ranks.len(),
            dims.len()
        )));
    }
    if ranks.contains(&0) || dims.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "dims {dims:?} and ranks {ranks:?} must all be >= 1"
        )));
    }
    let cells: usize = ranks.iter().product();
    if cells > 10_000 {
        return Err(Error::InvalidParameter(format!(
            "core tensor has {cells} cells; at most 10000 are supported"
        )));
    }
    Ok(())
}

/// Draws every scale from its prior, factor entries from N(0, 0.01), core
/// entries from N(0, 1); `γ = μ_γ` and `σ²` starts at its prior mean.
pub fn init_state(
    s: &mut RngStream,
    dims: &[usize],
    ranks: &[usize],
    h: &Hyperparams,
    q: usize,
) -> Result<ModelState> {
    validate_ranks(dims, ranks)?;
    h.validate(q)?;
    let mut lambda = Vec::with_capacity(dims.len());
    let mut omega = Vec::with_capacity(dims.len());
    for (&p, &r) in dims.iter().zip(ranks) {
        let lam: Vec<f64> = (0..r)
            .map(|_| sample_gamma(s, h.a_lambda, h.b_lambda))
            .collect::<Result<_>>()?;
        let mut om = DMatrix::zeros(p, r);
        for (c, &l) in lam.iter().enumerate() {
            for row in 0..p {
                om[(row, c)] = clamp_scale(sample_exponential(s, l * l / 2.0)?).0;
            }
        }
        lambda.push(lam);
        omega.push(om);
    }
    let tau = sample_gamma(s, h.a_tau, h.b_tau)?;
    let cells: usize = ranks.iter().product();
    let phi: Vec<f64> = (0..cells)
        .map(|_| sample_gamma(s, h.a_phi, h.b_phi))
        .collect::<Result<_>>()?;
    let v: Vec<f64> = phi
        .iter()
        .map(|&f| sample_exponential(s, f * f / 2.0).map(|x| clamp_scale(x).0))
        .collect::<Result<_>>()?;
    let z = sample_gamma(s, h.a_z, h.b_z)?;

    let factors: Vec<DMatrix<f64>> = dims
        .iter()
        .zip(ranks)
        .map(|(&p, &r)| DMatrix::from_fn(p, r, |_, _| 0.1 * s.normal()))
        .collect();
    let core = DenseTensor::from_fn(ranks, |_| s.normal());
    Ok(ModelState {
        tucker: TuckerFactorSet::new(factors, core)?,
        omega,
        lambda,
        tau,
        v,
        phi,
        z,
        gamma: h.mu_gamma.clone(),
        sigma2: h.sigma2_prior_mean(),
    })
}

/// A joint draw of every latent variable from the prior: unlike
/// [`init_state`], factor and core entries are drawn given their scales,
/// and `γ`, `σ²` from their priors.
pub fn sample_prior(
    s: &mut RngStream,
    dims: &[usize],
    ranks: &[usize],
    h: &Hyperparams,
    q: usize,
) -> Result<ModelState> {
    let mut state = init_state(s, dims, ranks, h, q)?;
    let tau = state.tau;
    for (f, om) in state.tucker.factors_mut().iter_mut().zip(&state.omega) {
        for (b, w) in f.iter_mut().zip(om.iter()) {
            *b = (tau * w).sqrt() * s.normal();
        }
    }
    let z = state.z;
    for (g, v) in state.tucker.core_mut().values_mut().iter_mut().zip(&state.v) {
        *g = (z * v).sqrt() * s.normal();
    }
    if q > 0 {
        let precision = h
            .sigma_gamma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("sigma_gamma".into()))?;
        let mean_term = &precision * nalgebra::DVector::from_column_slice(&h.mu_gamma);
        state.gamma = sample_mvn_precision(s, mean_term.as_slice(), precision)?;
    }
    state.sigma2 = sample_inv_gamma(s, h.a_sigma, h.b_sigma)?;
    Ok(state)
}
