//! Full conditional distributions of the Tucker regression hierarchy.
//!
//! ```text
//! y_i        ~ N(⟨B, X_i⟩ + γᵀη_i, σ²)
//! B          = Σ_r g_r β_{1,r_1} ∘ … ∘ β_{D,r_D}
//! β_{j,r}    ~ N(0, τ W_{j,r}),   W_{j,r} = diag(ω_{j,r,ℓ})
//! ω_{j,r,ℓ}  ~ Exp(λ²_{j,r} / 2),  λ_{j,r} ~ Gamma(a_λ, b_λ),  τ ~ Gamma(a_τ, b_τ)
//! g_r        ~ N(0, z v_r),        v_r ~ Exp(φ²_r / 2),  φ_r ~ Gamma(a_φ, b_φ),  z ~ Gamma(a_z, b_z)
//! γ          ~ N(μ_γ, Σ_γ),        σ² ~ InvGamma(a_σ, b_σ)
//! ```
//!
//! `λ` and `φ` are drawn from their conditionals with the local scales
//! integrated out (a product of Laplace likelihoods), after which `ω` / `v`
//! must be refreshed before anything else conditions on them.
//!
//! The `update_*` functions compute everything they need from a
//! [`ModelState`] and a [`Dataset`] and return the new value without
//! modifying the state. The sampler uses the same building blocks with
//! cached intermediate quantities.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams, ModelState};
use crate::par;
use crate::rng::{gig_unchecked, sample_gamma, sample_inv_gamma, sample_mvn_precision, RngStream};
use crate::tensor::{contract_mode, dot, tucker_compose, DenseTensor};

/// Local scales are kept inside `[SCALE_FLOOR, SCALE_CAP]` so the prior
/// precisions `1/(τω)` and `1/(z v)` stay finite.
pub const SCALE_FLOOR: f64 = 1e-12;
pub const SCALE_CAP: f64 = 1e12;

/// Clamps a local scale; the flag reports whether clamping happened.
pub fn clamp_scale(x: f64) -> (f64, bool) {
    if x < SCALE_FLOOR || x.is_nan() {
        (SCALE_FLOOR, true)
    } else if x > SCALE_CAP {
        (SCALE_CAP, true)
    } else {
        (x, false)
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `Σ_i log N(y_i; pred_i, σ²)`.
pub(crate) fn gaussian_loglik(y: &[f64], pred: &[f64], sigma2: f64) -> f64 {
    let ssr: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (y.len() as f64) * (LN_2PI + sigma2.ln()) - 0.5 * ssr / sigma2
}

/// `⟨B, X_i⟩ + γᵀη_i` for every subject.
pub fn linear_predictor(state: &ModelState, data: &Dataset) -> Result<Vec<f64>> {
    check_shapes(state, data)?;
    let b = tucker_compose(&state.tucker);
    let v = data.voxels();
    Ok((0..data.n())
        .map(|i| dot(b.values(), &data.x().values()[i * v..(i + 1) * v]) + data.eta_dot(i, &state.gamma))
        .collect())
}

pub fn log_likelihood(state: &ModelState, data: &Dataset) -> Result<f64> {
    let pred = linear_predictor(state, data)?;
    Ok(gaussian_loglik(data.y(), &pred, state.sigma2))
}

fn check_shapes(state: &ModelState, data: &Dataset) -> Result<()> {
    if state.dims() != data.dims() {
        return Err(Error::Shape(format!(
            "state dims {:?} vs data dims {:?}",
            state.dims(),
            data.dims()
        )));
    }
    if state.gamma.len() != data.q() {
        return Err(Error::Shape(format!(
            "state has {} scalar coefficients, data has q = {}",
            state.gamma.len(),
            data.q()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared building blocks.

/// Contracts every image mode except `j` of the stacked covariates against the
/// corresponding factor matrix. The result has dims
/// `(R_1, …, p_j, …, R_D, n)`.
pub(crate) fn contract_all_but<'a>(
    x: &'a DenseTensor,
    factors: &[DMatrix<f64>],
    j: usize,
) -> Cow<'a, DenseTensor> {
    let mut t: Cow<'a, DenseTensor> = Cow::Borrowed(x);
    for (k, beta) in factors.iter().enumerate() {
        if k != j {
            t = Cow::Owned(contract_mode(&t, k, beta).expect("factor shapes match"));
        }
    }
    t
}

/// All-mode contraction: the `∏R × n` design of core summand projections.
pub(crate) fn core_design(x: &DenseTensor, factors: &[DMatrix<f64>]) -> Vec<f64> {
    let order = factors.len();
    let partial = contract_all_but(x, factors, order - 1);
    contract_mode(&partial, order - 1, &factors[order - 1])
        .expect("factor shapes match")
        .into_values()
}

/// For each rank index `r` of mode `j`, the `p_j × n` matrix whose column
/// `i` is `u_i(r) = Σ_{r': r'_j = r} g_{r'} · (X_i contracted on modes ≠ j)`,
/// so that `⟨B, X_i⟩ = Σ_r β_{j,r}ᵀ u_i(r)`.
pub(crate) fn margin_designs(yj: &DenseTensor, core: &DenseTensor, j: usize) -> Vec<Vec<f64>> {
    let ranks = core.dims();
    let a_len: usize = ranks[..j].iter().product();
    let rj = ranks[j];
    let b_len: usize = ranks[j + 1..].iter().product();
    let pj = yj.dims()[j];
    let n = *yj.dims().last().unwrap();
    let g = core.values();
    let y = yj.values();
    let block = a_len * pj * b_len;
    // Subject-major scratch `w[l + r p_j + i p_j R_j]`, filled in fixed
    // subject chunks, then split by rank index.
    let mut w = vec![0.0; pj * rj * n];
    par::for_each_chunk_mut(&mut w, pj * rj * par::CHUNK, |c, out| {
        for (k, ui) in out.chunks_exact_mut(pj * rj).enumerate() {
            let i = c * par::CHUNK + k;
            let yi = &y[i * block..(i + 1) * block];
            for b in 0..b_len {
                for a in 0..a_len {
                    for r in 0..rj {
                        let gv = g[a + r * a_len + b * a_len * rj];
                        if gv == 0.0 {
                            continue;
                        }
                        let u = &mut ui[r * pj..(r + 1) * pj];
                        let ys = &yi[a + b * a_len * pj..];
                        for (l, ul) in u.iter_mut().enumerate() {
                            *ul += gv * ys[l * a_len];
                        }
                    }
                }
            }
        }
    });
    (0..rj)
        .map(|r| {
            let mut u = Vec::with_capacity(pj * n);
            for i in 0..n {
                let base = i * pj * rj + r * pj;
                u.extend_from_slice(&w[base..base + pj]);
            }
            u
        })
        .collect()
}

/// `U Uᵀ` for a `rows × n` column-major matrix, reduced over fixed subject
/// chunks in order.
pub(crate) fn gram(u: &[f64], rows: usize, n: usize) -> DMatrix<f64> {
    let parts = par::map_chunks(n, 256, |range| {
        let mut c = vec![0.0; rows * rows];
        let cols = range.len();
        let src = &u[range.start * rows..range.end * rows];
        unsafe {
            matrixmultiply::dgemm(
                rows,
                cols,
                rows,
                1.0,
                src.as_ptr(),
                1,
                rows as isize,
                src.as_ptr(),
                rows as isize,
                1,
                0.0,
                c.as_mut_ptr(),
                1,
                rows as isize,
            );
        }
        c
    });
    let sum = par::sum_in_order(parts);
    if sum.is_empty() {
        return DMatrix::zeros(rows, rows);
    }
    DMatrix::from_vec(rows, rows, sum)
}

/// `U w` for a `rows × n` column-major matrix.
pub(crate) fn mat_vec(u: &[f64], rows: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for (col, &wi) in u.chunks_exact(rows).zip(w) {
        for (o, c) in out.iter_mut().zip(col) {
            *o += c * wi;
        }
    }
    out
}

/// Precision and mean term of a Gaussian regression block with design
/// `U` (`rows × n`), working response `ỹ` and diagonal prior variances.
pub(crate) fn regression_system(
    u: &[f64],
    rows: usize,
    ytilde: &[f64],
    sigma2: f64,
    prior_var: impl Fn(usize) -> f64,
) -> (DMatrix<f64>, Vec<f64>) {
    let n = ytilde.len();
    let mut q = gram(u, rows, n) / sigma2;
    for l in 0..rows {
        q[(l, l)] += 1.0 / prior_var(l);
    }
    let m: Vec<f64> = mat_vec(u, rows, ytilde).into_iter().map(|x| x / sigma2).collect();
    (q, m)
}

pub(crate) fn draw_sigma2(s: &mut RngStream, ssr: f64, n: usize, h: &Hyperparams) -> Result<f64> {
    sample_inv_gamma(s, h.a_sigma + n as f64 / 2.0, h.b_sigma + ssr / 2.0)
}

/// Prior precision `Σ_γ⁻¹` and `Σ_γ⁻¹ μ_γ`.
#[derive(Clone, Debug)]
pub(crate) struct GammaPrior {
    pub precision: DMatrix<f64>,
    pub precision_mean: DVector<f64>,
}

impl GammaPrior {
    pub fn new(h: &Hyperparams) -> Result<Self> {
        let q = h.q();
        if q == 0 {
            return Ok(Self {
                precision: DMatrix::zeros(0, 0),
                precision_mean: DVector::zeros(0),
            });
        }
        let precision = h
            .sigma_gamma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("sigma_gamma".into()))?;
        let precision_mean = &precision * DVector::from_column_slice(&h.mu_gamma);
        Ok(Self {
            precision,
            precision_mean,
        })
    }
}

/// `ηᵀη`.
pub(crate) fn eta_gram(eta: &DMatrix<f64>) -> DMatrix<f64> {
    eta.transpose() * eta
}

pub(crate) fn draw_gamma(
    s: &mut RngStream,
    eta: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    resid: &[f64],
    sigma2: f64,
    prior: &GammaPrior,
) -> Result<Vec<f64>> {
    let q = eta.ncols();
    if q == 0 {
        return Ok(Vec::new());
    }
    let precision = gram / sigma2 + &prior.precision;
    let mut m = prior.precision_mean.clone();
    for k in 0..q {
        let mut acc = 0.0;
        for (i, r) in resid.iter().enumerate() {
            acc += eta[(i, k)] * r;
        }
        m[k] += acc / sigma2;
    }
    sample_mvn_precision(s, m.as_slice(), precision)
}

/// `GIG(order, a, b)` with the improper `b = 0, order ≤ 0` case replaced by
/// the `Gamma(prior_shape, prior_rate)` prior draw.
fn gig_or_prior(
    s: &mut RngStream,
    order: f64,
    a: f64,
    b: f64,
    prior_shape: f64,
    prior_rate: f64,
) -> Result<f64> {
    if b <= 0.0 && order <= 0.0 {
        return sample_gamma(s, prior_shape, prior_rate);
    }
    Ok(gig_unchecked(s, order, a, b.max(0.0)))
}

pub(crate) fn draw_omega(s: &mut RngStream, beta: f64, lambda: f64, tau: f64) -> (f64, bool) {
    clamp_scale(gig_unchecked(s, 0.5, lambda * lambda, beta * beta / tau))
}

pub(crate) fn draw_lambda(
    s: &mut RngStream,
    beta_col: &[f64],
    tau: f64,
    h: &Hyperparams,
) -> Result<f64> {
    let l1: f64 = beta_col.iter().map(|b| b.abs()).sum();
    sample_gamma(s, h.a_lambda + beta_col.len() as f64, h.b_lambda + l1 / tau.sqrt())
}

pub(crate) fn draw_tau(
    s: &mut RngStream,
    factors: &[DMatrix<f64>],
    omega: &[DMatrix<f64>],
    h: &Hyperparams,
) -> Result<f64> {
    let mut count = 0usize;
    let mut ss = 0.0;
    for (b, w) in factors.iter().zip(omega) {
        count += b.len();
        for (x, o) in b.iter().zip(w.iter()) {
            ss += x * x / o;
        }
    }
    gig_or_prior(s, h.a_tau - count as f64 / 2.0, 2.0 * h.b_tau, ss, h.a_tau, h.b_tau)
}

pub(crate) fn draw_phi(s: &mut RngStream, g: f64, z: f64, h: &Hyperparams) -> Result<f64> {
    sample_gamma(s, h.a_phi + 1.0, h.b_phi + g.abs() / z.sqrt())
}

pub(crate) fn draw_v(s: &mut RngStream, g: f64, phi: f64, z: f64) -> (f64, bool) {
    clamp_scale(gig_unchecked(s, 0.5, phi * phi, g * g / z))
}

pub(crate) fn draw_z(s: &mut RngStream, core: &[f64], v: &[f64], h: &Hyperparams) -> Result<f64> {
    let ss: f64 = core.iter().zip(v).map(|(g, vv)| g * g / vv).sum();
    gig_or_prior(s, h.a_z - core.len() as f64 / 2.0, 2.0 * h.b_z, ss, h.a_z, h.b_z)
}

// ---------------------------------------------------------------------------
// Public updates computed from scratch.

/// Draw of `γ` given everything else.
pub fn update_gamma(
    s: &mut RngStream,
    state: &ModelState,
    data: &Dataset,
    h: &Hyperparams,
) -> Result<Vec<f64>> {
    check_shapes(state, data)?;
    let b = tucker_compose(&state.tucker);
    let v = data.voxels();
    let resid: Vec<f64> = (0..data.n())
        .map(|i| data.y()[i] - dot(b.values(), &data.x().values()[i * v..(i + 1) * v]))
        .collect();
    let prior = GammaPrior::new(h)?;
    draw_gamma(s, data.eta(), &eta_gram(data.eta()), &resid, state.sigma2, &prior)
}

/// Draw of `σ²` given everything else.
pub fn update_sigma2(
    s: &mut RngStream,
    state: &ModelState,
    data: &Dataset,
    h: &Hyperparams,
) -> Result<f64> {
    let pred = linear_predictor(state, data)?;
    let ssr: f64 = data.y().iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
    draw_sigma2(s, ssr, data.n(), h)
}

/// Precision and mean term of the full conditional of `β_{j,r}`.
pub fn beta_conditional(
    state: &ModelState,
    data: &Dataset,
    j: usize,
    r: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_shapes(state, data)?;
    let order = state.tucker.order();
    if j >= order || r >= state.ranks()[j] {
        return Err(Error::InvalidParameter(format!("no factor column ({j}, {r})")));
    }
    let factors = state.tucker.factors();
    let yj = contract_all_but(data.x(), factors, j);
    let designs = margin_designs(&yj, state.tucker.core(), j);
    let pj = factors[j].nrows();
    let n = data.n();
    let ytilde: Vec<f64> = (0..n)
        .map(|i| {
            let total: f64 = designs
                .iter()
                .enumerate()
                .map(|(rr, u)| dot(factors[j].column(rr).as_slice(), &u[i * pj..(i + 1) * pj]))
                .sum();
            let own = dot(factors[j].column(r).as_slice(), &designs[r][i * pj..(i + 1) * pj]);
            data.y()[i] - data.eta_dot(i, &state.gamma) - (total - own)
        })
        .collect();
    let omega = &state.omega[j];
    Ok(regression_system(&designs[r], pj, &ytilde, state.sigma2, |l| {
        state.tau * clamp_scale(omega[(l, r)]).0
    }))
}

/// Draw of the factor column `β_{j,r}`.
pub fn update_beta_margin(
    s: &mut RngStream,
    state: &ModelState,
    data: &Dataset,
    _h: &Hyperparams,
    j: usize,
    r: usize,
) -> Result<Vec<f64>> {
    let (q, m) = beta_conditional(state, data, j, r)?;
    sample_mvn_precision(s, &m, q)
}

/// Precision and mean term of the joint full conditional of `vec(G)`.
pub fn core_conditional(state: &ModelState, data: &Dataset) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_shapes(state, data)?;
    let design = core_design(data.x(), state.tucker.factors());
    let cells = state.v.len();
    let ytilde: Vec<f64> = (0..data.n())
        .map(|i| data.y()[i] - data.eta_dot(i, &state.gamma))
        .collect();
    Ok(regression_system(&design, cells, &ytilde, state.sigma2, |c| {
        state.z * clamp_scale(state.v[c]).0
    }))
}

/// Joint draw of every core cell, returned in core layout.
pub fn update_core(
    s: &mut RngStream,
    state: &ModelState,
    data: &Dataset,
    _h: &Hyperparams,
) -> Result<Vec<f64>> {
    let (q, m) = core_conditional(state, data)?;
    sample_mvn_precision(s, &m, q)
}

/// Draw of `ω_{j,r,ℓ} ~ GIG(1/2, λ²_{j,r}, β²_{j,r,ℓ}/τ)`.
pub fn update_omega(
    s: &mut RngStream,
    state: &ModelState,
    _h: &Hyperparams,
    j: usize,
    r: usize,
    l: usize,
) -> f64 {
    let beta = state.tucker.factors()[j][(l, r)];
    draw_omega(s, beta, state.lambda[j][r], state.tau).0
}

/// Draw of `λ_{j,r}` with the local scales of column `(j, r)` integrated out.
/// The caller must refresh `ω_{j,r,·}` before they are used again.
pub fn update_lambda(
    s: &mut RngStream,
    state: &ModelState,
    h: &Hyperparams,
    j: usize,
    r: usize,
) -> Result<f64> {
    let col = state.tucker.factors()[j].column(r);
    draw_lambda(s, col.as_slice(), state.tau, h)
}

pub fn update_tau(s: &mut RngStream, state: &ModelState, h: &Hyperparams) -> Result<f64> {
    draw_tau(s, state.tucker.factors(), &state.omega, h)
}

/// New core scales: for each cell `φ_r` (with `v_r` integrated out) then
/// `v_r`, and finally `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreScales {
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub z: f64,
}

pub fn update_v_phi_z(s: &mut RngStream, state: &ModelState, h: &Hyperparams) -> Result<CoreScales> {
    let g = state.tucker.core().values();
    let mut v = Vec::with_capacity(g.len());
    let mut phi = Vec::with_capacity(g.len());
    for &gc in g {
        let f = draw_phi(s, gc, state.z, h)?;
        v.push(draw_v(s, gc, f, state.z).0);
        phi.push(f);
    }
    let z = draw_z(s, g, &v, h)?;
    Ok(CoreScales { v, phi, z })
}
