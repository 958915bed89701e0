use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::conditionals::{
    contract_all_but, draw_gamma, draw_lambda, draw_omega, draw_phi, draw_sigma2, draw_tau,
    draw_v, draw_z, eta_gram, gaussian_loglik, margin_designs, regression_system, GammaPrior,
};
use crate::model::draws::{Manifest, PosteriorDraws, DRAWS_FORMAT_VERSION};
use crate::model::state::validate_ranks;
use crate::model::{init_state, Dataset, Hyperparams, ModelState};
use crate::par;
use crate::rng::{sample_mvn_precision, RngStream};
use crate::tensor::{contract_mode, dot, tucker_compose, DenseTensor};

/// Parameter blocks, each with its own random substream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Init = 0,
    Beta = 1,
    Local = 2,
    Tau = 3,
    Core = 4,
    CoreScale = 5,
    Gamma = 6,
    Sigma2 = 7,
    /// Reserved for callers that simulate responses alongside a chain.
    Data = 8,
    Preflight = 9,
}

const BLOCKS_PER_CHAIN: u64 = 16;

/// Stream id of `block` in chain `chain`.
pub fn stream_id(chain: u64, block: Block) -> u64 {
    chain * BLOCKS_PER_CHAIN + block as u64
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub ranks: Vec<usize>,
    /// Total sweeps, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain: u64,
    /// Fit on `(y - mean) / sd` and map draws back to the original units.
    pub center_scale: bool,
    /// Replace every rank of 1 by 2 instead of only warning.
    pub auto_raise_rank1: bool,
    /// Also retain factor matrices and core per draw.
    pub keep_factors: bool,
    /// `None` uses [`Hyperparams::defaults`] for the (possibly raised) ranks.
    pub hyper: Option<Hyperparams>,
}

impl FitConfig {
    pub fn new(ranks: Vec<usize>) -> Self {
        Self {
            ranks,
            iterations: 11_000,
            burn_in: 1_000,
            thin: 1,
            seed: 0,
            chain: 0,
            center_scale: true,
            auto_raise_rank1: false,
            keep_factors: false,
            hyper: None,
        }
    }

    pub fn retained(&self) -> usize {
        if self.thin == 0 {
            return 0;
        }
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be >= 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParameter(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }

    /// Ranks actually fitted and the warnings the rank-1 guard produces.
    pub fn effective_ranks(&self) -> (Vec<usize>, Vec<String>) {
        if !self.ranks.contains(&1) {
            return (self.ranks.clone(), Vec::new());
        }
        if self.auto_raise_rank1 {
            let raised: Vec<usize> = self.ranks.iter().map(|&r| r.max(2)).collect();
            let msg = format!(
                "ranks {:?} contain a rank of 1; raised to {:?} (auto_raise_rank1)",
                self.ranks, raised
            );
            (raised, vec![msg])
        } else {
            let msg = format!(
                "ranks {:?} contain a rank of 1, which can make the chain diverge \
                 because the Tucker factors are not identifiable; raising every rank \
                 to at least 2 usually avoids this (set auto_raise_rank1)",
                self.ranks
            );
            (self.ranks.clone(), vec![msg])
        }
    }
}

/// One Gibbs chain in working units.
///
/// The chain caches `⟨B, X_i⟩` for every subject. Within a sweep the factor
/// block of each mode recomputes it from scratch, then keeps it current
/// after each column draw.
pub struct Chain<'a> {
    x: &'a DenseTensor,
    eta: &'a DMatrix<f64>,
    y: Vec<f64>,
    h: Hyperparams,
    state: ModelState,
    eta_gram: DMatrix<f64>,
    gamma_prior: GammaPrior,
    tensor: Vec<f64>,
    loglik: f64,
    clamp_hits: u64,
    beta_rng: RngStream,
    local_rng: RngStream,
    tau_rng: RngStream,
    core_rng: RngStream,
    core_scale_rng: RngStream,
    gamma_rng: RngStream,
    sigma2_rng: RngStream,
}

impl<'a> Chain<'a> {
    /// A chain on `data` whose response is replaced by `y`.
    pub fn new(
        data: &'a Dataset,
        y: Vec<f64>,
        state: ModelState,
        h: Hyperparams,
        seed: u64,
        chain: u64,
    ) -> Result<Self> {
        if y.len() != data.n() {
            return Err(Error::Shape(format!("{} responses for n = {}", y.len(), data.n())));
        }
        if state.dims() != data.dims() || state.gamma.len() != data.q() {
            return Err(Error::Shape("state does not match the dataset".into()));
        }
        h.validate(data.q())?;
        let rng = |b| RngStream::new(seed, stream_id(chain, b));
        let mut c = Self {
            x: data.x(),
            eta: data.eta(),
            y,
            eta_gram: eta_gram(data.eta()),
            gamma_prior: GammaPrior::new(&h)?,
            h,
            state,
            tensor: Vec::new(),
            loglik: f64::NAN,
            clamp_hits: 0,
            beta_rng: rng(Block::Beta),
            local_rng: rng(Block::Local),
            tau_rng: rng(Block::Tau),
            core_rng: rng(Block::Core),
            core_scale_rng: rng(Block::CoreScale),
            gamma_rng: rng(Block::Gamma),
            sigma2_rng: rng(Block::Sigma2),
        };
        c.refresh();
        Ok(c)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    /// Replaces the response; the state is kept.
    pub fn set_response(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(Error::Shape(format!("{} responses for n = {}", y.len(), self.y.len())));
        }
        self.y = y;
        self.refresh();
        Ok(())
    }

    /// `⟨B, X_i⟩` for the current state.
    pub fn tensor_term(&self) -> &[f64] {
        &self.tensor
    }

    /// Log-likelihood of the current state.
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Number of local-scale draws clamped so far.
    pub fn clamp_hits(&self) -> u64 {
        self.clamp_hits
    }

    fn eta_dot(&self, i: usize, gamma: &[f64]) -> f64 {
        gamma.iter().enumerate().map(|(k, g)| self.eta[(i, k)] * g).sum()
    }

    fn refresh(&mut self) {
        let b = tucker_compose(&self.state.tucker);
        let v = b.len();
        let xs = self.x.values();
        self.tensor = par::map(self.y.len(), |i| dot(b.values(), &xs[i * v..(i + 1) * v]));
        self.loglik = self.current_loglik();
    }

    fn current_loglik(&self) -> f64 {
        let pred: Vec<f64> = (0..self.y.len())
            .map(|i| self.tensor[i] + self.eta_dot(i, &self.state.gamma))
            .collect();
        gaussian_loglik(&self.y, &pred, self.state.sigma2)
    }

    /// One iteration: factor columns (mode by mode), then each `λ_{j,r}` with
    /// its `ω_{j,r,·}` refreshed, `τ`, the core, `φ` with `v` per cell, `z`,
    /// `γ` and `σ²`.
    pub fn sweep(&mut self) -> Result<()> {
        let n = self.y.len();
        let gamma = self.state.gamma.clone();
        let base: Vec<f64> = (0..n).map(|i| self.y[i] - self.eta_dot(i, &gamma)).collect();

        let order = self.state.tucker.order();
        let mut last = None;
        for j in 0..order {
            last = Some(self.update_mode(j, &base)?);
        }
        self.update_local_scales()?;
        self.state.tau = draw_tau(&mut self.tau_rng, self.state.tucker.factors(), &self.state.omega, &self.h)?;
        self.update_core(&last.expect("order >= 1"), &base)?;
        self.update_core_scales()?;

        let resid: Vec<f64> = self.y.iter().zip(&self.tensor).map(|(y, t)| y - t).collect();
        self.state.gamma = draw_gamma(
            &mut self.gamma_rng,
            self.eta,
            &self.eta_gram,
            &resid,
            self.state.sigma2,
            &self.gamma_prior,
        )?;
        let ssr: f64 = (0..n)
            .map(|i| {
                let e = resid[i] - self.eta_dot(i, &self.state.gamma);
                e * e
            })
            .sum();
        self.state.sigma2 = draw_sigma2(&mut self.sigma2_rng, ssr, n, &self.h)?;
        self.loglik = self.current_loglik();
        Ok(())
    }

    fn update_mode(&mut self, j: usize, base: &[f64]) -> Result<Cow<'a, DenseTensor>> {
        let yj = contract_all_but(self.x, self.state.tucker.factors(), j);
        let designs = margin_designs(&yj, self.state.tucker.core(), j);
        let n = base.len();
        let pj = self.state.tucker.factors()[j].nrows();
        let project = |beta: &[f64], u: &[f64]| -> Vec<f64> {
            (0..n).map(|i| dot(beta, &u[i * pj..(i + 1) * pj])).collect()
        };
        self.tensor = vec![0.0; n];
        for (r, u) in designs.iter().enumerate() {
            let col = self.state.tucker.factors()[j].column(r).iter().copied().collect::<Vec<_>>();
            for (t, p) in self.tensor.iter_mut().zip(project(&col, u)) {
                *t += p;
            }
        }
        for (r, u) in designs.iter().enumerate() {
            let old: Vec<f64> = self.state.tucker.factors()[j].column(r).iter().copied().collect();
            let old_proj = project(&old, u);
            let ytilde: Vec<f64> = (0..n).map(|i| base[i] - (self.tensor[i] - old_proj[i])).collect();
            let tau = self.state.tau;
            let omega = &self.state.omega[j];
            let (q, m) = regression_system(u, pj, &ytilde, self.state.sigma2, |l| tau * omega[(l, r)]);
            let new = sample_mvn_precision(&mut self.beta_rng, &m, q)?;
            let new_proj = project(&new, u);
            for i in 0..n {
                self.tensor[i] += new_proj[i] - old_proj[i];
            }
            self.state.tucker.factors_mut()[j].column_mut(r).copy_from_slice(&new);
        }
        Ok(yj)
    }

    fn update_local_scales(&mut self) -> Result<()> {
        let tau = self.state.tau;
        for j in 0..self.state.tucker.order() {
            let f = &self.state.tucker.factors()[j];
            for r in 0..f.ncols() {
                let lambda = draw_lambda(&mut self.local_rng, f.column(r).as_slice(), tau, &self.h)?;
                self.state.lambda[j][r] = lambda;
                for l in 0..f.nrows() {
                    let (w, hit) = draw_omega(&mut self.local_rng, f[(l, r)], lambda, tau);
                    self.clamp_hits += hit as u64;
                    self.state.omega[j][(l, r)] = w;
                }
            }
        }
        Ok(())
    }

    fn update_core(&mut self, last: &DenseTensor, base: &[f64]) -> Result<()> {
        let order = self.state.tucker.order();
        let design = contract_mode(last, order - 1, &self.state.tucker.factors()[order - 1])?.into_values();
        let cells = self.state.v.len();
        let z = self.state.z;
        let v = &self.state.v;
        let (q, m) = regression_system(&design, cells, base, self.state.sigma2, |c| z * v[c]);
        let g = sample_mvn_precision(&mut self.core_rng, &m, q)?;
        self.tensor = (0..base.len()).map(|i| dot(&g, &design[i * cells..(i + 1) * cells])).collect();
        self.state.tucker.core_mut().values_mut().copy_from_slice(&g);
        Ok(())
    }

    fn update_core_scales(&mut self) -> Result<()> {
        let z = self.state.z;
        let g = self.state.tucker.core().values();
        for (c, &gc) in g.iter().enumerate() {
            let phi = draw_phi(&mut self.core_scale_rng, gc, z, &self.h)?;
            let (v, hit) = draw_v(&mut self.core_scale_rng, gc, phi, z);
            self.clamp_hits += hit as u64;
            self.state.phi[c] = phi;
            self.state.v[c] = v;
        }
        self.state.z = draw_z(&mut self.core_scale_rng, g, &self.state.v, &self.h)?;
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Clone, Debug)]
pub struct FitOutput {
    pub draws: PosteriorDraws,
    pub warnings: Vec<String>,
    pub clamp_hits: u64,
}

/// Response centre and scale used when `center_scale` is on.
fn center_scale(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    if y.len() < 2 {
        return (0.0, 1.0);
    }
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        (mean, sd)
    } else {
        (mean, 1.0)
    }
}

pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<FitOutput> {
    fit_with_progress(data, cfg, |_, _| {})
}

/// Runs one chain, calling `progress(iteration, loglik)` after every sweep
/// (iterations count from 1, log-likelihood in the original units).
pub fn fit_with_progress(
    data: &Dataset,
    cfg: &FitConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<FitOutput> {
    cfg.validate()?;
    let (ranks, mut warnings) = cfg.effective_ranks();
    validate_ranks(data.dims(), &ranks)?;
    warnings.extend(data.collinearity_warnings(&mut RngStream::new(cfg.seed, stream_id(cfg.chain, Block::Preflight))));

    let (center, scale) = if cfg.center_scale { center_scale(data.y()) } else { (0.0, 1.0) };
    let y: Vec<f64> = data.y().iter().map(|v| (v - center) / scale).collect();
    let h = match &cfg.hyper {
        Some(h) => h.clone(),
        None => Hyperparams::defaults(data.order(), &ranks, data.q()),
    };
    h.validate(data.q())?;

    let mut init_rng = RngStream::new(cfg.seed, stream_id(cfg.chain, Block::Init));
    let state = init_state(&mut init_rng, data.dims(), &ranks, &h, data.q())?;
    let mut chain = Chain::new(data, y, state, h.clone(), cfg.seed, cfg.chain)?;

    let manifest = Manifest {
        format_version: DRAWS_FORMAT_VERSION,
        seed: cfg.seed,
        chain: cfg.chain,
        dims: data.dims().to_vec(),
        ranks: ranks.clone(),
        q: data.q(),
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        retained: cfg.retained(),
        center,
        scale,
        keep_factors: cfg.keep_factors,
        hyper: h,
    };
    let mut draws = PosteriorDraws::with_capacity(manifest);
    let ll_shift = data.n() as f64 * scale.ln();
    for it in 1..=cfg.iterations {
        chain.sweep()?;
        let ll = chain.loglik() - ll_shift;
        progress(it, ll);
        if it <= cfg.burn_in {
            draws.burn_in_loglik.push(ll);
            continue;
        }
        if !(it - cfg.burn_in).is_multiple_of(cfg.thin) {
            continue;
        }
        let st = chain.state();
        let b = tucker_compose(&st.tucker);
        draws.b.extend(b.values().iter().map(|v| v * scale));
        draws.gamma.extend(st.gamma.iter().map(|g| g * scale));
        draws.sigma2.push(st.sigma2 * scale * scale);
        draws.loglik.push(ll);
        draws.tau.push(st.tau);
        draws.z.push(st.z);
        if let Some(f) = draws.factors.as_mut() {
            for m in st.tucker.factors() {
                f.extend(m.iter());
            }
            f.extend(st.tucker.core().values().iter().map(|g| g * scale));
        }
    }
    let clamp_hits = chain.clamp_hits();
    if clamp_hits > 0 {
        warnings.push(format!(
            "{clamp_hits} local scale draws were clamped to [1e-12, 1e12]"
        ));
    }
    draws.check()?;
    Ok(FitOutput {
        draws,
        warnings,
        clamp_hits,
    })
}

/// Independent chains `0..chains` of the same configuration, run in
/// parallel; chain `k` uses `cfg.chain + k` for its substreams.
pub fn fit_chains(data: &Dataset, cfg: &FitConfig, chains: usize) -> Result<Vec<FitOutput>> {
    par::map(chains, |k| {
        let mut c = cfg.clone();
        c.chain = cfg.chain + k as u64;
        fit(data, &c)
    })
    .into_iter()
    .collect()
}
