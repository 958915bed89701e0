//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [data]       tensor, response, covariates
//! [model]      ranks, iterations, burn_in, thin, seed, chain,
//!              center_scale_response, auto_raise_rank1, keep_factors, max_rank
//! [hyper]      a_sigma … b_phi, mu_gamma, sigma_gamma
//! [selection]  s2means_b, fdr_q
//! [simulate]   dims, regions, radius_min, radius_max, peak, edge_fraction,
//!              n, gamma, sigma2, seed
//! ```
//!
//! `#` and `;` start comments. Unknown sections and keys are errors.
//! Hyperparameters act on the chain's working response, i.e. after
//! centring and scaling when `center_scale_response` is on.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_text, resolve, COVARIATE_NAME, RESPONSE_NAME, TENSOR_NAME};
use crate::model::{FitConfig, Hyperparams};
use crate::simgen::SimConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataPaths {
    pub tensor: PathBuf,
    pub response: PathBuf,
    pub covariates: Option<PathBuf>,
}

impl DataPaths {
    /// Canonical names inside `dir`.
    pub fn in_dir(dir: &Path, covariates: bool) -> Self {
        Self {
            tensor: dir.join(TENSOR_NAME),
            response: dir.join(RESPONSE_NAME),
            covariates: covariates.then(|| dir.join(COVARIATE_NAME)),
        }
    }

    /// Canonical names inside `dir`; covariates only if that file exists.
    pub fn discover(dir: &Path) -> Self {
        Self::in_dir(dir, dir.join(COVARIATE_NAME).exists())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub ranks: Option<Vec<usize>>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain: u64,
    pub center_scale_response: bool,
    pub auto_raise_rank1: bool,
    pub keep_factors: bool,
    /// Largest equal rank tried by the rank search.
    pub max_rank: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let f = FitConfig::new(Vec::new());
        Self {
            ranks: None,
            iterations: f.iterations,
            burn_in: f.burn_in,
            thin: f.thin,
            seed: f.seed,
            chain: f.chain,
            center_scale_response: f.center_scale,
            auto_raise_rank1: f.auto_raise_rank1,
            keep_factors: f.keep_factors,
            max_rank: 6,
        }
    }
}

/// Hyperparameters given explicitly; everything else uses the defaults for
/// the fitted order and ranks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HyperOverrides {
    pub scalars: Vec<(String, f64)>,
    pub mu_gamma: Option<Vec<f64>>,
    /// Either one value (times the identity) or `q²` values, row-major.
    pub sigma_gamma: Option<Vec<f64>>,
}

const HYPER_SCALARS: [&str; 10] = [
    "a_sigma", "b_sigma", "a_lambda", "b_lambda", "a_tau", "b_tau", "a_z", "b_z", "a_phi", "b_phi",
];

impl HyperOverrides {
    pub fn is_empty(&self) -> bool {
        self.scalars.is_empty() && self.mu_gamma.is_none() && self.sigma_gamma.is_none()
    }

    pub fn resolve(&self, order: usize, ranks: &[usize], q: usize) -> Result<Hyperparams> {
        let mut h = Hyperparams::defaults(order, ranks, q);
        for (k, v) in &self.scalars {
            let slot = match k.as_str() {
                "a_sigma" => &mut h.a_sigma,
                "b_sigma" => &mut h.b_sigma,
                "a_lambda" => &mut h.a_lambda,
                "b_lambda" => &mut h.b_lambda,
                "a_tau" => &mut h.a_tau,
                "b_tau" => &mut h.b_tau,
                "a_z" => &mut h.a_z,
                "b_z" => &mut h.b_z,
                "a_phi" => &mut h.a_phi,
                "b_phi" => &mut h.b_phi,
                _ => return Err(Error::Config(format!("unknown hyperparameter '{k}'"))),
            };
            *slot = *v;
        }
        if let Some(mu) = &self.mu_gamma {
            if mu.len() != q {
                return Err(Error::Config(format!("mu_gamma has {} values, expected q = {q}", mu.len())));
            }
            h.mu_gamma = mu.clone();
        }
        if let Some(s) = &self.sigma_gamma {
            h.sigma_gamma = match s.len() {
                1 => DMatrix::identity(q, q) * s[0],
                l if l == q * q => DMatrix::from_row_slice(q, q, s),
                l => return Err(Error::Config(format!("sigma_gamma has {l} values, expected 1 or q² = {}", q * q))),
            };
        }
        h.validate(q)?;
        Ok(h)
    }

    /// Every value of `h` as an explicit override.
    pub fn from_resolved(h: &Hyperparams) -> Self {
        let q = h.q();
        Self {
            scalars: h.scalars().iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            mu_gamma: Some(h.mu_gamma.clone()),
            sigma_gamma: Some((0..q * q).map(|k| h.sigma_gamma[(k / q.max(1), k % q.max(1))]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSection {
    /// Sequential 2-means gap; `None` uses the relative default.
    pub s2means_b: Option<f64>,
    pub fdr_q: f64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self { s2means_b: None, fdr_q: 0.05 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub data: Option<DataPaths>,
    pub model: ModelSection,
    pub hyper: HyperOverrides,
    pub selection: SelectionSection,
    pub simulate: SimConfig,
}

fn value<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("line {line}: invalid value '{v}' for {key}")))
}

fn list<T: FromStr>(key: &str, v: &str, line: usize) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| value(key, s.trim(), line)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_text(path)?, base)
    }

    /// Relative data paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let (mut tensor, mut response, mut covariates) = (None, None, None);
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split(['#', ';']).next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["data", "model", "hyper", "selection", "simulate"].contains(&section.as_str()) {
                    return Err(Error::Config(format!("line {line}: unknown section [{section}]")));
                }
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            if section.is_empty() {
                return Err(Error::Config(format!("line {line}: key '{k}' outside any section")));
            }
            if !seen.insert((section.clone(), k.to_string())) {
                return Err(Error::Config(format!("line {line}: duplicate key '{k}' in [{section}]")));
            }
            let m = &mut cfg.model;
            let s = &mut cfg.simulate;
            match (section.as_str(), k) {
                ("data", "tensor") => tensor = Some(resolve(base, Path::new(v))),
                ("data", "response") => response = Some(resolve(base, Path::new(v))),
                ("data", "covariates") => covariates = Some(resolve(base, Path::new(v))),
                ("model", "ranks") => m.ranks = Some(list(k, v, line)?),
                ("model", "iterations") => m.iterations = value(k, v, line)?,
                ("model", "burn_in") => m.burn_in = value(k, v, line)?,
                ("model", "thin") => m.thin = value(k, v, line)?,
                ("model", "seed") => m.seed = value(k, v, line)?,
                ("model", "chain") => m.chain = value(k, v, line)?,
                ("model", "center_scale_response") => m.center_scale_response = value(k, v, line)?,
                ("model", "auto_raise_rank1") => m.auto_raise_rank1 = value(k, v, line)?,
                ("model", "keep_factors") => m.keep_factors = value(k, v, line)?,
                ("model", "max_rank") => m.max_rank = value(k, v, line)?,
                ("hyper", "mu_gamma") => cfg.hyper.mu_gamma = Some(list(k, v, line)?),
                ("hyper", "sigma_gamma") => cfg.hyper.sigma_gamma = Some(list(k, v, line)?),
                ("hyper", k) if HYPER_SCALARS.contains(&k) => cfg.hyper.scalars.push((k.to_string(), value(k, v, line)?)),
                ("selection", "s2means_b") => cfg.selection.s2means_b = Some(value(k, v, line)?),
                ("selection", "fdr_q") => cfg.selection.fdr_q = value(k, v, line)?,
                ("simulate", "dims") => s.dims = list(k, v, line)?,
                ("simulate", "regions") => s.regions = value(k, v, line)?,
                ("simulate", "radius_min") => s.radius_min = value(k, v, line)?,
                ("simulate", "radius_max") => s.radius_max = value(k, v, line)?,
                ("simulate", "peak") => s.peak = value(k, v, line)?,
                ("simulate", "edge_fraction") => s.edge_fraction = value(k, v, line)?,
                ("simulate", "n") => s.n = value(k, v, line)?,
                ("simulate", "gamma") => s.gamma = list(k, v, line)?,
                ("simulate", "sigma2") => s.sigma2 = value(k, v, line)?,
                ("simulate", "seed") => s.seed = value(k, v, line)?,
                _ => return Err(Error::Config(format!("line {line}: unknown key '{k}' in [{section}]"))),
            }
        }
        cfg.data = match (tensor, response) {
            (Some(tensor), Some(response)) => Some(DataPaths { tensor, response, covariates }),
            (None, None) if covariates.is_none() => None,
            _ => return Err(Error::Config("[data] needs both tensor and response".into())),
        };
        Ok(cfg)
    }

    /// Complete configuration text; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.data {
            let _ = writeln!(s, "[data]\ntensor = {}\nresponse = {}", d.tensor.display(), d.response.display());
            if let Some(c) = &d.covariates {
                let _ = writeln!(s, "covariates = {}", c.display());
            }
            s.push('\n');
        }
        let m = &self.model;
        let _ = writeln!(s, "[model]");
        if let Some(r) = &m.ranks {
            let _ = writeln!(s, "ranks = {}", join(r));
        }
        let _ = writeln!(
            s,
            "iterations = {}\nburn_in = {}\nthin = {}\nseed = {}\nchain = {}\ncenter_scale_response = {}\nauto_raise_rank1 = {}\nkeep_factors = {}\nmax_rank = {}\n",
            m.iterations, m.burn_in, m.thin, m.seed, m.chain, m.center_scale_response, m.auto_raise_rank1, m.keep_factors, m.max_rank
        );
        if !self.hyper.is_empty() {
            let _ = writeln!(s, "[hyper]");
            for (k, v) in &self.hyper.scalars {
                let _ = writeln!(s, "{k} = {}", fmt_f64(*v));
            }
            if let Some(mu) = &self.hyper.mu_gamma {
                let _ = writeln!(s, "mu_gamma = {}", join_f64(mu));
            }
            if let Some(sg) = &self.hyper.sigma_gamma {
                let _ = writeln!(s, "sigma_gamma = {}", join_f64(sg));
            }
            s.push('\n');
        }
        let _ = writeln!(s, "[selection]");
        if let Some(b) = self.selection.s2means_b {
            let _ = writeln!(s, "s2means_b = {}", fmt_f64(b));
        }
        let _ = writeln!(s, "fdr_q = {}\n", fmt_f64(self.selection.fdr_q));
        let c = &self.simulate;
        let _ = writeln!(
            s,
            "[simulate]\ndims = {}\nregions = {}\nradius_min = {}\nradius_max = {}\npeak = {}\nedge_fraction = {}\nn = {}\ngamma = {}\nsigma2 = {}\nseed = {}",
            join(&c.dims),
            c.regions,
            fmt_f64(c.radius_min),
            fmt_f64(c.radius_max),
            fmt_f64(c.peak),
            fmt_f64(c.edge_fraction),
            c.n,
            join_f64(&c.gamma),
            fmt_f64(c.sigma2),
            c.seed
        );
        s
    }

    /// Sampler settings for `ranks` (or the configured ranks). Explicit
    /// hyperparameters are resolved against the effective ranks.
    pub fn fit_config(&self, ranks: Option<&[usize]>, order: usize, q: usize) -> Result<FitConfig> {
        let ranks = ranks
            .map(<[usize]>::to_vec)
            .or_else(|| self.model.ranks.clone())
            .ok_or_else(|| Error::Config("[model] ranks is required".into()))?;
        let m = &self.model;
        let mut f = FitConfig::new(ranks);
        f.iterations = m.iterations;
        f.burn_in = m.burn_in;
        f.thin = m.thin;
        f.seed = m.seed;
        f.chain = m.chain;
        f.center_scale = m.center_scale_response;
        f.auto_raise_rank1 = m.auto_raise_rank1;
        f.keep_factors = m.keep_factors;
        if !self.hyper.is_empty() {
            let (eff, _) = f.effective_ranks();
            f.hyper = Some(self.hyper.resolve(order, &eff, q)?);
        }
        f.validate()?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# fit settings
[data]
tensor = run1/X.btrt
response = /abs/y.txt

[model]
ranks = 3, 2
iterations = 500   ; short
burn_in = 100
seed = 7
auto_raise_rank1 = true

[hyper]
b_sigma = 12.5
sigma_gamma = 4

[selection]
fdr_q = 0.1
";

    #[test]
    fn parses_sections_and_resolves_paths() {
        let c = RunConfig::parse(SAMPLE, Path::new("/base")).unwrap();
        let d = c.data.as_ref().unwrap();
        assert_eq!(d.tensor, Path::new("/base/run1/X.btrt"));
        assert_eq!(d.response, Path::new("/abs/y.txt"));
        assert_eq!(d.covariates, None);
        assert_eq!(c.model.ranks, Some(vec![3, 2]));
        assert_eq!((c.model.iterations, c.model.burn_in, c.model.thin, c.model.seed), (500, 100, 1, 7));
        assert!(c.model.auto_raise_rank1 && c.model.center_scale_response);
        assert_eq!(c.selection.fdr_q, 0.1);
        let f = c.fit_config(None, 2, 2).unwrap();
        let h = f.hyper.unwrap();
        assert_eq!(h.b_sigma, 12.5);
        assert_eq!(h.sigma_gamma, DMatrix::identity(2, 2) * 4.0);
        assert_eq!(h.a_lambda, Hyperparams::defaults(2, &[3, 2], 2).a_lambda);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::parse(SAMPLE, Path::new("/base")).unwrap();
        c.selection.s2means_b = Some(0.1 + 0.2);
        c.hyper = HyperOverrides::from_resolved(&Hyperparams::defaults(2, &[3, 2], 2));
        let back = RunConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_malformed_keys_are_errors() {
        for bad in [
            "[model]\nrank = 2,2\n",
            "[modle]\n",
            "[model]\niterations = many\n",
            "ranks = 2\n",
            "[model]\nseed = 1\nseed = 2\n",
            "[data]\ntensor = x\n",
            "[hyper]\nc_sigma = 1\n",
        ] {
            assert!(matches!(RunConfig::parse(bad, Path::new(".")), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn ranks_are_required_for_fitting() {
        let c = RunConfig::parse("[model]\nseed = 3\n", Path::new(".")).unwrap();
        assert!(c.fit_config(None, 2, 0).is_err());
        assert_eq!(c.fit_config(Some(&[2, 2]), 2, 0).unwrap().ranks, vec![2, 2]);
    }

    #[test]
    fn wrong_sized_gamma_prior_is_rejected() {
        let c = RunConfig::parse("[model]\nranks=2,2\n[hyper]\nmu_gamma = 1,2\n", Path::new(".")).unwrap();
        assert!(c.fit_config(None, 2, 3).is_err());
    }
}
