//! Synthetic datasets: a coefficient tensor with a few compact activation
//! regions, i.i.d. standard normal covariates and Gaussian responses.

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::par;
use crate::rng::RngStream;
use crate::tensor::{dot, increment, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dims: Vec<usize>,
    pub regions: usize,
    /// Region radii are uniform on `[radius_min, radius_max]` (voxels).
    pub radius_min: f64,
    pub radius_max: f64,
    /// Value at each region centre.
    pub peak: f64,
    /// Value at the region boundary as a fraction of `peak`.
    pub edge_fraction: f64,
    pub n: usize,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dims: vec![50, 50],
            regions: 3,
            radius_min: 4.0,
            radius_max: 6.0,
            peak: 1.0,
            edge_fraction: 0.2,
            n: 1000,
            gamma: vec![25.0, 3.0, 0.1],
            sigma2: 1.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad(format!("dims {:?} must be non-empty and positive", self.dims));
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if !(self.radius_min >= 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!(
                "radius range [{}, {}] is not a valid interval",
                self.radius_min, self.radius_max
            ));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad(format!("noise variance {} must be >= 0", self.sigma2));
        }
        if !(0.0..=1.0).contains(&self.edge_fraction) {
            return bad(format!("edge fraction {} outside [0, 1]", self.edge_fraction));
        }
        Ok(())
    }
}

/// A placed region.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub center: Vec<usize>,
    pub radius: f64,
}

/// Everything needed to score a fit on simulated data.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub b: DenseTensor,
    pub gamma: Vec<f64>,
    pub sigma2: f64,
}

const MAX_ATTEMPTS: usize = 1000;

/// Places `cfg.regions` non-overlapping balls at random centres. Each region
/// has value `peak` at its centre, decaying linearly with distance to
/// `edge_fraction · peak` at the boundary, and zero outside.
pub fn gen_regions(s: &mut RngStream, cfg: &SimConfig) -> Result<DenseTensor> {
    let regions = place_regions(s, cfg)?;
    Ok(paint_regions(cfg, &regions))
}

pub fn place_regions(s: &mut RngStream, cfg: &SimConfig) -> Result<Vec<Region>> {
    cfg.validate()?;
    let smallest = *cfg.dims.iter().min().unwrap() as f64;
    if 2.0 * cfg.radius_max.ceil() + 1.0 > smallest {
        return Err(Error::InvalidParameter(format!(
            "radius {} does not fit inside dims {:?}",
            cfg.radius_max, cfg.dims
        )));
    }
    let mut placed: Vec<Region> = Vec::with_capacity(cfg.regions);
    let mut attempts = 0;
    while placed.len() < cfg.regions {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Placement { attempts: MAX_ATTEMPTS });
        }
        let radius = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * s.uniform();
        let margin = radius.ceil() as usize;
        let center: Vec<usize> = cfg
            .dims
            .iter()
            .map(|&p| {
                let span = p - 2 * margin;
                margin + ((s.uniform() * span as f64) as usize).min(span - 1)
            })
            .collect();
        // Keep at least one empty voxel between regions.
        let clear = placed.iter().all(|r| distance(&r.center, &center) > r.radius + radius + 2.0);
        if clear {
            placed.push(Region { center, radius });
        }
    }
    Ok(placed)
}

fn distance(a: &[usize], b: &[usize]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn paint_regions(cfg: &SimConfig, regions: &[Region]) -> DenseTensor {
    let mut b = DenseTensor::zeros(&cfg.dims);
    let mut idx = vec![0; cfg.dims.len()];
    for k in 0..b.len() {
        for r in regions {
            let d = distance(&idx, &r.center);
            if d <= r.radius {
                let frac = if r.radius > 0.0 { d / r.radius } else { 0.0 };
                b.values_mut()[k] = cfg.peak * (1.0 - (1.0 - cfg.edge_fraction) * frac);
            }
        }
        increment(&mut idx, &cfg.dims);
    }
    b
}

/// Number of face-connected components of nonzero voxels.
pub fn count_regions(b: &DenseTensor) -> usize {
    let dims = b.dims();
    let mut seen = vec![false; b.len()];
    let mut stack = Vec::new();
    let mut count = 0;
    let strides: Vec<usize> = dims
        .iter()
        .scan(1, |acc, &p| {
            let s = *acc;
            *acc *= p;
            Some(s)
        })
        .collect();
    for start in 0..b.len() {
        if seen[start] || b.values()[start] == 0.0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            for (&p, &st) in dims.iter().zip(&strides) {
                let coord = (k / st) % p;
                let mut visit = |nb: usize| {
                    if !seen[nb] && b.values()[nb] != 0.0 {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                };
                if coord > 0 {
                    visit(k - st);
                }
                if coord + 1 < p {
                    visit(k + st);
                }
            }
        }
    }
    count
}

/// Subjects per independent covariate substream.
const SUBJECTS_PER_STREAM: usize = 16;

/// Draws `X` and `η` i.i.d. standard normal and
/// `y_i = ⟨B, X_i⟩ + γᵀη_i + ε_i`, `ε_i ~ N(0, σ²)`.
pub fn gen_dataset(s: &mut RngStream, cfg: &SimConfig, b_true: &DenseTensor) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    if b_true.dims() != cfg.dims.as_slice() {
        return Err(Error::Shape(format!(
            "coefficient dims {:?} vs configured dims {:?}",
            b_true.dims(),
            cfg.dims
        )));
    }
    let v = b_true.len();
    let n = cfg.n;
    let q = cfg.gamma.len();
    let x_seed = s.next_u64();
    let mut xv = vec![0.0; v * n];
    par::for_each_chunk_mut(&mut xv, v * SUBJECTS_PER_STREAM, |c, block| {
        let mut r = RngStream::new(x_seed, c as u64);
        block.iter_mut().for_each(|x| *x = r.normal());
    });
    let mut xd = cfg.dims.clone();
    xd.push(n);
    let x = DenseTensor::new(xd, xv)?;
    let eta = DMatrix::from_row_iterator(n, q, (0..n * q).map(|_| s.normal()));
    let sd = cfg.sigma2.sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mean = dot(b_true.values(), x.last_mode_slice(i))
                + (0..q).map(|k| eta[(i, k)] * cfg.gamma[k]).sum::<f64>();
            mean + sd * s.normal()
        })
        .collect();
    let truth = GroundTruth {
        b: b_true.clone(),
        gamma: cfg.gamma.clone(),
        sigma2: cfg.sigma2,
    };
    Ok((Dataset::new(y, x, eta)?, truth))
}

/// Regions from stream 0 and data from stream 1 of `cfg.seed`.
pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, GroundTruth)> {
    let b = gen_regions(&mut RngStream::new(cfg.seed, 0), cfg)?;
    gen_dataset(&mut RngStream::new(cfg.seed, 1), cfg, &b)
}
