//! Seedable random streams and the variate generators used by the sampler.
//!
//! Gamma distributions are parameterised by shape and RATE throughout.
//! The GIG density is `∝ x^{p-1} exp(-(a x + b/x) / 2)` on `x > 0`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream)`.
///
/// Streams with the same seed and different ids are independent ChaCha
/// keystreams; equal `(seed, stream)` pairs yield identical sequences.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A new stream with the same seed and a different id.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn sample_gamma(s: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    positive("gamma shape", shape)?;
    positive("gamma rate", rate)?;
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(s))
}

pub fn sample_inv_gamma(s: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    Ok(1.0 / sample_gamma(s, a, b)?)
}

pub fn sample_exponential(s: &mut RngStream, rate: f64) -> Result<f64> {
    positive("exponential rate", rate)?;
    Ok(-s.uniform().ln() / rate)
}

/// Generalized inverse Gaussian draw, `a > 0`, `b > 0`, any real `p`.
pub fn sample_gig(s: &mut RngStream, p: f64, a: f64, b: f64) -> Result<f64> {
    positive("GIG a", a)?;
    positive("GIG b", b)?;
    if !p.is_finite() {
        return Err(Error::InvalidParameter(format!("GIG order must be finite, got {p}")));
    }
    Ok(gig_unchecked(s, p, a, b))
}

/// Below this value of `√(ab)` the GIG is replaced by its gamma (p > 0) or
/// inverse-gamma (p < 0) limit; the neglected mass is of order `(ab)^{|p|}`.
const GIG_LIMIT_OMEGA: f64 = 1e-10;

/// GIG draw that also accepts `b == 0` when `p > 0` (the Gamma(p, a/2) limit).
pub(crate) fn gig_unchecked(s: &mut RngStream, p: f64, a: f64, b: f64) -> f64 {
    let omega = (a * b).sqrt();
    if omega < GIG_LIMIT_OMEGA {
        if p > 0.0 {
            return sample_gamma(s, p, a / 2.0).expect("validated");
        }
        if p < 0.0 {
            return 1.0 / sample_gamma(s, -p, b / 2.0).expect("validated");
        }
    }
    let lambda = p.abs();
    let x = gig_standard(s, lambda, omega);
    let x = if p < 0.0 { 1.0 / x } else { x };
    (b / a).sqrt() * x
}

/// Uniformly bounded rejection sampler for the two-parameter GIG with density
/// `∝ x^{λ-1} exp(-ω (x + 1/x) / 2)`, `λ ≥ 0`, `ω > 0`.
///
/// Works on `X = log(x / m)` with `m = λ/ω + √(1 + λ²/ω²)`. The log-density
/// `ψ` of `X` is concave with maximum `ψ(0) = 0`; the hat is flat on
/// `[-s', t']` and follows tangent exponentials beyond, with `s`, `t` chosen
/// so the expected number of trials stays bounded for every `(λ, ω)`.
fn gig_standard(s: &mut RngStream, lambda: f64, omega: f64) -> f64 {
    let alpha = omega * omega / ((omega * omega + lambda * lambda).sqrt() + lambda);
    let psi = |x: f64| -alpha * (x.cosh() - 1.0) - lambda * (x.exp() - x - 1.0);
    let dpsi = |x: f64| -alpha * x.sinh() - lambda * (x.exp() - 1.0);

    let m1 = -psi(1.0);
    let t = if (0.5..=2.0).contains(&m1) {
        1.0
    } else if m1 > 2.0 {
        (2.0 / (alpha + lambda)).sqrt()
    } else {
        (4.0 / (alpha + 2.0 * lambda)).ln()
    };
    let mm1 = -psi(-1.0);
    let s_ = if (0.5..=2.0).contains(&mm1) {
        1.0
    } else if mm1 > 2.0 {
        (4.0 / (alpha * 1f64.cosh() + lambda)).sqrt()
    } else {
        let inv = 1.0 / alpha;
        let tail = (1.0 + inv + (inv * inv + 2.0 * inv).sqrt()).ln();
        if lambda > 0.0 {
            tail.min(1.0 / lambda)
        } else {
            tail
        }
    };

    let eta = -psi(t);
    let zeta = -dpsi(t);
    let theta = -psi(-s_);
    let xi = dpsi(-s_);
    let p = 1.0 / xi;
    let r = 1.0 / zeta;
    let t_ = t - r * eta;
    let s2 = s_ - p * theta;
    let q = t_ + s2;
    let total = p + q + r;

    loop {
        let u = s.uniform();
        let v = s.uniform();
        let w = s.uniform();
        let x = if u < q / total {
            -s2 + q * v
        } else if u < (q + r) / total {
            t_ - r * v.ln()
        } else {
            -s2 + p * v.ln()
        };
        let chi = if x > t_ {
            (-eta - zeta * (x - t)).exp()
        } else if x < -s2 {
            (-theta + xi * (x + s_)).exp()
        } else {
            1.0
        };
        let log_target = psi(x);
        if log_target.is_finite() && w * chi <= log_target.exp() {
            let m = lambda / omega + (1.0 + (lambda / omega).powi(2)).sqrt();
            return m * x.exp();
        }
    }
}

/// Draws from `N(Q⁻¹ m, Q⁻¹)` given the precision `Q` and the mean term `m`,
/// using one Cholesky factorisation and triangular solves.
pub fn sample_mvn_precision(
    s: &mut RngStream,
    mean_term: &[f64],
    precision: DMatrix<f64>,
) -> Result<Vec<f64>> {
    let n = mean_term.len();
    if precision.nrows() != n || precision.ncols() != n {
        return Err(Error::Shape(format!(
            "precision is {}x{}, mean term has length {n}",
            precision.nrows(),
            precision.ncols()
        )));
    }
    let (mean, chol) = precision_mean(mean_term, precision)?;
    let z = DVector::from_iterator(n, (0..n).map(|_| s.normal()));
    let e = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::NotPositiveDefinite("triangular solve failed".into()))?;
    Ok((mean + e).iter().copied().collect())
}

/// `(Q⁻¹ m, chol(Q))`.
pub(crate) fn precision_mean(
    mean_term: &[f64],
    precision: DMatrix<f64>,
) -> Result<(DVector<f64>, Cholesky<f64, nalgebra::Dyn>)> {
    if precision.iter().any(|v| !v.is_finite()) || mean_term.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite precision or mean term".into()));
    }
    let n = mean_term.len();
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{n}x{n} precision")))?;
    let m = DVector::from_column_slice(mean_term);
    let mean = chol.solve(&m);
    Ok((mean, chol))
}
