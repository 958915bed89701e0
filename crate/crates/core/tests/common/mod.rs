//! Sampler-correctness checks shared by the integration tests and the
//! acceptance suite: a joint-distribution (forward vs successive-conditional)
//! test and 1-d quadrature oracles for the scalar full conditionals.

#![allow(dead_code)]

use btrt::model::{
    linear_predictor, sample_prior, update_beta_margin, update_core, update_gamma, update_lambda, update_omega,
    update_sigma2, update_tau, update_v_phi_z, Chain,
};
use btrt::rng::RngStream;
use btrt::{Dataset, DenseTensor, Hyperparams, ModelState};
use nalgebra::DMatrix;

/// A named z-score.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub z: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Variance of the mean of an autocorrelated series from 100 batch means.
fn batch_var_of_mean(x: &[f64]) -> f64 {
    let size = x.len() / 100;
    let means: Vec<f64> = x.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    mean_var(&means).1 / means.len() as f64
}

fn toy_data(seed: u64, dims: &[usize], n: usize, q: usize) -> Dataset {
    let mut r = RngStream::new(seed, 100);
    let mut full = dims.to_vec();
    full.push(n);
    let x = DenseTensor::from_fn(&full, |_| r.normal());
    let eta = DMatrix::from_fn(n, q, |_, _| r.normal());
    Dataset::new(vec![0.0; n], x, eta).unwrap()
}

fn simulate_y(s: &mut RngStream, st: &ModelState, data: &Dataset) -> Vec<f64> {
    let sd = st.sigma2.sqrt();
    linear_predictor(st, data).unwrap().into_iter().map(|m| m + sd * s.normal()).collect()
}

fn statistics(st: &ModelState) -> Vec<(&'static str, f64)> {
    let f = st.tucker.factors();
    let g = st.tucker.core().values();
    let b = btrt::tensor::tucker_compose(&st.tucker);
    let bv = b.values();
    vec![
        ("ln tau", st.tau.ln()),
        ("ln z", st.z.ln()),
        ("ln sigma2", st.sigma2.ln()),
        ("gamma", st.gamma[0]),
        ("beta[0][0,0]", f[0][(0, 0)]),
        ("beta[1][2,1]", f[1][(2, 1)]),
        ("ln|beta[0][1,1]|", f[0][(1, 1)].abs().ln()),
        ("ln|beta[1][0,0]|", f[1][(0, 0)].abs().ln()),
        ("g[0]", g[0]),
        ("g[3]", g[3]),
        ("ln|g[1]|", g[1].abs().ln()),
        ("ln|g[2]|", g[2].abs().ln()),
        ("B[0]", bv[0]),
        ("B[4]", bv[4]),
        ("ln|B[4]|", bv[4].abs().ln()),
        ("ln|B[8]|", bv[8].abs().ln()),
        ("ln lambda[0][0]", st.lambda[0][0].ln()),
        ("ln phi[0]", st.phi[0].ln()),
    ]
}

/// Forward prior-then-data draws against a chain alternating Gibbs sweeps
/// with fresh data draws, on dims (3,3), ranks (2,2), n = 10, q = 1. Both
/// target the same joint distribution, so every statistic has equal means.
pub fn geweke(samples: usize, seed: u64) -> Vec<Check> {
    let (dims, ranks) = ([3, 3], [2, 2]);
    let data = toy_data(seed, &dims, 10, 1);
    let h = Hyperparams::defaults(2, &ranks, 1);
    let mut prior_rng = RngStream::new(seed, 101);
    let mut data_rng = RngStream::new(seed, 102);

    let names: Vec<&str> = statistics(&sample_prior(&mut prior_rng.clone(), &dims, &ranks, &h, 1).unwrap())
        .iter()
        .map(|(n, _)| *n)
        .collect();
    let k = names.len();
    let mut forward = vec![Vec::with_capacity(samples); k];
    for _ in 0..samples {
        let st = sample_prior(&mut prior_rng, &dims, &ranks, &h, 1).unwrap();
        for (col, (_, v)) in forward.iter_mut().zip(statistics(&st)) {
            col.push(v);
        }
    }

    let st = sample_prior(&mut prior_rng, &dims, &ranks, &h, 1).unwrap();
    let y = simulate_y(&mut data_rng, &st, &data);
    let mut chain = Chain::new(&data, y, st, h.clone(), seed, 0).unwrap();
    let mut successive = vec![Vec::with_capacity(samples); k];
    for _ in 0..samples {
        chain.sweep().unwrap();
        let y = simulate_y(&mut data_rng, chain.state(), &data);
        chain.set_response(y).unwrap();
        for (col, (_, v)) in successive.iter_mut().zip(statistics(chain.state())) {
            col.push(v);
        }
    }

    names
        .iter()
        .zip(forward.iter().zip(&successive))
        .map(|(name, (f, s))| {
            let (mf, vf) = mean_var(f);
            let ms = s.iter().sum::<f64>() / s.len() as f64;
            let se = (vf / f.len() as f64 + batch_var_of_mean(s)).sqrt();
            Check { name: name.to_string(), z: (mf - ms) / se }
        })
        .collect()
}

/// Normalised density of a 1-d log-density on a log-spaced (positive
/// support) or linear grid around its mode; returns (mean, median).
fn quadrature(logf: impl Fn(f64) -> f64, positive: bool, centre: f64, width: f64) -> (f64, f64) {
    const N: usize = 200_001;
    let (lo, hi) = if positive { (centre.ln() - width, centre.ln() + width) } else { (centre - width, centre + width) };
    let h = (hi - lo) / (N - 1) as f64;
    let mut xs = Vec::with_capacity(N);
    let mut lw = Vec::with_capacity(N);
    for i in 0..N {
        let u = lo + h * i as f64;
        let (x, jac) = if positive { (u.exp(), u) } else { (u, 0.0) };
        xs.push(x);
        lw.push(logf(x) + jac);
    }
    let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
    assert!(w[0] < 1e-12 && w[N - 1] < 1e-12, "quadrature window too narrow");
    let total: f64 = w.iter().sum();
    let mean = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
    let mut acc = 0.0;
    let mut median = xs[N - 1];
    for (x, wi) in xs.iter().zip(&w) {
        acc += wi;
        if acc >= 0.5 * total {
            median = *x;
            break;
        }
    }
    (mean, median)
}

/// Compares `draws` against the quadrature mean and median: the z-score of
/// the sample mean and of the fraction below the median.
fn compare(name: &str, draws: &[f64], mean: f64, median: f64) -> Vec<Check> {
    let (m, v) = mean_var(draws);
    let n = draws.len() as f64;
    let below = draws.iter().filter(|&&x| x <= median).count() as f64 / n;
    vec![
        Check { name: format!("{name} mean"), z: (m - mean) / (v / n).sqrt() },
        Check { name: format!("{name} median"), z: (below - 0.5) / (0.25 / n).sqrt() },
    ]
}

/// Conditional CDF at `x > 0` of a log-density, by quadrature on a log
/// grid centred at `x`.
fn cdf(logf: impl Fn(f64) -> f64, x: f64) -> f64 {
    const N: usize = 8001;
    let (lo, width) = (x.ln() - 20.0, 40.0);
    let h = width / (N - 1) as f64;
    let lw: Vec<f64> = (0..N).map(|i| {
        let u = lo + h * i as f64;
        logf(u.exp()) + u
    }).collect();
    let top = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
    assert!(w[0] < 1e-12 && w[N - 1] < 1e-12, "quadrature window too narrow");
    let total: f64 = w.iter().sum::<f64>() - 0.5 * (w[0] + w[N - 1]);
    let below: f64 = w[..N / 2].iter().sum::<f64>() - 0.5 * w[0] + 0.5 * w[N / 2];
    below / total
}

/// z-scores for the mean of PIT values (1/2) and the fraction below 1/2.
fn compare_uniform(name: &str, u: &[f64]) -> Vec<Check> {
    let n = u.len() as f64;
    let m = u.iter().sum::<f64>() / n;
    let below = u.iter().filter(|&&x| x <= 0.5).count() as f64 / n;
    vec![
        Check { name: format!("{name} pit mean"), z: (m - 0.5) / (1.0 / 12.0 / n).sqrt() },
        Check { name: format!("{name} pit median"), z: (below - 0.5) / (0.25 / n).sqrt() },
    ]
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean).powi(2) / var - 0.5 * var.ln()
}

fn ln_gamma_kernel(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) * x.ln() - rate * x
}

/// `Σ_i log N(y_i; ⟨B, X_i⟩ + γ η_i, σ²)` up to a constant, with `B` built
/// by explicit sums for order-2 Tucker factors.
fn brute_loglik(st: &ModelState, data: &Dataset) -> f64 {
    let f = st.tucker.factors();
    let g = st.tucker.core();
    let (p0, p1) = (f[0].nrows(), f[1].nrows());
    let (r0, r1) = (f[0].ncols(), f[1].ncols());
    let mut b = vec![0.0; p0 * p1];
    for i0 in 0..p0 {
        for i1 in 0..p1 {
            for a in 0..r0 {
                for c in 0..r1 {
                    b[i0 + p0 * i1] += g.values()[a + r0 * c] * f[0][(i0, a)] * f[1][(i1, c)];
                }
            }
        }
    }
    let v = p0 * p1;
    let mut ll = 0.0;
    for i in 0..data.n() {
        let mut m: f64 = (0..v).map(|k| b[k] * data.x().values()[i * v + k]).sum();
        for (k, gk) in st.gamma.iter().enumerate() {
            m += gk * data.eta()[(i, k)];
        }
        ll += ln_normal(data.y()[i], m, st.sigma2);
    }
    ll
}

/// Every scalar full conditional, sampled `draws` times through the public
/// update functions and compared with quadrature of its unnormalised
/// density. β and core entries are scalar on dims (1, 3), ranks (1, 1).
pub fn quadrature_checks(draws: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut r = RngStream::new(seed, 200);
    let mut s = RngStream::new(seed, 201);

    // Scalar β, core and γ: dims (1, 3), ranks (1, 1), q = 1.
    {
        let dims = [1, 3];
        let ranks = [1, 1];
        let h = Hyperparams::defaults(2, &ranks, 1);
        let mut data = toy_data(seed, &dims, 12, 1);
        let mut st = sample_prior(&mut r, &dims, &ranks, &h, 1).unwrap();
        st.tau = 0.8;
        st.z = 1.3;
        st.v[0] = 0.9;
        st.omega[0][(0, 0)] = 0.7;
        st.sigma2 = 0.6;
        st.gamma = vec![0.4];
        st.tucker.factors_mut()[0][(0, 0)] = 0.5;
        st.tucker.factors_mut()[1].copy_from(&DMatrix::from_column_slice(3, 1, &[0.9, -0.4, 0.3]));
        st.tucker.core_mut().values_mut()[0] = 1.1;
        let y = simulate_y(&mut r, &st, &data);
        data = Dataset::new(y, data.x().clone(), data.eta().clone()).unwrap();

        let beta0 = st.tucker.factors()[0][(0, 0)];
        let logf = |b: f64| {
            let mut t = st.clone();
            t.tucker.factors_mut()[0][(0, 0)] = b;
            brute_loglik(&t, &data) + ln_normal(b, 0.0, st.tau * st.omega[0][(0, 0)])
        };
        let (m, med) = quadrature(logf, false, beta0, 30.0);
        let d: Vec<f64> = (0..draws).map(|_| update_beta_margin(&mut s, &st, &data, &h, 0, 0).unwrap()[0]).collect();
        out.extend(compare("beta", &d, m, med));

        let g0 = st.tucker.core().values()[0];
        let logf = |g: f64| {
            let mut t = st.clone();
            t.tucker.core_mut().values_mut()[0] = g;
            brute_loglik(&t, &data) + ln_normal(g, 0.0, st.z * st.v[0])
        };
        let (m, med) = quadrature(logf, false, g0, 30.0);
        let d: Vec<f64> = (0..draws).map(|_| update_core(&mut s, &st, &data, &h).unwrap()[0]).collect();
        out.extend(compare("core", &d, m, med));

        let logf = |g: f64| {
            let mut t = st.clone();
            t.gamma = vec![g];
            brute_loglik(&t, &data) + ln_normal(g, h.mu_gamma[0], h.sigma_gamma[(0, 0)])
        };
        let (m, med) = quadrature(logf, false, st.gamma[0], 30.0);
        let d: Vec<f64> = (0..draws).map(|_| update_gamma(&mut s, &st, &data, &h).unwrap()[0]).collect();
        out.extend(compare("gamma", &d, m, med));

        let logf = |v: f64| {
            let mut t = st.clone();
            t.sigma2 = v;
            brute_loglik(&t, &data) + ln_gamma_kernel(1.0 / v, h.a_sigma, h.b_sigma) - 2.0 * v.ln()
        };
        let (m, med) = quadrature(logf, true, st.sigma2, 12.0);
        let d: Vec<f64> = (0..draws).map(|_| update_sigma2(&mut s, &st, &data, &h).unwrap()).collect();
        out.extend(compare("sigma2", &d, m, med));
    }

    // Scale variables on dims (3, 4), ranks (2, 2).
    let dims = [3, 4];
    let ranks = [2, 2];
    let h = Hyperparams::defaults(2, &ranks, 0);
    let st = sample_prior(&mut r, &dims, &ranks, &h, 0).unwrap();
    let f = st.tucker.factors();
    let g = st.tucker.core().values();

    let logf = |t: f64| {
        let mut l = ln_gamma_kernel(t, h.a_tau, h.b_tau);
        for (b, w) in f.iter().zip(&st.omega) {
            for (x, o) in b.iter().zip(w.iter()) {
                l += ln_normal(*x, 0.0, t * o);
            }
        }
        l
    };
    let (m, med) = quadrature(logf, true, st.tau, 25.0);
    let d: Vec<f64> = (0..draws).map(|_| update_tau(&mut s, &st, &h).unwrap()).collect();
    out.extend(compare("tau", &d, m, med));

    // λ with ω integrated out: each β is Laplace with rate λ/√τ.
    let col: Vec<f64> = f[1].column(1).iter().copied().collect();
    let logf = |l: f64| {
        ln_gamma_kernel(l, h.a_lambda, h.b_lambda)
            + col.iter().map(|b| (l / st.tau.sqrt()).ln() - l * b.abs() / st.tau.sqrt()).sum::<f64>()
    };
    let (m, med) = quadrature(logf, true, st.lambda[1][1], 12.0);
    let d: Vec<f64> = (0..draws).map(|_| update_lambda(&mut s, &st, &h, 1, 1).unwrap()).collect();
    out.extend(compare("lambda", &d, m, med));

    let (beta, lam) = (f[0][(2, 1)], st.lambda[0][1]);
    let logf = |w: f64| ln_normal(beta, 0.0, st.tau * w) - lam * lam / 2.0 * w;
    let (m, med) = quadrature(logf, true, st.omega[0][(2, 1)], 25.0);
    let d: Vec<f64> = (0..draws).map(|_| update_omega(&mut s, &st, &h, 0, 1, 2)).collect();
    out.extend(compare("omega", &d, m, med));

    // φ and v for core cell 0 come from the same joint update: φ with v
    // integrated out (g is Laplace with rate φ/√z), then v | φ.
    let logf = |p: f64| ln_gamma_kernel(p, h.a_phi, h.b_phi) + (p / st.z.sqrt()).ln() - p * g[0].abs() / st.z.sqrt();
    let (m_phi, med_phi) = quadrature(logf, true, st.phi[0], 12.0);
    let scales: Vec<_> = (0..draws).map(|_| update_v_phi_z(&mut s, &st, &h).unwrap()).collect();
    let phis: Vec<f64> = scales.iter().map(|c| c.phi[0]).collect();
    out.extend(compare("phi", &phis, m_phi, med_phi));

    // v | φ, and z | the fresh v, via the probability integral transform
    // of each draw under its own conditional.
    let pits: Vec<(f64, f64)> = scales
        .iter()
        .take(draws / 5)
        .map(|c| {
            let phi = c.phi[0];
            let u_v = cdf(|v: f64| ln_normal(g[0], 0.0, st.z * v) - phi * phi / 2.0 * v, c.v[0]);
            let u_z = cdf(
                |z: f64| {
                    ln_gamma_kernel(z, h.a_z, h.b_z)
                        + g.iter().zip(&c.v).map(|(gc, vc)| ln_normal(*gc, 0.0, z * vc)).sum::<f64>()
                },
                c.z,
            );
            (u_v, u_z)
        })
        .collect();
    out.extend(compare_uniform("v", &pits.iter().map(|p| p.0).collect::<Vec<_>>()));
    out.extend(compare_uniform("z", &pits.iter().map(|p| p.1).collect::<Vec<_>>()));
    out
}
