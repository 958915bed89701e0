//! Posterior draw files: a text manifest terminated by `end`, the burn-in
//! log-likelihoods, then one binary record per retained draw.
//!
//! A record holds `B` (`V` values), `γ` (`q`), `σ²`, log-likelihood, `τ`,
//! `z` and, when retained, the factors and core.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_bytes, write_atomic};
use crate::model::draws::DRAWS_FORMAT_VERSION;
use crate::model::{Hyperparams, Manifest, PosteriorDraws};

pub const DRAWS_MAGIC: &str = "BTRT-DRAWS";

fn record_len(m: &Manifest) -> usize {
    m.voxels() + m.q + 4 + if m.keep_factors { m.factor_len() } else { 0 }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn manifest_text(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{DRAWS_MAGIC}");
    let _ = writeln!(s, "format_version = {}", m.format_version);
    let _ = writeln!(s, "seed = {}\nchain = {}", m.seed, m.chain);
    let _ = writeln!(s, "dims = {}\nranks = {}\nq = {}", join(&m.dims), join(&m.ranks), m.q);
    let _ = writeln!(
        s,
        "iterations = {}\nburn_in = {}\nthin = {}\nretained = {}",
        m.iterations, m.burn_in, m.thin, m.retained
    );
    let _ = writeln!(s, "center = {}\nscale = {}", fmt_f64(m.center), fmt_f64(m.scale));
    let _ = writeln!(s, "keep_factors = {}", m.keep_factors);
    for (k, v) in m.hyper.scalars() {
        let _ = writeln!(s, "{k} = {}", fmt_f64(v));
    }
    let q = m.q;
    let mu: Vec<String> = m.hyper.mu_gamma.iter().map(|v| fmt_f64(*v)).collect();
    let sg: Vec<String> = (0..q * q).map(|k| fmt_f64(m.hyper.sigma_gamma[(k / q, k % q)])).collect();
    let _ = writeln!(s, "mu_gamma = {}\nsigma_gamma = {}", mu.join(","), sg.join(","));
    let _ = writeln!(s, "record_values = {}", record_len(m));
    let _ = writeln!(s, "end");
    s
}

pub fn encode_draws(d: &PosteriorDraws) -> Result<Vec<u8>> {
    d.check()?;
    let m = &d.manifest;
    let mut out = manifest_text(m).into_bytes();
    let (v, q, f) = (m.voxels(), m.q, m.factor_len());
    out.reserve(8 * (m.burn_in + m.retained * record_len(m)));
    let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
    d.burn_in_loglik.iter().for_each(|&x| put(x));
    for s in 0..m.retained {
        d.b[s * v..(s + 1) * v].iter().for_each(|&x| put(x));
        d.gamma[s * q..(s + 1) * q].iter().for_each(|&x| put(x));
        put(d.sigma2[s]);
        put(d.loglik[s]);
        put(d.tau[s]);
        put(d.z[s]);
        if let Some(fs) = &d.factors {
            fs[s * f..(s + 1) * f].iter().for_each(|&x| put(x));
        }
    }
    Ok(out)
}

struct Header<'a> {
    path: &'a Path,
    fields: Vec<(String, String)>,
}

impl Header<'_> {
    fn err(&self, msg: String) -> Error {
        Error::Parse { path: self.path.to_path_buf(), msg }
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.err(format!("manifest lacks '{key}'")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| self.err(format!("bad value '{v}' for '{key}'")))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.parse().map_err(|_| self.err(format!("bad value '{s}' in '{key}'"))))
            .collect()
    }
}

fn parse_manifest(bytes: &[u8], path: &Path) -> Result<(Manifest, usize)> {
    let magic = format!("{DRAWS_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| Error::Parse { path: path.to_path_buf(), msg: "manifest is not terminated by 'end'".into() })?;
    let text = std::str::from_utf8(&bytes[magic.len()..end + 1])
        .map_err(|_| Error::Parse { path: path.to_path_buf(), msg: "manifest is not UTF-8".into() })?;
    let mut h = Header { path, fields: Vec::new() };
    for line in text.lines() {
        let (k, v) = line.split_once(" = ").ok_or_else(|| h.err(format!("bad manifest line '{line}'")))?;
        h.fields.push((k.to_string(), v.to_string()));
    }
    let version: u32 = h.get("format_version")?;
    if version != DRAWS_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version as u16,
            expected: DRAWS_FORMAT_VERSION as u16,
        });
    }
    let q: usize = h.get("q")?;
    let sg: Vec<f64> = h.list("sigma_gamma")?;
    if sg.len() != q * q {
        return Err(h.err(format!("sigma_gamma has {} values for q = {q}", sg.len())));
    }
    let hyper = Hyperparams {
        a_sigma: h.get("a_sigma")?,
        b_sigma: h.get("b_sigma")?,
        a_lambda: h.get("a_lambda")?,
        b_lambda: h.get("b_lambda")?,
        a_tau: h.get("a_tau")?,
        b_tau: h.get("b_tau")?,
        a_z: h.get("a_z")?,
        b_z: h.get("b_z")?,
        a_phi: h.get("a_phi")?,
        b_phi: h.get("b_phi")?,
        mu_gamma: h.list("mu_gamma")?,
        sigma_gamma: DMatrix::from_row_slice(q, q, &sg),
    };
    let m = Manifest {
        format_version: version,
        seed: h.get("seed")?,
        chain: h.get("chain")?,
        dims: h.list("dims")?,
        ranks: h.list("ranks")?,
        q,
        iterations: h.get("iterations")?,
        burn_in: h.get("burn_in")?,
        thin: h.get("thin")?,
        retained: h.get("retained")?,
        center: h.get("center")?,
        scale: h.get("scale")?,
        keep_factors: h.get("keep_factors")?,
        hyper,
    };
    if m.dims.len() != m.ranks.len() || m.dims.is_empty() || m.hyper.mu_gamma.len() != q {
        return Err(h.err("manifest dims, ranks and q are inconsistent".into()));
    }
    let declared: usize = h.get("record_values")?;
    if declared != record_len(&m) {
        return Err(h.err(format!("record_values = {declared}, expected {}", record_len(&m))));
    }
    Ok((m, end + 5))
}

/// `path` only labels errors.
pub fn decode_draws(bytes: &[u8], path: &Path) -> Result<PosteriorDraws> {
    let (m, start) = parse_manifest(bytes, path)?;
    let rec = record_len(&m);
    let expected = m
        .retained
        .checked_mul(rec)
        .and_then(|r| r.checked_add(m.burn_in))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(start))
        .ok_or_else(|| Error::Parse { path: path.to_path_buf(), msg: "record count overflows".into() })?;
    if bytes.len() < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), expected: expected as u64, found: bytes.len() as u64 });
    }
    if bytes.len() > expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes after the last record", bytes.len() - expected),
        });
    }
    let mut vals = bytes[start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut d = PosteriorDraws::with_capacity(m);
    let m = &d.manifest;
    let (v, q, f, keep, burn, retained) = (m.voxels(), m.q, m.factor_len(), m.keep_factors, m.burn_in, m.retained);
    d.burn_in_loglik.extend(vals.by_ref().take(burn));
    for _ in 0..retained {
        d.b.extend(vals.by_ref().take(v));
        d.gamma.extend(vals.by_ref().take(q));
        d.sigma2.extend(vals.next());
        d.loglik.extend(vals.next());
        d.tau.extend(vals.next());
        d.z.extend(vals.next());
        if keep {
            d.factors.as_mut().unwrap().extend(vals.by_ref().take(f));
        }
    }
    d.check()
        .map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })?;
    Ok(d)
}

pub fn write_draws(d: &PosteriorDraws, path: &Path) -> Result<()> {
    write_atomic(path, &encode_draws(d)?)
}

pub fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    decode_draws(&read_bytes(path)?, path)
}
