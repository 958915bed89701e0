//! Dense tensors and the Tucker algebra the sampler is built on.
//!
//! Layout is mode-1-major: the first index varies fastest, so the linear
//! offset of `(i_1, …, i_D)` is `Σ_k i_k · ∏_{m<k} p_m`. Mode indices in this
//! API are zero-based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor order must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("all dims must be >= 1, got {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = dims.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            values.push(f(&idx));
            increment(&mut idx, dims);
        }
        Self {
            dims: dims.to_vec(),
            values,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(i < d);
            off += i * stride;
            stride *= d;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.values[off] = v;
    }

    /// The `i`-th slice along the last mode, as a tensor of one lower order.
    /// Order-1 tensors yield a single-element order-1 tensor.
    pub fn last_mode_slice(&self, i: usize) -> &[f64] {
        let last = *self.dims.last().expect("order >= 1");
        let block = self.values.len() / last;
        &self.values[i * block..(i + 1) * block]
    }
}

/// Advances a mode-1-major multi-index; wraps to zero after the last element.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(dims) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.values.clone()
}

fn check_mode(t: &DenseTensor, k: usize) -> Result<()> {
    if k >= t.order() {
        return Err(Error::ModeOutOfRange {
            mode: k,
            order: t.order(),
        });
    }
    Ok(())
}

/// Mode-`k` matricization: a `p_k × ∏_{j≠k} p_j` matrix whose columns run over
/// the remaining indices in mode-1-major order.
pub fn matricize(t: &DenseTensor, k: usize) -> Result<DMatrix<f64>> {
    check_mode(t, k)?;
    let left: usize = t.dims[..k].iter().product();
    let pk = t.dims[k];
    let right: usize = t.dims[k + 1..].iter().product();
    let mut m = DMatrix::zeros(pk, left * right);
    for r in 0..right {
        for i in 0..pk {
            for l in 0..left {
                m[(i, l + r * left)] = t.values[l + i * left + r * left * pk];
            }
        }
    }
    Ok(m)
}

/// Inverse of [`matricize`].
pub fn fold(m: &DMatrix<f64>, dims: &[usize], k: usize) -> Result<DenseTensor> {
    let mut t = DenseTensor::new(dims.to_vec(), vec![0.0; dims.iter().product()])?;
    check_mode(&t, k)?;
    let left: usize = dims[..k].iter().product();
    let pk = dims[k];
    let right: usize = dims[k + 1..].iter().product();
    if m.nrows() != pk || m.ncols() != left * right {
        return Err(Error::Shape(format!(
            "cannot fold a {}x{} matrix into dims {dims:?} along mode {k}",
            m.nrows(),
            m.ncols()
        )));
    }
    for r in 0..right {
        for i in 0..pk {
            for l in 0..left {
                t.values[l + i * left + r * left * pk] = m[(i, l + r * left)];
            }
        }
    }
    Ok(t)
}

pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "inner product of {:?} and {:?}",
            a.dims, b.dims
        )));
    }
    Ok(dot(&a.values, &b.values))
}

/// Dot product with a fixed four-way accumulation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// CP composition `Σ_r β_{1,r} ∘ … ∘ β_{D,r}`.
pub fn cp_compose(factors: &[DMatrix<f64>]) -> Result<DenseTensor> {
    let Some(first) = factors.first() else {
        return Err(Error::Shape("cp_compose needs at least one factor".into()));
    };
    let rank = first.ncols();
    if factors.iter().any(|f| f.ncols() != rank) {
        return Err(Error::Shape(
            "all CP factor matrices must have the same column count".into(),
        ));
    }
    let dims: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
    let mut out = DenseTensor::new(dims.clone(), vec![0.0; dims.iter().product()])?;
    for r in 0..rank {
        outer_accumulate(
            &mut out.values,
            &dims,
            &factors.iter().map(|f| f.column(r)).collect::<Vec<_>>(),
            1.0,
        );
    }
    Ok(out)
}

fn outer_accumulate<S>(out: &mut [f64], dims: &[usize], cols: &[S], weight: f64)
where
    S: std::ops::Index<usize, Output = f64>,
{
    // Builds the outer product mode by mode: after step k the first ∏_{m≤k} p_m
    // entries of `buf` hold the partial product over modes 0..=k.
    let total: usize = dims.iter().product();
    let mut buf = vec![0.0; total];
    buf[0] = weight;
    let mut filled = 1;
    for (k, &pk) in dims.iter().enumerate() {
        for i in (0..pk).rev() {
            let c = cols[k][i];
            for l in 0..filled {
                buf[i * filled + l] = buf[l] * c;
            }
        }
        filled *= pk;
    }
    for (o, b) in out.iter_mut().zip(&buf) {
        *o += b;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuckerFactorSet {
    factors: Vec<DMatrix<f64>>,
    core: DenseTensor,
}

impl TuckerFactorSet {
    pub fn new(factors: Vec<DMatrix<f64>>, core: DenseTensor) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::Shape(format!(
                "{} factors for a core of order {}",
                factors.len(),
                core.order()
            )));
        }
        for (j, (f, &r)) in factors.iter().zip(core.dims()).enumerate() {
            if f.ncols() != r {
                return Err(Error::Shape(format!(
                    "factor {j} has {} columns but core dim {j} is {r}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(Error::Shape(format!("factor {j} has no rows")));
            }
        }
        Ok(Self { factors, core })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.factors
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.dims()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }
}

/// Tucker composition `Σ_r g_r β_{1,r_1} ∘ … ∘ β_{D,r_D}`, evaluated as a chain
/// of mode products `G ×_1 β_1 ×_2 … ×_D β_D`.
pub fn tucker_compose(f: &TuckerFactorSet) -> DenseTensor {
    let mut t = f.core.clone();
    for (k, beta) in f.factors.iter().enumerate() {
        t = mode_product(&t, k, beta).expect("factor set invariants hold");
    }
    t
}

/// n-mode product `T ×_k M`: mode `k` (size `p_k`) is replaced by the rows of
/// `m` (`J × p_k`), `Y[…, j, …] = Σ_ℓ M[j, ℓ] T[…, ℓ, …]`.
pub fn mode_product(t: &DenseTensor, k: usize, m: &DMatrix<f64>) -> Result<DenseTensor> {
    check_mode(t, k)?;
    if m.ncols() != t.dims[k] {
        return Err(Error::Shape(format!(
            "mode-{k} product: matrix has {} columns, mode has size {}",
            m.ncols(),
            t.dims[k]
        )));
    }
    let (dims, values) = mode_product_strided(
        &t.dims,
        &t.values,
        k,
        m.as_slice(),
        m.nrows(),
        1,
        m.nrows() as isize,
    );
    DenseTensor::new(dims, values)
}

/// Contracts mode `k` against the columns of `a` (`p_k × R`): the result has
/// size `R` along mode `k`, `Y[…, r, …] = Σ_ℓ a[ℓ, r] T[…, ℓ, …]`.
pub fn contract_mode(t: &DenseTensor, k: usize, a: &DMatrix<f64>) -> Result<DenseTensor> {
    check_mode(t, k)?;
    if a.nrows() != t.dims[k] {
        return Err(Error::Shape(format!(
            "mode-{k} contraction: matrix has {} rows, mode has size {}",
            a.nrows(),
            t.dims[k]
        )));
    }
    // aᵀ viewed through strides: element (r, ℓ) lives at ℓ + r·p_k.
    let (dims, values) = mode_product_strided(
        &t.dims,
        &t.values,
        k,
        a.as_slice(),
        a.ncols(),
        a.nrows() as isize,
        1,
    );
    DenseTensor::new(dims, values)
}

/// `Y = T ×_k M` where `M` is `rows × dims[k]` with the given element strides.
fn mode_product_strided(
    dims: &[usize],
    data: &[f64],
    k: usize,
    m: &[f64],
    rows: usize,
    m_rs: isize,
    m_cs: isize,
) -> (Vec<usize>, Vec<f64>) {
    let left: usize = dims[..k].iter().product();
    let inner_dim = dims[k];
    let right: usize = dims[k + 1..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims[k] = rows;
    let in_block = left * inner_dim;
    let out_block = left * rows;
    let mut out = vec![0.0; out_block * right];
    if out.is_empty() {
        return (out_dims, out);
    }

    // Fixed partition of the trailing index; independent of thread count.
    let per_chunk = (32_768 / in_block.max(1)).max(1);
    par::for_each_chunk_mut(&mut out, per_chunk * out_block, |c, block| {
        let t0 = c * per_chunk;
        let nt = block.len() / out_block;
        let src = &data[t0 * in_block..(t0 + nt) * in_block];
        if left == 1 {
            // (rows × inner) · (inner × nt) as one product.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    inner_dim,
                    nt,
                    1.0,
                    m.as_ptr(),
                    m_rs,
                    m_cs,
                    src.as_ptr(),
                    1,
                    inner_dim as isize,
                    0.0,
                    block.as_mut_ptr(),
                    1,
                    rows as isize,
                );
            }
        } else {
            for t in 0..nt {
                let s = &src[t * in_block..(t + 1) * in_block];
                let o = &mut block[t * out_block..(t + 1) * out_block];
                // (left × inner) · Mᵀ (inner × rows)
                unsafe {
                    matrixmultiply::dgemm(
                        left,
                        inner_dim,
                        rows,
                        1.0,
                        s.as_ptr(),
                        1,
                        left as isize,
                        m.as_ptr(),
                        m_cs,
                        m_rs,
                        0.0,
                        o.as_mut_ptr(),
                        1,
                        left as isize,
                    );
                }
            }
        }
    });
    (out_dims, out)
}

/// Contracts mode `k` of a raw tensor with a vector.
fn contract_vector(dims: &[usize], data: &[f64], k: usize, v: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let left: usize = dims[..k].iter().product();
    let pk = dims[k];
    let right: usize = dims[k + 1..].iter().product();
    let mut out = vec![0.0; left * right];
    for t in 0..right {
        let o = &mut out[t * left..(t + 1) * left];
        for (i, &vi) in v.iter().enumerate() {
            let s = &data[t * left * pk + i * left..t * left * pk + (i + 1) * left];
            for (a, b) in o.iter_mut().zip(s) {
                *a += vi * b;
            }
        }
    }
    let mut out_dims = dims.to_vec();
    out_dims.remove(k);
    (out_dims, out)
}

/// `⟨β_1 ∘ … ∘ β_D, X⟩` without materialising the outer product.
pub fn summand_project(x: &DenseTensor, betas: &[&[f64]]) -> Result<f64> {
    if betas.len() != x.order() || betas.iter().zip(&x.dims).any(|(b, &d)| b.len() != d) {
        return Err(Error::Shape(format!(
            "summand_project: beta lengths {:?} vs dims {:?}",
            betas.iter().map(|b| b.len()).collect::<Vec<_>>(),
            x.dims
        )));
    }
    let mut dims = x.dims.clone();
    let mut data = x.values.clone();
    for k in (0..betas.len()).rev() {
        (dims, data) = contract_vector(&dims, &data, k, betas[k]);
    }
    Ok(data[0])
}

/// Contracts every mode except `j` against the given vectors (listed in mode
/// order with mode `j` skipped). The result `m` satisfies
/// `β_jᵀ m = summand_project(x, β)`.
pub fn margin_contract(x: &DenseTensor, j: usize, betas_except_j: &[&[f64]]) -> Result<Vec<f64>> {
    check_mode(x, j)?;
    if betas_except_j.len() + 1 != x.order() {
        return Err(Error::Shape(format!(
            "margin_contract: need {} vectors, got {}",
            x.order() - 1,
            betas_except_j.len()
        )));
    }
    let mut dims = x.dims.clone();
    let mut data = x.values.clone();
    for k in (0..x.order()).rev() {
        if k == j {
            continue;
        }
        let v = betas_except_j[if k < j { k } else { k - 1 }];
        if v.len() != dims[k] {
            return Err(Error::Shape(format!(
                "margin_contract: vector for mode {k} has length {}, mode size {}",
                v.len(),
                dims[k]
            )));
        }
        (dims, data) = contract_vector(&dims, &data, k, v);
    }
    Ok(data)
}
