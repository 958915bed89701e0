use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;

/// Responses `y` (length n), stacked tensor covariates `X` with dims
/// `(p_1, …, p_D, n)` and scalar covariates `η` (n × q, q may be 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: DenseTensor,
    eta: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: DenseTensor, eta: DMatrix<f64>) -> Result<Self> {
        if x.order() < 2 {
            return Err(Error::Shape(
                "covariate tensor needs at least one image mode plus the subject mode".into(),
            ));
        }
        let n = *x.dims().last().unwrap();
        if y.len() != n {
            return Err(Error::Shape(format!(
                "{} responses but the covariate tensor holds {n} subjects",
                y.len()
            )));
        }
        if eta.nrows() != n {
            return Err(Error::Shape(format!(
                "{} covariate rows but {n} subjects",
                eta.nrows()
            )));
        }
        Ok(Self { y, x, eta })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DenseTensor {
        &self.x
    }

    pub fn eta(&self) -> &DMatrix<f64> {
        &self.eta
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn q(&self) -> usize {
        self.eta.ncols()
    }

    /// Image dims `(p_1, …, p_D)`.
    pub fn dims(&self) -> &[usize] {
        let d = self.x.dims();
        &d[..d.len() - 1]
    }

    pub fn order(&self) -> usize {
        self.dims().len()
    }

    pub fn voxels(&self) -> usize {
        self.dims().iter().product()
    }

    /// Covariate image of subject `i` in mode-1-major order.
    pub fn x_i(&self, i: usize) -> &[f64] {
        self.x.last_mode_slice(i)
    }

    pub fn eta_dot(&self, i: usize, gamma: &[f64]) -> f64 {
        gamma.iter().enumerate().map(|(k, g)| g * self.eta[(i, k)]).sum()
    }

    /// Correlation check between scalar covariates and a random sample of up
    /// to 1,000 voxels. Returns one message per voxel/covariate pair whose
    /// absolute correlation exceeds 0.999.
    pub fn collinearity_warnings(&self, rng: &mut RngStream) -> Vec<String> {
        let n = self.n();
        let v = self.voxels();
        if n < 3 || self.q() == 0 {
            return Vec::new();
        }
        let mut picks: Vec<usize> = (0..v).collect();
        if v > 1000 {
            // Partial Fisher-Yates.
            for i in 0..1000 {
                let j = i + (rng.uniform() * (v - i) as f64) as usize % (v - i);
                picks.swap(i, j);
            }
            picks.truncate(1000);
            picks.sort_unstable();
        }
        let mut out = Vec::new();
        for k in 0..self.q() {
            let col: Vec<f64> = (0..n).map(|i| self.eta[(i, k)]).collect();
            for &vox in &picks {
                let xv: Vec<f64> = (0..n).map(|i| self.x_i(i)[vox]).collect();
                if let Some(r) = correlation(&col, &xv) {
                    if r.abs() > 0.999 {
                        out.push(format!(
                            "voxel {vox} is collinear with scalar covariate {k} (|r| = {:.6}); \
                             the image and vector coefficients are not separately identifiable",
                            r.abs()
                        ));
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}
