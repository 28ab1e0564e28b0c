//! Random kitchen sinks: Monte Carlo feature map for the RBF kernel.

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RksActivation {
    /// cos/sin pairs approximating the RBF kernel.
    Trig,
    /// relu instead, approximating an arc-cosine kernel.
    Relu,
}

/// A frozen Gaussian projection. With entries drawn i.i.d. N(0, 2*gamma),
/// trig features give `<phi(x), phi(y)> -> exp(-gamma ||x-y||^2)` as q grows.
#[derive(Debug, Clone)]
pub struct RksProjection {
    pub q: usize,
    /// q x d projection matrix.
    pub mat: Matrix,
    pub activation: RksActivation,
}

impl RksProjection {
    pub fn new(q: usize, d: usize, gamma: f64, activation: RksActivation, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("q must be >= 1".into()));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).unwrap();
        let mat = Matrix::from_fn(q, d, |_, _| normal.sample(&mut rng));
        Ok(RksProjection { q, mat, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn output_dim(&self) -> usize {
        match self.activation {
            RksActivation::Trig => 2 * self.q,
            RksActivation::Relu => self.q,
        }
    }
}

/// Apply the projection batch-wise: rows of `x` map to feature rows.
pub fn rks_features(p: &RksProjection, x: &Matrix) -> Result<Matrix> {
    if x.cols() != p.input_dim() {
        return Err(Error::dim(format!(
            "input dimension {} vs projection dimension {}",
            x.cols(),
            p.input_dim()
        )));
    }
    let z = x.matmul_transb(&p.mat)?; // b x q
    let b = x.rows();
    let q = p.q;
    match p.activation {
        RksActivation::Trig => {
            let scale = 1.0 / (q as f64).sqrt();
            let mut out = Matrix::zeros(b, 2 * q);
            for i in 0..b {
                for j in 0..q {
                    let v = z.get(i, j);
                    out.set(i, j, v.cos() * scale);
                    out.set(i, q + j, v.sin() * scale);
                }
            }
            Ok(out)
        }
        RksActivation::Relu => {
            let scale = (2.0 / q as f64).sqrt();
            let mut out = Matrix::zeros(b, q);
            for i in 0..b {
                for j in 0..q {
                    out.set(i, j, z.get(i, j).max(0.0) * scale);
                }
            }
            Ok(out)
        }
    }
}
