//! Kernel functions, Gram-matrix assembly and the bandwidth heuristic.
//!
//! The RBF convention here is `k(x, y) = exp(-gamma ||x - y||^2)` with
//! `gamma = 1 / sigma`. `chi2_exp` is the exponential additive chi-square
//! kernel (PSD); `chi2_paper` is the raw additive chi-square *distance*,
//! kept for fidelity experiments even though it is not PSD and cannot back
//! a landmark factorization.

use crate::error::{Error, Result};
use crate::tensor::{dot, sq_dist, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small positive constant added to chi-square denominators so zero
/// coordinates do not divide by zero.
pub const DEFAULT_CHI2_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Rbf,
    Chi2Exp,
    Chi2Paper,
}

/// Tagged descriptor of a kernel function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Bandwidth parameter; ignored for `Linear` and `Chi2Paper`.
    pub gamma: f64,
    /// Chi-square denominator offset.
    pub epsilon: f64,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: 1.0,
            epsilon: DEFAULT_CHI2_EPS,
        }
    }

    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            epsilon: DEFAULT_CHI2_EPS,
        }
    }

    pub fn chi2_exp(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Chi2Exp,
            gamma,
            epsilon: DEFAULT_CHI2_EPS,
        }
    }

    pub fn chi2_paper() -> Self {
        KernelSpec {
            kind: KernelKind::Chi2Paper,
            gamma: 1.0,
            epsilon: DEFAULT_CHI2_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Rbf | KernelKind::Chi2Exp => {
                if !(self.gamma > 0.0) || !self.gamma.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "kernel gamma must be positive and finite, got {}",
                        self.gamma
                    )));
                }
            }
            KernelKind::Linear | KernelKind::Chi2Paper => {}
        }
        Ok(())
    }

    /// Whether this kernel needs element-wise non-negative inputs.
    pub fn needs_nonneg(&self) -> bool {
        matches!(self.kind, KernelKind::Chi2Exp | KernelKind::Chi2Paper)
    }

    /// Canonical textual form used in config files and CSV output.
    pub fn render(&self) -> String {
        match self.kind {
            KernelKind::Linear => "linear".into(),
            KernelKind::Rbf => format!("rbf:gamma={}", self.gamma),
            KernelKind::Chi2Exp => format!("chi2exp:gamma={}", self.gamma),
            KernelKind::Chi2Paper => "chi2paper".into(),
        }
    }

    /// Parse the canonical textual form.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(msg);
        let spec = match text.trim() {
            "linear" => KernelSpec::linear(),
            "chi2paper" => KernelSpec::chi2_paper(),
            other => {
                let (head, tail) = other
                    .split_once(':')
                    .ok_or_else(|| bad(format!("unknown kernel {other:?}")))?;
                let gamma_text = tail
                    .strip_prefix("gamma=")
                    .ok_or_else(|| bad(format!("expected gamma=<float> in {other:?}")))?;
                let gamma: f64 = gamma_text
                    .parse()
                    .map_err(|_| bad(format!("bad gamma value {gamma_text:?}")))?;
                match head {
                    "rbf" => KernelSpec::rbf(gamma),
                    "chi2exp" => KernelSpec::chi2_exp(gamma),
                    _ => return Err(bad(format!("unknown kernel {head:?}"))),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

#[inline]
fn eval_slices(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    match spec.kind {
        KernelKind::Linear => dot(x, y),
        KernelKind::Rbf => (-spec.gamma * sq_dist(x, y)).exp(),
        KernelKind::Chi2Exp => {
            let s: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = a - b;
                    d * d / (a + b + spec.epsilon)
                })
                .sum();
            (-spec.gamma * s).exp()
        }
        KernelKind::Chi2Paper => x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let d = a - b;
                d * d / (a + b + spec.epsilon)
            })
            .sum(),
    }
}

fn check_inputs(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "kernel inputs of length {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if spec.needs_nonneg() {
        for v in x.iter().chain(y) {
            if *v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "chi-square kernels need non-negative inputs, got {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Evaluate the kernel on a single pair of vectors.
pub fn kernel_eval(spec: &KernelSpec, x: &Vector, y: &Vector) -> Result<f64> {
    check_inputs(spec, x.data(), y.data())?;
    Ok(eval_slices(spec, x.data(), y.data()))
}

/// Gram matrix: entry (i, j) is the kernel of row i of `a` against row j of
/// `b`. Deliberately the same scalar loop as [`kernel_eval`] so the two
/// routes agree bitwise.
pub fn gram(spec: &KernelSpec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "gram over {} columns vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if spec.needs_nonneg() {
        for m in [a, b] {
            if m.data().iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidArgument(
                    "chi-square kernels need non-negative inputs".into(),
                ));
            }
        }
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let xi = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = eval_slices(spec, xi, b.row(j));
        }
    }
    Ok(out)
}

/// RBF bandwidth heuristic: `gamma = 1 / mean(||x_i - x_j||^2)` over
/// `pairs` uniformly sampled pairs of distinct rows.
///
/// "Mean distance" is read as mean *squared* distance so that
/// `gamma * ||x - y||^2` is dimensionless on average; run metadata records
/// this reading so the alternative can be replicated.
pub fn bandwidth_heuristic(features: &Matrix, pairs: usize, seed: u64) -> Result<f64> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "bandwidth heuristic needs at least 2 rows, got {n}"
        )));
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument("pairs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        sum += sq_dist(features.row(i), features.row(j));
    }
    let mean = sum / pairs as f64;
    if mean <= 0.0 {
        return Err(Error::DegenerateData(
            "mean pairwise distance is zero (identical rows)".into(),
        ));
    }
    Ok(1.0 / mean)
}

/// Default number of pairs for the bandwidth heuristic.
pub fn default_heuristic_pairs(n: usize) -> usize {
    (n * n.saturating_sub(1) / 2).min(1000).max(1)
}
