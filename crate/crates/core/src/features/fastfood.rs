//! Fastfood: structured replacement for the Gaussian projection of random
//! kitchen sinks. `V = (1/(sigma sqrt(d))) S H G P H B` is applied through
//! two Walsh-Hadamard transforms and diagonal/permutation passes, so V is
//! never stored.

use crate::error::{Error, Result};
use crate::tensor::{fwht_in_place, Matrix, Vector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// One Fastfood stack: the diagonals, permutation and scale of a single V.
#[derive(Debug, Clone)]
pub struct FastfoodBlock {
    /// Padded dimension, a power of two.
    pub d_pad: usize,
    /// Row-rescaling diagonal (chi-distributed row norms).
    pub s_diag: Vector,
    /// Gaussian diagonal.
    pub g_diag: Vector,
    /// Rademacher +-1 diagonal.
    pub b_diag: Vector,
    /// Permutation: output i takes input `perm[i]`.
    pub perm: Vec<usize>,
    /// Bandwidth scale; the block approximates
    /// `k(x, y) = exp(-||x - y||^2 / (2 sigma^2))`.
    pub sigma: f64,
}

/// Draw a Fastfood block. `d` is padded up to the next power of two. The
/// S diagonal follows the standard recipe: `s_i = chi(d_pad) / ||g||` so
/// that the rows of V marginally match Gaussian row norms.
pub fn make_fastfood(d: usize, sigma: f64, seed: u64) -> Result<FastfoodBlock> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("d must be >= 1".into()));
    }
    let d_pad = d.next_power_of_two();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut b_diag = Vector::zeros(d_pad);
    for v in b_diag.data_mut() {
        *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let mut g_diag = Vector::zeros(d_pad);
    for v in g_diag.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut perm: Vec<usize> = (0..d_pad).collect();
    perm.shuffle(&mut rng);

    let g_norm = g_diag.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let chi = ChiSquared::new(d_pad as f64).unwrap();
    let mut s_diag = Vector::zeros(d_pad);
    for v in s_diag.data_mut() {
        let c: f64 = chi.sample(&mut rng);
        *v = c.sqrt() / g_norm;
    }

    Ok(FastfoodBlock {
        d_pad,
        s_diag,
        g_diag,
        b_diag,
        perm,
        sigma,
    })
}

impl FastfoodBlock {
    /// Block whose feature inner products target
    /// `exp(-gamma ||x - y||^2)`, i.e. `sigma = 1 / sqrt(2 gamma)`.
    pub fn for_rbf_gamma(d: usize, gamma: f64, seed: u64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        make_fastfood(d, 1.0 / (2.0 * gamma).sqrt(), seed)
    }
}

/// Compute `V x` for every row of `x` via the FWHT path. Inputs narrower
/// than `d_pad` are zero-padded.
pub fn fastfood_transform(block: &FastfoodBlock, x: &Matrix) -> Result<Matrix> {
    let d_pad = block.d_pad;
    if x.cols() > d_pad {
        return Err(Error::dim(format!(
            "input dimension {} exceeds block dimension {d_pad}",
            x.cols()
        )));
    }
    let scale = 1.0 / (block.sigma * (d_pad as f64).sqrt());
    let mut out = Matrix::zeros(x.rows(), d_pad);
    let mut buf = vec![0.0; d_pad];
    let mut tmp = vec![0.0; d_pad];
    for r in 0..x.rows() {
        buf[..x.cols()].copy_from_slice(x.row(r));
        buf[x.cols()..].fill(0.0);
        for (v, b) in buf.iter_mut().zip(block.b_diag.data()) {
            *v *= b;
        }
        fwht_in_place(&mut buf)?;
        for (i, t) in tmp.iter_mut().enumerate() {
            *t = buf[block.perm[i]];
        }
        for (t, g) in tmp.iter_mut().zip(block.g_diag.data()) {
            *t *= g;
        }
        fwht_in_place(&mut tmp)?;
        let orow = out.row_mut(r);
        for ((o, t), s) in orow.iter_mut().zip(&tmp).zip(block.s_diag.data()) {
            *o = t * s * scale;
        }
    }
    Ok(out)
}

/// Trig features of the concatenated blocks: per block `[cos(Vx) sin(Vx)]`,
/// all normalized by `1/sqrt(d_pad * n_blocks)` so inner products are
/// unbiased kernel estimates.
pub fn fastfood_features(blocks: &[FastfoodBlock], x: &Matrix) -> Result<Matrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one fastfood block".into()))?;
    let d_pad = first.d_pad;
    if blocks.iter().any(|b| b.d_pad != d_pad) {
        return Err(Error::dim("fastfood blocks disagree on padded dimension"));
    }
    let n_pairs = d_pad * blocks.len();
    let scale = 1.0 / (n_pairs as f64).sqrt();
    let mut out = Matrix::zeros(x.rows(), 2 * n_pairs);
    for (bi, block) in blocks.iter().enumerate() {
        let z = fastfood_transform(block, x)?;
        let off = bi * 2 * d_pad;
        for r in 0..x.rows() {
            let zrow = z.row(r);
            let orow = out.row_mut(r);
            for (j, &v) in zrow.iter().enumerate() {
                orow[off + j] = v.cos() * scale;
                orow[off + d_pad + j] = v.sin() * scale;
            }
        }
    }
    Ok(out)
}

/// Assemble V densely from explicit H, S, G, B and permutation matrices.
/// Quadratic-cost oracle for checking the transform path; also exercised by
/// the gramcheck command.
pub fn dense_fastfood_matrix(block: &FastfoodBlock) -> Result<Matrix> {
    let n = block.d_pad;
    let h = Matrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    });
    let s = Matrix::diag(block.s_diag.data());
    let g = Matrix::diag(block.g_diag.data());
    let b = Matrix::diag(block.b_diag.data());
    let mut p = Matrix::zeros(n, n);
    for (i, &src) in block.perm.iter().enumerate() {
        p.set(i, src, 1.0);
    }
    let mut v = s.matmul(&h)?;
    v = v.matmul(&g)?;
    v = v.matmul(&p)?;
    v = v.matmul(&h)?;
    v = v.matmul(&b)?;
    v.scale(1.0 / (block.sigma * (n as f64).sqrt()));
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{rks_features, RksActivation, RksProjection};
    use crate::tensor::{dot, sq_dist};
    use rand::Rng;

    #[test]
    fn pads_to_next_power_of_two() {
        let b = make_fastfood(3, 1.0, 0).unwrap();
        assert_eq!(b.d_pad, 4);
        let b = make_fastfood(8, 1.0, 0).unwrap();
        assert_eq!(b.d_pad, 8);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = make_fastfood(16, 0.5, 42).unwrap();
        let b = make_fastfood(16, 0.5, 42).unwrap();
        assert_eq!(a.b_diag, b.b_diag);
        assert_eq!(a.g_diag, b.g_diag);
        assert_eq!(a.s_diag, b.s_diag);
        assert_eq!(a.perm, b.perm);
    }

    #[test]
    fn block_invariants_hold() {
        let b = make_fastfood(64, 1.0, 7).unwrap();
        assert!(b.b_diag.data().iter().all(|v| *v == 1.0 || *v == -1.0));
        assert!(b.s_diag.data().iter().all(|v| *v >= 0.0));
        let mut seen = b.perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }

    /// Law of large numbers: the G diagonal is standard normal.
    #[test]
    fn gaussian_diagonal_mean_near_zero() {
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..200 {
            let b = make_fastfood(64, 1.0, seed).unwrap();
            total += b.g_diag.data().iter().sum::<f64>();
            count += 64;
        }
        let mean = total / count as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn transform_matches_dense_oracle() {
        for seed in [0u64, 1, 2, 3] {
            let block = make_fastfood(16, 0.8, seed).unwrap();
            let v = dense_fastfood_matrix(&block).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x = Matrix::from_fn(5, 16, |_, _| rng.random_range(-1.0..1.0));
            let fast = fastfood_transform(&block, &x).unwrap();
            let dense = x.matmul_transb(&v).unwrap();
            assert!(
                fast.max_abs_diff(&dense) < 1e-10,
                "seed {seed}: err {}",
                fast.max_abs_diff(&dense)
            );
        }
    }

    #[test]
    fn zero_input_gives_constant_cos_zero_sin() {
        let blocks = vec![make_fastfood(8, 1.0, 3).unwrap()];
        let x = Matrix::zeros(1, 8);
        let phi = fastfood_features(&blocks, &x).unwrap();
        let scale = 1.0 / (8f64).sqrt();
        for j in 0..8 {
            assert_eq!(phi.get(0, j), scale);
            assert_eq!(phi.get(0, 8 + j), 0.0);
        }
    }

    #[test]
    fn inconsistent_block_dims_rejected() {
        let blocks = vec![
            make_fastfood(8, 1.0, 0).unwrap(),
            make_fastfood(16, 1.0, 1).unwrap(),
        ];
        assert!(fastfood_features(&blocks, &Matrix::zeros(1, 8)).is_err());
    }

    /// Side-by-side Monte Carlo: stacked fastfood blocks track the RBF
    /// kernel within 2x of RKS error at equal output dimension.
    #[test]
    fn kernel_error_comparable_to_rks() {
        let d = 64;
        let gamma = 1.0 / (2.0 * d as f64);
        let blocks: Vec<FastfoodBlock> = (0..3)
            .map(|s| FastfoodBlock::for_rbf_gamma(d, gamma, 50 + s).unwrap())
            .collect();
        let q = blocks.len() * d; // matched pair count
        let rks = RksProjection::new(q, d, gamma, RksActivation::Trig, 99).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n_pairs = 200;
        let x = Matrix::from_fn(2 * n_pairs, d, |_, _| {
            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
        });
        let phi_ff = fastfood_features(&blocks, &x).unwrap();
        let phi_rks = rks_features(&rks, &x).unwrap();
        let mut err_ff = 0.0;
        let mut err_rks = 0.0;
        for t in 0..n_pairs {
            let (i, j) = (2 * t, 2 * t + 1);
            let exact = (-gamma * sq_dist(x.row(i), x.row(j))).exp();
            err_ff += (dot(phi_ff.row(i), phi_ff.row(j)) - exact).abs();
            err_rks += (dot(phi_rks.row(i), phi_rks.row(j)) - exact).abs();
        }
        err_ff /= n_pairs as f64;
        err_rks /= n_pairs as f64;
        assert!(
            err_ff <= 2.0 * err_rks,
            "fastfood {err_ff} vs rks {err_rks}"
        );
    }
}
