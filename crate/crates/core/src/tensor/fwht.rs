//! Fast Walsh-Hadamard transform.
//!
//! Unnormalized Sylvester convention: the transform computes `H v` where
//! `H` has entries +-1 and `H H = n I`. All scaling is left to the caller.

use super::Vector;
use crate::error::{Error, Result};

/// In-place FWHT on a power-of-two-length slice. O(n log n).
pub fn fwht_in_place(data: &mut [f64]) -> Result<()> {
    let n = data.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::dim(format!(
            "fwht needs a power-of-two length, got {n}"
        )));
    }
    let mut h = 1;
    while h < n {
        let mut i = 0;
        while i < n {
            for j in i..i + h {
                let x = data[j];
                let y = data[j + h];
                data[j] = x + y;
                data[j + h] = x - y;
            }
            i += h * 2;
        }
        h *= 2;
    }
    Ok(())
}

/// Out-of-place FWHT of a vector.
pub fn fwht(v: &Vector) -> Result<Vector> {
    let mut out = v.clone();
    fwht_in_place(out.data_mut())?;
    Ok(out)
}

/// Dense O(n^2) Hadamard multiply, `H[i][j] = (-1)^popcount(i & j)`.
///
/// Reference implementation used to cross-check the fast path and to measure
/// the speedup; never materializes H.
pub fn naive_hadamard_mul(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::dim(format!(
            "hadamard multiply needs a power-of-two length, got {n}"
        )));
    }
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &x) in v.iter().enumerate() {
            if (i & j).count_ones() % 2 == 0 {
                acc += x;
            } else {
                acc -= x;
            }
        }
        *o = acc;
    }
    Ok(out)
}
