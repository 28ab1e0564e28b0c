//! Datasets: synthetic Gaussian blobs, IDX/CSV ingestion, per-class
//! subsampling, and the frozen random-projection extractor that stands in
//! for a pretrained convolutional stack.

mod io;

pub use io::{load_csv, load_idx, write_csv};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A labeled dataset with disjoint, exhaustive train/val/test splits.
///
/// `landmark_pool` is the set of rows landmark sampling may draw from. It
/// starts out equal to the training split; per-class subsampling shrinks
/// the labeled training split but leaves the pool untouched, which is how
/// unlabeled data keeps feeding the landmark selection.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub landmark_pool: Vec<usize>,
    pub name: String,
    pub seed: u64,
}

impl Dataset {
    /// Build from raw rows with a stratified 70/15/15 split.
    pub fn from_parts(
        features: Matrix,
        labels: Vec<usize>,
        name: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let name = name.into();
        let n = features.rows();
        if n == 0 {
            return Err(Error::EmptyDataset(name));
        }
        if labels.len() != n {
            return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
        }
        if !features.all_finite() {
            return Err(Error::DegenerateData("non-finite feature values".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |&l| l + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for pool in &mut by_class {
            pool.shuffle(&mut rng);
            let k = pool.len();
            let n_val = (k as f64 * 0.15).round() as usize;
            let n_test = (k as f64 * 0.15).round() as usize;
            let n_train = k - n_val - n_test;
            train.extend_from_slice(&pool[..n_train]);
            val.extend_from_slice(&pool[n_train..n_train + n_val]);
            test.extend_from_slice(&pool[n_train + n_val..]);
        }
        let ds = Dataset {
            landmark_pool: train.clone(),
            features,
            labels,
            n_classes,
            train,
            val,
            test,
            name,
            seed,
        };
        ds.check_invariants()?;
        Ok(ds)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.features.rows();
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(
                    "splits must be disjoint and in range".into(),
                ));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("splits must be exhaustive".into()));
        }
        for &l in &self.labels {
            if l >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: self.n_classes,
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn split_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn split_features(&self, idx: &[usize]) -> Matrix {
        self.features.select_rows(idx)
    }

    /// Whether the landmark pool is exactly the labeled training split (in
    /// which case stratified sampling applies).
    pub fn pool_is_labeled_train(&self) -> bool {
        self.landmark_pool == self.train
    }

    /// Replace the feature matrix (e.g. after the frozen extractor),
    /// keeping labels and splits.
    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.features.rows() {
            return Err(Error::dim("row count changed by feature transform"));
        }
        self.features = features;
        Ok(self)
    }
}

/// `c` unit-covariance Gaussian clusters with centers at pairwise distance
/// at least `cluster_sep`, stratified-split 70/15/15. Class counts are
/// balanced within one.
pub fn make_blobs(n: usize, d: usize, c: usize, cluster_sep: f64, seed: u64) -> Result<Dataset> {
    if c < 2 || n < c {
        return Err(Error::InvalidArgument(format!(
            "need n >= c >= 2, got n = {n}, c = {c}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rejection-sample centers on a growing shell until they are separated.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut radius = cluster_sep.max(1.0);
    let mut failures = 0;
    while centers.len() < c {
        let mut cand: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let r = radius * rng.random_range(0.5..1.0);
        for v in &mut cand {
            *v *= r / norm;
        }
        let ok = centers
            .iter()
            .all(|e| crate::tensor::sq_dist(e, &cand) >= cluster_sep * cluster_sep);
        if ok {
            centers.push(cand);
            failures = 0;
        } else {
            failures += 1;
            if failures > 200 {
                radius *= 1.5;
                failures = 0;
            }
        }
    }
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let cls = i % c;
        let row = features.row_mut(i);
        for (v, center) in row.iter_mut().zip(&centers[cls]) {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = center + noise;
        }
        labels.push(cls);
    }
    Dataset::from_parts(features, labels, format!("blobs-n{n}-d{d}-c{c}"), seed)
}

/// Shrink the training split to exactly `k_per_class` labeled rows per
/// class. Validation and test splits are untouched, and the landmark pool
/// keeps the full original training rows.
pub fn subsample_per_class(ds: &Dataset, k_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for &i in &ds.train {
        by_class[ds.labels[i]].push(i);
    }
    let mut new_train = Vec::with_capacity(k_per_class * ds.n_classes);
    for (cls, pool) in by_class.iter_mut().enumerate() {
        if pool.len() < k_per_class {
            return Err(Error::InsufficientClass {
                class: cls,
                have: pool.len(),
                need: k_per_class,
            });
        }
        pool.shuffle(&mut rng);
        new_train.extend_from_slice(&pool[..k_per_class]);
    }
    let mut out = ds.clone();
    out.landmark_pool = ds.train.clone();
    out.train = new_train;
    Ok(out)
}

/// Frozen feature extractor: a seeded Gaussian projection followed by relu.
/// Stands in for the pretrained convolutional representations; its outputs
/// are non-negative, so chi-square kernels are applicable downstream.
#[derive(Debug, Clone)]
pub struct FrozenExtractor {
    projection: Matrix,
}

impl FrozenExtractor {
    pub fn new(d_raw: usize, d_feat: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_raw as f64).sqrt();
        let projection = Matrix::from_fn(d_raw, d_feat, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * scale
        });
        FrozenExtractor { projection }
    }

    pub fn input_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }

    /// `relu(raw * projection)`; pure, identical output for identical input.
    pub fn extract(&self, raw: &Matrix) -> Result<Matrix> {
        if raw.cols() != self.projection.rows() {
            return Err(Error::dim(format!(
                "extractor takes {} columns, got {}",
                self.projection.rows(),
                raw.cols()
            )));
        }
        let mut out = raw.matmul(&self.projection)?;
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_balanced_and_deterministic() {
        let ds = make_blobs(103, 6, 5, 4.0, 9).unwrap();
        let mut counts = vec![0usize; 5];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1, "{counts:?}");

        let ds2 = make_blobs(103, 6, 5, 4.0, 9).unwrap();
        assert_eq!(ds.features, ds2.features);
        assert_eq!(ds.train, ds2.train);

        ds.check_invariants().unwrap();
    }

    #[test]
    fn blob_centers_respect_separation() {
        let ds = make_blobs(60, 4, 6, 8.0, 3).unwrap();
        // class means should sit far apart when sep = 8
        let mut means = vec![vec![0.0; 4]; 6];
        let mut counts = vec![0usize; 6];
        for i in 0..60 {
            let l = ds.labels[i];
            counts[l] += 1;
            for j in 0..4 {
                means[l][j] += ds.features.get(i, j);
            }
        }
        for (m, &k) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= k as f64;
            }
        }
        for a in 0..6 {
            for b in (a + 1)..6 {
                let d = crate::tensor::sq_dist(&means[a], &means[b]).sqrt();
                assert!(d > 5.0, "classes {a},{b} means only {d} apart");
            }
        }
    }

    #[test]
    fn giant_separation_is_linearly_separable_by_centroids() {
        let ds = make_blobs(80, 5, 2, 100.0, 4).unwrap();
        // nearest-centroid on train centroids classifies test perfectly
        let mut centroids = vec![vec![0.0; 5]; 2];
        let mut counts = [0usize; 2];
        for &i in &ds.train {
            counts[ds.labels[i]] += 1;
            for j in 0..5 {
                centroids[ds.labels[i]][j] += ds.features.get(i, j);
            }
        }
        for (c, &k) in centroids.iter_mut().zip(&counts) {
            for v in c.iter_mut() {
                *v /= k as f64;
            }
        }
        for &i in &ds.test {
            let d0 = crate::tensor::sq_dist(ds.features.row(i), &centroids[0]);
            let d1 = crate::tensor::sq_dist(ds.features.row(i), &centroids[1]);
            let pred = if d0 < d1 { 0 } else { 1 };
            assert_eq!(pred, ds.labels[i]);
        }
    }

    #[test]
    fn subsample_counts_and_pool() {
        let ds = make_blobs(400, 4, 10, 5.0, 11).unwrap();
        let small = subsample_per_class(&ds, 5, 1).unwrap();
        assert_eq!(small.train.len(), 50);
        let mut counts = vec![0usize; 10];
        for &i in &small.train {
            counts[small.labels[i]] += 1;
        }
        assert!(counts.iter().all(|&k| k == 5));
        // pool still the full original train split
        assert_eq!(small.landmark_pool, ds.train);
        assert!(!small.pool_is_labeled_train());
        // val/test untouched
        assert_eq!(small.val, ds.val);
        assert_eq!(small.test, ds.test);

        // identity when k = full class size
        let full_k = ds.train.len() / 10;
        let same = subsample_per_class(&ds, full_k, 2).unwrap();
        assert_eq!(same.train.len(), ds.train.len());

        // different seeds -> different index sets, same counts
        let a = subsample_per_class(&ds, 5, 3).unwrap();
        let b = subsample_per_class(&ds, 5, 4).unwrap();
        assert_ne!(a.train, b.train);
        assert_eq!(a.train.len(), b.train.len());
    }

    #[test]
    fn subsample_insufficient_class_errors() {
        let ds = make_blobs(40, 3, 10, 5.0, 12).unwrap();
        assert!(matches!(
            subsample_per_class(&ds, 50, 0),
            Err(Error::InsufficientClass { .. })
        ));
    }

    #[test]
    fn extractor_is_pure_relu_projection() {
        let fx = FrozenExtractor::new(6, 4, 77);
        let zero = Matrix::zeros(3, 6);
        let out = fx.extract(&zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_fn(10, 6, |_, _| rng.random_range(-3.0..3.0));
        let a = fx.extract(&x).unwrap();
        let b = fx.extract(&x).unwrap();
        assert_eq!(a, b); // bitwise identical across calls
        assert!(a.data().iter().all(|&v| v >= 0.0));

        assert!(fx.extract(&Matrix::zeros(2, 5)).is_err());
    }
}
