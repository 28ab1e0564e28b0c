//! Explicit kernel feature maps: Nystrom landmarks, random kitchen sinks and
//! Fastfood, plus landmark sampling and the landmark sidecar file.

mod fastfood;
mod rks;

pub use fastfood::{
    dense_fastfood_matrix, fastfood_features, fastfood_transform, make_fastfood, FastfoodBlock,
};
pub use rks::{rks_features, RksActivation, RksProjection};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::tensor::{inv_sqrt_psd, Matrix, DEFAULT_EPS_REL};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A landmark subsample together with the whitening factor of its Gram
/// matrix. The points live in the same (frozen) feature space the kernel is
/// evaluated in.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    /// m x d landmark rows.
    pub points: Matrix,
    /// Pseudo-inverse square root of the landmark Gram matrix, m x m.
    pub k11_inv_sqrt: Matrix,
    pub kernel: KernelSpec,
    /// Row indices the landmarks were drawn from.
    pub source_indices: Vec<usize>,
    pub seed: u64,
}

impl LandmarkSet {
    /// Build a landmark set from explicit points.
    pub fn from_points(
        points: Matrix,
        kernel: KernelSpec,
        source_indices: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("need at least one landmark".into()));
        }
        if source_indices.len() != points.rows() {
            return Err(Error::dim(format!(
                "{} source indices for {} landmarks",
                source_indices.len(),
                points.rows()
            )));
        }
        kernel.validate()?;
        let k11 = gram(&kernel, &points, &points)?;
        let k11_inv_sqrt = inv_sqrt_psd(&k11, DEFAULT_EPS_REL)?;
        Ok(LandmarkSet {
            points,
            k11_inv_sqrt,
            kernel,
            source_indices,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.points.rows()
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

/// Stratified uniform landmark sampling: each class contributes
/// `floor(m/c)` or `ceil(m/c)` landmarks, the classes receiving the extra
/// one chosen uniformly at random. Falls back to global uniform draws for
/// any shortfall caused by small classes.
pub fn sample_landmarks_stratified(
    features: &Matrix,
    labels: &[usize],
    kernel: &KernelSpec,
    m: usize,
    seed: u64,
) -> Result<LandmarkSet> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "landmark count m = {m} must satisfy 1 <= m <= {n}"
        )));
    }
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    if c == 0 {
        return Err(Error::EmptyDataset("no labels".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = m / c;
    let rem = m % c;
    let mut class_order: Vec<usize> = (0..c).collect();
    class_order.shuffle(&mut rng);
    let mut quota = vec![base; c];
    for &cls in class_order.iter().take(rem) {
        quota[cls] += 1;
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut shortfall = 0usize;
    for cls in 0..c {
        let mut pool = by_class[cls].clone();
        pool.shuffle(&mut rng);
        let take = quota[cls].min(pool.len());
        shortfall += quota[cls] - take;
        chosen.extend_from_slice(&pool[..take]);
    }
    if shortfall > 0 {
        log::warn!(
            "stratified sampling short by {shortfall} landmarks; falling back to global uniform"
        );
        let taken: std::collections::HashSet<usize> = chosen.iter().copied().collect();
        let mut rest: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
        rest.shuffle(&mut rng);
        chosen.extend_from_slice(&rest[..shortfall]);
    }

    let points = features.select_rows(&chosen);
    LandmarkSet::from_points(points, *kernel, chosen, seed)
}

/// Plain uniform landmark sampling without replacement. Used when the
/// landmark pool has no labels to stratify on.
pub fn sample_landmarks_uniform(
    features: &Matrix,
    kernel: &KernelSpec,
    m: usize,
    seed: u64,
) -> Result<LandmarkSet> {
    let n = features.rows();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "landmark count m = {m} must satisfy 1 <= m <= {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(m);
    let points = features.select_rows(&idx);
    LandmarkSet::from_points(points, *kernel, idx, seed)
}

/// The Nystrom feature map: row i of the result is
/// `k_{x_i, L} * K11^{-1/2}`.
pub fn nystrom_features(ls: &LandmarkSet, x: &Matrix) -> Result<Matrix> {
    if x.cols() != ls.dim() {
        return Err(Error::dim(format!(
            "input dimension {} vs landmark dimension {}",
            x.cols(),
            ls.dim()
        )));
    }
    let kv = gram(&ls.kernel, x, &ls.points)?;
    kv.matmul(&ls.k11_inv_sqrt)
}

const SIDECAR_MAGIC: u32 = 0x4e594c53; // "NYLS"
const SIDECAR_VERSION: u32 = 1;

/// Write a landmark set to its binary sidecar file so runs can resume with
/// bit-identical state. Little-endian throughout: magic, version, m, d,
/// kernel text, seed, source indices, then row-major doubles for the points
/// and the whitening factor.
pub fn save_landmarks(ls: &LandmarkSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_u32::<LittleEndian>(SIDECAR_MAGIC)?;
    w.write_u32::<LittleEndian>(SIDECAR_VERSION)?;
    w.write_u32::<LittleEndian>(ls.m() as u32)?;
    w.write_u32::<LittleEndian>(ls.dim() as u32)?;
    let ktext = ls.kernel.render();
    w.write_u32::<LittleEndian>(ktext.len() as u32)?;
    w.write_all(ktext.as_bytes())?;
    w.write_u64::<LittleEndian>(ls.seed)?;
    for &i in &ls.source_indices {
        w.write_u64::<LittleEndian>(i as u64)?;
    }
    for &v in ls.points.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &v in ls.k11_inv_sqrt.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a landmark sidecar written by [`save_landmarks`]. The whitening
/// factor is loaded as stored, not recomputed.
pub fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let ctx = || format!("landmark sidecar {}", path.display());
    let magic = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if magic != SIDECAR_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            context: ctx(),
        });
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    if version != SIDECAR_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported sidecar version {version}"
        )));
    }
    let m = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let d = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let klen = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))? as usize;
    let mut kbuf = vec![0u8; klen];
    r.read_exact(&mut kbuf).map_err(|_| Error::Truncated(ctx()))?;
    let kernel = KernelSpec::parse(
        std::str::from_utf8(&kbuf)
            .map_err(|_| Error::InvalidArgument("kernel text not UTF-8".into()))?,
    )?;
    let seed = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::Truncated(ctx()))?;
    let mut source_indices = Vec::with_capacity(m);
    for _ in 0..m {
        source_indices.push(
            r.read_u64::<LittleEndian>()
                .map_err(|_| Error::Truncated(ctx()))? as usize,
        );
    }
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| Error::Truncated(ctx()))?,
            );
        }
        Matrix::from_vec(rows, cols, data)
    };
    let points = read_matrix(m, d)?;
    let k11_inv_sqrt = read_matrix(m, m)?;
    Ok(LandmarkSet {
        points,
        k11_inv_sqrt,
        kernel,
        source_indices,
        seed,
    })
}
