//! Assemble a layer stack from an architecture spec and a dataset.

use crate::config::{ArchitectureSpec, RunConfig, WInit};
use crate::data::Dataset;
use crate::error::Result;
use crate::features::{
    sample_landmarks_stratified, sample_landmarks_uniform, FastfoodBlock, LandmarkSet,
};
use crate::kernels::KernelSpec;
use crate::mix_seed;
use crate::nn::layers::{
    Activation, DenseLayer, FriedLayer, Layer, LayerStack, MultiKernelLayer, NystromLayer,
};
use crate::tensor::Matrix;
use std::ops::Range;

/// A built stack plus the resolved values worth logging as run metadata
/// (bandwidths picked by the heuristic, sampling decisions).
pub struct BuildOutcome {
    pub stack: LayerStack,
    pub meta: Vec<(String, String)>,
}

/// Sample landmarks from the dataset's pool: stratified when the pool is
/// the labeled training split, plain uniform otherwise (an unlabeled pool
/// has nothing to stratify on).
fn sample_pool_landmarks(
    ds: &Dataset,
    kernel: &KernelSpec,
    m: usize,
    seed: u64,
    meta: &mut Vec<(String, String)>,
) -> Result<LandmarkSet> {
    let pool_features = ds.split_features(&ds.landmark_pool);
    let mut ls = if ds.pool_is_labeled_train() {
        let pool_labels = ds.split_labels(&ds.landmark_pool);
        sample_landmarks_stratified(&pool_features, &pool_labels, kernel, m, seed)?
    } else {
        meta.push((
            "landmarks.sampling".into(),
            "uniform (pool larger than labeled train)".into(),
        ));
        sample_landmarks_uniform(&pool_features, kernel, m, seed)?
    };
    // remap indices from pool-relative to dataset rows
    ls.source_indices = ls
        .source_indices
        .iter()
        .map(|&i| ds.landmark_pool[i])
        .collect();
    Ok(ls)
}

fn nystrom_layer_from(
    ls: LandmarkSet,
    adaptive: bool,
    w_init: WInit,
    init_seed: u64,
) -> NystromLayer {
    match (adaptive, w_init) {
        (true, WInit::Random) => {
            let m = ls.m();
            NystromLayer::with_random_w(ls, m, init_seed)
        }
        _ => NystromLayer::new(ls, adaptive),
    }
}

/// Split `d` columns into `groups` contiguous ranges with balanced widths.
pub fn column_groups(d: usize, groups: usize) -> Vec<Range<usize>> {
    let base = d / groups;
    let rem = d % groups;
    let mut out = Vec::with_capacity(groups);
    let mut lo = 0;
    for g in 0..groups {
        let w = base + usize::from(g < rem);
        out.push(lo..lo + w);
        lo += w;
    }
    out
}

pub fn build_stack(cfg: &RunConfig, ds: &Dataset) -> Result<BuildOutcome> {
    let mut meta: Vec<(String, String)> = vec![(
        "bandwidth.reading".into(),
        "inverse mean squared pairwise distance".into(),
    )];
    let d = ds.dim();
    let c = ds.n_classes;
    let train_features = ds.split_features(&ds.train);
    let heuristic_seed = mix_seed(cfg.seeds.data, 0xBA0D);
    let init_seed = |i: u64| mix_seed(cfg.seeds.init, i);

    let layers = match &cfg.architecture {
        ArchitectureSpec::Dense { hidden } => {
            vec![
                Layer::Dense(DenseLayer::new(d, *hidden, Activation::Relu, init_seed(0))),
                Layer::Dense(DenseLayer::new(*hidden, c, Activation::None, init_seed(1))),
            ]
        }
        ArchitectureSpec::DeepFried {
            stacks,
            adaptive,
            gamma,
        } => {
            let g = gamma.resolve(&train_features, heuristic_seed)?;
            meta.push(("resolved.gamma".into(), format!("{g}")));
            meta.push((
                "fastfood.scaling".into(),
                "chi-distributed row norms".into(),
            ));
            let blocks: Vec<FastfoodBlock> = (0..*stacks)
                .map(|i| FastfoodBlock::for_rbf_gamma(d, g, mix_seed(cfg.seeds.landmarks, i as u64)))
                .collect::<Result<_>>()?;
            let fried = FriedLayer::new(blocks, *adaptive)?;
            let width = fried.output_dim();
            vec![
                Layer::Fried(fried),
                Layer::Dense(DenseLayer::new(width, c, Activation::None, init_seed(0))),
            ]
        }
        ArchitectureSpec::Nystrom {
            kernel,
            m,
            adaptive,
            w_init,
        } => {
            let spec = kernel.resolve(&train_features, heuristic_seed)?;
            meta.push(("resolved.kernel".into(), spec.render()));
            let ls = sample_pool_landmarks(ds, &spec, *m, cfg.seeds.landmarks, &mut meta)?;
            let layer = nystrom_layer_from(ls, *adaptive, *w_init, init_seed(100));
            let width = layer.output_dim();
            vec![
                Layer::Nystrom(layer),
                Layer::Dense(DenseLayer::new(width, c, Activation::None, init_seed(0))),
            ]
        }
        ArchitectureSpec::MultiKernel {
            kernels,
            m,
            adaptive,
        } => {
            // one landmark subsample shared by every kernel
            let first = kernels[0].resolve(&train_features, heuristic_seed)?;
            let base = sample_pool_landmarks(ds, &first, *m, cfg.seeds.landmarks, &mut meta)?;
            let mut subs = Vec::with_capacity(kernels.len());
            for (i, kc) in kernels.iter().enumerate() {
                let spec = kc.resolve(&train_features, heuristic_seed)?;
                meta.push((format!("resolved.kernel.{i}"), spec.render()));
                let ls = if i == 0 {
                    base.clone()
                } else {
                    LandmarkSet::from_points(
                        base.points.clone(),
                        spec,
                        base.source_indices.clone(),
                        base.seed,
                    )?
                };
                subs.push(NystromLayer::new(ls, *adaptive));
            }
            let layer = MultiKernelLayer::new(subs, None)?;
            let width = layer.output_dim();
            vec![
                Layer::MultiKernel(layer),
                Layer::Dense(DenseLayer::new(width, c, Activation::None, init_seed(0))),
            ]
        }
        ArchitectureSpec::MultiNystrom {
            groups,
            kernel,
            m,
            adaptive,
        } => {
            let slices = column_groups(d, *groups);
            // same landmark rows for every group; kernels act on column slices
            let probe = kernel.resolve(&train_features, heuristic_seed)?;
            let base = sample_pool_landmarks(ds, &probe, *m, cfg.seeds.landmarks, &mut meta)?;
            let full_points = base.points.clone();
            let mut subs = Vec::with_capacity(*groups);
            for (gi, sl) in slices.iter().enumerate() {
                let group_train = train_features.select_cols(sl.start, sl.end);
                let spec = kernel.resolve(&group_train, mix_seed(heuristic_seed, gi as u64))?;
                meta.push((format!("resolved.kernel.group{gi}"), spec.render()));
                let pts = full_points.select_cols(sl.start, sl.end);
                let ls =
                    LandmarkSet::from_points(pts, spec, base.source_indices.clone(), base.seed)?;
                subs.push(NystromLayer::new(ls, *adaptive));
            }
            let layer = MultiKernelLayer::new(subs, Some(slices))?;
            let width = layer.output_dim();
            vec![
                Layer::MultiKernel(layer),
                Layer::Dense(DenseLayer::new(width, c, Activation::None, init_seed(0))),
            ]
        }
    };
    Ok(BuildOutcome {
        stack: LayerStack::new(layers)?,
        meta,
    })
}

/// Apply the configured frozen extractor, if any, returning the dataset the
/// stack actually trains on.
pub fn apply_extractor(cfg: &RunConfig, ds: Dataset) -> Result<(Dataset, Option<Matrix>)> {
    match cfg.extractor_dim {
        None => Ok((ds, None)),
        Some(out_dim) => {
            let fx = crate::data::FrozenExtractor::new(
                ds.dim(),
                out_dim,
                mix_seed(cfg.seeds.data, 0xFE47),
            );
            let extracted = fx.extract(&ds.features)?;
            let ds = ds.with_features(extracted.clone())?;
            Ok((ds, Some(extracted)))
        }
    }
}
