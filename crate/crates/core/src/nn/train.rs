//! Minibatch training loop: Adam on softmax cross-entropy with early
//! stopping on the validation accuracy plateau.

use crate::config::{OptimizerConfig, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::nn::adam::AdamState;
use crate::nn::build::{apply_extractor, build_stack};
use crate::nn::layers::LayerStack;
use crate::nn::loss::loss_softmax_xent;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Stack restored to the best validation epoch.
    pub stack: LayerStack,
    pub trace: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy at the best validation epoch.
    pub test_acc: f64,
}

/// Outcome of a config-driven run: the fit plus the resolved metadata and
/// the (possibly extracted) dataset the model was trained on.
pub struct TrainOutcome {
    pub fit: FitReport,
    pub meta: Vec<(String, String)>,
    pub dataset: Dataset,
}

/// Fraction of rows in `idx` the stack classifies correctly.
pub fn accuracy(stack: &LayerStack, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let x = ds.split_features(chunk);
        let (logits, _) = stack.forward(&x)?;
        for (r, &i) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == ds.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Train `stack` on the dataset's training split. Deterministic given the
/// data seed; aborts with a diagnostic if the loss goes non-finite.
pub fn fit(
    mut stack: LayerStack,
    ds: &Dataset,
    opt: &OptimizerConfig,
    data_seed: u64,
) -> Result<FitReport> {
    let train_x = ds.split_features(&ds.train);
    let train_y = ds.split_labels(&ds.train);
    let n_train = ds.train.len();
    if n_train == 0 {
        return Err(Error::EmptyDataset("training split".into()));
    }
    let batch = opt.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(data_seed, 0x0DA7));
    let mut order: Vec<usize> = (0..n_train).collect();

    let mut adam = AdamState::new(opt.lr, &stack.param_sizes());
    let mut trace: Vec<EpochMetrics> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_stack = stack.clone();

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let xb = train_x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let (logits, cache) = stack.forward(&xb)?;
            let (loss, dlogits) = loss_softmax_xent(&logits, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: adam.step_count() as usize,
                    loss,
                });
            }
            let grads = stack.backward(&cache, &dlogits)?;
            let mut params = stack.param_slices_mut();
            adam.step(&mut params, &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let val_acc = accuracy(&stack, ds, &ds.val)?;
        let test_acc = accuracy(&stack, ds, &ds.test)?;
        trace.push(EpochMetrics {
            epoch,
            train_loss,
            val_acc,
            test_acc,
        });
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best_stack = stack.clone();
        }
        if epoch - best_epoch >= opt.patience {
            break;
        }
    }

    let test_acc = trace
        .get(best_epoch)
        .map(|m| m.test_acc)
        .unwrap_or_default();
    Ok(FitReport {
        stack: best_stack,
        trace,
        best_epoch,
        best_val_acc: best_val.max(0.0),
        test_acc,
    })
}

/// Config-driven training: apply the frozen extractor, build the stack,
/// fit. The returned dataset is the one the stack saw (post-extractor).
pub fn train(cfg: &RunConfig, ds: Dataset) -> Result<TrainOutcome> {
    let (ds, _) = apply_extractor(cfg, ds)?;
    let built = build_stack(cfg, &ds)?;
    let fit_report = fit(built.stack, &ds, &cfg.optimizer, cfg.seeds.data)?;
    Ok(TrainOutcome {
        fit: fit_report,
        meta: built.meta,
        dataset: ds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        ArchitectureSpec, DatasetSpec, GammaSpec, KernelConfig, SeedTriple, WInit,
    };
    use crate::data::make_blobs;
    use crate::features::sample_landmarks_stratified;
    use crate::kernels::KernelSpec;
    use crate::nn::layers::{Activation, DenseLayer, Layer, NystromLayer};

    fn blob_cfg(arch: ArchitectureSpec, epochs: usize) -> RunConfig {
        RunConfig {
            name: "t".into(),
            dataset: DatasetSpec::Blobs {
                n: 1200,
                dim: 8,
                classes: 2,
                sep: 12.0,
            },
            extractor_dim: None,
            architecture: arch,
            optimizer: OptimizerConfig {
                epochs,
                ..OptimizerConfig::default()
            },
            seeds: SeedTriple::default(),
            output_dir: "out".into(),
        }
    }

    #[test]
    fn separable_blobs_reach_99_percent() {
        // every feature-layer type gets there within 50 epochs
        let ds = make_blobs(1200, 8, 2, 12.0, 5).unwrap();
        let archs = vec![
            ArchitectureSpec::Dense { hidden: 16 },
            ArchitectureSpec::Nystrom {
                kernel: KernelConfig::Rbf(GammaSpec::Auto),
                m: 8,
                adaptive: true,
                w_init: WInit::Warm,
            },
            ArchitectureSpec::DeepFried {
                stacks: 3,
                adaptive: true,
                gamma: GammaSpec::Auto,
            },
        ];
        for arch in archs {
            let kind = arch.kind();
            let cfg = blob_cfg(arch, 50);
            let outcome = train(&cfg, ds.clone()).unwrap();
            assert!(
                outcome.fit.test_acc >= 0.99,
                "{kind}: test acc {}",
                outcome.fit.test_acc
            );
        }
    }

    #[test]
    fn deterministic_trace() {
        let ds = make_blobs(200, 6, 3, 6.0, 7).unwrap();
        let cfg = blob_cfg(
            ArchitectureSpec::Nystrom {
                kernel: KernelConfig::Rbf(GammaSpec::Auto),
                m: 6,
                adaptive: true,
                w_init: WInit::Warm,
            },
            10,
        );
        let a = train(&cfg, ds.clone()).unwrap();
        let b = train(&cfg, ds).unwrap();
        assert_eq!(a.fit.trace, b.fit.trace);
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let ds = make_blobs(100, 4, 2, 5.0, 9).unwrap();
        let mut cfg = blob_cfg(ArchitectureSpec::Dense { hidden: 8 }, 50);
        cfg.optimizer.lr = 1e154; // force overflow
        match train(&cfg, ds) {
            Err(Error::Diverged { loss, .. }) => assert!(!loss.is_finite()),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.fit.test_acc)),
        }
    }

    #[test]
    fn adaptive_at_init_equals_non_adaptive() {
        let ds = make_blobs(120, 5, 3, 6.0, 11).unwrap();
        let feats = ds.split_features(&ds.train);
        let labels = ds.split_labels(&ds.train);
        let ls =
            sample_landmarks_stratified(&feats, &labels, &KernelSpec::rbf(0.3), 6, 13).unwrap();
        let adaptive = LayerStack::new(vec![
            Layer::Nystrom(NystromLayer::new(ls.clone(), true)),
            Layer::Dense(DenseLayer::new(6, 3, Activation::None, 17)),
        ])
        .unwrap();
        let frozen = LayerStack::new(vec![
            Layer::Nystrom(NystromLayer::new(ls, false)),
            Layer::Dense(DenseLayer::new(6, 3, Activation::None, 17)),
        ])
        .unwrap();
        let x = ds.split_features(&ds.test);
        let (la, _) = adaptive.forward(&x).unwrap();
        let (lf, _) = frozen.forward(&x).unwrap();
        assert!(la.max_abs_diff(&lf) <= 1e-12);
    }
}
