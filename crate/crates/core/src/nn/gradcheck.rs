//! Central-difference verification of the analytic gradients.
//!
//! The check perturbs individual trainable scalars, re-runs the forward
//! pass and loss, and compares the numeric slope against the reverse-mode
//! gradient. It is the ground truth every layer must pass.

use crate::error::Result;
use crate::nn::layers::LayerStack;
use crate::nn::loss::loss_softmax_xent;
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of scalars probed.
    pub checked: usize,
    pub max_rel_err: f64,
    /// (tensor index, element index) of the worst scalar.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Probe up to `probes_per_tensor` random scalars of every trainable
/// tensor with step `h`.
pub fn check_gradients(
    stack: &mut LayerStack,
    x: &Matrix,
    labels: &[usize],
    probes_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (logits, cache) = stack.forward(x)?;
    let (_, dlogits) = loss_softmax_xent(&logits, labels)?;
    let analytic = stack.backward(&cache, &dlogits)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = stack.param_sizes();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (ti, &size) in sizes.iter().enumerate() {
        let probes: Vec<usize> = if size <= probes_per_tensor {
            (0..size).collect()
        } else {
            (0..probes_per_tensor)
                .map(|_| rng.random_range(0..size))
                .collect()
        };
        for ei in probes {
            let orig = stack.param_slices_mut()[ti][ei];

            stack.param_slices_mut()[ti][ei] = orig + h;
            let (lp_logits, _) = stack.forward(x)?;
            let (lp, _) = loss_softmax_xent(&lp_logits, labels)?;

            stack.param_slices_mut()[ti][ei] = orig - h;
            let (lm_logits, _) = stack.forward(x)?;
            let (lm, _) = loss_softmax_xent(&lm_logits, labels)?;

            stack.param_slices_mut()[ti][ei] = orig;

            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[ti][ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((ti, ei));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{make_fastfood, LandmarkSet};
    use crate::kernels::KernelSpec;
    use crate::nn::layers::{Activation, DenseLayer, FriedLayer, Layer, MultiKernelLayer, NystromLayer};
    use rand::Rng;

    fn batch(b: usize, d: usize, c: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(b, d, |_, _| rng.random_range(0.05..2.0));
        let labels = (0..b).map(|i| i % c).collect();
        (x, labels)
    }

    fn landmarks(m: usize, d: usize, kernel: KernelSpec, seed: u64) -> LandmarkSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Matrix::from_fn(m, d, |_, _| rng.random_range(0.05..2.0));
        LandmarkSet::from_points(pts, kernel, (0..m).collect(), seed).unwrap()
    }

    const TOL: f64 = 1e-5;
    const H: f64 = 1e-5;

    #[test]
    fn nystrom_layers_pass_for_every_kernel_kind() {
        for (i, kernel) in [
            KernelSpec::linear(),
            KernelSpec::rbf(0.8),
            KernelSpec::chi2_exp(0.6),
        ]
        .into_iter()
        .enumerate()
        {
            let ls = landmarks(5, 4, kernel, 10 + i as u64);
            let mut stack = LayerStack::new(vec![
                Layer::Nystrom(NystromLayer::new(ls, true)),
                Layer::Dense(DenseLayer::new(5, 3, Activation::None, 1)),
            ])
            .unwrap();
            let (x, labels) = batch(8, 4, 3, 20 + i as u64);
            let report = check_gradients(&mut stack, &x, &labels, 50, H, 0).unwrap();
            assert!(
                report.passes(TOL),
                "{kernel}: max rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn multi_kernel_layer_passes() {
        let subs = vec![
            NystromLayer::new(landmarks(3, 4, KernelSpec::rbf(0.5), 1), true),
            NystromLayer::new(landmarks(4, 4, KernelSpec::linear(), 2), true),
            NystromLayer::new(landmarks(2, 4, KernelSpec::chi2_exp(1.1), 3), true),
        ];
        let layer = MultiKernelLayer::new(subs, None).unwrap();
        let mut stack = LayerStack::new(vec![
            Layer::MultiKernel(layer),
            Layer::Dense(DenseLayer::new(9, 3, Activation::None, 4)),
        ])
        .unwrap();
        let (x, labels) = batch(8, 4, 3, 30);
        let report = check_gradients(&mut stack, &x, &labels, 40, H, 1).unwrap();
        assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn grouped_multi_kernel_passes() {
        let subs = vec![
            NystromLayer::new(landmarks(3, 2, KernelSpec::rbf(0.9), 5), true),
            NystromLayer::new(landmarks(3, 2, KernelSpec::rbf(0.4), 6), true),
        ];
        let layer = MultiKernelLayer::new(subs, Some(vec![0..2, 2..4])).unwrap();
        let mut stack = LayerStack::new(vec![
            Layer::MultiKernel(layer),
            Layer::Dense(DenseLayer::new(6, 2, Activation::None, 7)),
        ])
        .unwrap();
        let (x, labels) = batch(6, 4, 2, 31);
        let report = check_gradients(&mut stack, &x, &labels, 40, H, 2).unwrap();
        assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn dense_relu_three_layer_stack_passes() {
        let mut stack = LayerStack::new(vec![
            Layer::Dense(DenseLayer::new(4, 6, Activation::Relu, 1)),
            Layer::Dense(DenseLayer::new(6, 5, Activation::Relu, 2)),
            Layer::Dense(DenseLayer::new(5, 3, Activation::None, 3)),
        ])
        .unwrap();
        let (x, labels) = batch(8, 4, 3, 32);
        let report = check_gradients(&mut stack, &x, &labels, 40, H, 3).unwrap();
        assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn adaptive_fastfood_diagonals_pass() {
        let blocks = vec![make_fastfood(4, 0.9, 1).unwrap(), make_fastfood(4, 0.9, 2).unwrap()];
        let layer = FriedLayer::new(blocks, true).unwrap();
        let mut stack = LayerStack::new(vec![
            Layer::Fried(layer),
            Layer::Dense(DenseLayer::new(16, 3, Activation::None, 3)),
        ])
        .unwrap();
        let (x, labels) = batch(8, 4, 3, 33);
        let report = check_gradients(&mut stack, &x, &labels, 16, H, 4).unwrap();
        assert!(report.passes(TOL), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn frozen_tensors_receive_no_gradient_slots() {
        // structural assertion: a non-adaptive Nystrom layer exposes no
        // trainable tensors, so the gradient list is exactly the classifier.
        let ls = landmarks(4, 3, KernelSpec::rbf(0.5), 8);
        let stack = LayerStack::new(vec![
            Layer::Nystrom(NystromLayer::new(ls, false)),
            Layer::Dense(DenseLayer::new(4, 2, Activation::None, 9)),
        ])
        .unwrap();
        let (x, labels) = batch(4, 3, 2, 34);
        let (logits, cache) = stack.forward(&x).unwrap();
        let (_, dlogits) = loss_softmax_xent(&logits, &labels).unwrap();
        let grads = stack.backward(&cache, &dlogits).unwrap();
        assert_eq!(grads.len(), 2); // classifier weight + bias only
        assert_eq!(stack.param_sizes(), vec![8, 2]);
    }

    #[test]
    fn duplicated_batch_leaves_mean_gradients_unchanged() {
        let ls = landmarks(4, 3, KernelSpec::rbf(0.5), 8);
        let stack = LayerStack::new(vec![
            Layer::Nystrom(NystromLayer::new(ls, true)),
            Layer::Dense(DenseLayer::new(4, 2, Activation::None, 9)),
        ])
        .unwrap();
        let (x, labels) = batch(5, 3, 2, 35);
        let mut doubled_rows = Vec::new();
        for i in 0..5 {
            doubled_rows.push(x.row(i).to_vec());
        }
        for i in 0..5 {
            doubled_rows.push(x.row(i).to_vec());
        }
        let x2 = Matrix::from_rows(&doubled_rows).unwrap();
        let mut labels2 = labels.clone();
        labels2.extend_from_slice(&labels);

        let grads1 = {
            let (logits, cache) = stack.forward(&x).unwrap();
            let (_, d) = loss_softmax_xent(&logits, &labels).unwrap();
            stack.backward(&cache, &d).unwrap()
        };
        let grads2 = {
            let (logits, cache) = stack.forward(&x2).unwrap();
            let (_, d) = loss_softmax_xent(&logits, &labels2).unwrap();
            stack.backward(&cache, &d).unwrap()
        };
        for (g1, g2) in grads1.iter().zip(&grads2) {
            for (a, b) in g1.iter().zip(g2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_shapes_match_parameters() {
        let ls = landmarks(4, 3, KernelSpec::chi2_exp(0.8), 12);
        let mut stack = LayerStack::new(vec![
            Layer::Nystrom(NystromLayer::new(ls, true)),
            Layer::Dense(DenseLayer::new(4, 3, Activation::Relu, 13)),
            Layer::Dense(DenseLayer::new(3, 2, Activation::None, 14)),
        ])
        .unwrap();
        let (x, labels) = batch(6, 3, 2, 36);
        let (logits, cache) = stack.forward(&x).unwrap();
        let (_, dlogits) = loss_softmax_xent(&logits, &labels).unwrap();
        let grads = stack.backward(&cache, &dlogits).unwrap();
        let sizes = stack.param_sizes();
        assert_eq!(grads.len(), sizes.len());
        for (g, s) in grads.iter().zip(&sizes) {
            assert_eq!(g.len(), *s);
        }
        assert_eq!(
            sizes.iter().sum::<usize>(),
            stack.param_count(),
        );
        drop(grads);
        assert_eq!(stack.param_slices_mut().len(), sizes.len());
    }
}
