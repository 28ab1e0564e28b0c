//! Differentiable layer stack, loss, optimizer, training loop, gradient
//! verification and checkpoints.

mod adam;
mod build;
mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod train;

pub use adam::{AdamState, DEFAULT_LR};
pub use build::{apply_extractor, build_stack, column_groups, BuildOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{
    Activation, DenseLayer, ForwardCache, FriedLayer, Layer, LayerCache, LayerStack,
    MultiKernelLayer, NystromLayer,
};
pub use loss::{loss_softmax_xent, softmax};
pub use train::{accuracy, fit, train, EpochMetrics, FitReport, TrainOutcome};
