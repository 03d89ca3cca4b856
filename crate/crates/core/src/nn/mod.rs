//! Layers, the width-scaled network builder, loss and checkpoints.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod params;
mod spec;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC};
pub use loss::{argmax_rows, cross_entropy, per_sample_cross_entropy, softmax};
pub use network::{ForwardPass, Gradients, LossGrad, Mode, Needs, Network};
pub use params::{param_layout, ModelParams, ParamInfo, ParamKind};
pub use spec::{build_network, ActShape, Family, LayerSpec, NetworkSpec, NUM_CLASSES};
