//! Forward-only CNN inference over a layer DAG.
//!
//! A network is a topologically ordered list of named nodes; evaluating it
//! produces the activation tensor of every node, so any layer can be tapped
//! as a feature.  The operator set covers the AlexNet / CaffeNet / GoogLeNet
//! family: convolution (cross-correlation, grouped), ReLU, across-channel
//! local response normalization, max/average pooling with ceil-mode spatial
//! arithmetic, fully connected layers, softmax and channel concatenation.
//! Dropout is identity at inference.

mod forward;
mod graph;
pub mod ops;
mod tensor;
mod weights;

pub use forward::{extract_feature, forward, Activations};
pub use graph::{
    infer_shapes, load_arch, parse_arch, ConvParams, LayerKind, LayerNode, LrnParams,
    NetworkGraph, PoolParams,
};
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, seeded_weights, WeightStore};

use crate::Result;
use std::path::Path;

/// A graph together with its parameters; what experiments pass around.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: NetworkGraph,
    pub weights: WeightStore,
}

/// Load and validate an architecture file plus a weights file.
///
/// Shape inference runs over the whole DAG and every conv/fc parameter
/// tensor is cross-checked against the shapes the graph requires.
pub fn load_network(arch_file: &Path, weights_file: &Path) -> Result<Network> {
    let graph = load_arch(arch_file)?;
    let weights = load_weights(weights_file, &graph)?;
    Ok(Network { graph, weights })
}
