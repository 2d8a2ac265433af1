//! Single-image forward evaluation with a tap on every named layer.

use super::graph::{LayerKind, NetworkGraph};
use super::ops;
use super::tensor::{format_shape, Tensor};
use super::weights::WeightStore;
use crate::encode::{FeatureVector, Provenance};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// Result of one forward pass: the activation of every node, including the
/// data node itself (the preprocessed input is a legitimate feature).
#[derive(Debug, Clone)]
pub struct Activations {
    map: BTreeMap<String, Tensor>,
    evaluations: usize,
}

impl Activations {
    pub fn get(&self, layer: &str) -> Option<&Tensor> {
        self.map.get(layer)
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of node evaluations performed; equals the node count.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Evaluate every node once in topological order.
pub fn forward(graph: &NetworkGraph, weights: &WeightStore, input: &Tensor) -> Result<Activations> {
    if input.shape() != graph.input_shape() {
        return Err(Error::ShapeMismatch {
            layer: "data".to_string(),
            expected: format_shape(graph.input_shape()),
            got: format_shape(input.shape()),
        });
    }
    let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut evaluations = 0usize;
    for node in graph.nodes() {
        let with_layer = |e: Error| match e {
            Error::ShapeMismatch { expected, got, .. } => Error::ShapeMismatch {
                layer: node.name.clone(),
                expected,
                got,
            },
            Error::InvalidSpec(msg) => Error::InvalidSpec(format!("layer {}: {msg}", node.name)),
            Error::DimensionMismatch { expected, got } => Error::ShapeMismatch {
                layer: node.name.clone(),
                expected: expected.to_string(),
                got: got.to_string(),
            },
            other => other,
        };
        let out = match &node.kind {
            LayerKind::Data => input.clone(),
            LayerKind::Conv(p) => {
                let x = &map[&node.inputs[0]];
                let params = weights.get(&node.name).ok_or_else(|| Error::ShapeMismatch {
                    layer: node.name.clone(),
                    expected: "weights present".to_string(),
                    got: "none".to_string(),
                })?;
                ops::conv2d(x, &params[0], params[1].data(), p.stride, p.pad, p.groups)
                    .map_err(with_layer)?
            }
            LayerKind::Relu => ops::relu(&map[&node.inputs[0]]),
            LayerKind::Lrn(p) => {
                ops::lrn(&map[&node.inputs[0]], p.local_size, p.alpha, p.beta, p.k)
                    .map_err(with_layer)?
            }
            LayerKind::MaxPool(p) => {
                ops::maxpool(&map[&node.inputs[0]], p.kernel, p.stride, p.pad).map_err(with_layer)?
            }
            LayerKind::AvgPool(p) => {
                ops::avgpool(&map[&node.inputs[0]], p.kernel, p.stride, p.pad).map_err(with_layer)?
            }
            LayerKind::Fc { .. } => {
                let x = &map[&node.inputs[0]];
                let params = weights.get(&node.name).ok_or_else(|| Error::ShapeMismatch {
                    layer: node.name.clone(),
                    expected: "weights present".to_string(),
                    got: "none".to_string(),
                })?;
                ops::fully_connected(x, &params[0], params[1].data()).map_err(with_layer)?
            }
            LayerKind::Softmax => ops::softmax(&map[&node.inputs[0]]).map_err(with_layer)?,
            LayerKind::Concat { axis } => {
                let inputs: Vec<&Tensor> = node.inputs.iter().map(|n| &map[n]).collect();
                ops::concat(&inputs, *axis).map_err(with_layer)?
            }
            LayerKind::Dropout => map[&node.inputs[0]].clone(),
        };
        evaluations += 1;
        map.insert(node.name.clone(), out);
    }
    Ok(Activations { map, evaluations })
}

/// Flatten the named layer's activation into a feature vector.
pub fn extract_feature(
    graph: &NetworkGraph,
    activations: &Activations,
    layer_name: &str,
) -> Result<FeatureVector> {
    let tensor = activations.get(layer_name).ok_or_else(|| Error::UnknownLayer {
        name: layer_name.to_string(),
        available: graph.layer_names().join(", "),
    })?;
    Ok(FeatureVector::new(
        tensor.data().to_vec(),
        Provenance::Cnn(layer_name.to_string()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::graph::parse_arch;
    use crate::net::weights::seeded_weights;

    #[test]
    fn single_relu_network() {
        let g = parse_arch("input_shape=1,1,2\ndata data\nrelu1 relu inputs=data\n", "t").unwrap();
        let w = WeightStore::new();
        let input = Tensor::new(vec![1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let acts = forward(&g, &w, &input).unwrap();
        assert_eq!(acts.get("data").unwrap().data(), input.data());
        assert_eq!(acts.get("relu1").unwrap().data(), &[0.0, 2.0]);
        assert_eq!(acts.evaluations(), 2);
    }

    #[test]
    fn forward_is_deterministic() {
        let text = "\
input_shape=3,16,16
data data
conv1 conv out=4 kernel=3 pad=1 inputs=data
relu1 relu inputs=conv1
pool1 maxpool kernel=2 stride=2 inputs=relu1
fc1 fc out=8 inputs=pool1
";
        let g = parse_arch(text, "t").unwrap();
        let w = seeded_weights(&g, 5);
        let input = Tensor::new(vec![3, 16, 16], (0..768).map(|v| v as f32 * 0.01).collect())
            .unwrap();
        let a = forward(&g, &w, &input).unwrap();
        let b = forward(&g, &w, &input).unwrap();
        for (name, t) in a.layers() {
            assert_eq!(t.data(), b.get(name).unwrap().data(), "layer {name}");
        }
    }

    #[test]
    fn execution_matches_shape_inference() {
        let text = "\
input_shape=3,17,17
data data
conv1 conv out=6 kernel=5 stride=2 pad=2 inputs=data
relu1 relu inputs=conv1
norm1 lrn n=3 alpha=0.0001 beta=0.75 inputs=relu1
pool1 maxpool kernel=3 stride=2 inputs=norm1
branch1 conv out=4 kernel=1 inputs=pool1
branch2 conv out=3 kernel=3 pad=1 inputs=pool1
merged concat axis=0 inputs=branch1,branch2
ap avgpool kernel=2 stride=2 inputs=merged
fc1 fc out=12 inputs=ap
drop1 dropout inputs=fc1
prob softmax inputs=drop1
";
        let g = parse_arch(text, "t").unwrap();
        let w = seeded_weights(&g, 11);
        let input = Tensor::new(
            vec![3, 17, 17],
            (0..3 * 17 * 17).map(|v| (v % 13) as f32 * 0.1 - 0.5).collect(),
        )
        .unwrap();
        let inferred = crate::net::infer_shapes(&g).unwrap();
        let acts = forward(&g, &w, &input).unwrap();
        for (name, t) in acts.layers() {
            assert_eq!(t.shape(), inferred[name].as_slice(), "layer {name}");
        }
        assert_eq!(acts.evaluations(), g.nodes().len());
    }

    #[test]
    fn wrong_input_shape_names_data_node() {
        let g = parse_arch("input_shape=3,8,8\ndata data\nr relu inputs=data\n", "t").unwrap();
        let input = Tensor::zeros(vec![3, 9, 9]);
        let e = forward(&g, &WeightStore::new(), &input).unwrap_err();
        assert!(e.to_string().contains("data"), "{e}");
    }

    #[test]
    fn extract_unknown_layer_lists_names() {
        let g = parse_arch("input_shape=1,2,2\ndata data\nr relu inputs=data\n", "t").unwrap();
        let input = Tensor::zeros(vec![1, 2, 2]);
        let acts = forward(&g, &WeightStore::new(), &input).unwrap();
        let e = extract_feature(&g, &acts, "nope").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("nope") && msg.contains("data") && msg.contains("r"), "{msg}");
    }

    #[test]
    fn extract_data_layer_is_flat_input() {
        let g = parse_arch("input_shape=1,2,2\ndata data\nr relu inputs=data\n", "t").unwrap();
        let input = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let acts = forward(&g, &WeightStore::new(), &input).unwrap();
        let f = extract_feature(&g, &acts, "data").unwrap();
        assert_eq!(f.values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.provenance().to_string(), "cnn:data");
    }

    #[test]
    fn dropout_is_identity() {
        let g = parse_arch(
            "input_shape=1,1,3\ndata data\nd dropout inputs=data\n",
            "t",
        )
        .unwrap();
        let input = Tensor::new(vec![1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let acts = forward(&g, &WeightStore::new(), &input).unwrap();
        assert_eq!(acts.get("d").unwrap().data(), input.data());
    }
}
