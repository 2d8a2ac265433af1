//! The shipped architecture files must load, validate and produce the
//! documented layer inventories and dimensions.

use std::path::PathBuf;
use texbench_core::net::{
    forward, infer_shapes, load_arch, seeded_weights, LayerKind, NetworkGraph,
};
use texbench_core::Tensor;

fn arch_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../arch")
        .join(name)
}

fn load(name: &str) -> NetworkGraph {
    load_arch(&arch_path(name)).unwrap_or_else(|e| panic!("loading {name}: {e}"))
}

fn flat_dim(graph: &NetworkGraph, layer: &str) -> usize {
    infer_shapes(graph).unwrap()[layer].iter().product()
}

#[test]
fn alexnet_layer_inventory() {
    let g = load("alexnet.arch");
    let convs: Vec<&str> = g
        .nodes()
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Conv(_)))
        .map(|n| n.name.as_str())
        .collect();
    assert_eq!(convs, ["conv1", "conv2", "conv3", "conv4", "conv5"]);
    for name in ["norm1", "norm2", "pool1", "pool2", "pool5", "fc6", "fc7", "fc8", "prob"] {
        assert!(g.contains(name), "missing {name}");
    }
    let shapes = infer_shapes(&g).unwrap();
    assert_eq!(shapes["conv1"], vec![96, 55, 55]);
    assert_eq!(shapes["pool1"], vec![96, 27, 27]);
    assert_eq!(shapes["conv2"], vec![256, 27, 27]);
    assert_eq!(shapes["pool2"], vec![256, 13, 13]);
    assert_eq!(shapes["conv3"], vec![384, 13, 13]);
    assert_eq!(shapes["pool5"], vec![256, 6, 6]);
    assert_eq!(flat_dim(&g, "fc6"), 4096);
    assert_eq!(flat_dim(&g, "fc7"), 4096);
    assert_eq!(flat_dim(&g, "prob"), 1000);
}

#[test]
fn caffenet_switches_norm_and_pool() {
    let g = load("caffenet.arch");
    let names: Vec<&str> = g.nodes().iter().map(|n| n.name.as_str()).collect();
    let pos = |n: &str| names.iter().position(|&x| x == n).unwrap();
    // pooling comes before normalization
    assert!(pos("pool1") < pos("norm1"));
    assert!(pos("pool2") < pos("norm2"));
    // same dimensions as alexnet
    assert_eq!(flat_dim(&g, "fc6"), 4096);
    assert_eq!(flat_dim(&g, "prob"), 1000);
    let shapes = infer_shapes(&g).unwrap();
    assert_eq!(shapes["conv5"], vec![256, 13, 13]);
}

#[test]
fn googlenet_inception_structure() {
    let g = load("googlenet.arch");
    let shapes = infer_shapes(&g).unwrap();
    // all concat nodes resolve
    for node in g.nodes() {
        if matches!(node.kind, LayerKind::Concat { .. }) {
            assert!(shapes.contains_key(&node.name));
        }
    }
    assert_eq!(shapes["pool1/3x3_s2"], vec![64, 56, 56]);
    assert_eq!(shapes["inception_3a/output"], vec![256, 28, 28]);
    assert_eq!(shapes["inception_3b/output"], vec![480, 28, 28]);
    assert_eq!(shapes["pool3/3x3_s2"], vec![480, 14, 14]);
    assert_eq!(shapes["inception_4a/output"], vec![512, 14, 14]);
    assert_eq!(shapes["inception_4d/output"], vec![528, 14, 14]);
    assert_eq!(shapes["inception_4e/output"], vec![832, 14, 14]);
    assert_eq!(shapes["pool4/3x3_s2"], vec![832, 7, 7]);
    assert_eq!(shapes["inception_5b/output"], vec![1024, 7, 7]);
    // the taps the experiments use
    assert_eq!(shapes["loss1/ave_pool"], vec![512, 4, 4]);
    assert_eq!(shapes["loss2/ave_pool"], vec![528, 4, 4]);
    assert_eq!(flat_dim(&g, "loss1/fc"), 1024);
    assert_eq!(flat_dim(&g, "loss2/fc"), 1024);
    assert_eq!(shapes["pool5/7x7_s1"], vec![1024, 1, 1]);
    assert_eq!(flat_dim(&g, "prob"), 1000);
}

#[test]
fn smallnet_shapes_and_forward() {
    let g = load("smallnet.arch");
    let shapes = infer_shapes(&g).unwrap();
    assert_eq!(shapes["conv1"], vec![8, 32, 32]);
    assert_eq!(shapes["conv2"], vec![16, 16, 16]);
    assert_eq!(shapes["fc1"], vec![64]);

    // execution shapes match inference exactly
    let weights = seeded_weights(&g, 7);
    let n: usize = 3 * 64 * 64;
    let input = Tensor::new(
        vec![3, 64, 64],
        (0..n).map(|i| ((i * 37) % 255) as f32 - 127.0).collect(),
    )
    .unwrap();
    let acts = forward(&g, &weights, &input).unwrap();
    for (name, tensor) in acts.layers() {
        assert_eq!(tensor.shape(), shapes[name].as_slice(), "layer {name}");
    }
    assert_eq!(acts.evaluations(), g.nodes().len());
}

#[test]
fn alexnet_forward_with_random_weights() {
    let g = load("alexnet.arch");
    let weights = seeded_weights(&g, 1);
    let n: usize = 3 * 227 * 227;
    let input = Tensor::new(
        vec![3, 227, 227],
        (0..n).map(|i| ((i * 7) % 256) as f32 - 128.0).collect(),
    )
    .unwrap();
    let acts = forward(&g, &weights, &input).unwrap();
    assert_eq!(acts.get("fc6").unwrap().len(), 4096);
    assert_eq!(acts.get("prob").unwrap().len(), 1000);
    let sum: f32 = acts.get("prob").unwrap().data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-5);
    // execution shapes match inference for every node
    let inferred = infer_shapes(&g).unwrap();
    for (name, tensor) in acts.layers() {
        assert_eq!(tensor.shape(), inferred[name].as_slice(), "layer {name}");
    }
}

#[test]
fn googlenet_forward_runs_and_matches_inference() {
    let g = load("googlenet.arch");
    let weights = seeded_weights(&g, 3);
    let n: usize = 3 * 224 * 224;
    let input = Tensor::new(
        vec![3, 224, 224],
        (0..n).map(|i| ((i * 13) % 101) as f32 * 0.02 - 1.0).collect(),
    )
    .unwrap();
    let inferred = infer_shapes(&g).unwrap();
    let acts = forward(&g, &weights, &input).unwrap();
    for (name, tensor) in acts.layers() {
        assert_eq!(tensor.shape(), inferred[name].as_slice(), "layer {name}");
        assert!(tensor.is_finite(), "layer {name} produced non-finite values");
    }
    // softmax outputs sum to one
    let prob = acts.get("prob").unwrap();
    let sum: f32 = prob.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-5);
}
