//! Layer DAG: parsing of architecture files and shape inference.
//!
//! Architecture files are line-oriented text. Everything after `#` on a
//! line is a comment. The first effective line declares the input shape,
//! then one node per line:
//!
//! ```text
//! input_shape=3,227,227
//! data data
//! conv1 conv out=96 kernel=11 stride=4 pad=0 inputs=data
//! relu1 relu inputs=conv1
//! pool1 maxpool kernel=3 stride=2 inputs=relu1
//! fc6 fc out=4096 inputs=pool1
//! prob softmax inputs=fc6
//! ```
//!
//! Node kinds: `data`, `conv` (keys out, kernel, stride, pad, groups),
//! `relu`, `lrn` (n, alpha, beta, k), `maxpool`/`avgpool` (kernel, stride,
//! pad), `fc` (out), `softmax`, `concat` (axis), `dropout`. `kernel`
//! accepts `K` or `KHxKW`. Nodes may be declared in any order; the graph
//! is topologically sorted and rejected if cyclic.

use super::ops::{conv_out_dim, pool_out_dim};
use super::tensor::format_shape;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub alpha: f32,
    pub beta: f32,
    pub k: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Data,
    Conv(ConvParams),
    Relu,
    Lrn(LrnParams),
    MaxPool(PoolParams),
    AvgPool(PoolParams),
    Fc { out_features: usize },
    Softmax,
    Concat { axis: usize },
    Dropout,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Data => "data",
            LayerKind::Conv(_) => "conv",
            LayerKind::Relu => "relu",
            LayerKind::Lrn(_) => "lrn",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool(_) => "avgpool",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Softmax => "softmax",
            LayerKind::Concat { .. } => "concat",
            LayerKind::Dropout => "dropout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

/// Validated, topologically ordered layer DAG.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    nodes: Vec<LayerNode>,
    input_shape: Vec<usize>,
    index: BTreeMap<String, usize>,
}

impl NetworkGraph {
    /// Nodes in topological order; the data node always comes first.
    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    /// Shapes of the parameter tensors each conv/fc node requires,
    /// given the inferred activation shapes.
    pub fn param_shapes(&self) -> Result<BTreeMap<String, Vec<Vec<usize>>>> {
        let shapes = infer_shapes(self)?;
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            match &node.kind {
                LayerKind::Conv(p) => {
                    let in_shape = &shapes[&node.inputs[0]];
                    let in_c = in_shape[0];
                    out.insert(
                        node.name.clone(),
                        vec![
                            vec![p.out_channels, in_c / p.groups, p.kernel.0, p.kernel.1],
                            vec![p.out_channels],
                        ],
                    );
                }
                LayerKind::Fc { out_features } => {
                    let in_len: usize = shapes[&node.inputs[0]].iter().product();
                    out.insert(
                        node.name.clone(),
                        vec![vec![*out_features, in_len], vec![*out_features]],
                    );
                }
                _ => {}
            }
        }
        Ok(out)
    }
}

/// Infer the activation shape of every node without running the network.
pub fn infer_shapes(graph: &NetworkGraph) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for node in &graph.nodes {
        let shape = match &node.kind {
            LayerKind::Data => graph.input_shape.clone(),
            LayerKind::Conv(p) => {
                let s = &shapes[&node.inputs[0]];
                require_chw(s, &node.name)?;
                if !s[0].is_multiple_of(p.groups) {
                    return Err(Error::ShapeMismatch {
                        layer: node.name.clone(),
                        expected: format!("channels divisible by groups {}", p.groups),
                        got: s[0].to_string(),
                    });
                }
                let oh = dim_or_layer_err(conv_out_dim(s[1], p.kernel.0, p.stride, p.pad), node)?;
                let ow = dim_or_layer_err(conv_out_dim(s[2], p.kernel.1, p.stride, p.pad), node)?;
                vec![p.out_channels, oh, ow]
            }
            LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => {
                let s = &shapes[&node.inputs[0]];
                require_chw(s, &node.name)?;
                let oh = dim_or_layer_err(pool_out_dim(s[1], p.kernel, p.stride, p.pad), node)?;
                let ow = dim_or_layer_err(pool_out_dim(s[2], p.kernel, p.stride, p.pad), node)?;
                vec![s[0], oh, ow]
            }
            LayerKind::Lrn(p) => {
                let s = &shapes[&node.inputs[0]];
                require_chw(s, &node.name)?;
                if p.local_size % 2 == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {}: lrn local size must be odd",
                        node.name
                    )));
                }
                s.clone()
            }
            LayerKind::Relu | LayerKind::Dropout | LayerKind::Softmax => {
                shapes[&node.inputs[0]].clone()
            }
            LayerKind::Fc { out_features } => {
                let _ = &shapes[&node.inputs[0]];
                vec![*out_features]
            }
            LayerKind::Concat { axis } => {
                let first = shapes[&node.inputs[0]].clone();
                if *axis >= first.len() {
                    return Err(Error::InvalidSpec(format!(
                        "layer {}: concat axis {axis} out of range",
                        node.name
                    )));
                }
                let mut out = first.clone();
                for input in &node.inputs[1..] {
                    let s = &shapes[input];
                    if s.len() != first.len()
                        || s.iter()
                            .zip(first.iter())
                            .enumerate()
                            .any(|(i, (a, b))| i != *axis && a != b)
                    {
                        return Err(Error::ShapeMismatch {
                            layer: node.name.clone(),
                            expected: format_shape(&first),
                            got: format_shape(s),
                        });
                    }
                    out[*axis] += s[*axis];
                }
                out
            }
        };
        shapes.insert(node.name.clone(), shape);
    }
    Ok(shapes)
}

fn require_chw(shape: &[usize], layer: &str) -> Result<()> {
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            layer: layer.to_string(),
            expected: "c x h x w".to_string(),
            got: format_shape(shape),
        });
    }
    Ok(())
}

fn dim_or_layer_err(r: Result<usize>, node: &LayerNode) -> Result<usize> {
    r.map_err(|e| Error::InvalidSpec(format!("layer {}: {e}", node.name)))
}

pub fn load_arch(path: &Path) -> Result<NetworkGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arch(&text, &path.display().to_string())
}

/// Parse and validate architecture text. `file` names the source in errors.
pub fn parse_arch(text: &str, file: &str) -> Result<NetworkGraph> {
    let err = |line: usize, message: String| Error::Parse {
        file: file.to_string(),
        line,
        message,
    };

    let mut input_shape: Option<Vec<usize>> = None;
    let mut nodes: Vec<LayerNode> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if input_shape.is_none() {
            let rest = content
                .strip_prefix("input_shape=")
                .ok_or_else(|| err(line, "expected input_shape=c,h,w header".to_string()))?;
            let dims: Vec<usize> = rest
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(line, format!("bad input_shape: {e}")))?;
            if dims.len() != 3 || dims.contains(&0) {
                return Err(err(line, "input_shape needs three nonzero dims".to_string()));
            }
            input_shape = Some(dims);
            continue;
        }

        let mut tokens = content.split_whitespace();
        let name = tokens.next().unwrap().to_string();
        let kind_str = tokens
            .next()
            .ok_or_else(|| err(line, format!("node {name}: missing kind")))?;

        let mut keys: BTreeMap<&str, &str> = BTreeMap::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(line, format!("node {name}: expected key=value, got {tok}")))?;
            if keys.insert(k, v).is_some() {
                return Err(err(line, format!("node {name}: duplicate key {k}")));
            }
        }

        let inputs: Vec<String> = match keys.remove("inputs") {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            None => Vec::new(),
        };

        let parse_usize = |keys: &BTreeMap<&str, &str>, key: &str, default: Option<usize>| {
            match keys.get(key) {
                Some(v) => v
                    .parse::<usize>()
                    .map_err(|e| err(line, format!("node {name}: bad {key}: {e}"))),
                None => default
                    .ok_or_else(|| err(line, format!("node {name}: missing key {key}"))),
            }
        };
        let parse_f32 = |keys: &BTreeMap<&str, &str>, key: &str, default: Option<f32>| {
            match keys.get(key) {
                Some(v) => v
                    .parse::<f32>()
                    .map_err(|e| err(line, format!("node {name}: bad {key}: {e}"))),
                None => default
                    .ok_or_else(|| err(line, format!("node {name}: missing key {key}"))),
            }
        };
        let parse_kernel_pair = |keys: &BTreeMap<&str, &str>| -> Result<(usize, usize)> {
            let v = keys
                .get("kernel")
                .ok_or_else(|| err(line, format!("node {name}: missing key kernel")))?;
            if let Some((a, b)) = v.split_once('x') {
                let kh = a
                    .parse::<usize>()
                    .map_err(|e| err(line, format!("node {name}: bad kernel: {e}")))?;
                let kw = b
                    .parse::<usize>()
                    .map_err(|e| err(line, format!("node {name}: bad kernel: {e}")))?;
                Ok((kh, kw))
            } else {
                let k = v
                    .parse::<usize>()
                    .map_err(|e| err(line, format!("node {name}: bad kernel: {e}")))?;
                Ok((k, k))
            }
        };

        let mut used: Vec<&str> = vec![];
        let kind = match kind_str {
            "data" => LayerKind::Data,
            "conv" => {
                used.extend(["out", "kernel", "stride", "pad", "groups"]);
                LayerKind::Conv(ConvParams {
                    out_channels: parse_usize(&keys, "out", None)?,
                    kernel: parse_kernel_pair(&keys)?,
                    stride: parse_usize(&keys, "stride", Some(1))?,
                    pad: parse_usize(&keys, "pad", Some(0))?,
                    groups: parse_usize(&keys, "groups", Some(1))?,
                })
            }
            "relu" => LayerKind::Relu,
            "lrn" => {
                used.extend(["n", "alpha", "beta", "k"]);
                LayerKind::Lrn(LrnParams {
                    local_size: parse_usize(&keys, "n", None)?,
                    alpha: parse_f32(&keys, "alpha", None)?,
                    beta: parse_f32(&keys, "beta", None)?,
                    k: parse_f32(&keys, "k", Some(1.0))?,
                })
            }
            "maxpool" | "avgpool" => {
                used.extend(["kernel", "stride", "pad"]);
                let p = PoolParams {
                    kernel: parse_usize(&keys, "kernel", None)?,
                    stride: parse_usize(&keys, "stride", Some(1))?,
                    pad: parse_usize(&keys, "pad", Some(0))?,
                };
                if kind_str == "maxpool" {
                    LayerKind::MaxPool(p)
                } else {
                    LayerKind::AvgPool(p)
                }
            }
            "fc" => {
                used.push("out");
                LayerKind::Fc {
                    out_features: parse_usize(&keys, "out", None)?,
                }
            }
            "softmax" => LayerKind::Softmax,
            "concat" => {
                used.push("axis");
                LayerKind::Concat {
                    axis: parse_usize(&keys, "axis", Some(0))?,
                }
            }
            "dropout" => LayerKind::Dropout,
            other => return Err(err(line, format!("node {name}: unknown kind {other}"))),
        };

        if let Some(stray) = keys.keys().find(|k| !used.contains(*k)) {
            return Err(err(line, format!("node {name}: unknown key {stray}")));
        }

        match (&kind, inputs.len()) {
            (LayerKind::Data, 0) => {}
            (LayerKind::Data, _) => {
                return Err(err(line, format!("node {name}: data node takes no inputs")))
            }
            (LayerKind::Concat { .. }, 0) => {
                return Err(err(line, format!("node {name}: concat needs inputs")))
            }
            (LayerKind::Concat { .. }, _) => {}
            (_, 1) => {}
            (_, n) => {
                return Err(err(
                    line,
                    format!("node {name}: expected exactly one input, got {n}"),
                ))
            }
        }

        nodes.push(LayerNode { name, kind, inputs });
    }

    let input_shape = input_shape
        .ok_or_else(|| err(0, "missing input_shape header".to_string()))?;
    build_graph(nodes, input_shape, file)
}

/// Validate node set, topologically sort, and run shape inference once.
fn build_graph(nodes: Vec<LayerNode>, input_shape: Vec<usize>, file: &str) -> Result<NetworkGraph> {
    let gerr = |message: String| Error::Parse {
        file: file.to_string(),
        line: 0,
        message,
    };

    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.name.clone(), i).is_some() {
            return Err(gerr(format!("duplicate node name {}", n.name)));
        }
    }

    let data_count = nodes
        .iter()
        .filter(|n| matches!(n.kind, LayerKind::Data))
        .count();
    if data_count != 1 {
        return Err(gerr(format!(
            "expected exactly one data node, found {data_count}"
        )));
    }

    for n in &nodes {
        for input in &n.inputs {
            if !index.contains_key(input) {
                return Err(gerr(format!(
                    "node {} references missing node {input}",
                    n.name
                )));
            }
        }
    }

    // Kahn topological sort, preserving declaration order among ready nodes.
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        indegree[i] = node.inputs.len();
        for input in &node.inputs {
            consumers[index[input]].push(i);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    while let Some(&i) = ready.first() {
        ready.remove(0);
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                // Insert keeping declaration order.
                let pos = ready.partition_point(|&r| r < c);
                ready.insert(pos, c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<&str> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| nodes[i].name.as_str())
            .collect();
        return Err(gerr(format!("cycle involving nodes: {}", stuck.join(", "))));
    }

    let sorted: Vec<LayerNode> = order.iter().map(|&i| nodes[i].clone()).collect();
    let index = sorted
        .iter()
        .enumerate()
        .map(|(i, node)| (node.name.clone(), i))
        .collect();
    let graph = NetworkGraph {
        nodes: sorted,
        input_shape,
        index,
    };
    infer_shapes(&graph)?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
# a comment
input_shape=3,8,8
data data
conv1 conv out=4 kernel=3 stride=1 pad=1 inputs=data
relu1 relu inputs=conv1
pool1 maxpool kernel=2 stride=2 inputs=relu1
fc1 fc out=10 inputs=pool1
prob softmax inputs=fc1
";

    #[test]
    fn parses_and_infers_shapes() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let shapes = infer_shapes(&g).unwrap();
        assert_eq!(shapes["data"], vec![3, 8, 8]);
        assert_eq!(shapes["conv1"], vec![4, 8, 8]);
        assert_eq!(shapes["pool1"], vec![4, 4, 4]);
        assert_eq!(shapes["fc1"], vec![10]);
        assert_eq!(shapes["prob"], vec![10]);
    }

    #[test]
    fn missing_input_named() {
        let text = "input_shape=3,8,8\ndata data\nrelu1 relu inputs=convX\n";
        let e = parse_arch(text, "t").unwrap_err();
        assert!(e.to_string().contains("convX"), "{e}");
    }

    #[test]
    fn unknown_kind_rejected() {
        let text = "input_shape=3,8,8\ndata data\nx blorp inputs=data\n";
        let e = parse_arch(text, "t").unwrap_err();
        assert!(e.to_string().contains("unknown kind"), "{e}");
    }

    #[test]
    fn cycle_detected() {
        let text = "input_shape=3,8,8\ndata data\na relu inputs=b\nb relu inputs=a\n";
        let e = parse_arch(text, "t").unwrap_err();
        assert!(e.to_string().contains("cycle"), "{e}");
    }

    #[test]
    fn forward_references_are_sorted() {
        let text = "\
input_shape=3,8,8
out concat axis=0 inputs=a,b
a relu inputs=data
b relu inputs=data
data data
";
        let g = parse_arch(text, "t").unwrap();
        let names = g.layer_names();
        assert_eq!(names[0], "data");
        assert_eq!(names[3], "out");
    }

    #[test]
    fn duplicate_name_rejected() {
        let text = "input_shape=3,8,8\ndata data\na relu inputs=data\na relu inputs=data\n";
        assert!(parse_arch(text, "t").is_err());
    }

    #[test]
    fn concat_mismatch_rejected() {
        let text = "\
input_shape=3,8,8
data data
a maxpool kernel=2 stride=2 inputs=data
cat concat axis=0 inputs=a,data
";
        let e = parse_arch(text, "t").unwrap_err();
        assert!(e.to_string().contains("cat"), "{e}");
    }

    #[test]
    fn param_shapes_for_conv_and_fc() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let p = g.param_shapes().unwrap();
        assert_eq!(p["conv1"], vec![vec![4, 3, 3, 3], vec![4]]);
        assert_eq!(p["fc1"], vec![vec![10, 4 * 4 * 4], vec![10]]);
        assert!(!p.contains_key("relu1"));
    }

    #[test]
    fn line_numbers_in_errors() {
        let text = "input_shape=3,8,8\ndata data\nbad conv inputs=data\n";
        match parse_arch(text, "t").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }
}
