//! Parameter storage and the CNNW weights file format.
//!
//! File layout (all integers little-endian): magic `CNNW`, version u32,
//! layer count u32; then per layer: name length u16 + UTF-8 bytes, tensor
//! count u8; per tensor: ndim u8, each dim u32, then raw IEEE-754 f32
//! values row-major.

use super::graph::NetworkGraph;
use super::tensor::{format_shape, Tensor};
use crate::rng::{derive_seed, hash_name, SplitMix64};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CNNW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Parameter tensors per layer name (conv: kernel + bias; fc: matrix + bias).
#[derive(Debug, Clone, Default)]
pub struct WeightStore {
    params: BTreeMap<String, Vec<Tensor>>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensors: Vec<Tensor>) {
        self.params.insert(name.into(), tensors);
    }

    pub fn get(&self, name: &str) -> Option<&[Tensor]> {
        self.params.get(name).map(|v| v.as_slice())
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &[Tensor])> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Check that every conv/fc node of `graph` has parameters of exactly
    /// the required shapes and that no stray entries exist.
    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        let required = graph.param_shapes()?;
        for (name, shapes) in &required {
            let tensors = self.params.get(name).ok_or_else(|| Error::ShapeMismatch {
                layer: name.clone(),
                expected: format!("{} parameter tensors", shapes.len()),
                got: "none".to_string(),
            })?;
            if tensors.len() != shapes.len() {
                return Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    expected: format!("{} parameter tensors", shapes.len()),
                    got: tensors.len().to_string(),
                });
            }
            for (t, want) in tensors.iter().zip(shapes.iter()) {
                if t.shape() != want.as_slice() {
                    return Err(Error::ShapeMismatch {
                        layer: name.clone(),
                        expected: format_shape(want),
                        got: format_shape(t.shape()),
                    });
                }
            }
        }
        for name in self.params.keys() {
            if !required.contains_key(name) {
                return Err(Error::ShapeMismatch {
                    layer: name.clone(),
                    expected: "no parameters (layer absent or parameter-free)".to_string(),
                    got: "parameter entry".to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Seeded uniform initialization in [-s, s] with s = sqrt(6/(fan_in+fan_out)),
/// biases zero. Each layer gets its own stream derived from the seed and the
/// layer name, so adding a layer does not shift the others.
pub fn seeded_weights(graph: &NetworkGraph, seed: u64) -> WeightStore {
    let required = graph.param_shapes().expect("graph was validated on load");
    let mut store = WeightStore::new();
    for (name, shapes) in &required {
        let mut rng = SplitMix64::new(derive_seed(seed, hash_name(name)));
        let main = &shapes[0];
        let (fan_in, fan_out) = if main.len() == 4 {
            let (out_c, in_c, kh, kw) = (main[0], main[1], main[2], main[3]);
            (in_c * kh * kw, out_c * kh * kw)
        } else {
            (main[1], main[0])
        };
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = main.iter().product();
        let values: Vec<f32> = (0..n).map(|_| (rng.range_f64(-s, s)) as f32).collect();
        let kernel = Tensor::new(main.clone(), values).expect("shape consistent");
        let bias = Tensor::zeros(shapes[1].clone());
        store.insert(name.clone(), vec![kernel, bias]);
    }
    store
}

pub fn save_weights(path: &Path, store: &WeightStore) -> Result<()> {
    std::fs::write(path, weights_to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path, graph: &NetworkGraph) -> Result<WeightStore> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let store = read_weights(&mut reader, &path.display().to_string())?;
    store.validate(graph)?;
    Ok(store)
}

fn read_weights<R: Read>(reader: &mut R, file: &str) -> Result<WeightStore> {
    let perr = |message: String| Error::Parse {
        file: file.to_string(),
        line: 0,
        message,
    };
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|e| perr(format!("short read on magic: {e}")))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(perr("bad magic, expected CNNW".to_string()));
    }
    let version = read_u32(reader).map_err(&perr)?;
    if version != WEIGHTS_VERSION {
        return Err(perr(format!("unsupported version {version}")));
    }
    let count = read_u32(reader).map_err(&perr)?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let name_len = read_u16(reader).map_err(&perr)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        reader
            .read_exact(&mut name_bytes)
            .map_err(|e| perr(format!("short read on name: {e}")))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| perr(format!("invalid layer name: {e}")))?;
        let mut tcount = [0u8; 1];
        reader
            .read_exact(&mut tcount)
            .map_err(|e| perr(format!("short read on tensor count: {e}")))?;
        let mut tensors = Vec::with_capacity(tcount[0] as usize);
        for _ in 0..tcount[0] {
            let mut ndim = [0u8; 1];
            reader
                .read_exact(&mut ndim)
                .map_err(|e| perr(format!("short read on ndim: {e}")))?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u32(reader).map_err(&perr)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            reader
                .read_exact(&mut raw)
                .map_err(|e| perr(format!("short read on values for {name}: {e}")))?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(Tensor::new(shape, values).expect("length matches product"));
        }
        store.insert(name, tensors);
    }
    Ok(store)
}

fn read_u32<R: Read>(reader: &mut R) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    reader
        .read_exact(&mut b)
        .map_err(|e| format!("short read on u32: {e}"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16<R: Read>(reader: &mut R) -> std::result::Result<u16, String> {
    let mut b = [0u8; 2];
    reader
        .read_exact(&mut b)
        .map_err(|e| format!("short read on u16: {e}"))?;
    Ok(u16::from_le_bytes(b))
}

fn weights_to_bytes(store: &WeightStore) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensors) in store.layers() {
        let bytes = name.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.push(tensors.len() as u8);
        for t in tensors {
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::graph::parse_arch;

    const TINY: &str = "\
input_shape=3,8,8
data data
conv1 conv out=4 kernel=3 stride=1 pad=1 inputs=data
fc1 fc out=10 inputs=conv1
";

    #[test]
    fn seeded_weights_validate_and_repeat() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let a = seeded_weights(&g, 7);
        let b = seeded_weights(&g, 7);
        a.validate(&g).unwrap();
        assert_eq!(a.get("conv1").unwrap()[0].data(), b.get("conv1").unwrap()[0].data());
        let c = seeded_weights(&g, 8);
        assert_ne!(a.get("conv1").unwrap()[0].data(), c.get("conv1").unwrap()[0].data());
    }

    #[test]
    fn glorot_bound_respected() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let w = seeded_weights(&g, 1);
        let conv = &w.get("conv1").unwrap()[0];
        let s = (6.0f64 / (3. * 9. + 4. * 9.)).sqrt() as f32;
        assert!(conv.data().iter().all(|v| v.abs() <= s));
        // bias zero
        assert!(w.get("conv1").unwrap()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn roundtrip_through_file() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let w = seeded_weights(&g, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cnnw");
        save_weights(&path, &w).unwrap();
        let loaded = load_weights(&path, &g).unwrap();
        assert_eq!(
            loaded.get("fc1").unwrap()[0].data(),
            w.get("fc1").unwrap()[0].data()
        );
    }

    #[test]
    fn wrong_shape_names_layer() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let mut w = seeded_weights(&g, 42);
        w.insert(
            "conv1",
            vec![Tensor::zeros(vec![4, 3, 5, 5]), Tensor::zeros(vec![4])],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cnnw");
        save_weights(&path, &w).unwrap();
        let e = load_weights(&path, &g).unwrap_err();
        assert!(e.to_string().contains("conv1"), "{e}");
    }

    #[test]
    fn bad_magic_rejected() {
        let g = parse_arch(TINY, "tiny").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cnnw");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_weights(&path, &g).is_err());
    }
}
