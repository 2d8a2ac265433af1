//! Binary container formats for intermediate artifacts.
//!
//! All integers and floats are little-endian. Layouts:
//!
//! - `DSC1` descriptor sets: magic, count u32, dim u32; per row
//!   x f32, y f32, scale f32, then dim f32 values.
//! - `CBK1` codebooks: magic, k u32, d u32, then k*d centroid f32s
//!   row-major.
//! - `GMM1` mixtures: magic, k u32, d u32, then k weights, k*d means,
//!   k*d variances, all f32.
//! - `FMT1` feature matrices: magic, n u32, dim u32, n label u32s, then
//!   n*dim f32s row-major.
//! - `SVM1` models: magic, class count u32, dim u32; per class dim
//!   weight f32s then the bias f32.

use crate::codebook::{Codebook, GmmModel};
use crate::sift::Descriptor;
use crate::svm::LinearSvmModel;
use crate::{Error, Result};
use std::io::Read;
use std::path::Path;

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    file: String,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], file: &str) -> Self {
        Cursor {
            data,
            pos: 0,
            file: file.to_string(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.clone(),
            line: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!("short read: wanted {n} bytes")));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                got,
                std::str::from_utf8(expected).unwrap()
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn descriptors_to_bytes(descriptors: &[Descriptor]) -> Vec<u8> {
    let dim = descriptors.first().map(|d| d.vector.len()).unwrap_or(128);
    let mut buf = Vec::with_capacity(12 + descriptors.len() * (12 + dim * 4));
    buf.extend_from_slice(b"DSC1");
    put_u32(&mut buf, descriptors.len() as u32);
    put_u32(&mut buf, dim as u32);
    for d in descriptors {
        put_f32(&mut buf, d.x);
        put_f32(&mut buf, d.y);
        put_f32(&mut buf, d.scale);
        for &v in &d.vector {
            put_f32(&mut buf, v);
        }
    }
    buf
}

pub fn descriptors_from_bytes(data: &[u8], file: &str) -> Result<Vec<Descriptor>> {
    let mut c = Cursor::new(data, file);
    c.magic(b"DSC1")?;
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x = c.f32()?;
        let y = c.f32()?;
        let scale = c.f32()?;
        let vector = c.f32_vec(dim)?;
        out.push(Descriptor { vector, x, y, scale });
    }
    c.done()?;
    Ok(out)
}

pub fn save_descriptors(descriptors: &[Descriptor], path: &Path) -> Result<()> {
    std::fs::write(path, descriptors_to_bytes(descriptors)).map_err(|e| Error::io(path, e))
}

pub fn load_descriptors(path: &Path) -> Result<Vec<Descriptor>> {
    descriptors_from_bytes(&read_file(path)?, &path.display().to_string())
}

pub fn codebook_to_bytes(book: &Codebook) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"CBK1");
    put_u32(&mut buf, book.k() as u32);
    put_u32(&mut buf, book.dim() as u32);
    for j in 0..book.k() {
        for &v in book.centroid(j) {
            put_f32(&mut buf, v);
        }
    }
    buf
}

pub fn codebook_from_bytes(data: &[u8], file: &str) -> Result<Codebook> {
    let mut c = Cursor::new(data, file);
    c.magic(b"CBK1")?;
    let k = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut rows = Vec::with_capacity(k);
    for _ in 0..k {
        rows.push(c.f32_vec(dim)?);
    }
    c.done()?;
    Codebook::from_centroids(rows)
}

pub fn save_codebook(book: &Codebook, path: &Path) -> Result<()> {
    std::fs::write(path, codebook_to_bytes(book)).map_err(|e| Error::io(path, e))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    codebook_from_bytes(&read_file(path)?, &path.display().to_string())
}

pub fn gmm_to_bytes(gmm: &GmmModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"GMM1");
    put_u32(&mut buf, gmm.k() as u32);
    put_u32(&mut buf, gmm.dim() as u32);
    for &w in gmm.weights() {
        put_f32(&mut buf, w);
    }
    for j in 0..gmm.k() {
        for &v in gmm.mean(j) {
            put_f32(&mut buf, v);
        }
    }
    for j in 0..gmm.k() {
        for &v in gmm.variance(j) {
            put_f32(&mut buf, v);
        }
    }
    buf
}

pub fn gmm_from_bytes(data: &[u8], file: &str) -> Result<GmmModel> {
    let mut c = Cursor::new(data, file);
    c.magic(b"GMM1")?;
    let k = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let weights = c.f32_vec(k)?;
    let mut means = Vec::with_capacity(k);
    for _ in 0..k {
        means.push(c.f32_vec(dim)?);
    }
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        variances.push(c.f32_vec(dim)?);
    }
    c.done()?;
    GmmModel::from_parts(weights, means, variances)
}

pub fn save_gmm(gmm: &GmmModel, path: &Path) -> Result<()> {
    std::fs::write(path, gmm_to_bytes(gmm)).map_err(|e| Error::io(path, e))
}

pub fn load_gmm(path: &Path) -> Result<GmmModel> {
    gmm_from_bytes(&read_file(path)?, &path.display().to_string())
}

/// A labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub labels: Vec<u32>,
    /// n rows by dim columns, row-major.
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, labels: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        if values.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                got: values.len(),
            });
        }
        Ok(FeatureMatrix { dim, labels, values })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn feature_matrix_to_bytes(m: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"FMT1");
    put_u32(&mut buf, m.labels.len() as u32);
    put_u32(&mut buf, m.dim as u32);
    for &l in &m.labels {
        put_u32(&mut buf, l);
    }
    for &v in &m.values {
        put_f32(&mut buf, v);
    }
    buf
}

pub fn feature_matrix_from_bytes(data: &[u8], file: &str) -> Result<FeatureMatrix> {
    let mut c = Cursor::new(data, file);
    c.magic(b"FMT1")?;
    let n = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(c.u32()?);
    }
    let values = c.f32_vec(n * dim)?;
    c.done()?;
    FeatureMatrix::new(dim, labels, values)
}

pub fn save_feature_matrix(m: &FeatureMatrix, path: &Path) -> Result<()> {
    std::fs::write(path, feature_matrix_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load_feature_matrix(path: &Path) -> Result<FeatureMatrix> {
    feature_matrix_from_bytes(&read_file(path)?, &path.display().to_string())
}

pub fn svm_to_bytes(model: &LinearSvmModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"SVM1");
    put_u32(&mut buf, model.num_classes() as u32);
    put_u32(&mut buf, model.dim() as u32);
    for c in 0..model.num_classes() {
        for &v in model.class_weights(c) {
            put_f32(&mut buf, v);
        }
        put_f32(&mut buf, model.class_bias(c));
    }
    buf
}

pub fn svm_from_bytes(data: &[u8], file: &str) -> Result<LinearSvmModel> {
    let mut c = Cursor::new(data, file);
    c.magic(b"SVM1")?;
    let classes = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut weights = Vec::with_capacity(classes);
    let mut biases = Vec::with_capacity(classes);
    for _ in 0..classes {
        weights.push(c.f32_vec(dim)?);
        biases.push(c.f32()?);
    }
    c.done()?;
    LinearSvmModel::from_parts(weights, biases)
}

pub fn save_svm(model: &LinearSvmModel, path: &Path) -> Result<()> {
    std::fs::write(path, svm_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_svm(path: &Path) -> Result<LinearSvmModel> {
    svm_from_bytes(&read_file(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn descriptor_roundtrip() {
        let mut rng = SplitMix64::new(1);
        let descs: Vec<Descriptor> = (0..5)
            .map(|i| Descriptor {
                vector: (0..128).map(|_| rng.next_f32()).collect(),
                x: i as f32 * 2.0,
                y: i as f32,
                scale: 16.0,
            })
            .collect();
        let bytes = descriptors_to_bytes(&descs);
        assert_eq!(&bytes[..4], b"DSC1");
        let back = descriptors_from_bytes(&bytes, "t").unwrap();
        assert_eq!(descs, back);
    }

    #[test]
    fn truncated_input_errors() {
        let mut rng = SplitMix64::new(2);
        let descs: Vec<Descriptor> = (0..2)
            .map(|_| Descriptor {
                vector: (0..128).map(|_| rng.next_f32()).collect(),
                x: 0.0,
                y: 0.0,
                scale: 24.0,
            })
            .collect();
        let bytes = descriptors_to_bytes(&descs);
        assert!(descriptors_from_bytes(&bytes[..bytes.len() - 3], "t").is_err());
        assert!(descriptors_from_bytes(b"NOPE", "t").is_err());
    }

    #[test]
    fn codebook_and_gmm_roundtrip() {
        let book = Codebook::from_centroids(vec![vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
        let back = codebook_from_bytes(&codebook_to_bytes(&book), "t").unwrap();
        assert_eq!(book, back);

        let gmm = GmmModel::from_parts(
            vec![0.25, 0.75],
            vec![vec![0.0, 1.0], vec![2.0, 3.0]],
            vec![vec![0.5, 0.5], vec![1.5, 2.5]],
        )
        .unwrap();
        let back = gmm_from_bytes(&gmm_to_bytes(&gmm), "t").unwrap();
        assert_eq!(gmm, back);
    }

    #[test]
    fn svm_roundtrip() {
        let model = LinearSvmModel::from_parts(
            vec![vec![0.5, -1.0, 2.0], vec![0.0, 3.0, -0.25]],
            vec![0.125, -2.5],
        )
        .unwrap();
        let back = svm_from_bytes(&svm_to_bytes(&model), "t").unwrap();
        assert_eq!(model, back);
    }

    proptest! {
        #[test]
        fn feature_matrix_roundtrip(n in 0usize..6, dim in 1usize..9, seed in 0u64..1000) {
            let mut rng = SplitMix64::new(seed);
            let labels: Vec<u32> = (0..n).map(|_| rng.next_below(5) as u32).collect();
            let values: Vec<f32> = (0..n * dim).map(|_| rng.next_f32() * 4.0 - 2.0).collect();
            let m = FeatureMatrix::new(dim, labels, values).unwrap();
            let back = feature_matrix_from_bytes(&feature_matrix_to_bytes(&m), "t").unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
