//! Directory-layout dataset loading and PNG output.
//!
//! Layout: `<root>/<class_name>/<image files>` with one subdirectory per
//! class. PNG (8-bit RGB or RGBA, alpha dropped) and binary PPM (P6,
//! maxval 255) are accepted; other extensions are ignored.

use super::{Dataset, ImagePatch};
use crate::{Error, Result};
use image::ImageReader;
use std::path::Path;

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "ppm"
    )
}

fn decode_patch(path: &Path, label: usize, id: String) -> Result<ImagePatch> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (width, height) = rgb.dimensions();
    ImagePatch::new(rgb.into_raw(), width, height, label, id)
}

/// Load `<root>/<class>/<file>` with deterministic ordering: classes are
/// sorted subdirectory names, files sorted within each class.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            class_dirs.push((name, path));
        }
    }
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }

    let mut patches = Vec::new();
    let mut class_names = Vec::new();
    for (label, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(dir, e))?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyInput(format!(
                "class directory {} contains no images",
                dir.display()
            )));
        }
        for file in files {
            let stem = file
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            let id = format!("{name}/{stem}");
            patches.push(decode_patch(&file, label, id)?);
        }
        class_names.push(name.clone());
    }
    Dataset::new(patches, class_names)
}

/// Write a patch as an 8-bit RGB PNG.
pub fn save_patch_png(patch: &ImagePatch, path: &Path) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(patch.width, patch.height, patch.pixels.clone())
            .expect("patch invariant guarantees buffer size");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let mut img = image::RgbImage::new(w, h);
        for p in img.pixels_mut() {
            *p = image::Rgb(rgb);
        }
        img.save(path).unwrap();
    }

    fn write_ppm(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let mut data = format!("P6\n{w} {h}\n255\n").into_bytes();
        for _ in 0..w * h {
            data.extend_from_slice(&rgb);
        }
        std::fs::write(path, data).unwrap();
    }

    #[test]
    fn loads_classes_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("b")).unwrap();
        std::fs::create_dir(root.join("a")).unwrap();
        write_png(&root.join("a/one.png"), 4, 4, [1, 2, 3]);
        write_png(&root.join("a/two.png"), 4, 4, [4, 5, 6]);
        write_ppm(&root.join("b/only.ppm"), 3, 2, [7, 8, 9]);

        let ds = load_dataset(root).unwrap();
        assert_eq!(ds.class_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.patches()[0].id, "a/one.png");
        assert_eq!(ds.patches()[0].label, 0);
        assert_eq!(ds.patches()[2].label, 1);
        assert_eq!(ds.patches()[2].rgb(0, 0), [7, 8, 9]);
    }

    #[test]
    fn three_class_fixture_counts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for class in ["A", "B", "C"] {
            std::fs::create_dir(root.join(class)).unwrap();
            for i in 0..10 {
                write_png(&root.join(format!("{class}/{i:02}.png")), 4, 4, [0, 0, 0]);
            }
        }
        let ds = load_dataset(root).unwrap();
        assert_eq!(ds.len(), 30);
        for label in 0..3 {
            assert_eq!(ds.labels().iter().filter(|&&l| l == label).count(), 10);
        }
    }

    #[test]
    fn truncated_png_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("a")).unwrap();
        write_png(&root.join("a/good.png"), 4, 4, [0, 0, 0]);
        let bad = root.join("a/broken.png");
        let full = std::fs::read(root.join("a/good.png")).unwrap();
        std::fs::write(&bad, &full[..full.len() / 2]).unwrap();
        let err = load_dataset(root).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
    }

    #[test]
    fn empty_class_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("a")).unwrap();
        write_png(&root.join("a/x.png"), 2, 2, [0, 0, 0]);
        std::fs::create_dir(root.join("empty")).unwrap();
        assert!(load_dataset(root).is_err());
    }

    #[test]
    fn zero_classes_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn rgba_png_alpha_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir(root.join("a")).unwrap();
        let mut img = image::RgbaImage::new(2, 2);
        for p in img.pixels_mut() {
            *p = image::Rgba([10, 20, 30, 128]);
        }
        img.save(root.join("a/x.png")).unwrap();
        let ds = load_dataset(root).unwrap();
        assert_eq!(ds.patches()[0].rgb(0, 0), [10, 20, 30]);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::SplitMix64::new(17);
        let pixels: Vec<u8> = (0..5 * 7 * 3).map(|_| rng.range_u32(0, 255) as u8).collect();
        let patch = ImagePatch::new(pixels, 5, 7, 0, "p").unwrap();
        let path = dir.path().join("p.png");
        save_patch_png(&patch, &path).unwrap();
        let back = decode_patch(&path, 0, "p".to_string()).unwrap();
        assert_eq!(back.pixels, patch.pixels);
    }
}
