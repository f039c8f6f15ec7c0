//! Dataset directories: `labels.csv` (`filename,label`), one image file per
//! row (8-bit PNG or `.bbct` raw tensor) and an optional `meta.json` with
//! `{"num_classes": K}`.

use super::CliError;
use crate::oracle::Label;
use crate::transforms::{Image, Shape};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const LABELS_FILE: &str = "labels.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Vec<Label>,
    pub num_classes: usize,
    /// Whether `num_classes` came from `meta.json` rather than the labels.
    pub declared_classes: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }
}

fn ingest(msg: String) -> CliError {
    CliError::Ingestion(msg)
}

fn read_image(path: &Path) -> Result<Image, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "bbct" => {
            let bytes = fs::read(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
            Image::from_tensor_bytes(&bytes).map_err(|e| ingest(format!("{}: {e}", path.display())))
        }
        "png" => {
            let decoded = image::open(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
            let rgb = decoded.to_rgb8();
            let shape = Shape::new(rgb.height() as usize, rgb.width() as usize, 3);
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Image::new(shape, data).map_err(|e| ingest(format!("{}: {e}", path.display())))
        }
        _ => Err(ingest(format!(
            "{}: unsupported image type (expected .png or .bbct)",
            path.display()
        ))),
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let labels_path = dir.join(LABELS_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&labels_path)
        .map_err(|e| ingest(format!("{}: {e}", labels_path.display())))?;
    let mut names = Vec::new();
    let mut images: Vec<Image> = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ingest(format!("{}: {e}", labels_path.display())))?;
        let line = i + 1;
        if rec.len() != 2 {
            return Err(ingest(format!(
                "{}:{line}: expected `filename,label`, got {} fields",
                labels_path.display(),
                rec.len()
            )));
        }
        let label = match rec[1].parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(ingest(format!(
                    "{}:{line}: label `{}` is not a non-negative integer",
                    labels_path.display(),
                    &rec[1]
                )))
            }
        };
        let name = rec[0].to_string();
        let img = read_image(&dir.join(&name))?;
        if let Some(first) = images.first() {
            if first.shape() != img.shape() {
                return Err(ingest(format!(
                    "{name}: shape {} differs from {} of {}",
                    img.shape(),
                    first.shape(),
                    names[0]
                )));
            }
        }
        names.push(name);
        images.push(img);
        labels.push(Label(label));
    }
    if images.is_empty() {
        return Err(ingest(format!("{}: no samples", labels_path.display())));
    }
    let meta_path = dir.join(META_FILE);
    let (num_classes, declared) = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| ingest(format!("{}: {e}", meta_path.display())))?;
        let meta: DatasetMeta =
            serde_json::from_str(&text).map_err(|e| ingest(format!("{}: {e}", meta_path.display())))?;
        (meta.num_classes, true)
    } else {
        let max = labels.iter().map(|l| l.0).max().unwrap_or(0);
        ((max + 1).max(2), false)
    };
    if num_classes < 2 {
        return Err(ingest(format!("{}: num_classes must be >= 2", meta_path.display())));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| l.0 >= num_classes) {
        return Err(ingest(format!(
            "{}: label {l} outside [0, {num_classes})",
            names[i]
        )));
    }
    Ok(Dataset {
        names,
        images,
        labels,
        num_classes,
        declared_classes: declared,
    })
}

/// Files making up a `.bbct` dataset directory, as `(relative path, bytes)`.
pub fn dataset_files(images: &[Image], labels: &[Label], num_classes: usize) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::with_capacity(images.len() + 2);
    let mut csv = String::from("filename,label\n");
    for (i, (img, l)) in images.iter().zip(labels).enumerate() {
        let name = format!("images/{i:05}.bbct");
        csv.push_str(&format!("{name},{l}\n"));
        files.push((name, img.to_tensor_bytes()));
    }
    files.push((LABELS_FILE.to_string(), csv.into_bytes()));
    let meta = serde_json::to_vec_pretty(&DatasetMeta { num_classes }).expect("meta serializes");
    files.push((META_FILE.to_string(), meta));
    files
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, files: &[(String, Vec<u8>)]) {
        for (name, bytes) in files {
            let p = dir.join(name);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, bytes).unwrap();
        }
    }

    fn imgs() -> Vec<Image> {
        vec![
            Image::new(Shape::new(2, 1, 1), vec![0.125, 0.3]).unwrap(),
            Image::new(Shape::new(2, 1, 1), vec![1.0, 0.0]).unwrap(),
        ]
    }

    #[test]
    fn tensor_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &dataset_files(&imgs(), &[Label(1), Label(0)], 3));
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images, imgs());
        assert_eq!(ds.labels, vec![Label(1), Label(0)]);
        assert_eq!(ds.num_classes, 3);
        assert!(ds.declared_classes);
    }

    #[test]
    fn png_dataset_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        for (i, v) in [0u8, 255].into_iter().enumerate() {
            let img = image::RgbImage::from_pixel(3, 2, image::Rgb([v, 51, 102]));
            img.save(dir.path().join(format!("{i}.png"))).unwrap();
        }
        fs::write(dir.path().join(LABELS_FILE), "0.png,0\n1.png,1\n").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), Shape::new(2, 3, 3));
        assert_eq!(ds.images[1].get(0, 0, 0), 1.0);
        assert_eq!(ds.images[0].get(1, 2, 1), 0.2);
        assert!(ds.images.iter().all(|im| im.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(ds.num_classes, 2);
        assert!(!ds.declared_classes);
    }

    #[test]
    fn label_out_of_declared_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut files = dataset_files(&imgs(), &[Label(1), Label(0)], 2);
        files.retain(|(n, _)| n != LABELS_FILE);
        files.push((LABELS_FILE.into(), b"images/00000.bbct,1\nimages/00001.bbct,2\n".to_vec()));
        write(dir.path(), &files);
        match load_dataset(dir.path()) {
            Err(CliError::Ingestion(msg)) => assert!(msg.contains("images/00001.bbct"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LABELS_FILE), "missing.bbct,0\n").unwrap();
        match load_dataset(dir.path()) {
            Err(CliError::Ingestion(msg)) => assert!(msg.contains("missing.bbct")),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join(LABELS_FILE), "filename,label\na.bbct,x\n").unwrap();
        match load_dataset(dir.path()) {
            Err(CliError::Ingestion(msg)) => assert!(msg.contains(":2:"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(CliError::Ingestion(_))));
    }

    #[test]
    fn mixed_shapes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = imgs();
        images[1] = Image::filled(Shape::new(1, 1, 1), 0.5).unwrap();
        write(dir.path(), &dataset_files(&images, &[Label(0), Label(1)], 2));
        match load_dataset(dir.path()) {
            Err(CliError::Ingestion(msg)) => assert!(msg.contains("images/00001.bbct")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
