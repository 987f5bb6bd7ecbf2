//! Image files, the dataset JSON and the detection JSONL formats.
//!
//! Dataset JSON:
//! `{"images":[{"id","file","width","height"}], "annotations":[{"image_id","bbox":[x,y,w,h],"category"}], "categories":[...]}`
//! with boxes in absolute pixels. Detection JSONL holds one
//! `{"image_id","category","score","bbox":[x,y,w,h]}` object per line, also in
//! pixels of the original image.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::RawImage;
use crate::detector::DetectionSet;
use crate::error::{Error, Result};
use crate::eval::{ImageDetections, ImageGroundTruth, LabeledBox, ScoredBox};
use crate::train::BoxCxcywh;

fn file_err(path: &Path, source: std::io::Error) -> Error {
    Error::File { path: path.display().to_string(), source }
}

/// Decodes a PPM (P6) or PNG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<RawImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    RawImage::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

/// Writes a binary PPM (P6), quantizing samples to 8 bits.
pub fn save_ppm(raw: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", raw.width, raw.height).into_bytes();
    out.extend(raw.rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out).map_err(|e| file_err(path, e))
}

/// Deterministic test scene: a vertical gradient with a few flat-colored
/// rectangles and discs.
pub fn synthetic_scene(width: usize, height: usize) -> RawImage {
    let rects: [([f32; 4], [f32; 3]); 3] = [
        ([0.10, 0.55, 0.35, 0.92], [0.85, 0.20, 0.15]),
        ([0.55, 0.15, 0.90, 0.45], [0.15, 0.35, 0.80]),
        ([0.62, 0.60, 0.72, 0.88], [0.20, 0.70, 0.25]),
    ];
    let discs: [([f32; 3], [f32; 3]); 2] = [([0.28, 0.25, 0.12], [0.95, 0.85, 0.20]), ([0.82, 0.75, 0.07], [0.55, 0.25, 0.65])];
    let mut rgb = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (u, v) = ((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
            let mut c = [0.55 + 0.25 * v, 0.60 + 0.2 * v, 0.70 - 0.2 * v];
            for (r, col) in &rects {
                if u >= r[0] && u < r[2] && v >= r[1] && v < r[3] {
                    c = *col;
                }
            }
            for (d, col) in &discs {
                if (u - d[0]).powi(2) + (v - d[1]).powi(2) < d[2] * d[2] {
                    c = *col;
                }
            }
            rgb.extend_from_slice(&c);
        }
    }
    RawImage { width, height, rgb }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetImage {
    pub id: u64,
    pub file: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: u64,
    pub bbox: [f64; 4],
    pub category: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<DatasetImage>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<String>,
    /// Directory that relative image paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Dataset {
    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        let mut ds = Self::from_json(&text)?;
        ds.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.id) {
                return Err(Error::Validation(format!("image id {} appears twice", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::Validation(format!("image {} has zero size", img.id)));
            }
        }
        if self.categories.is_empty() {
            return Err(Error::Validation("dataset lists no categories".into()));
        }
        for a in &self.annotations {
            if !ids.contains(&a.image_id) {
                return Err(Error::Validation(format!("annotation references unknown image id {}", a.image_id)));
            }
            if !self.categories.contains(&a.category) {
                return Err(Error::Validation(format!("annotation category `{}` is not listed", a.category)));
            }
            if !(a.bbox[2] > 0.0 && a.bbox[3] > 0.0) {
                return Err(Error::Validation(format!("annotation box {:?} has non-positive size", a.bbox)));
            }
        }
        Ok(())
    }

    pub fn image_path(&self, img: &DatasetImage) -> PathBuf {
        self.root.join(&img.file)
    }

    /// Ground truth with boxes normalized by each image's size.
    pub fn ground_truth(&self) -> Vec<ImageGroundTruth> {
        self.images
            .iter()
            .map(|img| ImageGroundTruth {
                image_id: img.id,
                boxes: self
                    .annotations
                    .iter()
                    .filter(|a| a.image_id == img.id)
                    .map(|a| LabeledBox { category: a.category.clone(), bbox: xywh_to_cxcywh(&a.bbox, img.width, img.height) })
                    .collect(),
            })
            .collect()
    }
}

/// Pixel `[x, y, w, h]` to `cxcywh` normalized by the image size.
pub fn xywh_to_cxcywh(b: &[f64; 4], width: usize, height: usize) -> BoxCxcywh {
    let (w, h) = (width as f64, height as f64);
    [(b[0] + b[2] / 2.0) / w, (b[1] + b[3] / 2.0) / h, b[2] / w, b[3] / h]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category: String,
    pub score: f64,
    pub bbox: [f64; 4],
}

/// Maps detections from the letterboxed network input back to pixel
/// `[x, y, w, h]` of the original `width × height` image, clipped to it.
pub fn detections_to_records(
    image_id: u64,
    dets: &DetectionSet,
    phrases: &[String],
    input_size: usize,
    scale: f32,
    width: usize,
    height: usize,
) -> Result<Vec<DetectionRecord>> {
    let to_px = input_size as f64 / scale as f64;
    dets.detections
        .iter()
        .map(|d| {
            let category = phrases
                .get(d.label)
                .ok_or_else(|| Error::Validation(format!("label {} outside a {}-phrase prompt", d.label, phrases.len())))?
                .clone();
            let [cx, cy, w, h] = d.bbox.map(f64::from);
            let x1 = ((cx - w / 2.0) * to_px).clamp(0.0, width as f64);
            let y1 = ((cy - h / 2.0) * to_px).clamp(0.0, height as f64);
            let x2 = ((cx + w / 2.0) * to_px).clamp(0.0, width as f64);
            let y2 = ((cy + h / 2.0) * to_px).clamp(0.0, height as f64);
            Ok(DetectionRecord { image_id, category, score: f64::from(d.score), bbox: [x1, y1, x2 - x1, y2 - y1] })
        })
        .collect()
}

pub fn write_jsonl<W: Write + ?Sized>(out: &mut W, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Groups records per dataset image for the evaluator, normalizing boxes.
pub fn records_to_eval(ds: &Dataset, records: &[DetectionRecord]) -> Result<Vec<ImageDetections>> {
    let mut out: Vec<ImageDetections> =
        ds.images.iter().map(|img| ImageDetections { image_id: img.id, detections: Vec::new() }).collect();
    for r in records {
        let Some(i) = ds.images.iter().position(|img| img.id == r.image_id) else {
            return Err(Error::Validation(format!("detection references unknown image id {}", r.image_id)));
        };
        let img = &ds.images[i];
        out[i].detections.push(ScoredBox {
            category: r.category.clone(),
            score: r.score,
            bbox: xywh_to_cxcywh(&r.bbox, img.width, img.height),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Detection;

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ppm");
        let scene = synthetic_scene(40, 24);
        save_ppm(&scene, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!((back.width, back.height), (40, 24));
        let err = back.rgb.iter().zip(&scene.rgb).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn missing_image_names_path() {
        let err = load_image("/nonexistent/x.ppm").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ppm"));
    }

    #[test]
    fn dataset_parsing_and_validation() {
        let text = r#"{"images":[{"id":3,"file":"a.ppm","width":100,"height":50}],
            "annotations":[{"image_id":3,"bbox":[10,10,20,10],"category":"cat"}],
            "categories":["cat","dog"]}"#;
        let ds = Dataset::from_json(text).unwrap();
        let gt = ds.ground_truth();
        assert_eq!(gt[0].boxes[0].bbox, [0.2, 0.3, 0.2, 0.2]);
        let bad = text.replace("\"image_id\":3", "\"image_id\":4");
        assert!(matches!(Dataset::from_json(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn records_undo_letterbox_and_clip() {
        // 200x100 image letterboxed into 64: scale 0.32
        let dets = DetectionSet {
            detections: vec![
                Detection { bbox: [0.25, 0.125, 0.1, 0.05], score: 0.7, label: 1 },
                Detection { bbox: [0.5, 0.45, 0.5, 0.2], score: 0.2, label: 0 },
            ],
        };
        let phrases = vec!["cat".to_string(), "dog".to_string()];
        let r = detections_to_records(5, &dets, &phrases, 64, 0.32, 200, 100).unwrap();
        assert_eq!(r[0].category, "dog");
        let expect = [40.0, 20.0, 20.0, 10.0];
        for (a, b) in r[0].bbox.iter().zip(expect) {
            assert!((a - b).abs() < 1e-4, "{:?}", r[0].bbox);
        }
        // second box runs past the bottom edge and is clipped
        assert!((r[1].bbox[1] + r[1].bbox[3] - 100.0).abs() < 1e-9);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &r).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), r);
    }
}
