//! On-disk index formats: COCO-style JSON and a flat CSV.
//!
//! COCO boxes arrive as [x, y, w, h] and are converted to corner form at
//! ingestion. Image ids are derived from file name stems. Paths resolve
//! relative to the index file, so an index written next to its images stays
//! relocatable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageDims};

use super::{Annotation, DatasetIndex, ImageRecord};

#[derive(Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

fn source_tag(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

fn stem_of(file_name: &str) -> String {
    Path::new(file_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.to_string())
}

pub(super) fn load_coco(path: &Path) -> Result<DatasetIndex> {
    let text = std::fs::read_to_string(path)?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let categories: BTreeMap<u64, String> =
        file.categories.into_iter().map(|c| (c.id, c.name)).collect();
    let dir = parent(path);

    let mut ids: BTreeMap<u64, String> = BTreeMap::new();
    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        let image_id = stem_of(&img.file_name);
        ids.insert(img.id, image_id.clone());
        images.push(ImageRecord {
            image_id,
            path: dir.join(&img.file_name),
            dims: ImageDims::new(img.width, img.height)?,
            source: source_tag(path),
        });
    }

    let mut annotations = Vec::with_capacity(file.annotations.len());
    for (ordinal, ann) in file.annotations.into_iter().enumerate() {
        let image_id = ids.get(&ann.image_id).cloned().ok_or_else(|| {
            Error::BadAnnotation {
                image_id: format!("#{}", ann.image_id),
                ordinal,
                reason: "references an unknown image id".into(),
            }
        })?;
        let class_label = categories.get(&ann.category_id).cloned().ok_or_else(|| {
            Error::BadAnnotation {
                image_id: image_id.clone(),
                ordinal,
                reason: format!("unknown category id {}", ann.category_id),
            }
        })?;
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| Error::BadAnnotation {
            image_id: image_id.clone(),
            ordinal,
            reason: e.to_string(),
        })?;
        annotations.push(Annotation {
            bbox,
            class_label,
            image_id,
        });
    }
    DatasetIndex::build(source_tag(path), images, annotations)
}

pub(super) fn save_coco(index: &DatasetIndex, path: &Path) -> Result<()> {
    let category_ids: BTreeMap<&str, u64> = index
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as u64 + 1))
        .collect();
    let image_ids: BTreeMap<&str, u64> = index
        .images
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.as_str(), i as u64 + 1))
        .collect();
    let file = CocoFile {
        images: index
            .images
            .iter()
            .map(|r| CocoImage {
                id: image_ids[r.image_id.as_str()],
                file_name: r
                    .path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("{}.png", r.image_id)),
                width: r.dims.width,
                height: r.dims.height,
            })
            .collect(),
        annotations: index
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| CocoAnnotation {
                id: i as u64 + 1,
                image_id: image_ids[a.image_id.as_str()],
                category_id: category_ids[a.class_label.as_str()],
                bbox: [
                    a.bbox.x_min,
                    a.bbox.y_min,
                    a.bbox.width(),
                    a.bbox.height(),
                ],
            })
            .collect(),
        categories: index
            .classes
            .iter()
            .map(|c| CocoCategory {
                id: category_ids[c.as_str()],
                name: c.clone(),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

const CSV_HEADER: [&str; 9] = [
    "image_id", "path", "width", "height", "class", "x_min", "y_min", "x_max", "y_max",
];

pub(super) fn load_csv(path: &Path) -> Result<DatasetIndex> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let dir = parent(path);
    let mut images: BTreeMap<String, ImageRecord> = BTreeMap::new();
    let mut annotations = Vec::new();
    let mut ordinal = 0usize;
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let image_id = field(0);
        let rel = field(1);
        let parse_u32 = |s: &str, what: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                reason: format!("bad {what} '{s}' for image '{image_id}'"),
            })
        };
        let dims = ImageDims::new(
            parse_u32(&field(2), "width")?,
            parse_u32(&field(3), "height")?,
        )?;
        let record = ImageRecord {
            image_id: image_id.clone(),
            path: dir.join(&rel),
            dims,
            source: source_tag(path),
        };
        if let Some(existing) = images.get(&image_id) {
            if existing.dims != dims || existing.path != record.path {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    reason: format!("inconsistent rows for image '{image_id}'"),
                });
            }
        } else {
            images.insert(image_id.clone(), record);
        }
        let class = field(4);
        if class.is_empty() {
            continue; // image-only row, no box
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                reason: format!("bad {what} '{s}' for image '{image_id}'"),
            })
        };
        let bbox = BBox::new(
            parse_f(&field(5), "x_min")?,
            parse_f(&field(6), "y_min")?,
            parse_f(&field(7), "x_max")?,
            parse_f(&field(8), "y_max")?,
        )
        .map_err(|e| Error::BadAnnotation {
            image_id: image_id.clone(),
            ordinal,
            reason: e.to_string(),
        })?;
        annotations.push(Annotation {
            bbox,
            class_label: class,
            image_id,
        });
        ordinal += 1;
    }
    DatasetIndex::build(source_tag(path), images.into_values().collect(), annotations)
}

pub(super) fn save_csv(index: &DatasetIndex, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let fail = |e: csv::Error| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    writer.write_record(CSV_HEADER).map_err(fail)?;
    let rel_name = |r: &ImageRecord| -> String {
        r.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{}.png", r.image_id))
    };
    for rec in &index.images {
        let anns = index.annotations_for(&rec.image_id);
        if anns.is_empty() {
            writer
                .write_record([
                    rec.image_id.as_str(),
                    &rel_name(rec),
                    &rec.dims.width.to_string(),
                    &rec.dims.height.to_string(),
                    "",
                    "",
                    "",
                    "",
                    "",
                ])
                .map_err(fail)?;
            continue;
        }
        for ann in anns {
            writer
                .write_record([
                    rec.image_id.as_str(),
                    &rel_name(rec),
                    &rec.dims.width.to_string(),
                    &rec.dims.height.to_string(),
                    ann.class_label.as_str(),
                    &ann.bbox.x_min.to_string(),
                    &ann.bbox.y_min.to_string(),
                    &ann.bbox.x_max.to_string(),
                    &ann.bbox.y_max.to_string(),
                ])
                .map_err(fail)?;
        }
    }
    writer.flush()?;
    Ok(())
}
