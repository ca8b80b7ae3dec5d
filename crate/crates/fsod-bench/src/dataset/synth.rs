//! Procedural fixture generation: flat-background images with filled
//! rectangles or ellipses per class, plus matching annotations. Everything
//! is a pure function of the spec, including the encoded pixel bytes.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageDims};

use super::{Annotation, DatasetIndex, ImageRecord};

const BACKGROUND: Rgb<u8> = Rgb([28, 28, 32]);
const PALETTE: [Rgb<u8>; 8] = [
    Rgb([255, 255, 255]),
    Rgb([220, 60, 60]),
    Rgb([70, 200, 90]),
    Rgb([80, 120, 240]),
    Rgb([240, 200, 60]),
    Rgb([180, 80, 220]),
    Rgb([60, 220, 220]),
    Rgb([240, 140, 40]),
];

#[derive(Debug, Clone)]
pub struct SynthClassSpec {
    pub name: String,
    pub total_boxes: u64,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub source: String,
    pub images: usize,
    pub dims: ImageDims,
    pub classes: Vec<SynthClassSpec>,
    /// Box side range in whole pixels; integer corners keep pixel-count
    /// oracles exact.
    pub min_side: u32,
    pub max_side: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn simple(
        source: &str,
        images: usize,
        classes: &[(&str, u64)],
        seed: u64,
    ) -> SynthSpec {
        SynthSpec {
            source: source.to_string(),
            images,
            dims: ImageDims::new(200, 160).expect("static dims"),
            classes: classes
                .iter()
                .map(|(name, total_boxes)| SynthClassSpec {
                    name: name.to_string(),
                    total_boxes: *total_boxes,
                })
                .collect(),
            min_side: 12,
            max_side: 30,
            seed,
        }
    }
}

struct PlacedBox {
    class_idx: usize,
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
}

/// Generate images under `out_dir` and return the validated index.
pub fn synth_fixture(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetIndex> {
    if spec.images == 0 || spec.classes.is_empty() {
        return Err(Error::Validation(
            "synthetic fixture needs at least one image and one class".into(),
        ));
    }
    if spec.min_side == 0
        || spec.min_side > spec.max_side
        || spec.max_side >= spec.dims.width.min(spec.dims.height)
    {
        return Err(Error::Validation(format!(
            "box side range {}..{} does not fit {}x{} images",
            spec.min_side, spec.max_side, spec.dims.width, spec.dims.height
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<Vec<PlacedBox>> = (0..spec.images).map(|_| Vec::new()).collect();
    for (class_idx, class) in spec.classes.iter().enumerate() {
        for _ in 0..class.total_boxes {
            let img = rng.gen_range(0..spec.images);
            let w = rng.gen_range(spec.min_side..=spec.max_side);
            let h = rng.gen_range(spec.min_side..=spec.max_side);
            let x0 = rng.gen_range(0..=spec.dims.width - w);
            let y0 = rng.gen_range(0..=spec.dims.height - h);
            placed[img].push(PlacedBox {
                class_idx,
                x0,
                y0,
                w,
                h,
            });
        }
    }

    let mut images = Vec::with_capacity(spec.images);
    let mut annotations = Vec::new();
    for (i, boxes) in placed.iter().enumerate() {
        let image_id = format!("img_{i:04}");
        let file = out_dir.join(format!("{image_id}.png"));
        let mut canvas: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_pixel(spec.dims.width, spec.dims.height, BACKGROUND);
        for b in boxes {
            let color = PALETTE[b.class_idx % PALETTE.len()];
            if b.class_idx % 2 == 0 {
                fill_rect(&mut canvas, b, color);
            } else {
                fill_ellipse(&mut canvas, b, color);
            }
            annotations.push(Annotation {
                bbox: BBox::new(
                    b.x0 as f64,
                    b.y0 as f64,
                    (b.x0 + b.w) as f64,
                    (b.y0 + b.h) as f64,
                )?,
                class_label: spec.classes[b.class_idx].name.clone(),
                image_id: image_id.clone(),
            });
        }
        canvas.save(&file).map_err(|e| Error::Validation(format!(
            "failed to write {}: {e}",
            file.display()
        )))?;
        images.push(ImageRecord {
            image_id,
            path: file,
            dims: spec.dims,
            source: spec.source.clone(),
        });
    }
    DatasetIndex::build(spec.source.clone(), images, annotations)
}

fn fill_rect(canvas: &mut ImageBuffer<Rgb<u8>, Vec<u8>>, b: &PlacedBox, color: Rgb<u8>) {
    for y in b.y0..b.y0 + b.h {
        for x in b.x0..b.x0 + b.w {
            canvas.put_pixel(x, y, color);
        }
    }
}

fn fill_ellipse(canvas: &mut ImageBuffer<Rgb<u8>, Vec<u8>>, b: &PlacedBox, color: Rgb<u8>) {
    let cx = b.x0 as f64 + b.w as f64 / 2.0;
    let cy = b.y0 as f64 + b.h as f64 / 2.0;
    let rx = b.w as f64 / 2.0;
    let ry = b.h as f64 / 2.0;
    for y in b.y0..b.y0 + b.h {
        for x in b.x0..b.x0 + b.w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                canvas.put_pixel(x, y, color);
            }
        }
    }
}
