//! Box arithmetic: areas, intersection-over-union, clipping and crop-region
//! derivation. Boxes are axis-aligned in pixel corner coordinates
//! (x_min, y_min, x_max, y_max), origin top-left, real-valued.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default padding fraction applied when deriving a crop region around a box.
pub const DEFAULT_CROP_MARGIN: f64 = 0.1;

/// Axis-aligned bounding box in corner form. Admitted boxes always have
/// strictly positive area and finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Validating constructor. Degenerate (zero or negative area) and
    /// non-finite boxes are rejected, never silently fixed.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Convert from COCO [x, y, w, h] form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn validate(&self) -> Result<()> {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox {
                reason: format!("non-finite coordinate in {self:?}"),
            });
        }
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidBox {
                reason: format!(
                    "degenerate box ({}, {}, {}, {}): sides must be strictly positive",
                    self.x_min, self.y_min, self.x_max, self.y_max
                ),
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDims { width, height });
        }
        Ok(ImageDims { width, height })
    }
}

/// Area of a box.
pub fn area(b: &BBox) -> f64 {
    b.width() * b.height()
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix_min = a.x_min.max(b.x_min);
    let iy_min = a.y_min.max(b.y_min);
    let ix_max = a.x_max.min(b.x_max);
    let iy_max = a.y_max.min(b.y_max);
    if ix_min >= ix_max || iy_min >= iy_max {
        return 0.0;
    }
    let inter = (ix_max - ix_min) * (iy_max - iy_min);
    let union = area(a) + area(b) - inter;
    inter / union
}

/// Intersect a box with the image rectangle [0, width] x [0, height].
/// Returns `None` when the clipped area is zero.
pub fn clip(b: &BBox, dims: &ImageDims) -> Option<BBox> {
    let x_min = b.x_min.max(0.0);
    let y_min = b.y_min.max(0.0);
    let x_max = b.x_max.min(dims.width as f64);
    let y_max = b.y_max.min(dims.height as f64);
    if x_min >= x_max || y_min >= y_max {
        return None;
    }
    Some(BBox {
        x_min,
        y_min,
        x_max,
        y_max,
    })
}

/// Expand a box by `margin * max(side)` on each edge, then clip to the image.
/// Errors when the padded box does not intersect the image at all.
pub fn crop_region(b: &BBox, dims: &ImageDims, margin: f64) -> Result<BBox> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::Validation(format!(
            "crop margin must be finite and >= 0, got {margin}"
        )));
    }
    let pad = margin * b.width().max(b.height());
    let padded = BBox {
        x_min: b.x_min - pad,
        y_min: b.y_min - pad,
        x_max: b.x_max + pad,
        y_max: b.y_max + pad,
    };
    clip(&padded, dims).ok_or_else(|| Error::EmptyRegion {
        context: format!("crop of {b:?} with margin {margin} lies outside {dims:?}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> BBox {
        BBox::new(x_min, y_min, x_max, y_max).unwrap()
    }

    #[test]
    fn area_direct_product() {
        assert_eq!(area(&bb(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&bb(0.0, 0.0, 1.0, 1.0)), 1.0);
        // 5 x 2 by hand
        assert_eq!(area(&bb(2.0, 3.0, 7.0, 5.0)), 10.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, 10.0, 0.0).is_err());
        assert!(BBox::new(5.0, 5.0, 5.0, 5.0).is_err());
        assert!(BBox::new(10.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 10.0).is_err());
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = bb(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
        // touching edges carry zero intersection area
        let c = bb(10.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn iou_half_overlap() {
        // inter = 50, union = 150
        let a = bb(0.0, 0.0, 10.0, 10.0);
        let b = bb(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn clip_clamps_and_signals_empty() {
        let dims = ImageDims::new(100, 100).unwrap();
        let clipped = clip(&bb(-5.0, -5.0, 5.0, 5.0), &dims).unwrap();
        assert_eq!(clipped, bb(0.0, 0.0, 5.0, 5.0));

        let inside = bb(10.0, 10.0, 20.0, 20.0);
        assert_eq!(clip(&inside, &dims), Some(inside));

        assert_eq!(clip(&bb(200.0, 200.0, 300.0, 300.0), &dims), None);
    }

    #[test]
    fn clip_is_idempotent() {
        let dims = ImageDims::new(64, 48).unwrap();
        let b = bb(-3.0, 10.0, 80.0, 47.5);
        let once = clip(&b, &dims).unwrap();
        assert_eq!(clip(&once, &dims), Some(once));
    }

    #[test]
    fn crop_region_margins() {
        let dims = ImageDims::new(100, 100).unwrap();
        let b = bb(10.0, 10.0, 20.0, 20.0);
        // margin 0 is just the clip
        assert_eq!(crop_region(&b, &dims, 0.0).unwrap(), b);
        // side 10, pad 1
        assert_eq!(
            crop_region(&b, &dims, 0.1).unwrap(),
            bb(9.0, 9.0, 21.0, 21.0)
        );
        // pad 5, clamped at the origin
        assert_eq!(
            crop_region(&bb(0.0, 0.0, 10.0, 10.0), &dims, 0.5).unwrap(),
            bb(0.0, 0.0, 15.0, 15.0)
        );
    }

    #[test]
    fn crop_region_outside_image_errors() {
        let dims = ImageDims::new(100, 100).unwrap();
        let far = bb(500.0, 500.0, 510.0, 510.0);
        assert!(crop_region(&far, &dims, 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BBox> {
            (
                -50.0f64..150.0,
                -50.0f64..150.0,
                0.5f64..80.0,
                0.5f64..80.0,
            )
                .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let ab = iou(&a, &b);
                let ba = iou(&b, &a);
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
            }

            #[test]
            fn iou_self_is_one(a in arb_box()) {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }

            // if b is inside b' and b' is inside a then iou(a,b) <= iou(a,b')
            #[test]
            fn containment_monotonicity(
                a in arb_box(),
                fx in 0.0f64..0.4,
                fy in 0.0f64..0.4,
                gx in 0.0f64..0.4,
                gy in 0.0f64..0.4,
            ) {
                let shrink = |b: &BBox, sx: f64, sy: f64| BBox {
                    x_min: b.x_min + sx * b.width(),
                    y_min: b.y_min + sy * b.height(),
                    x_max: b.x_max - sx * b.width(),
                    y_max: b.y_max - sy * b.height(),
                };
                let bp = shrink(&a, fx, fy);
                let b = shrink(&bp, gx, gy);
                prop_assert!(iou(&a, &b) <= iou(&a, &bp) + 1e-12);
            }

            #[test]
            fn clip_idempotent(a in arb_box(), w in 1u32..200, h in 1u32..200) {
                let dims = ImageDims::new(w, h).unwrap();
                if let Some(once) = clip(&a, &dims) {
                    prop_assert_eq!(clip(&once, &dims), Some(once));
                }
            }
        }
    }
}
