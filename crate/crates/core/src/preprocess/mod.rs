//! Image conditioning: CLAHE contrast equalization, resizing, disc
//! bounding-box extraction, margin cropping, and the inverse mapping of
//! cropped predictions back to full-image coordinates.

mod clahe;

pub use clahe::clahe;

use image::RgbImage;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

/// An RGB raster with provenance metadata; the unit of ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusImage {
    image: RgbImage,
    source_id: String,
}

impl FundusImage {
    pub fn new(image: RgbImage, source_id: impl Into<String>) -> Self {
        Self {
            image,
            source_id: source_id.into(),
        }
    }

    /// Decodes an 8-bit RGB raster from PNG or JPEG; the file stem becomes
    /// the source id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let image = image::open(path)?.to_rgb8();
        let source_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".to_string());
        Ok(Self { image, source_id })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.image.save(path.as_ref())?;
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    /// Channel-first `(3, H, W)` tensor with intensities normalized to `[0, 1]`.
    pub fn to_tensor(&self) -> Array3<f32> {
        let (h, w) = self.dims();
        let mut t = Array3::zeros((3, h, w));
        for (x, y, px) in self.image.enumerate_pixels() {
            for ch in 0..3 {
                t[(ch, y as usize, x as usize)] = f32::from(px.0[ch]) / 255.0;
            }
        }
        t
    }
}

/// Axis-aligned pixel rectangle with inclusive bounds; the disc ROI handed
/// from stage 1 to stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BoundingBox {
    pub fn new(row_min: usize, row_max: usize, col_min: usize, col_max: usize) -> Result<Self> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::InvalidConfig(format!(
                "degenerate bounding box rows {row_min}..{row_max} cols {col_min}..{col_max}"
            )));
        }
        Ok(Self {
            row_min,
            row_max,
            col_min,
            col_max,
        })
    }

    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    fn within(&self, height: usize, width: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    /// Rescales the box from one image geometry to another, rounding pixel
    /// centers and clamping to the target bounds.
    pub fn scaled(&self, from: (usize, usize), to: (usize, usize)) -> Self {
        let sy = to.0 as f64 / from.0 as f64;
        let sx = to.1 as f64 / from.1 as f64;
        let clamp = |v: f64, hi: usize| (v.round().max(0.0) as usize).min(hi - 1);
        let row_min = clamp(self.row_min as f64 * sy, to.0);
        let row_max = clamp(self.row_max as f64 * sy, to.0).max(row_min);
        let col_min = clamp(self.col_min as f64 * sx, to.1);
        let col_max = clamp(self.col_max as f64 * sx, to.1).max(col_min);
        Self {
            row_min,
            row_max,
            col_min,
            col_max,
        }
    }
}

/// Records how a crop was taken so masks predicted on the crop can be mapped
/// back into full-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropTransform {
    /// Dimensions of the image the crop was taken from.
    pub src_dims: (usize, usize),
    /// The cropped region, in source coordinates.
    pub crop: BoundingBox,
    /// Dimensions of the raster predictions are made on (the crop after any
    /// resize). Resampling back always uses nearest mode.
    pub out_dims: (usize, usize),
}

impl CropTransform {
    /// Same crop, with predictions made at a different resolution.
    pub fn with_out_dims(mut self, dims: (usize, usize)) -> Self {
        self.out_dims = dims;
        self
    }
}

/// Interpolation mode for resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

fn check_target(dims: (usize, usize)) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target must be at least 1x1, got {}x{}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

/// Bilinear resize of an RGB image with center-aligned sampling. Resizing to
/// identical dimensions returns the input unchanged.
pub fn resize_image(img: &FundusImage, target: (usize, usize)) -> Result<FundusImage> {
    check_target(target)?;
    let (src_h, src_w) = img.dims();
    let (dst_h, dst_w) = target;
    if (src_h, src_w) == (dst_h, dst_w) {
        return Ok(img.clone());
    }
    let scale_y = src_h as f64 / dst_h as f64;
    let scale_x = src_w as f64 / dst_w as f64;
    let src = img.image();
    let mut out = RgbImage::new(dst_w as u32, dst_h as u32);
    for r in 0..dst_h {
        let sy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = sy - y0 as f64;
        for c in 0..dst_w {
            let sx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = sx - x0 as f64;
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let p00 = f64::from(src.get_pixel(x0 as u32, y0 as u32).0[ch]);
                let p01 = f64::from(src.get_pixel(x1 as u32, y0 as u32).0[ch]);
                let p10 = f64::from(src.get_pixel(x0 as u32, y1 as u32).0[ch]);
                let p11 = f64::from(src.get_pixel(x1 as u32, y1 as u32).0[ch]);
                let top = p00 * (1.0 - wx) + p01 * wx;
                let bottom = p10 * (1.0 - wx) + p11 * wx;
                px[ch] = (top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    Ok(FundusImage::new(out, img.source_id()))
}

/// Resamples a binary mask. Only [`ResizeMode::Nearest`] is permitted: any
/// interpolating mode would create non-binary values.
pub fn resize_mask(mask: &BinaryMask, target: (usize, usize), mode: ResizeMode) -> Result<BinaryMask> {
    check_target(target)?;
    if mode == ResizeMode::Bilinear {
        return Err(Error::InvalidConfig(
            "bilinear resize requested for a binary mask; masks must use nearest mode".to_string(),
        ));
    }
    let (src_h, src_w) = (mask.height(), mask.width());
    let (dst_h, dst_w) = target;
    if (src_h, src_w) == (dst_h, dst_w) {
        return Ok(mask.clone());
    }
    let scale_y = src_h as f64 / dst_h as f64;
    let scale_x = src_w as f64 / dst_w as f64;
    Ok(BinaryMask::from_fn(dst_h, dst_w, |r, c| {
        let sy = (((r as f64 + 0.5) * scale_y).floor() as usize).min(src_h - 1);
        let sx = (((c as f64 + 0.5) * scale_x).floor() as usize).min(src_w - 1);
        mask.get(sy, sx) == 1
    }))
}

/// Keeps only the largest 4-connected foreground component.
///
/// Errors if the mask has no foreground at all.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    let mut labels = vec![0u32; h * w];
    let mut best_label = 0u32;
    let mut best_size = 0usize;
    let mut next = 1u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if labels[start] != 0 || mask.get(start / w, start % w) == 0 {
            continue;
        }
        let label = next;
        next += 1;
        let mut size = 0usize;
        stack.push(start);
        labels[start] = label;
        while let Some(idx) = stack.pop() {
            size += 1;
            let (r, c) = (idx / w, idx % w);
            let mut visit = |nr: usize, nc: usize| {
                let nidx = nr * w + nc;
                if labels[nidx] == 0 && mask.get(nr, nc) == 1 {
                    labels[nidx] = label;
                    stack.push(nidx);
                }
            };
            if r > 0 {
                visit(r - 1, c);
            }
            if r + 1 < h {
                visit(r + 1, c);
            }
            if c > 0 {
                visit(r, c - 1);
            }
            if c + 1 < w {
                visit(r, c + 1);
            }
        }
        if size > best_size {
            best_size = size;
            best_label = label;
        }
    }
    if best_size == 0 {
        return Err(Error::NoDiscFound("mask has no foreground".to_string()));
    }
    Ok(BinaryMask::from_fn(h, w, |r, c| {
        labels[r * w + c] == best_label
    }))
}

/// Tight axis-aligned box around the largest 4-connected foreground
/// component. Errors with "no disc found" on an empty mask.
pub fn extract_bbox(mask: &BinaryMask) -> Result<BoundingBox> {
    let component = largest_component(mask)?;
    let mut row_min = usize::MAX;
    let mut row_max = 0;
    let mut col_min = usize::MAX;
    let mut col_max = 0;
    for r in 0..component.height() {
        for c in 0..component.width() {
            if component.get(r, c) == 1 {
                row_min = row_min.min(r);
                row_max = row_max.max(r);
                col_min = col_min.min(c);
                col_max = col_max.max(c);
            }
        }
    }
    BoundingBox::new(row_min, row_max, col_min, col_max)
}

/// Expands `bbox` by `margin_frac` of its side length on each side (per
/// axis), clamps to the image bounds, and crops. The returned transform
/// inverts the crop via [`map_mask_back`].
pub fn crop_with_margin(
    img: &FundusImage,
    bbox: BoundingBox,
    margin_frac: f64,
) -> Result<(FundusImage, CropTransform)> {
    if margin_frac < 0.0 || !margin_frac.is_finite() {
        return Err(Error::OutOfRange(format!(
            "margin fraction must be non-negative, got {margin_frac}"
        )));
    }
    let (h, w) = img.dims();
    if !bbox.within(h, w) {
        return Err(Error::OutOfRange(format!(
            "bounding box {bbox:?} lies outside {h}x{w} image"
        )));
    }
    let margin_rows = (margin_frac * bbox.height() as f64).round() as usize;
    let margin_cols = (margin_frac * bbox.width() as f64).round() as usize;
    let crop = BoundingBox {
        row_min: bbox.row_min.saturating_sub(margin_rows),
        row_max: (bbox.row_max + margin_rows).min(h - 1),
        col_min: bbox.col_min.saturating_sub(margin_cols),
        col_max: (bbox.col_max + margin_cols).min(w - 1),
    };
    let mut out = RgbImage::new(crop.width() as u32, crop.height() as u32);
    for r in 0..crop.height() {
        for c in 0..crop.width() {
            let px = *img
                .image()
                .get_pixel((crop.col_min + c) as u32, (crop.row_min + r) as u32);
            out.put_pixel(c as u32, r as u32, px);
        }
    }
    let transform = CropTransform {
        src_dims: (h, w),
        crop,
        out_dims: (crop.height(), crop.width()),
    };
    Ok((FundusImage::new(out, img.source_id()), transform))
}

/// Places a mask predicted on a crop back into full-frame coordinates,
/// zero outside the crop region. Resampling uses nearest mode.
pub fn map_mask_back(mask: &BinaryMask, t: &CropTransform) -> Result<BinaryMask> {
    if (mask.height(), mask.width()) != t.out_dims {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{} but transform expects {}x{}",
            mask.height(),
            mask.width(),
            t.out_dims.0,
            t.out_dims.1
        )));
    }
    let at_crop = resize_mask(mask, (t.crop.height(), t.crop.width()), ResizeMode::Nearest)?;
    Ok(BinaryMask::from_fn(t.src_dims.0, t.src_dims.1, |r, c| {
        if t.crop.contains(r, c) {
            at_crop.get(r - t.crop.row_min, c - t.crop.col_min) == 1
        } else {
            false
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn checker_image(h: usize, w: usize) -> FundusImage {
        let mut img = RgbImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let v = if (x + y) % 2 == 0 { 200 } else { 40 };
            *px = image::Rgb([v, v / 2, v / 4]);
        }
        FundusImage::new(img, "checker")
    }

    fn constant_image(h: usize, w: usize, value: [u8; 3]) -> FundusImage {
        let mut img = RgbImage::new(w as u32, h as u32);
        for px in img.pixels_mut() {
            *px = image::Rgb(value);
        }
        FundusImage::new(img, "constant")
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = checker_image(10, 12);
        let out = resize_image(&img, (10, 12)).unwrap();
        assert_eq!(img.image(), out.image());
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = constant_image(16, 16, [77, 150, 33]);
        let out = resize_image(&img, (7, 5)).unwrap();
        assert!(out.image().pixels().all(|p| p.0 == [77, 150, 33]));
    }

    #[test]
    fn nearest_upscale_duplicates_pixels() {
        let mask = BinaryMask::from_fn(2, 2, |r, c| r == 0 && c == 1);
        let up = resize_mask(&mask, (4, 4), ResizeMode::Nearest).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(up.get(r, c), mask.get(r / 2, c / 2), "at ({r},{c})");
            }
        }
    }

    #[test]
    fn bilinear_rejected_for_masks() {
        let mask = BinaryMask::ones(4, 4);
        assert!(resize_mask(&mask, (8, 8), ResizeMode::Bilinear).is_err());
    }

    #[test]
    fn masks_stay_binary_through_resize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = BinaryMask::from_fn(11, 17, |_, _| rng.random_bool(0.4));
        for dims in [(5, 9), (23, 31), (11, 17)] {
            let out = resize_mask(&mask, dims, ResizeMode::Nearest).unwrap();
            assert!(out.values().iter().all(|&v| v <= 1));
        }
    }

    #[test]
    fn extract_bbox_of_filled_rectangle() {
        let mask = BinaryMask::from_fn(12, 12, |r, c| (3..=7).contains(&r) && (2..=9).contains(&c));
        let bbox = extract_bbox(&mask).unwrap();
        assert_eq!(bbox, BoundingBox::new(3, 7, 2, 9).unwrap());
    }

    #[test]
    fn extract_bbox_random_rectangles_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let r0 = rng.random_range(0..20);
            let r1 = rng.random_range(r0..24);
            let c0 = rng.random_range(0..20);
            let c1 = rng.random_range(c0..24);
            let mask =
                BinaryMask::from_fn(24, 24, |r, c| (r0..=r1).contains(&r) && (c0..=c1).contains(&c));
            assert_eq!(
                extract_bbox(&mask).unwrap(),
                BoundingBox::new(r0, r1, c0, c1).unwrap()
            );
        }
    }

    #[test]
    fn extract_bbox_picks_largest_component() {
        // 50-pixel blob vs 5-pixel speck; flood-fill oracle says the blob wins.
        let mask = BinaryMask::from_fn(20, 20, |r, c| {
            ((2..=6).contains(&r) && (2..=11).contains(&c)) || (r == 15 && (10..15).contains(&c))
        });
        let bbox = extract_bbox(&mask).unwrap();
        assert_eq!(bbox, BoundingBox::new(2, 6, 2, 11).unwrap());
    }

    #[test]
    fn extract_bbox_single_pixel() {
        let mask = BinaryMask::from_fn(9, 9, |r, c| r == 4 && c == 4);
        assert_eq!(
            extract_bbox(&mask).unwrap(),
            BoundingBox::new(4, 4, 4, 4).unwrap()
        );
    }

    #[test]
    fn extract_bbox_rejects_empty_mask() {
        let mask = BinaryMask::zeros(8, 8);
        assert!(matches!(
            extract_bbox(&mask),
            Err(crate::Error::NoDiscFound(_))
        ));
    }

    #[test]
    fn crop_zero_margin_is_exact_box() {
        let img = checker_image(30, 30);
        let bbox = BoundingBox::new(5, 14, 8, 19).unwrap();
        let (crop, t) = crop_with_margin(&img, bbox, 0.0).unwrap();
        assert_eq!(crop.dims(), (10, 12));
        assert_eq!(t.crop, bbox);
    }

    #[test]
    fn crop_margin_expands_each_side() {
        // 20x20 box with margin 0.5 grows by 10 px per side.
        let img = checker_image(100, 100);
        let bbox = BoundingBox::new(40, 59, 40, 59).unwrap();
        let (_, t) = crop_with_margin(&img, bbox, 0.5).unwrap();
        assert_eq!(t.crop, BoundingBox::new(30, 69, 30, 69).unwrap());
    }

    #[test]
    fn crop_clamps_at_image_edges() {
        let img = checker_image(40, 40);
        for bbox in [
            BoundingBox::new(0, 9, 0, 9).unwrap(),
            BoundingBox::new(30, 39, 30, 39).unwrap(),
            BoundingBox::new(0, 9, 30, 39).unwrap(),
            BoundingBox::new(30, 39, 0, 9).unwrap(),
        ] {
            let (crop, t) = crop_with_margin(&img, bbox, 0.5).unwrap();
            assert!(t.crop.row_max < 40 && t.crop.col_max < 40);
            assert_eq!(crop.dims(), (t.crop.height(), t.crop.width()));
        }
    }

    #[test]
    fn crop_rejects_out_of_bounds_box() {
        let img = checker_image(20, 20);
        let bbox = BoundingBox::new(10, 25, 0, 5).unwrap();
        assert!(crop_with_margin(&img, bbox, 0.1).is_err());
    }

    #[test]
    fn map_back_identity_transform() {
        let mask = BinaryMask::from_fn(16, 16, |r, c| r > 4 && c < 10);
        let t = CropTransform {
            src_dims: (16, 16),
            crop: BoundingBox::new(0, 15, 0, 15).unwrap(),
            out_dims: (16, 16),
        };
        assert_eq!(map_mask_back(&mask, &t).unwrap(), mask);
    }

    #[test]
    fn map_back_zero_mask_stays_zero() {
        let t = CropTransform {
            src_dims: (32, 32),
            crop: BoundingBox::new(4, 19, 6, 21).unwrap(),
            out_dims: (8, 8),
        };
        let out = map_mask_back(&BinaryMask::zeros(8, 8), &t).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn map_back_rejects_wrong_dims() {
        let t = CropTransform {
            src_dims: (32, 32),
            crop: BoundingBox::new(4, 19, 6, 21).unwrap(),
            out_dims: (8, 8),
        };
        assert!(map_mask_back(&BinaryMask::zeros(9, 8), &t).is_err());
    }

    #[test]
    fn crop_roundtrip_preserves_interior_ellipses() {
        // Crop, resize predictions to 128x128, map back: IOU ≥ 0.95 against
        // the original for masks fully interior to the box.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let (h, w) = (128, 128);
            let cy = rng.random_range(50.0..78.0);
            let cx = rng.random_range(50.0..78.0);
            let a = rng.random_range(12.0..20.0);
            let b = rng.random_range(12.0..20.0);
            let mask = BinaryMask::from_fn(h, w, |r, c| {
                let dy = (r as f64 - cy) / b;
                let dx = (c as f64 - cx) / a;
                dy * dy + dx * dx <= 1.0
            });
            let bbox = extract_bbox(&mask).unwrap();
            let img = checker_image(h, w);
            let (_, t) = crop_with_margin(&img, bbox, 0.3).unwrap();
            // Predictions happen at 128x128 regardless of crop size.
            let cropped = BinaryMask::from_fn(t.crop.height(), t.crop.width(), |r, c| {
                mask.get(r + t.crop.row_min, c + t.crop.col_min) == 1
            });
            let at_net = resize_mask(&cropped, (128, 128), ResizeMode::Nearest).unwrap();
            let t = t.with_out_dims((128, 128));
            let restored = map_mask_back(&at_net, &t).unwrap();
            let score = metrics::iou(&restored, &mask).unwrap();
            assert!(score >= 0.95, "round-trip IOU {score}");
        }
    }

    #[test]
    fn resized_mask_roundtrip_centers_stay_close() {
        // Interior pixel centers land within 1 pixel of their origin.
        let t = CropTransform {
            src_dims: (64, 64),
            crop: BoundingBox::new(16, 47, 16, 47).unwrap(),
            out_dims: (16, 16),
        };
        for r in 0..16 {
            for c in 0..16 {
                let single = BinaryMask::from_fn(16, 16, |rr, cc| rr == r && cc == c);
                let back = map_mask_back(&single, &t).unwrap();
                // Forward map of the restored pixels must cover the original.
                let mut hit = false;
                for rr in 0..64usize {
                    for cc in 0..64usize {
                        if back.get(rr, cc) == 1 {
                            let rr_out = ((rr as f64 - 16.0 + 0.5) * 16.0 / 32.0 - 0.5).round();
                            let cc_out = ((cc as f64 - 16.0 + 0.5) * 16.0 / 32.0 - 0.5).round();
                            if (rr_out - r as f64).abs() <= 1.0 && (cc_out - c as f64).abs() <= 1.0 {
                                hit = true;
                            }
                        }
                    }
                }
                assert!(hit, "pixel ({r},{c}) drifted more than 1 pixel");
            }
        }
    }
}
