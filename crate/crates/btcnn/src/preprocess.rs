//! Image preparation: the three input variants (uncropped, cropped,
//! segmented) at the three square input sizes (32, 64, 128).
//!
//! Pipeline per variant, all on raw intensities with min-max normalization
//! last:
//!   uncropped  = normalize(resize(image))
//!   cropped    = normalize(resize(crop(image, bbox(mask))))
//!   segmented  = normalize(resize(crop(image ⊙ mask, bbox(mask))))

use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("mask has no true pixels")]
    EmptyMask,
    #[error("rect {0:?} out of bounds for {1}x{2} image")]
    OutOfBounds(Rect, usize, usize),
    #[error("image is {0}x{1} but mask is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Input preparation variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Uncropped,
    Cropped,
    Segmented,
}

/// Report row order and the order `compare` trains cells in.
pub const VARIANTS: [Variant; 3] = [Variant::Cropped, Variant::Uncropped, Variant::Segmented];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Uncropped => "uncropped",
            Variant::Cropped => "cropped",
            Variant::Segmented => "segmented",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "uncropped" => Some(Variant::Uncropped),
            "cropped" => Some(Variant::Cropped),
            "segmented" => Some(Variant::Segmented),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Square network input side. All values are divisible by 16 so four 2x2
/// poolings land on integer sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputSize {
    S32,
    S64,
    S128,
}

pub const INPUT_SIZES: [InputSize; 3] = [InputSize::S32, InputSize::S64, InputSize::S128];

impl InputSize {
    pub fn side(self) -> usize {
        match self {
            InputSize::S32 => 32,
            InputSize::S64 => 64,
            InputSize::S128 => 128,
        }
    }

    pub fn from_side(side: usize) -> Option<InputSize> {
        match side {
            32 => Some(InputSize::S32),
            64 => Some(InputSize::S64),
            128 => Some(InputSize::S128),
            _ => None,
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }
}

/// Tightest axis-aligned rectangle containing every true pixel.
pub fn mask_bbox(mask: &[bool], height: usize, width: usize) -> Result<Rect, PreprocessError> {
    debug_assert_eq!(mask.len(), height * width);
    let mut r = Rect {
        row_min: usize::MAX,
        row_max: 0,
        col_min: usize::MAX,
        col_max: 0,
    };
    let mut any = false;
    for i in 0..height {
        let row = &mask[i * width..(i + 1) * width];
        if let Some(first) = row.iter().position(|&b| b) {
            let last = width - 1 - row.iter().rev().position(|&b| b).unwrap();
            any = true;
            r.row_min = r.row_min.min(i);
            r.row_max = i;
            r.col_min = r.col_min.min(first);
            r.col_max = r.col_max.max(last);
        }
    }
    if any {
        Ok(r)
    } else {
        Err(PreprocessError::EmptyMask)
    }
}

/// Copies the inclusive rectangle out of a 2-D [H][W] tensor.
pub fn crop(image: &Tensor, r: Rect) -> Result<Tensor, PreprocessError> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if r.row_min > r.row_max || r.col_min > r.col_max || r.row_max >= h || r.col_max >= w {
        return Err(PreprocessError::OutOfBounds(r, h, w));
    }
    let mut out = Tensor::zeros(vec![r.height(), r.width()]);
    for (i, orow) in out.data_mut().chunks_exact_mut(r.width()).enumerate() {
        let src = (r.row_min + i) * w + r.col_min;
        orow.copy_from_slice(&image.data()[src..src + r.width()]);
    }
    Ok(out)
}

/// Zeroes every pixel whose mask bit is false.
pub fn apply_mask(image: &Tensor, mask: &[bool], mh: usize, mw: usize) -> Result<Tensor, PreprocessError> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if (h, w) != (mh, mw) {
        return Err(PreprocessError::DimensionMismatch(h, w, mh, mw));
    }
    Ok(Tensor::from_fn(vec![h, w], |i| {
        if mask[i] {
            image.data()[i]
        } else {
            0.0
        }
    }))
}

/// Bilinear resize to an n×n square with half-pixel-center mapping:
/// src = (dst + 0.5)·(src_len/dst_len) − 0.5, clamped to [0, src_len−1].
pub fn resize_bilinear(image: &Tensor, n: usize) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let src = image.data();
    let sy = h as f64 / n as f64;
    let sx = w as f64 / n as f64;

    let coords = |dst: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let c = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, c - lo as f64)
    };

    let mut out = Tensor::zeros(vec![n, n]);
    for y in 0..n {
        let (r0, r1, fy) = coords(y, sy, h);
        for x in 0..n {
            let (c0, c1, fx) = coords(x, sx, w);
            let v00 = src[r0 * w + c0];
            let v01 = src[r0 * w + c1];
            let v10 = src[r1 * w + c0];
            let v11 = src[r1 * w + c1];
            let top = v00 + fx * (v01 - v00);
            let bot = v10 + fx * (v11 - v10);
            let v = top + fy * (bot - top);
            // clamp to the neighbor hull so rounding can never leave the
            // input's value range
            let lo = v00.min(v01).min(v10).min(v11);
            let hi = v00.max(v01).max(v10).max(v11);
            out.data_mut()[y * n + x] = v.clamp(lo, hi);
        }
    }
    out
}

/// Min-max scaling to [0, 1]; a constant image maps to all zeros.
pub fn normalize(image: &Tensor) -> Tensor {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in image.data() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        return Tensor::zeros(image.shape().to_vec());
    }
    let span = hi - lo;
    Tensor::from_fn(image.shape().to_vec(), |i| (image.data()[i] - lo) / span)
}

fn image_tensor(record: &DatasetRecord) -> Tensor {
    Tensor::from_fn(vec![record.height, record.width], |i| record.image[i] as f64)
}

/// Full preparation of one record: variant pipeline, resize to the input
/// side, normalization, and wrapping as a 1-channel tensor.
pub fn preprocess(record: &DatasetRecord, variant: Variant, size: InputSize) -> Result<Tensor, PreprocessError> {
    let img = image_tensor(record);
    let n = size.side();
    let staged = match variant {
        Variant::Uncropped => img,
        Variant::Cropped => {
            let bbox = mask_bbox(&record.mask, record.height, record.width)?;
            crop(&img, bbox)?
        }
        Variant::Segmented => {
            let bbox = mask_bbox(&record.mask, record.height, record.width)?;
            let masked = apply_mask(&img, &record.mask, record.height, record.width)?;
            crop(&masked, bbox)?
        }
    };
    let scaled = normalize(&resize_bilinear(&staged, n));
    Tensor::new(vec![1, n, n], scaled.into_data()).map_err(|_| unreachable!())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use crate::rng::Rng;

    fn record_from(image: Vec<u16>, mask: Vec<bool>, h: usize, w: usize) -> DatasetRecord {
        DatasetRecord {
            record_id: "t".into(),
            pid: "p".into(),
            label: Label::Glioma,
            height: h,
            width: w,
            image,
            mask,
        }
    }

    #[test]
    fn bbox_single_pixel() {
        let mut mask = vec![false; 100];
        mask[5 * 10 + 7] = true;
        let r = mask_bbox(&mask, 10, 10).unwrap();
        assert_eq!(r, Rect { row_min: 5, row_max: 5, col_min: 7, col_max: 7 });
    }

    #[test]
    fn bbox_two_pixels() {
        let mut mask = vec![false; 8 * 8];
        mask[2 * 8 + 3] = true;
        mask[6 * 8 + 1] = true;
        let r = mask_bbox(&mask, 8, 8).unwrap();
        assert_eq!(r, Rect { row_min: 2, row_max: 6, col_min: 1, col_max: 3 });
    }

    #[test]
    fn bbox_empty_mask() {
        assert_eq!(mask_bbox(&[false; 9], 3, 3), Err(PreprocessError::EmptyMask));
    }

    #[test]
    fn bbox_is_minimal() {
        let mut rng = Rng::new(40);
        for _ in 0..50 {
            let (h, w) = (6 + rng.next_below(10) as usize, 6 + rng.next_below(10) as usize);
            let mut mask = vec![false; h * w];
            for _ in 0..1 + rng.next_below(12) {
                let i = rng.next_below((h * w) as u64) as usize;
                mask[i] = true;
            }
            let r = mask_bbox(&mask, h, w).unwrap();
            // every true pixel inside
            for i in 0..h {
                for j in 0..w {
                    if mask[i * w + j] {
                        assert!(i >= r.row_min && i <= r.row_max && j >= r.col_min && j <= r.col_max);
                    }
                }
            }
            // each border row/col holds at least one true pixel
            assert!((r.col_min..=r.col_max).any(|j| mask[r.row_min * w + j]));
            assert!((r.col_min..=r.col_max).any(|j| mask[r.row_max * w + j]));
            assert!((r.row_min..=r.row_max).any(|i| mask[i * w + r.col_min]));
            assert!((r.row_min..=r.row_max).any(|i| mask[i * w + r.col_max]));
        }
    }

    #[test]
    fn crop_cases() {
        let img = Tensor::new(vec![2, 2], vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        let full = crop(&img, Rect { row_min: 0, row_max: 1, col_min: 0, col_max: 1 }).unwrap();
        assert_eq!(full, img);
        let one = crop(&img, Rect { row_min: 0, row_max: 0, col_min: 0, col_max: 0 }).unwrap();
        assert_eq!(one.data(), [9.0]);
        let col = crop(&img, Rect { row_min: 0, row_max: 1, col_min: 1, col_max: 1 }).unwrap();
        assert_eq!(col.shape(), [2, 1]);
        assert_eq!(col.data(), [8.0, 6.0]);
        assert!(crop(&img, Rect { row_min: 0, row_max: 2, col_min: 0, col_max: 1 }).is_err());
    }

    #[test]
    fn apply_mask_cases() {
        let img = Tensor::new(vec![2, 2], vec![5.0; 4]).unwrap();
        let all = apply_mask(&img, &[true; 4], 2, 2).unwrap();
        assert_eq!(all, img);
        let none = apply_mask(&img, &[false; 4], 2, 2).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
        let checker = apply_mask(&img, &[true, false, false, true], 2, 2).unwrap();
        assert_eq!(checker.data(), [5.0, 0.0, 0.0, 5.0]);
        assert!(apply_mask(&img, &[true; 6], 2, 3).is_err());
    }

    #[test]
    fn resize_constant_is_exact() {
        let img = Tensor::new(vec![3, 5], vec![4.25; 15]).unwrap();
        for n in [1, 2, 7, 32] {
            let out = resize_bilinear(&img, n);
            assert!(out.data().iter().all(|&v| v == 4.25));
        }
    }

    #[test]
    fn resize_row_upsample_hand_values() {
        // width 2 -> 4 along x with half-pixel centers: [0, 0.25, 0.75, 1]
        let img = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 4);
        for y in 0..4 {
            let row: Vec<f64> = (0..4).map(|x| out.at(&[y, x])).collect();
            assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn resize_identity_size() {
        let mut rng = Rng::new(3);
        let img = Tensor::from_fn(vec![6, 6], |_| rng.range_f64(0.0, 65535.0));
        let out = resize_bilinear(&img, 6);
        assert!(out.max_abs_diff(&img) <= 1e-12);
    }

    #[test]
    fn resize_stays_within_input_range() {
        let mut rng = Rng::new(8);
        for _ in 0..25 {
            let (h, w) = (1 + rng.next_below(12) as usize, 1 + rng.next_below(12) as usize);
            let img = Tensor::from_fn(vec![h, w], |_| rng.range_f64(-100.0, 100.0));
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for n in [1usize, 3, 8, 17] {
                let out = resize_bilinear(&img, n);
                assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
            }
        }
    }

    #[test]
    fn normalize_cases() {
        let img = Tensor::new(vec![1, 3], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(normalize(&img).data(), [0.0, 0.5, 1.0]);
        let flat = Tensor::new(vec![1, 3], vec![7.0; 3]).unwrap();
        assert!(normalize(&flat).data().iter().all(|&v| v == 0.0));
        let mut rng = Rng::new(5);
        let rand = Tensor::from_fn(vec![4, 4], |_| rng.range_f64(3.0, 9.0));
        let out = normalize(&rand);
        let lo = out.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = out.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn preprocess_shape_and_range() {
        let mut rng = Rng::new(12);
        let image: Vec<u16> = (0..40 * 40).map(|_| rng.next_u64() as u16).collect();
        let mut mask = vec![false; 40 * 40];
        for i in 10..20 {
            for j in 15..30 {
                mask[i * 40 + j] = true;
            }
        }
        let rec = record_from(image, mask, 40, 40);
        for variant in [Variant::Uncropped, Variant::Cropped, Variant::Segmented] {
            let t = preprocess(&rec, variant, InputSize::S32).unwrap();
            assert_eq!(t.shape(), [1, 32, 32]);
            assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn preprocess_segmented_zeroes_outside_mask_pre_resize() {
        // mask excludes the first row of its own bbox column span
        let mut mask = vec![false; 36];
        for j in 1..5 {
            mask[2 * 6 + j] = true;
            mask[3 * 6 + j] = true;
        }
        mask[2 * 6 + 1] = false; // carve a corner out of the bbox
        let image: Vec<u16> = (1..=36).collect();
        let rec = record_from(image.clone(), mask.clone(), 6, 6);
        let img = image_tensor(&rec);
        let masked = apply_mask(&img, &rec.mask, 6, 6).unwrap();
        let bbox = mask_bbox(&rec.mask, 6, 6).unwrap();
        let staged = crop(&masked, bbox).unwrap();
        for i in 0..bbox.height() {
            for j in 0..bbox.width() {
                let src_masked = mask[(bbox.row_min + i) * 6 + bbox.col_min + j];
                if !src_masked {
                    assert_eq!(staged.at(&[i, j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn preprocess_matches_explicit_composition() {
        let mut rng = Rng::new(77);
        let (h, w) = (30, 40);
        let image: Vec<u16> = (0..h * w).map(|_| rng.next_u64() as u16).collect();
        let mut mask = vec![false; h * w];
        for i in 8..18 {
            for j in 10..30 {
                mask[i * w + j] = true;
            }
        }
        let rec = record_from(image, mask, h, w);
        let got = preprocess(&rec, Variant::Cropped, InputSize::S64).unwrap();
        let img = image_tensor(&rec);
        let bbox = mask_bbox(&rec.mask, h, w).unwrap();
        assert_eq!((bbox.height(), bbox.width()), (10, 20));
        let want = normalize(&resize_bilinear(&crop(&img, bbox).unwrap(), 64));
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn preprocess_empty_mask_only_burns_masked_variants() {
        let rec = record_from(vec![1; 16], vec![false; 16], 4, 4);
        assert!(preprocess(&rec, Variant::Uncropped, InputSize::S32).is_ok());
        assert_eq!(
            preprocess(&rec, Variant::Cropped, InputSize::S32),
            Err(PreprocessError::EmptyMask)
        );
        assert_eq!(
            preprocess(&rec, Variant::Segmented, InputSize::S32),
            Err(PreprocessError::EmptyMask)
        );
    }
}
