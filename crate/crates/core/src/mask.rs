//! Binary masks, column-major RLE, IoU and box geometry.
//!
//! Pixels are stored column-major: pixel `(row, col)` lives at bit
//! `col * height + row`. The RLE codec follows the same scan order and always
//! starts with a background run, so `[0, n]` encodes a mask whose first `n`
//! pixels are foreground.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {height}x{width}")]
    InvalidSize { height: u32, width: u32 },
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
    #[error("shape mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    ShapeMismatch {
        left_h: u32,
        left_w: u32,
        right_h: u32,
        right_w: u32,
    },
    #[error("mask has no foreground pixels")]
    EmptyMask,
}

/// A dense `height x width` binary pixel set.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: u32,
    width: u32,
    bits: Vec<u64>,
    area: u64,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("area", &self.area)
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(height: u32, width: u32) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::InvalidSize { height, width });
        }
        let n = height as usize * width as usize;
        Ok(Self {
            height,
            width,
            bits: vec![0; n.div_ceil(64)],
            area: 0,
        })
    }

    /// Builds a mask by evaluating `f(row, col)` on every pixel.
    pub fn from_fn(
        height: u32,
        width: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::empty(height, width)?;
        for col in 0..width {
            for row in 0..height {
                if f(row, col) {
                    mask.set(row, col, true);
                }
            }
        }
        Ok(mask)
    }

    /// Filled axis-aligned rectangle.
    pub fn from_box(height: u32, width: u32, b: &BoundingBox) -> Result<Self, MaskError> {
        if b.row_max >= height || b.col_max >= width {
            return Err(MaskError::ShapeMismatch {
                left_h: b.row_max + 1,
                left_w: b.col_max + 1,
                right_h: height,
                right_w: width,
            });
        }
        Self::from_fn(height, width, |r, c| b.contains(r, c))
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn pixel_count(&self) -> u64 {
        self.height as u64 * self.width as u64
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn index(&self, row: u32, col: u32) -> usize {
        assert!(
            row < self.height && col < self.width,
            "pixel ({row}, {col}) outside {}x{} mask",
            self.height,
            self.width
        );
        col as usize * self.height as usize + row as usize
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        let i = self.index(row, col);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        let i = self.index(row, col);
        let word = &mut self.bits[i / 64];
        let bit = 1u64 << (i % 64);
        let was = *word & bit != 0;
        if value && !was {
            *word |= bit;
            self.area += 1;
        } else if !value && was {
            *word &= !bit;
            self.area -= 1;
        }
    }

    /// Iterates foreground pixels as `(row, col)` in column-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height as usize;
        self.bits.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * 64 + b;
                Some(((i % h) as u32, (i / h) as u32))
            })
        })
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(MaskError::ShapeMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            })
        }
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_shape(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    /// Total order used to make matching independent of input order:
    /// area first, then raw bit pattern. Equal only for identical masks.
    pub fn canonical_cmp(&self, other: &BinaryMask) -> Ordering {
        (self.height, self.width, self.area)
            .cmp(&(other.height, other.width, other.area))
            .then_with(|| self.bits.cmp(&other.bits))
    }
}

/// Column-major run lengths, first run counts background pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleCounts {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

impl RleCounts {
    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        let [h, w] = self.size;
        if h == 0 || w == 0 {
            return Err(MaskError::InvalidSize {
                height: h,
                width: w,
            });
        }
        if let Some(pos) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::MalformedRle(format!(
                "zero-length run at position {}",
                pos + 1
            )));
        }
        let total = self
            .counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| MaskError::MalformedRle("run lengths overflow".into()))?;
        let expected = h as u64 * w as u64;
        if total != expected {
            return Err(MaskError::MalformedRle(format!(
                "runs sum to {total}, expected {h}x{w} = {expected}"
            )));
        }
        Ok(())
    }
}

pub fn decode_rle(rle: &RleCounts) -> Result<BinaryMask, MaskError> {
    rle.validate()?;
    let mut mask = BinaryMask::empty(rle.height(), rle.width())?;
    let mut pos = 0usize;
    for (k, &run) in rle.counts.iter().enumerate() {
        let run = run as usize;
        if k % 2 == 1 {
            for i in pos..pos + run {
                mask.bits[i / 64] |= 1 << (i % 64);
            }
            mask.area += run as u64;
        }
        pos += run;
    }
    Ok(mask)
}

pub fn encode_rle(mask: &BinaryMask) -> RleCounts {
    let n = mask.pixel_count() as usize;
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for i in 0..n {
        let v = mask.bits[i / 64] >> (i % 64) & 1 == 1;
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    RleCounts {
        size: [mask.height, mask.width],
        counts,
    }
}

/// IoU value plus whether the union was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iou {
    pub value: f64,
    /// Both inputs were empty; `value` is 0 by convention.
    pub degenerate: bool,
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<Iou, MaskError> {
    let inter = a.intersection_area(b)?;
    let union = a.area + b.area - inter;
    if union == 0 {
        return Ok(Iou {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Iou {
        value: inter as f64 / union as f64,
        degenerate: false,
    })
}

/// Inclusive pixel-index rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row_min: u32,
    pub col_min: u32,
    pub row_max: u32,
    pub col_max: u32,
}

impl BoundingBox {
    pub fn new(row_min: u32, col_min: u32, row_max: u32, col_max: u32) -> Self {
        assert!(row_min <= row_max && col_min <= col_max, "inverted box");
        Self {
            row_min,
            col_min,
            row_max,
            col_max,
        }
    }

    pub fn area(&self) -> u64 {
        (self.row_max - self.row_min + 1) as u64 * (self.col_max - self.col_min + 1) as u64
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let r0 = self.row_min.max(other.row_min);
        let c0 = self.col_min.max(other.col_min);
        let r1 = self.row_max.min(other.row_max);
        let c1 = self.col_max.min(other.col_max);
        (r0 <= r1 && c0 <= c1).then(|| BoundingBox::new(r0, c0, r1, c1))
    }
}

pub fn tight_box(mask: &BinaryMask) -> Result<BoundingBox, MaskError> {
    let mut pixels = mask.pixels();
    let (r, c) = pixels.next().ok_or(MaskError::EmptyMask)?;
    let mut b = BoundingBox::new(r, c, r, c);
    for (r, c) in pixels {
        b.row_min = b.row_min.min(r);
        b.row_max = b.row_max.max(r);
        // column-major iteration: columns never decrease
        b.col_max = c;
    }
    Ok(b)
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Drops near-duplicate masks, always keeping the larger one of a duplicate
/// pair. Returns kept indices in their original order.
///
/// Masks are visited by area descending (lower index first on ties); a mask is
/// kept only if its IoU with every already-kept mask is at most `threshold`.
pub fn dedup_masks(masks: &[BinaryMask], threshold: f64) -> Result<Vec<usize>, MaskError> {
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.check_shape(m)?;
        }
    }
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| masks[b].area.cmp(&masks[a].area).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut duplicate = false;
        for &k in &kept {
            if iou(&masks[i], &masks[k])?.value > threshold {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: u32, w: u32, r0: u32, c0: u32, r1: u32, c1: u32) -> BinaryMask {
        BinaryMask::from_box(h, w, &BoundingBox::new(r0, c0, r1, c1)).unwrap()
    }

    #[test]
    fn decode_second_column() {
        let m = decode_rle(&RleCounts {
            size: [2, 2],
            counts: vec![2, 2],
        })
        .unwrap();
        assert!(!m.get(0, 0) && !m.get(1, 0));
        assert!(m.get(0, 1) && m.get(1, 1));
        assert_eq!(m.area(), 2);
    }

    #[test]
    fn decode_leading_zero_is_full() {
        let m = decode_rle(&RleCounts {
            size: [2, 2],
            counts: vec![0, 4],
        })
        .unwrap();
        assert_eq!(m.area(), 4);
    }

    #[test]
    fn decode_single_background_run() {
        let m = decode_rle(&RleCounts {
            size: [3, 3],
            counts: vec![9],
        })
        .unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn decode_rejects_bad_runs() {
        let bad_sum = RleCounts {
            size: [2, 2],
            counts: vec![1, 2],
        };
        assert!(matches!(
            decode_rle(&bad_sum),
            Err(MaskError::MalformedRle(_))
        ));
        let interior_zero = RleCounts {
            size: [2, 2],
            counts: vec![1, 0, 3],
        };
        assert!(matches!(
            decode_rle(&interior_zero),
            Err(MaskError::MalformedRle(_))
        ));
        let zero_size = RleCounts {
            size: [0, 2],
            counts: vec![0],
        };
        assert!(matches!(
            decode_rle(&zero_size),
            Err(MaskError::InvalidSize { .. })
        ));
    }

    #[test]
    fn encode_canonical_forms() {
        assert_eq!(
            encode_rle(&BinaryMask::empty(3, 3).unwrap()).counts,
            vec![9]
        );
        let full = BinaryMask::from_fn(2, 2, |_, _| true).unwrap();
        assert_eq!(encode_rle(&full).counts, vec![0, 4]);
    }

    #[test]
    fn iou_examples() {
        let a = rect(20, 20, 0, 0, 9, 9);
        assert_eq!(iou(&a, &a).unwrap().value, 1.0);
        let b = rect(20, 20, 10, 10, 19, 19);
        assert_eq!(iou(&a, &b).unwrap().value, 0.0);
        let shifted = rect(20, 20, 0, 5, 9, 14);
        assert_eq!(iou(&a, &shifted).unwrap().value, 50.0 / 150.0);
    }

    #[test]
    fn iou_empty_pair_is_degenerate() {
        let e = BinaryMask::empty(4, 4).unwrap();
        let r = iou(&e, &e).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.degenerate);
    }

    #[test]
    fn iou_shape_mismatch() {
        let a = BinaryMask::empty(4, 4).unwrap();
        let b = BinaryMask::empty(4, 5).unwrap();
        assert!(matches!(iou(&a, &b), Err(MaskError::ShapeMismatch { .. })));
    }

    #[test]
    fn tight_box_examples() {
        let mut m = BinaryMask::empty(10, 10).unwrap();
        m.set(3, 7, true);
        assert_eq!(tight_box(&m).unwrap(), BoundingBox::new(3, 7, 3, 7));

        let full = BinaryMask::from_fn(6, 8, |_, _| true).unwrap();
        assert_eq!(tight_box(&full).unwrap(), BoundingBox::new(0, 0, 5, 7));

        let l_shape = BinaryMask::from_fn(12, 12, |r, c| {
            (r <= 4 && c <= 2) || ((3..=4).contains(&r) && c <= 9)
        })
        .unwrap();
        assert_eq!(tight_box(&l_shape).unwrap(), BoundingBox::new(0, 0, 4, 9));

        assert_eq!(
            tight_box(&BinaryMask::empty(3, 3).unwrap()),
            Err(MaskError::EmptyMask)
        );
    }

    #[test]
    fn box_iou_examples() {
        let a = BoundingBox::new(0, 0, 9, 9);
        assert_eq!(box_iou(&a, &a), 1.0);
        let inner = BoundingBox::new(0, 0, 9, 4);
        assert_eq!(box_iou(&a, &inner), 0.5);
        let b = BoundingBox::new(5, 0, 14, 9);
        assert_eq!(box_iou(&a, &b), 50.0 / 150.0);
    }

    #[test]
    fn dedup_examples() {
        let a = rect(20, 20, 0, 0, 9, 9);
        assert_eq!(dedup_masks(&[a.clone(), a.clone()], 0.5).unwrap(), vec![0]);

        // 50-pixel mask inside an 80-pixel mask: IoU 50/80 > 0.5
        let small = rect(20, 20, 0, 0, 4, 9);
        let big = rect(20, 20, 0, 0, 7, 9);
        assert_eq!(iou(&small, &big).unwrap().value, 0.625);
        assert_eq!(
            dedup_masks(&[small.clone(), big.clone()], 0.5).unwrap(),
            vec![1]
        );

        // IoU 40/100 = 0.4
        let x = rect(20, 20, 0, 0, 6, 9);
        let y = rect(20, 20, 3, 0, 9, 9);
        assert_eq!(iou(&x, &y).unwrap().value, 0.4);
        assert_eq!(dedup_masks(&[x, y], 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn canonical_order_distinguishes_masks() {
        let a = rect(8, 8, 0, 0, 1, 1);
        let b = rect(8, 8, 2, 2, 3, 3);
        assert_ne!(a.canonical_cmp(&b), Ordering::Equal);
        assert_eq!(a.canonical_cmp(&a.clone()), Ordering::Equal);
    }
}
