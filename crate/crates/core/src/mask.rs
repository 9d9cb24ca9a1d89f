//! Run-length encoded binary masks.
//!
//! Runs are counted in row-major order and alternate background/foreground,
//! starting with background. A mask whose first pixel is foreground starts
//! with a zero-length run; that is the only place a zero run may appear.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct PixelMask {
    height: u32,
    width: u32,
    runs: Vec<u32>,
}

/// Unvalidated wire form of a [`PixelMask`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMask {
    pub height: u32,
    pub width: u32,
    pub runs: Vec<u32>,
}

impl TryFrom<RawMask> for PixelMask {
    type Error = Error;

    fn try_from(raw: RawMask) -> Result<Self> {
        PixelMask::from_runs(raw.height, raw.width, raw.runs)
    }
}

impl fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PixelMask({}x{}, runs={:?})", self.height, self.width, self.runs)
    }
}

fn check_dims(height: u32, width: u32) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::MalformedMask(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

impl PixelMask {
    /// Validates and wraps an existing run list.
    pub fn from_runs(height: u32, width: u32, runs: Vec<u32>) -> Result<Self> {
        check_dims(height, width)?;
        if runs.is_empty() {
            return Err(Error::MalformedMask("empty run list".into()));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::MalformedMask(format!(
                "zero-length run at index {} (only the leading run may be zero)",
                pos + 1
            )));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = height as u64 * width as u64;
        if total != expected {
            return Err(Error::MalformedMask(format!(
                "runs sum to {total}, expected {height}x{width}={expected}"
            )));
        }
        Ok(PixelMask { height, width, runs })
    }

    /// Encodes a row-major grid; any nonzero cell is foreground.
    pub fn encode(height: u32, width: u32, bits: &[u8]) -> Result<Self> {
        check_dims(height, width)?;
        let n = height as usize * width as usize;
        if bits.len() != n {
            return Err(Error::MalformedMask(format!(
                "grid has {} cells, expected {height}x{width}={n}",
                bits.len()
            )));
        }
        let mut builder = RunBuilder::default();
        for &b in bits {
            builder.push(1, b != 0);
        }
        Ok(builder.finish(height, width))
    }

    /// Decodes to a row-major grid of 0/1 cells.
    pub fn decode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        let mut value = 0u8;
        for &run in &self.runs {
            out.extend(std::iter::repeat_n(value, run as usize));
            value ^= 1;
        }
        out
    }

    pub fn empty(height: u32, width: u32) -> Result<Self> {
        check_dims(height, width)?;
        Ok(PixelMask {
            height,
            width,
            runs: vec![height * width],
        })
    }

    /// Axis-aligned rectangle `[top, top+rows) x [left, left+cols)`, clipped to the grid.
    pub fn rect(height: u32, width: u32, top: u32, left: u32, rows: u32, cols: u32) -> Result<Self> {
        check_dims(height, width)?;
        let bottom = top.saturating_add(rows).min(height);
        let right = left.saturating_add(cols).min(width);
        let mut builder = RunBuilder::default();
        for y in 0..height {
            if y >= top && y < bottom && left < right {
                builder.push(left, false);
                builder.push(right - left, true);
                builder.push(width - right, false);
            } else {
                builder.push(width, false);
            }
        }
        Ok(builder.finish(height, width))
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.height as usize * self.width as usize
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    pub fn same_shape(&self, other: &PixelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    fn ensure_shape(&self, other: &PixelMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            })
        }
    }

    pub fn intersection(&self, other: &PixelMask) -> Result<PixelMask> {
        self.combine(other, |a, b| a && b)
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask> {
        self.combine(other, |a, b| a || b)
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &PixelMask) -> Result<PixelMask> {
        self.combine(other, |a, b| a && !b)
    }

    pub fn intersection_area(&self, other: &PixelMask) -> Result<u64> {
        self.ensure_shape(other)?;
        let mut area = 0u64;
        merge_runs(&self.runs, &other.runs, |len, a, b| {
            if a && b {
                area += len as u64;
            }
        });
        Ok(area)
    }

    pub fn union_area(&self, other: &PixelMask) -> Result<u64> {
        self.ensure_shape(other)?;
        let mut area = 0u64;
        merge_runs(&self.runs, &other.runs, |len, a, b| {
            if a || b {
                area += len as u64;
            }
        });
        Ok(area)
    }

    fn combine(&self, other: &PixelMask, op: impl Fn(bool, bool) -> bool) -> Result<PixelMask> {
        self.ensure_shape(other)?;
        let mut builder = RunBuilder::default();
        merge_runs(&self.runs, &other.runs, |len, a, b| builder.push(len, op(a, b)));
        Ok(builder.finish(self.height, self.width))
    }
}

/// Walks two run lists in lockstep, calling `f(len, a_bit, b_bit)` per aligned segment.
fn merge_runs(a: &[u32], b: &[u32], mut f: impl FnMut(u32, bool, bool)) {
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut rem_a, mut rem_b) = (0u32, 0u32);
    let (mut bit_a, mut bit_b) = (true, true);
    loop {
        while rem_a == 0 {
            if ia == a.len() {
                return;
            }
            rem_a = a[ia];
            bit_a = ia % 2 == 1;
            ia += 1;
        }
        while rem_b == 0 {
            if ib == b.len() {
                return;
            }
            rem_b = b[ib];
            bit_b = ib % 2 == 1;
            ib += 1;
        }
        let step = rem_a.min(rem_b);
        f(step, bit_a, bit_b);
        rem_a -= step;
        rem_b -= step;
    }
}

/// Accumulates (length, bit) segments into canonical runs.
#[derive(Default)]
pub(crate) struct RunBuilder {
    runs: Vec<u32>,
}

impl RunBuilder {
    pub(crate) fn push(&mut self, len: u32, bit: bool) {
        if len == 0 {
            return;
        }
        match self.runs.len() {
            0 if bit => self.runs.extend([0, len]),
            0 => self.runs.push(len),
            n if ((n - 1) % 2 == 1) == bit => self.runs[n - 1] += len,
            _ => self.runs.push(len),
        }
    }

    pub(crate) fn finish(mut self, height: u32, width: u32) -> PixelMask {
        if self.runs.is_empty() {
            self.runs.push(0);
        }
        debug_assert_eq!(
            self.runs.iter().map(|&r| r as u64).sum::<u64>(),
            height as u64 * width as u64
        );
        PixelMask {
            height,
            width,
            runs: self.runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_fixtures() {
        assert_eq!(PixelMask::encode(2, 2, &[0, 0, 0, 0]).unwrap().runs(), &[4]);
        assert_eq!(PixelMask::encode(2, 2, &[1, 1, 1, 1]).unwrap().runs(), &[0, 4]);
        assert_eq!(PixelMask::encode(2, 2, &[1, 0, 0, 1]).unwrap().runs(), &[0, 1, 2, 1]);
    }

    #[test]
    fn decode_fixtures() {
        assert_eq!(PixelMask::from_runs(2, 2, vec![4]).unwrap().decode(), vec![0; 4]);
        assert_eq!(PixelMask::from_runs(2, 2, vec![0, 4]).unwrap().decode(), vec![1; 4]);
        assert_eq!(
            PixelMask::from_runs(2, 2, vec![0, 1, 2, 1]).unwrap().decode(),
            vec![1, 0, 0, 1]
        );
    }

    #[test]
    fn rejects_bad_sum() {
        let err = PixelMask::from_runs(2, 2, vec![1, 2]).unwrap_err();
        assert!(matches!(err, Error::MalformedMask(_)), "{err}");
        assert!(PixelMask::from_runs(2, 2, vec![1, 0, 3]).is_err());
        assert!(PixelMask::from_runs(2, 2, vec![]).is_err());
        assert!(PixelMask::from_runs(0, 2, vec![0]).is_err());
    }

    #[test]
    fn overlapping_blocks() {
        // 2x2 blocks at (0,0) and (0,1) in a 4x4 grid share a 2x1 column
        let a = PixelMask::rect(4, 4, 0, 0, 2, 2).unwrap();
        let b = PixelMask::rect(4, 4, 0, 1, 2, 2).unwrap();
        assert_eq!(a.intersection(&b).unwrap().area(), 2);
        assert_eq!(a.union(&b).unwrap().area(), 6);
        assert_eq!(a.intersection_area(&b).unwrap(), 2);
        assert_eq!(a.union_area(&b).unwrap(), 6);
    }

    #[test]
    fn idempotent_and_disjoint() {
        let a = PixelMask::rect(5, 5, 1, 1, 2, 3).unwrap();
        assert_eq!(a.intersection(&a).unwrap(), a);
        assert_eq!(a.union(&a).unwrap(), a);
        let b = PixelMask::rect(5, 5, 4, 0, 1, 5).unwrap();
        assert_eq!(a.intersection_area(&b).unwrap(), 0);
        assert_eq!(a.union(&b).unwrap().area(), a.area() + b.area());
    }

    #[test]
    fn dimension_mismatch() {
        let a = PixelMask::empty(2, 2).unwrap();
        let b = PixelMask::empty(2, 3).unwrap();
        assert!(matches!(a.union(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.intersection_area(&b).is_err());
    }

    #[test]
    fn rect_matches_grid() {
        let m = PixelMask::rect(3, 4, 1, 2, 5, 5).unwrap();
        assert_eq!(m.decode(), vec![0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]);
        assert_eq!(
            PixelMask::rect(3, 3, 0, 0, 0, 3).unwrap(),
            PixelMask::empty(3, 3).unwrap()
        );
    }

    #[test]
    fn deserialize_validates() {
        let ok: PixelMask = serde_json::from_str(r#"{"height":1,"width":2,"runs":[1,1]}"#).unwrap();
        assert_eq!(ok.area(), 1);
        assert!(serde_json::from_str::<PixelMask>(r#"{"height":1,"width":2,"runs":[3]}"#).is_err());
    }
}
