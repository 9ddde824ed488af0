//! Dense row-major matrices: `f64` compute buffers and `f32` feature frames.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major `f64` matrix used for logits, posteriors, and DP tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Matrix with every entry set to `fill`.
    pub fn filled(rows: usize, cols: usize, fill: f64) -> Self {
        Self { rows, cols, data: vec![fill; rows * cols] }
    }

    /// Wraps an existing buffer; `data.len()` must equal `rows * cols`.
    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer does not match shape");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Acoustic feature sequence: `frames` rows of `dim` channels.
///
/// Stored as `f32` so on-disk blobs round-trip bit-exactly; all model math
/// widens to `f64` at the point of use.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self { frames, dim, data: vec![0.0; frames * dim] }
    }

    /// Wraps an existing buffer; `data.len()` must equal `frames * dim`.
    pub fn from_data(frames: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), frames * dim, "buffer does not match shape");
        Self { frames, dim, data }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mat_indexing_is_row_major() {
        let m = Mat::from_data(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(m.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn feature_rows_are_contiguous() {
        let mut f = FeatureMatrix::zeros(3, 2);
        f.frame_mut(1).copy_from_slice(&[1.5, -2.5]);
        assert_eq!(f.data(), &[0.0, 0.0, 1.5, -2.5, 0.0, 0.0]);
        assert_eq!(f.frame(1), &[1.5, -2.5]);
    }

    #[test]
    #[should_panic(expected = "buffer does not match shape")]
    fn mismatched_buffer_panics() {
        let _ = Mat::from_data(2, 2, vec![0.0; 3]);
    }
}
