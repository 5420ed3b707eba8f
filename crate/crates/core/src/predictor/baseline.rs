//! Causal window over decoded pixels and the two linear baselines.

use std::ops::Range;

use crate::geometry::RangeImage;

/// The rectangle of pixels a block may read, in frame coordinates, holding
/// whatever has been decoded so far. Predictors only look at pixels that
/// precede the target in raster order, so the window can be filled in place
/// while decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeWindow {
    row0: usize,
    col0: usize,
    rows: usize,
    cols: usize,
    ranges: Vec<f64>,
    valid: Vec<bool>,
}

impl DecodeWindow {
    /// A window whose pixels are all invalid.
    pub fn new(row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        DecodeWindow {
            row0,
            col0,
            rows,
            cols,
            ranges: vec![0.0; rows * cols],
            valid: vec![false; rows * cols],
        }
    }

    /// Copies a rectangle out of `img`.
    pub fn from_image(
        img: &RangeImage,
        row0: usize,
        col0: usize,
        rows: usize,
        cols: usize,
    ) -> Self {
        let mut win = DecodeWindow::new(row0, col0, rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if let Some(v) = img.get(row0 + r, col0 + c) {
                    win.ranges[r * cols + c] = v;
                    win.valid[r * cols + c] = true;
                }
            }
        }
        win
    }

    /// The whole image as one window.
    pub fn whole(img: &RangeImage) -> Self {
        Self::from_image(img, 0, 0, img.height(), img.width())
    }

    pub fn row_range(&self) -> Range<usize> {
        self.row0..self.row0 + self.rows
    }

    pub fn col_range(&self) -> Range<usize> {
        self.col0..self.col0 + self.cols
    }

    #[inline]
    fn local(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.row_range().contains(&i) && self.col_range().contains(&j));
        (i - self.row0) * self.cols + (j - self.col0)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.local(i, j);
        self.valid[k].then(|| self.ranges[k])
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[self.local(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, range: f64) {
        let k = self.local(i, j);
        self.ranges[k] = range;
        self.valid[k] = true;
    }

    pub fn set_valid(&mut self, i: usize, j: usize, valid: bool) {
        let k = self.local(i, j);
        self.valid[k] = valid;
        if !valid {
            self.ranges[k] = 0.0;
        }
    }

    /// First valid pixel at or before `(i, j)` in raster order: leftward
    /// through row `i`, then each earlier row from its right edge.
    pub fn at_or_before(&self, i: usize, j: usize) -> Option<f64> {
        let mut col_end = j + 1;
        for r in (self.row0..=i).rev() {
            for c in (self.col0..col_end).rev() {
                if let Some(v) = self.get(r, c) {
                    return Some(v);
                }
            }
            col_end = self.col0 + self.cols;
        }
        None
    }

    /// First valid pixel strictly before `(i, j)` in raster order.
    pub fn before(&self, i: usize, j: usize) -> Option<f64> {
        if j > self.col0 {
            self.at_or_before(i, j - 1)
        } else if i > self.row0 {
            self.at_or_before(i - 1, self.col0 + self.cols - 1)
        } else {
            None
        }
    }

    /// First valid pixel above `(i, j)` in column `j`.
    pub fn above(&self, i: usize, j: usize) -> Option<f64> {
        (self.row0..i).rev().find_map(|r| self.get(r, j))
    }
}

/// Nearest valid range to the left, continuing backward through earlier rows;
/// 0 when nothing has been decoded yet.
pub fn predict_previous_valid(win: &DecodeWindow, i: usize, j: usize) -> f64 {
    win.before(i, j).unwrap_or(0.0)
}

/// Plane prediction `left + up − up_left`, each term resolved to its first
/// valid predecessor and the result clamped to `[0, max_range]`.
///
/// The first column of the window predicts from the pixel above and the first
/// row from the pixel to the left.
pub fn predict_linear(win: &DecodeWindow, i: usize, j: usize, max_range: f64) -> f64 {
    let first_row = i == win.row0;
    let first_col = j == win.col0;
    let pred = match (first_row, first_col) {
        (true, _) => predict_previous_valid(win, i, j),
        (false, true) => win
            .at_or_before(i - 1, j)
            .unwrap_or_else(|| predict_previous_valid(win, i, j)),
        (false, false) => {
            let left = win.at_or_before(i, j - 1);
            let up = win.at_or_before(i - 1, j);
            let up_left = win.at_or_before(i - 1, j - 1);
            match (left, up, up_left) {
                (Some(l), Some(u), Some(ul)) => l + u - ul,
                _ => predict_previous_valid(win, i, j),
            }
        }
    };
    pred.clamp(0.0, max_range)
}
