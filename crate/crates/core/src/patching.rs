//! Tiling an image into a grid of patches and putting it back together.
//!
//! Patch indices run row-major over the grid. That ordering is shared by
//! scoring, the codec, and the archive payload.

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatchError {
    #[error("image and patch dimensions must be at least 1")]
    ZeroDimension,
    #[error("expected a {expected_rows}x{expected_cols} matrix, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("expected {expected} patches, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("patch {index} is {rows}x{cols}, its slot is {expected_rows}x{expected_cols}")]
    ExtentMismatch {
        index: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
}

/// Placement of one patch on the unpadded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchExtent {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Grid of `patch_rows x patch_cols` tiles covering an image. Tiles on the
/// bottom row and right column may be cut short by the image border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_rows: usize,
    pub image_cols: usize,
    /// Patch height (`P_y`).
    pub patch_rows: usize,
    /// Patch width (`P_x`).
    pub patch_cols: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl PatchGrid {
    /// Lays out patches `p_x` wide and `p_y` tall.
    pub fn new(
        image_rows: usize,
        image_cols: usize,
        p_x: usize,
        p_y: usize,
    ) -> Result<Self, PatchError> {
        if image_rows == 0 || image_cols == 0 || p_x == 0 || p_y == 0 {
            return Err(PatchError::ZeroDimension);
        }
        Ok(Self {
            image_rows,
            image_cols,
            patch_rows: p_y,
            patch_cols: p_x,
            grid_rows: image_rows.div_ceil(p_y),
            grid_cols: image_cols.div_ceil(p_x),
        })
    }

    /// Total number of patches, `t`.
    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn padded_rows(&self) -> usize {
        self.grid_rows * self.patch_rows
    }

    pub fn padded_cols(&self) -> usize {
        self.grid_cols * self.patch_cols
    }

    /// Border-truncated extent of patch `index`.
    pub fn extent(&self, index: usize) -> PatchExtent {
        assert!(index < self.len(), "patch index {index} out of range");
        let (gr, gc) = (index / self.grid_cols, index % self.grid_cols);
        let row = gr * self.patch_rows;
        let col = gc * self.patch_cols;
        PatchExtent {
            row,
            col,
            rows: self.patch_rows.min(self.image_rows - row),
            cols: self.patch_cols.min(self.image_cols - col),
        }
    }

    pub fn extents(&self) -> impl Iterator<Item = PatchExtent> + '_ {
        (0..self.len()).map(|i| self.extent(i))
    }

    /// True if the image size is not a multiple of the patch size.
    pub fn has_truncation(&self) -> bool {
        self.image_rows % self.patch_rows != 0 || self.image_cols % self.patch_cols != 0
    }

    pub fn is_truncated(&self, index: usize) -> bool {
        let e = self.extent(index);
        e.rows != self.patch_rows || e.cols != self.patch_cols
    }
}

/// Convenience wrapper over [`PatchGrid::new`].
pub fn grid_layout(
    image_rows: usize,
    image_cols: usize,
    p_x: usize,
    p_y: usize,
) -> Result<PatchGrid, PatchError> {
    PatchGrid::new(image_rows, image_cols, p_x, p_y)
}

/// Grows `m` to the grid's padded size; new cells hold the mean of `m`.
pub fn pad_with_mean(m: &Matrix, grid: &PatchGrid) -> Result<Matrix, PatchError> {
    check_shape(m, grid.image_rows, grid.image_cols)?;
    let (pr, pc) = (grid.padded_rows(), grid.padded_cols());
    if (pr, pc) == m.shape() {
        return Ok(m.clone());
    }
    let mut out = Matrix::filled(pr, pc, m.mean());
    out.set_block(0, 0, m);
    Ok(out)
}

/// Cuts `m` into patches in canonical order.
///
/// With `truncate_borders` the input must have the image size and border
/// patches come out short; without it the input must already be padded and
/// every patch is full size.
pub fn split(
    m: &Matrix,
    grid: &PatchGrid,
    truncate_borders: bool,
) -> Result<Vec<Matrix>, PatchError> {
    if truncate_borders {
        check_shape(m, grid.image_rows, grid.image_cols)?;
        Ok(grid
            .extents()
            .map(|e| m.block(e.row, e.col, e.rows, e.cols))
            .collect())
    } else {
        check_shape(m, grid.padded_rows(), grid.padded_cols())?;
        Ok(grid
            .extents()
            .map(|e| m.block(e.row, e.col, grid.patch_rows, grid.patch_cols))
            .collect())
    }
}

/// Inverse of `split(.., true)`.
pub fn assemble(patches: &[Matrix], grid: &PatchGrid) -> Result<Matrix, PatchError> {
    if patches.len() != grid.len() {
        return Err(PatchError::CountMismatch {
            expected: grid.len(),
            actual: patches.len(),
        });
    }
    let mut out = Matrix::zeros(grid.image_rows, grid.image_cols);
    for (index, (p, e)) in patches.iter().zip(grid.extents()).enumerate() {
        if p.shape() != (e.rows, e.cols) {
            return Err(PatchError::ExtentMismatch {
                index,
                rows: p.rows(),
                cols: p.cols(),
                expected_rows: e.rows,
                expected_cols: e.cols,
            });
        }
        out.set_block(e.row, e.col, p);
    }
    Ok(out)
}

fn check_shape(m: &Matrix, rows: usize, cols: usize) -> Result<(), PatchError> {
    if m.shape() != (rows, cols) {
        return Err(PatchError::ShapeMismatch {
            expected_rows: rows,
            expected_cols: cols,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(())
}
