//! Grid geometry and cell addressing shared by every layer.
//!
//! Cells are addressed as `(i, j)` with `i` the horizontal (east) index and
//! `j` the vertical (north) index. Matrices are `n_h × n_v` and iterate in
//! row-major order, i.e. `i` outer, `j` inner.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize) -> Self {
        Cell { i, j }
    }

    pub fn index(self) -> (usize, usize) {
        (self.i, self.j)
    }

    /// Chebyshev (king-move) distance in cells.
    pub fn chebyshev(self, other: Cell) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }

    /// Applies an offset, returning `None` if the result falls off the grid.
    pub fn offset(self, di: isize, dj: isize, n_h: usize, n_v: usize) -> Option<Cell> {
        let i = self.i as isize + di;
        let j = self.j as isize + dj;
        (i >= 0 && j >= 0 && (i as usize) < n_h && (j as usize) < n_v)
            .then(|| Cell::new(i as usize, j as usize))
    }
}

impl From<(usize, usize)> for Cell {
    fn from((i, j): (usize, usize)) -> Self {
        Cell::new(i, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub n_h: usize,
    pub n_v: usize,
    pub cell_len_x: f64,
    pub cell_len_y: f64,
}

impl GridGeometry {
    pub fn new(n_h: usize, n_v: usize, cell_len_x: f64, cell_len_y: f64) -> Result<Self> {
        if n_h == 0 || n_v == 0 {
            return Err(Error::InvalidGrid(format!("dimensions {n_h}x{n_v} must be positive")));
        }
        if !(cell_len_x > 0.0 && cell_len_y > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "cell lengths {cell_len_x}x{cell_len_y} must be positive"
            )));
        }
        Ok(GridGeometry {
            n_h,
            n_v,
            cell_len_x,
            cell_len_y,
        })
    }

    pub fn square(n_h: usize, n_v: usize, cell_len: f64) -> Result<Self> {
        Self::new(n_h, n_v, cell_len, cell_len)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_h, self.n_v)
    }

    pub fn len(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_len_x * self.cell_len_y
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.i < self.n_h && cell.j < self.n_v
    }

    /// Centre of a cell in metres.
    pub fn centre(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.i as f64 + 0.5) * self.cell_len_x,
            (cell.j as f64 + 0.5) * self.cell_len_y,
        )
    }

    /// Matrix of all cell centres.
    pub fn cell_centres(&self) -> Array2<(f64, f64)> {
        Array2::from_shape_fn(self.shape(), |(i, j)| self.centre(Cell::new(i, j)))
    }

    /// Squared Euclidean distance between cell centres in square metres.
    pub fn squared_distance(&self, a: Cell, b: Cell) -> f64 {
        let dx = (a.i as f64 - b.i as f64) * self.cell_len_x;
        let dy = (a.j as f64 - b.j as f64) * self.cell_len_y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        self.squared_distance(a, b).sqrt()
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_h).flat_map(move |i| (0..self.n_v).map(move |j| Cell::new(i, j)))
    }

    /// Geometry of the grid after block-aggregating by `factor`.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("factor", "coarsening factor must be positive"));
        }
        Self::new(
            self.n_h.div_ceil(factor),
            self.n_v.div_ceil(factor),
            self.cell_len_x * factor as f64,
            self.cell_len_y * factor as f64,
        )
    }

    pub fn filled(&self, value: f64) -> Matrix {
        Matrix::from_elem(self.shape(), value)
    }

    pub fn check_shape<T>(&self, m: &Array2<T>) -> Result<()> {
        if m.dim() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: m.dim(),
            });
        }
        Ok(())
    }
}

/// Mapping between a fine grid and its coarsened counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coarsening {
    pub fine: GridGeometry,
    pub coarse: GridGeometry,
    pub factor: usize,
}

impl Coarsening {
    pub fn new(fine: GridGeometry, factor: usize) -> Result<Self> {
        Ok(Coarsening {
            fine,
            coarse: fine.coarsened(factor)?,
            factor,
        })
    }

    pub fn coarse_of(&self, fine: Cell) -> Cell {
        Cell::new(fine.i / self.factor, fine.j / self.factor)
    }

    /// Fine-cell index ranges covered by a coarse cell, truncated at the border.
    pub fn block(&self, coarse: Cell) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let i0 = coarse.i * self.factor;
        let j0 = coarse.j * self.factor;
        (
            i0..(i0 + self.factor).min(self.fine.n_h),
            j0..(j0 + self.factor).min(self.fine.n_v),
        )
    }

    pub fn fine_cells(&self, coarse: Cell) -> impl Iterator<Item = Cell> {
        let (ri, rj) = self.block(coarse);
        ri.flat_map(move |i| rj.clone().map(move |j| Cell::new(i, j)))
    }
}
