use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite carrier on which kernels are represented as matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TypeGrid {
    /// Native finite type space `{0, …, size−1}`.
    Finite { size: usize },
    /// Midpoint grid of `cells` equal cells on `[lo, hi]`.
    Interval { lo: f64, hi: f64, cells: usize },
}

impl TypeGrid {
    pub fn finite(size: usize) -> Self {
        TypeGrid::Finite { size }
    }

    pub fn interval(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(hi > lo) || cells == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad interval grid [{lo}, {hi}] with {cells} cells"
            )));
        }
        Ok(TypeGrid::Interval { lo, hi, cells })
    }

    /// `[0,1]` split into `2^k` cells.
    pub fn unit_dyadic(k: u32) -> Self {
        TypeGrid::Interval { lo: 0.0, hi: 1.0, cells: 1 << k }
    }

    pub fn len(&self) -> usize {
        match *self {
            TypeGrid::Finite { size } => size,
            TypeGrid::Interval { cells, .. } => cells,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell width of a discretized grid.
    pub fn resolution(&self) -> Option<f64> {
        match *self {
            TypeGrid::Finite { .. } => None,
            TypeGrid::Interval { lo, hi, cells } => Some((hi - lo) / cells as f64),
        }
    }

    /// Representative point of cell `i` (the index itself on finite grids).
    pub fn point(&self, i: usize) -> f64 {
        match *self {
            TypeGrid::Finite { .. } => i as f64,
            TypeGrid::Interval { lo, hi, cells } => lo + (i as f64 + 0.5) * (hi - lo) / cells as f64,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Types that can be attributed to a grid cell.
pub trait GridPoint: Sized {
    fn cell(&self, grid: &TypeGrid) -> Option<usize>;
    fn from_cell(grid: &TypeGrid, i: usize) -> Self;
}

impl GridPoint for usize {
    fn cell(&self, grid: &TypeGrid) -> Option<usize> {
        match *grid {
            TypeGrid::Finite { size } if *self < size => Some(*self),
            _ => None,
        }
    }

    fn from_cell(_grid: &TypeGrid, i: usize) -> Self {
        i
    }
}

impl GridPoint for () {
    fn cell(&self, grid: &TypeGrid) -> Option<usize> {
        match *grid {
            TypeGrid::Finite { size: 1 } => Some(0),
            _ => None,
        }
    }

    fn from_cell(_grid: &TypeGrid, _i: usize) -> Self {}
}

impl GridPoint for f64 {
    fn cell(&self, grid: &TypeGrid) -> Option<usize> {
        match *grid {
            TypeGrid::Interval { lo, hi, cells } => {
                if !(*self >= lo && *self <= hi) {
                    return None;
                }
                let i = ((*self - lo) / (hi - lo) * cells as f64).floor() as usize;
                Some(i.min(cells - 1))
            }
            TypeGrid::Finite { .. } => None,
        }
    }

    fn from_cell(grid: &TypeGrid, i: usize) -> Self {
        grid.point(i)
    }
}
