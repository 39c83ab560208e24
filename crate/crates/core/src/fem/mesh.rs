use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform mesh of the interval [0, length].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    length: f64,
    num_cells: usize,
    vertices: Vec<f64>,
}

impl Mesh1D {
    pub fn new(length: f64, num_cells: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mesh length must be positive, got {length}"
            )));
        }
        if num_cells == 0 {
            return Err(Error::InvalidArgument(
                "mesh needs at least one cell".into(),
            ));
        }
        let h = length / num_cells as f64;
        let vertices = (0..=num_cells)
            .map(|i| if i == num_cells { length } else { i as f64 * h })
            .collect();
        Ok(Self {
            length,
            num_cells,
            vertices,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_vertices(&self) -> usize {
        self.num_cells + 1
    }

    pub fn h(&self) -> f64 {
        self.length / self.num_cells as f64
    }

    pub fn vertices(&self) -> &[f64] {
        &self.vertices
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        (self.vertices[cell], self.vertices[cell + 1])
    }

    /// Cell containing x, with the right end assigned to the last cell.
    pub fn locate(&self, x: f64) -> usize {
        let c = (x / self.h()).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(self.num_cells - 1)
        }
    }
}

pub fn build_mesh(length: f64, num_cells: usize) -> Result<Mesh1D> {
    Mesh1D::new(length, num_cells)
}
