//! Uniform 1D meshes, Lagrange element spaces, quadrature, cell-wise
//! assembly and a banded direct solver.

pub mod assembly;
pub mod banded;
pub mod mesh;
pub mod norms;
pub mod space;

pub use assembly::{assemble, assemble_into, CellKernel};
pub use banded::{lu_solve, BandedLu, BandedMatrix};
pub use mesh::{build_mesh, Mesh1D};
pub use norms::error_norms;
pub use space::{BasisTable, CoupledDofMap, DofMap, ElementFamily, FieldVector};
