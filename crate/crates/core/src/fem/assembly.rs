use super::banded::BandedMatrix;
use super::space::CoupledDofMap;
use crate::error::{Error, Result};

/// Cell-local residual and Jacobian evaluator. Local vectors are ordered
/// field by field, each field contributing its local basis functions in order.
pub trait CellKernel {
    fn cell(&self, cell: usize, local_u: &[f64], res: &mut [f64], jac: Option<&mut [f64]>);
}

/// Gathers the global indices of all local dofs of a cell.
pub fn cell_indices(dofs: &CoupledDofMap, cell: usize, out: &mut Vec<usize>) {
    out.clear();
    for f in 0..dofs.num_fields() {
        out.extend_from_slice(dofs.cell_dofs(f, cell));
    }
}

pub fn new_system_matrix(dofs: &CoupledDofMap) -> BandedMatrix {
    let b = dofs.bandwidth();
    BandedMatrix::new(dofs.num_dofs(), b, b)
}

/// Accumulates cell contributions into `res` and, optionally, `jac`.
pub fn assemble_into(
    dofs: &CoupledDofMap,
    kernel: &impl CellKernel,
    u: &[f64],
    res: &mut [f64],
    mut jac: Option<&mut BandedMatrix>,
) -> Result<()> {
    res.iter_mut().for_each(|r| *r = 0.0);
    if let Some(j) = jac.as_deref_mut() {
        j.clear();
    }
    let nloc: usize = dofs.families().iter().map(|f| f.local_dofs()).sum();
    let mut idx = Vec::with_capacity(nloc);
    let mut lu = vec![0.0; nloc];
    let mut lr = vec![0.0; nloc];
    let mut lj = vec![0.0; nloc * nloc];
    for c in 0..dofs.num_cells() {
        cell_indices(dofs, c, &mut idx);
        for (l, &g) in lu.iter_mut().zip(&idx) {
            *l = u[g];
        }
        lr.iter_mut().for_each(|v| *v = 0.0);
        let want_jac = jac.is_some();
        if want_jac {
            lj.iter_mut().for_each(|v| *v = 0.0);
        }
        kernel.cell(c, &lu, &mut lr, if want_jac { Some(&mut lj) } else { None });
        if lr.iter().any(|v| !v.is_finite()) {
            return Err(Error::Assembly { cell: c });
        }
        for (i, &g) in idx.iter().enumerate() {
            res[g] += lr[i];
        }
        if let Some(j) = jac.as_deref_mut() {
            if lj.iter().any(|v| !v.is_finite()) {
                return Err(Error::Assembly { cell: c });
            }
            for (a, &gi) in idx.iter().enumerate() {
                let row = &lj[a * nloc..(a + 1) * nloc];
                for (b, &gj) in idx.iter().enumerate() {
                    if row[b] != 0.0 {
                        j.add(gi, gj, row[b]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Assembles the global Jacobian and residual at `u`.
pub fn assemble(
    dofs: &CoupledDofMap,
    kernel: &impl CellKernel,
    u: &[f64],
) -> Result<(BandedMatrix, Vec<f64>)> {
    let mut a = new_system_matrix(dofs);
    let mut r = vec![0.0; dofs.num_dofs()];
    assemble_into(dofs, kernel, u, &mut r, Some(&mut a))?;
    Ok((a, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::space::{BasisTable, NQ, QUAD_WEIGHTS};
    use crate::fem::{ElementFamily, Mesh1D};

    struct Mass {
        table: BasisTable,
        h: f64,
    }

    impl CellKernel for Mass {
        fn cell(&self, _c: usize, u: &[f64], res: &mut [f64], jac: Option<&mut [f64]>) {
            let n = self.table.nloc;
            let mut m = vec![0.0; n * n];
            for q in 0..NQ {
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] +=
                            QUAD_WEIGHTS[q] * self.h * self.table.val[q][i] * self.table.val[q][j];
                    }
                }
            }
            for i in 0..n {
                res[i] = (0..n).map(|j| m[i * n + j] * u[j]).sum();
            }
            if let Some(j) = jac {
                j.copy_from_slice(&m);
            }
        }
    }

    struct Stiffness {
        table: BasisTable,
        h: f64,
    }

    impl CellKernel for Stiffness {
        fn cell(&self, _c: usize, u: &[f64], res: &mut [f64], jac: Option<&mut [f64]>) {
            let n = self.table.nloc;
            let mut k = vec![0.0; n * n];
            for q in 0..NQ {
                for i in 0..n {
                    for j in 0..n {
                        k[i * n + j] += QUAD_WEIGHTS[q]
                            * self.h
                            * self.table.grad[q][i]
                            * self.table.grad[q][j];
                    }
                }
            }
            for i in 0..n {
                res[i] = (0..n).map(|j| k[i * n + j] * u[j]).sum();
            }
            if let Some(j) = jac {
                j.copy_from_slice(&k);
            }
        }
    }

    struct Poison;

    impl CellKernel for Poison {
        fn cell(&self, c: usize, _u: &[f64], res: &mut [f64], _jac: Option<&mut [f64]>) {
            if c == 2 {
                res[0] = f64::NAN;
            }
        }
    }

    #[test]
    fn p1_mass_single_cell() {
        let mesh = Mesh1D::new(1.0, 1).unwrap();
        let dofs = CoupledDofMap::new(&mesh, &[ElementFamily::P1c]);
        let k = Mass {
            table: BasisTable::new(ElementFamily::P1c, 1.0),
            h: 1.0,
        };
        let (a, _) = assemble(&dofs, &k, &[0.0, 0.0]).unwrap();
        assert!((a.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        assert!((a.get(1, 0) - 1.0 / 6.0).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn p1_mass_total_equals_length() {
        let mesh = Mesh1D::new(2.5, 17).unwrap();
        let dofs = CoupledDofMap::new(&mesh, &[ElementFamily::P1c]);
        let k = Mass {
            table: BasisTable::new(ElementFamily::P1c, mesh.h()),
            h: mesh.h(),
        };
        let (a, _) = assemble(&dofs, &k, &vec![0.0; 18]).unwrap();
        let d = a.to_dense();
        let total: f64 = d.iter().flatten().sum();
        assert!((total - 2.5).abs() < 1e-12 * 2.5);
        let row0: f64 = d[0].iter().sum();
        assert!((row0 - mesh.h() / 2.0).abs() < 1e-14);
        let row5: f64 = d[5].iter().sum();
        assert!((row5 - mesh.h()).abs() < 1e-14);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let mesh = Mesh1D::new(1.0, 2).unwrap();
        let dofs = CoupledDofMap::new(&mesh, &[ElementFamily::P1c]);
        let k = Stiffness {
            table: BasisTable::new(ElementFamily::P1c, mesh.h()),
            h: mesh.h(),
        };
        let (a, _) = assemble(&dofs, &k, &[0.0; 3]).unwrap();
        for row in a.to_dense() {
            assert!(row.iter().sum::<f64>().abs() < 1e-13);
        }
    }

    #[test]
    fn nan_names_cell() {
        let mesh = Mesh1D::new(1.0, 4).unwrap();
        let dofs = CoupledDofMap::new(&mesh, &[ElementFamily::P1c]);
        match assemble(&dofs, &Poison, &[0.0; 5]) {
            Err(Error::Assembly { cell }) => assert_eq!(cell, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
