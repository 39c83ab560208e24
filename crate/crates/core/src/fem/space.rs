use super::mesh::Mesh1D;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Four-point Gauss-Legendre rule mapped to the reference cell [0, 1].
pub const QUAD_POINTS: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_87,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
pub const QUAD_WEIGHTS: [f64; 4] = [
    0.173_927_422_568_726_93,
    0.326_072_577_431_273_07,
    0.326_072_577_431_273_07,
    0.173_927_422_568_726_93,
];
pub const NQ: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFamily {
    P0,
    P1c,
    P1dc,
    P2c,
}

impl ElementFamily {
    pub fn local_dofs(self) -> usize {
        match self {
            ElementFamily::P0 => 1,
            ElementFamily::P1c | ElementFamily::P1dc => 2,
            ElementFamily::P2c => 3,
        }
    }

    pub fn degree(self) -> usize {
        match self {
            ElementFamily::P0 => 0,
            ElementFamily::P1c | ElementFamily::P1dc => 1,
            ElementFamily::P2c => 2,
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, ElementFamily::P1c | ElementFamily::P2c)
    }

    /// Dofs owned by each mesh vertex.
    pub fn vertex_dofs(self) -> usize {
        match self {
            ElementFamily::P1c | ElementFamily::P2c => 1,
            _ => 0,
        }
    }

    /// Dofs owned by each cell interior.
    pub fn interior_dofs(self) -> usize {
        match self {
            ElementFamily::P0 | ElementFamily::P2c => 1,
            ElementFamily::P1dc => 2,
            ElementFamily::P1c => 0,
        }
    }

    /// Reference coordinates of the local dofs.
    pub fn local_coords(self) -> &'static [f64] {
        match self {
            ElementFamily::P0 => &[0.5],
            ElementFamily::P1c | ElementFamily::P1dc => &[0.0, 1.0],
            ElementFamily::P2c => &[0.0, 0.5, 1.0],
        }
    }

    /// Basis values and reference derivatives at xi.
    pub fn eval(self, xi: f64) -> ([f64; 3], [f64; 3]) {
        match self {
            ElementFamily::P0 => ([1.0, 0.0, 0.0], [0.0; 3]),
            ElementFamily::P1c | ElementFamily::P1dc => {
                ([1.0 - xi, xi, 0.0], [-1.0, 1.0, 0.0])
            }
            ElementFamily::P2c => (
                [
                    (1.0 - xi) * (1.0 - 2.0 * xi),
                    4.0 * xi * (1.0 - xi),
                    xi * (2.0 * xi - 1.0),
                ],
                [4.0 * xi - 3.0, 4.0 - 8.0 * xi, 4.0 * xi - 1.0],
            ),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p0" => Some(ElementFamily::P0),
            "p1" | "p1c" => Some(ElementFamily::P1c),
            "p1dc" | "dp1" => Some(ElementFamily::P1dc),
            "p2" | "p2c" => Some(ElementFamily::P2c),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementFamily::P0 => "P0",
            ElementFamily::P1c => "P1c",
            ElementFamily::P1dc => "P1dc",
            ElementFamily::P2c => "P2c",
        }
    }
}

/// Basis values tabulated at the quadrature points, derivatives scaled by 1/h.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub nloc: usize,
    pub val: [[f64; 3]; NQ],
    pub grad: [[f64; 3]; NQ],
}

impl BasisTable {
    pub fn new(family: ElementFamily, h: f64) -> Self {
        let mut val = [[0.0; 3]; NQ];
        let mut grad = [[0.0; 3]; NQ];
        for q in 0..NQ {
            let (v, d) = family.eval(QUAD_POINTS[q]);
            val[q] = v;
            for i in 0..3 {
                grad[q][i] = d[i] / h;
            }
        }
        Self {
            nloc: family.local_dofs(),
            val,
            grad,
        }
    }
}

fn slot_counts(family: ElementFamily) -> [usize; 2] {
    [family.vertex_dofs(), family.interior_dofs()]
}

/// Local-to-global dof positions of one family on the interleaved slot ordering,
/// where slot 2i is vertex i and slot 2c+1 is the interior of cell c.
fn local_layout(family: ElementFamily, cell: usize) -> Vec<(usize, usize)> {
    // (slot, index within the family's share of that slot)
    match family {
        ElementFamily::P0 => vec![(2 * cell + 1, 0)],
        ElementFamily::P1c => vec![(2 * cell, 0), (2 * cell + 2, 0)],
        ElementFamily::P1dc => vec![(2 * cell + 1, 0), (2 * cell + 1, 1)],
        ElementFamily::P2c => vec![(2 * cell, 0), (2 * cell + 1, 0), (2 * cell + 2, 0)],
    }
}

/// Degrees of freedom of a single finite element space.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    family: ElementFamily,
    mesh: Mesh1D,
    num_dofs: usize,
    cell_dofs: Vec<usize>,
    coords: Vec<f64>,
}

impl DofMap {
    pub fn new(mesh: &Mesh1D, family: ElementFamily) -> Self {
        let coupled = CoupledDofMap::new(mesh, &[family]);
        let num_dofs = coupled.num_dofs();
        let cell_dofs = coupled.cell_dofs_flat(0).to_vec();
        let mut coords = vec![0.0; num_dofs];
        let nloc = family.local_dofs();
        let h = mesh.h();
        for c in 0..mesh.num_cells() {
            let x0 = mesh.vertices()[c];
            for (i, xi) in family.local_coords().iter().enumerate() {
                coords[cell_dofs[c * nloc + i]] = x0 + xi * h;
            }
        }
        Self {
            family,
            mesh: mesh.clone(),
            num_dofs,
            cell_dofs,
            coords,
        }
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.family.local_dofs();
        &self.cell_dofs[cell * n..(cell + 1) * n]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Interpolates f at the dof coordinates (nodal interpolant).
    pub fn interpolate(self: &Arc<Self>, f: impl Fn(f64) -> f64) -> FieldVector {
        let values = self.coords.iter().map(|&x| f(x)).collect();
        FieldVector {
            map: Arc::clone(self),
            values,
        }
    }
}

/// Interleaved numbering of several fields on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDofMap {
    families: Vec<ElementFamily>,
    num_cells: usize,
    num_dofs: usize,
    /// Per field, per cell, local dof global indices.
    cell_dofs: Vec<Vec<usize>>,
    /// Per field, global index of each standalone dof.
    field_dofs: Vec<Vec<usize>>,
    bandwidth: usize,
}

impl CoupledDofMap {
    pub fn new(mesh: &Mesh1D, families: &[ElementFamily]) -> Self {
        let n = mesh.num_cells();
        let nslots = 2 * n + 1;
        // first global index of every (slot, field) pair
        let mut start = vec![0usize; nslots * families.len()];
        let mut next = 0usize;
        let mut field_dofs: Vec<Vec<usize>> = vec![Vec::new(); families.len()];
        for s in 0..nslots {
            for (f, fam) in families.iter().enumerate() {
                start[s * families.len() + f] = next;
                let cnt = slot_counts(*fam)[s % 2];
                for k in 0..cnt {
                    field_dofs[f].push(next + k);
                }
                next += cnt;
            }
        }
        let mut cell_dofs = Vec::with_capacity(families.len());
        let mut bandwidth = 0;
        for (f, fam) in families.iter().enumerate() {
            let mut v = Vec::with_capacity(n * fam.local_dofs());
            for c in 0..n {
                for (slot, k) in local_layout(*fam, c) {
                    v.push(start[slot * families.len() + f] + k);
                }
            }
            cell_dofs.push(v);
        }
        for c in 0..n {
            let mut lo = usize::MAX;
            let mut hi = 0;
            for (f, fam) in families.iter().enumerate() {
                let nl = fam.local_dofs();
                for &g in &cell_dofs[f][c * nl..(c + 1) * nl] {
                    lo = lo.min(g);
                    hi = hi.max(g);
                }
            }
            bandwidth = bandwidth.max(hi - lo);
        }
        Self {
            families: families.to_vec(),
            num_cells: n,
            num_dofs: next,
            cell_dofs,
            field_dofs,
            bandwidth,
        }
    }

    pub fn num_fields(&self) -> usize {
        self.families.len()
    }

    pub fn families(&self) -> &[ElementFamily] {
        &self.families
    }

    pub fn num_dofs(&self) -> usize {
        self.num_dofs
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    /// Maximum |i - j| between two dofs sharing a cell.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn cell_dofs(&self, field: usize, cell: usize) -> &[usize] {
        let n = self.families[field].local_dofs();
        &self.cell_dofs[field][cell * n..(cell + 1) * n]
    }

    fn cell_dofs_flat(&self, field: usize) -> &[usize] {
        &self.cell_dofs[field]
    }

    pub fn field_dofs(&self, field: usize) -> &[usize] {
        &self.field_dofs[field]
    }

    pub fn extract(&self, field: usize, u: &[f64]) -> Vec<f64> {
        self.field_dofs[field].iter().map(|&g| u[g]).collect()
    }

    pub fn insert(&self, field: usize, values: &[f64], u: &mut [f64]) {
        for (v, &g) in values.iter().zip(&self.field_dofs[field]) {
            u[g] = *v;
        }
    }
}

/// Nodal values of a finite element function.
#[derive(Debug, Clone)]
pub struct FieldVector {
    pub map: Arc<DofMap>,
    pub values: Vec<f64>,
}

impl FieldVector {
    pub fn new(map: Arc<DofMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != map.num_dofs() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values but the dof map has {} dofs",
                values.len(),
                map.num_dofs()
            )));
        }
        Ok(Self { map, values })
    }

    pub fn zeros(map: Arc<DofMap>) -> Self {
        let n = map.num_dofs();
        Self {
            map,
            values: vec![0.0; n],
        }
    }

    /// Value and derivative at x.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let mesh = self.map.mesh();
        let c = mesh.locate(x);
        let (x0, _) = mesh.cell_bounds(c);
        let h = mesh.h();
        let xi = ((x - x0) / h).clamp(0.0, 1.0);
        let (b, d) = self.map.family().eval(xi);
        let dofs = self.map.cell_dofs(c);
        let mut v = 0.0;
        let mut g = 0.0;
        for (i, &dof) in dofs.iter().enumerate() {
            v += self.values[dof] * b[i];
            g += self.values[dof] * d[i] / h;
        }
        (v, g)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_integrates_degree_seven() {
        for p in 0..=7 {
            let s: f64 = (0..NQ)
                .map(|q| QUAD_WEIGHTS[q] * QUAD_POINTS[q].powi(p))
                .sum();
            assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-15, "degree {p}");
        }
        let s: f64 = (0..NQ).map(|q| QUAD_WEIGHTS[q] * QUAD_POINTS[q].powi(8)).sum();
        assert!((s - 1.0 / 9.0).abs() > 1e-8);
    }

    #[test]
    fn basis_partition_of_unity() {
        for fam in [ElementFamily::P0, ElementFamily::P1c, ElementFamily::P2c] {
            for &xi in &[0.0, 0.21, 0.5, 0.97, 1.0] {
                let (b, d) = fam.eval(xi);
                let n = fam.local_dofs();
                assert!((b[..n].iter().sum::<f64>() - 1.0).abs() < 1e-14);
                assert!(d[..n].iter().sum::<f64>().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn basis_is_nodal() {
        for fam in [ElementFamily::P1c, ElementFamily::P1dc, ElementFamily::P2c] {
            for (i, &xi) in fam.local_coords().iter().enumerate() {
                let (b, _) = fam.eval(xi);
                for j in 0..fam.local_dofs() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((b[j] - e).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        let m = Mesh1D::new(1.0, 5).unwrap();
        assert_eq!(DofMap::new(&m, ElementFamily::P0).num_dofs(), 5);
        assert_eq!(DofMap::new(&m, ElementFamily::P1c).num_dofs(), 6);
        assert_eq!(DofMap::new(&m, ElementFamily::P1dc).num_dofs(), 10);
        assert_eq!(DofMap::new(&m, ElementFamily::P2c).num_dofs(), 11);
    }

    #[test]
    fn every_dof_referenced_and_coords_in_domain() {
        let m = Mesh1D::new(2.0, 7).unwrap();
        for fam in [
            ElementFamily::P0,
            ElementFamily::P1c,
            ElementFamily::P1dc,
            ElementFamily::P2c,
        ] {
            let d = DofMap::new(&m, fam);
            let mut seen = vec![false; d.num_dofs()];
            for c in 0..m.num_cells() {
                for &g in d.cell_dofs(c) {
                    seen[g] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
            assert!(d.coords().iter().all(|&x| (0.0..=2.0).contains(&x)));
        }
    }

    #[test]
    fn zero_flow_system_size_and_band() {
        let m = Mesh1D::new(1.0, 8000).unwrap();
        let mut fams = vec![ElementFamily::P0];
        fams.extend(std::iter::repeat(ElementFamily::P1c).take(8));
        let c = CoupledDofMap::new(&m, &fams);
        assert_eq!(c.num_dofs(), 72008);
        assert_eq!(c.bandwidth(), 16);
    }

    #[test]
    fn extract_insert_roundtrip() {
        let m = Mesh1D::new(1.0, 3).unwrap();
        let c = CoupledDofMap::new(&m, &[ElementFamily::P0, ElementFamily::P2c]);
        let u: Vec<f64> = (0..c.num_dofs()).map(|i| i as f64).collect();
        let a = c.extract(1, &u);
        let mut v = vec![0.0; c.num_dofs()];
        c.insert(1, &a, &mut v);
        c.insert(0, &c.extract(0, &u), &mut v);
        assert_eq!(u, v);
    }

    #[test]
    fn field_eval_reproduces_linear() {
        let m = Mesh1D::new(1.0, 4).unwrap();
        let d = Arc::new(DofMap::new(&m, ElementFamily::P2c));
        let f = d.interpolate(|x| x * x);
        let (v, g) = f.eval(0.3);
        assert!((v - 0.09).abs() < 1e-14);
        assert!((g - 0.6).abs() < 1e-13);
    }
}
