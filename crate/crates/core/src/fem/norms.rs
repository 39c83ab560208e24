use super::space::{FieldVector, NQ, QUAD_POINTS, QUAD_WEIGHTS};

/// L2 and H1 errors of a discrete field against an exact function returning
/// (value, derivative) at x.
pub fn error_norms(numeric: &FieldVector, exact: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    let map = &numeric.map;
    let mesh = map.mesh();
    let h = mesh.h();
    let fam = map.family();
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for c in 0..mesh.num_cells() {
        let (cl, cs) = cell_error(numeric, c, fam, h, &exact);
        l2 += cl;
        semi += cs;
    }
    (l2.sqrt(), (l2 + semi).sqrt())
}

/// Squared L2 and H1-seminorm error contributions of one cell.
pub fn cell_error(
    numeric: &FieldVector,
    cell: usize,
    fam: super::ElementFamily,
    h: f64,
    exact: &impl Fn(f64) -> (f64, f64),
) -> (f64, f64) {
    let x0 = numeric.map.mesh().vertices()[cell];
    let dofs = numeric.map.cell_dofs(cell);
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for q in 0..NQ {
        let (b, d) = fam.eval(QUAD_POINTS[q]);
        let mut uh = 0.0;
        let mut duh = 0.0;
        for (i, &g) in dofs.iter().enumerate() {
            uh += numeric.values[g] * b[i];
            duh += numeric.values[g] * d[i] / h;
        }
        let (u, du) = exact(x0 + QUAD_POINTS[q] * h);
        let w = QUAD_WEIGHTS[q] * h;
        l2 += w * (uh - u) * (uh - u);
        semi += w * (duh - du) * (duh - du);
    }
    (l2, semi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{DofMap, ElementFamily, Mesh1D};
    use std::f64::consts::PI;
    use std::sync::Arc;

    #[test]
    fn identical_is_zero() {
        let m = Mesh1D::new(1.0, 6).unwrap();
        let d = Arc::new(DofMap::new(&m, ElementFamily::P1c));
        let f = d.interpolate(|x| 2.0 * x - 1.0);
        let (l2, h1) = error_norms(&f, |x| (2.0 * x - 1.0, 2.0));
        assert!(l2 < 1e-15 && h1 < 1e-14);
    }

    #[test]
    fn zero_against_sine() {
        let m = Mesh1D::new(1.0, 16).unwrap();
        let d = Arc::new(DofMap::new(&m, ElementFamily::P1c));
        let f = d.interpolate(|_| 0.0);
        let (l2, _) = error_norms(&f, |x| ((PI * x).sin(), PI * (PI * x).cos()));
        assert!((l2 - 1.0 / 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn p1_interpolant_is_second_order() {
        let mut prev: Option<f64> = None;
        for n in [8, 16, 32, 64] {
            let m = Mesh1D::new(1.0, n).unwrap();
            let d = Arc::new(DofMap::new(&m, ElementFamily::P1c));
            let f = d.interpolate(|x| (PI * x).sin());
            let (l2, _) = error_norms(&f, |x| ((PI * x).sin(), PI * (PI * x).cos()));
            if let Some(p) = prev {
                let rate = (p / l2).log2();
                assert!((rate - 2.0).abs() < 0.05, "rate {rate}");
            }
            prev = Some(l2);
        }
    }

    #[test]
    fn p2_interpolant_of_cubic_third_order() {
        let u = |x: f64| (x * x * x - 0.3 * x, 3.0 * x * x - 0.3);
        let mut prev: Option<f64> = None;
        for n in [4, 8, 16, 32, 64] {
            let m = Mesh1D::new(1.0, n).unwrap();
            let d = Arc::new(DofMap::new(&m, ElementFamily::P2c));
            let f = d.interpolate(|x| u(x).0);
            let (l2, _) = error_norms(&f, u);
            if let Some(p) = prev {
                let rate = (p / l2).log2();
                assert!((rate - 3.0).abs() < 0.05, "rate {rate}");
            }
            prev = Some(l2);
        }
    }

    #[test]
    fn traversal_order_invariant() {
        let m = Mesh1D::new(1.0, 13).unwrap();
        let d = Arc::new(DofMap::new(&m, ElementFamily::P2c));
        let f = d.interpolate(|x| (3.0 * x).cos());
        let ex = |x: f64| ((2.9 * x).cos(), -2.9 * (2.9 * x).sin());
        let fwd: (f64, f64) = (0..13)
            .map(|c| cell_error(&f, c, ElementFamily::P2c, m.h(), &ex))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let rev: (f64, f64) = (0..13)
            .rev()
            .map(|c| cell_error(&f, c, ElementFamily::P2c, m.h(), &ex))
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert!((fwd.0 - rev.0).abs() <= 1e-15 * fwd.0.max(1e-300) * 20.0);
        let (l2, _) = error_norms(&f, ex);
        assert!((l2 * l2 - fwd.0).abs() < 1e-14 * fwd.0);
    }
}
