use crate::error::{Error, Result};

/// Square band matrix in LAPACK general-band layout, with `kl` extra rows of
/// headroom above the upper band for fill-in from row interchanges.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            ab: vec![0.0; ld * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.kl + self.ku + i - j + j * self.ld
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.kl && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when (i, j) lies outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn clear(&mut self) {
        self.ab.iter_mut().for_each(|v| *v = 0.0);
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    /// Replaces row i by the unit row e_i.
    pub fn set_identity_row(&mut self, i: usize) {
        for j in self.row_range(i) {
            let k = self.idx(i, j);
            self.ab[k] = 0.0;
        }
        self.set(i, i, 1.0);
    }

    pub fn scale_row(&mut self, i: usize, s: f64) {
        for j in self.row_range(i) {
            let k = self.idx(i, j);
            self.ab[k] *= s;
        }
    }

    pub fn row_max_abs(&self, i: usize) -> f64 {
        self.row_range(i)
            .map(|j| self.ab[self.idx(i, j)].abs())
            .fold(0.0, f64::max)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.ab[self.idx(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl + 1).min(self.n);
            for (i, yi) in y.iter_mut().enumerate().take(hi).skip(lo) {
                *yi += self.ab[self.idx(i, j)] * xj;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// LU factorisation with partial pivoting restricted to the band.
    pub fn factorize(mut self) -> Result<BandedLu> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.ku + self.kl;
        let ld = self.ld;
        let mut ipiv = vec![0usize; n];
        // fill-in rows above the original band start out zero by construction
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let mut jp = 0;
            let mut best = self.ab[col].abs();
            for p in 1..=km {
                let v = self.ab[col + p].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular { pivot: j });
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = c * ld + kv + j - c;
                    let b = c * ld + kv + j + jp - c;
                    self.ab.swap(a, b);
                }
            }
            let inv = 1.0 / self.ab[col];
            for p in 1..=km {
                self.ab[col + p] *= inv;
            }
            for c in (j + 1)..=ju {
                let base = c * ld + kv - c;
                let a = self.ab[base + j];
                if a != 0.0 {
                    for p in 1..=km {
                        self.ab[base + j + p] -= self.ab[col + p] * a;
                    }
                }
            }
        }
        Ok(BandedLu { m: self, ipiv })
    }
}

/// Factors produced by [`BandedMatrix::factorize`].
#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    ipiv: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        let ld = self.m.ld;
        let ab = &self.m.ab;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                let col = j * ld + kv;
                for q in 1..=km {
                    b[j + q] -= ab[col + q] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ld + kv;
            b[j] /= ab[col];
            let bj = b[j];
            if bj != 0.0 {
                let lo = j.saturating_sub(kv);
                for i in lo..j {
                    b[i] -= ab[col + i - j] * bj;
                }
            }
        }
    }
}

/// Solves A x = b by banded LU with partial pivoting.
pub fn lu_solve(a: &BandedMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has length {} for a {}x{} matrix",
            b.len(),
            a.dim(),
            a.dim()
        )));
    }
    let lu = a.clone().factorize()?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    Ok(x)
}
