//! Symmetric banded storage and an LDLᵀ factorization for stiffness matrices.
//!
//! Structured strip meshes numbered column by column have a half bandwidth of
//! a few dozen DOFs, so a band solver is both exact and cheap at desk scale.

use crate::error::{Error, Result};

/// Symmetric matrix holding the lower band `j in [i - bw, i]` of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let bw = half_bandwidth.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.bw).then(|| i * (self.bw + 1) + (self.bw - (i - j)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Adds to entry `(i, j)` (and implicitly `(j, i)`).
    ///
    /// Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside half bandwidth {}", self.bw));
        self.data[s] += v;
    }

    /// Replaces row and column `i` by the identity.
    pub fn set_identity_row(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..=hi {
            if let Some(s) = self.slot(i, j) {
                self.data[s] = 0.0;
            }
        }
        let s = self.slot(i, i).unwrap();
        self.data[s] = 1.0;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let a = self.data[i * (self.bw + 1) + (self.bw - (i - j))];
                y[i] += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += self.data[i * (self.bw + 1) + self.bw] * x[i];
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Factors `A = L D Lᵀ` without pivoting.
    pub fn factor(&self) -> Result<BandLdlt> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut l = self.data.clone();
        let mut d = vec![0.0; n];
        let scale = (0..n).map(|i| self.data[i * w + bw].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            // l[j][k] for k < j currently holds the unscaled a_jk - sum(...)
            let mut djj = l[j * w + bw];
            for k in lo..j {
                let ljk = l[j * w + (bw - (j - k))];
                djj -= ljk * ljk * d[k];
            }
            if !djj.is_finite() || djj.abs() <= 1e-14 * scale {
                return Err(Error::SingularSystem(format!("zero pivot at row {j} ({djj:e})")));
            }
            d[j] = djj;
            l[j * w + bw] = 1.0;
            let hi = (j + bw).min(n - 1);
            for i in (j + 1)..=hi {
                let mut v = l[i * w + (bw - (i - j))];
                let klo = i.saturating_sub(bw).max(lo);
                for k in klo..j {
                    v -= l[i * w + (bw - (i - k))] * l[j * w + (bw - (j - k))] * d[k];
                }
                l[i * w + (bw - (i - j))] = v / djj;
            }
        }
        Ok(BandLdlt { n, bw, l, d })
    }
}

/// Banded LDLᵀ factors; immutable and shareable once built.
#[derive(Debug, Clone)]
pub struct BandLdlt {
    n: usize,
    bw: usize,
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandLdlt {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// True when every pivot is positive, i.e. the matrix is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        self.d.iter().all(|&x| x > 0.0)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut v = x[i];
            for k in lo..i {
                v -= self.l[i * w + (bw - (i - k))] * x[k];
            }
            x[i] = v;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut v = x[i];
            for k in (i + 1)..=hi {
                v -= self.l[k * w + (bw - (k - i))] * x[k];
            }
            x[i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymBandMatrix {
        let mut a = SymBandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
            }
        }
        a
    }

    #[test]
    fn solves_tridiagonal() {
        let a = laplacian(6);
        let x_true: Vec<f64> = (0..6).map(|i| (i as f64).sin() + 1.0).collect();
        let b = a.mul_vec(&x_true);
        let f = a.factor().unwrap();
        assert!(f.is_positive_definite());
        let x = f.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_matches_dense_product() {
        let n = 9;
        let mut a = SymBandMatrix::zeros(n, 3);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            for k in 1..=3 {
                if i + k < n {
                    a.add(i + k, i, 0.5 / k as f64 - 0.1 * i as f64);
                }
            }
        }
        let dense = a.to_dense();
        let x_true: Vec<f64> = (0..n).map(|i| 1.0 - 0.3 * i as f64).collect();
        let b: Vec<f64> = dense.iter().map(|r| r.iter().zip(&x_true).map(|(p, q)| p * q).sum()).collect();
        assert_eq!(a.mul_vec(&x_true).len(), n);
        for (u, v) in a.mul_vec(&x_true).iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let x = a.factor().unwrap().solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_is_factored_and_flagged() {
        let mut a = SymBandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -2.0);
        a.add(1, 0, 0.5);
        let f = a.factor().unwrap();
        assert!(!f.is_positive_definite());
        let x = f.solve(&[1.0, 1.0]);
        let r = a.mul_vec(&x);
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let a = SymBandMatrix::zeros(3, 1);
        assert!(matches!(a.factor(), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn identity_rows() {
        let mut a = laplacian(4);
        a.set_identity_row(0);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(1, 0), 0.0);
    }
}
